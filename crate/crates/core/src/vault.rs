//! Protected templates: the SHA-512 digest of a user's packed code is the
//! only secret-derived value ever stored. Codes are hashed on enrollment
//! and dropped.
//!
//! File format, line-oriented UTF-8:
//!
//! ```text
//! MEBVAULT v1
//! <user_id>\t<K>\t<code_version>\t<128 lowercase hex digest chars>
//! ...                          (one line per user, ascending user id)
//! CRC32 <8 lowercase hex chars>
//! ```
//!
//! The CRC-32 (IEEE) covers every byte before the `CRC32` line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest as _, Sha512};

use crate::codes::{check_code_bits, generate_code, serialize_bits, validate_user_id, CodeBook, MebCode};
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const DIGEST_LEN: usize = 64;

/// A SHA-512 output.
pub type Digest = [u8; DIGEST_LEN];

const HEADER: &str = "MEBVAULT v1";

/// SHA-512 of the MSB-first packed code bytes. No salt, no user id.
pub fn hash_code(code: &MebCode) -> Digest {
    sha512(&serialize_bits(code))
}

pub fn sha512(bytes: &[u8]) -> Digest {
    Sha512::digest(bytes).into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectedTemplate {
    pub user_id: String,
    pub digest: Digest,
    pub code_bits: usize,
    /// Starts at 1 and increases on every overwrite or reissue.
    pub code_version: u32,
}

/// At most one active template per user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vault {
    templates: BTreeMap<String, ProtectedTemplate>,
}

impl Vault {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&ProtectedTemplate> {
        self.templates.get(user_id)
    }

    pub fn templates(&self) -> impl Iterator<Item = &ProtectedTemplate> {
        self.templates.values()
    }

    /// Stores the digest of `code` for `user_id`. Re-enrolling an existing
    /// user requires `overwrite` and bumps the code version.
    pub fn enroll(&mut self, user_id: &str, code: &MebCode, overwrite: bool) -> Result<ProtectedTemplate> {
        validate_user_id(user_id)?;
        let code_version = match self.templates.get(user_id) {
            Some(_) if !overwrite => return Err(Error::AlreadyEnrolled(user_id.to_string())),
            Some(t) => t.code_version + 1,
            None => 1,
        };
        let t = ProtectedTemplate {
            user_id: user_id.to_string(),
            digest: hash_code(code),
            code_bits: code.len(),
            code_version,
        };
        self.templates.insert(user_id.to_string(), t.clone());
        Ok(t)
    }

    /// Enrolls every user of a codebook.
    pub fn enroll_all(&mut self, codebook: &CodeBook, overwrite: bool) -> Result<()> {
        for (u, c) in codebook.iter() {
            self.enroll(u, c, overwrite)?;
        }
        Ok(())
    }

    /// Cancels a user's template: draws a fresh `k`-bit code, stores its
    /// digest in place of the old one and hands the code back so the
    /// network can be retrained on it.
    pub fn reissue(&mut self, user_id: &str, k: usize, rng: &mut RngState) -> Result<(MebCode, ProtectedTemplate)> {
        check_code_bits(k)?;
        let old = self.templates.get(user_id).ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
        let code = loop {
            let c = generate_code(k, rng)?;
            if hash_code(&c) != old.digest {
                break c;
            }
        };
        let t = self.enroll(user_id, &code, true)?;
        Ok((code, t))
    }

    pub fn to_text(&self) -> String {
        let mut body = format!("{HEADER}\n");
        for t in self.templates.values() {
            body.push_str(&format!("{}\t{}\t{}\t{}\n", t.user_id, t.code_bits, t.code_version, hex::encode(t.digest)));
        }
        let crc = crc32fast::hash(body.as_bytes());
        body.push_str(&format!("CRC32 {crc:08x}\n"));
        body
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| Error::Parse(format!("vault: {m}"));
        let trimmed = text.strip_suffix('\n').ok_or_else(|| perr("missing final newline".into()))?;
        let split = trimmed.rfind('\n').map(|i| i + 1).unwrap_or(0);
        let (body, crc_line) = text.split_at(split);
        let stored = crc_line
            .trim_end_matches('\n')
            .strip_prefix("CRC32 ")
            .filter(|h| h.len() == 8)
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .ok_or_else(|| perr("missing or malformed CRC32 line".into()))?;
        let computed = crc32fast::hash(body.as_bytes());
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut lines = body.lines();
        match lines.next() {
            Some(HEADER) => {}
            Some(h) if h.starts_with("MEBVAULT ") => return Err(Error::Version(h.to_string())),
            _ => return Err(perr("missing MEBVAULT header".into())),
        }
        let mut templates = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(perr(format!("line {}: expected 4 tab-separated fields", n + 2)));
            }
            validate_user_id(f[0])?;
            let code_bits: usize = f[1].parse().map_err(|_| perr(format!("line {}: bad K", n + 2)))?;
            check_code_bits(code_bits)?;
            let code_version: u32 = f[2].parse().map_err(|_| perr(format!("line {}: bad version", n + 2)))?;
            let raw = hex::decode(f[3]).map_err(|e| perr(format!("line {}: {e}", n + 2)))?;
            let digest: Digest =
                raw.try_into().map_err(|_| perr(format!("line {}: digest must be 64 bytes", n + 2)))?;
            let t = ProtectedTemplate { user_id: f[0].to_string(), digest, code_bits, code_version };
            if templates.insert(t.user_id.clone(), t).is_some() {
                return Err(Error::DuplicateUser(f[0].to_string()));
            }
        }
        Ok(Self { templates })
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::generate_codebook;

    fn three_user_vault() -> (Vault, CodeBook) {
        let users: Vec<String> = ["carol", "alice", "bob"].iter().map(|s| s.to_string()).collect();
        let cb = generate_codebook(&users, 256, &mut RngState::new(1)).unwrap();
        let mut v = Vault::new();
        v.enroll_all(&cb, false).unwrap();
        (v, cb)
    }

    #[test]
    fn sha512_reference_vectors() {
        assert_eq!(
            hex::encode(sha512(b"abc")),
            "ddaf35a193617abacc417349ae20413112e6fa4e89a97ea20a9eeee64b55d39a\
             2192992a274fc1a836ba3c23a3feebbd454d4423643ce80e2a9ac94fa54ca49f"
        );
        assert_eq!(
            hex::encode(sha512(b"")),
            "cf83e1357eefb8bdf1542850d66d8007d620e4050b5715dc83f4a921d36ce9ce\
             47d0d13c5d85f2b0ff8318d2877eec2f63b931bd47417a81a538327af927da3e"
        );
    }

    #[test]
    fn one_bit_changes_digest() {
        let mut rng = RngState::new(2);
        for _ in 0..1000 {
            let c = generate_code(256, &mut rng).unwrap();
            let mut bits = c.bits().to_vec();
            let i = (rng.fork().seed() % 256) as usize;
            bits[i] = !bits[i];
            let d = MebCode::new(bits).unwrap();
            assert_eq!(hash_code(&c), hash_code(&c.clone()));
            assert_ne!(hash_code(&c), hash_code(&d));
        }
    }

    #[test]
    fn enroll_and_overwrite() {
        let (mut v, cb) = three_user_vault();
        assert_eq!(v.len(), 3);
        assert_ne!(v.get("alice").unwrap().digest, v.get("bob").unwrap().digest);
        let code = cb.get("alice").unwrap();
        assert!(matches!(v.enroll("alice", code, false), Err(Error::AlreadyEnrolled(_))));
        let t = v.enroll("alice", code, true).unwrap();
        assert_eq!(t.code_version, 2);
    }

    #[test]
    fn persisted_file_holds_digests_only() {
        let (v, cb) = three_user_vault();
        let text = v.to_text();
        for (u, c) in cb.iter() {
            assert!(text.contains(&hex::encode(v.get(u).unwrap().digest)));
            assert!(!text.contains(&c.to_hex()));
            let raw = serialize_bits(c);
            assert!(!text.as_bytes().windows(raw.len()).any(|w| w == raw.as_slice()));
        }
    }

    #[test]
    fn reissue_cycle() {
        let (mut v, _) = three_user_vault();
        let old = v.get("bob").unwrap().clone();
        let mut rng = RngState::new(3);
        let (code, t) = v.reissue("bob", 256, &mut rng).unwrap();
        assert_ne!(t.digest, old.digest);
        assert_eq!(t.code_version, old.code_version + 1);
        assert_eq!(v.len(), 3);
        assert_eq!(hash_code(&code), v.get("bob").unwrap().digest);
        let (_, t2) = v.reissue("bob", 256, &mut rng).unwrap();
        assert!(t2.code_version > t.code_version);
        assert!(matches!(v.reissue("nobody", 256, &mut rng), Err(Error::UnknownUser(_))));
    }

    #[test]
    fn round_trips() {
        let (v, _) = three_user_vault();
        assert_eq!(Vault::from_text(&v.to_text()).unwrap(), v);
        let empty = Vault::new();
        assert_eq!(empty.to_text(), format!("MEBVAULT v1\nCRC32 {:08x}\n", crc32fast::hash(b"MEBVAULT v1\n")));
        assert_eq!(Vault::from_text(&empty.to_text()).unwrap(), empty);
    }

    #[test]
    fn line_layout() {
        let (v, _) = three_user_vault();
        let text = v.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "MEBVAULT v1");
        let f: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(&f[..3], &["alice", "256", "1"]);
        assert_eq!(f[3].len(), 128);
        assert!(lines[4].starts_with("CRC32 "));
    }

    #[test]
    fn corruption_detected() {
        let (v, _) = three_user_vault();
        let text = v.to_text();
        let mut bytes = text.clone().into_bytes();
        let i = text.find("bob").unwrap() + 20;
        bytes[i] = if bytes[i] == b'0' { b'1' } else { b'0' };
        let r = Vault::from_text(std::str::from_utf8(&bytes).unwrap());
        assert!(matches!(r, Err(Error::Checksum { .. })));
        assert!(Vault::from_text(&text.replace("CRC32", "CRC33")).is_err());
        let v2 = text.replace("MEBVAULT v1", "MEBVAULT v2");
        let body_len = v2.rfind("CRC32").unwrap();
        let fixed = format!("{}CRC32 {:08x}\n", &v2[..body_len], crc32fast::hash(&v2.as_bytes()[..body_len]));
        assert!(matches!(Vault::from_text(&fixed), Err(Error::Version(_))));
    }
}
