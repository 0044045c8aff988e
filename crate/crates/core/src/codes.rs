//! Maximum-entropy binary codes: `K` independent fair bits per user, drawn
//! from the random stream alone so they carry no information about the
//! user's images.
//!
//! Codes are packed MSB-first: bit `j` lands in byte `j / 8` at bit
//! position `7 - j % 8`. The packed bytes are the exact SHA-512 pre-image
//! used by the vault.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::RngCore;

use crate::error::{invalid, Error, Result};

/// `K` code bits. `K` is a positive multiple of 8.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MebCode {
    bits: Vec<bool>,
}

// Codes are secrets; keep them out of debug logs.
impl fmt::Debug for MebCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MebCode({} bits)", self.bits.len())
    }
}

pub fn check_code_bits(k: usize) -> Result<()> {
    if k < 8 || !k.is_multiple_of(8) {
        return invalid(format!("code length {k} must be a positive multiple of 8"));
    }
    Ok(())
}

impl MebCode {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        check_code_bits(bits.len())?;
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Inverse of [`serialize_bits`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bits = bytes.iter().flat_map(|&b| (0..8).map(move |i| (b >> (7 - i)) & 1 == 1)).collect();
        Self::new(bits)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(serialize_bits(self))
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Parse(format!("bad code hex: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn complement(&self) -> MebCode {
        MebCode { bits: self.bits.iter().map(|b| !b).collect() }
    }
}

/// Packs the code MSB-first into `K / 8` bytes.
pub fn serialize_bits(code: &MebCode) -> Vec<u8> {
    code.bits.chunks_exact(8).map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8)).collect()
}

/// Draws `k` i.i.d. Bernoulli(1/2) bits (whole random bytes, unpacked
/// MSB-first).
pub fn generate_code<R: RngCore + ?Sized>(k: usize, rng: &mut R) -> Result<MebCode> {
    check_code_bits(k)?;
    let mut bytes = vec![0u8; k / 8];
    rng.fill_bytes(&mut bytes);
    MebCode::from_bytes(&bytes)
}

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &MebCode, b: &MebCode) -> Result<usize> {
    if a.len() != b.len() {
        return invalid(format!("hamming: {} vs {} bits", a.len(), b.len()));
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count())
}

/// User ids end up in tab-separated files, so they must be non-empty and
/// free of whitespace and control characters.
pub fn validate_user_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return invalid(format!("invalid user id {id:?}"));
    }
    Ok(())
}

/// One distinct code per user, all of the same length.
#[derive(Clone, PartialEq, Eq)]
pub struct CodeBook {
    code_bits: usize,
    codes: BTreeMap<String, MebCode>,
}

impl fmt::Debug for CodeBook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CodeBook")
            .field("code_bits", &self.code_bits)
            .field("users", &self.codes.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl CodeBook {
    /// Builds a codebook from explicit codes, rejecting duplicate users,
    /// duplicate codes and mixed lengths.
    pub fn from_codes(code_bits: usize, entries: impl IntoIterator<Item = (String, MebCode)>) -> Result<Self> {
        check_code_bits(code_bits)?;
        let mut codes = BTreeMap::new();
        let mut seen = HashSet::new();
        for (user, code) in entries {
            validate_user_id(&user)?;
            if code.len() != code_bits {
                return invalid(format!("code for {user} has {} bits, expected {code_bits}", code.len()));
            }
            if !seen.insert(code.clone()) {
                return invalid(format!("code for {user} duplicates another user's code"));
            }
            if codes.insert(user.clone(), code).is_some() {
                return Err(Error::DuplicateUser(user));
            }
        }
        Ok(Self { code_bits, codes })
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn get(&self, user: &str) -> Option<&MebCode> {
        self.codes.get(user)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Users in ascending order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.codes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MebCode)> {
        self.codes.iter().map(|(u, c)| (u.as_str(), c))
    }

    /// `MEBCODES v1`, then `user_id<TAB>hex(bits)` per user.
    pub fn to_text(&self) -> String {
        let mut s = String::from("MEBCODES v1\n");
        for (u, c) in &self.codes {
            s.push_str(u);
            s.push('\t');
            s.push_str(&c.to_hex());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("MEBCODES v1") => {}
            Some(h) if h.starts_with("MEBCODES ") => return Err(Error::Version(h.to_string())),
            _ => return Err(Error::Parse("missing MEBCODES header".into())),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let (user, hexbits) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("codebook line {}: expected user<TAB>hex", n + 2)))?;
            entries.push((user.to_string(), MebCode::from_hex(hexbits)?));
        }
        let k = entries.first().map(|(_, c)| c.len()).ok_or_else(|| Error::Parse("codebook has no entries".into()))?;
        Self::from_codes(k, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Assigns a fresh random code to every user. A code that collides with
/// one already assigned is redrawn.
pub fn generate_codebook<R: RngCore + ?Sized>(user_ids: &[String], k: usize, rng: &mut R) -> Result<CodeBook> {
    check_code_bits(k)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(user_ids.len());
    let mut users = HashSet::new();
    for u in user_ids {
        validate_user_id(u)?;
        if !users.insert(u) {
            return Err(Error::DuplicateUser(u.clone()));
        }
        let code = loop {
            let c = generate_code(k, rng)?;
            if seen.insert(c.clone()) {
                break c;
            }
        };
        entries.push((u.clone(), code));
    }
    CodeBook::from_codes(k, entries)
}
