//! Binary parameter files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "MEBPARAM"
//! version      u32       1
//! input_size   u32
//! n_convs      u32
//!   maps, filter  u32, u32   (n_convs times)
//! n_hidden     u32
//!   units         u32        (n_hidden times)
//! code_bits    u32
//! dropout      f64
//! n_values     u64
//! values       f64 x n_values, in NetworkParams::blocks order
//! ```
//!
//! Conv filters are stored `(out_map, in_map, row, col)`, dense weights
//! `(out, in)`, both row-major.

use std::fs;
use std::path::Path;

use super::network::{Architecture, ConvSpec, NetworkParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MEBPARAM";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(64 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let u = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u(&mut out, a.input_size);
    u(&mut out, a.convs.len());
    for c in &a.convs {
        u(&mut out, c.maps);
        u(&mut out, c.filter);
    }
    u(&mut out, a.hidden.len());
    for &h in &a.hidden {
        u(&mut out, h);
    }
    u(&mut out, a.code_bits);
    out.extend_from_slice(&a.dropout.to_le_bytes());
    out.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for b in params.blocks() {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse(format!("parameter file truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse("not a parameter file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version(format!("parameter file v{version}, expected v{VERSION}")));
    }
    let input_size = r.u32()?;
    let n_convs = r.u32()?;
    let mut convs = Vec::new();
    for _ in 0..n_convs {
        let maps = r.u32()?;
        let filter = r.u32()?;
        convs.push(ConvSpec { maps, filter });
    }
    let n_hidden = r.u32()?;
    let mut hidden = Vec::new();
    for _ in 0..n_hidden {
        hidden.push(r.u32()?);
    }
    let code_bits = r.u32()?;
    let dropout = r.f64()?;
    let arch = Architecture { input_size, convs, hidden, code_bits, dropout };
    let mut params = NetworkParams::zeros(&arch)?;
    let n_values = r.u64()?;
    if n_values != params.num_params() as u64 {
        return Err(Error::Parse(format!(
            "parameter file declares {n_values} values, architecture needs {}",
            params.num_params()
        )));
    }
    for b in params.blocks_mut() {
        for v in b.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Parse(format!("{} trailing bytes in parameter file", buf.len() - r.pos)));
    }
    Ok(params)
}

pub fn save(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::init_params;
    use crate::rng::RngState;

    fn arch() -> Architecture {
        Architecture {
            input_size: 12,
            convs: vec![ConvSpec { maps: 3, filter: 3 }, ConvSpec { maps: 2, filter: 2 }],
            hidden: vec![7, 5],
            code_bits: 16,
            dropout: 0.5,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_params(&arch(), &mut RngState::new(1)).unwrap();
        let bytes = to_bytes(&p);
        let q = from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(to_bytes(&q), bytes);
    }

    #[test]
    fn header_layout() {
        let p = NetworkParams::zeros(&arch()).unwrap();
        let b = to_bytes(&p);
        assert_eq!(&b[..8], b"MEBPARAM");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[12, 0, 0, 0]);
        let header = 8 + 4 + 4 + 4 + 2 * 8 + 4 + 2 * 4 + 4 + 8 + 8;
        assert_eq!(b.len(), header + 8 * p.num_params());
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = init_params(&arch(), &mut RngState::new(1)).unwrap();
        let b = to_bytes(&p);
        assert!(matches!(from_bytes(&b[..b.len() - 3]), Err(Error::Parse(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = b.clone();
        bad[8] = 2;
        assert!(matches!(from_bytes(&bad), Err(Error::Version(_))));
        let mut long = b;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
