//! Cancelable face templates from binary codes.
//!
//! A network is trained to map face images of each user to that user's
//! random binary code. Only the SHA-512 digest of the code is stored; at
//! verification time every crop of the probe is mapped to a code, hashed,
//! and compared with the stored digest. The guide in `book/` walks through
//! each stage.

pub mod cli;
pub mod codes;
pub mod config;
pub mod error;
pub mod eval;
pub mod matcher;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod vault;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/codes.md")]
    mod codes {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
