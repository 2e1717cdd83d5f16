//! Parameter checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VTHP"            magic
//! u8                version (1)
//! u32 x 6           D, E, k, T, activation (0 tanh, 1 sigmoid, 2 relu), init_seed
//! f64 x N           weights in declaration order, each tensor row-major:
//!                   embed_w, embed_b, wq, wk, wv, head_w1, head_b1, head_w2, head_b2
//! ```

use std::fs;
use std::path::Path;

use super::{EncoderConfig, EncoderParams};
use crate::code::Activation;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VTHP";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 6 * 4;

pub fn encode_checkpoint(p: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p.num_params());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let c = &p.cfg;
    for v in [
        c.d as u32,
        c.e as u32,
        c.k as u32,
        c.t as u32,
        c.activation.code(),
        c.init_seed,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
    let fail = |offset: usize, msg: &str| Error::Format {
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected \"VTHP\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, &format!("unsupported version {}", bytes[4])));
    }
    let field = |i: usize| {
        let at = 5 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
    };
    let activation = Activation::from_code(field(4))
        .ok_or_else(|| fail(5 + 16, &format!("unknown activation code {}", field(4))))?;
    let cfg = EncoderConfig {
        d: field(0) as usize,
        e: field(1) as usize,
        k: field(2) as usize,
        t: field(3) as usize,
        activation,
        init_seed: field(5),
    };
    cfg.validate().map_err(|e| fail(5, &e.to_string()))?;
    let mut p = EncoderParams::zeros(cfg);
    let expected = HEADER_LEN + 8 * p.num_params();
    if bytes.len() < expected {
        return Err(fail(bytes.len(), &format!("truncated weights, expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(fail(expected, "trailing bytes after weights"));
    }
    let mut at = HEADER_LEN;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            at += 8;
        }
    }
    Ok(p)
}

pub fn save_checkpoint(p: &EncoderParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
