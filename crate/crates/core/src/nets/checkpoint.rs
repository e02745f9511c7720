//! `AGND` checkpoint layout, little-endian:
//!
//! ```text
//! magic "AGND", version u32,
//! in_dim u32, out_dim u32, n_identities u32, k u32, disc_hidden u32,
//! f64 blocks: generator (weight, bias, prelu_slope), classifier (weight, bias),
//!             then each ensemble member (w1, b1, w2, b2)
//! ```

use std::path::Path;

use super::{ClassifierParams, DiscriminatorParams, EnsembleParams, GeneratorParams, ParamSet};
use crate::error::{Error, FormatError, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AGND";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorParams,
    pub classifier: ClassifierParams,
    pub ensemble: EnsembleParams,
}

impl Checkpoint {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.generator.blocks();
        b.extend(self.classifier.blocks());
        b.extend(self.ensemble.blocks());
        b
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let disc_hidden = ckpt.ensemble.members.first().map_or(0, |m| m.hidden_dim());
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        ckpt.generator.in_dim() as u32,
        ckpt.generator.out_dim() as u32,
        ckpt.classifier.n_identities() as u32,
        ckpt.ensemble.len() as u32,
        disc_hidden as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for block in ckpt.blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let truncated = |expected: usize| {
        Error::format(
            path,
            FormatError::Truncated {
                expected: expected as u64,
                actual: bytes.len() as u64,
            },
        )
    };
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            path,
            FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            },
        ));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let version = field(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            FormatError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            },
        ));
    }
    let (in_dim, out_dim, n_ids, k, hidden) = (field(1), field(2), field(3), field(4), field(5));

    let mut ckpt = Checkpoint {
        generator: GeneratorParams {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
            prelu_slope: vec![0.0; out_dim],
        },
        classifier: ClassifierParams {
            weight: Matrix::zeros(out_dim, n_ids),
            bias: vec![0.0; n_ids],
        },
        ensemble: EnsembleParams {
            members: vec![
                DiscriminatorParams {
                    w1: Matrix::zeros(out_dim, hidden),
                    b1: vec![0.0; hidden],
                    w2: Matrix::zeros(hidden, 2),
                    b2: vec![0.0; 2],
                };
                k
            ],
        },
    };
    let floats: usize = ckpt.blocks().iter().map(|b| b.len()).sum();
    let expected = HEADER_LEN + 8 * floats;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            FormatError::TrailingBytes {
                expected: expected as u64,
                actual: bytes.len() as u64,
            },
        ));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut fill = |blocks: Vec<&mut [f64]>| -> Result<()> {
        for block in blocks {
            for slot in block.iter_mut() {
                let v = values.next().expect("length checked");
                if !v.is_finite() {
                    return Err(Error::format(path, FormatError::NonFinite { record: 0 }));
                }
                *slot = v;
            }
        }
        Ok(())
    };
    fill(ckpt.generator.blocks_mut())?;
    fill(ckpt.classifier.blocks_mut())?;
    fill(ckpt.ensemble.blocks_mut())?;
    Ok(ckpt)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
