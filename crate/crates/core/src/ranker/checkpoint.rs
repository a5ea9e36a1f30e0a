//! Binary model checkpoints.
//!
//! Layout: magic "SSTT", version byte, feature-setting tag byte, u32 tensor
//! count, then each tensor as a length-prefixed name, a rank byte, u32
//! dimensions, and little-endian f64 values. Tensors are written in the
//! canonical parameter order followed by the batch norm running buffers,
//! and the loader insists on exactly that sequence, so a round trip is
//! bit-exact and anything else is rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio;

use super::model::{AblationSetting, TwoTowerModel};

const MAGIC: &[u8; 4] = b"SSTT";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("unknown feature setting tag {0}")]
    BadSetting(u8),
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {index}: expected {expected:?}, found {found:?}")]
    TensorName {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("trailing bytes after checkpoint payload")]
    TrailingBytes,
}

fn tensor_names(model: &TwoTowerModel) -> Vec<&'static str> {
    let mut names = model.param_names();
    names.extend(model.buffer_names());
    names
}

impl TwoTowerModel {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        binio::write_u8(&mut w, VERSION)?;
        binio::write_u8(&mut w, self.setting().tag())?;
        let names = tensor_names(self);
        binio::write_u32(&mut w, names.len() as u32)?;
        for name in names {
            binio::write_bytes(&mut w, name.as_bytes())?;
            let shape = self.block_shape(name).unwrap();
            binio::write_u8(&mut w, shape.len() as u8)?;
            for d in &shape {
                binio::write_u32(&mut w, *d as u32)?;
            }
            for v in self.block(name).unwrap() {
                binio::write_f64(&mut w, *v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<TwoTowerModel, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = binio::read_u8(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let tag = binio::read_u8(&mut r)?;
        let setting =
            AblationSetting::from_tag(tag).ok_or(CheckpointError::BadSetting(tag))?;
        let mut model = TwoTowerModel::new(setting, 0);
        let expected = tensor_names(&model);
        let count = binio::read_u32(&mut r)? as usize;
        if count != expected.len() {
            return Err(CheckpointError::TensorCount {
                expected: expected.len(),
                found: count,
            });
        }
        for (index, &name) in expected.iter().enumerate() {
            let found = String::from_utf8_lossy(&binio::read_bytes(&mut r)?).into_owned();
            if found != name {
                return Err(CheckpointError::TensorName {
                    index,
                    expected: name.to_string(),
                    found,
                });
            }
            let rank = binio::read_u8(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(binio::read_u32(&mut r)? as usize);
            }
            let want = model.block_shape(name).unwrap();
            if shape != want {
                return Err(CheckpointError::TensorShape {
                    name: name.to_string(),
                    expected: want,
                    found: shape,
                });
            }
            let params = model.block_mut(name).unwrap();
            for slot in params.iter_mut() {
                *slot = binio::read_f64(&mut r)?;
            }
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(CheckpointError::TrailingBytes);
        }
        Ok(model)
    }
}
