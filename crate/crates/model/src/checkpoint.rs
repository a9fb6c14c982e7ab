//! Checkpoint files: one `.vten` block per named parameter group, plus a JSON
//! sidecar at `<path>.json` holding the architecture and codec settings.
//!
//! ```text
//! magic  b"EDITCKPT"
//! u32    version (1)
//! u32    block count
//! block*: u32 name length, UTF-8 name, .vten block of shape (1, 1, 1, len)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use editlab_core::{read_tensor, write_tensor, Shape, ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecMode, TextEncoder};
use crate::denoiser::{ArchConfig, DenoiserParams, ParamGroup};
use crate::diffusion::ScheduleSpec;
use crate::error::{ModelError, Result};

const MAGIC: &[u8; 8] = b"EDITCKPT";
const VERSION: u32 = 1;
const TEXT_BLOCK: &str = "text.table";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub codec: CodecMode,
    pub vocab_size: usize,
    /// The noise schedule the model was trained with.
    pub schedule: ScheduleSpec,
}

/// A trained denoiser together with the frozen instruction-embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams<f32>,
    pub text: TextEncoder,
    pub codec: CodecMode,
    pub schedule: ScheduleSpec,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn block(values: &[f32]) -> Result<VideoTensor> {
    let shape = Shape::new(1, 1, 1, values.len())?;
    Ok(VideoTensor::from_vec(shape, values.to_vec(), ValueDomain::Unconstrained)?)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ModelError::Format("checkpoint truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            arch: self.params.config().clone(),
            codec: self.codec,
            vocab_size: self.text.vocab_size(),
            schedule: self.schedule,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        let groups = self.params.groups();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(groups.len() as u32 + 1).to_le_bytes())?;
        let blocks = groups.iter().map(|g| (g.name.as_str(), g.values.as_slice()));
        for (name, values) in blocks.chain([(TEXT_BLOCK, self.text.table())]) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(&mut w, &block(values)?)?;
        }
        w.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        meta.arch.validate()?;
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| ModelError::Format("checkpoint truncated".into()))?;
        if &magic != MAGIC {
            return Err(ModelError::Format(format!("{} is not a checkpoint", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let layout = meta.arch.layout();
        if count != layout.len() + 1 {
            return Err(ModelError::Format(format!(
                "checkpoint has {count} blocks, architecture needs {}",
                layout.len() + 1
            )));
        }
        let mut groups = Vec::with_capacity(layout.len());
        let mut table = None;
        for i in 0..count {
            let len = read_u32(&mut r)? as usize;
            if len > 256 {
                return Err(ModelError::Format("block name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| ModelError::Format("checkpoint truncated".into()))?;
            let name = String::from_utf8(name).map_err(|_| ModelError::Format("block name is not UTF-8".into()))?;
            let values = read_tensor(&mut r)?.into_data();
            if i < layout.len() {
                groups.push(ParamGroup { name, dims: layout[i].dims.clone(), values });
            } else if name == TEXT_BLOCK {
                table = Some(values);
            } else {
                return Err(ModelError::Format(format!("unexpected block {name}")));
            }
        }
        let table = table.ok_or_else(|| ModelError::Format("missing text table".into()))?;
        Ok(Checkpoint {
            params: DenoiserParams::from_groups(&meta.arch, groups)?,
            text: TextEncoder::from_table(meta.vocab_size, meta.arch.text_dim, table)?,
            codec: meta.codec,
            schedule: meta.schedule,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use editlab_core::Rng;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let arch = ArchConfig { base_channels: 4, text_dim: 4, time_dim: 4, ..ArchConfig::default() };
        let ckpt = Checkpoint {
            params: DenoiserParams::init(&arch, &mut Rng::new(1)).unwrap(),
            text: TextEncoder::random(20, 4, 2).unwrap(),
            codec: CodecMode::Identity,
            schedule: ScheduleSpec { timesteps: 100, beta_start: 1e-3, beta_end: 0.05 },
        };
        ckpt.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
