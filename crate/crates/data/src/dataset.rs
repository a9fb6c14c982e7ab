//! Binary dataset container.
//!
//! ```text
//! magic  b"EDITVID\0"
//! u32    version (1)
//! u64    record count
//! u32    config length, then that many bytes of SceneConfig JSON
//! record*:
//!   input video   (.vten block)
//!   u32 n, n × u32 instruction token ids
//!   u8            edit code
//!   edited video  (.vten block)
//!   shape mask    (.vten block)
//! ```
//!
//! All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use editlab_core::{read_tensor, write_tensor, Rng};
use rayon::prelude::*;

use crate::edit::EditSpec;
use crate::grammar::Grammar;
use crate::scene::{gen_triplet, SceneConfig, Triplet};
use crate::{DataError, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"EDITVID\0";
const VERSION: u32 = 1;
/// Upper bound on instruction length accepted when reading.
const MAX_TOKENS: u32 = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_dataset(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let ds = read_dataset(&mut r)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(DataError::Format("trailing bytes after last record".into()));
        }
        Ok(ds)
    }
}

/// Generates `n` triplets; sample `i` uses its own stream derived from `seed`.
pub fn gen_dataset(n: usize, config: &SceneConfig, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Config("dataset needs at least one triplet".into()));
    }
    config.validate()?;
    let grammar = Grammar::default();
    let triplets = (0..n)
        .into_par_iter()
        .map(|i| gen_triplet(config, &grammar, &mut Rng::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: config.clone(), triplets })
}

pub fn write_dataset<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.triplets.len() as u64).to_le_bytes())?;
    let cfg = serde_json::to_vec(&ds.config)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    for t in &ds.triplets {
        write_tensor(w, &t.input)?;
        w.write_all(&(t.instruction.len() as u32).to_le_bytes())?;
        for id in &t.instruction {
            w.write_all(&id.to_le_bytes())?;
        }
        w.write_all(&[t.edit.code()])?;
        write_tensor(w, &t.edited)?;
        write_tensor(w, &t.mask)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> DataError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DataError::Format("file ends mid-record".into())
    } else {
        DataError::Io(e)
    }
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Format("not a dataset file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(DataError::Format(format!("unsupported dataset version {version}")));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(truncated)?;
    let count = u64::from_le_bytes(count);
    let cfg_len = read_u32(r)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg).map_err(truncated)?;
    let config: SceneConfig = serde_json::from_slice(&cfg)?;

    let mut triplets = Vec::new();
    for _ in 0..count {
        let input = read_tensor(r)?;
        let n = read_u32(r)?;
        if n > MAX_TOKENS {
            return Err(DataError::Format(format!("instruction of {n} tokens")));
        }
        let instruction = (0..n).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(truncated)?;
        let edit = EditSpec::from_code(code[0])?;
        let edited = read_tensor(r)?;
        let mask = read_tensor(r)?;
        if edited.shape() != input.shape() {
            return Err(DataError::Format("edited video shape differs from input".into()));
        }
        triplets.push(Triplet { input, instruction, edit, edited, mask });
    }
    Ok(Dataset { config, triplets })
}
