//! `.vten` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 8     | magic `VTENSOR\0`                       |
//! | 4     | version `u32` (currently 1)             |
//! | 1     | dtype code (`1` = f32)                  |
//! | 32    | dims `f, c, h, w` as four `u64`         |
//! | 1     | value-domain tag                        |
//! | 4·n   | payload, `f32` little-endian            |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{CoreError, Result, Shape, ValueDomain, VideoTensor};

pub const MAGIC: [u8; 8] = *b"VTENSOR\0";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 8 + 4 + 1 + 32 + 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &VideoTensor) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.push(DTYPE_F32);
    for d in t.dims() {
        header.extend_from_slice(&(d as u64).to_le_bytes());
    }
    header.push(t.domain().tag());
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CoreError::Format(format!("truncated {what}")),
        _ => CoreError::Io(e),
    })
}

/// Reads one tensor block; trailing bytes in the stream are left unread.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<VideoTensor> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or_truncated(r, &mut header, "header")?;
    if header[..8] != MAGIC {
        return Err(CoreError::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported version {version}")));
    }
    if header[12] != DTYPE_F32 {
        return Err(CoreError::Format(format!("unsupported dtype code {}", header[12])));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 13 + 8 * i;
        let raw = u64::from_le_bytes(header[off..off + 8].try_into().unwrap());
        *d = usize::try_from(raw)
            .map_err(|_| CoreError::Format(format!("dimension {raw} too large")))?;
    }
    let shape = Shape::from_dims(dims).map_err(|e| CoreError::Format(e.to_string()))?;
    let domain = ValueDomain::from_tag(header[45])
        .ok_or_else(|| CoreError::Format(format!("unknown domain tag {}", header[45])))?;

    let mut payload = vec![0u8; shape.len() * 4];
    read_exact_or_truncated(r, &mut payload, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    VideoTensor::from_vec(shape, data, domain).map_err(|e| CoreError::Format(e.to_string()))
}

pub fn save_tensor(t: &VideoTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

/// Loads a standalone `.vten` file; extra bytes after the payload are a format error.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CoreError::Format("trailing bytes after payload".into()));
    }
    Ok(t)
}
