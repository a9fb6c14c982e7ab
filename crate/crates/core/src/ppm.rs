//! Binary PPM (P6) frame export and import for u8-range videos.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{CoreError, Result, Shape, ValueDomain, VideoTensor};

/// Encodes frame `index` as P6. Single-channel frames are written as gray RGB.
pub fn encode_frame(video: &VideoTensor, index: usize) -> Result<Vec<u8>> {
    let s = video.shape();
    if s.channels != 1 && s.channels != 3 {
        return Err(CoreError::Dimension(format!("PPM needs 1 or 3 channels, got {}", s.channels)));
    }
    if index >= s.frames {
        return Err(CoreError::Dimension(format!("frame {index} out of range")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.width, s.height).into_bytes();
    let frame = video.frame(index);
    let plane = s.plane_len();
    for p in 0..plane {
        for c in 0..3 {
            let ch = if s.channels == 1 { 0 } else { c };
            out.push(frame[ch * plane + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Writes every frame as `frame_NNNN.ppm` into `dir`, returning the paths.
pub fn save_frames(video: &VideoTensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(video.frames());
    for i in 0..video.frames() {
        let path = dir.join(format!("frame_{i:04}.ppm"));
        let mut f = fs::File::create(&path)?;
        f.write_all(&encode_frame(video, i)?)?;
        paths.push(path);
    }
    Ok(paths)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(CoreError::Format("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_num(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CoreError::Format("bad number in PPM header".into()))
}

/// Decodes a P6 image into `(width, height, rgb bytes)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P6" {
        return Err(CoreError::Format("not a P6 PPM".into()));
    }
    let w = parse_num(next_token(bytes, &mut pos)?)?;
    let h = parse_num(next_token(bytes, &mut pos)?)?;
    let max = parse_num(next_token(bytes, &mut pos)?)?;
    if max != 255 {
        return Err(CoreError::Format(format!("unsupported maxval {max}")));
    }
    pos += 1;
    let need = w * h * 3;
    let body = bytes.get(pos..pos + need).ok_or_else(|| CoreError::Format("truncated PPM data".into()))?;
    Ok((w, h, body.to_vec()))
}

/// Loads every `.ppm` file in `dir`, in lexicographic order, as one RGB video.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<VideoTensor> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::Format(format!("no .ppm files in {}", dir.as_ref().display())));
    }
    let mut data = Vec::new();
    let mut size = None;
    for p in &paths {
        let (w, h, rgb) = decode(&fs::read(p)?)?;
        if *size.get_or_insert((w, h)) != (w, h) {
            return Err(CoreError::Dimension(format!("{} has a different size", p.display())));
        }
        let plane = w * h;
        for c in 0..3 {
            data.extend((0..plane).map(|i| rgb[i * 3 + c] as f32));
        }
    }
    let (w, h) = size.unwrap();
    let shape = Shape::new(paths.len(), 3, h, w)?;
    VideoTensor::from_vec(shape, data, ValueDomain::PixelU8)
}
