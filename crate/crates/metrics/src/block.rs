//! Exhaustive-search block matching scored by normalized cross-correlation.

use editlab_core::VideoTensor;

use crate::gray::{grayscale_frames, GrayFrame};
use crate::{MetricsError, Result};

const NCC_EPS: f64 = 1e-6;

/// Best match for one `B×B` block of the earlier frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockMatch {
    /// Top-left corner of the block, `(y, x)`.
    pub origin: (usize, usize),
    /// Displacement into the later frame, `(dx, dy)`.
    pub motion: (isize, isize),
    pub score: f64,
}

fn ncc(a: &GrayFrame, b: &GrayFrame, (ay, ax): (usize, usize), (by, bx): (usize, usize), size: usize) -> f64 {
    let n = (size * size) as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            ma += a.at(ay + y, ax + x);
            mb += b.at(by + y, bx + x);
        }
    }
    ma /= n;
    mb /= n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            let (da, db) = (a.at(ay + y, ax + x) - ma, b.at(by + y, bx + x) - mb);
            num += da * db;
            va += da * da;
            vb += db * db;
        }
    }
    ((num + NCC_EPS) / ((va + NCC_EPS) * (vb + NCC_EPS)).sqrt()).clamp(-1.0, 1.0)
}

/// Candidate displacements ordered by L1 length, so ties resolve toward no motion.
fn displacements(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut d: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    d.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    d
}

fn check(h: usize, w: usize, block: usize) -> Result<()> {
    if block == 0 || block > h.min(w) {
        return Err(MetricsError::Config(format!("block size {block} does not fit {h}x{w} frames")));
    }
    Ok(())
}

/// Matches every non-overlapping block of `a` inside `b`.
pub fn block_match_pair(a: &GrayFrame, b: &GrayFrame, block: usize, radius: usize) -> Result<Vec<BlockMatch>> {
    let (h, w) = (a.height, a.width);
    if (b.height, b.width) != (h, w) {
        return Err(MetricsError::Dimension("block-matching frames differ in size".into()));
    }
    check(h, w, block)?;
    let cands = displacements(radius);
    let mut out = Vec::new();
    for oy in (0..=h - block).step_by(block) {
        for ox in (0..=w - block).step_by(block) {
            let mut best = BlockMatch { origin: (oy, ox), motion: (0, 0), score: f64::NEG_INFINITY };
            for &(dx, dy) in &cands {
                let (ty, tx) = (oy as isize + dy, ox as isize + dx);
                if ty < 0 || tx < 0 || ty as usize + block > h || tx as usize + block > w {
                    continue;
                }
                let s = ncc(a, b, (oy, ox), (ty as usize, tx as usize), block);
                if s > best.score {
                    best = BlockMatch { origin: (oy, ox), motion: (dx, dy), score: s };
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Mean best NCC over all blocks and adjacent frame pairs.
pub fn block_matching(video: &VideoTensor, block: usize, radius: usize) -> Result<f64> {
    let s = video.shape();
    check(s.height, s.width, block)?;
    if s.frames < 2 {
        return Err(MetricsError::Undefined("block matching needs at least 2 frames".into()));
    }
    let gray = grayscale_frames(video)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for pair in gray.windows(2) {
        for m in block_match_pair(&pair[0], &pair[1], block, radius)? {
            sum += m.score;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
