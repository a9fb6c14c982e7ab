use std::collections::BTreeMap;

use editlab_core::VideoTensor;
use serde::{Deserialize, Serialize};

use crate::block::block_matching;
use crate::features::FrameStats;
use crate::frechet::frechet_distance;
use crate::noise::nr_psnr;
use crate::optical_flow::{optical_flow_metric, HornSchunck};
use crate::{MetricsError, Result};

/// Mean absolute pixel change between consecutive frames, over all channels.
pub fn frame_differencing(video: &VideoTensor) -> Result<f64> {
    let f = video.frames();
    if f < 2 {
        return Err(MetricsError::Undefined("frame differencing needs at least 2 frames".into()));
    }
    let mut total = 0.0;
    for i in 1..f {
        let s: f64 = video.frame(i).iter().zip(video.frame(i - 1)).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        total += s / video.shape().frame_len() as f64;
    }
    Ok(total / (f - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub flow: HornSchunck,
    pub block: usize,
    pub radius: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { flow: HornSchunck::default(), block: 8, radius: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Higher,
}

/// Temporal-consistency group. A value is `None` when the video has too few
/// frames for that metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub fd: Option<f64>,
    pub of: Option<f64>,
    pub bm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub nr_psnr: f64,
    /// Present only when a reference frame set was given.
    pub frechet: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub consistency: Consistency,
    pub quality: Quality,
    pub config: MetricsConfig,
    /// Which way each metric improves.
    pub better: BTreeMap<String, Direction>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn directions() -> BTreeMap<String, Direction> {
    [
        ("fd", Direction::Lower),
        ("of", Direction::Lower),
        ("bm", Direction::Higher),
        ("nr_psnr", Direction::Higher),
        ("frechet", Direction::Lower),
    ]
    .into_iter()
    .map(|(k, d)| (k.to_string(), d))
    .collect()
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes every metric that is defined for `video`; the Fréchet distance
/// uses the default 32-feature descriptor against `reference`.
pub fn report(video: &VideoTensor, reference: Option<&VideoTensor>, config: &MetricsConfig) -> Result<MetricsReport> {
    let consistency = Consistency {
        fd: optional(frame_differencing(video))?,
        of: optional(optical_flow_metric(video, config.flow))?,
        bm: optional(block_matching(video, config.block, config.radius))?,
    };
    let frechet = reference.map(|r| frechet_distance(video, r, &FrameStats)).transpose()?;
    Ok(MetricsReport {
        consistency,
        quality: Quality { nr_psnr: nr_psnr(video)?, frechet },
        config: *config,
        better: directions(),
    })
}
