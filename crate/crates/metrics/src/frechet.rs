//! Fréchet distance between Gaussian fits of two feature sets.

use editlab_core::VideoTensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::features::FeatureExtractor;
use crate::{MetricsError, Result};

/// Added to every covariance diagonal.
const COV_EPS: f64 = 1e-6;

/// Mean and unbiased covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(MetricsError::Undefined(format!("a covariance needs at least 2 samples, got {n}")));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(MetricsError::Dimension("feature vectors differ in length".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centred.transpose() * &centred / (n - 1) as f64;
        for j in 0..d {
            cov[(j, j)] += COV_EPS;
        }
        Ok(GaussianFit { mean, cov })
    }
}

/// Symmetric PSD square root, clamping negative eigenvalues to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `Tr((Σ₁Σ₂)^{1/2})` from the eigenvalues of `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`.
fn trace_sqrt_product(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> f64 {
    let s1 = sqrt_psd(c1);
    let inner = &s1 * c2 * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, with the trace of the root taken
/// in both argument orders and averaged so the result does not depend on order.
pub fn frechet_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (fa, fb) = (GaussianFit::fit(a)?, GaussianFit::fit(b)?);
    if fa.mean.len() != fb.mean.len() {
        return Err(MetricsError::Dimension(format!(
            "feature dims {} and {} differ",
            fa.mean.len(),
            fb.mean.len()
        )));
    }
    let tr_root = 0.5 * (trace_sqrt_product(&fa.cov, &fb.cov) + trace_sqrt_product(&fb.cov, &fa.cov));
    let dist = (&fa.mean - &fb.mean).norm_squared() + fa.cov.trace() + fb.cov.trace() - 2.0 * tr_root;
    if !dist.is_finite() {
        return Err(MetricsError::Numeric(format!("Fréchet distance evaluated to {dist}")));
    }
    Ok(dist.max(0.0))
}

fn features(frames: &VideoTensor, ext: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    let s = frames.shape();
    frames
        .frame_iter()
        .map(|f| {
            let v = ext.extract(f, s.channels, s.height, s.width);
            if v.len() != ext.dim() {
                return Err(MetricsError::Dimension(format!(
                    "extractor declared {} features but produced {}",
                    ext.dim(),
                    v.len()
                )));
            }
            Ok(v)
        })
        .collect()
}

/// Fréchet distance between the per-frame feature distributions of two frame sets.
pub fn frechet_distance(a: &VideoTensor, b: &VideoTensor, ext: &dyn FeatureExtractor) -> Result<f64> {
    if a.frames() < 2 || b.frames() < 2 {
        return Err(MetricsError::Undefined(format!(
            "Fréchet distance needs 2+ frames per set, got {} and {}",
            a.frames(),
            b.frames()
        )));
    }
    frechet_from_features(&features(a, ext)?, &features(b, ext)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_root_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrt_psd(&m);
        assert!((&r * &r - m).abs().max() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(frechet_from_features(&[vec![1.0]], &[vec![1.0], vec![2.0]]), Err(MetricsError::Undefined(_))));
    }
}
