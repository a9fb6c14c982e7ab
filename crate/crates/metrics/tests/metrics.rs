use editlab_core::{Rng, Shape, ValueDomain, VideoTensor};
use editlab_metrics::*;
use proptest::prelude::*;

fn video(dims: [usize; 4], data: Vec<f32>) -> VideoTensor {
    VideoTensor::from_vec(Shape::from_dims(dims).unwrap(), data, ValueDomain::PixelU8).unwrap()
}

fn noise_video(rng: &mut Rng, dims: [usize; 4]) -> VideoTensor {
    let n: usize = dims.iter().product();
    video(dims, (0..n).map(|_| rng.below(256) as f32).collect())
}

/// A static textured scene.
fn static_video(frames: usize) -> VideoTensor {
    let frame = noise_video(&mut Rng::new(99), [1, 3, 16, 16]);
    VideoTensor::concat_frames(&vec![frame; frames]).unwrap()
}

/// Smooth periodic pattern translated by `(vx, vy)` pixels per frame.
fn translating(frames: usize, h: usize, w: usize, vx: f64, vy: f64) -> VideoTensor {
    let tau = std::f64::consts::TAU;
    let mut data = Vec::new();
    for f in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let (xs, ys) = (x as f64 - vx * f as f64, y as f64 - vy * f as f64);
                data.push((128.0 + 60.0 * (tau * xs / 16.0).sin() + 50.0 * (tau * ys / 16.0).cos()) as f32);
            }
        }
    }
    video([frames, 1, h, w], data)
}

fn gray(v: &VideoTensor, i: usize) -> GrayFrame {
    grayscale_frames(v).unwrap().swap_remove(i)
}

// ---------------------------------------------------------------- frame differencing

#[test]
fn fd_known_values() {
    assert_eq!(frame_differencing(&static_video(4)).unwrap(), 0.0);
    let two = video([2, 3, 2, 2], [vec![0.0; 12], vec![10.0; 12]].concat());
    assert_eq!(frame_differencing(&two).unwrap(), 10.0);
    assert!(matches!(frame_differencing(&static_video(1)), Err(MetricsError::Undefined(_))));
}

#[test]
fn fd_matches_nested_loops() {
    let v = noise_video(&mut Rng::new(1), [4, 3, 5, 7]);
    let mut total = 0.0;
    for f in 1..4 {
        let mut s = 0.0;
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    s += (v.at(f, c, y, x) as f64 - v.at(f - 1, c, y, x) as f64).abs();
                }
            }
        }
        total += s / 105.0;
    }
    assert!((frame_differencing(&v).unwrap() - total / 3.0).abs() < 1e-9);
}

// ---------------------------------------------------------------- optical flow

/// Textbook Horn–Schunck on padded 2D grids.
fn reference_hs(a: &GrayFrame, b: &GrayFrame, alpha: f64, iters: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (h, w) = (a.height as isize, a.width as isize);
    let e = |f: &GrayFrame, y: isize, x: isize| f.at(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize);
    let grid = || vec![vec![0.0; w as usize]; h as usize];
    let (mut ex, mut ey, mut et) = (grid(), grid(), grid());
    for i in 0..h {
        for j in 0..w {
            let (iu, ju) = (i as usize, j as usize);
            ex[iu][ju] = (e(a, i, j + 1) - e(a, i, j) + e(a, i + 1, j + 1) - e(a, i + 1, j) + e(b, i, j + 1) - e(b, i, j)
                + e(b, i + 1, j + 1)
                - e(b, i + 1, j))
                / 4.0;
            ey[iu][ju] = (e(a, i + 1, j) - e(a, i, j) + e(a, i + 1, j + 1) - e(a, i, j + 1) + e(b, i + 1, j) - e(b, i, j)
                + e(b, i + 1, j + 1)
                - e(b, i, j + 1))
                / 4.0;
            et[iu][ju] = (e(b, i, j) - e(a, i, j) + e(b, i + 1, j) - e(a, i + 1, j) + e(b, i, j + 1) - e(a, i, j + 1)
                + e(b, i + 1, j + 1)
                - e(a, i + 1, j + 1))
                / 4.0;
        }
    }
    let (mut u, mut v) = (grid(), grid());
    let avg = |g: &Vec<Vec<f64>>, i: isize, j: isize| {
        let p = |y: isize, x: isize| g[y.clamp(0, h - 1) as usize][x.clamp(0, w - 1) as usize];
        (p(i - 1, j) + p(i, j + 1) + p(i + 1, j) + p(i, j - 1)) / 6.0
            + (p(i - 1, j - 1) + p(i - 1, j + 1) + p(i + 1, j + 1) + p(i + 1, j - 1)) / 12.0
    };
    for _ in 0..iters {
        let (mut nu, mut nv) = (grid(), grid());
        for i in 0..h {
            for j in 0..w {
                let (iu, ju) = (i as usize, j as usize);
                let (ub, vb) = (avg(&u, i, j), avg(&v, i, j));
                let t = (ex[iu][ju] * ub + ey[iu][ju] * vb + et[iu][ju])
                    / (alpha * alpha + ex[iu][ju].powi(2) + ey[iu][ju].powi(2));
                nu[iu][ju] = ub - ex[iu][ju] * t;
                nv[iu][ju] = vb - ey[iu][ju] * t;
            }
        }
        u = nu;
        v = nv;
    }
    (u, v)
}

#[test]
fn horn_schunck_matches_reference() {
    let v = translating(2, 12, 14, 1.0, 0.5);
    let (a, b) = (gray(&v, 0), gray(&v, 1));
    let flow = horn_schunck(&a, &b, HornSchunck { alpha: 1.0, iterations: 40 }).unwrap();
    let (ru, rv) = reference_hs(&a, &b, 1.0, 40);
    for y in 0..12 {
        for x in 0..14 {
            assert!((flow.u[y * 14 + x] - ru[y][x]).abs() < 1e-9);
            assert!((flow.v[y * 14 + x] - rv[y][x]).abs() < 1e-9);
        }
    }
}

#[test]
fn flow_recovers_direction_of_translation() {
    let v = translating(2, 32, 32, 1.0, 0.0);
    let flow = horn_schunck(&gray(&v, 0), &gray(&v, 1), HornSchunck::default()).unwrap();
    let mean_u = flow.u.iter().sum::<f64>() / flow.u.len() as f64;
    let mean_v = flow.v.iter().sum::<f64>() / flow.v.len() as f64;
    assert!(mean_u > 0.5 && mean_v.abs() < 0.1, "({mean_u}, {mean_v})");
}

#[test]
fn flow_metric_cases() {
    assert_eq!(optical_flow_metric(&static_video(4), HornSchunck::default()).unwrap(), 0.0);
    let steady = optical_flow_metric(&translating(6, 32, 32, 1.0, 0.0), HornSchunck::default()).unwrap();
    assert!(steady < 0.1, "{steady}");

    let mut rng = Rng::new(5);
    let (a, b) = (noise_video(&mut rng, [1, 1, 16, 16]), noise_video(&mut rng, [1, 1, 16, 16]));
    let flicker = VideoTensor::concat_frames(&[a.clone(), b.clone(), a, b]).unwrap();
    assert!(optical_flow_metric(&flicker, HornSchunck::default()).unwrap() > 0.0);
    assert!(matches!(optical_flow_metric(&static_video(2), HornSchunck::default()), Err(MetricsError::Undefined(_))));
}

// ---------------------------------------------------------------- block matching

#[test]
fn identical_frames_match_in_place() {
    let v = static_video(2);
    let m = block_match_pair(&gray(&v, 0), &gray(&v, 1), 8, 4).unwrap();
    assert_eq!(m.len(), 4);
    assert!(m.iter().all(|b| b.score == 1.0 && b.motion == (0, 0)));
    assert_eq!(block_matching(&v, 8, 4).unwrap(), 1.0);
}

/// Shifts every frame of `v` by `(dx, dy)`, filling uncovered pixels with fresh noise.
fn shifted(base: &VideoTensor, dx: isize, dy: isize, rng: &mut Rng) -> VideoTensor {
    let s = base.shape();
    let mut data = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        for y in 0..s.height as isize {
            for x in 0..s.width as isize {
                let (sy, sx) = (y - dy, x - dx);
                if sy >= 0 && sx >= 0 && (sy as usize) < s.height && (sx as usize) < s.width {
                    data.push(base.at(0, c, sy as usize, sx as usize));
                } else {
                    data.push(rng.below(256) as f32);
                }
            }
        }
    }
    video([1, s.channels, s.height, s.width], data)
}

#[test]
fn two_pixel_shift_found_by_exhaustive_search() {
    let mut rng = Rng::new(8);
    let a = noise_video(&mut rng, [1, 1, 32, 32]);
    let b = shifted(&a, 2, 0, &mut rng);
    let matches = block_match_pair(&gray(&a, 0), &gray(&b, 0), 8, 4).unwrap();
    for m in matches {
        let (oy, ox) = m.origin;
        if ox + 8 + 2 <= 32 {
            assert_eq!(m.motion, (2, 0), "block at {:?}", (oy, ox));
            assert_eq!(m.score, 1.0);
        }
    }
}

#[test]
fn independent_noise_barely_correlates() {
    let mut rng = Rng::new(12);
    let v = noise_video(&mut rng, [6, 1, 32, 32]);
    let at_zero = block_matching(&v, 8, 0).unwrap();
    assert!(at_zero.abs() < 0.05, "{at_zero}");
    let searched = block_matching(&v, 8, 4).unwrap();
    assert!(searched > at_zero && searched < 0.5, "{searched}");
}

#[test]
fn oversized_block_rejected() {
    assert!(matches!(block_matching(&static_video(2), 17, 1), Err(MetricsError::Config(_))));
}

// ---------------------------------------------------------------- NR-PSNR

fn noisy_flat(sigma: f64, seed: u64) -> VideoTensor {
    let mut rng = Rng::new(seed);
    let data = rng.gaussian_vec(64 * 64).into_iter().map(|n| (128.0 + sigma * n).clamp(0.0, 255.0) as f32).collect();
    video([1, 1, 64, 64], data)
}

#[test]
fn flat_frame_hits_cap() {
    assert_eq!(nr_psnr(&video([2, 3, 8, 8], vec![77.0; 384])).unwrap(), 100.0);
}

#[test]
fn noise_estimate_is_calibrated() {
    let mut last = f64::INFINITY;
    for sigma in [2.0, 5.0, 10.0] {
        let mut mean_db = 0.0;
        for seed in 0..10 {
            let v = noisy_flat(sigma, seed);
            let est = noise_sigma(&gray(&v, 0)).unwrap();
            assert!((est - sigma).abs() < 0.1 * sigma, "sigma {sigma}: {est}");
            mean_db += nr_psnr(&v).unwrap() / 10.0;
        }
        assert!(mean_db < last);
        last = mean_db;
        if sigma == 5.0 {
            assert!((mean_db - 34.2).abs() < 0.5, "{mean_db}");
        }
    }
}

#[test]
fn psnr_strictly_decreasing_in_noise() {
    let mut last = f64::INFINITY;
    for sigma in (1..=20).map(f64::from) {
        let db = (0..10).map(|s| nr_psnr(&noisy_flat(sigma, 100 + s)).unwrap()).sum::<f64>() / 10.0;
        assert!(db < last, "sigma {sigma}");
        last = db;
    }
}

// ---------------------------------------------------------------- Fréchet

/// Rows of an 8×8 Sylvester Hadamard matrix without its constant column:
/// columns are ±1, sum to zero and are mutually orthogonal.
fn design(mean: f64, std: f64) -> Vec<Vec<f64>> {
    let hadamard = |i: usize, j: usize| if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    // Unbiased covariance of these rows is (8/7)·c²·I; pick c so it equals std².
    let c = std * (7.0f64 / 8.0).sqrt();
    (0..8).map(|i| (1..5).map(|j| mean + c * hadamard(i, j)).collect()).collect()
}

fn closed_form(mu: [f64; 2], sd: [f64; 2], d: usize) -> f64 {
    // Σ(Δμ² + (√σ₁² − √σ₂²)²) with the regularizer on both variances.
    let (v1, v2) = (sd[0] * sd[0] + 1e-6, sd[1] * sd[1] + 1e-6);
    d as f64 * ((mu[0] - mu[1]).powi(2) + (v1.sqrt() - v2.sqrt()).powi(2))
}

#[test]
fn frechet_diagonal_oracle() {
    let d = frechet_from_features(&design(0.0, 1.0), &design(3.0, 1.0)).unwrap();
    assert!((d - 36.0).abs() < 1e-3 && (d - closed_form([0.0, 3.0], [1.0, 1.0], 4)).abs() < 1e-6, "{d}");
    let d = frechet_from_features(&design(0.0, 1.0), &design(0.0, 2.0)).unwrap();
    assert!((d - 4.0).abs() < 1e-3, "{d}");
    let d = frechet_from_features(&design(-1.0, 0.5), &design(2.0, 3.0)).unwrap();
    assert!((d - closed_form([-1.0, 2.0], [0.5, 3.0], 4)).abs() < 1e-6, "{d}");
}

#[test]
fn frechet_identical_and_symmetric() {
    let mut rng = Rng::new(4);
    let a = noise_video(&mut rng, [12, 3, 16, 16]);
    let b = noise_video(&mut rng, [9, 3, 16, 16]);
    assert!(frechet_distance(&a, &a, &FrameStats).unwrap() < 1e-6);
    let (ab, ba) = (frechet_distance(&a, &b, &FrameStats).unwrap(), frechet_distance(&b, &a, &FrameStats).unwrap());
    assert!((ab - ba).abs() < 1e-9 * ab.max(1.0), "{ab} vs {ba}");
    assert!(matches!(frechet_distance(&static_video(1), &a, &FrameStats), Err(MetricsError::Undefined(_))));
}

#[test]
fn frechet_on_frames_with_flatten_extractor() {
    let to_video = |rows: Vec<Vec<f64>>| {
        let n = rows.len();
        VideoTensor::from_vec(
            Shape::new(n, 4, 1, 1).unwrap(),
            rows.into_iter().flatten().map(|v| v as f32).collect(),
            ValueDomain::Unconstrained,
        )
        .unwrap()
    };
    let d = frechet_distance(&to_video(design(0.0, 1.0)), &to_video(design(3.0, 1.0)), &FlattenFeatures { dim: 4 }).unwrap();
    assert!((d - 36.0).abs() < 1e-3, "{d}");
}

// ---------------------------------------------------------------- report

#[test]
fn static_report() {
    let r = report(&static_video(4), None, &MetricsConfig::default()).unwrap();
    assert_eq!(r.consistency.fd, Some(0.0));
    assert_eq!(r.consistency.of, Some(0.0));
    assert_eq!(r.consistency.bm, Some(1.0));
    assert_eq!(r.quality.frechet, None);
    assert_eq!(r.better["fd"], Direction::Lower);
    assert_eq!(r.better["of"], Direction::Lower);
    assert_eq!(r.better["bm"], Direction::Higher);
    assert_eq!(r.better["nr_psnr"], Direction::Higher);
    assert_eq!(r.better["frechet"], Direction::Lower);
}

#[test]
fn report_json_roundtrip() {
    let mut rng = Rng::new(2);
    let v = noise_video(&mut rng, [4, 3, 16, 16]);
    let reference = noise_video(&mut rng, [6, 3, 16, 16]);
    let r = report(&v, Some(&reference), &MetricsConfig::default()).unwrap();
    let json = r.to_json().unwrap();
    assert_eq!(MetricsReport::from_json(&json).unwrap(), r);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["fd", "of", "bm"] {
        assert!(value["consistency"][key].is_number());
    }
    assert!(value["quality"]["nr_psnr"].is_number() && value["quality"]["frechet"].is_number());
    assert_eq!(value["config"]["block"], 8);
}

#[test]
fn two_frame_report_omits_flow() {
    let r = report(&static_video(2), None, &MetricsConfig::default()).unwrap();
    assert_eq!(r.consistency.of, None);
    assert_eq!(r.consistency.fd, Some(0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frame_differencing_ignores_reversal(seed in any::<u64>()) {
        let v = noise_video(&mut Rng::new(seed), [4, 3, 16, 16]);
        let r = v.select_frames(&[3, 2, 1, 0]).unwrap();
        prop_assert!((frame_differencing(&v).unwrap() - frame_differencing(&r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn global_translation_within_radius_matches(seed in any::<u64>(), dx in -4isize..=4, dy in -4isize..=4) {
        let mut rng = Rng::new(seed);
        let a = noise_video(&mut rng, [1, 1, 32, 32]);
        let b = shifted(&a, dx, dy, &mut rng);
        for m in block_match_pair(&gray(&a, 0), &gray(&b, 0), 8, 4).unwrap() {
            let (oy, ox) = (m.origin.0 as isize, m.origin.1 as isize);
            if oy + dy >= 0 && ox + dx >= 0 && oy + dy + 8 <= 32 && ox + dx + 8 <= 32 {
                prop_assert!(m.score >= 0.99);
            }
        }
    }

    #[test]
    fn frechet_is_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a: Vec<Vec<f64>> = (0..10).map(|_| rng.gaussian_vec(3)).collect();
        let b: Vec<Vec<f64>> = (0..7).map(|_| rng.gaussian_vec(3).iter().map(|v| 2.0 * v + 1.0).collect()).collect();
        let (ab, ba) = (frechet_from_features(&a, &b).unwrap(), frechet_from_features(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }
}
