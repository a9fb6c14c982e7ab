//! Acceptance run: one PASS/FAIL line per criterion. Criterion 11 is
//! report-only.
//!
//! Failed criteria are listed at the end. The exit status is nonzero for a
//! failure only when `EDITLAB_ACCEPTANCE_STRICT=1` is set, so a plain
//! `cargo test --workspace` still runs every other test target.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use editlab_core::{Rng, Shape, ValueDomain, VideoTensor};
use editlab_data::{gen_dataset, Dataset, SceneConfig};
use editlab_metrics::{frame_differencing, frechet_distance, frechet_from_features, noise_sigma, nr_psnr, report};
use editlab_metrics::{grayscale_frames, FrameStats, MetricsConfig};
use editlab_model::codec::{CodecMode, InstructionEmbedding, LatentVideo, TextEncoder};
use editlab_model::denoiser::{forward, forward_framewise_2d, ArchConfig, DenoiserParams, TemporalInit};
use editlab_model::diffusion::{
    loss_consistency, loss_sd, loss_total, make_schedule, param_gradients, train, DropoutPolicy, Dropped, LossConfig,
    TrainConfig, TrainItem,
};
use editlab_model::guidance::{guided_noise, sample_edit, GuidanceScales, SampleOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn video(dims: [usize; 4], data: Vec<f32>, domain: ValueDomain) -> VideoTensor {
    VideoTensor::from_vec(Shape::from_dims(dims).unwrap(), data, domain).unwrap()
}

fn latent(rng: &mut Rng, dims: [usize; 4]) -> LatentVideo {
    let t = rng.gaussian(dims).unwrap().map(|v| v.clamp(-1.0, 1.0));
    LatentVideo::new(t, CodecMode::Identity).unwrap()
}

fn c1_guidance_telescoping() -> Outcome {
    let start = Instant::now();
    let arch = ArchConfig { temporal_init: TemporalInit::Random, ..ArchConfig::default() };
    let enc = TextEncoder::random(20, arch.text_dim, 9).unwrap();
    let (mut worst_one, mut worst_zero) = (0.0f32, 0.0f32);
    for i in 0..10 {
        let mut rng = Rng::new(100 + i);
        let params = DenoiserParams::<f32>::init(&arch, &mut rng).unwrap();
        let dims = [4, 3, 16, 16];
        let (z, cv) = (latent(&mut rng, dims), latent(&mut rng, dims));
        let text = enc.encode(&[rng.below(20) as u32, rng.below(20) as u32, rng.below(20) as u32]).unwrap();
        let t = rng.int_range(1, 1000) as usize;
        let full = forward(&params, &z, t, &text, &cv).unwrap();
        let one = guided_noise(&params, &z, t, &text, &cv, GuidanceScales { video: 1.0, text: 1.0 }).unwrap();
        worst_one = worst_one.max(one.max_abs_diff(&full).unwrap());
        let null_v = LatentVideo::zeros(cv.shape(), CodecMode::Identity);
        let uncond = forward(&params, &z, t, &InstructionEmbedding::null(arch.text_dim), &null_v).unwrap();
        let zero = guided_noise(&params, &z, t, &text, &cv, GuidanceScales { video: 0.0, text: 0.0 }).unwrap();
        worst_zero = worst_zero.max(zero.max_abs_diff(&uncond).unwrap());
    }
    let el = start.elapsed();
    outcome(
        worst_one < 1e-6 && worst_zero < 1e-6 && within(el, Duration::from_secs(1)),
        format!("s=1 L∞ {worst_one:e}, s=0 L∞ {worst_zero:e}, {:.2}s (limits 1e-6, 1s)", el.as_secs_f64()),
    )
}

fn c2_inflation_equivalence() -> Outcome {
    let start = Instant::now();
    let arch = ArchConfig { temporal_init: TemporalInit::Identity, ..ArchConfig::default() };
    let enc = TextEncoder::random(20, arch.text_dim, 3).unwrap();
    let mut worst = 0.0f32;
    for i in 0..10 {
        let mut rng = Rng::new(200 + i);
        let params = DenoiserParams::<f32>::init(&arch, &mut rng).unwrap();
        let dims = [8, 3, 32, 32];
        let (z, cv) = (latent(&mut rng, dims), latent(&mut rng, dims));
        let text = enc.encode(&[1, 5, 9, 2]).unwrap();
        let t = rng.int_range(1, 1000) as usize;
        let pseudo = forward(&params, &z, t, &text, &cv).unwrap();
        let oracle = forward_framewise_2d(&params, &z, t, &text, &cv).unwrap();
        worst = worst.max(pseudo.max_abs_diff(&oracle).unwrap());
    }
    let el = start.elapsed();
    outcome(
        worst < 1e-5 && within(el, Duration::from_secs(10)),
        format!("L∞ {worst:e}, {:.2}s (limits 1e-5, 10s)", el.as_secs_f64()),
    )
}

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let arch = ArchConfig {
        latent_channels: 3,
        base_channels: 4,
        levels: 2,
        attention_levels: vec![1],
        text_dim: 4,
        time_dim: 4,
        temporal_init: TemporalInit::Random,
    };
    let mut rng = Rng::new(1);
    let params = DenoiserParams::<f64>::init(&arch, &mut rng).unwrap();
    let schedule = make_schedule(1000, 1e-4, 2e-2).unwrap();
    let loss = LossConfig { lambda: 1e-3 };
    let enc = TextEncoder::random(12, 4, 5).unwrap();
    let dims = [3, 3, 4, 4];
    let items: Vec<TrainItem> = (0..2)
        .map(|i| TrainItem {
            z0: latent(&mut rng, dims),
            t: 400 + 37 * i,
            eps: rng.gaussian(dims).unwrap(),
            text: enc.encode(&[1, 4, 7]).unwrap(),
            video_cond: latent(&mut rng, dims),
        })
        .collect();
    let (_, grad) = param_gradients(&params, &items, &schedule, &loss).unwrap();
    let flat = params.flatten();
    let at = |v: &[f64]| {
        let p = DenoiserParams::<f64>::unflatten(&arch, v).unwrap();
        param_gradients(&p, &items, &schedule, &loss).unwrap().0.loss_total
    };
    let h = 1e-3;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let (mut up, mut down) = (flat.clone(), flat.clone());
        up[i] += h;
        down[i] -= h;
        let numeric = (at(&up) - at(&down)) / (2.0 * h);
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8));
    }
    let el = start.elapsed();
    outcome(
        flat.len() < 10_000 && worst < 1e-4 && within(el, Duration::from_secs(120)),
        format!("{} params, max rel err {worst:e}, {:.1}s (limits 1e-4, 2min)", flat.len(), el.as_secs_f64()),
    )
}

fn c4_loss_identities() -> Outcome {
    let mut rng = Rng::new(4);
    let n_in = rng.gaussian([6, 3, 8, 8]).unwrap();
    let residual = rng.gaussian([1, 3, 8, 8]).unwrap();
    let r = residual.data();
    let n_p_data = n_in.data().iter().enumerate().map(|(i, v)| v - r[i % r.len()]).collect();
    let n_p = video([6, 3, 8, 8], n_p_data, ValueDomain::Unconstrained);
    let fd = loss_consistency(&n_in, &n_p).unwrap();

    let n_gt = rng.gaussian([6, 3, 8, 8]).unwrap();
    let other = rng.gaussian([6, 3, 8, 8]).unwrap();
    let total = loss_total(&other, &n_gt, &n_in, &LossConfig { lambda: 0.0 }).unwrap();
    let sd = loss_sd(&other, &n_gt).unwrap();
    outcome(
        fd < 1e-12 && total.to_bits() == sd.to_bits(),
        format!("frame-constant residual L_fd {fd:e} (limit 1e-12); λ=0 total == sd: {}", total.to_bits() == sd.to_bits()),
    )
}

fn c5_dropout_frequencies() -> Outcome {
    let policy = DropoutPolicy::default();
    let mut rng = Rng::new(5);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        match policy.draw(&mut rng) {
            Dropped::Video => counts[0] += 1,
            Dropped::Text => counts[1] += 1,
            Dropped::Both => counts[2] += 1,
            Dropped::Nothing => {}
        }
    }
    let freq = counts.map(|c| c as f64 / n as f64);
    outcome(
        freq.iter().all(|f| (f - 0.05).abs() <= 0.005),
        format!("video {:.4}, text {:.4}, both {:.4} (target 0.05 ± 0.005)", freq[0], freq[1], freq[2]),
    )
}

fn c6_metric_trivials() -> Outcome {
    let mut rng = Rng::new(6);
    let frame: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.below(256) as f32).collect();
    let data = frame.iter().copied().cycle().take(8 * frame.len()).collect();
    let still = video([8, 3, 32, 32], data, ValueDomain::PixelU8);
    let rep = report(&still, None, &MetricsConfig::default()).unwrap();
    let c = rep.consistency;
    let set = video([12, 3, 16, 16], (0..12 * 768).map(|_| rng.below(256) as f32).collect(), ValueDomain::PixelU8);
    let fr = frechet_distance(&set, &set, &FrameStats).unwrap();
    outcome(
        c.fd == Some(0.0) && c.of == Some(0.0) && c.bm == Some(1.0) && fr < 1e-6,
        format!("static FD {:?}, OF {:?}, BM {:?}; identical-set Fréchet {fr:e} (limit 1e-6)", c.fd, c.of, c.bm),
    )
}

/// Eight samples in `d = 4` whose mean is `mean` and unbiased variance is
/// `std²` on every axis with zero cross-covariance (Hadamard rows).
fn diagonal_set(mean: f64, std: f64) -> Vec<Vec<f64>> {
    let sign = |i: usize, j: usize| if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    let c = std * (7.0f64 / 8.0).sqrt();
    (0..8).map(|i| (1..5).map(|j| mean + c * sign(i, j)).collect()).collect()
}

fn c7_frechet_oracle() -> Outcome {
    let cases = [(0.0, 1.0, 3.0, 1.0), (0.0, 1.0, 0.0, 2.0), (-1.0, 0.5, 2.0, 3.0), (0.5, 0.1, 0.4, 0.2)];
    let mut worst = 0.0f64;
    for (m1, s1, m2, s2) in cases {
        let got = frechet_from_features(&diagonal_set(m1, s1), &diagonal_set(m2, s2)).unwrap();
        let want: f64 = 4.0 * ((m1 - m2).powi(2) + (s1 - s2).powi(2));
        worst = worst.max((got - want).abs());
    }
    outcome(worst < 1e-3, format!("max |Fréchet − closed form| {worst:e} over {} cases (limit 1e-3)", cases.len()))
}

fn c8_nr_psnr_calibration() -> Outcome {
    let mut pass = true;
    let mut last = f64::INFINITY;
    let mut parts = Vec::new();
    for sigma in [2.0, 5.0, 10.0] {
        let (mut est, mut db) = (0.0, 0.0);
        for seed in 0..10 {
            let mut rng = Rng::new(800 + seed);
            let data = rng.gaussian_vec(64 * 64).into_iter().map(|n| (128.0 + sigma * n).clamp(0.0, 255.0) as f32).collect();
            let v = video([1, 1, 64, 64], data, ValueDomain::PixelU8);
            est += noise_sigma(&grayscale_frames(&v).unwrap()[0]).unwrap() / 10.0;
            db += nr_psnr(&v).unwrap() / 10.0;
        }
        pass &= (est - sigma).abs() <= 0.1 * sigma && db < last;
        last = db;
        parts.push(format!("σ {sigma}: σ̂ {est:.3}, {db:.2} dB"));
    }
    outcome(pass, format!("{} (σ̂ within 10%, dB strictly decreasing)", parts.join("; ")))
}

/// Settings shared by the training criteria.
fn toy_train_config(lambda: f64) -> (ArchConfig, TrainConfig) {
    let arch = ArchConfig { temporal_init: TemporalInit::Identity, ..ArchConfig::default() };
    let cfg = TrainConfig { steps: 2000, batch_size: 4, lambda, seed: 0, ..TrainConfig::default() };
    (arch, cfg)
}

struct Trained {
    params: DenoiserParams<f32>,
    text: TextEncoder,
    cfg: TrainConfig,
    losses: Vec<f64>,
    elapsed: Duration,
}

fn train_toy(data: &Dataset, lambda: f64) -> Trained {
    let (arch, cfg) = toy_train_config(lambda);
    let text = TextEncoder::random(editlab_data::Grammar::default().vocabulary().len(), arch.text_dim, cfg.seed).unwrap();
    let mut params = DenoiserParams::<f32>::init(&arch, &mut Rng::derive(cfg.seed, 1)).unwrap();
    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    train(&mut params, &data.triplets, &text, CodecMode::Identity, &cfg, |_, s| losses.push(s.losses.loss_total))
        .unwrap();
    Trained { params, text, cfg, losses, elapsed: start.elapsed() }
}

fn c9_toy_training(run: &Trained) -> Outcome {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&run.losses[..100]), mean(&run.losses[run.losses.len() - 100..]));
    outcome(
        last <= 0.5 * first && within(run.elapsed, Duration::from_secs(15 * 60)),
        format!(
            "mean loss first 100 {first:.4}, last 100 {last:.4} (ratio {:.3}, limit 0.5), {:.0}s (limit 900s)",
            last / first,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn edit(run: &Trained, input: &VideoTensor, tokens: &[u32], seed: u64) -> VideoTensor {
    let schedule = run.cfg.schedule().unwrap();
    let emb = run.text.encode(tokens).unwrap();
    sample_edit(&run.params, input, &emb, &SampleOptions::default(), &schedule, &mut Rng::new(seed)).unwrap()
}

fn c10_edit_fidelity(run: &Trained, held_out: &Dataset) -> Outcome {
    let mut wins = 0;
    for (i, t) in held_out.triplets.iter().enumerate() {
        let out = edit(run, &t.input, &t.instruction, i as u64);
        if out.mse(&t.edited).unwrap() < out.mse(&t.input).unwrap() {
            wins += 1;
        }
    }
    let n = held_out.triplets.len();
    outcome(
        wins as f64 >= 0.7 * n as f64,
        format!("{wins}/{n} closer to the ground-truth edit than to the input (needs ≥ 70%)"),
    )
}

fn c11_lambda_ablation(with: &Trained, without: &Trained, held_out: &Dataset) -> String {
    let mean_fd = |run: &Trained| {
        let fds: Vec<f64> = held_out.triplets[..16]
            .iter()
            .enumerate()
            .map(|(i, t)| frame_differencing(&edit(run, &t.input, &t.instruction, 1000 + i as u64)).unwrap())
            .collect();
        fds.iter().sum::<f64>() / fds.len() as f64
    };
    let (a, b) = (mean_fd(with), mean_fd(without));
    let direction = if a < b { "lower with the consistency loss" } else { "not lower with the consistency loss" };
    format!("mean FD over 16 edits: λ=1e-3 {a:.3}, λ=0 {b:.3} ({direction})")
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut line = |n: usize, o: Outcome| {
        println!("criterion {n:2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    line(1, c1_guidance_telescoping());
    line(2, c2_inflation_equivalence());
    line(3, c3_gradient_check());
    line(4, c4_loss_identities());
    line(5, c5_dropout_frequencies());
    line(6, c6_metric_trivials());
    line(7, c7_frechet_oracle());
    line(8, c8_nr_psnr_calibration());

    let data = gen_dataset(512, &SceneConfig::default(), 1).unwrap();
    let held_out = gen_dataset(32, &SceneConfig::default(), 2).unwrap();
    let with = train_toy(&data, 1e-3);
    line(9, c9_toy_training(&with));
    line(10, c10_edit_fidelity(&with, &held_out));
    let without = train_toy(&data, 0.0);
    println!("criterion 11: REPORT {}", c11_lambda_ablation(&with, &without, &held_out));

    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        let strict = std::env::var("EDITLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
        if strict { ExitCode::FAILURE } else { ExitCode::SUCCESS }
    }
}
