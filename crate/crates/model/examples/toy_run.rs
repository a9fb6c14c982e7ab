//! Trains a small denoiser on generated triplets and reports edit fidelity.
//!
//! ```text
//! cargo run --release -p editlab-model --example toy_run -- train <ckpt> [steps] [base] [lambda] [lr] [beta_start] [beta_end] [seed]
//! cargo run --release -p editlab-model --example toy_run -- eval <ckpt> [s_video s_text | cond] [count]
//! ```

use std::time::Instant;

use editlab_core::Rng;
use editlab_data::{gen_dataset, Grammar, SceneConfig};
use editlab_model::checkpoint::Checkpoint;
use editlab_model::codec::{CodecMode, TextEncoder};
use editlab_model::denoiser::{ArchConfig, DenoiserParams, TemporalInit};
use editlab_model::diffusion::{train, TrainConfig};
use editlab_model::guidance::{sample_edit, Guidance, GuidanceScales, SampleOptions};

type Res = Result<(), Box<dyn std::error::Error>>;

fn run_train(args: &[String]) -> Res {
    let path = &args[0];
    let steps = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let base = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(16);
    let lambda = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let lr = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let beta_start = args.get(5).map(|s| s.parse()).transpose()?.unwrap_or(1e-4);
    let beta_end = args.get(6).map(|s| s.parse()).transpose()?.unwrap_or(2e-2);
    let seed = args.get(7).map(|s| s.parse()).transpose()?.unwrap_or(0);

    let data = gen_dataset(512, &SceneConfig::default(), 1)?;
    let grammar = Grammar::default();
    let arch = ArchConfig { base_channels: base, temporal_init: TemporalInit::Identity, ..ArchConfig::default() };
    let text = TextEncoder::random(grammar.vocabulary().len(), arch.text_dim, seed)?;
    let mut params = DenoiserParams::<f32>::init(&arch, &mut Rng::derive(seed, 1))?;
    println!("parameters: {}", params.len());

    let cfg = TrainConfig { steps, lambda, lr, beta_start, beta_end, seed, ..TrainConfig::default() };
    let start = Instant::now();
    let mut losses = Vec::new();
    train(&mut params, &data.triplets, &text, CodecMode::Identity, &cfg, |step, stats| {
        losses.push(stats.losses.loss_total);
        if step % 100 == 99 {
            let window = &losses[losses.len() - 100..];
            println!("step {:5}  loss {:.4}  {:.0}s", step + 1, window.iter().sum::<f64>() / 100.0, start.elapsed().as_secs_f64());
        }
    })?;
    let n = losses.len().min(100);
    let first: f64 = losses[..n].iter().sum::<f64>() / n as f64;
    let last: f64 = losses[losses.len() - n..].iter().sum::<f64>() / n as f64;
    println!("train {:.1}s  first {first:.4}  last {last:.4}  ratio {:.3}", start.elapsed().as_secs_f64(), last / first);
    Checkpoint { params, text, codec: CodecMode::Identity, schedule: cfg.schedule_spec() }.save(path)?;
    Ok(())
}

fn run_eval(args: &[String]) -> Res {
    let ckpt = Checkpoint::load(&args[0])?;
    let (guidance, rest) = match (args.get(1).map(String::as_str), args.len()) {
        (Some("cond"), _) => (Guidance::Conditional, &args[2..]),
        (Some(v), 3..) => (Guidance::Scaled(GuidanceScales { video: v.parse()?, text: args[2].parse()? }), &args[3..]),
        _ => (Guidance::Scaled(GuidanceScales::default()), &args[1..]),
    };
    let count = rest.first().map(|s| s.parse()).transpose()?.unwrap_or(32);
    let held_out = gen_dataset(count, &SceneConfig::default(), 2)?;
    let schedule = ckpt.schedule.build()?;
    let options = SampleOptions { guidance, ..SampleOptions::default() };
    let start = Instant::now();
    let mut wins = 0;
    for (i, t) in held_out.triplets.iter().enumerate() {
        let emb = ckpt.text.encode(&t.instruction)?;
        let out = sample_edit(&ckpt.params, &t.input, &emb, &options, &schedule, &mut Rng::new(i as u64))?;
        let (to_gt, to_in) = (out.mse(&t.edited)?, out.mse(&t.input)?);
        let gap = t.input.mse(&t.edited)?;
        if to_gt < to_in {
            wins += 1;
        }
        println!("{i:2} {:<22} gt {to_gt:8.1} in {to_in:8.1} in-gt {gap:8.1}", format!("{:?}", t.edit));
    }
    println!("edit fidelity {wins}/{count}  sampling {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> Res {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("train") => run_train(&args[1..]),
        Some("eval") => run_eval(&args[1..]),
        _ => Err("usage: toy_run train <ckpt> [steps] [base] [lambda] [lr] [beta_start] [beta_end] [seed] | eval <ckpt> [s_v s_t | cond] [count]".into()),
    }
}
