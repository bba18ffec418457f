//! Decoder-only training on simulated regulatory data.
//!
//! Generates sparse bipartite expression data with known regulator levels,
//! trains the masked single-layer decoder jointly with per-sample codes,
//! then scores both training-set codes and inferred test-set codes against
//! the generating representations.
//!
//! Usage: `cargo run --release --example train_decoder_sim [n_train] [epochs] [seed]`

use latentlab::analysis::{decoder_load, representation_score};
use latentlab::arch::sim_decoder;
use latentlab::data::{simulate, SimConfig};
use latentlab::latent::InferConfig;
use latentlab::loss::LossKind;
use latentlab::rng::Rng;
use latentlab::train::{evaluate, train_decoder, EvalModel, Split, TrainConfig};

fn main() -> latentlab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(7);
    let latent_lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let weight_lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let sim_cfg = SimConfig {
        n: 1000,
        m: 100,
        n_train,
        n_test: 100,
        connectivity: 0.1,
        noise_sd: 0.0,
        seed,
        ..Default::default()
    };
    let (train, test) = simulate(&sim_cfg)?;
    let mut rng = Rng::with_stream(seed, 1);
    let mut decoder = sim_decoder(&train.adjacency, &mut rng)?;
    let alpha_d = decoder_load(sim_cfg.n, sim_cfg.m, decoder.param_count(), n_train);
    println!(
        "n={} m={} N={} decoder params={} alpha_d={alpha_d:.3}",
        sim_cfg.n,
        sim_cfg.m,
        n_train,
        decoder.param_count()
    );

    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        loss: LossKind::Mse,
        weight_lr: 1e-3,
        weight_decay: 1e-5,
        latent_lr: 1e-2,
        latent_momentum: 0.9,
        eval_cadence: (epochs / 10).max(1),
        shuffle_seed: seed,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let (table, log) = train_decoder(&train.x, &mut decoder, &cfg, &mut rng)?;
    for r in &log.records {
        println!("epoch {:4}  {}  loss {:.6e}", r.epoch, r.split, r.loss);
    }
    println!("training took {:.1}s", started.elapsed().as_secs_f64());

    let train_score = representation_score(&train.z_true, table.z())?;
    println!("train mean PCC = {:.4}", train_score.mean);
    let mut below = 0;
    let mut negative = 0;
    for &r in &train_score.per_dim {
        if r < 0.99 {
            below += 1;
        }
        if r < 0.0 {
            negative += 1;
        }
    }
    println!("  dims below 0.99: {below}/100, negative: {negative}");

    decoder.set_frozen(true);
    let infer = InferConfig { lr: cfg.latent_lr, momentum: cfg.latent_momentum, ..Default::default() };
    let report = evaluate(
        &EvalModel::DecoderOnly { decoder: &decoder, infer },
        &test.x,
        LossKind::Mse,
        Some(&test.z_true),
        &mut Rng::with_stream(seed, 2),
    )?;
    let var_x = {
        let data = test.x.data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64
    };
    println!(
        "test mse = {:.6e} (var(X) = {:.4e}, ratio {:.3e})",
        report.loss,
        var_x,
        report.loss / var_x
    );
    println!("test mean PCC = {:.4}", report.rep_score.as_ref().unwrap().mean);
    println!(
        "final train loss = {:.6e}",
        log.final_loss(Split::Train).unwrap()
    );
    Ok(())
}
