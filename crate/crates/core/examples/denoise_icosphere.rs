//! Trains the desk-size model on a noisy icosphere and denoises it.
//!
//! `cargo run --release --example denoise_icosphere -- [iterations] [noise]`

use std::time::Instant;

use surfaceformer::mesh::primitives::icosphere;
use surfaceformer::metrics::{metric_ea, metric_ev};
use surfaceformer::model::{ModelConfig, SurfaceFormer};
use surfaceformer::pipeline::{denoise_mesh, DenoiseOptions};
use surfaceformer::training::{add_gaussian_noise, build_samples, train, TrainConfig};

fn main() -> surfaceformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(Ok(500), |a| a.parse()).expect("iterations");
    let noise = args.next().map_or(Ok(0.2), |a| a.parse()).expect("noise level");

    let clean = icosphere(3);
    let noisy = add_gaussian_noise(&clean, noise, 1)?;
    let cfg = ModelConfig::desk();
    let samples = build_samples(&noisy, &clean, &cfg)?;
    let mut model = SurfaceFormer::new(cfg, 1)?;
    let tc = TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        iterations,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let report = train(&samples, &tc, &mut model, &mut |_, _, _| Ok(()))?;
    println!(
        "trained {iterations} iterations in {:.0} s, loss {:.3} -> {:.3}",
        t.elapsed().as_secs_f64(),
        report.loss_history[0],
        report.loss_history[report.loss_history.len() - 1]
    );

    let out = denoise_mesh(&noisy, &model, &DenoiseOptions::default())?;
    println!("noisy:    E_a {:.3} deg, E_v {:.4}", metric_ea(&noisy, &clean)?, metric_ev(&noisy, &clean)?);
    println!("denoised: E_a {:.3} deg, E_v {:.4}", metric_ea(&out.mesh, &clean)?, metric_ev(&out.mesh, &clean)?);
    Ok(())
}

