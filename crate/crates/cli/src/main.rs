use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surfaceformer::checkpoint::{load_checkpoint, save_checkpoint};
use surfaceformer::descriptor::{normalize_patch, write_lsd_dump, DescriptorParams, FaceGrids, TARGET_NORMAL};
use surfaceformer::mesh::{load_mesh, save_mesh};
use surfaceformer::metrics::{metric_ea, metric_ev};
use surfaceformer::model::{ModelConfig, SizePreset, SurfaceFormer};
use surfaceformer::patching::{generate_patches, grow_patch};
use surfaceformer::pipeline::{denoise_mesh, DenoiseOptions};
use surfaceformer::training::{add_gaussian_noise, build_samples, read_manifest, train, TrainConfig};
use surfaceformer::{Error, Result};

#[derive(Parser)]
#[command(name = "surfaceformer", version, about = "Transformer-based triangle mesh denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise a mesh with a trained checkpoint.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Vertex refinement sweeps.
        #[arg(long, default_value_t = 60)]
        nv: usize,
        /// Faces per patch; defaults to the checkpoint's training patch size.
        #[arg(long)]
        tf: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print E_a and E_v of a denoised mesh against ground truth.
    Eval {
        #[arg(long)]
        denoised: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Dump the normalized descriptor of the patch grown around one face.
    Lsd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        face: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        tf: usize,
        #[arg(long, default_value_t = 8)]
        ps: usize,
        #[arg(long, default_value_t = 10)]
        ts: usize,
    },
    /// List the inference patches of a mesh.
    Patches {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 240)]
        tf: usize,
    },
    /// Train a model on noisy/clean pairs listed in a manifest.
    Train(TrainArgs),
    /// Add Gaussian vertex noise scaled by the mean edge length.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// small, middle, large, or desk for the reduced CPU configuration.
    #[arg(long, default_value = "small")]
    preset: String,
    #[arg(long, default_value_t = 100_000)]
    iters: usize,
    #[arg(long, default_value_t = 80)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 0.01)]
    jitter: f64,
    /// Disable random rotation augmentation.
    #[arg(long)]
    no_rotate: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    tf: Option<usize>,
    #[arg(long)]
    ps: Option<usize>,
    #[arg(long)]
    ts: Option<usize>,
}

fn model_config(args: &TrainArgs) -> Result<ModelConfig> {
    let mut cfg = if args.preset.eq_ignore_ascii_case("desk") {
        ModelConfig::desk()
    } else {
        ModelConfig::preset(args.preset.parse::<SizePreset>()?)
    };
    if args.d_model.is_some() || args.layers.is_some() || args.heads.is_some() {
        let mut custom = ModelConfig::custom(
            args.d_model.unwrap_or(cfg.d_model),
            args.layers.unwrap_or(cfg.layers),
            args.heads.unwrap_or(cfg.heads),
        );
        custom.t_s = cfg.t_s;
        custom.p_s = cfg.p_s;
        custom.t_f = cfg.t_f;
        custom.conv_channels = cfg.conv_channels;
        custom.res_blocks = cfg.res_blocks;
        custom.knn_k = cfg.knn_k;
        cfg = custom;
    }
    cfg.t_f = args.tf.unwrap_or(cfg.t_f);
    cfg.p_s = args.ps.unwrap_or(cfg.p_s);
    cfg.t_s = args.ts.unwrap_or(cfg.t_s);
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = model_config(args)?;
    let mut samples = Vec::new();
    for (noisy, clean) in read_manifest(&args.manifest)? {
        let noisy = load_mesh(&noisy)?;
        let clean = load_mesh(&clean)?;
        samples.extend(build_samples(&noisy, &clean, &cfg)?);
    }
    log::info!("{} training samples", samples.len());
    let tc = TrainConfig {
        lr: args.lr,
        batch_size: args.batch,
        iterations: args.iters,
        alpha: args.alpha,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        jitter_std: args.jitter,
        rotate: !args.no_rotate,
        ..TrainConfig::default()
    };
    let mut model = SurfaceFormer::new(cfg, args.seed)?;
    let out = args.out.clone();
    let report = train(&samples, &tc, &mut model, &mut |it, m, adam| save_checkpoint(&out, m, adam, it))?;
    if let (Some(first), Some(last)) = (report.loss_history.first(), report.loss_history.last()) {
        println!("loss {} -> {}", sig6(*first), sig6(*last));
    }
    Ok(())
}

/// Fixed-point rendering with six significant digits.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Denoise {
            input,
            ckpt,
            nv,
            tf,
            output,
        } => {
            let mesh = load_mesh(&input)?;
            let model = load_checkpoint(&ckpt)?.model;
            let result = denoise_mesh(&mesh, &model, &DenoiseOptions { t_f: tf, n_v: nv })?;
            save_mesh(&result.mesh, &output)?;
        }
        Command::Eval { denoised, gt } => {
            let denoised = load_mesh(&denoised)?;
            let gt = load_mesh(&gt)?;
            let ea = metric_ea(&denoised, &gt)?;
            let ev = metric_ev(&denoised, &gt)?;
            println!("E_a={} E_v={}", sig6(ea), sig6(ev));
        }
        Command::Lsd {
            input,
            face,
            out,
            tf,
            ps,
            ts,
        } => {
            let mesh = load_mesh(&input)?;
            if face >= mesh.face_count() {
                return Err(Error::InvalidArgument(format!(
                    "face {face} out of range for {} faces",
                    mesh.face_count()
                )));
            }
            let d_a = mesh.average_adjacent_center_distance()?;
            let mut grids = FaceGrids::new(&mesh, DescriptorParams { d_a, p_s: ps, t_s: ts });
            let patch = grow_patch(&mesh, face, tf)?;
            let raw = grids.patch_lsd(&mesh, &patch)?;
            let (lsd, ctx) = normalize_patch(&raw, &patch, &mesh, TARGET_NORMAL)?;
            let file = File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_lsd_dump(BufWriter::new(file), &lsd, &ctx).map_err(|e| Error::io(&out, e))?;
        }
        Command::Patches { input, tf } => {
            let mesh = load_mesh(&input)?;
            for (id, p) in generate_patches(&mesh, tf)?.iter().enumerate() {
                println!("patch {id} center={} size={}", p.center_face, p.len());
            }
        }
        Command::Train(args) => run_train(&args)?,
        Command::Noise {
            input,
            level,
            seed,
            output,
        } => {
            let mesh = load_mesh(&input)?;
            save_mesh(&add_gaussian_noise(&mesh, level, seed)?, &output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
