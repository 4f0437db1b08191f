use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tessgs::pipeline::gradcheck::TOLERANCE;
use tessgs::pipeline::io::{read_json, write_csv};
use tessgs::pipeline::*;
use tessgs::render::Camera;

/// Mesh-anchored Gaussian splatting for dynamic scenes.
///
/// Any config field can be overridden with `--section.key=value`
/// (or `--seed=N`) anywhere on the command line.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML config file; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with ground truth and degraded priors.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the deformation field to the prior meshes.
    Stage1 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Optimize appearance and motion against the images.
    Stage2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a trained model along a camera path.
    Render {
        #[arg(long)]
        run: PathBuf,
        /// JSON array of cameras.
        #[arg(long)]
        cameras: PathBuf,
        /// Comma-separated timestamps in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model on the train or test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Check a random subset of this many entries per parameter group.
        #[arg(long)]
        max_per_group: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Paired stage-two runs with and without one component.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        flag: AblationFlag,
    },
}

/// Splits config overrides (`--a.b=v`, `--seed=v`) from ordinary arguments.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut normal = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let key = a.strip_prefix("--").and_then(|s| s.split_once('=')).map(|(k, _)| k);
        match key {
            Some(k) if k.contains('.') || k == "seed" => overrides.push(a),
            _ => normal.push(a),
        }
    }
    (normal, overrides)
}

fn stage1_checkpoint(run: &Path) -> Result<Stage1Checkpoint> {
    let path = run.join(STAGE1_CHECKPOINT);
    read_json(&path).with_context(|| format!("reading {}", path.display()))
}

fn stage2_model(run: &Path) -> Result<Model> {
    let path = run.join(STAGE2_CHECKPOINT);
    read_json(&path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    let cfg = TrainConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth { out } => {
            let ds = synthesize(&cfg.synth, cfg.seed)?;
            ds.save(&out)?;
            write_resolved_config(&out, &cfg)?;
            println!(
                "wrote {} frames, {} held-out views to {}",
                ds.num_frames(),
                ds.test_views.len(),
                out.display()
            );
        }
        Command::Stage1 { data, run } => {
            write_resolved_config(&run, &cfg)?;
            let ds = FrameDataset::load(&data)?;
            let out = run_stage1(&ds, &cfg)?;
            write_stage1(&run, &out)?;
            let s = &out.summary;
            println!(
                "robust Chamfer {:.4e} -> {:.4e} ({:.1}% lower)",
                s.initial_rcd,
                s.final_rcd,
                100.0 * (1.0 - s.final_rcd / s.initial_rcd)
            );
        }
        Command::Stage2 { data, run } => {
            write_resolved_config(&run, &cfg)?;
            let ds = FrameDataset::load(&data)?;
            let s1 = stage1_checkpoint(&run)?;
            let out = run_stage2(&ds, &s1, &cfg, Some(&run.join("renders")))?;
            write_stage2(&run, &out)?;
            if let Some(s) = out.snapshots.last() {
                println!("step {}: train PSNR {:.2} dB, {} Gaussians", s.step, s.train_psnr, s.gaussians);
            }
        }
        Command::Render {
            run,
            cameras,
            times,
            out,
        } => {
            let model = stage2_model(&run)?;
            let cams: Vec<Camera> = read_json(&cameras)?;
            let dir = out.unwrap_or_else(|| run.join("renders/path"));
            let written = render_path(&model, &cams, &times, &cfg.render, &dir)?;
            println!("wrote {} images to {}", written.len(), dir.display());
        }
        Command::Eval { data, run, split } => {
            let ds = FrameDataset::load(&data)?;
            let model = stage2_model(&run)?;
            let grid = run.join(format!("renders/eval_{}.png", format!("{split:?}").to_lowercase()));
            let rows = evaluate(&model, &ds, split, &cfg.render, Some(&grid))?;
            write_csv(&run.join(METRICS), &rows)?;
            for r in &rows {
                println!(
                    "{:<6} {:<10} views {:>3}  PSNR {:6.2}  SSIM {:.4}  CD(x1e-3) {:.4}",
                    r.split, r.camera, r.views, r.psnr, r.ssim, r.chamfer_e3
                );
            }
        }
        Command::Gradcheck { max_per_group, seed } => {
            let report = run_gradcheck(&GradcheckOptions { seed, max_per_group })?;
            for g in &report.groups {
                let status = if g.max_rel_err <= TOLERANCE { "ok" } else { "FAIL" };
                println!(
                    "{status:<4} {:<6} {:<20} {:>6}/{:<6} kinked {:<4} max rel err {:.2e}  max |grad| {:.2e}",
                    g.suite, g.group, g.checked, g.total, g.kinked, g.max_rel_err, g.max_abs_grad
                );
            }
            println!("{} pixels frozen near the cutoff", report.frozen_pixels);
            if !report.passed() {
                bail!("gradient check failed");
            }
        }
        Command::Ablate { data, run, flag } => {
            write_resolved_config(&run, &cfg)?;
            let ds = FrameDataset::load(&data)?;
            let s1 = stage1_checkpoint(&run)?;
            let rows = run_ablation(&ds, &s1, &cfg, flag)?;
            write_csv(&run.join(format!("ablation_{}.csv", flag.name())), &rows)?;
            for r in &rows {
                println!(
                    "{:<8} train {:6.2} dB  test {:6.2} dB  CD(x1e-3) {:.4}  Gaussians {}",
                    r.variant, r.train_psnr, r.test_psnr, r.chamfer_e3, r.gaussians
                );
            }
        }
    }
    Ok(())
}
