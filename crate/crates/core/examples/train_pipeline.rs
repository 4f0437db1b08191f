//! Runs synthesis, both training stages and evaluation end to end, writing
//! the full run directory. Config overrides use `section.key=value`.
//!
//! cargo run --release --example train_pipeline -- [out_dir] [overrides...]
//! e.g. `-- runs/torus synth.scenario=twisting-torus stage2.steps=1500`

use std::path::PathBuf;

use tessgs::pipeline::{run_pipeline, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/quick".into()));
    let mut overrides = vec![
        "synth.frames=24".to_string(),
        "stage1.steps=800".into(),
        "stage2.steps=800".into(),
        "stage2.cadence=200".into(),
        "stage2.head=200".into(),
        "stage2.tail=200".into(),
        "stage2.snapshot_every=200".into(),
    ];
    overrides.extend(args);
    let cfg = TrainConfig::from_parts("", &overrides)?;
    let res = run_pipeline(&out.join("data"), &out.join("run"), &cfg)?;
    println!(
        "stage one: robust Chamfer {:.3e} -> {:.3e}",
        res.stage1.initial_rcd, res.stage1.final_rcd
    );
    for s in &res.snapshots {
        println!("step {:>6}: train PSNR {:.2} dB, {} Gaussians", s.step, s.train_psnr, s.gaussians);
    }
    for m in &res.metrics {
        println!("{:<5} {:<8} PSNR {:.2}  SSIM {:.4}  CD(x1e-3) {:.3}", m.split, m.camera, m.psnr, m.ssim, m.chamfer_e3);
    }
    Ok(())
}
