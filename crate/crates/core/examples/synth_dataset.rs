//! Generates a synthetic sequence with ground-truth maps and degraded prior
//! meshes, and writes it to disk.
//!
//! cargo run --release --example synth_dataset [scenario] [out_dir]

use std::path::PathBuf;

use tessgs::pipeline::config::SynthConfig;
use tessgs::pipeline::{synthesize, Scenario};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = args.next().unwrap_or_else(|| "twisting-torus".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("data-{scenario}")));
    Scenario::parse(&scenario)?;
    let cfg = SynthConfig {
        scenario,
        frames: 24,
        ..Default::default()
    };
    let ds = synthesize(&cfg, 0)?;
    ds.save(&out)?;
    let (w, h) = ds.resolution();
    let coverage: f64 = ds.frames.iter().filter_map(|f| f.mask.as_ref()).map(|m| m.data.iter().sum::<f64>()).sum::<f64>()
        / (ds.num_frames() * w * h) as f64;
    let gt = ds.gt_meshes[0].num_faces();
    let prior: usize = ds.prior_meshes.iter().map(|m| m.num_faces()).sum::<usize>() / ds.num_frames();
    println!("{}: {} frames at {w}x{h}, {} held-out views", ds.scenario, ds.num_frames(), ds.test_views.len());
    println!("mean foreground coverage {:.1}%", 100.0 * coverage);
    println!("clean mesh {gt} faces, priors {prior} faces on average");
    println!("written to {}", out.display());
    Ok(())
}
