//! Fits a control-point deformation field to a bending bar and reports the
//! robust Chamfer before and after.
//!
//! cargo run --release --example deformation_fit [steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tessgs::deform::{stage1_fit, DeformationField, FieldConfig, Stage1Config};
use tessgs::pipeline::Scenario;

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1200);
    let bar = Scenario::BendingBar;
    let canonical = bar.canonical_mesh();
    let frames = 10;
    let targets: Vec<_> = (0..frames)
        .map(|i| {
            let t = i as f64 / (frames - 1) as f64;
            (t, bar.mesh_at(&canonical, t, 1.0).vertices().to_vec())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut field = DeformationField::new(&canonical, &[2, 4, 8, 16], FieldConfig::default(), &mut rng)?;
    let cfg = Stage1Config {
        steps,
        truncation: 0.05 * canonical.bbox_diagonal(),
        ..Default::default()
    };
    let report = stage1_fit(&mut field, &canonical, &targets, &cfg)?;
    println!("{} vertices, {} control points, {steps} steps", canonical.num_vertices(), field.num_control_points());
    println!("robust Chamfer {:.3e} -> {:.3e}", report.initial_rcd, report.final_rcd);
    let mid = field.deform(canonical.vertices(), 0.25)?;
    let truth = bar.mesh_at(&canonical, 0.25, 1.0);
    let err = mid.iter().zip(truth.vertices()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("max vertex error at t = 0.25: {err:.4}");
    Ok(())
}
