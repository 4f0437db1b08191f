//! Compares plain and truncated Chamfer on a point cloud with outliers, and
//! image metrics on a blurred copy of a rendered frame.
//!
//! cargo run --release --example losses_metrics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tessgs::losses::robust_chamfer;
use tessgs::mesh::primitives::uv_sphere;
use tessgs::mesh::Vec3;
use tessgs::pipeline::config::SynthConfig;
use tessgs::pipeline::synthesize;
use tessgs::render::{psnr, ssim, Image};

fn main() -> anyhow::Result<()> {
    let sphere = uv_sphere(1.0, 16, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scan: Vec<Vec3> = sphere.vertices().iter().map(|p| p * 1.02).collect();
    let clean = robust_chamfer(sphere.vertices(), &scan, f64::INFINITY)?;
    for _ in 0..8 {
        scan.push(Vec3::new(rng.random_range(2.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    }
    let d = 0.1;
    println!("Chamfer without outliers  {clean:.5}");
    println!("Chamfer with 8 outliers    {:.5}", robust_chamfer(sphere.vertices(), &scan, f64::INFINITY)?);
    println!("truncated at d = {d}       {:.5}", robust_chamfer(sphere.vertices(), &scan, d)?);

    let cfg = SynthConfig {
        frames: 2,
        ..Default::default()
    };
    let frame = synthesize(&cfg, 0)?.frames.remove(0).rgb;
    let (w, h) = (frame.width, frame.height);
    let mut blurred = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    acc += frame.pixel((x + dx).min(w - 1), (y + dy).min(h - 1))[c];
                }
                blurred.pixel_mut(x, y)[c] = acc / 4.0;
            }
        }
    }
    println!("2x2 box blur of a {w}x{h} frame: PSNR {:.2} dB, SSIM {:.4}", psnr(&blurred, &frame)?, ssim(&blurred, &frame)?);
    Ok(())
}
