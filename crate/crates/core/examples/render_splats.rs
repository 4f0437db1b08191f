//! Splats a ring of surfels from a moving camera and writes the color, alpha
//! and flow magnitude images.
//!
//! cargo run --release --example render_splats [out_dir]

use std::path::PathBuf;

use tessgs::decode::Surfel;
use tessgs::mesh::Vec3;
use tessgs::render::io::write_png;
use tessgs::render::{rasterize, Camera, Image, RenderSettings};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "splats".into()));
    std::fs::create_dir_all(&dir)?;
    let surfels: Vec<Surfel> = (0..24)
        .map(|i| {
            let a = i as f64 / 24.0 * std::f64::consts::TAU;
            let center = Vec3::new(a.cos(), a.sin(), 0.1 * (3.0 * a).sin());
            let normal = Vec3::new(a.cos(), a.sin(), 0.6).normalize();
            let u = Vec3::z().cross(&normal).normalize();
            Surfel {
                center,
                tangent_u: u,
                tangent_v: normal.cross(&u),
                scale_u: 0.16,
                scale_v: 0.09,
                normal,
                opacity: 0.9,
                color: Vec3::new(0.5 + 0.5 * a.cos(), 0.5 + 0.5 * a.sin(), 0.4),
                flow_anchor: center * 0.97,
            }
        })
        .collect();
    let cam = Camera::look_at(Vec3::new(0.0, -3.0, 2.0), Vec3::zeros(), Vec3::z(), 110.0, 96, 96);
    let prev = Camera::look_at(Vec3::new(0.2, -3.0, 2.0), Vec3::zeros(), Vec3::z(), 110.0, 96, 96);
    let out = rasterize(&surfels, &cam, &prev, &RenderSettings::default())?;
    let speed: Vec<f64> = out.flow.data.chunks(2).map(|f| (f[0].hypot(f[1]) / 4.0).min(1.0)).collect();
    write_png(&dir.join("rgb.png"), &out.rgb)?;
    write_png(&dir.join("alpha.png"), &out.alpha)?;
    write_png(&dir.join("flow.png"), &Image::from_data(96, 96, 1, speed)?)?;
    let covered = out.alpha.data.iter().filter(|a| **a > 0.5).count();
    println!("{covered} of {} pixels covered; images in {}", 96 * 96, dir.display());
    Ok(())
}
