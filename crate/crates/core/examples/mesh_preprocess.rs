//! Cleans a noisy, rotated copy of a torus: Taubin smoothing, face-count
//! resizing and rigid ICP back onto the reference.
//!
//! cargo run --release --example mesh_preprocess [out.obj]

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tessgs::mesh::primitives::torus;
use tessgs::mesh::{obj, resize_to_face_count, rigid_icp, rms_to_nearest, taubin_smooth, RigidTransform, Vec3};

fn main() -> anyhow::Result<()> {
    let reference = torus(0.7, 0.25, 32, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = 0.01 * reference.bbox_diagonal();
    let noisy: Vec<Vec3> = reference
        .vertices()
        .iter()
        .map(|p| p + Vec3::new(rng.random(), rng.random(), rng.random()).map(|x| (x - 0.5) * 2.0 * sigma))
        .collect();
    let pose = RigidTransform::new(*Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3).matrix(), Vec3::new(0.1, -0.05, 0.2));
    let scan = reference.with_positions(noisy)?.transformed(&pose);

    let smooth = taubin_smooth(&scan, 0.5, -0.53, 10);
    let resized = resize_to_face_count(&smooth, 400);
    let (xf, icp) = rigid_icp(resized.vertices(), reference.vertices(), 50, 1e-10)?;
    let aligned = resized.transformed(&xf);

    println!("faces {} -> {}", scan.num_faces(), resized.num_faces());
    println!("rms to reference before ICP {:.4}", rms_to_nearest(resized.vertices(), reference.vertices()));
    println!(
        "rms to reference after ICP  {:.4} ({} iterations, converged: {})",
        icp.rms, icp.iterations, icp.converged
    );
    if let Some(path) = std::env::args().nth(1) {
        obj::write(&path, &aligned)?;
        println!("wrote {path}");
    }
    Ok(())
}
