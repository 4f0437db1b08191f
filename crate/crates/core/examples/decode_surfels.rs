//! Decodes the Gaussians of a subdivided tree into oriented surfels and
//! checks the size and offset bounds on every one of them.
//!
//! cargo run --release --example decode_surfels

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tessgs::decode::{DecoderConfig, Decoders, SurfaceInput};
use tessgs::mesh::primitives::icosahedron;
use tessgs::quadtree::QuadTree;

fn main() -> anyhow::Result<()> {
    let mesh = icosahedron(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tree = QuadTree::new(&mesh, 32, 0.9, 6, 0.6);
    for f in [0, 5, 9] {
        tree.subdivide_parent(f);
    }
    for x in tree.features.iter_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let dec = Decoders::new(32, 4, DecoderConfig::default(), &mut rng);
    let eval = tree.evaluate();
    let pose = vec![0.0; 12];
    let (surfels, _) = dec.build_surfels(
        &eval,
        SurfaceInput {
            mesh: &mesh,
            positions: mesh.vertices(),
            prev_positions: mesh.vertices(),
            pose_points: &pose,
        },
    )?;
    let e = (mesh.vertices()[mesh.faces()[0][0]] - mesh.vertices()[mesh.faces()[0][1]]).norm();
    let (mut su, mut lo, mut hi) = (0.0f64, f64::INFINITY, 0.0f64);
    for s in &surfels {
        su = su.max(s.scale_u.max(s.scale_v));
        lo = lo.min(s.center.norm());
        hi = hi.max(s.center.norm());
    }
    println!("{} surfels from {} tree faces", surfels.len(), tree.num_active_faces());
    println!("largest scale {su:.4} (root edge {e:.4}), centers at radius {lo:.3} to {hi:.3}");
    let s = &surfels[0];
    println!(
        "first surfel: center {:.3?} scales ({:.4}, {:.4}) opacity {:.3} color {:.3?}",
        s.center.as_slice(),
        s.scale_u,
        s.scale_v,
        s.opacity,
        s.color.as_slice()
    );
    Ok(())
}
