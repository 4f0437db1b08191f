use super::{Mesh, Vec3};

/// Alternating λ/μ umbrella-operator smoothing (Taubin). Topology is untouched;
/// vertices without neighbors stay put.
pub fn taubin_smooth(mesh: &Mesh, lambda: f64, mu: f64, iterations: usize) -> Mesh {
    debug_assert!(lambda > 0.0 && mu < 0.0 && -mu > lambda);
    let mut pos = mesh.vertices().to_vec();
    for _ in 0..iterations {
        umbrella_step(&mut pos, mesh.neighbors(), lambda);
        umbrella_step(&mut pos, mesh.neighbors(), mu);
    }
    mesh.with_positions(pos).expect("same vertex count")
}

fn umbrella_step(pos: &mut [Vec3], neighbors: &[Vec<usize>], factor: f64) {
    let deltas: Vec<Vec3> = pos
        .iter()
        .zip(neighbors)
        .map(|(p, nb)| {
            if nb.is_empty() {
                Vec3::zeros()
            } else {
                nb.iter().map(|&j| pos[j]).sum::<Vec3>() / nb.len() as f64 - p
            }
        })
        .collect();
    for (p, d) in pos.iter_mut().zip(deltas) {
        *p += d * factor;
    }
}
