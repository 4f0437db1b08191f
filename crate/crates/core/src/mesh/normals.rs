use super::Vec3;

/// Below this accumulated cross-product norm a vertex star counts as zero-area.
const DEGENERATE_NORM: f64 = 1e-20;

/// Unnormalized face normals `(p1 - p0) × (p2 - p0)`; their length is twice the face area.
pub fn face_area_normals(positions: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    faces
        .iter()
        .map(|f| {
            let p0 = positions[f[0]];
            (positions[f[1]] - p0).cross(&(positions[f[2]] - p0))
        })
        .collect()
}

fn accumulated(positions: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); positions.len()];
    for (f, n) in faces.iter().zip(face_area_normals(positions, faces)) {
        for &i in f {
            acc[i] += n;
        }
    }
    acc
}

/// Area-weighted vertex normals. Vertices whose incident faces have zero total
/// area (or no faces at all) get `+z`.
pub fn vertex_normals(positions: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    accumulated(positions, faces)
        .into_iter()
        .map(|a| {
            let len = a.norm();
            if len > DEGENERATE_NORM {
                a / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}

/// Pulls a gradient on the vertex normals back to the vertex positions.
pub fn vertex_normals_backward(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    grad_normals: &[Vec3],
) -> Vec<Vec3> {
    let acc = accumulated(positions, faces);
    let grad_acc: Vec<Vec3> = acc
        .iter()
        .zip(grad_normals)
        .map(|(a, g)| {
            let len = a.norm();
            if len > DEGENERATE_NORM {
                let n = a / len;
                (g - n * n.dot(g)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    let mut grad = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let gc = grad_acc[f[0]] + grad_acc[f[1]] + grad_acc[f[2]];
        let p0 = positions[f[0]];
        let e1 = positions[f[1]] - p0;
        let e2 = positions[f[2]] - p0;
        let ge1 = e2.cross(&gc);
        let ge2 = gc.cross(&e1);
        grad[f[1]] += ge1;
        grad[f[2]] += ge2;
        grad[f[0]] -= ge1 + ge2;
    }
    grad
}
