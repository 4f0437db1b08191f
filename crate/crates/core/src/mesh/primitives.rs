//! Closed procedural meshes used by the synthetic scenes and the tests.

use super::{Mesh, Vec3};

pub fn icosahedron(radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let v = raw
        .iter()
        .map(|p| Vec3::from(*p).normalize() * radius)
        .collect();
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(v, f).expect("static icosahedron is valid")
}

/// Latitude/longitude sphere with `slices * (stacks - 1) + 2` vertices.
pub fn uv_sphere(radius: f64, slices: usize, stacks: usize) -> Mesh {
    assert!(slices >= 3 && stacks >= 2);
    let mut v = vec![Vec3::new(0.0, 0.0, radius)];
    for i in 1..stacks {
        let th = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let ph = std::f64::consts::TAU * j as f64 / slices as f64;
            v.push(Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * radius);
        }
    }
    v.push(Vec3::new(0.0, 0.0, -radius));
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut f = Vec::new();
    for j in 0..slices {
        f.push([0, ring(1, j), ring(1, j + 1)]);
        f.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            f.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            f.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    Mesh::new(v, f).expect("sphere construction is valid")
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Mesh {
    let mut v = Vec::new();
    for i in 0..major_segments {
        let a = std::f64::consts::TAU * i as f64 / major_segments as f64;
        for j in 0..minor_segments {
            let b = std::f64::consts::TAU * j as f64 / minor_segments as f64;
            let r = major + minor * b.cos();
            v.push(Vec3::new(r * a.cos(), r * a.sin(), minor * b.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % major_segments) * minor_segments + j % minor_segments;
    let mut f = Vec::new();
    for i in 0..major_segments {
        for j in 0..minor_segments {
            f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(v, f).expect("torus construction is valid")
}

/// Closed box `[-hx,hx]×[-hy,hy]×[-hz,hz]` whose faces are regular grids with
/// `nx`, `ny`, `nz` cells along the respective axes.
pub fn grid_box(half: Vec3, nx: usize, ny: usize, nz: usize) -> Mesh {
    use std::collections::HashMap;
    let n = [nx, ny, nz];
    let mut verts: Vec<Vec3> = Vec::new();
    let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
    let mut faces = Vec::new();
    let mut id = |g: [usize; 3], verts: &mut Vec<Vec3>| -> usize {
        *lookup.entry(g).or_insert_with(|| {
            let p = Vec3::new(
                -half.x + 2.0 * half.x * g[0] as f64 / nx as f64,
                -half.y + 2.0 * half.y * g[1] as f64 / ny as f64,
                -half.z + 2.0 * half.z * g[2] as f64 / nz as f64,
            );
            verts.push(p);
            verts.len() - 1
        })
    };
    for axis in 0..3 {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0usize, 1] {
            for i in 0..n[a1] {
                for j in 0..n[a2] {
                    let corner = |di: usize, dj: usize| {
                        let mut g = [0usize; 3];
                        g[axis] = side * n[axis];
                        g[a1] = i + di;
                        g[a2] = j + dj;
                        g
                    };
                    let q = [
                        id(corner(0, 0), &mut verts),
                        id(corner(1, 0), &mut verts),
                        id(corner(1, 1), &mut verts),
                        id(corner(0, 1), &mut verts),
                    ];
                    // (a1, a2, axis) is right-handed, so CCW in the a1-a2 plane faces +axis
                    if side == 1 {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    Mesh::new(verts, faces).expect("box construction is valid")
}

#[cfg(test)]
mod tests {
    use super::super::vertex_normals;
    use super::*;

    fn outward(m: &Mesh) {
        let (lo, hi) = m.bounding_box();
        let c = (lo + hi) / 2.0;
        for f in m.faces() {
            let p: Vec<Vec3> = f.iter().map(|&i| m.vertices()[i]).collect();
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let centroid = (p[0] + p[1] + p[2]) / 3.0;
            assert!(n.norm() > 0.0);
            assert!(n.dot(&(centroid - c)) > 0.0 || m.num_vertices() == 0);
        }
    }

    fn closed(m: &Mesh) {
        // every edge is shared by exactly two faces
        let mut count = std::collections::HashMap::new();
        for f in m.faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        assert!(count.values().all(|&c| c == 2));
        assert_eq!(m.num_vertices() + m.num_faces() - m.edges().len(), 2 - 2 * genus(m));
    }

    fn genus(m: &Mesh) -> usize {
        usize::from(m.num_vertices() == m.edges().len() - m.num_faces())
    }

    #[test]
    fn icosahedron_is_closed_and_outward() {
        let m = icosahedron(1.0);
        assert_eq!((m.num_vertices(), m.num_faces()), (12, 20));
        closed(&m);
        outward(&m);
    }

    #[test]
    fn sphere_is_closed_and_outward() {
        let m = uv_sphere(1.0, 8, 6);
        assert_eq!(m.num_vertices(), 42);
        closed(&m);
        outward(&m);
        for (p, n) in m.vertices().iter().zip(vertex_normals(m.vertices(), m.faces())) {
            assert!(p.dot(&n) > 0.9);
        }
    }

    #[test]
    fn box_is_closed_and_outward() {
        let m = grid_box(Vec3::new(1.0, 0.2, 0.3), 6, 2, 2);
        closed(&m);
        outward(&m);
    }

    #[test]
    fn torus_is_closed_genus_one() {
        let m = torus(1.0, 0.3, 12, 6);
        closed(&m);
        assert_eq!(m.num_vertices() + m.num_faces(), m.edges().len());
    }
}
