use std::collections::BTreeSet;

use super::{Mesh, Vec3};

/// Brings the face count to within a few faces of `target` by splitting the
/// longest edge at its midpoint or collapsing the shortest edge to its
/// midpoint. An endpoint that attains a bounding-box extreme is kept in place
/// instead of the midpoint, so the bounding box never changes. Collapses that
/// would flip or flatten a surviving face are skipped; when no legal collapse
/// remains the best mesh reached is returned.
pub fn resize_to_face_count(mesh: &Mesh, target: usize) -> Mesh {
    let target = target.max(4);
    let mut pos = mesh.vertices().to_vec();
    let mut colors = mesh.vertex_colors().map(|c| c.to_vec());
    let mut faces = mesh.faces().to_vec();

    while faces.len() < target {
        if !split_longest(&mut pos, &mut colors, &mut faces) {
            break;
        }
    }
    while faces.len() > target {
        if !collapse_shortest(&mut pos, &mut colors, &mut faces) {
            log::warn!(
                "resize stopped at {} faces (target {target}): no legal collapse left",
                faces.len()
            );
            break;
        }
    }

    let out = Mesh::new(pos, faces).expect("resize keeps faces valid");
    let out = match colors {
        Some(c) => out.with_colors(c).expect("one color per vertex"),
        None => out,
    };
    out.compact()
}

fn edge_list(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut set = BTreeSet::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            set.insert([a.min(b), a.max(b)]);
        }
    }
    set.into_iter().collect()
}

fn push_midpoint(pos: &mut Vec<Vec3>, colors: &mut Option<Vec<Vec3>>, a: usize, b: usize) -> usize {
    pos.push((pos[a] + pos[b]) / 2.0);
    if let Some(c) = colors {
        c.push((c[a] + c[b]) / 2.0);
    }
    pos.len() - 1
}

fn split_longest(
    pos: &mut Vec<Vec3>,
    colors: &mut Option<Vec<Vec3>>,
    faces: &mut Vec<[usize; 3]>,
) -> bool {
    let Some(&[a, b]) = edge_list(faces).iter().max_by(|x, y| {
        let lx = (pos[x[0]] - pos[x[1]]).norm_squared();
        let ly = (pos[y[0]] - pos[y[1]]).norm_squared();
        // first maximum in sorted edge order wins ties
        lx.total_cmp(&ly).then(y.cmp(x))
    }) else {
        return false;
    };
    let m = push_midpoint(pos, colors, a, b);
    let mut out = Vec::with_capacity(faces.len() + 2);
    for f in faces.iter() {
        match (0..3).find(|&k| {
            let (p, q) = (f[k], f[(k + 1) % 3]);
            (p == a && q == b) || (p == b && q == a)
        }) {
            Some(k) => {
                let (p, q, r) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                out.push([p, m, r]);
                out.push([m, q, r]);
            }
            None => out.push(*f),
        }
    }
    *faces = out;
    true
}

fn normal(pos: &[Vec3], f: &[usize; 3]) -> Vec3 {
    (pos[f[1]] - pos[f[0]]).cross(&(pos[f[2]] - pos[f[0]]))
}

fn collapse_shortest(
    pos: &mut Vec<Vec3>,
    colors: &mut Option<Vec<Vec3>>,
    faces: &mut Vec<[usize; 3]>,
) -> bool {
    let mut edges = edge_list(faces);
    edges.sort_by(|x, y| {
        let lx = (pos[x[0]] - pos[x[1]]).norm_squared();
        let ly = (pos[y[0]] - pos[y[1]]).norm_squared();
        lx.total_cmp(&ly).then(x.cmp(y))
    });
    let mut neighbors = vec![BTreeSet::new(); pos.len()];
    for e in edge_list(faces) {
        neighbors[e[0]].insert(e[1]);
        neighbors[e[1]].insert(e[0]);
    }
    let (lo, hi) = super::bounding_box(pos);
    let extreme = |p: &Vec3| (0..3).any(|k| p[k] == lo[k] || p[k] == hi[k]);
    for [a, b] in edges {
        let mid = match (extreme(&pos[a]), extreme(&pos[b])) {
            (false, false) => (pos[a] + pos[b]) / 2.0,
            (true, false) => pos[a],
            (false, true) => pos[b],
            (true, true) => continue,
        };
        let shared = faces.iter().filter(|f| f.contains(&a) && f.contains(&b)).count();
        // link condition: collapsing must not pinch the surface
        if neighbors[a].intersection(&neighbors[b]).count() != shared {
            continue;
        }
        let mut moved = pos.clone();
        moved[a] = mid;
        let remap = |f: &[usize; 3]| f.map(|i| if i == b { a } else { i });
        let legal = faces
            .iter()
            .filter(|f| (f.contains(&a) || f.contains(&b)) && !(f.contains(&a) && f.contains(&b)))
            .all(|f| {
                let before = normal(pos, f);
                let after = normal(&moved, &remap(f));
                after.dot(&before) > 0.0 && after.norm() > 1e-12 * before.norm().max(1e-300)
            });
        if !legal {
            continue;
        }
        pos[a] = mid;
        if let Some(c) = colors {
            c[a] = (c[a] + c[b]) / 2.0;
        }
        faces.retain(|f| !(f.contains(&a) && f.contains(&b)));
        for f in faces.iter_mut() {
            *f = remap(f);
        }
        return true;
    }
    false
}
