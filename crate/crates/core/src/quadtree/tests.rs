use super::*;
use crate::mesh::primitives::icosahedron;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tree(mesh: &Mesh, dim: usize) -> QuadTree {
    QuadTree::new(mesh, dim, 0.9, 6, 0.99)
}

fn two_faces() -> Mesh {
    Mesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.1),
            Vec3::new(0.1, 1.0, 0.0),
            Vec3::new(1.1, 0.9, 0.3),
        ],
        vec![[0, 1, 2], [1, 3, 2]],
    )
    .unwrap()
}

fn randomize(t: &mut QuadTree, rng: &mut ChaCha8Rng) {
    for buf in [&mut t.features, &mut t.ratio_logits, &mut t.r_logits, &mut t.c_logits] {
        for x in buf.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    for x in t.opacity_logits.iter_mut() {
        *x = rng.random_range(-2.0..2.0);
    }
}

#[test]
fn init_counts_and_sharing() {
    let m = icosahedron(1.0);
    let mut t = tree(&m, 8);
    assert_eq!(t.gaussian_ids().len(), 100);
    assert_eq!(t.num_active_gaussians(), 100);
    let users: Vec<usize> = (0..20).filter(|&f| t.faces[f].corner_slots.contains(&0)).collect();
    assert_eq!(users.len(), 5);
    t.slot_mut(0).fill(1.0);
    let ev = t.evaluate();
    for (g, gin) in ev.gaussians.iter().enumerate() {
        if gin.id.node == 0 && users.contains(&gin.id.face) {
            // uniform c: one third of the shared slot
            assert!((ev.features[g * 8] - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert!(t.audit().is_ok());
}

#[test]
fn initial_parent_at_centroid() {
    let t = tree(&icosahedron(1.0), 4);
    let ev = t.evaluate();
    for g in ev.gaussians.iter().filter(|g| g.id.node == 0) {
        assert!((g.bary - Vec3::repeat(1.0 / 3.0)).norm() < 1e-15);
    }
}

#[test]
fn interpolation_examples() {
    let f1 = [1.0, 2.0];
    let f2 = [3.0, -1.0];
    let f3 = [0.5, 0.5];
    let mean = interpolate_features(&[0.0, 0.0, 0.0], [&f1, &f2, &f3]);
    assert!((mean[0] - 1.5).abs() < 1e-15 && (mean[1] - 0.5).abs() < 1e-15);
    let sat = interpolate_features(&[50.0, 0.0, 0.0], [&f1, &f2, &f3]);
    assert!((sat[0] - 1.0).abs() < 1e-9 && (sat[1] - 2.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
    let fs: Vec<Vec<f64>> = (0..3).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
    let got = interpolate_features(&c, [&fs[0], &fs[1], &fs[2]]);
    let z: f64 = c.iter().map(|x| x.exp()).sum();
    for k in 0..16 {
        let mut want = 0.0;
        for i in 0..3 {
            want += c[i].exp() / z * fs[i][k];
        }
        assert!((got[k] - want).abs() < 1e-12);
    }
}

#[test]
fn child_features_examples() {
    let m = two_faces();
    let mut t = tree(&m, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for x in t.features.iter_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let f = t.faces[0].clone();
    let p: Vec<Vec<f64>> = f.corner_slots.iter().map(|&s| t.slot(s).to_vec()).collect();
    for s in f.edge_slots {
        t.slot_mut(s).fill(0.0);
    }
    // child at corner 2 has corners [E_1, E_0, c_2]
    let [a, b, c] = t.child_vertex_features(0, 2);
    for k in 0..3 {
        assert!((a[k] - (p[0][k] + p[2][k]) / 2.0).abs() < 1e-15);
        assert!((b[k] - (p[1][k] + p[2][k]) / 2.0).abs() < 1e-15);
        assert_eq!(c[k], p[2][k]);
    }
    t.ratio_logits[1] = 50.0;
    let [a, _, _] = t.child_vertex_features(0, 2);
    for k in 0..3 {
        assert!((a[k] - p[2][k]).abs() < 1e-12);
    }
    // random ratios and edge features against a scalar recomputation
    randomize(&mut t, &mut rng);
    let f = t.faces[1].clone();
    let s: Vec<f64> = (0..3).map(|j| 1.0 / (1.0 + (-t.ratio_logits[3 + j]).exp())).collect();
    let corner = |i: usize, k: usize| t.slot(f.corner_slots[i])[k];
    let edge = |j: usize, k: usize| t.slot(f.edge_slots[j])[k];
    let ep = |j: usize, k: usize| corner((j + 2) % 3, k) * (1.0 - s[j]) + corner((j + 1) % 3, k) * s[j] + edge(j, k);
    for which in 0..4 {
        let got = t.child_vertex_features(1, which);
        for k in 0..3 {
            let want = match which {
                0 => [ep(2, k), ep(1, k), corner(0, k)],
                1 => [ep(0, k), ep(2, k), corner(1, k)],
                2 => [ep(1, k), ep(0, k), corner(2, k)],
                _ => [ep(2, k), ep(0, k), ep(1, k)],
            };
            for i in 0..3 {
                assert!((got[i][k] - want[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn opacity_coupling() {
    assert_eq!(child_opacity(0.0, 0.9), 1.0);
    assert_eq!(child_opacity(1.0, 0.9), 0.0);
    assert!((child_opacity(0.5, 0.9) - 0.4262).abs() < 1e-4);
    for i in 0..=1000 {
        let a = i as f64 / 1000.0;
        let c = child_opacity(a, 0.9);
        assert!((a.powf(0.9) + c.powf(0.9) - 1.0).abs() < 1e-12);
        assert!((child_opacity(a, 1.0) - (1.0 - a)).abs() < 1e-15);
        if i > 0 && i < 1000 {
            assert!(c < child_opacity((i - 1) as f64 / 1000.0, 0.9));
        }
    }
}

#[test]
fn opacity_dlogit_matches_fd() {
    for x in [-6.0, -1.0, 0.0, 0.7, 5.0] {
        let f = |x: f64| child_opacity(sigmoid(x), 0.9);
        let fd = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6;
        assert!((fd - child_opacity_dlogit(sigmoid(x), 0.9)).abs() < 1e-8);
    }
}

fn area(m: &Mesh, root: usize, b: [Vec3; 3]) -> f64 {
    let f = m.faces()[root];
    let p = b.map(|w| m.vertices()[f[0]] * w[0] + m.vertices()[f[1]] * w[1] + m.vertices()[f[2]] * w[2]);
    (p[1] - p[0]).cross(&(p[2] - p[0])).norm() / 2.0
}

#[test]
fn children_tile_parent() {
    let m = two_faces();
    let mut t = tree(&m, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        for x in t.ratio_logits.iter_mut() {
            *x = rng.random_range(-4.0..4.0);
        }
        for face in 0..2 {
            let parent = t.faces[face].corner_bary.map(|b| Vec3::new(b[0], b[1], b[2]));
            let total: f64 = (0..4).map(|c| area(&m, face, t.child_corners(face, c))).sum();
            assert!((total - area(&m, face, parent)).abs() < 1e-9);
            for c in 0..4 {
                for b in t.child_corners(face, c) {
                    assert!(b.iter().all(|x| *x >= 0.0) && (b.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn subdivision_preserves_child_features_exactly() {
    let m = two_faces();
    let mut t = tree(&m, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    randomize(&mut t, &mut rng);
    let before = t.evaluate();
    let corner_feats: Vec<[Vec<f64>; 3]> = (0..4).map(|c| t.child_vertex_features(0, c)).collect();
    let corner_bary: Vec<[Vec3; 3]> = (0..4).map(|c| t.child_corners(0, c)).collect();
    let ids = t.subdivide_parent(0).unwrap();
    assert_eq!(t.num_active_gaussians(), 5 + 20);
    assert!(t.audit().is_ok());
    let after = t.evaluate();
    for (c, &nf) in ids.iter().enumerate() {
        let face = &t.faces[nf];
        for i in 0..3 {
            assert_eq!(t.slot(face.corner_slots[i]), &corner_feats[c][i][..]);
            let b = face.corner_bary[i];
            assert_eq!(Vec3::new(b[0], b[1], b[2]), corner_bary[c][i]);
        }
        for s in face.edge_slots {
            assert!(t.slot(s).iter().all(|x| *x == 0.0));
        }
        // the new parent Gaussian reproduces the old child Gaussian
        let old = before.gaussians.iter().position(|g| g.id == GaussianId { face: 0, node: c + 1 }).unwrap();
        let new = after.gaussians.iter().position(|g| g.id == GaussianId { face: nf, node: 0 }).unwrap();
        assert!((before.gaussians[old].bary - after.gaussians[new].bary).norm() < 1e-15);
        for k in 0..5 {
            assert!((before.features[old * 5 + k] - after.features[new * 5 + k]).abs() < 1e-15);
        }
        let want = child_opacity(sigmoid(before.gaussians[0].opacity.ln() - (1.0 - before.gaussians[0].opacity).ln()), 0.9);
        assert!((after.gaussians[new].opacity - want.clamp(1e-4, 1.0 - 1e-4)).abs() < 1e-9);
    }
}

#[test]
fn max_depth_is_respected() {
    let m = two_faces();
    let mut t = QuadTree::new(&m, 2, 0.9, 1, 0.99);
    let ids = t.subdivide_parent(0).unwrap();
    assert!(t.subdivide_parent(ids[0]).is_none());
}

#[test]
fn opaque_parents_deactivate_children() {
    let m = icosahedron(1.0);
    let mut t = tree(&m, 2);
    for _ in 0..10 {
        t.record_opacity_stats(0.9);
    }
    let rep = t.population_control(&PopulationConfig::default());
    assert_eq!(rep.subdivided, 0);
    assert_eq!(rep.deactivated_children, 80);
    assert_eq!(t.num_active_gaussians(), 20);
    assert_eq!(t.evaluate().gaussians.len(), 20);
}

#[test]
fn transparent_parent_adds_fifteen() {
    let m = icosahedron(1.0);
    let mut t = tree(&m, 2);
    t.opacity_logits[3] = -40.0;
    for _ in 0..4 {
        t.record_opacity_stats(0.9);
    }
    let cfg = PopulationConfig {
        prune: false,
        ..Default::default()
    };
    let rep = t.population_control(&cfg);
    assert_eq!(rep.subdivided, 1);
    assert_eq!(t.num_active_gaussians(), 115);
    assert!(t.audit().is_ok());
}

/// Replays the two rules on a bare list of (opacity, live children) records.
fn replay(events: &[Vec<(usize, f64)>], rounds: usize, initial: f64) -> Vec<usize> {
    struct F {
        alpha: f64,
        live: usize,
        active: bool,
        above: usize,
        tracked: usize,
    }
    let mut faces: Vec<F> = (0..20)
        .map(|_| F { alpha: initial, live: 4, active: true, above: 0, tracked: 0 })
        .collect();
    let mut counts = Vec::new();
    for ev in events {
        for _ in 0..rounds {
            for f in faces.iter_mut().filter(|f| f.active) {
                f.tracked += 1;
                if f.alpha > 0.9 {
                    f.above += 1;
                }
            }
        }
        for &(fi, a) in ev {
            faces[fi].alpha = a;
        }
        for _ in 0..rounds {
            for f in faces.iter_mut().filter(|f| f.active) {
                f.tracked += 1;
                if f.alpha > 0.9 {
                    f.above += 1;
                }
            }
        }
        let n = faces.len();
        for fi in 0..n {
            if faces[fi].active && faces[fi].alpha < 0.1 {
                faces[fi].active = false;
                let a = child_opacity(faces[fi].alpha, 0.9).clamp(1e-4, 1.0 - 1e-4);
                for _ in 0..4 {
                    faces.push(F { alpha: a, live: 4, active: true, above: 0, tracked: 0 });
                }
            }
        }
        for f in faces.iter_mut().filter(|f| f.active && f.tracked > 0) {
            if f.above as f64 >= 0.9 * f.tracked as f64 {
                f.live = 0;
            }
        }
        for f in faces.iter_mut() {
            f.above = 0;
            f.tracked = 0;
        }
        counts.push(faces.iter().filter(|f| f.active).map(|f| 1 + f.live).sum());
    }
    counts
}

#[test]
fn three_events_match_rule_replay() {
    let m = icosahedron(1.0);
    let mut t = QuadTree::new(&m, 2, 0.9, 6, 0.5);
    // event 1: two faces go transparent, three go opaque halfway through
    // event 2: one more transparent, one opaque face drops back
    // event 3: a newly created face goes transparent
    let events = vec![
        vec![(0, 0.02), (5, 0.05), (7, 0.97), (8, 0.99), (9, 0.95)],
        vec![(11, 0.01), (8, 0.5), (12, 0.999)],
        vec![(20, 0.03), (13, 0.93)],
    ];
    let rounds = 10;
    let want = replay(&events, rounds, 0.5);
    let mut got = Vec::new();
    for ev in &events {
        for _ in 0..rounds {
            t.record_opacity_stats(0.9);
        }
        for &(fi, a) in ev {
            t.opacity_logits[fi] = logit(a);
        }
        for _ in 0..rounds {
            t.record_opacity_stats(0.9);
        }
        t.population_control(&PopulationConfig::default());
        assert!(t.audit().is_ok());
        got.push(t.num_active_gaussians());
    }
    assert_eq!(got, want);
}

#[test]
fn control_schedule_respects_windows() {
    let steps: Vec<usize> = (0..40000).filter(|&s| is_control_step(s, 40000, 2000, 5000, 5000)).collect();
    assert_eq!(steps.first(), Some(&6000));
    assert_eq!(steps.last(), Some(&34000));
}

#[test]
fn backward_matches_finite_differences() {
    let m = two_faces();
    let mut t = tree(&m, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    randomize(&mut t, &mut rng);
    t.subdivide_parent(1).unwrap();
    randomize(&mut t, &mut rng);
    t.faces[0].deactivated[1] = true;
    let ev = t.evaluate();
    let g = ev.gaussians.len();
    let w: Vec<GaussianGrad> = (0..g)
        .map(|_| GaussianGrad {
            corners: [0; 3].map(|_| Vec3::new(rng.random(), rng.random(), rng.random())),
            bary: Vec3::new(rng.random(), rng.random(), rng.random()),
            color_bary: Vec3::new(rng.random(), rng.random(), rng.random()),
            opacity: rng.random(),
        })
        .collect();
    let wf: Vec<f64> = (0..g * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |t: &QuadTree| -> f64 {
        let ev = t.evaluate();
        let mut l = 0.0;
        for (gi, w) in ev.gaussians.iter().zip(&w) {
            for i in 0..3 {
                l += gi.corners[i].dot(&w.corners[i]);
            }
            l += gi.bary.dot(&w.bary) + gi.color_bary.dot(&w.color_bary) + gi.opacity * w.opacity;
        }
        l + ev.features.iter().zip(&wf).map(|(a, b)| a * b).sum::<f64>()
    };
    let grad = t.backward(&ev, &w, &wf);
    let h = 1e-5;
    type Buf = fn(&mut QuadTree) -> &mut Vec<f64>;
    let bufs: [(Buf, &Vec<f64>); 5] = [
        (|t| &mut t.features, &grad.features),
        (|t| &mut t.ratio_logits, &grad.ratio_logits),
        (|t| &mut t.r_logits, &grad.r_logits),
        (|t| &mut t.c_logits, &grad.c_logits),
        (|t| &mut t.opacity_logits, &grad.opacity_logits),
    ];
    for (get, an) in bufs {
        for i in 0..an.len() {
            let mut a = t.clone();
            let mut b = t.clone();
            get(&mut a)[i] += h;
            get(&mut b)[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let rel = (fd - an[i]).abs() / fd.abs().max(an[i].abs()).max(1e-5);
            assert!(rel < 1e-4, "index {i}: {fd} vs {}", an[i]);
        }
    }
}
