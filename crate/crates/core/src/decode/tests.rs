use super::*;
use crate::mesh::primitives::icosahedron;
use crate::quadtree::QuadTree;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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

fn equilateral(scale: f64) -> Mesh {
    let h = 3f64.sqrt() / 2.0;
    Mesh::new(
        vec![Vec3::new(0.0, 0.0, 0.0) * scale, Vec3::new(1.0, 0.0, 0.0) * scale, Vec3::new(0.5, h, 0.0) * scale],
        vec![[0, 1, 2]],
    )
    .unwrap()
}

fn small_config() -> DecoderConfig {
    DecoderConfig {
        hidden: 6,
        pose_dim: 3,
        pose_hidden: 5,
        ..Default::default()
    }
}

fn randomize_params(d: &mut Decoders, rng: &mut ChaCha8Rng, amp: f64) {
    for m in [&mut d.qs, &mut d.color, &mut d.offset, &mut d.pose.mlp] {
        for p in m.params_mut() {
            *p = rng.random_range(-amp..amp);
        }
    }
}

fn randomize_tree(t: &mut QuadTree, rng: &mut ChaCha8Rng) {
    for buf in [&mut t.features, &mut t.ratio_logits, &mut t.r_logits, &mut t.c_logits, &mut t.opacity_logits] {
        for x in buf.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
}

fn build(d: &Decoders, t: &QuadTree, mesh: &Mesh, pos: &[Vec3], prev: &[Vec3], pose: &[f64]) -> Vec<Surfel> {
    let ev = t.evaluate();
    d.build_surfels(
        &ev,
        SurfaceInput {
            mesh,
            positions: pos,
            prev_positions: prev,
            pose_points: pose,
        },
    )
    .unwrap()
    .0
}

fn base_height(q: [Vec3; 3]) -> (f64, f64) {
    let e = [(q[1] - q[0]).norm(), (q[2] - q[1]).norm(), (q[0] - q[2]).norm()];
    let base = e.iter().cloned().fold(0.0, f64::max);
    let area2 = (q[1] - q[0]).cross(&(q[2] - q[0])).norm();
    (base, area2 / base)
}

fn face_points(mesh: &Mesh, pos: &[Vec3], gi: &crate::quadtree::GaussianInput) -> [Vec3; 3] {
    let f = mesh.faces()[gi.root_face];
    gi.corners.map(|c| pos[f[0]] * c.x + pos[f[1]] * c.y + pos[f[2]] * c.z)
}

#[test]
fn zero_decoders_give_mid_scales_and_no_offset() {
    let m = two_faces();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = QuadTree::new(&m, 8, 0.9, 6, 0.99);
    randomize_tree(&mut t, &mut rng);
    let mut d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    d.qs.params_mut().fill(0.0);
    d.offset.params_mut().fill(0.0);
    let ev = t.evaluate();
    let s = build(&d, &t, &m, m.vertices(), m.vertices(), &[0.0; 6]);
    for (sf, gi) in s.iter().zip(&ev.gaussians) {
        let (base, height) = base_height(face_points(&m, m.vertices(), gi));
        assert!((sf.scale_u - base / 8.0).abs() < 1e-14);
        assert!((sf.scale_v - height / 8.0).abs() < 1e-14);
        let f = m.faces()[gi.root_face];
        let x0 = m.vertices()[f[0]] * gi.bary.x + m.vertices()[f[1]] * gi.bary.y + m.vertices()[f[2]] * gi.bary.z;
        assert!((sf.center - x0).norm() < 1e-15);
    }
}

#[test]
fn scales_follow_face_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    randomize_params(&mut d, &mut rng, 0.5);
    let small = equilateral(1.0);
    let large = equilateral(2.0);
    let mut t = QuadTree::new(&small, 8, 0.9, 6, 0.99);
    randomize_tree(&mut t, &mut rng);
    let a = build(&d, &t, &small, small.vertices(), small.vertices(), &[0.0; 6]);
    let b = build(&d, &t, &large, large.vertices(), large.vertices(), &[0.0; 6]);
    for (x, y) in a.iter().zip(&b) {
        assert!((2.0 * x.scale_u - y.scale_u).abs() < 1e-12);
        assert!((2.0 * x.scale_v - y.scale_v).abs() < 1e-12);
    }
}

#[test]
fn color_adds_vertex_color_and_clamps() {
    let m = two_faces().with_colors(vec![Vec3::repeat(0.2); 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = QuadTree::new(&m, 8, 0.9, 6, 0.99);
    let mut d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    d.color.params_mut().fill(0.0);
    for s in build(&d, &t, &m, m.vertices(), m.vertices(), &[0.0; 6]) {
        assert!((s.color - Vec3::repeat(0.7)).norm() < 1e-15);
    }
    randomize_params(&mut d, &mut rng, 50.0);
    let bright = two_faces().with_colors(vec![Vec3::repeat(0.9); 4]).unwrap();
    for s in build(&d, &t, &bright, m.vertices(), m.vertices(), &[3.0; 6]) {
        assert!(s.color.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn pose_changes_color() {
    let m = two_faces();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = QuadTree::new(&m, 8, 0.9, 6, 0.99);
    randomize_tree(&mut t, &mut rng);
    let d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    let p0 = [0.1, 0.2, 0.3, -0.1, 0.0, 0.4];
    let mut p1 = p0;
    p1[2] += 1e-4;
    let a = build(&d, &t, &m, m.vertices(), m.vertices(), &p0);
    let b = build(&d, &t, &m, m.vertices(), m.vertices(), &p1);
    let change: f64 = a.iter().zip(&b).map(|(x, y)| (x.color - y.color).norm()).sum();
    assert!(change > 0.0);
}

#[test]
fn offset_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    let c = Vec3::repeat(1.0 / 3.0);
    assert_eq!(d.offset_value(c, 0.7, 0.7, 0.0), 0.0);
    assert_eq!(d.offset_value(Vec3::new(1.0, 0.0, 0.0), 0.7, 0.3, 2.0), 0.0);
    let bound = d.offset_value(c, 1.0, 1.0, 40.0);
    assert!((bound - 8.0 / 27.0 * 1f64.tanh()).abs() < 1e-12);
    assert!((bound - 0.2257).abs() < 1e-4);
    let shifted = Decoders {
        config: DecoderConfig {
            offset_u_mode: OffsetU::Shifted,
            ..Default::default()
        },
        ..d.clone()
    };
    assert_eq!(shifted.offset_value(c, 1.0, 1.0, 3.0), 0.0);
}

#[test]
fn offset_grows_with_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Decoders::new(8, 2, DecoderConfig::default(), &mut rng);
    for _ in 0..200 {
        let mut w = Vec3::new(rng.random(), rng.random(), rng.random());
        w /= w.sum();
        let z = rng.random_range(-3.0..3.0);
        let mut eg = 1.0;
        for _ in 0..6 {
            let a = d.offset_value(w, 1.0, eg, z).abs();
            let b = d.offset_value(w, 1.0, eg / 2.0, z).abs();
            assert!(b >= a);
            eg /= 2.0;
        }
    }
}

#[test]
fn fresh_tree_surfels_stay_near_mesh() {
    let m = icosahedron(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = QuadTree::new(&m, 16, 0.9, 6, 0.99);
    let mut d = Decoders::new(16, 2, DecoderConfig::default(), &mut rng);
    randomize_params(&mut d, &mut rng, 2.0);
    let s = build(&d, &t, &m, m.vertices(), m.vertices(), &[0.0; 6]);
    assert_eq!(s.len(), 100);
    let max_ep = m
        .faces()
        .iter()
        .map(|f| {
            let v = f.map(|i| m.vertices()[i]);
            ((v[1] - v[0]).norm() + (v[2] - v[1]).norm() + (v[0] - v[2]).norm()) / 3.0
        })
        .fold(0.0, f64::max);
    let (lo, hi) = m.bounding_box();
    for sf in &s {
        for k in 0..3 {
            assert!(sf.center[k] >= lo[k] - max_ep && sf.center[k] <= hi[k] + max_ep);
        }
    }
}

#[test]
fn deactivated_children_are_excluded() {
    let m = icosahedron(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = QuadTree::new(&m, 4, 0.9, 6, 0.99);
    let d = Decoders::new(4, 2, DecoderConfig::default(), &mut rng);
    t.faces[0].deactivated = [true; 4];
    t.faces[3].deactivated[2] = true;
    assert_eq!(build(&d, &t, &m, m.vertices(), m.vertices(), &[0.0; 6]).len(), 95);
}

#[test]
fn rigid_motion_moves_flow_anchor_rigidly() {
    let m = icosahedron(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = QuadTree::new(&m, 4, 0.9, 6, 0.99);
    randomize_tree(&mut t, &mut rng);
    let mut d = Decoders::new(4, 2, DecoderConfig::default(), &mut rng);
    randomize_params(&mut d, &mut rng, 1.0);
    let rot = nalgebra::Rotation3::from_euler_angles(0.2, -0.4, 0.7);
    let shift = Vec3::new(0.3, -0.2, 0.5);
    let moved: Vec<Vec3> = m.vertices().iter().map(|p| rot * p + shift).collect();
    for s in build(&d, &t, &m, &moved, m.vertices(), &[0.0; 6]) {
        assert!((s.center - (rot * s.flow_anchor + shift)).norm() < 1e-12);
    }
}

#[test]
fn tangent_frames_are_orthonormal() {
    let m = icosahedron(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut t = QuadTree::new(&m, 4, 0.9, 6, 0.99);
    randomize_tree(&mut t, &mut rng);
    let mut d = Decoders::new(4, 2, DecoderConfig::default(), &mut rng);
    randomize_params(&mut d, &mut rng, 3.0);
    for s in build(&d, &t, &m, m.vertices(), m.vertices(), &[0.0; 6]) {
        assert!((s.tangent_u.norm() - 1.0).abs() < 1e-12);
        assert!((s.tangent_v.norm() - 1.0).abs() < 1e-12);
        assert!(s.tangent_u.dot(&s.tangent_v).abs() < 1e-12);
        assert!(s.tangent_u.dot(&s.normal).abs() < 1e-12);
        assert!(s.tangent_v.dot(&s.normal).abs() < 1e-12);
    }
}

mod constraints {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn scale_and_offset_bounds_hold(seed in 0u64..1_000_000, amp in 0.1f64..20.0, shifted in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let verts: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.0).collect();
            let m = Mesh::new(verts, vec![[0, 1, 2], [1, 3, 2]]).unwrap();
            let mut t = QuadTree::new(&m, 6, 0.9, 6, 0.99);
            let ids = t.subdivide_parent(0).unwrap();
            t.subdivide_parent(ids[3]).unwrap();
            randomize_tree(&mut t, &mut rng);
            for x in t.ratio_logits.iter_mut().chain(t.r_logits.iter_mut()) {
                *x *= amp;
            }
            let cfg = DecoderConfig {
                offset_u_mode: if shifted { OffsetU::Shifted } else { OffsetU::Literal },
                ..small_config()
            };
            let mut d = Decoders::new(6, 2, cfg, &mut rng);
            randomize_params(&mut d, &mut rng, amp);
            let ev = t.evaluate();
            let s = build(&d, &t, &m, m.vertices(), m.vertices(), &[0.3; 6]);
            for (sf, gi) in s.iter().zip(&ev.gaussians) {
                let (base, height) = base_height(face_points(&m, m.vertices(), gi));
                prop_assert!(sf.scale_u <= base / 4.0 && sf.scale_v <= height / 4.0);
                let f = m.faces()[gi.root_face];
                let v = f.map(|i| m.vertices()[i]);
                let ep = ((v[1] - v[0]).norm() + (v[2] - v[1]).norm() + (v[0] - v[2]).norm()) / 3.0;
                let x0 = v[0] * gi.bary.x + v[1] * gi.bary.y + v[2] * gi.bary.z;
                prop_assert!((sf.center - x0).norm() < ep);
            }
        }
    }
}

struct State {
    tree: QuadTree,
    dec: Decoders,
    pos: Vec<Vec3>,
    prev: Vec<Vec3>,
    pose: Vec<f64>,
}

fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<SurfelGrad> {
    let mut r3 = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    (0..n)
        .map(|_| SurfelGrad {
            center: r3(),
            tangent_u: r3(),
            tangent_v: r3(),
            scale_u: r3().x,
            scale_v: r3().y,
            normal: r3(),
            opacity: r3().z,
            color: r3(),
            flow_anchor: r3(),
        })
        .collect()
}

fn functional(s: &State, mesh: &Mesh, w: &[SurfelGrad]) -> f64 {
    build(&s.dec, &s.tree, mesh, &s.pos, &s.prev, &s.pose)
        .iter()
        .zip(w)
        .map(|(a, g)| {
            a.center.dot(&g.center)
                + a.tangent_u.dot(&g.tangent_u)
                + a.tangent_v.dot(&g.tangent_v)
                + a.scale_u * g.scale_u
                + a.scale_v * g.scale_v
                + a.normal.dot(&g.normal)
                + a.opacity * g.opacity
                + a.color.dot(&g.color)
                + a.flow_anchor.dot(&g.flow_anchor)
        })
        .sum()
}

fn gradient_check(cfg: DecoderConfig, seed: u64) {
    let base = two_faces();
    let mesh = base.clone().with_colors(vec![Vec3::new(0.05, 0.1, 0.02); 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = QuadTree::new(&mesh, 4, 0.9, 6, 0.99);
    tree.subdivide_parent(1).unwrap();
    randomize_tree(&mut tree, &mut rng);
    let mut dec = Decoders::new(4, 2, cfg, &mut rng);
    randomize_params(&mut dec, &mut rng, 0.8);
    let jitter = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        mesh.vertices()
            .iter()
            .map(|p| p + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1)
            .collect()
    };
    let state = State {
        pos: jitter(&mut rng),
        prev: jitter(&mut rng),
        pose: (0..6).map(|_| rng.random_range(-0.5..0.5)).collect(),
        tree,
        dec,
    };
    let ev = state.tree.evaluate();
    let w = weights(ev.gaussians.len(), &mut rng);
    let (_, cache) = state
        .dec
        .build_surfels(
            &ev,
            SurfaceInput {
                mesh: &mesh,
                positions: &state.pos,
                prev_positions: &state.prev,
                pose_points: &state.pose,
            },
        )
        .unwrap();
    let back = state.dec.backward(&ev, &cache, &w).unwrap();
    let tg = state.tree.backward(&ev, &back.gaussians, &back.features);
    let flat = |v: &[Vec3]| v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<f64>>();

    type Poke = fn(&mut State, usize, f64);
    let groups: Vec<(&str, Vec<f64>, Poke)> = vec![
        ("features", tg.features, |s, i, h| s.tree.features[i] += h),
        ("ratios", tg.ratio_logits, |s, i, h| s.tree.ratio_logits[i] += h),
        ("r", tg.r_logits, |s, i, h| s.tree.r_logits[i] += h),
        ("c", tg.c_logits, |s, i, h| s.tree.c_logits[i] += h),
        ("opacity", tg.opacity_logits, |s, i, h| s.tree.opacity_logits[i] += h),
        ("positions", flat(&back.positions), |s, i, h| s.pos[i / 3][i % 3] += h),
        ("prev", flat(&back.prev_positions), |s, i, h| s.prev[i / 3][i % 3] += h),
        ("pose", back.pose_points, |s, i, h| s.pose[i] += h),
        ("qs", back.params.qs, |s, i, h| s.dec.qs.params_mut()[i] += h),
        ("color", back.params.color, |s, i, h| s.dec.color.params_mut()[i] += h),
        ("offset", back.params.offset, |s, i, h| s.dec.offset.params_mut()[i] += h),
        ("pose mlp", back.params.pose, |s, i, h| s.dec.pose.mlp.params_mut()[i] += h),
    ];
    let h = 1e-5;
    let eval_shifted = |poke: Poke, i: usize, dh: f64| {
        let mut s = State {
            tree: state.tree.clone(),
            dec: state.dec.clone(),
            pos: state.pos.clone(),
            prev: state.prev.clone(),
            pose: state.pose.clone(),
        };
        poke(&mut s, i, dh);
        functional(&s, &mesh, &w)
    };
    for (name, analytic, poke) in groups {
        for (i, a) in analytic.iter().enumerate() {
            let fd = (eval_shifted(poke, i, h) - eval_shifted(poke, i, -h)) / (2.0 * h);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-5);
            assert!(rel < 1e-4, "{name}[{i}]: fd {fd} vs analytic {a}");
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    gradient_check(small_config(), 11);
}

#[test]
fn backward_matches_finite_differences_in_ablation_modes() {
    gradient_check(
        DecoderConfig {
            offset_u_mode: OffsetU::Shifted,
            scale_constraint: false,
            offset_constraint: false,
            ..small_config()
        },
        12,
    );
    gradient_check(
        DecoderConfig {
            offset_u_mode: OffsetU::Shifted,
            ..small_config()
        },
        13,
    );
}
