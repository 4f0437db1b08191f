use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{surface_loss, Freeze, StepTarget};
use crate::decode::{DecoderConfig, Decoders};
use crate::deform::{stage1_loss, DeformationField, FieldConfig, Stage1Config};
use crate::error::Result;
use crate::losses::{alpha_mask, stage2_total, Stage2Weights};
use crate::mesh::primitives::uv_sphere;
use crate::mesh::{edge_length_loss_grad, laplacian_loss_grad, Mesh, Vec3};
use crate::nn::{encode, Mlp};
use crate::quadtree::QuadTree;
use crate::render::{Camera, Image, RenderSettings};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub suite: String,
    pub group: String,
    pub checked: usize,
    pub total: usize,
    /// Entries skipped because the two probes fell on different ReLU patterns.
    pub kinked: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    /// Pixels pinned because a surfel sits near the cutoff there.
    pub frozen_pixels: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= TOLERANCE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Checks at most this many entries per group (chosen at random); `None` checks all.
    pub max_per_group: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 7,
            max_per_group: None,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Objective value plus the piecewise-linear branch it was evaluated on.
type Probe = (f64, Vec<bool>);

fn check_group<S>(
    suite: &str,
    group: &str,
    analytic: &[f64],
    state: &mut S,
    entry: impl Fn(&mut S, usize) -> &mut f64,
    eval: &impl Fn(&S) -> Probe,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> GroupCheck {
    let idx: Vec<usize> = match opts.max_per_group {
        Some(m) if m < analytic.len() => {
            let mut v = sample(rng, analytic.len(), m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..analytic.len()).collect(),
    };
    let mut worst = 0.0f64;
    let mut kinked = 0;
    for &i in &idx {
        let x = *entry(state, i);
        *entry(state, i) = x + STEP;
        let (fa, pa) = eval(state);
        *entry(state, i) = x - STEP;
        let (fb, pb) = eval(state);
        *entry(state, i) = x;
        if pa != pb {
            kinked += 1;
            continue;
        }
        let fd = (fa - fb) / (2.0 * STEP);
        let e = rel_err(analytic[i], fd);
        if e > TOLERANCE {
            log::warn!("{suite}/{group}[{i}]: analytic {:.6e} numeric {fd:.6e}", analytic[i]);
        }
        worst = worst.max(e);
    }
    GroupCheck {
        suite: suite.into(),
        group: group.into(),
        checked: idx.len() - kinked,
        total: analytic.len(),
        kinked,
        max_rel_err: worst,
        max_abs_grad: analytic.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

fn randomize_mlp(m: &mut Mlp, scale: f64, rng: &mut impl Rng) {
    for p in m.params_mut() {
        *p += rng.random_range(-scale..scale);
    }
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Stage-one objective on a 50-vertex sphere with a randomized field.
pub fn stage1_suite(opts: &GradcheckOptions) -> Result<Vec<GroupCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mesh = uv_sphere(1.0, 8, 7);
    let mut field = DeformationField::new(&mesh, &[2, 4, 8, 16], FieldConfig::default(), &mut rng)?;
    for m in field.weight_mlps.iter_mut().chain(field.motion_mlps.iter_mut()) {
        randomize_mlp(m, 0.2, &mut rng);
    }
    for l in field.control.logits.iter_mut() {
        for v in l.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
    let mut target: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|p| p * 1.1 + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1)
        .collect();
    target.push(Vec3::new(4.0, 0.0, 0.0));
    let cfg = Stage1Config {
        truncation: 0.3,
        ..Default::default()
    };
    let t = 0.37;
    let v = mesh.vertices();
    let state = field.forward(v, t)?;
    let (_, g_pos) = stage1_loss(&mesh, &state.positions, &target, &cfg)?;
    let g = field.backward(v, &state, &g_pos, None)?;
    let eval = |f: &DeformationField| -> Probe {
        let st = f.forward(v, t).expect("finite field");
        let loss = stage1_loss(&mesh, &st.positions, &target, &cfg).expect("matching sizes").0.total;
        (loss, st.relu_pattern())
    };
    // motion parameters leave the skinning weights untouched
    let enc = encode(&[t], field.time_frequencies);
    let eval_motion = |f: &DeformationField| -> Probe {
        let x = ArrayView2::from_shape((1, enc.len()), &enc).expect("row vector");
        let mut pattern = Vec::new();
        let mut pos = v.to_vec();
        for (k, m) in f.motion_mlps.iter().enumerate() {
            let cache = m.forward(x).expect("encoded time");
            pattern.extend(cache.active_units());
            let o = cache.output();
            for (n, p) in pos.iter_mut().enumerate() {
                *p += Vec3::new(o[[0, 0]], o[[0, 1]], o[[0, 2]]) * state.weights[[n, k]];
            }
        }
        let loss = stage1_loss(&mesh, &pos, &target, &cfg).expect("matching sizes").0.total;
        (loss, pattern)
    };
    let locate = |sizes: &[usize], mut i: usize| -> (usize, usize) {
        for (k, s) in sizes.iter().enumerate() {
            if i < *s {
                return (k, i);
            }
            i -= s;
        }
        unreachable!("index within concatenated groups")
    };
    let sizes = |parts: &[Vec<f64>]| parts.iter().map(Vec::len).collect::<Vec<_>>();
    let (sl, sw, sm) = (sizes(&g.logits), sizes(&g.weight), sizes(&g.motion));
    let mut out = Vec::new();
    out.push(check_group(
        "stage1",
        "control logits",
        &g.logits.concat(),
        &mut field,
        |f, i| {
            let (k, j) = locate(&sl, i);
            &mut f.control.logits[k][j]
        },
        &eval,
        opts,
        &mut rng,
    ));
    out.push(check_group(
        "stage1",
        "weight mlps",
        &g.weight.concat(),
        &mut field,
        |f, i| {
            let (k, j) = locate(&sw, i);
            &mut f.weight_mlps[k].params_mut()[j]
        },
        &eval,
        opts,
        &mut rng,
    ));
    out.push(check_group(
        "stage1",
        "motion mlps",
        &g.motion.concat(),
        &mut field,
        |f, i| {
            let (k, j) = locate(&sm, i);
            &mut f.motion_mlps[k].params_mut()[j]
        },
        &eval_motion,
        opts,
        &mut rng,
    ));
    Ok(out)
}

struct Surface {
    tree: QuadTree,
    dec: Decoders,
    pos: Vec<Vec3>,
    prev: Vec<Vec3>,
    pose: Vec<f64>,
}

fn random_image(w: usize, h: usize, c: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Image {
    let data = (0..w * h * c).map(|_| rng.random_range(lo..hi)).collect();
    Image::from_data(w, h, c, data).expect("sized buffer")
}

/// Full stage-two objective on a two-face tree (one face subdivided) at 16x16,
/// with every supervision term active.
pub fn stage2_suite(opts: &GradcheckOptions) -> Result<(Vec<GroupCheck>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mesh = Mesh::new(
        vec![
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(-1.0, 1.0, 0.1),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )?
    .with_colors(vec![Vec3::new(0.1, 0.05, 0.0), Vec3::new(0.0, 0.1, 0.05), Vec3::new(0.05, 0.0, 0.1), Vec3::zeros()])?;
    let mut tree = QuadTree::new(&mesh, 128, 0.9, 6, 0.8);
    tree.subdivide_parent(1);
    for v in tree.features.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for buf in [&mut tree.ratio_logits, &mut tree.r_logits, &mut tree.c_logits] {
        for v in buf.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    for v in tree.opacity_logits.iter_mut() {
        *v = rng.random_range(-0.5..1.5);
    }
    let k = 3;
    let mut dec = Decoders::new(128, k, DecoderConfig::default(), &mut rng);
    for m in [&mut dec.qs, &mut dec.color, &mut dec.offset, &mut dec.pose.mlp] {
        randomize_mlp(m, 0.05, &mut rng);
    }
    let jitter = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        mesh.vertices()
            .iter()
            .map(|p| p + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1)
            .collect()
    };
    let base = Surface {
        pos: jitter(&mut rng),
        prev: jitter(&mut rng),
        pose: (0..3 * k).map(|_| rng.random_range(-0.5..0.5)).collect(),
        tree,
        dec,
    };
    let (w, h) = (16, 16);
    let camera = Camera::look_at(Vec3::new(0.3, -0.4, 3.0), Vec3::zeros(), Vec3::y(), 14.0, w, h);
    let prev_camera = Camera::look_at(Vec3::new(0.25, -0.35, 3.05), Vec3::zeros(), Vec3::y(), 14.0, w, h);
    let rgb = random_image(w, h, 3, 0.0, 1.0, &mut rng);
    let flow = random_image(w, h, 2, -1.0, 1.0, &mut rng);
    let mut normal = random_image(w, h, 3, -1.0, 1.0, &mut rng);
    for px in normal.data.chunks_mut(3) {
        let n = Vec3::from_column_slice(px).normalize();
        px.copy_from_slice(n.as_slice());
    }
    let target = StepTarget {
        camera: &camera,
        prev_camera: &prev_camera,
        rgb: &rgb,
        flow: Some(&flow),
        normal: Some(&normal),
    };
    let weights = Stage2Weights::default();
    let settings = RenderSettings::default();
    let run = |s: &Surface, freeze: Option<&Freeze>, grad: bool| {
        surface_loss(
            &s.tree, &s.dec, &mesh, &s.pos, &s.prev, &s.pose, &target, &weights, &settings, 0.5, freeze, grad,
        )
    };
    let reference = run(&base, None, false)?.render;
    let pixels = reference.near_cutoff.clone();
    let mask = alpha_mask(&reference.alpha, 0.5);
    let freeze = Freeze {
        pixels: &pixels,
        reference: &reference,
        mask: &mask,
    };
    let total = |s: &Surface| -> Probe {
        let mut terms = run(s, Some(&freeze), false).expect("finite surface").terms;
        terms.edge = edge_length_loss_grad(&mesh, &s.pos).expect("sizes").0;
        terms.lap = laplacian_loss_grad(&s.pos, mesh.neighbors()).expect("valid mesh").0;
        (stage2_total(&terms, &weights), Vec::new())
    };
    let g = run(&base, Some(&freeze), true)?.grad.expect("gradient requested");
    let (_, g_edge) = edge_length_loss_grad(&mesh, &base.pos)?;
    let (_, g_lap) = laplacian_loss_grad(&base.pos, mesh.neighbors())?;
    let g_pos: Vec<Vec3> = (0..4)
        .map(|i| g.positions[i] + g_edge[i] * weights.edge + g_lap[i] * weights.lap)
        .collect();
    type Entry = fn(&mut Surface, usize) -> &mut f64;
    let groups: Vec<(&str, Vec<f64>, Entry)> = vec![
        ("features", g.tree.features, |s, i| &mut s.tree.features[i]),
        ("edge ratios", g.tree.ratio_logits, |s, i| &mut s.tree.ratio_logits[i]),
        ("position logits", g.tree.r_logits, |s, i| &mut s.tree.r_logits[i]),
        ("feature logits", g.tree.c_logits, |s, i| &mut s.tree.c_logits[i]),
        ("opacity logits", g.tree.opacity_logits, |s, i| &mut s.tree.opacity_logits[i]),
        ("scale/rotation mlp", g.decoders.qs, |s, i| &mut s.dec.qs.params_mut()[i]),
        ("color mlp", g.decoders.color, |s, i| &mut s.dec.color.params_mut()[i]),
        ("offset mlp", g.decoders.offset, |s, i| &mut s.dec.offset.params_mut()[i]),
        ("pose mlp", g.decoders.pose, |s, i| &mut s.dec.pose.mlp.params_mut()[i]),
        ("vertex positions", flat(&g_pos), |s, i| &mut s.pos[i / 3][i % 3]),
        ("previous positions", flat(&g.prev_positions), |s, i| &mut s.prev[i / 3][i % 3]),
        ("control points", g.pose_points, |s, i| &mut s.pose[i]),
    ];
    let mut state = base;
    let mut out = Vec::new();
    for (name, analytic, entry) in groups {
        out.push(check_group("stage2", name, &analytic, &mut state, entry, &total, opts, &mut rng));
    }
    Ok((out, pixels.iter().filter(|p| **p).count()))
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut groups = stage1_suite(opts)?;
    let (s2, frozen_pixels) = stage2_suite(opts)?;
    groups.extend(s2);
    Ok(GradcheckReport { groups, frozen_pixels })
}
