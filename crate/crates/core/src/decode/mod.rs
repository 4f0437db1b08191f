//! Appearance decoders: turn tree Gaussians and a deformed mesh into surfels.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, vertex_normals_backward, Mesh, Vec3};
use crate::nn::{sigmoid, Activation, Mlp, MlpCache, PoseCache, PoseEmbedding};
use crate::quadtree::{GaussianGrad, TreeEval};

mod geometry;

use geometry::{Geo, GeoGrad};

/// Below this base or height a Gaussian face is treated as degenerate.
const DEGENERATE_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetU {
    /// `u = tanh(e_p / e_g)`
    Literal,
    /// `u = tanh(e_p / e_g - 1)`, which vanishes for root-level Gaussians.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub pose_dim: usize,
    pub pose_hidden: usize,
    pub pose_frequencies: usize,
    pub offset_u_mode: OffsetU,
    /// When false the offset is `e_p * z` with no bound.
    pub offset_constraint: bool,
    /// When false the scales are `exp(z) * base / 8` with no upper bound.
    pub scale_constraint: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: 64,
            pose_dim: 32,
            pose_hidden: 64,
            pose_frequencies: 2,
            offset_u_mode: OffsetU::Literal,
            offset_constraint: true,
            scale_constraint: true,
        }
    }
}

/// The three global decoders plus the pose embedding feeding the color decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoders {
    pub config: DecoderConfig,
    pub feature_dim: usize,
    /// `[f, e2/e1, e3/e1] -> (angle, z_u, z_v)`
    pub qs: Mlp,
    /// `[f, p] -> rgb`
    pub color: Mlp,
    /// `f -> z_offset`
    pub offset: Mlp,
    pub pose: PoseEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrad {
    pub qs: Vec<f64>,
    pub color: Vec<f64>,
    pub offset: Vec<f64>,
    pub pose: Vec<f64>,
}

impl DecoderGrad {
    pub fn zeros(d: &Decoders) -> Self {
        DecoderGrad {
            qs: vec![0.0; d.qs.num_params()],
            color: vec![0.0; d.color.num_params()],
            offset: vec![0.0; d.offset.num_params()],
            pose: vec![0.0; d.pose.mlp.num_params()],
        }
    }
}

/// A render-ready planar Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surfel {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    pub scale_u: f64,
    pub scale_v: f64,
    pub normal: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    /// Center of the same Gaussian on the previous timestep's geometry.
    pub flow_anchor: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfelGrad {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    pub scale_u: f64,
    pub scale_v: f64,
    pub normal: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub flow_anchor: Vec3,
}

impl SurfelGrad {
    pub fn zeros() -> Self {
        SurfelGrad {
            center: Vec3::zeros(),
            tangent_u: Vec3::zeros(),
            tangent_v: Vec3::zeros(),
            scale_u: 0.0,
            scale_v: 0.0,
            normal: Vec3::zeros(),
            opacity: 0.0,
            color: Vec3::zeros(),
            flow_anchor: Vec3::zeros(),
        }
    }
}

/// Mesh state a surfel build reads from.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceInput<'a> {
    /// Topology and optional vertex colors (canonical).
    pub mesh: &'a Mesh,
    pub positions: &'a [Vec3],
    pub prev_positions: &'a [Vec3],
    /// Flattened time-t control-point positions for the pose embedding.
    pub pose_points: &'a [f64],
}

struct GaussCache {
    geo: Geo,
    prev: Geo,
    base_edge: usize,
    cross: Vec3,
    degenerate: bool,
    theta: f64,
    zu: f64,
    zv: f64,
    t0_raw: Vec3,
    t0: Vec3,
    t1: Vec3,
    u: Vec3,
    z: f64,
    w_bar: f64,
    offset: f64,
    prev_offset: f64,
    color_pass: [bool; 3],
}

pub struct SurfelCache {
    faces: Vec<[usize; 3]>,
    positions: Vec<Vec3>,
    prev_positions: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
    feature_dim: usize,
    gauss: Vec<GaussCache>,
    qs: MlpCache,
    color: MlpCache,
    offset: MlpCache,
    pose: PoseCache,
}

/// Gradients of a surfel build with respect to everything it read.
#[derive(Debug, Clone)]
pub struct SurfelBackward {
    pub gaussians: Vec<GaussianGrad>,
    /// Row-major `G x feature_dim`.
    pub features: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub prev_positions: Vec<Vec3>,
    pub pose_points: Vec<f64>,
    pub params: DecoderGrad,
}

fn rows(data: Vec<f64>, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((data.len() / cols.max(1), cols), data).expect("rectangular batch")
}

impl Decoders {
    pub fn new(feature_dim: usize, control_points: usize, config: DecoderConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden;
        let qs = Mlp::new(&[feature_dim + 2, h, h, 3], Activation::Identity, 1.0, rng).with_zero_last_layer();
        let color = Mlp::new(&[feature_dim + config.pose_dim, h, h, 3], Activation::Sigmoid, 1.0, rng);
        let offset = Mlp::new(&[feature_dim, h, h, 1], Activation::Identity, 1.0, rng).with_zero_last_layer();
        let pose = PoseEmbedding::new(
            control_points,
            config.pose_hidden,
            config.pose_dim,
            config.pose_frequencies,
            rng,
        );
        Decoders {
            config,
            feature_dim,
            qs,
            color,
            offset,
            pose,
        }
    }

    pub fn num_params(&self) -> usize {
        self.qs.num_params() + self.color.num_params() + self.offset.num_params() + self.pose.mlp.num_params()
    }

    /// In-plane scales from the raw decoder outputs and the face's base and height.
    pub fn scales(&self, zu: f64, zv: f64, base: f64, height: f64) -> (f64, f64) {
        if self.config.scale_constraint {
            (sigmoid(zu) * base / 4.0, sigmoid(zv) * height / 4.0)
        } else {
            (zu.exp() * base / 8.0, zv.exp() * height / 8.0)
        }
    }

    /// Signed normal offset for raw output `z` at root barycentric `w`.
    pub fn offset_value(&self, w: Vec3, e_p: f64, e_g: f64, z: f64) -> f64 {
        if !self.config.offset_constraint {
            return e_p * z;
        }
        let w_bar = (1.0 - w.x) * (1.0 - w.y) * (1.0 - w.z);
        w_bar * offset_u(self.config.offset_u_mode, e_p, e_g) * e_p * z.tanh()
    }

    pub fn build_surfels(&self, tree: &TreeEval, surface: SurfaceInput) -> Result<(Vec<Surfel>, SurfelCache)> {
        let mesh = surface.mesh;
        let nv = mesh.num_vertices();
        for (len, what) in [(surface.positions.len(), nv), (surface.prev_positions.len(), nv)] {
            if len != what {
                return Err(Error::SizeMismatch {
                    expected: what,
                    actual: len,
                });
            }
        }
        let d = self.feature_dim;
        let g_count = tree.gaussians.len();
        if tree.features.len() != g_count * d {
            return Err(Error::SizeMismatch {
                expected: g_count * d,
                actual: tree.features.len(),
            });
        }
        let normals = vertex_normals(surface.positions, mesh.faces());
        let prev_normals = vertex_normals(surface.prev_positions, mesh.faces());
        let mode = self.config.offset_u_mode;
        let geos: Vec<(Geo, Geo)> = tree
            .gaussians
            .par_iter()
            .map(|gi| {
                let f = mesh.faces()[gi.root_face];
                let pick = |p: &[Vec3]| [p[f[0]], p[f[1]], p[f[2]]];
                (
                    Geo::new(&gi.corners, gi.bary, pick(surface.positions), pick(&normals), mode),
                    Geo::new(&gi.corners, gi.bary, pick(surface.prev_positions), pick(&prev_normals), mode),
                )
            })
            .collect();

        let (pose, pose_cache) = self.pose.forward(surface.pose_points)?;
        let mut x_qs = Vec::with_capacity(g_count * (d + 2));
        let mut x_c = Vec::with_capacity(g_count * (d + pose.len()));
        for (g, (geo, _)) in geos.iter().enumerate() {
            let f = &tree.features[g * d..(g + 1) * d];
            x_qs.extend_from_slice(f);
            let (r2, r3) = if geo.e[0] > 0.0 {
                (geo.e[1] / geo.e[0], geo.e[2] / geo.e[0])
            } else {
                (0.0, 0.0)
            };
            x_qs.push(r2);
            x_qs.push(r3);
            x_c.extend_from_slice(f);
            x_c.extend_from_slice(&pose);
        }
        let qs = self.qs.forward(rows(x_qs, d + 2).view())?;
        let color = self.color.forward(rows(x_c, d + pose.len()).view())?;
        let offset = self
            .offset
            .forward(ndarray::ArrayView2::from_shape((g_count, d), &tree.features).expect("features").view())?;

        let colors = mesh.vertex_colors();
        let results: Vec<(Surfel, GaussCache)> = geos
            .into_par_iter()
            .enumerate()
            .map(|(g, (geo, prev))| {
                let gi = &tree.gaussians[g];
                let theta = qs.output()[[g, 0]];
                let zu = qs.output()[[g, 1]];
                let zv = qs.output()[[g, 2]];
                let base_edge = (0..3).fold(0, |b, i| if geo.e[i] > geo.e[b] { i } else { b });
                let base = geo.e[base_edge];
                let cross = geo.edge[0].cross(&(geo.q[2] - geo.q[0]));
                let height = if base > 0.0 { cross.norm() / base } else { 0.0 };
                let degenerate = base < DEGENERATE_LENGTH || height < DEGENERATE_LENGTH;
                let (su, sv) = if degenerate {
                    log::warn!("degenerate Gaussian face (root face {}), zero scales", gi.root_face);
                    (0.0, 0.0)
                } else {
                    self.scales(zu, zv, base, height)
                };
                let n = geo.n;
                let dk = geo.edge[base_edge];
                let mut t0_raw = dk - n * dk.dot(&n);
                if t0_raw.norm() < DEGENERATE_LENGTH {
                    let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                    t0_raw = axis - n * axis.dot(&n);
                }
                let t0 = t0_raw.normalize();
                let t1 = n.cross(&t0);
                let u = t0 * theta.cos() + t1 * theta.sin();
                let v = n.cross(&u);
                let z = offset.output()[[g, 0]];
                let b = gi.bary;
                let w_bar = (1.0 - b.x) * (1.0 - b.y) * (1.0 - b.z);
                let offset_at = |geo: &Geo| {
                    if self.config.offset_constraint {
                        w_bar * geo.uu * geo.ep * z.tanh()
                    } else {
                        geo.ep * z
                    }
                };
                let off = offset_at(&geo);
                let prev_off = offset_at(&prev);
                let mut raw = Vec3::new(color.output()[[g, 0]], color.output()[[g, 1]], color.output()[[g, 2]]);
                if let Some(c) = colors {
                    let f = mesh.faces()[gi.root_face];
                    raw += c[f[0]] * gi.color_bary.x + c[f[1]] * gi.color_bary.y + c[f[2]] * gi.color_bary.z;
                }
                let color_pass = [0, 1, 2].map(|k| raw[k] > 0.0 && raw[k] < 1.0);
                let surfel = Surfel {
                    center: geo.x0 + n * off,
                    tangent_u: u,
                    tangent_v: v,
                    scale_u: su,
                    scale_v: sv,
                    normal: n,
                    opacity: gi.opacity,
                    color: raw.map(|c| c.clamp(0.0, 1.0)),
                    flow_anchor: prev.x0 + prev.n * prev_off,
                };
                let cache = GaussCache {
                    geo,
                    prev,
                    base_edge,
                    cross,
                    degenerate,
                    theta,
                    zu,
                    zv,
                    t0_raw,
                    t0,
                    t1,
                    u,
                    z,
                    w_bar,
                    offset: off,
                    prev_offset: prev_off,
                    color_pass,
                };
                (surfel, cache)
            })
            .collect();
        let (surfels, gauss): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let cache = SurfelCache {
            faces: mesh.faces().to_vec(),
            positions: surface.positions.to_vec(),
            prev_positions: surface.prev_positions.to_vec(),
            colors: colors.map(|c| c.to_vec()),
            feature_dim: d,
            gauss,
            qs,
            color,
            offset,
            pose: pose_cache,
        };
        Ok((surfels, cache))
    }

    pub fn backward(&self, tree: &TreeEval, cache: &SurfelCache, grads: &[SurfelGrad]) -> Result<SurfelBackward> {
        let g_count = cache.gauss.len();
        if grads.len() != g_count || tree.gaussians.len() != g_count {
            return Err(Error::SizeMismatch {
                expected: g_count,
                actual: grads.len(),
            });
        }
        let d = cache.feature_dim;
        let constrained_scale = self.config.scale_constraint;
        let constrained_offset = self.config.offset_constraint;
        struct Local {
            gq: [f64; 3],
            gz: f64,
            gc: Vec3,
            geo: GeoGrad,
            prev: GeoGrad,
            ratios: [f64; 2],
        }
        let locals: Vec<Local> = (0..g_count)
            .into_par_iter()
            .map(|g| {
                let c = &cache.gauss[g];
                let gs = &grads[g];
                let geo = &c.geo;
                let n = geo.n;
                let mut gn = gs.normal;
                let gx0 = gs.center;
                let g_off = gs.center.dot(&n);
                gn += gs.center * c.offset;
                let gx0p = gs.flow_anchor;
                let g_offp = gs.flow_anchor.dot(&c.prev.n);
                let gnp = gs.flow_anchor * c.prev_offset;

                // tangent frame: v = n x u, u = cos t0 + sin t1, t1 = n x t0
                let mut gu = gs.tangent_u;
                gn += c.u.cross(&gs.tangent_v);
                gu += gs.tangent_v.cross(&n);
                let (st, ct) = c.theta.sin_cos();
                let g_theta = gu.dot(&(c.t1 * ct - c.t0 * st));
                let mut gt0 = gu * ct;
                let gt1 = gu * st;
                gn += c.t0.cross(&gt1);
                gt0 += gt1.cross(&n);
                let len = c.t0_raw.norm();
                let g_raw = (gt0 - c.t0 * c.t0.dot(&gt0)) / len;
                let dk = geo.edge[c.base_edge];
                let mut g_edge = [Vec3::zeros(); 3];
                g_edge[c.base_edge] += g_raw - n * n.dot(&g_raw);
                gn -= g_raw * dk.dot(&n) + dk * n.dot(&g_raw);

                // scales
                let mut ge = [0.0; 3];
                let (mut gzu, mut gzv) = (0.0, 0.0);
                if !c.degenerate {
                    let base = geo.e[c.base_edge];
                    let area2 = c.cross.norm();
                    let height = area2 / base;
                    let (fu, fv, du, dv) = if constrained_scale {
                        let (a, b) = (sigmoid(c.zu), sigmoid(c.zv));
                        (a / 4.0, b / 4.0, a * (1.0 - a) * base / 4.0, b * (1.0 - b) * height / 4.0)
                    } else {
                        let (a, b) = (c.zu.exp(), c.zv.exp());
                        (a / 8.0, b / 8.0, a * base / 8.0, b * height / 8.0)
                    };
                    gzu = gs.scale_u * du;
                    gzv = gs.scale_v * dv;
                    let g_height = gs.scale_v * fv;
                    let g_base = gs.scale_u * fu - g_height * area2 / (base * base);
                    ge[c.base_edge] += g_base;
                    let g_cross = c.cross * (g_height / base / area2);
                    // cross = edge0 x d, d = q2 - q0 = -edge2
                    let dvec = geo.q[2] - geo.q[0];
                    g_edge[0] += dvec.cross(&g_cross);
                    g_edge[2] -= g_cross.cross(&geo.edge[0]);
                }

                // offsets (z is shared by both timesteps)
                let mut gz = 0.0;
                let mut g_wbar = 0.0;
                let (mut gep, mut guu, mut gepp, mut guup) = (0.0, 0.0, 0.0, 0.0);
                if constrained_offset {
                    let th = c.z.tanh();
                    let dth = 1.0 - th * th;
                    for (go, gm, ep_acc, uu_acc) in [
                        (g_off, geo, &mut gep, &mut guu),
                        (g_offp, &c.prev, &mut gepp, &mut guup),
                    ] {
                        g_wbar += go * gm.uu * gm.ep * th;
                        *uu_acc += go * c.w_bar * gm.ep * th;
                        *ep_acc += go * c.w_bar * gm.uu * th;
                        gz += go * c.w_bar * gm.uu * gm.ep * dth;
                    }
                } else {
                    gep += g_off * c.z;
                    gepp += g_offp * c.z;
                    gz += g_off * geo.ep + g_offp * c.prev.ep;
                }
                let b = tree.gaussians[g].bary;
                let mut gb = Vec3::new(
                    -g_wbar * (1.0 - b.y) * (1.0 - b.z),
                    -g_wbar * (1.0 - b.x) * (1.0 - b.z),
                    -g_wbar * (1.0 - b.x) * (1.0 - b.y),
                );
                let mut gc = Vec3::zeros();
                for k in 0..3 {
                    if c.color_pass[k] {
                        gc[k] = gs.color[k];
                    }
                }
                let geo_grad = geo.backward(
                    &tree.gaussians[g].corners,
                    b,
                    g_edge,
                    ge,
                    gep,
                    guu,
                    gx0,
                    gn,
                );
                let prev_grad = c.prev.backward(
                    &tree.gaussians[g].corners,
                    b,
                    [Vec3::zeros(); 3],
                    [0.0; 3],
                    gepp,
                    guup,
                    gx0p,
                    gnp,
                );
                gb += geo_grad.bary + prev_grad.bary;
                let geo_grad = GeoGrad { bary: gb, ..geo_grad };
                Local {
                    gq: [g_theta, gzu, gzv],
                    gz,
                    gc,
                    geo: geo_grad,
                    prev: prev_grad,
                    ratios: [0.0; 2],
                }
            })
            .collect();

        let mut params = DecoderGrad::zeros(self);
        let gq = rows(locals.iter().flat_map(|l| l.gq).collect(), 3);
        let g_in_qs = self.qs.backward(&cache.qs, gq.view(), &mut params.qs)?;
        let gz = rows(locals.iter().map(|l| l.gz).collect(), 1);
        let g_in_off = self.offset.backward(&cache.offset, gz.view(), &mut params.offset)?;
        let gcol = rows(locals.iter().flat_map(|l| [l.gc.x, l.gc.y, l.gc.z]).collect(), 3);
        let g_in_c = self.color.backward(&cache.color, gcol.view(), &mut params.color)?;

        let mut features = vec![0.0; g_count * d];
        let mut g_pose = vec![0.0; self.config.pose_dim];
        let mut locals = locals;
        for g in 0..g_count {
            let dst = &mut features[g * d..(g + 1) * d];
            for k in 0..d {
                dst[k] = g_in_qs[[g, k]] + g_in_off[[g, k]] + g_in_c[[g, k]];
            }
            for (k, gp) in g_pose.iter_mut().enumerate() {
                *gp += g_in_c[[g, d + k]];
            }
            locals[g].ratios = [g_in_qs[[g, d]], g_in_qs[[g, d + 1]]];
        }
        let pose_points = self.pose.backward(&cache.pose, &g_pose, &mut params.pose)?;

        // ratio inputs e2/e1, e3/e1 feed back into the edge lengths
        let nv = cache.positions.len();
        let mut gpos = vec![Vec3::zeros(); nv];
        let mut gnrm = vec![Vec3::zeros(); nv];
        let mut gprev = vec![Vec3::zeros(); nv];
        let mut gprev_nrm = vec![Vec3::zeros(); nv];
        let mut gaussians = Vec::with_capacity(g_count);
        for (g, l) in locals.into_iter().enumerate() {
            let c = &cache.gauss[g];
            let gi = &tree.gaussians[g];
            let f = cache.faces[gi.root_face];
            let mut geo_grad = l.geo;
            if c.geo.e[0] > 0.0 {
                let [gr2, gr3] = l.ratios;
                let e = c.geo.e;
                let extra = c.geo.backward_edge_lengths(
                    &gi.corners,
                    [-(gr2 * e[1] + gr3 * e[2]) / (e[0] * e[0]), gr2 / e[0], gr3 / e[0]],
                );
                for i in 0..3 {
                    geo_grad.corners[i] += extra.corners[i];
                    geo_grad.v[i] += extra.v[i];
                }
            }
            for i in 0..3 {
                gpos[f[i]] += geo_grad.v[i];
                gnrm[f[i]] += geo_grad.nv[i];
                gprev[f[i]] += l.prev.v[i];
                gprev_nrm[f[i]] += l.prev.nv[i];
            }
            let mut color_bary = Vec3::zeros();
            if let Some(colors) = &cache.colors {
                for i in 0..3 {
                    color_bary[i] = l.gc.dot(&colors[f[i]]);
                }
            }
            gaussians.push(GaussianGrad {
                corners: [0, 1, 2].map(|i| geo_grad.corners[i] + l.prev.corners[i]),
                bary: geo_grad.bary,
                color_bary,
                opacity: grads[g].opacity,
            });
        }
        for (dst, src) in gpos
            .iter_mut()
            .zip(vertex_normals_backward(&cache.positions, &cache.faces, &gnrm))
        {
            *dst += src;
        }
        for (dst, src) in gprev
            .iter_mut()
            .zip(vertex_normals_backward(&cache.prev_positions, &cache.faces, &gprev_nrm))
        {
            *dst += src;
        }
        Ok(SurfelBackward {
            gaussians,
            features,
            positions: gpos,
            prev_positions: gprev,
            pose_points,
            params,
        })
    }
}

pub fn offset_u(mode: OffsetU, e_p: f64, e_g: f64) -> f64 {
    match mode {
        OffsetU::Literal => (e_p / e_g).tanh(),
        OffsetU::Shifted => (e_p / e_g - 1.0).tanh(),
    }
}

#[cfg(test)]
mod tests;
