use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Camera, Image};
use crate::decode::{Surfel, SurfelGrad};
use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Samples beyond this squared Mahalanobis radius (3 sigma) are dropped.
pub const CUTOFF_RHO: f64 = 9.0;
/// Squared radii of the band around the cutoff (2 to 4 sigma) flagged per pixel.
pub const GUARD_BAND: (f64, f64) = (4.0, 16.0);
const PARALLEL_EPS: f64 = 1e-12;
/// Composited channels: rgb, alpha, depth, normal, flow.
const CHANNELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub background: Vec3,
    pub near: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: Vec3::repeat(1.0),
            near: 0.01,
        }
    }
}

/// One ray-surfel sample that passed the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub gauss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: Image,
    pub alpha: Image,
    /// Alpha-weighted camera depth.
    pub depth: Image,
    /// Camera-space normals facing the camera, alpha-weighted.
    pub normal: Image,
    /// Pixel displacement since the previous timestep.
    pub flow: Image,
    /// Depth-sorted samples per pixel, row-major.
    pub records: Vec<Vec<Hit>>,
    /// Pixels where some surfel lies between 2 and 4 sigma.
    pub near_cutoff: Vec<bool>,
    pub background: Vec3,
}

/// Image-space gradients; all maps share the render's resolution.
#[derive(Debug, Clone)]
pub struct ImageGrads {
    pub rgb: Image,
    pub alpha: Image,
    pub depth: Image,
    pub normal: Image,
    pub flow: Image,
}

impl ImageGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageGrads {
            rgb: Image::new(width, height, 3),
            alpha: Image::new(width, height, 1),
            depth: Image::new(width, height, 1),
            normal: Image::new(width, height, 3),
            flow: Image::new(width, height, 2),
        }
    }

    fn pixel(&self, p: usize) -> [f64; CHANNELS] {
        let mut g = [0.0; CHANNELS];
        g[..3].copy_from_slice(&self.rgb.data[p * 3..p * 3 + 3]);
        g[3] = self.alpha.data[p];
        g[4] = self.depth.data[p];
        g[5..8].copy_from_slice(&self.normal.data[p * 3..p * 3 + 3]);
        g[8..10].copy_from_slice(&self.flow.data[p * 2..p * 2 + 2]);
        g
    }
}

/// A surfel moved into camera space.
#[derive(Debug, Clone, Copy)]
pub struct CameraSurfel {
    pub c: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
    pub su: f64,
    pub sv: f64,
    pub opacity: f64,
    pub color: Vec3,
    pub flow: [f64; 2],
    /// `+1` or `-1` so that `sign * n` faces the camera.
    pub sign: f64,
    flow_valid: bool,
}

impl CameraSurfel {
    pub fn renderable(&self) -> bool {
        self.su > 0.0 && self.sv > 0.0
    }

    /// Ray-plane sample for camera-space direction `d`; `None` when the ray
    /// grazes the plane or meets it behind the near plane.
    pub fn sample(&self, d: &Vec3, near: f64) -> Option<(f64, f64, f64, f64)> {
        let den = d.dot(&self.n);
        if den.abs() < PARALLEL_EPS {
            return None;
        }
        let tau = self.c.dot(&self.n) / den;
        if tau <= near {
            return None;
        }
        let w = d * tau - self.c;
        let a = w.dot(&self.u);
        let b = w.dot(&self.v);
        let rho = a * a / (self.su * self.su) + b * b / (self.sv * self.sv);
        Some((tau, a, b, rho))
    }

    /// Channel values this surfel composites at depth `tau`.
    fn values(&self, tau: f64) -> [f64; CHANNELS] {
        let n = self.n * self.sign;
        [
            self.color.x,
            self.color.y,
            self.color.z,
            1.0,
            tau,
            n.x,
            n.y,
            n.z,
            self.flow[0],
            self.flow[1],
        ]
    }
}

fn check_finite(surfels: &[Surfel]) -> Result<()> {
    for (index, s) in surfels.iter().enumerate() {
        let checks: [(&'static str, bool); 9] = [
            ("center", s.center.iter().all(|x| x.is_finite())),
            ("tangent_u", s.tangent_u.iter().all(|x| x.is_finite())),
            ("tangent_v", s.tangent_v.iter().all(|x| x.is_finite())),
            ("scale_u", s.scale_u.is_finite()),
            ("scale_v", s.scale_v.is_finite()),
            ("normal", s.normal.iter().all(|x| x.is_finite())),
            ("opacity", s.opacity.is_finite()),
            ("color", s.color.iter().all(|x| x.is_finite())),
            ("flow_anchor", s.flow_anchor.iter().all(|x| x.is_finite())),
        ];
        if let Some((attribute, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::NonFiniteSurfel { index, attribute });
        }
    }
    Ok(())
}

pub fn to_camera_space(surfels: &[Surfel], camera: &Camera, prev_camera: &Camera, near: f64) -> Vec<CameraSurfel> {
    let r = camera.world_to_camera.rotation;
    surfels
        .iter()
        .map(|s| {
            let c = camera.to_camera(&s.center);
            let n = r * s.normal;
            let anchor = prev_camera.to_camera(&s.flow_anchor);
            let flow_valid = c.z > near && anchor.z > near;
            let flow = if flow_valid {
                let p = camera.project_camera(&c);
                let q = prev_camera.project_camera(&anchor);
                [p[0] - q[0], p[1] - q[1]]
            } else {
                [0.0; 2]
            };
            CameraSurfel {
                c,
                u: r * s.tangent_u,
                v: r * s.tangent_v,
                n,
                su: s.scale_u,
                sv: s.scale_v,
                opacity: s.opacity,
                color: s.color,
                flow,
                sign: if c.dot(&n) > 0.0 { -1.0 } else { 1.0 },
                flow_valid,
            }
        })
        .collect()
}

/// Inclusive pixel box containing every pixel center the surfel can reach
/// within the cutoff, padded by one pixel.
fn screen_box(s: &CameraSurfel, camera: &Camera, near: f64) -> Option<[usize; 4]> {
    if !s.renderable() {
        return None;
    }
    let full = [0, camera.width - 1, 0, camera.height - 1];
    let r = CUTOFF_RHO.sqrt();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (i, j) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        let p = s.c + s.u * (i * r * s.su) + s.v * (j * r * s.sv);
        if p.z <= near {
            return Some(full);
        }
        let q = camera.project_camera(&p);
        x0 = x0.min(q[0]);
        x1 = x1.max(q[0]);
        y0 = y0.min(q[1]);
        y1 = y1.max(q[1]);
    }
    // pixel i is centered at i + 0.5
    let lo_x = (x0 - 1.5).floor();
    let hi_x = (x1 + 0.5).ceil();
    let lo_y = (y0 - 1.5).floor();
    let hi_y = (y1 + 0.5).ceil();
    let w = camera.width as f64;
    let h = camera.height as f64;
    if hi_x < 0.0 || hi_y < 0.0 || lo_x > w - 1.0 || lo_y > h - 1.0 {
        return None;
    }
    Some([
        lo_x.max(0.0) as usize,
        hi_x.min(w - 1.0) as usize,
        lo_y.max(0.0) as usize,
        hi_y.min(h - 1.0) as usize,
    ])
}

struct PixelResult {
    values: [f64; CHANNELS],
    hits: Vec<Hit>,
    near_cutoff: bool,
}

fn shade_pixel(cam: &[CameraSurfel], candidates: &[usize], d: &Vec3, settings: &RenderSettings) -> PixelResult {
    let mut hits = Vec::new();
    let mut near_cutoff = false;
    for &index in candidates {
        let s = &cam[index];
        let Some((tau, a, b, rho)) = s.sample(d, settings.near) else {
            continue;
        };
        if rho >= GUARD_BAND.0 && rho <= GUARD_BAND.1 {
            near_cutoff = true;
        }
        if rho > CUTOFF_RHO {
            continue;
        }
        let gauss = (-0.5 * rho).exp();
        hits.push(Hit {
            index,
            tau,
            a,
            b,
            rho,
            gauss,
            alpha: s.opacity * gauss,
        });
    }
    hits.sort_by(|p, q| p.tau.total_cmp(&q.tau).then(p.index.cmp(&q.index)));
    let mut values = [0.0; CHANNELS];
    let mut t = 1.0;
    for h in &hits {
        let v = cam[h.index].values(h.tau);
        let w = t * h.alpha;
        for k in 0..CHANNELS {
            values[k] += w * v[k];
        }
        t *= 1.0 - h.alpha;
    }
    let bg = settings.background;
    for k in 0..3 {
        values[k] += t * bg[k];
    }
    PixelResult {
        values,
        hits,
        near_cutoff,
    }
}

fn row_candidates(cam: &[CameraSurfel], camera: &Camera, near: f64) -> (Vec<Vec<usize>>, Vec<Option<[usize; 4]>>) {
    let boxes: Vec<Option<[usize; 4]>> = cam.iter().map(|s| screen_box(s, camera, near)).collect();
    let mut rows = vec![Vec::new(); camera.height];
    for (i, b) in boxes.iter().enumerate() {
        if let Some([_, _, y0, y1]) = b {
            for row in &mut rows[*y0..=*y1] {
                row.push(i);
            }
        }
    }
    (rows, boxes)
}

/// Renders the surfels; `prev_camera` is the camera of the previous timestep
/// and only affects the flow map.
pub fn rasterize(
    surfels: &[Surfel],
    camera: &Camera,
    prev_camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    check_finite(surfels)?;
    let cam = to_camera_space(surfels, camera, prev_camera, settings.near);
    let (rows, boxes) = row_candidates(&cam, camera, settings.near);
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<Vec<PixelResult>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut candidates = Vec::new();
            (0..w)
                .map(|x| {
                    candidates.clear();
                    candidates.extend(rows[y].iter().copied().filter(|&i| {
                        let b = boxes[i].expect("binned surfels have boxes");
                        x >= b[0] && x <= b[1]
                    }));
                    shade_pixel(&cam, &candidates, &camera.ray(x, y), settings)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput {
        rgb: Image::new(w, h, 3),
        alpha: Image::new(w, h, 1),
        depth: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        flow: Image::new(w, h, 2),
        records: Vec::with_capacity(w * h),
        near_cutoff: Vec::with_capacity(w * h),
        background: settings.background,
    };
    for (p, r) in pixels.into_iter().flatten().enumerate() {
        out.rgb.data[p * 3..p * 3 + 3].copy_from_slice(&r.values[..3]);
        out.alpha.data[p] = r.values[3];
        out.depth.data[p] = r.values[4];
        out.normal.data[p * 3..p * 3 + 3].copy_from_slice(&r.values[5..8]);
        out.flow.data[p * 2..p * 2 + 2].copy_from_slice(&r.values[8..10]);
        out.records.push(r.hits);
        out.near_cutoff.push(r.near_cutoff);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
struct CamGrad {
    c: Vec3,
    u: Vec3,
    v: Vec3,
    n: Vec3,
    su: f64,
    sv: f64,
    opacity: f64,
    color: Vec3,
    flow: [f64; 2],
}

impl CamGrad {
    fn add(&mut self, o: &CamGrad) {
        self.c += o.c;
        self.u += o.u;
        self.v += o.v;
        self.n += o.n;
        self.su += o.su;
        self.sv += o.sv;
        self.opacity += o.opacity;
        self.color += o.color;
        self.flow[0] += o.flow[0];
        self.flow[1] += o.flow[1];
    }
}

fn pixel_backward(cam: &[CameraSurfel], hits: &[Hit], d: &Vec3, g: &[f64; CHANNELS], bg: &Vec3, out: &mut Vec<(usize, CamGrad)>) {
    let mut trans = Vec::with_capacity(hits.len());
    let mut t = 1.0;
    for h in hits {
        trans.push(t);
        t *= 1.0 - h.alpha;
    }
    // suffix composite behind the current sample, starting from the background
    let mut suffix = [0.0; CHANNELS];
    suffix[..3].copy_from_slice(bg.as_slice());
    for (h, &t) in hits.iter().zip(&trans).rev() {
        let s = &cam[h.index];
        let v = s.values(h.tau);
        let mut g_alpha = 0.0;
        for k in 0..CHANNELS {
            g_alpha += g[k] * (v[k] - suffix[k]);
        }
        g_alpha *= t;
        let wgt = t * h.alpha;
        let mut cg = CamGrad {
            color: Vec3::new(g[0], g[1], g[2]) * wgt,
            n: Vec3::new(g[5], g[6], g[7]) * (wgt * s.sign),
            flow: [g[8] * wgt, g[9] * wgt],
            ..Default::default()
        };
        let mut g_tau = g[4] * wgt;
        cg.opacity = g_alpha * h.gauss;
        let g_rho = -0.5 * g_alpha * s.opacity * h.gauss;
        let (su2, sv2) = (s.su * s.su, s.sv * s.sv);
        let g_a = g_rho * 2.0 * h.a / su2;
        let g_b = g_rho * 2.0 * h.b / sv2;
        cg.su = -g_rho * 2.0 * h.a * h.a / (su2 * s.su);
        cg.sv = -g_rho * 2.0 * h.b * h.b / (sv2 * s.sv);
        let w = d * h.tau - s.c;
        let g_w = s.u * g_a + s.v * g_b;
        cg.u = w * g_a;
        cg.v = w * g_b;
        g_tau += g_w.dot(d);
        cg.c = -g_w;
        let den = d.dot(&s.n);
        cg.c += s.n * (g_tau / den);
        cg.n += (s.c - d * h.tau) * (g_tau / den);
        out.push((h.index, cg));
        for k in 0..CHANNELS {
            suffix[k] = h.alpha * v[k] + (1.0 - h.alpha) * suffix[k];
        }
    }
}

/// Exact reverse of `rasterize` given gradients on its output maps.
pub fn rasterize_backward(
    surfels: &[Surfel],
    camera: &Camera,
    prev_camera: &Camera,
    settings: &RenderSettings,
    output: &RenderOutput,
    grads: &ImageGrads,
) -> Result<Vec<SurfelGrad>> {
    let (w, h) = (camera.width, camera.height);
    if output.records.len() != w * h {
        return Err(Error::MissingRecords);
    }
    let cam = to_camera_space(surfels, camera, prev_camera, settings.near);
    let partials: Vec<Vec<(usize, CamGrad)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..w {
                let p = y * w + x;
                let hits = &output.records[p];
                if hits.is_empty() {
                    continue;
                }
                let g = grads.pixel(p);
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                pixel_backward(&cam, hits, &camera.ray(x, y), &g, &output.background, &mut out);
            }
            out
        })
        .collect();
    let mut acc = vec![CamGrad::default(); surfels.len()];
    for row in &partials {
        for (i, g) in row {
            acc[*i].add(g);
        }
    }
    let rt = camera.world_to_camera.rotation.transpose();
    let prev_rt = prev_camera.world_to_camera.rotation.transpose();
    Ok(acc
        .iter()
        .zip(&cam)
        .zip(surfels)
        .map(|((g, s), surfel)| {
            let mut gc = g.c;
            let mut anchor = Vec3::zeros();
            if s.flow_valid && (g.flow[0] != 0.0 || g.flow[1] != 0.0) {
                gc += camera.project_camera_backward(&s.c, g.flow);
                let a = prev_camera.to_camera(&surfel.flow_anchor);
                anchor = -(prev_rt * prev_camera.project_camera_backward(&a, g.flow));
            }
            SurfelGrad {
                center: rt * gc,
                tangent_u: rt * g.u,
                tangent_v: rt * g.v,
                scale_u: g.su,
                scale_v: g.sv,
                normal: rt * g.n,
                opacity: g.opacity,
                color: g.color,
                flow_anchor: anchor,
            }
        })
        .collect())
}
