use std::f64::consts::{PI, TAU};

use nalgebra::Rotation3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{CameraMode, SynthConfig};
use super::dataset::{Frame, FrameDataset, TestView};
use crate::error::{Error, Result};
use crate::mesh::primitives::{grid_box, torus, uv_sphere};
use crate::mesh::{vertex_normals, Mesh, Vec3};
use crate::render::{Camera, Image};

const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    BendingBar,
    SwingingSpherePair,
    TwistingTorus,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::BendingBar, Scenario::SwingingSpherePair, Scenario::TwistingTorus];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BendingBar => "bending-bar",
            Scenario::SwingingSpherePair => "swinging-sphere-pair",
            Scenario::TwistingTorus => "twisting-torus",
        }
    }

    /// Rest-pose mesh with procedural vertex colors.
    pub fn canonical_mesh(self) -> Mesh {
        let m = match self {
            Scenario::BendingBar => grid_box(Vec3::new(1.0, 0.15, 0.15), 16, 2, 2),
            Scenario::SwingingSpherePair => {
                let a = uv_sphere(0.35, 12, 8);
                let na = a.num_vertices();
                let mut v: Vec<Vec3> = a.vertices().iter().map(|p| p - Vec3::x() * 0.5).collect();
                v.extend(a.vertices().iter().map(|p| p + Vec3::x() * 0.5));
                let mut f = a.faces().to_vec();
                f.extend(a.faces().iter().map(|t| t.map(|i| i + na)));
                Mesh::new(v, f).expect("two disjoint spheres")
            }
            Scenario::TwistingTorus => torus(0.7, 0.25, 24, 10),
        };
        let colors = m.vertices().iter().map(texture).collect();
        m.with_colors(colors).expect("one color per vertex")
    }

    /// Position at time `t` of the rest-pose point `p`.
    pub fn displace(self, p: &Vec3, t: f64, amplitude: f64) -> Vec3 {
        let phase = (TAU * t).sin() * amplitude;
        match self {
            Scenario::BendingBar => {
                let a = 0.6 * phase;
                p + Vec3::z() * a * (p.x.powi(3) - 0.6 * p.x)
            }
            Scenario::SwingingSpherePair => {
                let side = p.x.signum();
                let pivot = Vec3::new(0.5 * side, 0.0, 0.9);
                let angle = 0.35 * phase * side;
                let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), angle);
                pivot + rot * (p - pivot)
            }
            Scenario::TwistingTorus => {
                let angle = 0.5 * phase * p.x / 0.95;
                let rot = Rotation3::from_axis_angle(&Vec3::x_axis(), angle);
                rot * p
            }
        }
    }

    pub fn mesh_at(self, canonical: &Mesh, t: f64, amplitude: f64) -> Mesh {
        let v = canonical.vertices().iter().map(|p| self.displace(p, t, amplitude)).collect();
        canonical.with_positions(v).expect("same vertex count")
    }
}

fn texture(p: &Vec3) -> Vec3 {
    Vec3::new(
        0.5 + 0.35 * (2.5 * PI * p.x + 1.3 * p.z).sin(),
        0.5 + 0.35 * (3.0 * PI * p.y + 2.0 * p.x + 0.7).sin(),
        0.5 + 0.35 * (2.0 * PI * p.z + 1.7 * p.x).cos(),
    )
}

/// Camera on a circle around the origin, looking at it, z up.
pub fn orbit_camera(cfg: &SynthConfig, azimuth: f64) -> Camera {
    let el = cfg.elevation_deg.to_radians();
    let eye = Vec3::new(el.cos() * azimuth.cos(), el.cos() * azimuth.sin(), el.sin()) * cfg.orbit_radius;
    let focal = cfg.focal_per_pixel * cfg.resolution as f64;
    Camera::look_at(eye, Vec3::zeros(), Vec3::z(), focal, cfg.resolution, cfg.resolution)
}

const START_AZIMUTH: f64 = PI / 6.0;

/// Training azimuth of frame `i`; the orbit closes on the last frame.
pub fn frame_azimuth(cfg: &SynthConfig, i: usize) -> f64 {
    match cfg.camera_mode {
        CameraMode::Static => START_AZIMUTH,
        CameraMode::Orbit if cfg.frames > 1 => START_AZIMUTH + TAU * i as f64 / (cfg.frames - 1) as f64,
        CameraMode::Orbit => START_AZIMUTH,
    }
}

/// Ground-truth buffers from direct triangle rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rgb: Image,
    pub normal: Image,
    pub flow: Image,
    pub mask: Image,
}

struct Sample {
    depth: f64,
    face: usize,
    bary: [f64; 3],
}

/// Rasterizes a vertex-colored mesh with a depth buffer and `3 x 3`
/// supersampling. Flow is the image motion of each visible surface point
/// since `prev` (seen through `prev_camera`); normals are camera-space and
/// flipped toward the viewer. Normals and flow average over covered samples.
pub fn render_ground_truth(
    mesh: &Mesh,
    prev: &[Vec3],
    camera: &Camera,
    prev_camera: &Camera,
    background: Vec3,
) -> Result<GroundTruth> {
    let colors = mesh.vertex_colors().ok_or(Error::Empty("vertex colors"))?;
    if prev.len() != mesh.num_vertices() {
        return Err(Error::SizeMismatch {
            expected: mesh.num_vertices(),
            actual: prev.len(),
        });
    }
    let (w, h) = (camera.width, camera.height);
    let s = SUPERSAMPLE;
    let (sw, sh) = (w * s, h * s);
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|p| camera.to_camera(p)).collect();
    let normals = vertex_normals(mesh.vertices(), mesh.faces());
    let mut samples: Vec<Option<Sample>> = (0..sw * sh).map(|_| None).collect();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let p = f.map(|i| cam[i]);
        if p.iter().any(|q| q.z <= 1e-6) {
            continue;
        }
        let scr = p.map(|q| camera.project_camera(&q).map(|c| c * s as f64));
        let area = (scr[1][0] - scr[0][0]) * (scr[2][1] - scr[0][1]) - (scr[2][0] - scr[0][0]) * (scr[1][1] - scr[0][1]);
        if area.abs() < 1e-12 {
            continue;
        }
        let lo_x = scr.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_x = scr.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(sw as f64) as usize;
        let lo_y = scr.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_y = scr.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(sh as f64) as usize;
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let edge = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                let l = [edge(scr[1], scr[2]) / area, edge(scr[2], scr[0]) / area, edge(scr[0], scr[1]) / area];
                if l.iter().any(|v| *v < 0.0) {
                    continue;
                }
                // perspective-correct barycentrics
                let inv: [f64; 3] = [l[0] / p[0].z, l[1] / p[1].z, l[2] / p[2].z];
                let sum = inv[0] + inv[1] + inv[2];
                let depth = 1.0 / sum;
                let slot = &mut samples[y * sw + x];
                if slot.as_ref().is_none_or(|o| depth < o.depth) {
                    *slot = Some(Sample {
                        depth,
                        face: fi,
                        bary: inv.map(|v| v / sum),
                    });
                }
            }
        }
    }
    let mut rgb = Image::new(w, h, 3);
    let mut normal = Image::new(w, h, 3);
    let mut flow = Image::new(w, h, 2);
    let mut mask = Image::new(w, h, 1);
    let rot = camera.world_to_camera.rotation;
    for y in 0..h {
        for x in 0..w {
            let mut c_sum = Vec3::zeros();
            let mut n_sum = Vec3::zeros();
            let mut f_sum = [0.0; 2];
            let mut hits = 0usize;
            for sy in 0..s {
                for sx in 0..s {
                    let Some(smp) = &samples[(y * s + sy) * sw + x * s + sx] else {
                        c_sum += background;
                        continue;
                    };
                    hits += 1;
                    let f = mesh.faces()[smp.face];
                    let b = smp.bary;
                    let mix = |v: &[Vec3]| v[f[0]] * b[0] + v[f[1]] * b[1] + v[f[2]] * b[2];
                    c_sum += mix(colors);
                    let pos = mix(mesh.vertices());
                    let mut n = rot * mix(&normals);
                    if n.dot(&camera.to_camera(&pos)) > 0.0 {
                        n = -n;
                    }
                    n_sum += n.normalize();
                    let now = camera.project(&pos);
                    let before = prev_camera.project(&mix(prev));
                    f_sum[0] += now[0] - before[0];
                    f_sum[1] += now[1] - before[1];
                }
            }
            let total = (s * s) as f64;
            rgb.pixel_mut(x, y).copy_from_slice((c_sum / total).as_slice());
            mask.pixel_mut(x, y)[0] = hits as f64 / total;
            if hits > 0 {
                let n = n_sum.normalize();
                normal.pixel_mut(x, y).copy_from_slice(n.as_slice());
                flow.pixel_mut(x, y).copy_from_slice(&[f_sum[0] / hits as f64, f_sum[1] / hits as f64]);
            }
        }
    }
    Ok(GroundTruth { rgb, normal, flow, mask })
}

fn quantize_u8(img: &mut Image) {
    for v in img.data.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

fn quantize_f32(img: &mut Image) {
    for v in img.data.iter_mut() {
        *v = *v as f32 as f64;
    }
}

/// Reconstruction-prior stand-in: Gaussian vertex noise, and unless `light`,
/// random face deletion plus small floating tetrahedra away from the surface.
/// Colors are dropped.
pub fn degrade_prior(mesh: &Mesh, cfg: &SynthConfig, light: bool, rng: &mut impl Rng) -> Result<Mesh> {
    let diag = mesh.bbox_diagonal();
    let noise = Normal::new(0.0, cfg.prior_noise * diag).map_err(|e| Error::Config(e.to_string()))?;
    let mut v: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|p| p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
        .collect();
    let mut faces = mesh.faces().to_vec();
    if !light {
        faces.shuffle(rng);
        let drop = (cfg.prior_deletion * faces.len() as f64).round() as usize;
        faces.truncate(faces.len() - drop.min(faces.len().saturating_sub(1)));
        let (lo, hi) = mesh.bounding_box();
        let pad = Vec3::repeat(0.3 * diag);
        let size = 0.03 * diag;
        let mut placed = 0;
        while placed < cfg.prior_floaters {
            let c = Vec3::new(
                rng.random_range(lo.x - pad.x..hi.x + pad.x),
                rng.random_range(lo.y - pad.y..hi.y + pad.y),
                rng.random_range(lo.z - pad.z..hi.z + pad.z),
            );
            if mesh.vertices().iter().any(|p| (p - c).norm() < 0.15 * diag) {
                continue;
            }
            let base = v.len();
            v.extend([
                c + Vec3::new(size, 0.0, 0.0),
                c + Vec3::new(-size, size, 0.0),
                c + Vec3::new(-size, -size, 0.0),
                c + Vec3::new(0.0, 0.0, size * 1.5),
            ]);
            faces.extend([[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]].map(|t| t.map(|i| i + base)));
            placed += 1;
        }
    }
    Ok(Mesh::new(v, faces)?.compact())
}

/// Builds a complete synthetic sequence. Held-out cameras observe every
/// `test_every`-th frame (offset by half a period) from both sides of the
/// training view.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<FrameDataset> {
    let scenario = Scenario::parse(&cfg.scenario)?;
    if cfg.frames == 0 || cfg.resolution == 0 {
        return Err(Error::Config("frames and resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Vec3::repeat(1.0);
    let canonical = scenario.canonical_mesh();
    let times: Vec<f64> = (0..cfg.frames)
        .map(|i| if cfg.frames > 1 { i as f64 / (cfg.frames - 1) as f64 } else { 0.0 })
        .collect();
    let gt_meshes: Vec<Mesh> = times.iter().map(|&t| scenario.mesh_at(&canonical, t, cfg.amplitude)).collect();
    let cameras: Vec<Camera> = (0..cfg.frames).map(|i| orbit_camera(cfg, frame_azimuth(cfg, i))).collect();
    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let prev = i.saturating_sub(1);
        let mut gt = render_ground_truth(&gt_meshes[i], gt_meshes[prev].vertices(), &cameras[i], &cameras[prev], background)?;
        quantize_u8(&mut gt.rgb);
        for im in [&mut gt.normal, &mut gt.flow, &mut gt.mask] {
            quantize_f32(im);
        }
        frames.push(Frame {
            time: times[i],
            camera: cameras[i],
            rgb: gt.rgb,
            flow: (i > 0).then_some(gt.flow),
            normal: Some(gt.normal),
            mask: Some(gt.mask),
        });
    }
    let mut test_views = Vec::new();
    let offset = cfg.test_offset_deg.to_radians();
    for i in (cfg.test_every / 2..cfg.frames).step_by(cfg.test_every) {
        for (name, sign) in [("plus", 1.0), ("minus", -1.0)] {
            let camera = orbit_camera(cfg, frame_azimuth(cfg, i) + sign * offset);
            let mut gt = render_ground_truth(&gt_meshes[i], gt_meshes[i].vertices(), &camera, &camera, background)?;
            quantize_u8(&mut gt.rgb);
            test_views.push(TestView {
                name: format!("{name}{}", cfg.test_offset_deg.round()),
                frame: i,
                camera,
                rgb: gt.rgb,
            });
        }
    }
    let canonical_index = 0;
    let prior_meshes = gt_meshes
        .iter()
        .enumerate()
        .map(|(i, m)| degrade_prior(m, cfg, i == canonical_index, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameDataset {
        scenario: scenario.name().to_string(),
        static_camera: cfg.camera_mode == CameraMode::Static,
        background,
        frames,
        test_views,
        prior_meshes,
        gt_meshes,
        canonical_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: CameraMode, frames: usize, amplitude: f64) -> SynthConfig {
        SynthConfig {
            frames,
            resolution: 32,
            camera_mode: mode,
            amplitude,
            ..Default::default()
        }
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        let cfg = SynthConfig {
            scenario: "dancing-teapot".into(),
            ..Default::default()
        };
        assert!(matches!(synthesize(&cfg, 0), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn rigid_static_pair_is_identical() {
        for s in Scenario::ALL {
            let cfg = SynthConfig {
                scenario: s.name().into(),
                ..small(CameraMode::Static, 2, 0.0)
            };
            let ds = synthesize(&cfg, 1).unwrap();
            assert_eq!(ds.frames[0].rgb, ds.frames[1].rgb);
            assert!(ds.frames[1].flow.as_ref().unwrap().data.iter().all(|v| *v == 0.0));
            let m = ds.frames[0].mask.as_ref().unwrap();
            assert!(m.data.iter().any(|v| *v > 0.0), "{} not visible", s.name());
        }
    }

    #[test]
    fn orbit_closes() {
        let cfg = small(CameraMode::Orbit, 60, 1.0);
        let a = orbit_camera(&cfg, frame_azimuth(&cfg, 0));
        let b = orbit_camera(&cfg, frame_azimuth(&cfg, 59));
        let d = (a.world_to_camera.rotation - b.world_to_camera.rotation).norm()
            + (a.world_to_camera.translation - b.world_to_camera.translation).norm();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn bar_flow_matches_projected_displacement() {
        // view the bar's front face head-on so pixels sample it uniformly
        let s = Scenario::BendingBar;
        let canon = s.canonical_mesh();
        let (t0, t1) = (0.1, 0.14);
        let m0 = s.mesh_at(&canon, t0, 1.0);
        let m1 = s.mesh_at(&canon, t1, 1.0);
        let cam = Camera::look_at(Vec3::new(0.0, -4.0, 0.0), Vec3::zeros(), Vec3::z(), 130.0, 96, 96);
        let gt = render_ground_truth(&m1, m0.vertices(), &cam, &cam, Vec3::repeat(1.0)).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for p in 0..96 * 96 {
            let m = gt.mask.data[p];
            sum += m * gt.flow.data[2 * p].hypot(gt.flow.data[2 * p + 1]);
            n += m;
        }
        let pixel_mean = sum / n;
        // the front face stays in the plane y = -0.15 and the bend shears
        // only along z, so pixels sample it uniformly in (x, z)
        let n_side = 200;
        let mut acc = 0.0;
        for a in 0..n_side {
            for b in 0..n_side / 10 {
                let x = -1.0 + 2.0 * (a as f64 + 0.5) / n_side as f64;
                let z = -0.15 + 0.3 * (b as f64 + 0.5) / (n_side / 10) as f64;
                let p = Vec3::new(x, -0.15, z);
                let now = cam.project(&s.displace(&p, t1, 1.0));
                let before = cam.project(&s.displace(&p, t0, 1.0));
                acc += (now[0] - before[0]).hypot(now[1] - before[1]);
            }
        }
        let oracle_mean = acc / (n_side * n_side / 10) as f64;
        let rel = (pixel_mean - oracle_mean).abs() / oracle_mean;
        assert!(rel < 0.05, "pixel {pixel_mean} oracle {oracle_mean}");
        assert!(oracle_mean > 0.1);
    }

    #[test]
    fn normals_face_the_camera() {
        let ds = synthesize(&small(CameraMode::Orbit, 3, 1.0), 2).unwrap();
        let f = &ds.frames[1];
        let (n, m) = (f.normal.as_ref().unwrap(), f.mask.as_ref().unwrap());
        let mut seen = 0;
        for y in 0..32 {
            for x in 0..32 {
                if m.pixel(x, y)[0] == 1.0 {
                    let nv = Vec3::from_column_slice(n.pixel(x, y));
                    assert!(nv.dot(&f.camera.ray(x, y)) < 0.0);
                    assert!((nv.norm() - 1.0).abs() < 1e-6);
                    seen += 1;
                }
            }
        }
        assert!(seen > 20);
    }

    #[test]
    fn priors_are_degraded_except_canonical_deletion() {
        let ds = synthesize(&small(CameraMode::Orbit, 4, 1.0), 3).unwrap();
        let gt0 = &ds.gt_meshes[0];
        assert_eq!(ds.prior_meshes[0].num_faces(), gt0.num_faces());
        assert!(ds.prior_meshes[0].vertex_colors().is_none());
        let expected = gt0.num_faces() - (0.05 * gt0.num_faces() as f64).round() as usize + 4 * 4;
        assert_eq!(ds.prior_meshes[1].num_faces(), expected);
        let diag = gt0.bbox_diagonal();
        let err: f64 = ds.prior_meshes[0]
            .vertices()
            .iter()
            .zip(gt0.vertices())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / gt0.num_vertices() as f64;
        // E|n|^2 = 3 sigma^2
        let sigma = (err / 3.0).sqrt() / diag;
        assert!((sigma - 0.01).abs() < 0.003, "{sigma}");
    }

    #[test]
    fn test_views_flank_training_frames() {
        let ds = synthesize(&small(CameraMode::Orbit, 13, 1.0), 4).unwrap();
        let frames: Vec<usize> = ds.test_views.iter().map(|v| v.frame).collect();
        assert_eq!(frames, vec![3, 3, 9, 9]);
        let names: Vec<&str> = ds.test_views.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names[..2], ["plus45", "minus45"]);
        let c_train = ds.frames[3].camera.center();
        let c_test = ds.test_views[0].camera.center();
        let angle = c_train.xy().angle(&c_test.xy());
        assert!((angle - 45f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn save_load_round_trip() {
        let ds = synthesize(&small(CameraMode::Orbit, 3, 1.0), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = FrameDataset::load(dir.path()).unwrap();
        assert_eq!(ds, back);
    }
}
