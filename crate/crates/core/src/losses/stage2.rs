use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadtree::{child_opacity_dlogit, QuadTree};
use crate::render::{ssim_with_grad, Image};

/// Stage-two term weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Weights {
    pub l1: f64,
    pub ssim: f64,
    pub edge: f64,
    pub lap: f64,
    pub alpha: f64,
    /// 0.1 for static cameras, 0 otherwise.
    pub normal: f64,
    pub flow: f64,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Stage2Weights {
            l1: 0.8,
            ssim: 0.2,
            edge: 0.2,
            lap: 0.03,
            alpha: 0.002,
            normal: 0.1,
            flow: 0.01,
        }
    }
}

/// Unweighted stage-two terms for one step. `ssim` holds `1 - SSIM`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Terms {
    pub l1: f64,
    pub ssim: f64,
    pub edge: f64,
    pub lap: f64,
    pub alpha: f64,
    pub normal: f64,
    pub flow: f64,
}

pub fn stage2_total(t: &Stage2Terms, w: &Stage2Weights) -> f64 {
    w.l1 * t.l1 + w.ssim * t.ssim + w.edge * t.edge + w.lap * t.lap + w.alpha * t.alpha + w.normal * t.normal + w.flow * t.flow
}

/// Mean absolute difference and its gradient with respect to `rendered`.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    let n = rendered.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    let mut sum = 0.0;
    for ((g, a), b) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = a - b;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// Returns `(l1, 1 - ssim)` and the gradient of `w_l1 * l1 + w_ssim * (1 - ssim)`.
pub fn photometric_loss(rendered: &Image, target: &Image, w_l1: f64, w_ssim: f64) -> Result<((f64, f64), Image)> {
    let (l1, mut grad) = l1_loss(rendered, target)?;
    let (s, gs) = ssim_with_grad(rendered, target)?;
    for (g, q) in grad.data.iter_mut().zip(&gs.data) {
        *g = w_l1 * *g - w_ssim * q;
    }
    Ok(((l1, 1.0 - s), grad))
}

/// Valid pixels for flow and normal supervision.
pub fn alpha_mask(alpha: &Image, threshold: f64) -> Vec<bool> {
    alpha.data.iter().map(|a| *a > threshold).collect()
}

fn check_mask(img: &Image, mask: &[bool]) -> Result<()> {
    if mask.len() != img.width * img.height {
        return Err(Error::SizeMismatch {
            expected: img.width * img.height,
            actual: mask.len(),
        });
    }
    Ok(())
}

/// Mean over valid pixels of the L1 norm of the flow difference.
pub fn flow_loss(rendered: &Image, target: &Image, mask: &[bool]) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    check_mask(rendered, mask)?;
    let ch = rendered.channels;
    let count = mask.iter().filter(|m| **m).count();
    let mut grad = Image::new(rendered.width, rendered.height, ch);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for (p, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..ch {
            let d = rendered.data[p * ch + c] - target.data[p * ch + c];
            sum += d.abs();
            grad.data[p * ch + c] = inv * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        }
    }
    Ok((sum * inv, grad))
}

/// Mean over valid pixels of the squared L2 distance between normals.
pub fn normal_loss(rendered: &Image, target: &Image, mask: &[bool]) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    check_mask(rendered, mask)?;
    let ch = rendered.channels;
    let count = mask.iter().filter(|m| **m).count();
    let mut grad = Image::new(rendered.width, rendered.height, ch);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for (p, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..ch {
            let d = rendered.data[p * ch + c] - target.data[p * ch + c];
            sum += d * d;
            grad.data[p * ch + c] = 2.0 * d * inv;
        }
    }
    Ok((sum * inv, grad))
}

/// Mean opacity over active Gaussians and its gradient with respect to the
/// parent opacity logits.
pub fn alpha_loss(tree: &QuadTree) -> (f64, Vec<f64>) {
    let ids = tree.gaussian_ids();
    let mut grad = vec![0.0; tree.opacity_logits.len()];
    if ids.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / ids.len() as f64;
    let mut sum = 0.0;
    for id in ids {
        sum += tree.opacity(id);
        let a = tree.parent_opacity(id.face);
        grad[id.face] += inv
            * if id.node == 0 {
                a * (1.0 - a)
            } else {
                child_opacity_dlogit(a, tree.beta)
            };
    }
    (sum * inv, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosahedron;
    use crate::quadtree::{child_opacity, logit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn identical_images_cost_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(12, 12, 3, &mut rng);
        let ((l1, s), _) = photometric_loss(&a, &a, 0.8, 0.2).unwrap();
        assert_eq!(l1, 0.0);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn constant_offset_l1() {
        let a = Image::filled(6, 5, &[0.5, 0.5, 0.5]);
        let b = Image::filled(6, 5, &[0.25, 0.75, 0.5]);
        let (l1, g) = l1_loss(&a, &b).unwrap();
        assert!((l1 - 0.5 / 3.0).abs() < 1e-15);
        assert_eq!(g.pixel(0, 0), &[1.0 / 90.0, -1.0 / 90.0, 0.0]);
    }

    #[test]
    fn masked_losses_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, h) = (7, 6);
        let ra = random_image(w, h, 2, &mut rng);
        let ta = random_image(w, h, 2, &mut rng);
        let rn = random_image(w, h, 3, &mut rng);
        let tn = random_image(w, h, 3, &mut rng);
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.6)).collect();
        let (mut fl, mut nl, mut cnt) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if !mask[y * w + x] {
                    continue;
                }
                cnt += 1.0;
                for c in 0..2 {
                    fl += (ra.pixel(x, y)[c] - ta.pixel(x, y)[c]).abs();
                }
                for c in 0..3 {
                    nl += (rn.pixel(x, y)[c] - tn.pixel(x, y)[c]).powi(2);
                }
            }
        }
        assert!((flow_loss(&ra, &ta, &mask).unwrap().0 - fl / cnt).abs() < 1e-12);
        assert!((normal_loss(&rn, &tn, &mask).unwrap().0 - nl / cnt).abs() < 1e-12);
        let (_, g) = normal_loss(&rn, &tn, &mask).unwrap();
        let h_ = 1e-6;
        for i in 0..rn.len() {
            let mut p = rn.clone();
            let mut m = rn.clone();
            p.data[i] += h_;
            m.data[i] -= h_;
            let fd = (normal_loss(&p, &tn, &mask).unwrap().0 - normal_loss(&m, &tn, &mask).unwrap().0) / (2.0 * h_);
            assert!((fd - g.data[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_mask_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(4, 4, 2, &mut rng);
        let b = random_image(4, 4, 2, &mut rng);
        let (l, g) = flow_loss(&a, &b, &[false; 16]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|v| *v == 0.0));
        let (l, g) = normal_loss(&a, &b, &[false; 16]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn photometric_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(8, 7, 3, &mut rng);
        let b = random_image(8, 7, 3, &mut rng);
        let f = |x: &Image| {
            let ((l1, s), _) = photometric_loss(x, &b, 0.8, 0.2).unwrap();
            0.8 * l1 + 0.2 * s
        };
        let (_, g) = photometric_loss(&a, &b, 0.8, 0.2).unwrap();
        let h = 1e-6;
        for i in 0..a.len() {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn alpha_loss_endpoints() {
        let m = icosahedron(1.0);
        let mut t = QuadTree::new(&m, 2, 0.9, 6, 0.99);
        t.opacity_logits.fill(50.0);
        assert!((alpha_loss(&t).0 - 0.2).abs() < 1e-15);
        t.opacity_logits.fill(-50.0);
        assert!((alpha_loss(&t).0 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn alpha_loss_gradient_matches_fd() {
        let m = icosahedron(1.0);
        let mut t = QuadTree::new(&m, 2, 0.9, 6, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in t.opacity_logits.iter_mut() {
            *x = rng.random_range(-3.0..3.0);
        }
        t.faces[4].deactivated[1] = true;
        let (_, g) = alpha_loss(&t);
        for f in [0, 4, 11] {
            let h = 1e-6;
            let mut a = t.clone();
            let mut b = t.clone();
            a.opacity_logits[f] += h;
            b.opacity_logits[f] -= h;
            let fd = (alpha_loss(&a).0 - alpha_loss(&b).0) / (2.0 * h);
            assert!((fd - g[f]).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_loss_follows_scan_oracle() {
        let m = icosahedron(1.0);
        let mut t = QuadTree::new(&m, 2, 0.9, 6, 0.99);
        let per_face = |a: f64| a + 4.0 * child_opacity(a, 0.9);
        let mut last = f64::INFINITY;
        for i in 1..=9999 {
            let a = i as f64 / 10000.0;
            t.opacity_logits[7] = logit(a);
            let rest = 19.0 * per_face(0.99);
            let want = (per_face(a) + rest) / 100.0;
            let got = alpha_loss(&t).0;
            assert!((got - want).abs() < 1e-12);
            assert!(got < last);
            last = got;
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = Stage2Weights::default();
        assert_eq!(stage2_total(&Stage2Terms::default(), &w), 0.0);
        let one = Stage2Terms {
            edge: 2.0,
            ..Default::default()
        };
        assert_eq!(stage2_total(&one, &w), 0.4);
        let t = Stage2Terms {
            l1: 0.3,
            ssim: 0.1,
            edge: 0.05,
            lap: 0.7,
            alpha: 0.4,
            normal: 0.2,
            flow: 1.5,
        };
        let hand = 0.8 * 0.3 + 0.2 * 0.1 + 0.2 * 0.05 + 0.03 * 0.7 + 0.002 * 0.4 + 0.1 * 0.2 + 0.01 * 1.5;
        assert!((stage2_total(&t, &w) - hand).abs() < 1e-15);
    }
}
