use super::Image;
use crate::error::Result;

pub const PSNR_CAP: f64 = 99.0;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// PSNR for images in `[0, 1]`, capped at 99 dB for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable "same" filtering of one channel with zero padding.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let half = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    s += t * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    s += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels (11x11 Gaussian window, sigma 1.5,
/// zero padding), and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.same_shape(b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = Image::new(w, h, ch);
    for c in 0..ch {
        let x = a.channel(c).data;
        let y = b.channel(c).data;
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h), blur(&y, w, h));
        let (exx, eyy, exy) = (blur(&xx, w, h), blur(&yy, w, h), blur(&xy, w, h));
        let mut d_mu = vec![0.0; w * h];
        let mut d_xx = vec![0.0; w * h];
        let mut d_xy = vec![0.0; w * h];
        for p in 0..w * h {
            let a1 = 2.0 * mx[p] * my[p] + SSIM_C1;
            let a2 = 2.0 * (exy[p] - mx[p] * my[p]) + SSIM_C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + SSIM_C1;
            let b2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            d_mu[p] = (2.0 * my[p] * a2 - 2.0 * my[p] * a1) / (b1 * b2) - s * (2.0 * mx[p] / b1 - 2.0 * mx[p] / b2);
            d_xx[p] = -s / b2;
            d_xy[p] = 2.0 * a1 / (b1 * b2);
        }
        // the zero-padded symmetric blur is its own adjoint
        let (g_mu, g_xx, g_xy) = (blur(&d_mu, w, h), blur(&d_xx, w, h), blur(&d_xy, w, h));
        for p in 0..w * h {
            grad.data[p * ch + c] = (g_mu[p] + 2.0 * x[p] * g_xx[p] + y[p] * g_xy[p]) / n;
        }
    }
    Ok((total / n, grad))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_grad(a, b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    /// Direct 11x11 window sum per pixel.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let taps = gaussian_taps();
        let (w, h) = (a.width as isize, a.height as isize);
        let mut total = 0.0;
        for c in 0..a.channels {
            for y in 0..h {
                for x in 0..w {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -5..=5isize {
                        for dx in -5..=5isize {
                            let (xx, yy) = (x + dx, y + dy);
                            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                                continue;
                            }
                            let wt = taps[(dx + 5) as usize] * taps[(dy + 5) as usize];
                            let p = a.pixel(xx as usize, yy as usize)[c];
                            let q = b.pixel(xx as usize, yy as usize)[c];
                            mx += wt * p;
                            my += wt * q;
                            sxx += wt * p * p;
                            syy += wt * q * q;
                            sxy += wt * p * q;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cov = sxy - mx * my;
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / a.len() as f64
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(12, 9, 3, &mut rng);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_psnr() {
        let a = Image::filled(8, 8, &[0.3, 0.4, 0.5]);
        let b = Image::filled(8, 8, &[0.4, 0.5, 0.6]);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(17, 13, 3, &mut rng);
        let b = random_image(17, 13, 3, &mut rng);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(9, 7, 2, &mut rng);
        let b = random_image(9, 7, 2, &mut rng);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-5;
        for i in 0..a.len() {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - g.data[i]).abs() <= 1e-4 * fd.abs().max(g.data[i].abs()).max(1e-6));
        }
    }
}
