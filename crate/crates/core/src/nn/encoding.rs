use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, MlpCache};
use crate::error::Result;

pub fn encoded_dim(input_dim: usize, frequencies: usize) -> usize {
    input_dim * (1 + 2 * frequencies)
}

/// `[x, sin(2^0 π x), cos(2^0 π x), ..., sin(2^(F-1) π x), cos(2^(F-1) π x)]`,
/// where each sin/cos block covers all input channels.
pub fn encode(x: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(x.len(), frequencies));
    out.extend_from_slice(x);
    for j in 0..frequencies {
        let w = (1u64 << j) as f64 * PI;
        out.extend(x.iter().map(|v| (w * v).sin()));
        out.extend(x.iter().map(|v| (w * v).cos()));
    }
    out
}

pub fn encode_backward(x: &[f64], frequencies: usize, grad: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut gx = grad[..n].to_vec();
    for j in 0..frequencies {
        let w = (1u64 << j) as f64 * PI;
        let base = n * (1 + 2 * j);
        for i in 0..n {
            gx[i] += grad[base + i] * w * (w * x[i]).cos();
            gx[i] -= grad[base + n + i] * w * (w * x[i]).sin();
        }
    }
    gx
}

/// Maps the flattened control-point positions to a low-dimensional pose code:
/// sinusoidal encoding followed by a one-hidden-layer MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEmbedding {
    pub frequencies: usize,
    pub mlp: Mlp,
}

pub struct PoseCache {
    input: Vec<f64>,
    mlp: MlpCache,
}

impl PoseEmbedding {
    pub fn new(points: usize, hidden: usize, out: usize, frequencies: usize, rng: &mut impl Rng) -> Self {
        let dim = encoded_dim(points * 3, frequencies);
        PoseEmbedding {
            frequencies,
            mlp: Mlp::new(&[dim, hidden, out], Activation::Identity, 1.0, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn forward(&self, flat_points: &[f64]) -> Result<(Vec<f64>, PoseCache)> {
        let enc = encode(flat_points, self.frequencies);
        let x = Array2::from_shape_vec((1, enc.len()), enc).expect("row vector");
        let cache = self.mlp.forward(x.view())?;
        let out = cache.output().row(0).to_vec();
        Ok((
            out,
            PoseCache {
                input: flat_points.to_vec(),
                mlp: cache,
            },
        ))
    }

    /// Returns the gradient with respect to the flattened points; MLP parameter
    /// gradients are accumulated into `grad_params`.
    pub fn backward(&self, cache: &PoseCache, grad_out: &[f64], grad_params: &mut [f64]) -> Result<Vec<f64>> {
        let g = Array2::from_shape_vec((1, grad_out.len()), grad_out.to_vec()).expect("row vector");
        let genc = self.mlp.backward(&cache.mlp, g.view(), grad_params)?;
        Ok(encode_backward(
            &cache.input,
            self.frequencies,
            genc.as_slice().expect("contiguous"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_frequencies_is_identity() {
        assert_eq!(encode(&[0.3, -1.0], 0), vec![0.3, -1.0]);
    }

    #[test]
    fn zero_input_gives_unit_cosines() {
        let e = encode(&[0.0], 3);
        assert_eq!(e, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn dimensions() {
        assert_eq!(encode(&[0.5], 4).len(), 9);
        assert_eq!(encoded_dim(90, 2), 450);
    }

    #[test]
    fn encode_backward_matches_fd() {
        let x = [0.3, -0.7, 1.1];
        let w: Vec<f64> = (0..encoded_dim(3, 3)).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = |x: &[f64]| -> f64 { encode(x, 3).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let g = encode_backward(&x, 3, &w);
        for i in 0..3 {
            let mut a = x;
            let mut b = x;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn pose_embedding_shape_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pe = PoseEmbedding::new(30, 64, 32, 2, &mut rng);
        assert_eq!(pe.mlp.input_dim(), 450);
        let pts: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |p: &[f64]| -> f64 {
            pe.forward(p).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = pe.forward(&pts).unwrap();
        let mut gp = vec![0.0; pe.mlp.num_params()];
        let g = pe.backward(&cache, &w, &mut gp).unwrap();
        for i in [0, 17, 89] {
            let mut a = pts.clone();
            let mut b = pts.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() / fd.abs().max(1e-6) < 1e-5, "{fd} {}", g[i]);
        }
    }
}
