use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

/// Multilayer perceptron with ReLU hidden layers and a scaled output
/// activation: `y = scale * act(W_L h_{L-1} + b_L)`.
///
/// Parameters live in one flat buffer, layer by layer, each layer stored as a
/// row-major `out x in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    output: Activation,
    output_scale: f64,
    params: Vec<f64>,
}

/// Layer inputs recorded by a forward pass, plus the output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Which hidden ReLU units fired, layer by layer, sample by sample.
    pub fn active_units(&self) -> impl Iterator<Item = bool> + '_ {
        self.inputs[1..].iter().flat_map(|a| a.iter().map(|v| *v > 0.0))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Fan-in uniform initialization `U(-1/sqrt(in), 1/sqrt(in))` for weights and biases.
    pub fn new(widths: &[usize], output: Activation, output_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut params = Vec::with_capacity(Self::count(widths));
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp {
            widths: widths.to_vec(),
            output,
            output_scale,
            params,
        }
    }

    pub fn zeros(widths: &[usize], output: Activation, output_scale: f64) -> Self {
        Mlp {
            widths: widths.to_vec(),
            output,
            output_scale,
            params: vec![0.0; Self::count(widths)],
        }
    }

    fn count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Zeroes the final weight matrix and bias so the pre-activation output starts at 0.
    pub fn with_zero_last_layer(mut self) -> Self {
        let n = self.widths.len();
        let last = (self.widths[n - 2] + 1) * self.widths[n - 1];
        let len = self.params.len();
        self.params[len - last..].fill(0.0);
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn set_output_scale(&mut self, scale: f64) {
        self.output_scale = scale;
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off = self.offset(l);
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::SizeMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows of `x` are independent samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(&x)?;
        let layers = self.widths.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut h = x.to_owned();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b;
            inputs.push(h);
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                let scale = self.output_scale;
                match self.output {
                    Activation::Identity => z.mapv_inplace(|v| scale * v),
                    Activation::Sigmoid => z.mapv_inplace(|v| scale * sigmoid(v)),
                    Activation::Tanh => z.mapv_inplace(|v| scale * v.tanh()),
                }
            }
            h = z;
        }
        Ok(MlpCache { inputs, output: h })
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view)?.output.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Parameter gradients (summed over the batch) are added to
    /// `grad_params`; the gradient with respect to the input batch is returned.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_output: ArrayView2<f64>,
        grad_params: &mut [f64],
    ) -> Result<Array2<f64>> {
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::SizeMismatch {
                expected: cache.output.len(),
                actual: grad_output.len(),
            });
        }
        if grad_params.len() != self.params.len() {
            return Err(Error::SizeMismatch {
                expected: self.params.len(),
                actual: grad_params.len(),
            });
        }
        let scale = self.output_scale;
        let y = &cache.output;
        let mut g: Array2<f64> = match self.output {
            Activation::Identity => grad_output.mapv(|v| v * scale),
            Activation::Sigmoid => {
                let mut g = grad_output.to_owned();
                g.zip_mut_with(y, |g, &y| {
                    let s = if scale != 0.0 { y / scale } else { 0.0 };
                    *g *= scale * s * (1.0 - s);
                });
                g
            }
            Activation::Tanh => {
                let mut g = grad_output.to_owned();
                g.zip_mut_with(y, |g, &y| {
                    let t = if scale != 0.0 { y / scale } else { 0.0 };
                    *g *= scale * (1.0 - t * t);
                });
                g
            }
        };
        if scale == 0.0 {
            g.fill(0.0);
        }
        for l in (0..self.widths.len() - 1).rev() {
            let (w, _) = self.layer(l);
            let h = &cache.inputs[l];
            let off = self.offset(l);
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            let gw = g.t().dot(h);
            for (dst, src) in grad_params[off..off + o * i].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            let gb: Array1<f64> = g.sum_axis(Axis(0));
            for (dst, src) in grad_params[off + o * i..off + o * i + o].iter_mut().zip(gb.iter()) {
                *dst += src;
            }
            let mut gx = g.dot(&w);
            if l > 0 {
                // ReLU mask from the post-activation value feeding this layer
                gx.zip_mut_with(h, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            g = gx;
        }
        Ok(g)
    }

    /// Row `r` of a batch as a slice-friendly owned vector.
    pub fn row(a: &Array2<f64>, r: usize) -> Vec<f64> {
        a.slice(s![r, ..]).to_vec()
    }
}
