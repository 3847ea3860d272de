use rand::Rng;

use super::matrix::{gemm, Mat};
use super::mlp::Activation;
use super::Params;
use crate::error::{contract, Result};

/// Feature map stored height-major, channels innermost (`[y][x][c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Bilinear weights for a continuous pixel coordinate (pixel centers at integers),
    /// clamped to the map border.
    pub fn bilinear_taps(&self, px: f64, py: f64) -> [(usize, usize, f64); 4] {
        let fx = px.clamp(0.0, (self.width - 1) as f64);
        let fy = py.clamp(0.0, (self.height - 1) as f64);
        let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        [(y0, x0, (1.0 - tx) * (1.0 - ty)), (y0, x1, tx * (1.0 - ty)), (y1, x0, (1.0 - tx) * ty), (y1, x1, tx * ty)]
    }

    /// Bilinear sample of all channels into `out`.
    pub fn sample_into(&self, px: f64, py: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (y, x, w) in self.bilinear_taps(px, py) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.pixel(y, x)) {
                *o += w * v;
            }
        }
    }

    /// Adjoint of [`FeatureMap::sample_into`]: scatters `grad` into this map.
    pub fn scatter_add(&mut self, px: f64, py: f64, grad: &[f64]) {
        for (y, x, w) in self.bilinear_taps(px, py) {
            if w == 0.0 {
                continue;
            }
            for (o, g) in self.pixel_mut(y, x).iter_mut().zip(grad) {
                *o += w * g;
            }
        }
    }
}

/// 2-D convolution with square kernel, zero padding `kernel / 2` and an activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out x (kernel * kernel * in)`, patch order `[ky][kx][c]`.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub grad_weight: Mat,
    pub grad_bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ConvTape {
    cols: Mat,
    preact: Mat,
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..out_channels * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_channels).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Mat::from_vec(out_channels, fan_in, w).unwrap(),
            bias,
            activation,
            grad_weight: Mat::zeros(out_channels, fan_in),
            grad_bias: vec![0.0; out_channels],
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        ((h + 2 * pad - self.kernel) / self.stride + 1, (w + 2 * pad - self.kernel) / self.stride + 1)
    }

    fn im2col(&self, x: &FeatureMap) -> Mat {
        let (oh, ow) = self.output_size(x.height, x.width);
        let k = self.kernel;
        let pad = k / 2;
        let c = self.in_channels;
        let mut cols = Mat::zeros(oh * ow, k * k * c);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row_mut(oy * ow + ox);
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= x.width as isize {
                            continue;
                        }
                        let dst = (ky * k + kx) * c;
                        row[dst..dst + c].copy_from_slice(x.pixel(iy as usize, ix as usize));
                    }
                }
            }
        }
        cols
    }

    fn check(&self, x: &FeatureMap) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(contract(format!("conv expects {} channels, got {}", self.in_channels, x.channels)));
        }
        Ok(())
    }

    fn run(&self, x: &FeatureMap) -> (Mat, Mat, FeatureMap) {
        let (oh, ow) = self.output_size(x.height, x.width);
        let cols = self.im2col(x);
        let mut z = Mat::zeros(oh * ow, self.out_channels);
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, &cols, false, &self.weight, true, 1.0, &mut z);
        let act = self.activation;
        let data = z.data().iter().map(|v| act.apply(*v)).collect();
        (cols, z, FeatureMap { height: oh, width: ow, channels: self.out_channels, data })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check(x)?;
        Ok(self.run(x).2)
    }

    pub fn forward_tape(&self, x: &FeatureMap) -> Result<(FeatureMap, ConvTape)> {
        self.check(x)?;
        let (cols, preact, out) = self.run(x);
        Ok((out, ConvTape { cols, preact, in_h: x.height, in_w: x.width }))
    }

    /// Accumulates weight gradients and returns the gradient w.r.t. the input map.
    pub fn backward(&mut self, tape: &ConvTape, grad_out: &FeatureMap) -> Result<FeatureMap> {
        if grad_out.data.len() != tape.preact.data().len() || grad_out.channels != self.out_channels {
            return Err(contract("conv backward shape mismatch"));
        }
        let act = self.activation;
        let mut gz = Mat::from_vec(
            tape.preact.rows(),
            self.out_channels,
            grad_out.data.iter().zip(tape.preact.data()).map(|(g, z)| g * act.derivative(*z)).collect(),
        )?;
        gemm(1.0, &gz, true, &tape.cols, false, 1.0, &mut self.grad_weight);
        for r in 0..gz.rows() {
            for (gb, g) in self.grad_bias.iter_mut().zip(gz.row(r)) {
                *gb += g;
            }
        }
        let mut gcols = Mat::zeros(gz.rows(), self.weight.cols());
        gemm(1.0, &gz, false, &self.weight, false, 0.0, &mut gcols);
        gz = gcols;
        // col2im
        let (oh, ow) = self.output_size(tape.in_h, tape.in_w);
        let k = self.kernel;
        let pad = k / 2;
        let c = self.in_channels;
        let mut gx = FeatureMap::zeros(tape.in_h, tape.in_w, c);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = gz.row(oy * ow + ox);
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= tape.in_h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= tape.in_w as isize {
                            continue;
                        }
                        let src = (ky * k + kx) * c;
                        for (d, s) in gx.pixel_mut(iy as usize, ix as usize).iter_mut().zip(&row[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// A chain of convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<Conv2d>,
}

#[derive(Clone, Debug, Default)]
pub struct ConvStackTape {
    tapes: Vec<ConvTape>,
}

impl ConvStack {
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &FeatureMap) -> Result<(FeatureMap, ConvStackTape)> {
        let mut h = x.clone();
        let mut tape = ConvStackTape::default();
        for l in &self.layers {
            let (o, t) = l.forward_tape(&h)?;
            tape.tapes.push(t);
            h = o;
        }
        Ok((h, tape))
    }

    pub fn backward(&mut self, tape: &ConvStackTape, grad: &FeatureMap) -> Result<FeatureMap> {
        if tape.tapes.len() != self.layers.len() {
            return Err(contract("backward called without a matching forward pass"));
        }
        let mut g = grad.clone();
        for (l, t) in self.layers.iter_mut().zip(&tape.tapes).rev() {
            g = l.backward(t, &g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Conv2d::zero_grad);
    }
}

impl Params for ConvStack {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for l in &mut self.layers {
            f(l.weight.data_mut(), l.grad_weight.data());
            f(&mut l.bias, &l.grad_bias);
        }
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }
}
