use std::f64::consts::PI;

use super::matrix::Mat;
use crate::error::{contract, Result};

/// Frequency encoding `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(k-1) pi x), cos(2^(k-1) pi x)]`.
///
/// Each frequency block holds `input_dim` sines followed by `input_dim` cosines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PosEnc {
    pub order: usize,
    pub input_dim: usize,
}

impl PosEnc {
    pub fn new(order: usize, input_dim: usize) -> Self {
        Self { order, input_dim }
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim * (1 + 2 * self.order)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(contract(format!("positional encoding expects {} inputs, got {}", self.input_dim, x.len())));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.write(x, &mut out);
        Ok(out)
    }

    fn write(&self, x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        out[..d].copy_from_slice(x);
        let mut freq = PI;
        for k in 0..self.order {
            let base = d + 2 * d * k;
            for i in 0..d {
                let (s, c) = (freq * x[i]).sin_cos();
                out[base + i] = s;
                out[base + d + i] = c;
            }
            freq *= 2.0;
        }
    }

    pub fn apply_batch(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.input_dim {
            return Err(contract("positional encoding batch width mismatch"));
        }
        let mut out = Mat::zeros(x.rows(), self.output_dim());
        for r in 0..x.rows() {
            self.write(x.row(r), out.row_mut(r));
        }
        Ok(out)
    }

    /// Chain rule through the encoding: maps `dL/d(encoded)` to `dL/dx`.
    pub fn backward(&self, x: &Mat, grad_enc: &Mat) -> Result<Mat> {
        if x.cols() != self.input_dim || grad_enc.cols() != self.output_dim() || grad_enc.rows() != x.rows() {
            return Err(contract("positional encoding backward shape mismatch"));
        }
        let d = self.input_dim;
        let mut gx = Mat::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gr = grad_enc.row(r);
            let out = gx.row_mut(r);
            out.copy_from_slice(&gr[..d]);
            let mut freq = PI;
            for k in 0..self.order {
                let base = d + 2 * d * k;
                for i in 0..d {
                    let (s, c) = (freq * xr[i]).sin_cos();
                    out[i] += freq * (c * gr[base + i] - s * gr[base + d + i]);
                }
                freq *= 2.0;
            }
        }
        Ok(gx)
    }
}
