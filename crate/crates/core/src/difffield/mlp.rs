use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Mat};
use super::Params;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
            Activation::None => z,
        }
    }

    /// Derivative expressed in terms of the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(z),
            Activation::None => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Softplus => 2,
            Activation::None => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Softplus,
            3 => Activation::None,
            other => return Err(contract(format!("unknown activation code {other}"))),
        })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `outputs x inputs`, row-major.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub grad_weight: Mat,
    pub grad_bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Mat, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(contract("bias length must equal layer outputs"));
        }
        let grad_weight = Mat::zeros(weight.rows(), weight.cols());
        let grad_bias = vec![0.0; bias.len()];
        Ok(Self { weight, bias, activation, grad_weight, grad_bias })
    }

    /// Uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Layer::new(Mat::from_vec(outputs, inputs, w).unwrap(), b, activation).unwrap()
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer::new(Mat::zeros(outputs, inputs), vec![0.0; outputs], activation).unwrap()
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn affine(&self, x: &Mat) -> Mat {
        let mut z = Mat::zeros(x.rows(), self.outputs());
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, false, &self.weight, true, 1.0, &mut z);
        z
    }
}

/// Activations recorded by [`MlpNet::forward_tape`] for a later backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTape {
    inputs: Vec<Mat>,
    preacts: Vec<Mat>,
}

impl MlpTape {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Mat::rows)
    }
}

/// Fully connected network with analytic backprop and per-layer gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    layers: Vec<Layer>,
}

impl MlpNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(contract("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(contract(format!("layer widths do not chain: {} -> {}", pair[0].outputs(), pair[1].inputs())));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a network with the given widths, `hidden` activation on every layer but
    /// the last, which uses `output`.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need input and output width");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::random(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        MlpNet::from_layers(layers).unwrap()
    }

    /// Zeroes the final layer so the network initially outputs exactly zero
    /// (for an output activation with `f(0) = 0`).
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(contract(format!("input width {} does not match network input {}", x.cols(), self.input_width())));
        }
        Ok(())
    }

    /// Inference-only forward pass; safe for concurrent readers.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.affine(&h);
            let act = layer.activation;
            z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that records everything needed by [`MlpNet::backward`].
    pub fn forward_tape(&self, x: &Mat) -> Result<(Mat, MlpTape)> {
        self.check_input(x)?;
        let mut tape = MlpTape::default();
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.affine(&h);
            let act = layer.activation;
            let mut a = z.clone();
            a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            tape.inputs.push(h);
            tape.preacts.push(z);
            h = a;
        }
        Ok((h, tape))
    }

    /// Accumulates parameter gradients for `grad_out = dL/d(output)` and returns
    /// `dL/d(input)`.
    pub fn backward(&mut self, tape: &MlpTape, grad_out: &Mat) -> Result<Mat> {
        if tape.is_empty() {
            return Err(contract("backward called without a recorded forward pass"));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(contract("tape was recorded on a different network"));
        }
        if grad_out.rows() != tape.batch() || grad_out.cols() != self.output_width() {
            return Err(contract(format!(
                "upstream gradient {}x{} does not match forward output {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                tape.batch(),
                self.output_width()
            )));
        }
        let mut grad = grad_out.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let x = &tape.inputs[idx];
            let z = &tape.preacts[idx];
            if x.cols() != layer.inputs() || z.cols() != layer.outputs() {
                return Err(contract("tape was recorded on a different network"));
            }
            let act = layer.activation;
            for (g, zv) in grad.data_mut().iter_mut().zip(z.data()) {
                *g *= act.derivative(*zv);
            }
            gemm(1.0, &grad, true, x, false, 1.0, &mut layer.grad_weight);
            for r in 0..grad.rows() {
                for (gb, g) in layer.grad_bias.iter_mut().zip(grad.row(r)) {
                    *gb += g;
                }
            }
            let mut gx = Mat::zeros(grad.rows(), layer.inputs());
            gemm(1.0, &grad, false, &layer.weight, false, 0.0, &mut gx);
            grad = gx;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.grad_weight.data_mut().fill(0.0);
            l.grad_bias.fill(0.0);
        }
    }

    /// Flattened copy of all parameters (weights then bias, layer by layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.grad_weight.data());
            out.extend_from_slice(&l.grad_bias);
        }
        out
    }

    /// Mutable access to the scalar parameter with flat index `idx`.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            if idx < nw {
                return &mut l.weight.data_mut()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

impl Params for MlpNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for l in &mut self.layers {
            f(l.weight.data_mut(), l.grad_weight.data());
            f(&mut l.bias, &l.grad_bias);
        }
    }

    fn param_count(&self) -> usize {
        self.num_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line scalar re-evaluation, independent of the GEMM path.
    fn scalar_forward(net: &MlpNet, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in net.layers() {
            let mut out = vec![0.0; l.outputs()];
            for (o, slot) in out.iter_mut().enumerate() {
                let mut acc = l.bias[o];
                for (i, hv) in h.iter().enumerate() {
                    acc += l.weight.get(o, i) * hv;
                }
                *slot = l.activation.apply(acc);
            }
            h = out;
        }
        h
    }

    fn loss_of(net: &MlpNet, x: &Mat, upstream: &Mat) -> f64 {
        let y = net.forward(x).unwrap();
        y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    }

    fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut w = Mat::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let net = MlpNet::from_layers(vec![Layer::new(w, vec![0.0; 3], Activation::None).unwrap()]).unwrap();
        let x = Mat::from_vec(2, 3, vec![0.1, -2.0, 3.5, 7.0, 0.0, -1.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_sigmoid_is_constant() {
        let b = vec![0.3, -1.2];
        let net = MlpNet::from_layers(vec![Layer::new(Mat::zeros(2, 4), b.clone(), Activation::Sigmoid).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(5, 4, &mut rng);
        let y = net.forward(&x).unwrap();
        for r in 0..5 {
            assert_eq!(y.get(r, 0), sigmoid(b[0]));
            assert_eq!(y.get(r, 1), sigmoid(b[1]));
        }
    }

    #[test]
    fn random_two_layer_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = MlpNet::random(&[4, 6, 3], Activation::Relu, Activation::Sigmoid, &mut rng);
        let x = rand_mat(5, 4, &mut rng);
        let y = net.forward(&x).unwrap();
        for r in 0..5 {
            let want = scalar_forward(&net, x.row(r));
            for (a, b) in y.row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpNet::random(&[4, 3], Activation::Relu, Activation::None, &mut rng);
        assert!(net.forward(&Mat::zeros(2, 5)).is_err());
        assert!(MlpNet::from_layers(vec![Layer::zeros(3, 4, Activation::Relu), Layer::zeros(5, 2, Activation::None)]).is_err());
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpNet::random(&[4, 3], Activation::Relu, Activation::None, &mut rng);
        let err = net.backward(&MlpTape::default(), &Mat::zeros(1, 3));
        assert!(err.is_err());
        let other = MlpNet::random(&[4, 5, 3], Activation::Relu, Activation::None, &mut rng);
        let (_, tape) = other.forward_tape(&Mat::zeros(1, 4)).unwrap();
        assert!(net.backward(&tape, &Mat::zeros(1, 3)).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for (seed, act) in [(1u64, Activation::Sigmoid), (2, Activation::Softplus), (3, Activation::Relu), (4, Activation::None)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = MlpNet::random(&[3, 5, 4, 2], act, Activation::Sigmoid, &mut rng);
            let x = rand_mat(3, 3, &mut rng);
            let up = rand_mat(3, 2, &mut rng);
            let (_, tape) = net.forward_tape(&x).unwrap();
            net.zero_grad();
            let gx = net.backward(&tape, &up).unwrap();
            let analytic = net.flat_grads();
            for idx in 0..net.num_params() {
                let orig = *net.param_mut(idx);
                *net.param_mut(idx) = orig + h;
                let fp = loss_of(&net, &x, &up);
                *net.param_mut(idx) = orig - h;
                let fm = loss_of(&net, &x, &up);
                *net.param_mut(idx) = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let rel = (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs()).max(1e-6);
                assert!(rel < 1e-4, "{act:?} param {idx}: {numeric} vs {}", analytic[idx]);
            }
            // input gradient
            for r in 0..3 {
                for c in 0..3 {
                    let mut xp = x.clone();
                    xp.set(r, c, x.get(r, c) + h);
                    let mut xm = x.clone();
                    xm.set(r, c, x.get(r, c) - h);
                    let numeric = (loss_of(&net, &xp, &up) - loss_of(&net, &xm, &up)) / (2.0 * h);
                    let a = gx.get(r, c);
                    assert!((numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-6) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = MlpNet::random(&[3, 4, 2], Activation::Relu, Activation::None, &mut rng);
        let x = rand_mat(4, 3, &mut rng);
        let (_, tape) = net.forward_tape(&x).unwrap();
        let gx = net.backward(&tape, &Mat::zeros(4, 2)).unwrap();
        assert!(net.flat_grads().iter().all(|g| *g == 0.0));
        assert!(gx.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn accumulation_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = MlpNet::random(&[3, 4, 2], Activation::Sigmoid, Activation::None, &mut rng);
        let x1 = rand_mat(2, 3, &mut rng);
        let x2 = rand_mat(3, 3, &mut rng);
        let u1 = rand_mat(2, 2, &mut rng);
        let u2 = rand_mat(3, 2, &mut rng);
        let (_, t1) = net.forward_tape(&x1).unwrap();
        let (_, t2) = net.forward_tape(&x2).unwrap();
        net.backward(&t1, &u1).unwrap();
        let g1 = net.flat_grads();
        net.zero_grad();
        net.backward(&t2, &u2).unwrap();
        let g2 = net.flat_grads();
        net.zero_grad();
        net.backward(&t1, &u1).unwrap();
        net.backward(&t2, &u2).unwrap();
        for ((s, a), b) in net.flat_grads().iter().zip(&g1).zip(&g2) {
            assert!((s - (a + b)).abs() < 1e-13);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpNet::random(&[3, 16, 16, 1], Activation::Relu, Activation::Sigmoid, &mut rng);
        let x = rand_mat(33, 3, &mut rng);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_grad_clears_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = MlpNet::random(&[2, 3, 1], Activation::Relu, Activation::None, &mut rng);
        let x = rand_mat(2, 2, &mut rng);
        let (_, tape) = net.forward_tape(&x).unwrap();
        net.backward(&tape, &Mat::from_vec(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        net.zero_grad();
        assert!(net.flat_grads().iter().all(|g| *g == 0.0));
    }
}
