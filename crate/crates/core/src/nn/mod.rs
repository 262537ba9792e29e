//! Dense networks with full backpropagation, embedding tables, optimizers
//! and a binary checkpoint format.

mod checkpoint;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, Entry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{clip_grads, grad_norm, train_step, OptimizerKind, Optimizer, TrainConfig};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{expf, ln, softmax, sqrtf, tanhf};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Activation> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tanhf(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn uniform_fill(n: usize, bound: f64, seed: u64, stream: &str) -> Vec<f64> {
    let mut rng = substream(seed, stream);
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Row-major dense matrix; also used for embedding tables and scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Glorot-uniform init from the substream `init/<name>`.
    pub fn glorot(rows: usize, cols: usize, seed: u64, name: &str) -> Matrix {
        let bound = sqrtf(6.0 / (rows + cols) as f64);
        Matrix {
            rows,
            cols,
            data: uniform_fill(rows * cols, bound, seed, &format!("init/{name}")),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

/// Layer inputs and outputs recorded by [`DenseNet::forward`].
#[derive(Clone, Debug)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(|v| v.as_slice()).unwrap_or(&self.inputs[0])
    }
}

impl DenseNet {
    /// `sizes` lists all widths including input and output; one activation per layer.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64, name: &str) -> DenseNet {
        assert_eq!(sizes.len(), activations.len() + 1, "one activation per layer");
        let layers = activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                let (in_dim, out_dim) = (sizes[i], sizes[i + 1]);
                let bound = sqrtf(6.0 / (in_dim + out_dim) as f64);
                Layer {
                    in_dim,
                    out_dim,
                    weights: uniform_fill(in_dim * out_dim, bound, seed, &format!("init/{name}/{i}")),
                    bias: vec![0.0; out_dim],
                    activation,
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> DenseNet {
        let mut net = DenseNet::new(sizes, activations, 0, "zeros");
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn is_chained(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for l in &self.layers {
            let mut y = l.bias.clone();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                let mut acc = *yo;
                for (w, xi) in row.iter().zip(&x) {
                    acc += w * xi;
                }
                *yo = l.activation.apply(acc);
            }
            inputs.push(x);
            x = y.clone();
            outputs.push(y);
        }
        Ok((x, Cache { inputs, outputs }))
    }

    /// Forward pass without a cache, for inference.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients into `grads` (two tensors per layer,
    /// weights then bias) and returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &Cache, output_grad: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        self.backprop(cache, output_grad, Some(grads))
    }

    /// Gradient with respect to the input only.
    pub fn input_grad(&self, cache: &Cache, output_grad: &[f64]) -> Vec<f64> {
        self.backprop(cache, output_grad, None)
    }

    /// Fresh parameter gradients and the input gradient.
    pub fn backward(&self, cache: &Cache, output_grad: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut grads = zero_like(&self.tensors());
        let gin = self.backward_into(cache, output_grad, &mut grads);
        (grads, gin)
    }

    fn backprop(&self, cache: &Cache, output_grad: &[f64], mut grads: Option<&mut [Vec<f64>]>) -> Vec<f64> {
        let mut g = output_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[li];
            let inp = &cache.inputs[li];
            let pre: Vec<f64> = g
                .iter()
                .zip(out)
                .map(|(gi, &y)| gi * l.activation.derivative(y))
                .collect();
            if let Some(gr) = grads.as_deref_mut() {
                let (gw, rest) = gr[2 * li..2 * li + 2].split_at_mut(1);
                let gw = &mut gw[0];
                let gb = &mut rest[0];
                for (o, &p) in pre.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    gb[o] += p;
                    let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                    for (w, xi) in row.iter_mut().zip(inp) {
                        *w += p * xi;
                    }
                }
            }
            let mut gin = vec![0.0; l.in_dim];
            for (o, &p) in pre.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (gi, w) in gin.iter_mut().zip(row) {
                    *gi += p * w;
                }
            }
            g = gin;
        }
        g
    }
}

/// Anything exposing its parameters as an ordered list of flat tensors.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        zero_like(&self.tensors())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub fn zero_like(tensors: &[&[f64]]) -> Vec<Vec<f64>> {
    tensors.iter().map(|t| vec![0.0; t.len()]).collect()
}

impl Parameterized for DenseNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Parameterized for Matrix {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.data.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.data.as_mut_slice()]
    }
}

/// Numerically stable softmax with cross-entropy against `label`; the logit
/// gradient is `probs - onehot(label)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(Vec<f64>, f64, Vec<f64>), NnError> {
    if label >= logits.len() {
        return Err(NnError::IndexOutOfRange {
            index: label,
            len: logits.len(),
        });
    }
    let probs = softmax(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &l in logits {
        z += expf(l - max);
    }
    let loss = -(logits[label] - max - ln(z));
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    Ok((probs, loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_net(n: usize) -> DenseNet {
        let mut net = DenseNet::zeros(&[n, n], &[Activation::Identity]);
        for i in 0..n {
            net.layers[0].weights[i * n + i] = 1.0;
        }
        net
    }

    #[test]
    fn identity_layer_is_identity() {
        let x = [0.5, -1.0, 2.0];
        assert_eq!(identity_net(3).infer(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = DenseNet::zeros(&[4, 2], &[Activation::Identity]);
        net.layers[0].bias = vec![1.5, -0.25];
        assert_eq!(net.infer(&[3.0, 1.0, 4.0, 1.0]).unwrap(), vec![1.5, -0.25]);
    }

    #[test]
    fn wrong_input_length() {
        let net = identity_net(3);
        assert_eq!(
            net.infer(&[1.0]),
            Err(NnError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn linear_input_grad_is_transpose() {
        let net = DenseNet::new(&[3, 2], &[Activation::Identity], 5, "lin");
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = [1.0, -2.0];
        let gin = net.input_grad(&cache, &g);
        let w = &net.layers[0].weights;
        for i in 0..3 {
            let expected = w[i] * g[0] + w[3 + i] * g[1];
            assert!((gin[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let net = DenseNet::new(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 1, "z");
        let (_, cache) = net.forward(&[0.3, -0.1, 0.9]).unwrap();
        let (grads, gin) = net.backward(&cache, &[0.0, 0.0]);
        assert!(grads.iter().flatten().all(|&x| x == 0.0));
        assert!(gin.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_ce_examples() {
        let (p, loss, _) = softmax_ce(&[0.0, 0.0], 0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);

        let (p, _, _) = softmax_ce(&[ln(7.0), 0.0, 0.0, 0.0], 0).unwrap();
        for (a, b) in p.iter().zip([0.7, 0.1, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }

        let (_, loss, g) = softmax_ce(&[50.0, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-20 && g.iter().all(|x| x.abs() < 1e-20));
        assert_eq!(
            softmax_ce(&[0.0], 1).unwrap_err(),
            NnError::IndexOutOfRange { index: 1, len: 1 }
        );
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    fn act(i: u8) -> Activation {
        // Relu kinks make finite differences unreliable; cover it separately.
        if i % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Identity
        }
    }

    /// Scalar objective: dot of the output with a fixed direction.
    fn objective(net: &DenseNet, x: &[f64], dir: &[f64]) -> f64 {
        net.infer(x).unwrap().iter().zip(dir).map(|(a, b)| a * b).sum()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradients_match_finite_differences(
            seed in any::<u64>(),
            dims in proptest::collection::vec(1usize..6, 2..5),
            acts in proptest::collection::vec(0u8..2, 4),
            xs in proptest::collection::vec(-1.0f64..1.0, 6),
            dir in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let activations: Vec<Activation> = (0..dims.len() - 1).map(|i| act(acts[i])).collect();
            let mut net = DenseNet::new(&dims, &activations, seed, "fd");
            for (i, l) in net.layers.iter_mut().enumerate() {
                for (j, b) in l.bias.iter_mut().enumerate() {
                    *b = 0.1 * libm::sin((i + j) as f64);
                }
            }
            let x = &xs[..dims[0]];
            let d = &dir[..*dims.last().unwrap()];
            let (_, cache) = net.forward(x).unwrap();
            let (grads, gin) = net.backward(&cache, d);
            let h = 1e-5;
            for i in 0..x.len() {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let fd = (objective(&net, &xp, d) - objective(&net, &xm, d)) / (2.0 * h);
                prop_assert!(rel_err(fd, gin[i]) < 1e-4 || (fd - gin[i]).abs() < 1e-9);
            }
            for t in 0..grads.len() {
                for k in 0..grads[t].len() {
                    let mut np = net.clone();
                    let mut nm = net.clone();
                    np.tensors_mut()[t][k] += h;
                    nm.tensors_mut()[t][k] -= h;
                    let fd = (objective(&np, x, d) - objective(&nm, x, d)) / (2.0 * h);
                    prop_assert!(rel_err(fd, grads[t][k]) < 1e-4 || (fd - grads[t][k]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let net = DenseNet::new(&[2, 3, 1], &[Activation::Relu, Activation::Identity], 9, "relu");
        let x = [0.37, -0.81];
        let (_, cache) = net.forward(&x).unwrap();
        let gin = net.input_grad(&cache, &[1.0]);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (net.infer(&xp).unwrap()[0] - net.infer(&xm).unwrap()[0]) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-6);
        }
    }
}
