//! Local word contexts.
//!
//! For word `i` the window `x_{i−⌊l/2⌋} ⊕ … ⊕ x_i ⊕ … ⊕ x_{i+⌊l/2⌋}` is
//! built with zero vectors standing in for positions outside the sentence,
//! and the filter bank maps it to `lc_i = tanh(W · window + b)`. Output length
//! always equals the sentence length.

use crate::kernel::{self, Matrix};
use crate::{Error, Result};

/// `n_filters × (window · in_dim)` filter matrix plus bias; one row per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFilterBank {
    window: usize,
    in_dim: usize,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ContextFilterBank {
    pub fn new(window: usize, in_dim: usize, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::Invalid(format!("window must be odd and positive, got {window}")));
        }
        if in_dim == 0 {
            return Err(Error::Invalid("input width must be positive".into()));
        }
        let d = weights.rows();
        if d == 0 || weights.cols() != window * in_dim || bias.len() != d {
            return Err(Error::Shape(format!(
                "filter bank for window {window}, width {in_dim}: weights {}x{}, bias {}",
                weights.rows(),
                weights.cols(),
                bias.len()
            )));
        }
        if !kernel::all_finite(weights.as_slice()) || !kernel::all_finite(&bias) {
            return Err(Error::NonFinite("filter bank parameters".into()));
        }
        Ok(ContextFilterBank {
            window,
            in_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(window: usize, in_dim: usize, n_filters: usize) -> Result<Self> {
        Self::new(
            window,
            in_dim,
            Matrix::zeros(n_filters, window * in_dim),
            vec![0.0; n_filters],
        )
    }

    /// Gaussian weights, zero bias.
    pub fn init(window: usize, in_dim: usize, n_filters: usize, stddev: f64, seed: u64) -> Result<Self> {
        let weights = kernel::gaussian_init(n_filters, window * in_dim, stddev, seed)?;
        Self::new(window, in_dim, weights, vec![0.0; n_filters])
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn n_filters(&self) -> usize {
        self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        ContextFilterBank {
            window: self.window,
            in_dim: self.in_dim,
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, sentence: &[Vec<f64>]) -> Result<ContextTrace> {
        if let Some(x) = sentence.iter().find(|x| x.len() != self.in_dim) {
            return Err(Error::Shape(format!(
                "word vector of width {} into a bank expecting {}",
                x.len(),
                self.in_dim
            )));
        }
        let mut windows = Vec::with_capacity(sentence.len());
        let mut outputs = Vec::with_capacity(sentence.len());
        for i in 0..sentence.len() {
            let xl = window(sentence, i, self.window);
            let mut a = self.bias.clone();
            self.weights.matvec_acc(&xl, &mut a)?;
            outputs.push(kernel::tanh_vec(&a));
            windows.push(xl);
        }
        Ok(ContextTrace {
            windows,
            outputs,
            in_dim: self.in_dim,
            window: self.window,
        })
    }

    pub fn local_contexts(&self, sentence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(sentence)?.outputs)
    }
}

/// Concatenated window around position `i` (0-based), zero-padded at the
/// sentence boundaries. Width `l · k`.
pub fn window(sentence: &[Vec<f64>], i: usize, l: usize) -> Vec<f64> {
    let k = sentence.first().map_or(0, Vec::len);
    let half = l / 2;
    let mut out = Vec::with_capacity(l * k);
    for offset in 0..l {
        let pos = (i + offset).checked_sub(half);
        match pos.and_then(|p| sentence.get(p)) {
            Some(x) => out.extend_from_slice(x),
            None => out.resize(out.len() + k, 0.0),
        }
    }
    out
}

/// Cached forward pass of [`ContextFilterBank::forward`]. Backward is only
/// reachable through this value.
#[derive(Debug, Clone)]
pub struct ContextTrace {
    windows: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    in_dim: usize,
    window: usize,
}

/// Gradients from [`ContextTrace::backward`].
#[derive(Debug, Clone)]
pub struct ContextGrads {
    pub bank: ContextFilterBank,
    /// Gradient with respect to every input word vector.
    pub inputs: Vec<Vec<f64>>,
}

impl ContextTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Accumulate filter-bank gradients into `grads` and return the
    /// gradient for each input word. Padding positions are dropped.
    pub fn backward_into(
        &self,
        bank: &ContextFilterBank,
        upstream: &[Vec<f64>],
        grads: &mut ContextFilterBank,
    ) -> Result<Vec<Vec<f64>>> {
        if upstream.len() != self.outputs.len() {
            return Err(Error::Shape(format!(
                "{} upstream gradients for {} positions",
                upstream.len(),
                self.outputs.len()
            )));
        }
        if bank.window != self.window || bank.in_dim != self.in_dim || grads.weights.shape() != bank.weights.shape() {
            return Err(Error::Shape("filter bank does not match the cached forward pass".into()));
        }
        let n = self.outputs.len();
        let k = self.in_dim;
        let half = self.window / 2;
        let mut d_inputs = vec![vec![0.0; k]; n];
        let mut d_window = vec![0.0; self.window * k];
        for (i, ((lc, xl), up)) in self.outputs.iter().zip(&self.windows).zip(upstream).enumerate() {
            let da = kernel::hadamard(up, &lc.iter().map(|v| 1.0 - v * v).collect::<Vec<_>>())?;
            grads.weights.add_outer(&da, xl)?;
            kernel::add_assign(&mut grads.bias, &da)?;
            d_window.fill(0.0);
            bank.weights.t_matvec_acc(&da, &mut d_window)?;
            for (offset, chunk) in d_window.chunks_exact(k).enumerate() {
                if let Some(p) = (i + offset).checked_sub(half).filter(|&p| p < n) {
                    kernel::add_assign(&mut d_inputs[p], chunk)?;
                }
            }
        }
        Ok(d_inputs)
    }

    pub fn backward(&self, bank: &ContextFilterBank, upstream: &[Vec<f64>]) -> Result<ContextGrads> {
        let mut grads = bank.zeros_like();
        let inputs = self.backward_into(bank, upstream, &mut grads)?;
        Ok(ContextGrads { bank: grads, inputs })
    }
}
