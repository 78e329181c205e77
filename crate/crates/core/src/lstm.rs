//! Single-layer LSTM without peepholes, read left to right from a zero
//! state; the final hidden state is the sentence embedding.
//!
//! ```text
//! i  = σ(W_i x + U_i h + b_i)      f = σ(W_f x + U_f h + b_f)
//! o  = σ(W_o x + U_o h + b_o)      g = tanh(W_c x + U_c h + b_c)
//! c' = f ⊙ c + i ⊙ g               h' = o ⊙ tanh(c')
//! ```

use crate::kernel::{self, Matrix};
use crate::{Error, Result};

/// Forget-gate bias used at initialization.
pub const FORGET_BIAS: f64 = 2.5;

/// Weights of one gate: input matrix `H × m`, recurrent matrix `H × H`, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Gate {
            w: Matrix::zeros(hidden, input_dim),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    fn preactivation(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.b.clone();
        self.w.matvec_acc(x, &mut z)?;
        self.u.matvec_acc(h, &mut z)?;
        Ok(z)
    }

    fn accumulate(&mut self, dz: &[f64], x: &[f64], h_prev: &[f64]) -> Result<()> {
        self.w.add_outer(dz, x)?;
        self.u.add_outer(dz, h_prev)?;
        kernel::add_assign(&mut self.b, dz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParameters {
    input_dim: usize,
    hidden: usize,
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub cell: Gate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmParameters {
    pub fn zeros(input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Invalid(format!("LSTM dims must be positive, got m={input_dim}, H={hidden}")));
        }
        Ok(LstmParameters {
            input_dim,
            hidden,
            input: Gate::zeros(input_dim, hidden),
            forget: Gate::zeros(input_dim, hidden),
            output: Gate::zeros(input_dim, hidden),
            cell: Gate::zeros(input_dim, hidden),
        })
    }

    /// Gaussian `W`/`U`, zero biases except the forget gate's.
    pub fn init(input_dim: usize, hidden: usize, stddev: f64, seed: u64, forget_bias: f64) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden)?;
        for (g, gate) in p.gates_mut().into_iter().enumerate() {
            let s = seed.wrapping_add(2 * g as u64);
            gate.w = kernel::gaussian_init(hidden, input_dim, stddev, s)?;
            gate.u = kernel::gaussian_init(hidden, hidden, stddev, s.wrapping_add(1))?;
        }
        p.forget.b.fill(forget_bias);
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden).expect("dims already validated")
    }

    /// Gates in checkpoint order: input, forget, output, cell.
    pub fn gates(&self) -> [&Gate; 4] {
        [&self.input, &self.forget, &self.output, &self.cell]
    }

    pub fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.cell]
    }

    /// All twelve parameter blocks: `W_i, U_i, b_i, W_f, …, b_c`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.gates()
            .into_iter()
            .flat_map(|g| [g.w.as_slice(), g.u.as_slice(), g.b.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.gates_mut()
            .into_iter()
            .flat_map(|g| [g.w.as_mut_slice(), g.u.as_mut_slice(), g.b.as_mut_slice()])
            .collect()
    }

    pub fn step(&self, state: &LstmState, x: &[f64]) -> Result<LstmState> {
        Ok(self.traced_step(state, x)?.next_state())
    }

    fn traced_step(&self, state: &LstmState, x: &[f64]) -> Result<StepCache> {
        if x.len() != self.input_dim || state.h.len() != self.hidden || state.c.len() != self.hidden {
            return Err(Error::Shape(format!(
                "LSTM step with input {} and state {}/{} for m={}, H={}",
                x.len(),
                state.h.len(),
                state.c.len(),
                self.input_dim,
                self.hidden
            )));
        }
        let i = kernel::sigmoid_vec(&self.input.preactivation(x, &state.h)?);
        let f = kernel::sigmoid_vec(&self.forget.preactivation(x, &state.h)?);
        let o = kernel::sigmoid_vec(&self.output.preactivation(x, &state.h)?);
        let g = kernel::tanh_vec(&self.cell.preactivation(x, &state.h)?);
        let c: Vec<f64> = (0..self.hidden).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
        let tanh_c = kernel::tanh_vec(&c);
        let h = kernel::hadamard(&o, &tanh_c)?;
        Ok(StepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            h,
        })
    }

    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<LstmTrace> {
        if sequence.is_empty() {
            return Err(Error::Invalid("cannot encode an empty sequence".into()));
        }
        let mut state = LstmState::zeros(self.hidden);
        let mut steps = Vec::with_capacity(sequence.len());
        for x in sequence {
            let s = self.traced_step(&state, x)?;
            state = s.next_state();
            steps.push(s);
        }
        Ok(LstmTrace { steps })
    }

    /// Final hidden state `h_n`.
    pub fn encode(&self, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(sequence)?.final_hidden().to_vec())
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl StepCache {
    fn next_state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// Activations of every timestep, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().expect("trace is never empty").h
    }

    pub fn states(&self) -> impl Iterator<Item = LstmState> + '_ {
        self.steps.iter().map(StepCache::next_state)
    }

    /// Full BPTT from `dL/dh_n`. Parameter gradients are added to `grads`;
    /// the returned vectors are `dL/dx_t` for every timestep.
    pub fn backward_into(
        &self,
        params: &LstmParameters,
        d_final: &[f64],
        grads: &mut LstmParameters,
    ) -> Result<Vec<Vec<f64>>> {
        let hdim = params.hidden;
        if d_final.len() != hdim || grads.hidden != hdim || grads.input_dim != params.input_dim {
            return Err(Error::Shape(format!(
                "LSTM backward: upstream {} for H={hdim}",
                d_final.len()
            )));
        }
        if self.steps.first().is_some_and(|s| s.x.len() != params.input_dim) {
            return Err(Error::Shape("parameters do not match the cached forward pass".into()));
        }
        let mut dh = d_final.to_vec();
        let mut dc_next = vec![0.0; hdim];
        let mut d_inputs = vec![Vec::new(); self.steps.len()];
        for (t, s) in self.steps.iter().enumerate().rev() {
            let mut dz_i = vec![0.0; hdim];
            let mut dz_f = vec![0.0; hdim];
            let mut dz_o = vec![0.0; hdim];
            let mut dz_g = vec![0.0; hdim];
            for j in 0..hdim {
                let dc = dc_next[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                dz_o[j] = dh[j] * s.tanh_c[j] * s.o[j] * (1.0 - s.o[j]);
                dz_i[j] = dc * s.g[j] * s.i[j] * (1.0 - s.i[j]);
                dz_f[j] = dc * s.c_prev[j] * s.f[j] * (1.0 - s.f[j]);
                dz_g[j] = dc * s.i[j] * (1.0 - s.g[j] * s.g[j]);
                dc_next[j] = dc * s.f[j];
            }
            let mut dx = vec![0.0; params.input_dim];
            let mut dh_prev = vec![0.0; hdim];
            for ((gate, grad), dz) in params
                .gates()
                .into_iter()
                .zip(grads.gates_mut())
                .zip([&dz_i, &dz_f, &dz_o, &dz_g])
            {
                grad.accumulate(dz, &s.x, &s.h_prev)?;
                gate.w.t_matvec_acc(dz, &mut dx)?;
                gate.u.t_matvec_acc(dz, &mut dh_prev)?;
            }
            d_inputs[t] = dx;
            dh = dh_prev;
        }
        Ok(d_inputs)
    }
}
