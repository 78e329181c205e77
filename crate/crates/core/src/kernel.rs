//! Dense f64 linear algebra, activations, seeded initialization, the Adadelta
//! optimizer and a central-difference gradient checker.
//!
//! Everything here is deliberately small: the model only needs matrix-vector
//! products, outer-product accumulation and elementwise activations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out)?;
        Ok(out)
    }

    /// `out += self · x`.
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.cols || out.len() != self.rows {
            return Err(Error::Shape(format!(
                "matvec {}x{} with input {} into output {}",
                self.rows,
                self.cols,
                x.len(),
                out.len()
            )));
        }
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot_unchecked(row, x);
        }
        Ok(())
    }

    /// `out += selfᵀ · y`.
    pub fn t_matvec_acc(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.rows || out.len() != self.cols {
            return Err(Error::Shape(format!(
                "transposed matvec {}x{} with input {} into output {}",
                self.rows,
                self.cols,
                y.len(),
                out.len()
            )));
        }
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
        Ok(())
    }

    /// `self += a ⊗ b`, i.e. `self[r][c] += a[r] * b[c]`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.rows || b.len() != self.cols {
            return Err(Error::Shape(format!(
                "outer product {}x{} into {}x{} matrix",
                a.len(),
                b.len(),
                self.rows,
                self.cols
            )));
        }
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ar == 0.0 {
                continue;
            }
            for (m, &bc) in row.iter_mut().zip(b) {
                *m += ar * bc;
            }
        }
        Ok(())
    }
}

fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

/// `a += b`.
pub fn add_assign(a: &mut [f64], b: &[f64]) -> Result<()> {
    check_len("add_assign", a.len(), b.len())?;
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    Ok(())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("hadamard", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn check_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: lengths {a} and {b}")));
    }
    Ok(())
}

/// Matrix with i.i.d. `N(0, stddev²)` entries drawn from a ChaCha8 stream
/// seeded with `seed`.
pub fn gaussian_init(rows: usize, cols: usize, stddev: f64, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid(format!("zero-sized shape {rows}x{cols}")));
    }
    let data = gaussian_vec(rows * cols, stddev, seed)?;
    Matrix::from_vec(rows, cols, data)
}

pub fn gaussian_vec(len: usize, stddev: f64, seed: u64) -> Result<Vec<f64>> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::Invalid(format!("stddev must be positive, got {stddev}")));
    }
    let normal = Normal::new(0.0, stddev).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| normal.sample(&mut rng)).collect())
}

/// Adadelta hyperparameters. `lr_scale` multiplies the Adadelta update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub lr_scale: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            lr_scale: 0.01,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Invalid(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lr_scale >= 0.0 && self.lr_scale.is_finite()) {
            return Err(Error::Invalid(format!("lr_scale must be non-negative, got {}", self.lr_scale)));
        }
        Ok(())
    }
}

/// Running averages `E[g²]` and `E[Δx²]` for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
}

impl AdadeltaState {
    pub fn new(len: usize) -> Self {
        AdadeltaState {
            sq_grad: vec![0.0; len],
            sq_delta: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.sq_grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_grad.is_empty()
    }
}

/// One Adadelta update of `param` in place.
///
/// The gradient is validated before anything is touched, so an error leaves
/// both the parameter and the accumulators unchanged.
pub fn adadelta_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdadeltaState,
    config: &AdadeltaConfig,
) -> Result<()> {
    if param.len() != grad.len() || state.len() != param.len() {
        return Err(Error::Shape(format!(
            "adadelta: param {}, grad {}, state {}",
            param.len(),
            grad.len(),
            state.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i} is {}", grad[i])));
    }
    let AdadeltaConfig {
        rho,
        epsilon,
        lr_scale,
    } = *config;
    for (((p, &g), eg2), edx2) in param
        .iter_mut()
        .zip(grad)
        .zip(state.sq_grad.iter_mut())
        .zip(state.sq_delta.iter_mut())
    {
        *eg2 = rho * *eg2 + (1.0 - rho) * g * g;
        let dx = -((*edx2 + epsilon).sqrt() / (*eg2 + epsilon).sqrt()) * g;
        *edx2 = rho * *edx2 + (1.0 - rho) * dx * dx;
        *p += lr_scale * dx;
    }
    Ok(())
}

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `|a − n| / max(|a|, |n|, 1e-8)` for every scalar parameter.
    pub relative_errors: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic` against `(L(θ+h) − L(θ−h)) / 2h` for every component
/// of `params`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "grad_check: {} params, {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("perturbation must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut relative_errors = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = loss(&theta);
        theta[i] = orig - h;
        let minus = loss(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at parameter {i} ± {h}: {plus}, {minus}"
            )));
        }
        let n = (plus - minus) / (2.0 * h);
        numeric.push(n);
        relative_errors.push(relative_error(analytic[i], n));
    }
    let (worst_index, max_relative_error) = relative_errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheckReport {
        relative_errors,
        numeric,
        max_relative_error,
        worst_index,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn activations_at_zero() {
        assert_eq!(0.0f64.tanh(), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_vec(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn concat_preserves_order() {
        assert_eq!(concat(&[1.0, 2.0], &[3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(concat(&[], &[3.0]).len(), 1);
    }

    #[test]
    fn matvec_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::from_vec(7, 5, (0..35).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = m.matvec(&x).unwrap();
        for r in 0..7 {
            let mut acc = 0.0;
            for c in 0..5 {
                acc += m.get(r, c) * x[c];
            }
            assert!((got[r] - acc).abs() < 1e-12);
        }

        let y: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = vec![0.0; 5];
        m.t_matvec_acc(&y, &mut t).unwrap();
        for c in 0..5 {
            let acc: f64 = (0..7).map(|r| m.get(r, c) * y[r]).sum();
            assert!((t[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let m = Matrix::zeros(3, 2);
        assert!(matches!(m.matvec(&[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        let mut acc = Matrix::zeros(2, 2);
        assert!(acc.add_outer(&[1.0], &[1.0, 2.0]).is_err());
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
        assert!(add_assign(&mut [1.0], &[1.0, 2.0]).is_err());
        assert!(hadamard(&[1.0], &[]).is_err());
    }

    #[test]
    fn gaussian_init_is_deterministic_and_sized() {
        let a = gaussian_init(50, 600, 0.05, 3).unwrap();
        let b = gaussian_init(50, 600, 0.05, 3).unwrap();
        assert_eq!(a.as_slice().len(), 30000);
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = gaussian_init(50, 600, 0.05, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_init_sample_mean_within_three_sigma() {
        let v = gaussian_vec(10_000, 0.05, 99).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 3.0 * 0.05 / 100.0, "mean {mean}");
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var.sqrt() - 0.05).abs() < 0.002);
    }

    #[test]
    fn gaussian_init_rejects_bad_arguments() {
        assert!(gaussian_init(0, 3, 0.1, 0).is_err());
        assert!(gaussian_init(2, 3, 0.0, 0).is_err());
        assert!(gaussian_init(2, 3, -1.0, 0).is_err());
    }

    #[test]
    fn adadelta_zero_gradient_leaves_param() {
        let mut p = vec![1.5, -2.0, 0.0];
        let mut st = AdadeltaState::new(3);
        st.sq_grad = vec![0.4, 0.2, 0.1];
        st.sq_delta = vec![0.3, 0.3, 0.3];
        let cfg = AdadeltaConfig::default();
        adadelta_step(&mut p, &[0.0; 3], &mut st, &cfg).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
        assert!(st.sq_grad.iter().zip([0.4, 0.2, 0.1]).all(|(a, b)| *a < b && *a >= 0.0));
        assert!(st.sq_delta.iter().all(|&a| a < 0.3 && a >= 0.0));
    }

    #[test]
    fn adadelta_single_step_by_hand() {
        // E[g²] = 0.05, Δx = -sqrt(1e-6)/sqrt(0.050001), E[Δx²] = 0.05·Δx².
        let cfg = AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            lr_scale: 1.0,
        };
        let mut p = vec![1.0];
        let mut st = AdadeltaState::new(1);
        adadelta_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        let dx = -0.004_472_091_234_310_835_f64;
        assert!((st.sq_grad[0] - 0.05).abs() < 1e-15);
        assert!((p[0] - (1.0 + dx)).abs() < 1e-15);
        assert!((st.sq_delta[0] - 0.05 * dx * dx).abs() < 1e-18);
    }

    #[test]
    fn adadelta_descends_on_a_parabola() {
        let cfg = AdadeltaConfig {
            lr_scale: 1.0,
            ..Default::default()
        };
        let mut x = vec![1.0];
        let mut st = AdadeltaState::new(1);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            adadelta_step(&mut x, &g, &mut st, &cfg).unwrap();
            assert!(x[0].abs() < prev);
            prev = x[0].abs();
        }
    }

    #[test]
    fn adadelta_zero_lr_is_identity() {
        let cfg = AdadeltaConfig {
            lr_scale: 0.0,
            ..Default::default()
        };
        let mut p = vec![0.3, -0.7];
        let mut st = AdadeltaState::new(2);
        for _ in 0..10 {
            adadelta_step(&mut p, &[5.0, -3.0], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adadelta_rejects_bad_gradients() {
        let cfg = AdadeltaConfig::default();
        let mut st = AdadeltaState::new(2);
        let mut p = vec![0.0, 0.0];
        assert!(matches!(
            adadelta_step(&mut p, &[1.0, f64::NAN], &mut st, &cfg),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(st, AdadeltaState::new(2));
        assert!(matches!(
            adadelta_step(&mut p, &[1.0], &mut st, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn grad_check_on_sum_of_squares() {
        let params = [0.3, -1.2, 2.5, 0.0];
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let loss = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let report = grad_check(loss, &params, &analytic, 1e-5, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.max_relative_error);
        assert!(report.max_relative_error < 1e-9);
    }

    #[test]
    fn grad_check_flags_a_corrupted_gradient() {
        let params = [0.3, -1.2, 2.5];
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p * 1.01).collect();
        let loss = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let report = grad_check(loss, &params, &analytic, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let r = grad_check(|p: &[f64]| p[0].ln(), &[0.0], &[1.0], 1e-5, 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
