//! Spectral-norm budgets for convolution layers.
//!
//! A convolution with zero padding on a fixed `(in_ch, H, W)` input is a linear
//! operator `A`. Its 2-norm is estimated by power iteration on `A^T A` with a
//! persistent, warm-started vector, and the kernel is projected back onto the
//! budget `||A|| <= c` after each optimizer step.
//!
//! The estimate is extracted by Rayleigh-Ritz over all power iterates
//! (Lanczos with full reorthogonalization) rather than from the last iterate
//! alone. Both use the same operator applications; the Ritz value converges
//! much faster when the top of the spectrum is clustered, as it is for
//! convolutions. It never exceeds the true norm and is non-decreasing in the
//! iteration count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d, conv2d_adjoint};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest materialized operator (in input columns) [`brute_force_operator_norm`] accepts.
pub const MAX_BRUTE_FORCE_COLUMNS: usize = 4096;

/// Cap on iterations added by the convergence extension.
const MAX_POWER_ITERS: usize = 64;

/// Ritz vectors folded into the stored warm-start vector.
const WARM_RITZ: usize = 3;

/// Residual threshold used during enforcement, as a fraction of the budget
/// slack. A looser stop lets the estimate settle on a cluster just below a
/// newly risen top direction.
const ENFORCE_TOL_FRACTION: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzBudget {
    /// Per-layer operator-norm bound, `0 < c < 1`.
    pub c: f64,
    /// Minimum power iterations per enforcement.
    pub power_iters: usize,
    /// Relative slack on the bound; also sets the convergence threshold of
    /// the power iteration.
    pub tol: f64,
}

impl LipschitzBudget {
    pub fn new(c: f64, power_iters: usize, tol: f64) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidArgument(format!("Lipschitz budget c={c} must lie in (0, 1)")));
        }
        if power_iters == 0 {
            return Err(Error::InvalidArgument("power_iters must be at least 1".into()));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
        }
        Ok(Self { c, power_iters, tol })
    }
}

impl Default for LipschitzBudget {
    fn default() -> Self {
        Self {
            c: 0.7,
            power_iters: 5,
            tol: 0.02,
        }
    }
}

/// Persistent right singular vector estimate for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterState {
    v: Tensor,
}

impl PowerIterState {
    /// Random unit vector over the `(in_ch, h, w)` input space.
    pub fn seeded(in_ch: usize, h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = in_ch * h * w;
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v = Tensor::new(&[1, in_ch, h, w], data).expect("extent product");
        normalize(&mut v);
        Self { v }
    }

    pub fn from_vector(v: Tensor) -> Result<Self> {
        let (b, ..) = v.dims4()?;
        if b != 1 {
            return Err(Error::shape("PowerIterState", "batch", 1, b));
        }
        let mut v = v;
        if v.norm() == 0.0 {
            return Err(Error::InvalidArgument("power iteration vector is zero".into()));
        }
        normalize(&mut v);
        Ok(Self { v })
    }

    pub fn vector(&self) -> &Tensor {
        &self.v
    }

    pub fn input_shape(&self) -> &[usize] {
        self.v.shape()
    }
}

fn normalize(v: &mut Tensor) -> f64 {
    let n = v.norm();
    if n > 0.0 {
        v.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn check_kernel(kernel: &Tensor, state: &PowerIterState) -> Result<()> {
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::shape("spectral_norm", "kernel rank", 4, ks.len()));
    }
    let in_ch = state.input_shape()[1];
    if ks[1] != in_ch {
        return Err(Error::shape("spectral_norm", "kernel input-channel axis", in_ch, ks[1]));
    }
    Ok(())
}

/// The stored vector plus an equal-norm random direction seeded by the kernel
/// bits. A warm start alone can sit in the span of a singular vector that has
/// been overtaken by another after a parameter update; the random part keeps
/// every direction in the Krylov space.
fn restart_vector(kernel: &Tensor, v: &Tensor) -> Vec<f64> {
    let seed = kernel
        .data()
        .iter()
        .fold(0x51_7c_c1_b7_27_22_0a_95u64, |h, x| (h.rotate_left(5) ^ x.to_bits()).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rn = dot(&r, &r).sqrt();
    r.iter_mut().zip(v.data()).for_each(|(x, y)| *x = *x / rn + y);
    let n = dot(&r, &r).sqrt();
    r.iter_mut().for_each(|x| *x /= n);
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Run at least `iters` power iterations from the stored vector; keep going
/// while the Ritz residual `||A^T A y - theta y||` exceeds `rel_tol * theta`
/// (up to an internal cap). Returns `||A y||` for the top unit Ritz vector
/// `y`. The stored vector becomes the normalized sum of the top few Ritz
/// vectors, so a direction that overtakes the current top one after a small
/// kernel update is already in the next Krylov space.
pub fn power_iterate(kernel: &Tensor, state: &mut PowerIterState, iters: usize, rel_tol: Option<f64>) -> Result<f64> {
    check_kernel(kernel, state)?;
    let shape = state.v.shape().to_vec();
    let mut basis: Vec<Vec<f64>> = vec![restart_vector(kernel, &state.v)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut ritz: Vec<nalgebra::DVector<f64>> = Vec::new();
    for j in 0.. {
        let q = Tensor::new(&shape, basis[j].clone())?;
        let mut w = conv2d_adjoint(&conv2d(&q, kernel, None)?, kernel, &shape)?.into_data();
        alpha.push(dot(&w, &basis[j]));
        // Two passes of Gram-Schmidt keep the basis orthogonal to rounding.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let m = alpha.len();
        let t = nalgebra::DMatrix::from_fn(m, m, |r, c| match r.abs_diff(c) {
            0 => alpha[r],
            1 => beta[r.min(c)],
            _ => 0.0,
        });
        let eig = nalgebra::SymmetricEigen::new(t);
        let top = eig.eigenvalues.imax();
        let next = eig.eigenvalues[top].max(0.0).sqrt();
        if next == 0.0 {
            return Ok(0.0);
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        ritz = order.iter().take(WARM_RITZ).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        let b = dot(&w, &w).sqrt();
        let exhausted = b <= 1e-12 * alpha.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        // ||A^T A y - theta y|| for the top Ritz pair (theta, y).
        let residual = b * ritz[0][m - 1].abs();
        let converged = !rel_tol.is_some_and(|t| residual > t * next * next);
        if exhausted || (m >= iters && (converged || m >= MAX_POWER_ITERS)) {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    let expand = |coefs: &nalgebra::DVector<f64>| {
        let mut v = vec![0.0; basis[0].len()];
        for (coef, b) in coefs.iter().zip(&basis) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += coef * y);
        }
        v
    };
    let mut top = Tensor::new(&shape, expand(&ritz[0]))?;
    normalize(&mut top);
    let estimate = conv2d(&top, kernel, None)?.norm();
    let mix = ritz.iter().skip(1).fold(ritz[0].clone(), |acc, r| acc + r);
    let mut warm = Tensor::new(&shape, expand(&mix))?;
    normalize(&mut warm);
    state.v = warm;
    Ok(estimate)
}

/// Power-iteration estimate of the operator norm of `kernel` applied to
/// inputs of shape `(in_ch, h, w)`, from a seeded starting vector.
pub fn spectral_norm_estimate(kernel: &Tensor, input_shape: [usize; 3], power_iters: usize, seed: u64) -> Result<f64> {
    let [c, h, w] = input_shape;
    let mut state = PowerIterState::seeded(c, h, w, seed);
    power_iterate(kernel, &mut state, power_iters, None)
}

/// Scale `kernel` by `min(1, c / sigma_hat)`, updating the persistent vector.
pub fn enforce_budget_with_state(kernel: &Tensor, budget: &LipschitzBudget, state: &mut PowerIterState) -> Result<Tensor> {
    let sigma = power_iterate(kernel, state, budget.power_iters, Some(budget.tol * ENFORCE_TOL_FRACTION))?;
    if sigma <= budget.c {
        return Ok(kernel.clone());
    }
    let s = budget.c / sigma;
    Ok(kernel.map(|v| v * s))
}

/// One-shot enforcement from a seeded vector.
pub fn enforce_budget(kernel: &Tensor, budget: &LipschitzBudget, input_shape: [usize; 3], seed: u64) -> Result<Tensor> {
    let [c, h, w] = input_shape;
    let mut state = PowerIterState::seeded(c, h, w, seed);
    enforce_budget_with_state(kernel, budget, &mut state)
}

/// Exact largest singular value of the materialized convolution operator.
pub fn brute_force_operator_norm(kernel: &Tensor, input_shape: [usize; 3]) -> Result<f64> {
    let [in_ch, h, w] = input_shape;
    let cols = in_ch * h * w;
    if cols > MAX_BRUTE_FORCE_COLUMNS {
        return Err(Error::InvalidArgument(format!(
            "operator with {cols} columns exceeds the {MAX_BRUTE_FORCE_COLUMNS}-column limit"
        )));
    }
    let out_ch = kernel
        .shape()
        .first()
        .copied()
        .ok_or_else(|| Error::shape("brute_force_operator_norm", "kernel rank", 4, 0))?;
    let rows = out_ch * h * w;
    let mut m = nalgebra::DMatrix::<f64>::zeros(rows, cols);
    let mut basis = Tensor::zeros(&[1, in_ch, h, w]);
    for j in 0..cols {
        basis.data_mut()[j] = 1.0;
        let col = conv2d(&basis, kernel, None)?;
        basis.data_mut()[j] = 0.0;
        for (i, &v) in col.data().iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m.singular_values().max())
}
