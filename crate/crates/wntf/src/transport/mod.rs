//! Entropic optimal transport over tensor unfoldings.
//!
//! Each mode n of a tensor pair carries a ground-cost matrix `C_n` and a
//! kernel `K_n = exp(-lambda * C_n - 1)`. A transport plan slice for column
//! `j` of the unfolding is the diagonal scaling `diag(u_j) K_n diag(v_j)`;
//! the scaling columns for all slices are kept as matrices `U_n`, `V_n` of
//! the same shape as the unfolding. The marginal-relaxed scaling updates are
//!
//! ```text
//! phi = lambda*alpha / (lambda*alpha + 1)
//! psi = lambda*beta  / (lambda*beta  + 1)
//! V <- Xhat^psi ./ (K^T (X^phi ./ (K V)^phi))^psi     (repeated)
//! U <- X^phi ./ (K V)^phi
//! ```
//!
//! with all powers and divisions elementwise. `phi = psi = 0` collapses both
//! scalings to ones; as `lambda*alpha` grows the source marginal
//! `U .* (K V)` is pushed onto the unfolding `X` itself.

mod exact;
mod sinkhorn;

pub use exact::{exact_ot, ExactPlan, EXACT_OT_LIMIT};
pub use sinkhorn::{
    sinkhorn_distance, wasserstein_matrix_distance, wasserstein_tensor_distance, SinkhornPlan,
    WtdBreakdown,
};

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp applied before divisions and logarithms.
pub const DEFAULT_FLOOR: f64 = 1e-12;

/// Clamp for kernel entries. Only guards against hard underflow to zero so
/// the kernel stays strictly positive; anything larger would silently cap
/// the effective ground cost at high sharpness.
pub const KERNEL_FLOOR: f64 = f64::MIN_POSITIVE;

/// Symmetric nonnegative ground-distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::ShapeMismatch(format!(
                "cost matrix must be square, got {r}x{c}"
            )));
        }
        for i in 0..r {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidValue(format!(
                    "cost diagonal must be zero, entry ({i},{i}) = {}",
                    entries[(i, i)]
                )));
            }
            for j in 0..c {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidValue(format!(
                        "cost entry ({i},{j}) = {v} must be finite and nonnegative"
                    )));
                }
                let d = (v - entries[(j, i)]).abs();
                if d > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::InvalidValue(format!(
                        "cost matrix asymmetric at ({i},{j}): {v} vs {}",
                        entries[(j, i)]
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Coordinate ground cost `C(i,j) = |i - j|^q` on a 1-D grid, optionally
/// normalized so the largest entry is 1.
pub fn grid_cost(n: usize, exponent: f64, normalize: bool) -> Result<CostMatrix> {
    if n == 0 {
        return Err(Error::InvalidValue("grid_cost needs n >= 1".into()));
    }
    if exponent <= 0.0 {
        return Err(Error::InvalidValue(format!(
            "grid_cost exponent must be positive, got {exponent}"
        )));
    }
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            entries[(i, j)] = ((i as f64) - (j as f64)).abs().powf(exponent);
        }
    }
    if normalize && n > 1 {
        let max = ((n - 1) as f64).powf(exponent);
        entries.mapv_inplace(|v| v / max);
    }
    CostMatrix::new(entries)
}

/// Hyperparameters of the marginal-relaxed entropic transport problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportHyperParams {
    /// Entropic sharpness lambda > 0.
    pub lambda: f64,
    /// Source-marginal KL weight alpha >= 0.
    pub alpha: f64,
    /// Target-marginal KL weight beta >= 0.
    pub beta: f64,
    /// Inner scaling-sweep budget.
    pub sinkhorn_iters: usize,
    /// Clamp applied before divisions and logarithms.
    pub floor: f64,
}

impl Default for TransportHyperParams {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            alpha: 1.0,
            beta: 1.0,
            sinkhorn_iters: 10,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl TransportHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "alpha and beta must be >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be >= 1".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config(format!("floor must be > 0, got {}", self.floor)));
        }
        Ok(())
    }

    /// Source-marginal exponent `lambda*alpha / (lambda*alpha + 1)` in [0, 1).
    pub fn phi(&self) -> f64 {
        let t = self.lambda * self.alpha;
        t / (t + 1.0)
    }

    /// Target-marginal exponent `lambda*beta / (lambda*beta + 1)` in [0, 1).
    pub fn psi(&self) -> f64 {
        let t = self.lambda * self.beta;
        t / (t + 1.0)
    }
}

/// Kernel `K = exp(-lambda * C - 1)`, entries clamped below at `floor`.
pub fn make_kernel_with_floor(c: &CostMatrix, lambda: f64, floor: f64) -> Array2<f64> {
    c.entries().mapv(|v| (-lambda * v - 1.0).exp().max(floor))
}

/// Kernel with the minimal strict-positivity clamp ([`KERNEL_FLOOR`]).
pub fn make_kernel(c: &CostMatrix, lambda: f64) -> Array2<f64> {
    make_kernel_with_floor(c, lambda, KERNEL_FLOOR)
}

/// Scaling state for one mode: the plan slice for unfolding column j is
/// `diag(U[:,j]) K diag(V[:,j])`. Immutable; updates return new states.
#[derive(Debug, Clone)]
pub struct TransportState {
    mode: usize,
    kernel: Arc<Array2<f64>>,
    scale_u: Array2<f64>,
    scale_v: Array2<f64>,
}

impl TransportState {
    /// Fresh state with `U = ones` and `V = ones / I_n`.
    pub fn init(mode: usize, kernel: Arc<Array2<f64>>, co_extent: usize) -> Result<Self> {
        let n = kernel.nrows();
        if kernel.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "kernel must be square, got {}x{}",
                n,
                kernel.ncols()
            )));
        }
        if co_extent == 0 {
            return Err(Error::ShapeMismatch("co_extent must be positive".into()));
        }
        Ok(Self {
            mode,
            kernel,
            scale_u: Array2::from_elem((n, co_extent), 1.0),
            scale_v: Array2::from_elem((n, co_extent), 1.0 / n as f64),
        })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn scale_u(&self) -> &Array2<f64> {
        &self.scale_u
    }

    pub fn scale_v(&self) -> &Array2<f64> {
        &self.scale_v
    }

    /// Total plan mass summed over all slices.
    pub fn total_mass(&self) -> f64 {
        (&self.scale_u * &self.kernel.dot(&self.scale_v)).sum()
    }
}

/// Per-slice row sums (source) and column sums (target) of the plan.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
}

/// Runs the inner scaling loop against a source unfolding `x_unf` and a
/// target unfolding `xhat_unf`, both `I_n x I_{-n}` and nonnegative.
///
/// Performs `h.sinkhorn_iters` sweeps of the V update, then recomputes U
/// from the final V. Returns a new state; the input is untouched.
pub fn update_scalings(
    x_unf: &Array2<f64>,
    xhat_unf: &Array2<f64>,
    state: &TransportState,
    h: &TransportHyperParams,
) -> Result<TransportState> {
    h.validate()?;
    let dim = state.scale_u.dim();
    if x_unf.dim() != dim || xhat_unf.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "unfoldings {:?} / {:?} do not match state {:?}",
            x_unf.dim(),
            xhat_unf.dim(),
            dim
        )));
    }
    let phi = h.phi();
    let psi = h.psi();
    let floor = h.floor;
    let kernel = &state.kernel;

    let x_phi = x_unf.mapv(|t| t.max(floor).powf(phi));
    let xhat_psi = xhat_unf.mapv(|t| t.max(floor).powf(psi));

    let mut v = state.scale_v.clone();
    for sweep in 0..h.sinkhorn_iters {
        let kv = kernel.dot(&v);
        let u = &x_phi / &kv.mapv(|t| t.max(floor).powf(phi));
        let ktu = kernel.t().dot(&u);
        v = &xhat_psi / &ktu.mapv(|t| t.max(floor).powf(psi));
        if u.iter().chain(v.iter()).any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "scaling sweep {sweep} for mode {}",
                state.mode
            )));
        }
    }
    let kv = kernel.dot(&v);
    let u = &x_phi / &kv.mapv(|t| t.max(floor).powf(phi));
    if u.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!(
            "final scaling recompute for mode {}",
            state.mode
        )));
    }
    Ok(TransportState {
        mode: state.mode,
        kernel: Arc::clone(kernel),
        scale_u: u,
        scale_v: v,
    })
}

/// Source marginal `U .* (K V)` and target marginal `V .* (K^T U)`.
pub fn marginals(state: &TransportState) -> Marginals {
    let source = &state.scale_u * &state.kernel.dot(&state.scale_v);
    let target = &state.scale_v * &state.kernel.t().dot(&state.scale_u);
    Marginals { source, target }
}

/// Generalized KL divergence `sum x*ln(x/y) - x + y` with `y` clamped at
/// [`DEFAULT_FLOOR`] and the `0 ln 0 = 0` convention.
pub fn kl_divergence(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    kl_divergence_floored(x, y, DEFAULT_FLOOR)
}

pub fn kl_divergence_floored(x: &Array2<f64>, y: &Array2<f64>, floor: f64) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "kl_divergence shapes {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let mut total = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        let yf = yi.max(floor);
        if xi > 0.0 {
            total += xi * (xi.ln() - yf.ln()) - xi + yf;
        } else {
            total += yf;
        }
    }
    Ok(total)
}
