//! Entropy-smoothed Wasserstein distances with hard marginal constraints.
//!
//! `sinkhorn_distance` solves `min <C,T> - H(T)/lambda` over couplings of two
//! probability vectors by alternating diagonal scalings of the kernel
//! `exp(-lambda*C - 1)`. The matrix and tensor variants sum the per-column
//! values over unfoldings.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::tensor::{matricize, DataTensor};

use super::{make_kernel, CostMatrix, TransportHyperParams};

/// Residual below which the balanced iteration is declared converged.
const MARGINAL_TOL: f64 = 1e-9;

/// Converged plan of [`sinkhorn_distance`] with its objective pieces.
#[derive(Debug, Clone)]
pub struct SinkhornPlan {
    pub plan: Array2<f64>,
    /// `<C,T> - H(T)/lambda`.
    pub distance: f64,
    /// `<C,T>` alone.
    pub transport_cost: f64,
    /// Plan entropy `-sum T ln T`.
    pub entropy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest l1 marginal residual at exit.
    pub marginal_error: f64,
}

/// Per-mode breakdown of the tensor distance.
#[derive(Debug, Clone)]
pub struct WtdBreakdown {
    pub total: f64,
    pub by_mode: Vec<f64>,
}

/// Smoothed Wasserstein distance between two probability vectors.
///
/// Inputs are clamped at `h.floor` and renormalized to sum one. The
/// iteration budget is `h.sinkhorn_iters`; hitting it before the marginal
/// residual drops below 1e-9 is reported through `converged`, not an error.
pub fn sinkhorn_distance(
    a: &ArrayView1<f64>,
    b: &ArrayView1<f64>,
    c: &CostMatrix,
    h: &TransportHyperParams,
) -> Result<SinkhornPlan> {
    h.validate()?;
    let m = c.size();
    if a.len() != m || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {} against {m}x{m} cost",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidValue(
            "marginals must be finite and nonnegative".into(),
        ));
    }
    let a = normalized(a, h.floor);
    let b = normalized(b, h.floor);
    let kernel = make_kernel(c, h.lambda);
    sinkhorn_core(&a, &b, &kernel, c, h)
}

fn normalized(x: &ArrayView1<f64>, floor: f64) -> Array1<f64> {
    let floored = x.mapv(|v| v.max(floor));
    let sum = floored.sum();
    floored / sum
}

fn sinkhorn_core(
    a: &Array1<f64>,
    b: &Array1<f64>,
    kernel: &Array2<f64>,
    c: &CostMatrix,
    h: &TransportHyperParams,
) -> Result<SinkhornPlan> {
    let m = a.len();
    let mut u = Array1::from_elem(m, 1.0 / m as f64);
    let mut v = Array1::from_elem(m, 1.0 / m as f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < h.sinkhorn_iters {
        let kv = kernel.dot(&v);
        u = a / &kv;
        let ktu = kernel.t().dot(&u);
        v = b / &ktu;
        iterations += 1;
        if u.iter().chain(v.iter()).any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "balanced scaling iteration {iterations}"
            )));
        }
        // After the v step the column sums are exact; the residual lives in
        // the rows.
        let row = &u * &kernel.dot(&v);
        let res: f64 = (&row - a).mapv(f64::abs).sum();
        if res < MARGINAL_TOL {
            converged = true;
            break;
        }
    }

    let mut plan = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            plan[(i, j)] = u[i] * kernel[(i, j)] * v[j];
        }
    }
    let transport_cost = (&plan * c.entries()).sum();
    let entropy = -plan
        .iter()
        .map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 })
        .sum::<f64>();
    let distance = transport_cost - entropy / h.lambda;

    let row_err: f64 = (&plan.sum_axis(ndarray::Axis(1)) - a).mapv(f64::abs).sum();
    let col_err: f64 = (&plan.sum_axis(ndarray::Axis(0)) - b).mapv(f64::abs).sum();
    Ok(SinkhornPlan {
        plan,
        distance,
        transport_cost,
        entropy,
        iterations,
        converged,
        marginal_error: row_err.max(col_err),
    })
}

/// Sum of per-column smoothed Wasserstein values between two equally shaped
/// nonnegative matrices; columns are the distributions.
pub fn wasserstein_matrix_distance(
    a_mat: &Array2<f64>,
    b_mat: &Array2<f64>,
    c: &CostMatrix,
    h: &TransportHyperParams,
) -> Result<f64> {
    if a_mat.dim() != b_mat.dim() {
        return Err(Error::ShapeMismatch(format!(
            "matrix distance shapes {:?} vs {:?}",
            a_mat.dim(),
            b_mat.dim()
        )));
    }
    if a_mat.nrows() != c.size() {
        return Err(Error::ShapeMismatch(format!(
            "matrix rows {} vs cost size {}",
            a_mat.nrows(),
            c.size()
        )));
    }
    let mut total = 0.0;
    for (col_a, col_b) in a_mat.columns().into_iter().zip(b_mat.columns()) {
        total += sinkhorn_distance(&col_a, &col_b, c, h)?.distance;
    }
    Ok(total)
}

/// Sum of matrix distances over every mode unfolding, with the per-mode
/// contributions reported alongside the total.
pub fn wasserstein_tensor_distance(
    x: &DataTensor,
    y: &DataTensor,
    costs: &[CostMatrix],
    h: &TransportHyperParams,
) -> Result<WtdBreakdown> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "tensor shapes {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if costs.len() != x.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} cost matrices for order-{} tensor",
            costs.len(),
            x.order()
        )));
    }
    for (n, c) in costs.iter().enumerate() {
        if c.size() != x.shape()[n] {
            return Err(Error::ShapeMismatch(format!(
                "cost {n} is {}x{} but extent is {}",
                c.size(),
                c.size(),
                x.shape()[n]
            )));
        }
    }
    let mut by_mode = Vec::with_capacity(x.order());
    for (n, c) in costs.iter().enumerate() {
        let xm = matricize(x, n)?;
        let ym = matricize(y, n)?;
        by_mode.push(wasserstein_matrix_distance(&xm, &ym, c, h)?);
    }
    Ok(WtdBreakdown {
        total: by_mode.iter().sum(),
        by_mode,
    })
}
