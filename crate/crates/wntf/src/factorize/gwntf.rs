//! The alternating transport-loss fit.
//!
//! Each outer iteration refreshes every participating mode's transport
//! scalings against the reconstruction from the previous iteration (a
//! Jacobi-style refresh, cold-started from `V = ones / I_n`), then runs one
//! multiplicative sweep over the factors with the target marginals held
//! fixed. The sample-mode update additionally carries the graph terms: the
//! affinity product enters the numerator and the degree product the
//! denominator, pulling each sample's row toward its neighbors' average.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{smoothness, AffinityGraph};
use crate::tensor::{coproduct_matrix, matricize, DataTensor, KruskalFactors};
use crate::transport::{
    kl_divergence_floored, make_kernel, marginals, update_scalings, CostMatrix, TransportState,
};

use super::{
    init_factors, window_converged, FitReport, GwntfConfig, ObjectiveBreakdown, PhaseTimings,
};

/// One multiplicative update of the factor for `mode` against a fixed
/// target marginal: `A .* ((target ./ (A B^T)) B) ./ (1 B)` with `B` the
/// coproduct of the remaining factors. Nonnegativity is preserved; the
/// reconstruction and the denominator are clamped at `floor`.
pub fn update_factor(
    factors: &KruskalFactors,
    mode: usize,
    target: &Array2<f64>,
    floor: f64,
) -> Result<Array2<f64>> {
    let coprod = coproduct_matrix(factors, mode)?;
    multiplicative_step(factors.factor(mode), &coprod, target, floor, None)
}

/// Sample-mode update with the graph-smoothness terms:
/// numerator `beta * (target ./ (A B^T)) B + mu * V A`, denominator
/// `beta * 1 B + mu * D A`.
pub fn update_sample_factor(
    factors: &KruskalFactors,
    graph: &AffinityGraph,
    target: &Array2<f64>,
    beta: f64,
    mu: f64,
    floor: f64,
) -> Result<Array2<f64>> {
    let mode = factors.order() - 1;
    let a = factors.factor(mode);
    if graph.len() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "graph over {} samples against factor with {} rows",
            graph.len(),
            a.nrows()
        )));
    }
    let coprod = coproduct_matrix(factors, mode)?;
    multiplicative_step(a, &coprod, target, floor, Some((graph, beta, mu)))
}

fn multiplicative_step(
    a: &Array2<f64>,
    coprod: &Array2<f64>,
    target: &Array2<f64>,
    floor: f64,
    graph: Option<(&AffinityGraph, f64, f64)>,
) -> Result<Array2<f64>> {
    let (rows, rank) = a.dim();
    if target.dim() != (rows, coprod.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} against factor {}x{} and coproduct {}x{}",
            target.dim(),
            rows,
            rank,
            coprod.nrows(),
            coprod.ncols()
        )));
    }
    if target.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidValue(
            "target marginal must be finite and nonnegative".into(),
        ));
    }
    if !(floor > 0.0) {
        return Err(Error::Config(format!("floor must be > 0, got {floor}")));
    }

    let recon = a.dot(&coprod.t());
    let ratio = target / &recon.mapv(|v| v.max(floor));
    let mut numerator = ratio.dot(coprod);
    let col_sums = coprod.sum_axis(ndarray::Axis(0));
    let mut next = Array2::zeros((rows, rank));
    match graph {
        None => {
            for i in 0..rows {
                for r in 0..rank {
                    next[(i, r)] = a[(i, r)] * numerator[(i, r)] / col_sums[r].max(floor);
                }
            }
        }
        Some((g, beta, mu)) => {
            numerator.mapv_inplace(|v| v * beta);
            numerator += &(g.weights().dot(a) * mu);
            for i in 0..rows {
                let degree = g.degrees()[i];
                for r in 0..rank {
                    let den = beta * col_sums[r] + mu * degree * a[(i, r)];
                    next[(i, r)] = a[(i, r)] * numerator[(i, r)] / den.max(floor);
                }
            }
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("multiplicative factor update".into()));
    }
    Ok(next)
}

/// Objective value and per-term breakdown for the current factors and
/// transport states. Each state contributes the transport cost, the
/// (1/lambda)-weighted negative plan entropy, and the two marginal KL
/// penalties of its mode; the graph penalty is evaluated on the last
/// factor. Excluded modes contribute nothing.
pub fn gwntf_objective(
    x: &DataTensor,
    factors: &KruskalFactors,
    states: &[TransportState],
    costs: &[CostMatrix],
    graph: &AffinityGraph,
    cfg: &GwntfConfig,
) -> Result<ObjectiveBreakdown> {
    let x_unfs: Vec<Array2<f64>> = (0..x.order())
        .map(|n| matricize(x, n))
        .collect::<Result<_>>()?;
    objective_with_unfoldings(&x_unfs, factors, states, costs, graph, cfg)
}

fn objective_with_unfoldings(
    x_unfs: &[Array2<f64>],
    factors: &KruskalFactors,
    states: &[TransportState],
    costs: &[CostMatrix],
    graph: &AffinityGraph,
    cfg: &GwntfConfig,
) -> Result<ObjectiveBreakdown> {
    let h = &cfg.transport;
    let floor = h.floor;
    let mut transport_cost = 0.0;
    let mut entropy = 0.0;
    let mut source_kl = 0.0;
    let mut target_kl = 0.0;
    for state in states {
        let n = state.mode();
        if n >= factors.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: factors.order(),
            });
        }
        let cost = &costs[n];
        let x_unf = &x_unfs[n];
        let coprod = coproduct_matrix(factors, n)?;
        let xhat = factors.factor(n).dot(&coprod.t()).mapv(|v| v.max(floor));

        let m = marginals(state);
        let kc = state.kernel() * cost.entries();
        let tc = (state.scale_u() * &kc.dot(state.scale_v())).sum();
        let mass = m.source.sum();
        // <T, ln T> decomposes as <Phi, ln U> + <Psi, ln V> + <T, ln K>,
        // and ln K = -lambda*C - 1 gives <T, ln K> = -lambda*tc - mass.
        let t_ln_t =
            sum_x_ln_y(&m.source, state.scale_u()) + sum_x_ln_y(&m.target, state.scale_v())
                - h.lambda * tc
                - mass;
        transport_cost += tc;
        entropy += t_ln_t / h.lambda;
        source_kl += h.alpha * kl_divergence_floored(&m.source, x_unf, floor)?;
        target_kl += h.beta * kl_divergence_floored(&m.target, &xhat, floor)?;
    }
    let graph_term = cfg.mu * smoothness(graph, factors.factor(factors.order() - 1))?;
    let total = transport_cost + entropy + source_kl + target_kl + graph_term;
    if !total.is_finite() {
        return Err(Error::NonFinite("objective evaluation".into()));
    }
    Ok(ObjectiveBreakdown {
        total,
        transport_cost,
        entropy,
        source_kl,
        target_kl,
        graph: graph_term,
    })
}

/// `sum w * ln(s)` over entries with `w > 0`.
fn sum_x_ln_y(w: &Array2<f64>, s: &Array2<f64>) -> f64 {
    w.iter()
        .zip(s.iter())
        .map(|(&wi, &si)| {
            if wi > 0.0 {
                wi * si.max(f64::MIN_POSITIVE).ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Default per-mode ground costs: squared coordinate distance on each
/// mode's index grid, normalized to a unit maximum.
pub(crate) fn default_costs(shape: &[usize]) -> Result<Vec<CostMatrix>> {
    shape
        .iter()
        .map(|&extent| crate::transport::grid_cost(extent, 2.0, true))
        .collect()
}

/// Runs the alternating fit with the default grid costs.
pub fn gwntf_fit(x: &DataTensor, graph: &AffinityGraph, cfg: &GwntfConfig) -> Result<FitReport> {
    let costs = default_costs(x.shape())?;
    gwntf_fit_with_costs(x, graph, &costs, cfg)
}

/// Runs the alternating fit with caller-provided ground costs (one per
/// mode, sized to the mode extents).
pub fn gwntf_fit_with_costs(
    x: &DataTensor,
    graph: &AffinityGraph,
    costs: &[CostMatrix],
    cfg: &GwntfConfig,
) -> Result<FitReport> {
    let order = x.order();
    let modes = cfg.validate(order)?;
    if costs.len() != order {
        return Err(Error::ShapeMismatch(format!(
            "{} cost matrices for order-{order} tensor",
            costs.len()
        )));
    }
    for (n, c) in costs.iter().enumerate() {
        if c.size() != x.shape()[n] {
            return Err(Error::ShapeMismatch(format!(
                "cost {n} has size {} but mode extent is {}",
                c.size(),
                x.shape()[n]
            )));
        }
    }
    let samples = x.shape()[order - 1];
    if graph.len() != samples {
        return Err(Error::ShapeMismatch(format!(
            "graph over {} nodes against {samples} samples",
            graph.len()
        )));
    }

    let h = cfg.transport;
    let floor = h.floor;
    let x = preprocess(x, floor)?;
    let x_unfs: Vec<Array2<f64>> = (0..order)
        .map(|n| matricize(&x, n))
        .collect::<Result<_>>()?;
    let kernels: BTreeMap<usize, Arc<Array2<f64>>> = modes
        .iter()
        .map(|&n| (n, Arc::new(make_kernel(&costs[n], h.lambda))))
        .collect();

    let mut factors = init_factors(x.shape(), cfg.rank, cfg.seed, x.total_mass())?;
    let mut trace: Vec<ObjectiveBreakdown> = Vec::new();
    let mut timings = PhaseTimings::default();
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 0..cfg.max_outer_iters {
        let t0 = Instant::now();
        let mut states = Vec::with_capacity(modes.len());
        for &n in &modes {
            let coprod = coproduct_matrix(&factors, n)?;
            let xhat = factors.factor(n).dot(&coprod.t()).mapv(|v| v.max(floor));
            let init = TransportState::init(n, Arc::clone(&kernels[&n]), xhat.ncols())?;
            let state =
                update_scalings(&x_unfs[n], &xhat, &init, &h).map_err(|e| at_iteration(e, iter))?;
            states.push(state);
        }
        timings.transport_s += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        // target marginals are frozen for the whole sweep; coproducts track
        // the freshest factors
        let psi: BTreeMap<usize, Array2<f64>> = states
            .iter()
            .map(|s| (s.mode(), marginals(s).target))
            .collect();
        for n in 0..order - 1 {
            let target = psi.get(&n).unwrap_or(&x_unfs[n]);
            let next =
                update_factor(&factors, n, target, floor).map_err(|e| at_iteration(e, iter))?;
            factors.set_factor(n, next)?;
        }
        let last = order - 1;
        let target = psi.get(&last).unwrap_or(&x_unfs[last]);
        let next = update_sample_factor(&factors, graph, target, h.beta, cfg.mu, floor)
            .map_err(|e| at_iteration(e, iter))?;
        factors.set_factor(last, next)?;
        timings.factors_s += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let breakdown = objective_with_unfoldings(&x_unfs, &factors, &states, costs, graph, cfg)
            .map_err(|e| at_iteration(e, iter))?;
        timings.objective_s += t2.elapsed().as_secs_f64();
        trace.push(breakdown);
        iterations_run = iter + 1;

        let totals: Vec<f64> = trace.iter().map(|b| b.total).collect();
        if window_converged(&totals, cfg.tol) {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        factors,
        objective_trace: trace,
        iterations_run,
        converged,
        timings,
    })
}

/// Rescales to a unit maximum and lifts any all-zero sample slice to the
/// floor so its marginals stay well defined.
fn preprocess(x: &DataTensor, floor: f64) -> Result<DataTensor> {
    let scaled = x.scaled_to_unit();
    let order = scaled.order();
    let samples = scaled.shape()[order - 1];
    let block = scaled.len() / samples;
    let mut values = scaled.values().to_vec();
    for s in 0..samples {
        let range = s * block..(s + 1) * block;
        if values[range.clone()].iter().all(|&v| v == 0.0) {
            values[range].fill(floor);
        }
    }
    DataTensor::new(scaled.shape().to_vec(), values)
}

fn at_iteration(e: Error, iter: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("outer iteration {iter}: {msg}")),
        other => other,
    }
}
