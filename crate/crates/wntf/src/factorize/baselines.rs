//! KL-divergence baselines: multiplicative CP factorization with and
//! without the graph penalty, and the matrix analogues on the sample-mode
//! unfolding. They reuse the transport fit's initialization, flooring, and
//! stopping machinery so experiment comparisons isolate the loss.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::tensor::{coproduct_matrix, matricize, DataTensor, KruskalFactors};
use crate::transport::{kl_divergence_floored, DEFAULT_FLOOR};

use super::{init_factors, update_factor, update_sample_factor, window_converged};

/// Shared knobs of the baseline fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub floor: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-5,
            seed: 0,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl BaselineOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) || !(self.floor > 0.0) {
            return Err(Error::Config(
                "tol and floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// CP fit result with the per-sweep KL trace.
#[derive(Debug, Clone)]
pub struct CpFit {
    pub factors: KruskalFactors,
    pub kl_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Matrix factorization result `X ~ W H`; rows of `W` are the sample
/// embedding.
#[derive(Debug, Clone)]
pub struct MatrixFit {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub kl_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// KL-loss nonnegative CP factorization by multiplicative sweeps.
pub fn ncp_fit(x: &DataTensor, rank: usize, opts: &BaselineOptions) -> Result<CpFit> {
    kl_cp_fit(x, rank, None, opts)
}

/// [`ncp_fit`] with the sample-mode update carrying graph terms of weight
/// `mu`.
pub fn gncp_fit(
    x: &DataTensor,
    rank: usize,
    graph: &AffinityGraph,
    mu: f64,
    opts: &BaselineOptions,
) -> Result<CpFit> {
    kl_cp_fit(x, rank, Some((graph, mu)), opts)
}

fn kl_cp_fit(
    x: &DataTensor,
    rank: usize,
    graph: Option<(&AffinityGraph, f64)>,
    opts: &BaselineOptions,
) -> Result<CpFit> {
    opts.validate()?;
    if rank == 0 {
        return Err(Error::Config("rank must be >= 1".into()));
    }
    if let Some((g, mu)) = graph {
        if g.len() != x.shape()[x.order() - 1] {
            return Err(Error::ShapeMismatch(format!(
                "graph over {} nodes against {} samples",
                g.len(),
                x.shape()[x.order() - 1]
            )));
        }
        if mu < 0.0 {
            return Err(Error::Config(format!("mu must be >= 0, got {mu}")));
        }
    }
    let x = x.scaled_to_unit();
    let order = x.order();
    let x_unfs: Vec<Array2<f64>> = (0..order)
        .map(|n| matricize(&x, n))
        .collect::<Result<_>>()?;
    let mut factors = init_factors(x.shape(), rank, opts.seed, x.total_mass())?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    for _ in 0..opts.max_iters {
        for n in 0..order {
            let next = match (n == order - 1, graph) {
                (true, Some((g, mu))) => {
                    update_sample_factor(&factors, g, &x_unfs[n], 1.0, mu, opts.floor)?
                }
                _ => update_factor(&factors, n, &x_unfs[n], opts.floor)?,
            };
            factors.set_factor(n, next)?;
        }
        let coprod = coproduct_matrix(&factors, 0)?;
        let recon = factors.factor(0).dot(&coprod.t()).mapv(|v| v.max(opts.floor));
        trace.push(kl_divergence_floored(&x_unfs[0], &recon, opts.floor)?);
        iterations_run += 1;
        if window_converged(&trace, opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(CpFit {
        factors,
        kl_trace: trace,
        iterations_run,
        converged,
    })
}

/// KL-loss nonnegative matrix factorization of a samples-by-features
/// matrix.
pub fn nmf_fit(x_mat: &Array2<f64>, rank: usize, opts: &BaselineOptions) -> Result<MatrixFit> {
    kl_nmf_fit(x_mat, rank, None, opts)
}

/// [`nmf_fit`] with the sample factor smoothed over `graph` at weight
/// `lambda_g`.
pub fn gnmf_fit(
    x_mat: &Array2<f64>,
    rank: usize,
    graph: &AffinityGraph,
    lambda_g: f64,
    opts: &BaselineOptions,
) -> Result<MatrixFit> {
    kl_nmf_fit(x_mat, rank, Some((graph, lambda_g)), opts)
}

fn kl_nmf_fit(
    x_mat: &Array2<f64>,
    rank: usize,
    graph: Option<(&AffinityGraph, f64)>,
    opts: &BaselineOptions,
) -> Result<MatrixFit> {
    opts.validate()?;
    if rank == 0 {
        return Err(Error::Config("rank must be >= 1".into()));
    }
    if x_mat.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidValue(
            "matrix entries must be finite and nonnegative".into(),
        ));
    }
    if let Some((g, lg)) = graph {
        if g.len() != x_mat.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "graph over {} nodes against {} sample rows",
                g.len(),
                x_mat.nrows()
            )));
        }
        if lg < 0.0 {
            return Err(Error::Config(format!(
                "graph weight must be >= 0, got {lg}"
            )));
        }
    }
    let max = x_mat.iter().cloned().fold(0.0, f64::max);
    let x = if max > 0.0 { x_mat / max } else { x_mat.clone() };
    let (n, d) = x.dim();
    let floor = opts.floor;

    // same seeded-uniform, mass-matched initialization as the tensor fits
    let pair = init_factors(&[n, d], rank, opts.seed, x.sum())?;
    let mut w = pair.factor(0).clone();
    let mut h = pair.factor(1).t().to_owned();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    for _ in 0..opts.max_iters {
        // W update
        let wh = w.dot(&h).mapv(|v| v.max(floor));
        let ratio = &x / &wh;
        let mut num = ratio.dot(&h.t());
        let h_row_sums = h.sum_axis(Axis(1));
        match graph {
            None => {
                for i in 0..n {
                    for r in 0..rank {
                        w[(i, r)] *= num[(i, r)] / h_row_sums[r].max(floor);
                    }
                }
            }
            Some((g, lg)) => {
                num += &(g.weights().dot(&w) * lg);
                for i in 0..n {
                    let degree = g.degrees()[i];
                    for r in 0..rank {
                        let den = h_row_sums[r] + lg * degree * w[(i, r)];
                        w[(i, r)] *= num[(i, r)] / den.max(floor);
                    }
                }
            }
        }
        // H update
        let wh = w.dot(&h).mapv(|v| v.max(floor));
        let ratio = &x / &wh;
        let num = w.t().dot(&ratio);
        let w_col_sums = w.sum_axis(Axis(0));
        for r in 0..rank {
            for j in 0..d {
                h[(r, j)] *= num[(r, j)] / w_col_sums[r].max(floor);
            }
        }
        if w.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix factor update".into()));
        }
        let recon = w.dot(&h).mapv(|v| v.max(floor));
        trace.push(kl_divergence_floored(&x, &recon, floor)?);
        iterations_run += 1;
        if window_converged(&trace, opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(MatrixFit {
        w,
        h,
        kl_trace: trace,
        iterations_run,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn, Weighting};
    use crate::graph::smoothness;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DataTensor {
        let len = shape.iter().product();
        DataTensor::new(
            shape.to_vec(),
            (0..len).map(|_| rng.random_range(0.05..1.0)).collect(),
        )
        .unwrap()
    }

    fn two_cluster_tensor(rng: &mut ChaCha8Rng) -> (DataTensor, AffinityGraph) {
        // ten samples, two well-separated rank-one templates
        let mut values = Vec::new();
        for s in 0..10 {
            let (u, v): (Vec<f64>, Vec<f64>) = if s < 5 {
                ((0..4).map(|i| 0.2 + 0.1 * i as f64).collect(), (0..3).map(|j| 0.9 - 0.2 * j as f64).collect())
            } else {
                ((0..4).map(|i| 0.9 - 0.15 * i as f64).collect(), (0..3).map(|j| 0.2 + 0.25 * j as f64).collect())
            };
            for j in 0..3 {
                for i in 0..4 {
                    values.push(u[i] * v[j] * (1.0 + 0.05 * rng.random_range(-1.0..1.0)));
                }
            }
        }
        let x = DataTensor::new(vec![4, 3, 10], values).unwrap();
        let flat = matricize(&x, 2).unwrap();
        let graph = build_knn(&flat, 3, Weighting::Binary).unwrap();
        (x, graph)
    }

    #[test]
    fn ncp_recovers_rank_one_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..1.0)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..1.0)).collect();
        let mut values = Vec::new();
        for j in 0..5 {
            for i in 0..4 {
                values.push(u[i] * v[j]);
            }
        }
        let x = DataTensor::new(vec![4, 5], values).unwrap();
        let fit = ncp_fit(&x, 1, &BaselineOptions {
            max_iters: 300,
            tol: 1e-12,
            ..Default::default()
        })
        .unwrap();
        let first = fit.kl_trace[0];
        let last = *fit.kl_trace.last().unwrap();
        assert!(last < 1e-6 * first.max(1e-9), "KL {last} vs initial {first}");
    }

    #[test]
    fn ncp_trace_non_increasing_and_nonnegative_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, &[5, 6, 7]);
        let fit = ncp_fit(&x, 3, &BaselineOptions {
            max_iters: 100,
            tol: 1e-12,
            ..Default::default()
        })
        .unwrap();
        for w in fit.kl_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "KL rose: {w:?}");
        }
        assert!(fit
            .factors
            .factors()
            .iter()
            .all(|f| f.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn gncp_with_zero_mu_matches_ncp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, graph) = two_cluster_tensor(&mut rng);
        let opts = BaselineOptions {
            max_iters: 40,
            tol: 1e-12,
            seed: 5,
            ..Default::default()
        };
        let plain = ncp_fit(&x, 2, &opts).unwrap();
        let strong = gncp_fit(&x, 2, &graph, 0.0, &opts).unwrap();
        assert_eq!(plain.kl_trace, strong.kl_trace);
    }

    #[test]
    fn gncp_smooths_more_than_ncp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, graph) = two_cluster_tensor(&mut rng);
        let opts = BaselineOptions {
            max_iters: 60,
            tol: 1e-12,
            seed: 5,
            ..Default::default()
        };
        let plain = ncp_fit(&x, 2, &opts).unwrap();
        let regularized = gncp_fit(&x, 2, &graph, 1e4, &opts).unwrap();
        let s_plain = smoothness(&graph, plain.factors.factor(2)).unwrap();
        let s_reg = smoothness(&graph, regularized.factors.factor(2)).unwrap();
        assert!(
            s_reg < s_plain,
            "regularized smoothness {s_reg} vs plain {s_plain}"
        );
    }

    #[test]
    fn nmf_recovers_rank_one_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..1.0)).collect();
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..1.0)).collect();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| u[i] * v[j]);
        let fit = nmf_fit(&x, 1, &BaselineOptions {
            max_iters: 400,
            tol: 1e-13,
            ..Default::default()
        })
        .unwrap();
        let first = fit.kl_trace[0];
        let last = *fit.kl_trace.last().unwrap();
        assert!(last < 1e-6 * first.max(1e-9));
    }

    #[test]
    fn nmf_trace_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((8, 10), |_| rng.random_range(0.05..1.0));
        let fit = nmf_fit(&x, 3, &BaselineOptions {
            max_iters: 80,
            tol: 1e-12,
            ..Default::default()
        })
        .unwrap();
        for w in fit.kl_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn gnmf_with_zero_weight_matches_nmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((9, 6), |_| rng.random_range(0.05..1.0));
        let graph = build_knn(&x, 3, Weighting::Binary).unwrap();
        let opts = BaselineOptions {
            max_iters: 30,
            tol: 1e-12,
            seed: 2,
            ..Default::default()
        };
        let plain = nmf_fit(&x, 2, &opts).unwrap();
        let zero = gnmf_fit(&x, 2, &graph, 0.0, &opts).unwrap();
        assert_eq!(plain.kl_trace, zero.kl_trace);
        assert_eq!(plain.w, zero.w);
    }

    #[test]
    fn updates_preserve_nonnegativity_over_many_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&mut rng, &[4, 4, 5]);
        let fit = ncp_fit(&x, 2, &BaselineOptions {
            max_iters: 100,
            tol: 1e-15,
            ..Default::default()
        })
        .unwrap();
        assert!(fit
            .factors
            .factors()
            .iter()
            .all(|f| f.iter().all(|&v| v >= 0.0 && v.is_finite())));
    }
}
