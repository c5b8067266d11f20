//! Alternating factorization drivers: the transport-loss tensor
//! factorization with graph regularization, plus KL-divergence baselines
//! (matrix and tensor, with and without the graph penalty).
//!
//! All fits share the same seeded initialization, flooring, and
//! windowed-relative-change stopping rule so that comparisons isolate the
//! loss function.

mod baselines;
mod gwntf;

pub use baselines::{
    gncp_fit, gnmf_fit, ncp_fit, nmf_fit, BaselineOptions, CpFit, MatrixFit,
};
pub use gwntf::{
    gwntf_fit, gwntf_fit_with_costs, gwntf_objective, update_factor, update_sample_factor,
};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::KruskalFactors;
use crate::transport::TransportHyperParams;

/// Stopping window: this many successive relative changes must fall below
/// the tolerance before a fit is declared converged.
pub const STOP_WINDOW: usize = 3;

/// Configuration of the transport-loss fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwntfConfig {
    pub rank: usize,
    pub transport: TransportHyperParams,
    /// Graph-smoothness weight.
    pub mu: f64,
    pub max_outer_iters: usize,
    /// Relative objective-change stopping threshold.
    pub tol: f64,
    pub seed: u64,
    /// Modes that contribute a transport term; `None` means all of them.
    /// Zero-based.
    pub wasserstein_modes: Option<Vec<usize>>,
}

impl GwntfConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            transport: TransportHyperParams::default(),
            mu: 1e4,
            max_outer_iters: 200,
            tol: 1e-5,
            seed: 0,
            wasserstein_modes: None,
        }
    }

    pub fn validate(&self, order: usize) -> Result<Vec<usize>> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if self.mu < 0.0 {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be >= 1".into()));
        }
        self.transport.validate()?;
        let modes = match &self.wasserstein_modes {
            None => (0..order).collect::<Vec<_>>(),
            Some(list) => {
                if list.is_empty() {
                    return Err(Error::Config(
                        "wasserstein_modes must name at least one mode".into(),
                    ));
                }
                let mut modes: Vec<usize> = list.clone();
                modes.sort_unstable();
                modes.dedup();
                if let Some(&bad) = modes.iter().find(|&&m| m >= order) {
                    return Err(Error::ModeOutOfRange {
                        mode: bad,
                        order,
                    });
                }
                modes
            }
        };
        Ok(modes)
    }
}

/// One objective evaluation, stored per outer iteration. Every field is the
/// term as it enters the total (already weighted by alpha, beta, or mu), so
/// the components sum to `total` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// `sum_n <T_n, C_n>`.
    pub transport_cost: f64,
    /// `sum_n -H(T_n)/lambda`.
    pub entropy: f64,
    /// `alpha * sum_n KL(source marginal || X_(n))`.
    pub source_kl: f64,
    /// `beta * sum_n KL(target marginal || Xhat_(n))`.
    pub target_kl: f64,
    /// `mu * smoothness`.
    pub graph: f64,
}

/// Wall-clock seconds spent in each phase of a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub transport_s: f64,
    pub factors_s: f64,
    pub objective_s: f64,
}

/// Result of a transport-loss fit: the learned factors plus the
/// per-iteration objective trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub factors: KruskalFactors,
    pub objective_trace: Vec<ObjectiveBreakdown>,
    pub iterations_run: usize,
    pub converged: bool,
    pub timings: PhaseTimings,
}

/// Seeded uniform-(0,1] factors with every component's mass matched so the
/// initial reconstruction has the same total mass as the data.
pub fn init_factors(
    shape: &[usize],
    rank: usize,
    seed: u64,
    data_mass: f64,
) -> Result<KruskalFactors> {
    if rank == 0 {
        return Err(Error::Config("rank must be >= 1".into()));
    }
    let order = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors: Vec<Array2<f64>> = shape
        .iter()
        .map(|&extent| {
            Array2::from_shape_fn((extent, rank), |_| 1.0 - rng.random_range(0.0..1.0))
        })
        .collect();
    if data_mass > 0.0 {
        let target = data_mass / rank as f64;
        for r in 0..rank {
            let component_mass: f64 = factors
                .iter()
                .map(|f| f.column(r).sum())
                .product();
            let scale = (target / component_mass).powf(1.0 / order as f64);
            for f in factors.iter_mut() {
                f.column_mut(r).mapv_inplace(|v| v * scale);
            }
        }
    }
    KruskalFactors::new(factors)
}

/// True when the last [`STOP_WINDOW`] successive relative changes of the
/// trace all fall strictly below `tol`. Ties resolve toward continuing.
pub(crate) fn window_converged(totals: &[f64], tol: f64) -> bool {
    if totals.len() < STOP_WINDOW + 1 {
        return false;
    }
    totals
        .windows(2)
        .rev()
        .take(STOP_WINDOW)
        .all(|w| (w[1] - w[0]).abs() < tol * w[0].abs().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reconstruct;

    #[test]
    fn init_masses_match_data_mass() {
        let f = init_factors(&[4, 5, 6], 3, 42, 12.5).unwrap();
        let recon = reconstruct(&f).unwrap();
        assert!((recon.total_mass() - 12.5).abs() < 1e-9);
        assert!(f.factors().iter().all(|m| m.iter().all(|&v| v > 0.0)));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_factors(&[3, 4], 2, 7, 1.0).unwrap();
        let b = init_factors(&[3, 4], 2, 7, 1.0).unwrap();
        let c = init_factors(&[3, 4], 2, 8, 1.0).unwrap();
        assert_eq!(a.factors()[0], b.factors()[0]);
        assert_ne!(a.factors()[0], c.factors()[0]);
    }

    #[test]
    fn window_requires_three_small_changes() {
        assert!(!window_converged(&[1.0, 0.9, 0.9], 1e-3));
        assert!(!window_converged(&[1.0, 0.9, 0.9, 0.9], 1e-12));
        assert!(window_converged(&[1.0, 0.9, 0.9, 0.9, 0.9], 1e-6));
        // a late jump resets the window
        assert!(!window_converged(&[1.0, 0.9, 0.9, 0.5, 0.5], 1e-6));
    }

    #[test]
    fn config_mode_resolution() {
        let mut cfg = GwntfConfig::new(2);
        assert_eq!(cfg.validate(3).unwrap(), vec![0, 1, 2]);
        cfg.wasserstein_modes = Some(vec![2, 0, 2]);
        assert_eq!(cfg.validate(3).unwrap(), vec![0, 2]);
        cfg.wasserstein_modes = Some(vec![3]);
        assert!(cfg.validate(3).is_err());
    }
}
