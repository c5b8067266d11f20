//! p-nearest-neighbor affinity graphs over sample rows and the smoothness
//! penalty they induce on a sample embedding.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge weighting for the affinity graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    /// 0/1 weights.
    Binary,
    /// `exp(-||x_i - x_j||^2 / sigma^2)`.
    Heat { sigma: f64 },
}

/// Symmetric nonnegative affinity matrix with zero diagonal, plus its row
/// sums as the degree vector.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    weights: Array2<f64>,
    degrees: Array1<f64>,
    p: usize,
    weighting: Weighting,
}

impl AffinityGraph {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Upper-triangle edges `(i, j, weight)` with positive weight.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// An all-zero graph; useful when a harness runs without regularization.
    pub fn empty(n: usize) -> Self {
        Self {
            weights: Array2::zeros((n, n)),
            degrees: Array1::zeros(n),
            p: 0,
            weighting: Weighting::Binary,
        }
    }
}

/// Builds the union-symmetrized p-nearest-neighbor graph over the rows of
/// `samples` under Euclidean distance. Ties in distance break toward the
/// lower row index, so duplicate points resolve deterministically.
pub fn build_knn(samples: &Array2<f64>, p: usize, weighting: Weighting) -> Result<AffinityGraph> {
    let n = samples.nrows();
    if p == 0 || p >= n {
        return Err(Error::Config(format!(
            "neighbor count p={p} must satisfy 1 <= p < n={n}"
        )));
    }
    if let Weighting::Heat { sigma } = weighting {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("heat sigma must be > 0, got {sigma}")));
        }
    }

    let mut sq_dist: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d2 = samples
                .row(i)
                .iter()
                .zip(samples.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            sq_dist[(i, j)] = d2;
            sq_dist[(j, i)] = d2;
        }
    }

    let mut weights: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            sq_dist[(i, a)]
                .partial_cmp(&sq_dist[(i, b)])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(p) {
            let w = match weighting {
                Weighting::Binary => 1.0,
                Weighting::Heat { sigma } => (-sq_dist[(i, j)] / (sigma * sigma)).exp(),
            };
            // union symmetrization: an edge in either direction keeps the
            // larger weight (they agree for both weightings anyway)
            weights[(i, j)] = weights[(i, j)].max(w);
            weights[(j, i)] = weights[(j, i)].max(w);
        }
    }

    let degrees = weights.sum_axis(ndarray::Axis(1));
    Ok(AffinityGraph {
        weights,
        degrees,
        p,
        weighting,
    })
}

/// Graph smoothness penalty `sum_ij V_ij ||a_i - a_j||^2` over the rows of
/// the embedding, evaluated through the equivalent trace form
/// `2 tr(A^T (D - V) A)`.
pub fn smoothness(graph: &AffinityGraph, embedding: &Array2<f64>) -> Result<f64> {
    let n = graph.len();
    if embedding.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} rows, graph has {n}",
            embedding.nrows()
        )));
    }
    // tr(A^T D A) - tr(A^T V A), accumulated without forming D - V
    let mut weighted = 0.0;
    for i in 0..n {
        weighted += graph.degrees[i] * embedding.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    let va = graph.weights.dot(embedding);
    let cross = (&va * embedding).sum();
    Ok(2.0 * (weighted - cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal double sum, the oracle for the trace form.
    fn smoothness_double_sum(graph: &AffinityGraph, a: &Array2<f64>) -> f64 {
        let n = graph.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff: f64 = a
                    .row(i)
                    .iter()
                    .zip(a.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                total += graph.weights()[(i, j)] * diff;
            }
        }
        total
    }

    #[test]
    fn collinear_points_forced_neighbors() {
        let samples = array![[0.0], [1.0], [10.0]];
        let g = build_knn(&samples, 1, Weighting::Binary).unwrap();
        let expected = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert_eq!(*g.weights(), expected);
        assert_eq!(g.degrees().to_vec(), vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn full_neighbor_count_gives_complete_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let samples = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..1.0));
        let g = build_knn(&samples, 5, Weighting::Binary).unwrap();
        for i in 0..6 {
            assert_eq!(g.degrees()[i], 5.0);
            assert_eq!(g.weights()[(i, i)], 0.0);
        }
    }

    #[test]
    fn matches_exhaustive_neighbor_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 20;
        let p = 5;
        let samples = Array2::from_shape_fn((n, 4), |_| rng.random_range(0.0..1.0));
        let g = build_knn(&samples, p, Weighting::Binary).unwrap();

        // brute-force scan: j is a neighbor of i when at most p-1 other
        // candidates are strictly closer (low index wins ties)
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = samples
                        .row(i)
                        .iter()
                        .zip(samples.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let chosen: Vec<usize> = dists.iter().take(p).map(|&(_, j)| j).collect();
            for j in 0..n {
                if i == j {
                    continue;
                }
                let directed = chosen.contains(&j);
                if directed {
                    assert!(g.weights()[(i, j)] > 0.0, "missing edge {i}->{j}");
                }
            }
        }
        // symmetry and degree consistency
        for i in 0..n {
            let row_sum: f64 = g.weights().row(i).sum();
            assert_eq!(row_sum, g.degrees()[i]);
            for j in 0..n {
                assert_eq!(g.weights()[(i, j)], g.weights()[(j, i)]);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 8;
        let samples = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let g = build_knn(&samples, 3, Weighting::Binary).unwrap();
        let perm: Vec<usize> = vec![3, 1, 4, 0, 7, 6, 5, 2];
        let permuted = Array2::from_shape_fn((n, 2), |(i, d)| samples[(perm[i], d)]);
        let gp = build_knn(&permuted, 3, Weighting::Binary).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    gp.weights()[(i, j)],
                    g.weights()[(perm[i], perm[j])],
                    "permutation mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn smoothness_zero_for_constant_rows() {
        let samples = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = build_knn(&samples, 1, Weighting::Binary).unwrap();
        let a = Array2::from_elem((3, 2), 0.7);
        assert!(smoothness(&g, &a).unwrap().abs() < 1e-14);
    }

    #[test]
    fn smoothness_hand_example() {
        let g = AffinityGraph {
            weights: array![[0.0, 1.0], [1.0, 0.0]],
            degrees: array![1.0, 1.0],
            p: 1,
            weighting: Weighting::Binary,
        };
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        // both ordered pairs contribute ||(1,0)-(0,1)||^2 = 2
        assert!((smoothness(&g, &a).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn trace_form_equals_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n = rng.random_range(4..10usize);
            let samples = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.0..1.0));
            let g = build_knn(&samples, 2, Weighting::Binary).unwrap();
            let a = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
            let fast = smoothness(&g, &a).unwrap();
            let slow = smoothness_double_sum(&g, &a);
            assert!((fast - slow).abs() < 1e-10 * slow.max(1.0));
        }
    }

    #[test]
    fn smoothness_nonnegative_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples = Array2::from_shape_fn((10, 2), |_| rng.random_range(0.0..1.0));
        let g = build_knn(&samples, 3, Weighting::Heat { sigma: 0.5 }).unwrap();
        for _ in 0..50 {
            let a = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            assert!(smoothness(&g, &a).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn rejects_bad_neighbor_counts() {
        let samples = array![[0.0], [1.0]];
        assert!(build_knn(&samples, 0, Weighting::Binary).is_err());
        assert!(build_knn(&samples, 2, Weighting::Binary).is_err());
    }
}
