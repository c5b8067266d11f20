//! Clustering of sample embeddings and agreement metrics against ground
//! truth: accuracy under the best label bijection, mutual information (raw,
//! sqrt-normalized, and max-entropy-normalized), and purity.

mod assignment;

pub use assignment::min_cost_assignment;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted labels scored against ground truth.
///
/// `mi` is mutual information normalized by `max(H(pred), H(truth))` so it
/// lands in `[0, 1]`; the raw nats value is kept alongside. `nmi` uses the
/// geometric-mean normalization `MI / sqrt(H(pred) H(truth))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
    pub acc: f64,
    pub nmi: f64,
    pub mi: f64,
    pub purity: f64,
    pub raw_mi: f64,
}

impl ClusteringResult {
    pub fn score(predicted: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        let acc = accuracy(&predicted, &truth)?;
        let nmi = normalized_mi(&predicted, &truth)?;
        let mi = max_normalized_mi(&predicted, &truth)?;
        let purity = purity(&predicted, &truth)?;
        let raw_mi = mutual_information(&predicted, &truth)?;
        Ok(Self {
            predicted,
            truth,
            acc,
            nmi,
            mi,
            purity,
            raw_mi,
        })
    }
}

fn check_lengths(predicted: &[usize], truth: &[usize]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions against {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidValue("empty labelings".into()));
    }
    Ok(())
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<usize> = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let mapped = labels
        .iter()
        .map(|l| uniq.binary_search(l).expect("label present"))
        .collect();
    (mapped, uniq.len())
}

fn contingency(predicted: &[usize], truth: &[usize]) -> (Array2<f64>, usize, usize) {
    let (p, kp) = compact(predicted);
    let (t, kt) = compact(truth);
    let mut counts = Array2::zeros((kp, kt));
    for (a, b) in p.iter().zip(&t) {
        counts[(*a, *b)] += 1.0;
    }
    (counts, kp, kt)
}

/// Fraction of samples matched under the best bijection between predicted
/// and truth labels, solved exactly by minimum-cost assignment on the
/// negated contingency counts.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = predicted.len() as f64;
    let (counts, kp, kt) = contingency(predicted, truth);
    let s = kp.max(kt);
    let mut cost = Array2::zeros((s, s));
    for p in 0..kp {
        for t in 0..kt {
            cost[(p, t)] = -counts[(p, t)];
        }
    }
    let assign = min_cost_assignment(&cost);
    let matched: f64 = (0..kp)
        .map(|p| {
            let t = assign[p];
            if t < kt {
                counts[(p, t)]
            } else {
                0.0
            }
        })
        .sum();
    Ok(matched / n)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information of the two labelings in nats.
pub fn mutual_information(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = predicted.len() as f64;
    let (counts, kp, kt) = contingency(predicted, truth);
    let row: Vec<f64> = (0..kp).map(|p| counts.row(p).sum()).collect();
    let col: Vec<f64> = (0..kt).map(|t| counts.column(t).sum()).collect();
    let mut mi = 0.0;
    for p in 0..kp {
        for t in 0..kt {
            let c = counts[(p, t)];
            if c > 0.0 {
                mi += (c / n) * ((c * n) / (row[p] * col[t])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `MI / sqrt(H(pred) H(truth))`. When either labeling is single-label the
/// product of entropies vanishes; the value is defined as 1 when both are
/// single-label and 0 otherwise.
pub fn normalized_mi(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = predicted.len() as f64;
    let (counts, kp, kt) = contingency(predicted, truth);
    let row: Vec<f64> = (0..kp).map(|p| counts.row(p).sum()).collect();
    let col: Vec<f64> = (0..kt).map(|t| counts.column(t).sum()).collect();
    let hp = entropy(&row, n);
    let ht = entropy(&col, n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mi = mutual_information(predicted, truth)?;
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// `MI / max(H(pred), H(truth))`; 1 when both labelings are single-label.
pub fn max_normalized_mi(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = predicted.len() as f64;
    let (counts, kp, kt) = contingency(predicted, truth);
    let row: Vec<f64> = (0..kp).map(|p| counts.row(p).sum()).collect();
    let col: Vec<f64> = (0..kt).map(|t| counts.column(t).sum()).collect();
    let denom = entropy(&row, n).max(entropy(&col, n));
    if denom == 0.0 {
        return Ok(1.0);
    }
    let mi = mutual_information(predicted, truth)?;
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Sum over predicted clusters of their majority truth-class count, divided
/// by the number of samples.
pub fn purity(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = predicted.len() as f64;
    let (counts, kp, _) = contingency(predicted, truth);
    let total: f64 = (0..kp)
        .map(|p| counts.row(p).iter().cloned().fold(0.0, f64::max))
        .sum();
    Ok(total / n)
}

/// Lloyd's algorithm with seeded initialization, best-of-`restarts` by
/// within-cluster sum of squares (ties keep the earliest restart), and
/// empty clusters repaired by reseeding from the point farthest from its
/// centroid.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k={k} must satisfy 1 <= k <= n={n}"
        )));
    }
    if restarts == 0 {
        return Err(Error::Config("restarts must be >= 1".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for t in 0..restarts {
        let restart_seed = seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (labels, wcss) = lloyd(points, k, restart_seed);
        let replace = match &best {
            None => true,
            Some((best_wcss, _)) => wcss < *best_wcss,
        };
        if replace {
            best = Some((wcss, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn lloyd(points: &Array2<f64>, k: usize, seed: u64) -> (Vec<usize>, f64) {
    let (n, d) = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = sample(&mut rng, n, k);
    let mut centroids = Array2::zeros((k, d));
    for (c, i) in init.into_iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist: f64 = points
                    .row(i)
                    .iter()
                    .zip(centroids.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }
        // repair empty clusters from the farthest point of a non-singleton
        // cluster
        loop {
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let mut far_i = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if sizes[labels[i]] <= 1 {
                    continue;
                }
                let dist: f64 = points
                    .row(i)
                    .iter()
                    .zip(centroids.row(labels[i]))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist > far_d {
                    far_d = dist;
                    far_i = Some(i);
                }
            }
            let far_i = far_i.expect("k <= n leaves a donor point");
            centroids.row_mut(empty).assign(&points.row(far_i));
            labels[far_i] = empty;
            changed = true;
        }
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let mut mean = vec![0.0; d];
            for &i in &members {
                for (m, v) in mean.iter_mut().zip(points.row(i)) {
                    *m += v;
                }
            }
            let count = members.len() as f64;
            for (j, m) in mean.into_iter().enumerate() {
                centroids[(c, j)] = m / count;
            }
        }
        if !changed {
            break;
        }
    }
    let wcss: f64 = (0..n)
        .map(|i| {
            points
                .row(i)
                .iter()
                .zip(centroids.row(labels[i]))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    (labels, wcss)
}

/// Mean and sample standard deviation of one metric over Monte-Carlo runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

impl MetricStats {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

/// Aggregated clustering scores over a seed list.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub acc: MetricStats,
    pub nmi: MetricStats,
    pub mi: MetricStats,
    pub purity: MetricStats,
    pub per_seed: Vec<(u64, ClusteringResult)>,
}

/// Clusters the embedding once per seed and averages the four metrics.
pub fn evaluate_embedding(
    embedding: &Array2<f64>,
    truth: &[usize],
    k: usize,
    seeds: &[u64],
    restarts: usize,
) -> Result<EvalSummary> {
    if embedding.nrows() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embedding rows against {} labels",
            embedding.nrows(),
            truth.len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let labels = kmeans(embedding, k, seed, restarts)?;
        per_seed.push((seed, ClusteringResult::score(labels, truth.to_vec())?));
    }
    let collect = |f: fn(&ClusteringResult) -> f64| -> Vec<f64> {
        per_seed.iter().map(|(_, r)| f(r)).collect()
    };
    Ok(EvalSummary {
        acc: MetricStats::from_values(&collect(|r| r.acc)),
        nmi: MetricStats::from_values(&collect(|r| r.nmi)),
        mi: MetricStats::from_values(&collect(|r| r.mi)),
        purity: MetricStats::from_values(&collect(|r| r.purity)),
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn accuracy_identity_and_relabeling() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
        let relabeled = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(accuracy(&relabeled, &truth).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_hand_example() {
        let truth = vec![0, 0, 1, 1];
        let predicted = vec![0, 1, 1, 1];
        assert_eq!(accuracy(&predicted, &truth).unwrap(), 0.75);
    }

    #[test]
    fn nmi_identity_and_independence() {
        let truth = vec![0, 0, 1, 1];
        assert_eq!(normalized_mi(&truth, &truth).unwrap(), 1.0);
        let independent = vec![0, 1, 0, 1];
        assert_eq!(mutual_information(&independent, &truth).unwrap(), 0.0);
        assert_eq!(normalized_mi(&independent, &truth).unwrap(), 0.0);
    }

    #[test]
    fn nmi_decays_for_random_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        assert!(normalized_mi(&a, &b).unwrap() <= 0.05);
    }

    #[test]
    fn nmi_degenerate_conventions() {
        let single = vec![3, 3, 3, 3];
        let multi = vec![0, 1, 0, 1];
        assert_eq!(normalized_mi(&single, &single).unwrap(), 1.0);
        assert_eq!(normalized_mi(&multi, &single).unwrap(), 0.0);
        assert_eq!(normalized_mi(&single, &multi).unwrap(), 0.0);
        assert_eq!(max_normalized_mi(&single, &single).unwrap(), 1.0);
        assert_eq!(max_normalized_mi(&multi, &single).unwrap(), 0.0);
    }

    #[test]
    fn nmi_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(5..50usize);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3usize)).collect();
            let ab = normalized_mi(&a, &b).unwrap();
            let ba = normalized_mi(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn purity_examples() {
        let truth = vec![0, 0, 1, 1];
        assert_eq!(purity(&truth, &truth).unwrap(), 1.0);
        let all_same = vec![0, 0, 0, 0];
        assert_eq!(purity(&all_same, &truth).unwrap(), 0.5);
        let truth6 = vec![0, 0, 1, 1, 2, 2];
        let pred6 = vec![0, 0, 0, 1, 1, 1];
        assert!((purity(&pred6, &truth6).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn purity_dominates_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.random_range(4..40usize);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..5usize)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..5usize)).collect();
            let p = purity(&pred, &truth).unwrap();
            let a = accuracy(&pred, &truth).unwrap();
            assert!(p >= a - 1e-12, "purity {p} < accuracy {a}");
        }
    }

    #[test]
    fn metrics_invariant_under_label_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let n = 60;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let relabel = [7usize, 2, 9, 4];
        let relabeled: Vec<usize> = pred.iter().map(|&l| relabel[l]).collect();
        assert_eq!(
            accuracy(&pred, &truth).unwrap(),
            accuracy(&relabeled, &truth).unwrap()
        );
        assert_eq!(
            normalized_mi(&pred, &truth).unwrap(),
            normalized_mi(&relabeled, &truth).unwrap()
        );
        assert_eq!(
            purity(&pred, &truth).unwrap(),
            purity(&relabeled, &truth).unwrap()
        );
    }

    fn blobs(rng: &mut ChaCha8Rng, k: usize, per: usize, spread: f64) -> (Array2<f64>, Vec<usize>) {
        let n = k * per;
        let mut points = Array2::zeros((n, 2));
        let mut truth = Vec::with_capacity(n);
        for c in 0..k {
            let cx = 10.0 * c as f64;
            for s in 0..per {
                let i = c * per + s;
                points[(i, 0)] = cx + rng.random_range(-spread..spread);
                points[(i, 1)] = cx + rng.random_range(-spread..spread);
                truth.push(c);
            }
        }
        (points, truth)
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (points, truth) = blobs(&mut rng, 2, 15, 0.5);
        let labels = kmeans(&points, 2, 3, 3).unwrap();
        assert_eq!(accuracy(&labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_single_cluster_and_all_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..1.0));
        let one = kmeans(&points, 1, 0, 1).unwrap();
        assert!(one.iter().all(|&l| l == 0));
        let all = kmeans(&points, 6, 0, 1).unwrap();
        let mut seen = all.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6, "every point its own cluster");
    }

    #[test]
    fn kmeans_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let points = Array2::from_shape_fn((20, 4), |_| rng.random_range(0.0..1.0));
        let a = kmeans(&points, 3, 11, 4).unwrap();
        let b = kmeans(&points, 3, 11, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_embedding_one_hot_is_perfect() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let mut embedding = Array2::zeros((6, 3));
        for (i, &t) in truth.iter().enumerate() {
            embedding[(i, t)] = 1.0;
        }
        let summary = evaluate_embedding(&embedding, &truth, 3, &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(summary.acc.mean, 1.0);
        assert_eq!(summary.nmi.mean, 1.0);
        assert_eq!(summary.mi.mean, 1.0);
        assert_eq!(summary.purity.mean, 1.0);
        assert_eq!(summary.acc.std, 0.0);
    }

    #[test]
    fn evaluate_embedding_single_seed_equals_single_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points = Array2::from_shape_fn((12, 3), |_| rng.random_range(0.0..1.0));
        let truth: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let summary = evaluate_embedding(&points, &truth, 3, &[5], 2).unwrap();
        let labels = kmeans(&points, 3, 5, 2).unwrap();
        let single = ClusteringResult::score(labels, truth).unwrap();
        assert_eq!(summary.acc.mean, single.acc);
        assert_eq!(summary.purity.mean, single.purity);
    }

    #[test]
    fn evaluate_embedding_order_independent_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let points = Array2::from_shape_fn((15, 2), |_| rng.random_range(0.0..1.0));
        let truth: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let fwd = evaluate_embedding(&points, &truth, 3, &[1, 2, 3, 4], 2).unwrap();
        let rev = evaluate_embedding(&points, &truth, 3, &[4, 3, 2, 1], 2).unwrap();
        assert!((fwd.acc.mean - rev.acc.mean).abs() < 1e-15);
        assert!((fwd.nmi.mean - rev.nmi.mean).abs() < 1e-15);
    }
}
