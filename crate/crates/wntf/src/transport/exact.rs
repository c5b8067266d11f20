//! Exact discrete optimal transport via the transportation simplex.
//!
//! Kept deliberately small: dense cost matrices, a northwest-corner starting
//! basis, Bland's entering rule for anti-cycling, and a dual-feasibility
//! check before returning. This is a validation oracle for the entropic
//! solvers, capped at [`EXACT_OT_LIMIT`] points.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::CostMatrix;

/// Largest instance the exact solver accepts.
pub const EXACT_OT_LIMIT: usize = 64;

const PIVOT_CAP: usize = 200_000;

/// Optimal plan and its transport cost `<C, T>`.
#[derive(Debug, Clone)]
pub struct ExactPlan {
    pub distance: f64,
    pub plan: Array2<f64>,
}

/// Solves `min <C, T>` subject to `T 1 = a`, `T^T 1 = b`, `T >= 0`.
///
/// Requires `|sum(a) - sum(b)| <= 1e-9`; the target is rescaled to balance
/// exactly before solving.
pub fn exact_ot(a: &[f64], b: &[f64], c: &CostMatrix) -> Result<ExactPlan> {
    let m = c.size();
    if a.len() != m || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "marginals of length {} and {} against {m}x{m} cost",
            a.len(),
            b.len()
        )));
    }
    if m > EXACT_OT_LIMIT {
        return Err(Error::OracleLimit {
            size: m,
            limit: EXACT_OT_LIMIT,
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidValue(
            "marginals must be finite and nonnegative".into(),
        ));
    }
    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    if (sum_a - sum_b).abs() > 1e-9 {
        return Err(Error::MassMismatch {
            source_sum: sum_a,
            target_sum: sum_b,
        });
    }
    if sum_a <= 0.0 {
        return Ok(ExactPlan {
            distance: 0.0,
            plan: Array2::zeros((m, m)),
        });
    }
    let b: Vec<f64> = b.iter().map(|v| v * (sum_a / sum_b)).collect();
    let cost = c.entries();

    // Northwest-corner staircase: exactly 2m-1 basic cells forming a tree.
    let mut basis: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rem_a = a.to_vec();
    let mut rem_b = b.clone();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let q = rem_a[i].min(rem_b[j]).max(0.0);
        basis.insert((i, j), q);
        rem_a[i] -= q;
        rem_b[j] -= q;
        if i == m - 1 && j == m - 1 {
            break;
        }
        if rem_a[i] <= rem_b[j] && i < m - 1 {
            i += 1;
        } else if j < m - 1 {
            j += 1;
        } else {
            i += 1;
        }
    }

    let cost_scale = cost.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let tol = 1e-11 * cost_scale;

    for _pivot in 0..PIVOT_CAP {
        let (u, v) = duals(&basis, cost, m)?;

        // Bland's rule: smallest flat index with negative reduced cost.
        let mut entering = None;
        'scan: for ei in 0..m {
            for ej in 0..m {
                if basis.contains_key(&(ei, ej)) {
                    continue;
                }
                if cost[(ei, ej)] - u[ei] - v[ej] < -tol {
                    entering = Some((ei, ej));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(finish(&basis, cost, m));
        };

        // Unique cycle: the entering cell plus the tree path col ej -> row ei.
        let path = tree_path(&basis, m, ei, ej)?;
        let mut theta = f64::INFINITY;
        let mut leaving = None;
        for (k, cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                let val = basis[cell];
                if val < theta - 1e-15 || (val <= theta + 1e-15 && leaving.is_none()) {
                    theta = val;
                    leaving = Some(*cell);
                } else if (val - theta).abs() <= 1e-15 {
                    if let Some(cur) = leaving {
                        if *cell < cur {
                            leaving = Some(*cell);
                        }
                    }
                }
            }
        }
        let leaving = leaving
            .ok_or_else(|| Error::Solver("transport pivot found no leaving cell".into()))?;
        for (k, cell) in path.iter().enumerate() {
            let entry = basis.get_mut(cell).expect("path cell is basic");
            if k % 2 == 0 {
                *entry = (*entry - theta).max(0.0);
            } else {
                *entry += theta;
            }
        }
        basis.remove(&leaving);
        basis.insert((ei, ej), theta);
    }
    Err(Error::Solver(format!(
        "transportation simplex exceeded {PIVOT_CAP} pivots"
    )))
}

/// Dual values from the basis tree: u[0] = 0 and u_i + v_j = c_ij on basic
/// cells. Rows are nodes 0..m, columns m..2m.
fn duals(
    basis: &BTreeMap<(usize, usize), f64>,
    cost: &Array2<f64>,
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 2 * m];
    for &(i, j) in basis.keys() {
        adj[i].push((i, j));
        adj[m + j].push((i, j));
    }
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; m];
    u[0] = 0.0;
    let mut stack = vec![0usize];
    let mut seen = vec![false; 2 * m];
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &(i, j) in &adj[node] {
            let other = if node < m { m + j } else { i };
            if seen[other] {
                continue;
            }
            if node < m {
                v[j] = cost[(i, j)] - u[i];
            } else {
                u[i] = cost[(i, j)] - v[j];
            }
            seen[other] = true;
            stack.push(other);
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Solver("transport basis is not a spanning tree".into()));
    }
    Ok((u, v))
}

/// Cells along the unique tree path from column node `ej` to row node `ei`.
fn tree_path(
    basis: &BTreeMap<(usize, usize), f64>,
    m: usize,
    ei: usize,
    ej: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 2 * m];
    for &(i, j) in basis.keys() {
        adj[i].push((i, j));
        adj[m + j].push((i, j));
    }
    let start = m + ej;
    let goal = ei;
    let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; 2 * m];
    let mut seen = vec![false; 2 * m];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        for &(i, j) in &adj[node] {
            let other = if node < m { m + j } else { i };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, (i, j)));
                queue.push_back(other);
            }
        }
    }
    if !seen[goal] {
        return Err(Error::Solver("transport basis tree is disconnected".into()));
    }
    let mut cells = Vec::new();
    let mut node = goal;
    while let Some((prev, cell)) = parent[node] {
        cells.push(cell);
        node = prev;
    }
    cells.reverse();
    Ok(cells)
}

fn finish(basis: &BTreeMap<(usize, usize), f64>, cost: &Array2<f64>, m: usize) -> ExactPlan {
    let mut plan = Array2::zeros((m, m));
    let mut distance = 0.0;
    for (&(i, j), &q) in basis {
        let q = q.max(0.0);
        plan[(i, j)] = q;
        distance += q * cost[(i, j)];
    }
    ExactPlan { distance, plan }
}
