//! Dense nonnegative tensors, mode-n unfolding, Khatri-Rao products, and
//! Kruskal (CP) reconstruction.
//!
//! Element order is fixed to column-major: the first index varies fastest in
//! the flat value buffer. Mode-n matricization arranges the mode-n fibers as
//! columns of an `I_n x I_{-n}` matrix, with the remaining indices enumerated
//! in column-major order. Every rearrangement here is a pure permutation, so
//! `refold(matricize(t, n), shape, n)` reproduces `t` bit for bit.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Dense N-way array of nonnegative values with column-major element order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DataTensor {
    /// Builds a tensor from its shape and flat column-major values.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "tensor order must be at least 2, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "tensor entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of modes N.
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Product of all extents except `mode`.
    pub fn co_extent(&self, mode: usize) -> Result<usize> {
        self.check_mode(mode)?;
        Ok(self.len() / self.shape[mode])
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.order());
        let mut flat = 0;
        let mut stride = 1;
        for (i, &extent) in index.iter().zip(&self.shape) {
            debug_assert!(*i < extent);
            flat += i * stride;
            stride *= extent;
        }
        self.values[flat]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Rescales entries to `[0, 1]` by dividing by the global maximum.
    /// An all-zero tensor is returned unchanged. Idempotent once applied.
    pub fn scaled_to_unit(&self) -> Self {
        let max = self.max_value();
        if max == 0.0 {
            return self.clone();
        }
        let values = self.values.iter().map(|v| v / max).collect();
        Self {
            shape: self.shape.clone(),
            values,
        }
    }

    /// Entrywise map; the result must remain nonnegative and finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }
}

/// Rank-R Kruskal factor set: one `I_n x R` nonnegative matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalFactors {
    rank: usize,
    factors: Vec<Array2<f64>>,
}

impl KruskalFactors {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need at least two factor matrices, got {}",
                factors.len()
            )));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::ShapeMismatch("rank must be positive".into()));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} has {} columns, expected rank {rank}",
                    f.ncols()
                )));
            }
            if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidValue(format!(
                    "factor {n} has a negative or non-finite entry"
                )));
            }
        }
        Ok(Self { rank, factors })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode]
    }

    /// Replaces one factor, keeping shape and nonnegativity invariants.
    pub fn set_factor(&mut self, mode: usize, factor: Array2<f64>) -> Result<()> {
        if mode >= self.factors.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.factors.len(),
            });
        }
        if factor.dim() != self.factors[mode].dim() {
            return Err(Error::ShapeMismatch(format!(
                "factor {mode} shape {:?} cannot replace {:?}",
                factor.dim(),
                self.factors[mode].dim()
            )));
        }
        if factor.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "replacement factor {mode} has a negative or non-finite entry"
            )));
        }
        self.factors[mode] = factor;
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }
}

/// Mode-n matricization: fibers along `mode` become columns, remaining
/// indices enumerated column-major.
pub fn matricize(t: &DataTensor, mode: usize) -> Result<Array2<f64>> {
    if mode >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: t.order(),
        });
    }
    let extent = t.shape()[mode];
    let pre: usize = t.shape()[..mode].iter().product();
    let post: usize = t.shape()[mode + 1..].iter().product();
    let mut out = Array2::zeros((extent, pre * post));
    let values = t.values();
    let mut flat = 0;
    for q in 0..post {
        for i in 0..extent {
            for p in 0..pre {
                out[(i, p + pre * q)] = values[flat];
                flat += 1;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`matricize`]: rebuilds the tensor from a mode-n unfolding.
pub fn refold(m: &ArrayView2<f64>, shape: &[usize], mode: usize) -> Result<DataTensor> {
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let extent = shape[mode];
    let pre: usize = shape[..mode].iter().product();
    let post: usize = shape[mode + 1..].iter().product();
    if m.nrows() != extent || m.ncols() != pre * post {
        return Err(Error::ShapeMismatch(format!(
            "matrix {}x{} does not refold to shape {shape:?} at mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut values = vec![0.0; extent * pre * post];
    let mut flat = 0;
    for q in 0..post {
        for i in 0..extent {
            for p in 0..pre {
                values[flat] = m[(i, p + pre * q)];
                flat += 1;
            }
        }
    }
    DataTensor::new(shape.to_vec(), values)
}

/// Column-wise Kronecker product of the inputs, in the given order.
///
/// Column r of the output is `kron(mats[0][:,r], ..., mats[k-1][:,r])`; the
/// last input's row index varies fastest.
pub fn khatri_rao(mats: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let Some(first) = mats.first() else {
        return Err(Error::ShapeMismatch("khatri_rao needs at least one input".into()));
    };
    let rank = first.ncols();
    for (k, m) in mats.iter().enumerate() {
        if m.ncols() != rank {
            return Err(Error::ShapeMismatch(format!(
                "khatri_rao input {k} has {} columns, expected {rank}",
                m.ncols()
            )));
        }
    }
    let mut out = (*first).clone();
    for m in &mats[1..] {
        let (rows, mrows) = (out.nrows(), m.nrows());
        let mut next = Array2::zeros((rows * mrows, rank));
        for r in 0..rank {
            for i in 0..rows {
                let base = out[(i, r)];
                for j in 0..mrows {
                    next[(i * mrows + j, r)] = base * m[(j, r)];
                }
            }
        }
        out = next;
    }
    Ok(out)
}

/// Khatri-Rao product of all factors except `mode`, ordered so that
/// `matricize(reconstruct(f), n) == f.factor(n) * coproduct_matrix(f, n)^T`.
///
/// Under the column-major unfolding used here that identity requires the
/// factors in descending mode order; the ascending order fails the
/// reconstruction check, so the reversed order is the one implemented.
pub fn coproduct_matrix(f: &KruskalFactors, mode: usize) -> Result<Array2<f64>> {
    if mode >= f.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: f.order(),
        });
    }
    let mats: Vec<&Array2<f64>> = (0..f.order())
        .rev()
        .filter(|&m| m != mode)
        .map(|m| f.factor(m))
        .collect();
    khatri_rao(&mats)
}

/// Sum of R rank-one outer products: entry `(i_1,...,i_N)` is
/// `sum_r prod_n A^(n)[i_n, r]`.
pub fn reconstruct(f: &KruskalFactors) -> Result<DataTensor> {
    let coprod = coproduct_matrix(f, 0)?;
    let unfolding = f.factor(0).dot(&coprod.t());
    // Multiplying nonnegative factors can only produce nonnegative entries;
    // clamp away any -0.0 before the constructor validates.
    let cleaned = unfolding.mapv(|v| if v == 0.0 { 0.0 } else { v });
    refold(&cleaned.view(), &f.shape(), 0)
}
