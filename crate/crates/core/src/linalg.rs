//! Small dense linear algebra for online weighted ridge regression.
//!
//! Matrices are stored row-major in a flat `Vec<f64>`. The dimensions seen in
//! practice are tiny (two to a few dozen), so nothing here tries to be clever
//! about cache blocking.

use thiserror::Error;

/// Number of incremental updates after which the inverse covariance is
/// recomputed from scratch.
pub const REFRESH_INTERVAL: u64 = 10_000;

/// Weights below this are treated as a no-op.
pub const MIN_WEIGHT_SQ: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("regularizer must be positive and finite, got {0}")]
    BadRegularizer(f64),
}

/// Symmetric square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// `scale * I`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    /// Builds a matrix from row-major entries. The input is symmetrized.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self, LinalgError> {
        if entries.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite("matrix entries"));
        }
        let mut m = Self {
            dim,
            data: entries.to_vec(),
        };
        m.symmetrize();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .zip(x)
            .map(|(row, xi)| xi * dot(row, x))
            .sum()
    }

    /// `M += scale * x x^T`.
    fn add_outer(&mut self, x: &[f64], scale: f64) {
        let n = self.dim;
        for i in 0..n {
            let si = scale * x[i];
            let row = &mut self.data[i * n..(i + 1) * n];
            for (m, xj) in row.iter_mut().zip(x) {
                *m += si * xj;
            }
        }
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Inverse via Cholesky factorization. Fails if any pivot is not positive.
    pub fn cholesky_inverse(&self) -> Result<SymMatrix, LinalgError> {
        let n = self.dim;
        // Lower-triangular factor, row-major.
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite);
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        // Solve L L^T X = I column by column.
        let mut inv = SymMatrix::zeros(n);
        let mut y = vec![0.0; n];
        for c in 0..n {
            for i in 0..n {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in (i + 1)..n {
                    s -= l[k * n + i] * inv.data[k * n + c];
                }
                inv.data[i * n + c] = s / l[i * n + i];
            }
        }
        inv.symmetrize();
        Ok(inv)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sqrt(arm^T M arm)`.
///
/// Tiny negative quadratic forms from rounding are clamped to zero; anything
/// clearly negative means `cov_inv` is no longer positive definite.
pub fn mahalanobis(arm: &[f64], cov_inv: &SymMatrix) -> Result<f64, LinalgError> {
    if arm.len() != cov_inv.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: cov_inv.dim(),
            got: arm.len(),
        });
    }
    let q = cov_inv.quad_form(arm);
    if !q.is_finite() {
        return Err(LinalgError::NonFinite("quadratic form"));
    }
    if q < 0.0 {
        let scale = dot(arm, arm)
            * cov_inv
                .as_slice()
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        if q < -1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        return Ok(0.0);
    }
    Ok(q.sqrt())
}

/// Sufficient statistics of a regularized weighted least-squares fit.
///
/// `estimate == cov_inv * response` holds after every mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    cov: SymMatrix,
    cov_inv: SymMatrix,
    response: Vec<f64>,
    estimate: Vec<f64>,
    reg: f64,
    updates_since_refresh: u64,
}

impl RegressionState {
    pub fn new(dim: usize, reg: f64) -> Result<Self, LinalgError> {
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(LinalgError::BadRegularizer(reg));
        }
        Ok(Self {
            cov: SymMatrix::scaled_identity(dim, reg),
            cov_inv: SymMatrix::scaled_identity(dim, 1.0 / reg),
            response: vec![0.0; dim],
            estimate: vec![0.0; dim],
            reg,
            updates_since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.response.len()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn cov_inv(&self) -> &SymMatrix {
        &self.cov_inv
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    /// Discards all data and re-initializes with regularizer `reg`.
    pub fn reset(&mut self, reg: f64) -> Result<(), LinalgError> {
        *self = Self::new(self.dim(), reg)?;
        Ok(())
    }

    pub fn bonus_norm(&self, arm: &[f64]) -> Result<f64, LinalgError> {
        mahalanobis(arm, &self.cov_inv)
    }

    fn check_inputs(&self, arm: &[f64], reward: f64, weight_sq: f64) -> Result<(), LinalgError> {
        if arm.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: arm.len(),
            });
        }
        if arm.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite("arm"));
        }
        if !reward.is_finite() {
            return Err(LinalgError::NonFinite("reward"));
        }
        if !weight_sq.is_finite() || weight_sq < 0.0 {
            return Err(LinalgError::NonFinite("weight"));
        }
        Ok(())
    }

    /// Adds the sample `(arm, reward)` with weight `weight_sq`:
    /// `cov += weight_sq * arm arm^T`, `response += weight_sq * reward * arm`.
    pub fn rank1_update(
        &mut self,
        arm: &[f64],
        reward: f64,
        weight_sq: f64,
    ) -> Result<(), LinalgError> {
        self.check_inputs(arm, reward, weight_sq)?;
        if weight_sq < MIN_WEIGHT_SQ {
            return Ok(());
        }
        let u = self.cov_inv.mul_vec(arm);
        let denom = 1.0 + weight_sq * dot(arm, &u);
        self.cov.add_outer(arm, weight_sq);
        self.cov_inv.add_outer(&u, -weight_sq / denom);
        for (b, a) in self.response.iter_mut().zip(arm) {
            *b += weight_sq * reward * a;
        }
        self.after_mutation()
    }

    /// Removes a previously added sample. Returns `NotPositiveDefinite` without
    /// touching the state when the downdate would break positive definiteness;
    /// callers then rebuild from their own sample buffer.
    pub fn rank1_downdate(
        &mut self,
        arm: &[f64],
        reward: f64,
        weight_sq: f64,
    ) -> Result<(), LinalgError> {
        self.check_inputs(arm, reward, weight_sq)?;
        if weight_sq < MIN_WEIGHT_SQ {
            return Ok(());
        }
        let u = self.cov_inv.mul_vec(arm);
        let denom = 1.0 - weight_sq * dot(arm, &u);
        if denom <= 1e-10 {
            return Err(LinalgError::NotPositiveDefinite);
        }
        self.cov.add_outer(arm, -weight_sq);
        self.cov_inv.add_outer(&u, weight_sq / denom);
        for (b, a) in self.response.iter_mut().zip(arm) {
            *b -= weight_sq * reward * a;
        }
        self.after_mutation()
    }

    fn after_mutation(&mut self) -> Result<(), LinalgError> {
        self.cov_inv.symmetrize();
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_INTERVAL {
            self.refresh()?;
        }
        self.estimate = self.cov_inv.mul_vec(&self.response);
        Ok(())
    }

    /// Recomputes `cov_inv` by direct factorization of `cov`.
    pub fn refresh(&mut self) -> Result<(), LinalgError> {
        self.cov_inv = self.cov.cholesky_inverse()?;
        self.updates_since_refresh = 0;
        self.estimate = self.cov_inv.mul_vec(&self.response);
        Ok(())
    }

    /// Weighted residual sum `sum w^2 (r - <theta, a>)^2` over the committed
    /// samples, evaluated at `theta` from the sufficient statistics:
    /// `S_rr - 2 theta^T b + theta^T (cov - reg I) theta`.
    pub fn weighted_residual_sum(&self, sum_wr2: f64, theta: &[f64]) -> f64 {
        let gram_quad = self.cov.quad_form(theta) - self.reg * dot(theta, theta);
        sum_wr2 - 2.0 * dot(theta, &self.response) + gram_quad
    }
}
