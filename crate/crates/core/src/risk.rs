//! Ensemble statistics of the linearized collision-avoidance constraint and
//! their deterministic, affine reformulation.
//!
//! For forecast member `j` at horizon step `i`, the linearized avoidance
//! constraint reads `z_j(p) = alpha_j^T p + beta_j <= 0` with `p = C x_i` the
//! agent position. Its ensemble standard deviation `delta` is bounded by
//! `zeta`, which is piecewise affine in `p` and can therefore be encoded with
//! three auxiliary slack variables.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NULL_RELATIVE: f64 = 1e-10;
const NULL_FLOOR: f64 = 1e-30;
const RADICAND_CLAMP: f64 = 1e-6;

/// Which constant term to use when linearizing around `C x_bar`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaFormula {
    /// `beta = r_bar |d| + y_hat^T d`, exactly the linearized constraint.
    #[default]
    Corrected,
    /// `beta = r_bar |d| - (C x_bar)^T d`, kept for comparison only.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvoidanceCoeff {
    pub alpha: Vector3<f64>,
    pub beta: f64,
    pub obstacle: usize,
    pub step: usize,
}

impl AvoidanceCoeff {
    /// `z(p) = alpha^T p + beta`; non-positive means the linearized constraint holds.
    pub fn z(&self, p: &Vector3<f64>) -> f64 {
        self.alpha.dot(p) + self.beta
    }

    pub fn at(mut self, obstacle: usize, step: usize) -> Self {
        self.obstacle = obstacle;
        self.step = step;
        self
    }
}

/// Linearize `||p - y_hat|| >= r_bar` at `p_bar = C x_bar`.
pub fn linearize_avoidance(
    p_bar: &Vector3<f64>,
    y_hat: &Vector3<f64>,
    r_bar: f64,
    formula: BetaFormula,
) -> Result<AvoidanceCoeff> {
    let d = p_bar - y_hat;
    let dist = d.norm();
    if !(dist > 1e-9) {
        return Err(Error::DegenerateLinearization);
    }
    let beta = match formula {
        BetaFormula::Corrected => r_bar * dist + y_hat.dot(&d),
        BetaFormula::Literal => r_bar * dist - p_bar.dot(&d),
    };
    Ok(AvoidanceCoeff {
        alpha: -d,
        beta,
        obstacle: 0,
        step: 0,
    })
}

/// Sample moments of the ensemble `(alpha_j, beta_j)` with divisor `N - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub mean_alpha: Vector3<f64>,
    pub mean_beta: f64,
    pub cov_alpha: Matrix3<f64>,
    pub cov_alpha_beta: Vector3<f64>,
    pub var_beta: f64,
    /// Dimension of the numerical null space of `cov_alpha`.
    pub n_null: usize,
    /// `cov_alpha` plus the identity on its null space.
    pub sigma_tilde: Matrix3<f64>,
    pub sigma_tilde_sqrt: Matrix3<f64>,
    pub sigma_tilde_inv: Matrix3<f64>,
    pub samples: usize,
}

pub fn ensemble_moments(coeffs: &[AvoidanceCoeff]) -> Result<EnsembleMoments> {
    let n = coeffs.len();
    if n < 2 {
        return Err(Error::InsufficientEnsemble(n));
    }
    let inv_n = 1.0 / n as f64;
    let mean_alpha = coeffs.iter().map(|c| c.alpha).sum::<Vector3<f64>>() * inv_n;
    let mean_beta = coeffs.iter().map(|c| c.beta).sum::<f64>() * inv_n;

    let mut cov_alpha = Matrix3::zeros();
    let mut cov_alpha_beta = Vector3::zeros();
    let mut var_beta = 0.0;
    for c in coeffs {
        let da = c.alpha - mean_alpha;
        let db = c.beta - mean_beta;
        cov_alpha += da * da.transpose();
        cov_alpha_beta += da * db;
        var_beta += db * db;
    }
    let scale = 1.0 / (n - 1) as f64;
    cov_alpha *= scale;
    cov_alpha_beta *= scale;
    var_beta *= scale;
    // Exact symmetry for the eigensolver.
    cov_alpha = (cov_alpha + cov_alpha.transpose()) * 0.5;

    if !(cov_alpha.iter().all(|v| v.is_finite()) && var_beta.is_finite()) {
        return Err(Error::NonFinite("ensemble moments"));
    }

    let eig = SymmetricEigen::new(cov_alpha);
    let lead = eig.eigenvalues.max();
    let threshold = NULL_RELATIVE * lead.max(NULL_FLOOR);
    let mut n_null = 0;
    let mut tilde = Vector3::zeros();
    for i in 0..3 {
        let lambda = eig.eigenvalues[i];
        tilde[i] = if lambda < threshold {
            n_null += 1;
            lambda.max(0.0) + 1.0
        } else {
            lambda
        };
    }
    let v = eig.eigenvectors;
    let compose = |d: Vector3<f64>| v * Matrix3::from_diagonal(&d) * v.transpose();

    Ok(EnsembleMoments {
        mean_alpha,
        mean_beta,
        cov_alpha,
        cov_alpha_beta,
        var_beta,
        n_null,
        sigma_tilde: compose(tilde),
        sigma_tilde_sqrt: compose(tilde.map(f64::sqrt)),
        sigma_tilde_inv: compose(tilde.map(|x| 1.0 / x)),
        samples: n,
    })
}

/// Ensemble standard deviation of `z(p)`, from the moments.
pub fn delta(p: &Vector3<f64>, m: &EnsembleMoments) -> Result<f64> {
    let radicand = p.dot(&(m.cov_alpha * p)) + 2.0 * p.dot(&m.cov_alpha_beta) + m.var_beta;
    if radicand < -RADICAND_CLAMP {
        return Err(Error::Consistency(format!(
            "variance of the avoidance constraint is negative ({radicand:e})"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurOffsets {
    pub h: Vector3<f64>,
    /// Residual variance of `beta` given `alpha`; never negative.
    pub k: f64,
}

pub fn schur_offsets(m: &EnsembleMoments) -> SchurOffsets {
    let solved = m.sigma_tilde_inv * m.cov_alpha_beta;
    let k = m.var_beta - m.cov_alpha_beta.dot(&solved);
    SchurOffsets {
        h: -solved,
        k: k.max(0.0),
    }
}

/// Affine-representable upper bound on [`delta`].
pub fn zeta(p: &Vector3<f64>, m: &EnsembleMoments, s: &SchurOffsets) -> f64 {
    (m.sigma_tilde_sqrt * (p - s.h)).abs().sum() + (3.0 * s.k).sqrt()
}

/// Multiplier `sqrt((1 - eps) / eps)` of the one-sided moment bound.
pub fn nu(epsilon_n: f64) -> f64 {
    ((1.0 - epsilon_n) / epsilon_n).max(0.0).sqrt()
}

/// Seven linear inequalities `lambda [x; s] <= gamma` for one (step, obstacle).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRows {
    pub lambda: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub epsilon_n: f64,
    pub nu: f64,
}

impl RiskRows {
    /// `lambda [x; s] - gamma`; all entries non-positive when satisfied.
    pub fn residual(&self, x: &DVector<f64>, s: &Vector3<f64>) -> DVector<f64> {
        let n_x = x.len();
        let mut stacked = DVector::zeros(n_x + 3);
        stacked.rows_mut(0, n_x).copy_from(x);
        stacked.rows_mut(n_x, 3).copy_from(s);
        &self.lambda * stacked - &self.gamma
    }
}

pub fn build_risk_rows(
    m: &EnsembleMoments,
    s: &SchurOffsets,
    epsilon: f64,
    n_obs: usize,
    c: &DMatrix<f64>,
) -> Result<RiskRows> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Argument(format!(
            "risk tolerance must lie in (0, 1], got {epsilon}"
        )));
    }
    if n_obs == 0 {
        return Err(Error::Argument("at least one obstacle is required".into()));
    }
    if c.nrows() != 3 {
        return Err(Error::Dimension(format!(
            "position map must have 3 rows, has {}",
            c.nrows()
        )));
    }
    let epsilon_n = epsilon / n_obs as f64;
    let nu = nu(epsilon_n);
    let n_x = c.ncols();

    let mut lambda = DMatrix::zeros(7, n_x + 3);
    let mut gamma = DVector::zeros(7);

    let row_alpha = m.mean_alpha.transpose() * c;
    lambda.view_mut((0, 0), (1, n_x)).copy_from(&row_alpha);
    for j in 0..3 {
        lambda[(0, n_x + j)] = nu;
    }
    gamma[0] = -m.mean_beta - nu * (3.0 * s.k).sqrt();

    let sc = DMatrix::from_fn(3, 3, |i, j| m.sigma_tilde_sqrt[(i, j)]) * c;
    let sh = m.sigma_tilde_sqrt * s.h;
    for r in 0..3 {
        for j in 0..n_x {
            lambda[(1 + r, j)] = sc[(r, j)];
            lambda[(4 + r, j)] = -sc[(r, j)];
        }
        lambda[(1 + r, n_x + r)] = -1.0;
        lambda[(4 + r, n_x + r)] = -1.0;
        gamma[1 + r] = sh[r];
        gamma[4 + r] = -sh[r];
    }

    Ok(RiskRows {
        lambda,
        gamma,
        epsilon_n,
        nu,
    })
}
