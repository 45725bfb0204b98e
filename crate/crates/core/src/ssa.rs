//! Single-channel singular spectrum analysis.
//!
//! A series is delay-embedded into an `L x K` Hankel (trajectory) matrix, the
//! lag-covariance `H H^T` is eigendecomposed, and the leading components are
//! turned back into a series by anti-diagonal averaging. The same eigenvectors
//! yield the coefficients of a linear recurrence that continues the
//! reconstructed signal.
//!
//! Component indices in this module are zero-based: component `0` is the one
//! with the largest eigenvalue.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the leading one are treated as zero.
pub const DEGENERATE_RELATIVE: f64 = 1e-12;

/// Largest admissible verticality coefficient.
pub const VERTICALITY_LIMIT: f64 = 1.0 - 1e-8;

const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// A uniformly sampled scalar series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    sample_rate: f64,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time series values"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            values,
            sample_rate,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Delay embedding of a series: `matrix[(i, j)] == values[i + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelView {
    matrix: DMatrix<f64>,
}

impl HankelView {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Embedding length `L`.
    pub fn window(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of lagged vectors `K = N - L + 1`.
    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Length of the generating series.
    pub fn series_len(&self) -> usize {
        self.window() + self.columns() - 1
    }
}

/// Eigendecomposition of the lag-covariance of a Hankel matrix.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    hankel: HankelView,
}

impl SpectralModel {
    /// Non-increasing, non-negative.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal columns, ordered like [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn hankel(&self) -> &HankelView {
        &self.hankel
    }

    pub fn window(&self) -> usize {
        self.hankel.window()
    }

    /// Number of components whose eigenvalue is not degenerate.
    pub fn numerical_rank(&self) -> usize {
        let lead = self.eigenvalues[0];
        if lead <= 0.0 {
            return 0;
        }
        self.eigenvalues
            .iter()
            .take_while(|&&l| l > DEGENERATE_RELATIVE * lead)
            .count()
    }

    /// Series generated by the rank-one projection `mu_p mu_p^T H`, hankelized.
    ///
    /// No degeneracy check is made; reconstructions of null components are
    /// simply (close to) zero.
    pub fn elementary(&self, component: usize) -> Vec<f64> {
        let h = self.hankel.matrix();
        let mu = self.eigenvectors.column(component);
        // Coordinates of every lagged vector along mu.
        let coords = h.tr_mul(&mu);
        hankelize_outer(mu.as_slice(), coords.as_slice())
    }

    /// Sum of the elementary reconstructions of the leading `rank` components.
    pub fn reconstruct_leading(&self, rank: usize) -> Result<TimeSeries> {
        let components: Vec<usize> = (0..rank).collect();
        reconstruct(self, &components)
    }
}

/// Linear recurrence extracted from the leading eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LrfModel {
    /// `phi[0]` multiplies the most recent sample, `phi[L - 2]` the oldest.
    phi: Vec<f64>,
    verticality: f64,
    rank: usize,
}

impl LrfModel {
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Squared norm `v^2` of the last eigenvector entries, in `[0, 1)`.
    pub fn verticality(&self) -> f64 {
        self.verticality
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Number of past samples the recurrence consumes (`L - 1`).
    pub fn order(&self) -> usize {
        self.phi.len()
    }
}

pub fn build_hankel(series: &TimeSeries, window: usize) -> Result<HankelView> {
    hankel_from_slice(series.values(), window)
}

pub(crate) fn hankel_from_slice(values: &[f64], window: usize) -> Result<HankelView> {
    let n = values.len();
    if window < 2 || window + 1 > n {
        return Err(Error::Dimension(format!(
            "embedding length {window} must satisfy 2 <= L <= N - 1 for N = {n}"
        )));
    }
    let k = n - window + 1;
    let matrix = DMatrix::from_fn(window, k, |i, j| values[i + j]);
    Ok(HankelView { matrix })
}

pub fn spectral_decompose(hankel: &HankelView) -> Result<SpectralModel> {
    let h = hankel.matrix();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hankel matrix"));
    }
    let lag_cov = h * h.transpose();
    let eig = SymmetricEigen::new(lag_cov);

    let l = h.nrows();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lead = eig.eigenvalues[order[0]].max(0.0);
    let floor = NEGATIVE_EIGEN_TOL * lead.max(1.0);
    let mut eigenvalues = DVector::zeros(l);
    let mut eigenvectors = DMatrix::zeros(l, l);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        if !lambda.is_finite() {
            return Err(Error::NonFinite("lag-covariance eigenvalues"));
        }
        if lambda < -floor {
            return Err(Error::Consistency(format!(
                "lag-covariance eigenvalue {lambda:e} is negative"
            )));
        }
        eigenvalues[dst] = lambda.max(0.0);

        let mut v = eig.eigenvectors.column(src).into_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, &x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(dst, &v);
    }

    Ok(SpectralModel {
        eigenvalues,
        eigenvectors,
        hankel: hankel.clone(),
    })
}

/// Anti-diagonal averaging of an arbitrary `L x K` matrix.
pub fn hankelize(m: &DMatrix<f64>) -> Vec<f64> {
    let (l, k) = m.shape();
    if l == 0 || k == 0 {
        return Vec::new();
    }
    let n = l + k - 1;
    let mut sums = vec![0.0; n];
    for j in 0..k {
        for i in 0..l {
            sums[i + j] += m[(i, j)];
        }
    }
    for (s, sum) in sums.iter_mut().enumerate() {
        *sum /= antidiagonal_len(s, l, k) as f64;
    }
    sums
}

/// Hankelization of the outer product `u v^T` without forming the matrix.
fn hankelize_outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    let (l, k) = (u.len(), v.len());
    let n = l + k - 1;
    let mut sums = vec![0.0; n];
    for (i, &ui) in u.iter().enumerate() {
        for (sum, &vj) in sums[i..i + k].iter_mut().zip(v) {
            *sum += ui * vj;
        }
    }
    for (s, sum) in sums.iter_mut().enumerate() {
        *sum /= antidiagonal_len(s, l, k) as f64;
    }
    sums
}

fn antidiagonal_len(s: usize, l: usize, k: usize) -> usize {
    let lo = s.saturating_sub(k - 1);
    let hi = s.min(l - 1);
    hi - lo + 1
}

fn check_component(model: &SpectralModel, p: usize) -> Result<()> {
    let l = model.window();
    if p >= l {
        return Err(Error::Dimension(format!(
            "component {p} out of range for embedding length {l}"
        )));
    }
    let lead = model.eigenvalues[0];
    let lambda = model.eigenvalues[p];
    if lead <= 0.0 || lambda <= DEGENERATE_RELATIVE * lead {
        return Err(Error::DegenerateComponent {
            index: p,
            eigenvalue: lambda,
            leading: lead,
        });
    }
    Ok(())
}

/// Hankelized sum of the rank-one projections `mu_p mu_p^T H` over `components`.
pub fn reconstruct(model: &SpectralModel, components: &[usize]) -> Result<TimeSeries> {
    for &p in components {
        check_component(model, p)?;
    }
    let n = model.hankel.series_len();
    let mut out = vec![0.0; n];
    for &p in components {
        for (o, e) in out.iter_mut().zip(model.elementary(p)) {
            *o += e;
        }
    }
    // Sample rate is not tracked by the decomposition; reconstructions are unitless in time.
    TimeSeries::new(out, 1.0)
}

/// Norms `||Y_p||` of every elementary reconstruction.
pub fn elementary_norms(model: &SpectralModel) -> Vec<f64> {
    (0..model.window())
        .map(|p| norm2(&model.elementary(p)))
        .collect()
}

/// Smallest rank `t >= 1` at which consecutive reconstruction differences level
/// off: `||Y^{1:t} - Y^{1:t+1}|| - ||Y^{1:t+1} - Y^{1:t+2}|| <= delta_t / n`.
///
/// Capped at `L - 2` when the criterion never holds.
pub fn select_rank(model: &SpectralModel, delta_t: f64, n: usize) -> Result<usize> {
    if !(delta_t > 0.0) {
        return Err(Error::Argument(format!(
            "rank threshold must be positive, got {delta_t}"
        )));
    }
    if n == 0 {
        return Err(Error::Argument("series length must be positive".into()));
    }
    Ok(select_rank_from_norms(&elementary_norms(model), delta_t, n))
}

/// Rank selection on precomputed elementary norms (`norms[p] = ||Y_p||`).
pub(crate) fn select_rank_from_norms(norms: &[f64], delta_t: f64, n: usize) -> usize {
    let l = norms.len();
    let cap = l.saturating_sub(2).max(1);
    let threshold = delta_t / n as f64;
    // Y^{1:t} - Y^{1:t+1} is the (t+1)-th elementary reconstruction, zero-based index t.
    (1..=cap)
        .find(|&t| t + 1 < l && norms[t] - norms[t + 1] <= threshold)
        .unwrap_or(cap)
}

pub fn lrf_coefficients(model: &SpectralModel, rank: usize) -> Result<LrfModel> {
    let l = model.window();
    if rank == 0 || rank > l - 1 {
        return Err(Error::Argument(format!(
            "recurrence rank {rank} must lie in 1..={}",
            l - 1
        )));
    }
    lrf_from_eigenvectors(&model.eigenvectors.columns(0, rank).into_owned())
}

/// Recurrence coefficients from `L x d` orthonormal eigenvector columns.
pub(crate) fn lrf_from_eigenvectors(vectors: &DMatrix<f64>) -> Result<LrfModel> {
    let (l, rank) = vectors.shape();
    let verticality: f64 = (0..rank).map(|i| vectors[(l - 1, i)].powi(2)).sum();
    if !(verticality < VERTICALITY_LIMIT) {
        return Err(Error::Verticality(verticality));
    }
    let scale = 1.0 / (1.0 - verticality);
    // r = [phi_{L-1}, ..., phi_1]; reverse so phi[0] pairs with the newest sample.
    let mut phi = vec![0.0; l - 1];
    for i in 0..rank {
        let pi = vectors[(l - 1, i)];
        for (j, slot) in phi.iter_mut().enumerate() {
            *slot += scale * pi * vectors[(l - 2 - j, i)];
        }
    }
    Ok(LrfModel {
        phi,
        verticality,
        rank,
    })
}

/// Continue `tail` for `horizon` steps with the recurrence
/// `y_next = sum_j phi_j * y_{next - j}`.
pub fn forecast(tail: &[f64], model: &LrfModel, horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::Argument("forecast horizon must be positive".into()));
    }
    let order = model.order();
    if tail.len() < order {
        return Err(Error::InsufficientData {
            needed: order,
            available: tail.len(),
        });
    }
    let mut history: Vec<f64> = tail[tail.len() - order..].to_vec();
    history.reserve(horizon);
    for _ in 0..horizon {
        let len = history.len();
        let next: f64 = model
            .phi
            .iter()
            .enumerate()
            .map(|(j, phi)| phi * history[len - 1 - j])
            .sum();
        history.push(next);
    }
    Ok(history.split_off(order))
}

/// Last `count` samples of the hankelized projection `U U^T H`, where `H` is the
/// `L`-embedding of `values` and `U` holds orthonormal columns.
///
/// Only the trailing columns of `H` touch those anti-diagonals, so the cost is
/// `O(L * count * rank)` instead of `O(L * K * rank)`.
pub(crate) fn projected_tail(values: &[f64], basis: &DMatrix<f64>, count: usize) -> Vec<f64> {
    let l = basis.nrows();
    let n = values.len();
    let k = n - l + 1;
    debug_assert!(count <= l - 1 && count <= n);
    let first_col = k.saturating_sub(count);
    let cols = k - first_col;
    let h = DMatrix::from_fn(l, cols, |i, j| values[i + j + first_col]);
    let projected = basis * basis.tr_mul(&h);

    let first_s = n - count;
    (first_s..n)
        .map(|s| {
            let lo = s.saturating_sub(k - 1);
            let hi = s.min(l - 1);
            let sum: f64 = (lo..=hi).map(|i| projected[(i, s - i - first_col)]).sum();
            sum / (hi - lo + 1) as f64
        })
        .collect()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new(values, 20.0).unwrap()
    }

    fn sinusoid(n: usize, omega: f64) -> Vec<f64> {
        (1..=n).map(|t| (omega * t as f64).sin()).collect()
    }

    #[test]
    fn hankel_small_examples() {
        let h = build_hankel(&series(vec![1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(
            h.matrix(),
            &DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0])
        );
        let (a, b, c) = (0.3, -1.7, 2.5);
        let h = build_hankel(&series(vec![a, b, c]), 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[a, b, b, c]));
    }

    #[test]
    fn hankel_of_constant_series() {
        let h = build_hankel(&series(vec![3.5; 100]), 24).unwrap();
        assert_eq!(h.matrix().shape(), (24, 77));
        assert!(h.matrix().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn hankel_rejects_bad_window() {
        let s = series(vec![1.0; 10]);
        assert!(matches!(build_hankel(&s, 1), Err(Error::Dimension(_))));
        assert!(matches!(build_hankel(&s, 10), Err(Error::Dimension(_))));
        assert!(build_hankel(&s, 9).is_ok());
    }

    #[test]
    fn constant_series_is_rank_one() {
        let c = -2.0;
        let model = spectral_decompose(&build_hankel(&series(vec![c; 40]), 8).unwrap()).unwrap();
        let (l, k) = (8.0, 33.0);
        assert_abs_diff_eq!(model.eigenvalues()[0], l * k * c * c, epsilon = 1e-9);
        let lead = model.eigenvalues()[0];
        assert!(model.eigenvalues().iter().skip(1).all(|&v| v <= 1e-10 * lead));
        assert_eq!(model.numerical_rank(), 1);
    }

    #[test]
    fn sinusoid_is_rank_two() {
        let model =
            spectral_decompose(&build_hankel(&series(sinusoid(60, 0.4)), 12).unwrap()).unwrap();
        let lead = model.eigenvalues()[0];
        let above = model.eigenvalues().iter().filter(|&&v| v > 1e-8 * lead).count();
        assert_eq!(above, 2);
    }

    #[test]
    fn two_by_two_eigenvalues_match_characteristic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let model = spectral_decompose(&build_hankel(&series(v.clone()), 2).unwrap()).unwrap();
            // X = H H^T for H = [[v0 v1 v2], [v1 v2 v3]].
            let a = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let d = v[1] * v[1] + v[2] * v[2] + v[3] * v[3];
            let b = v[0] * v[1] + v[1] * v[2] + v[2] * v[3];
            let tr = a + d;
            let disc = ((a - d).powi(2) + 4.0 * b * b).sqrt();
            assert_abs_diff_eq!(model.eigenvalues()[0], 0.5 * (tr + disc), epsilon = 1e-10 * tr);
            assert_abs_diff_eq!(model.eigenvalues()[1], 0.5 * (tr - disc), epsilon = 1e-10 * tr);
        }
    }

    #[test]
    fn eigenvector_sign_convention() {
        let model =
            spectral_decompose(&build_hankel(&series(sinusoid(30, 0.9)), 6).unwrap()).unwrap();
        for col in model.eigenvectors().column_iter() {
            let pivot = col.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn non_finite_hankel_rejected() {
        let h = HankelView {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 2.0]),
        };
        assert!(matches!(spectral_decompose(&h), Err(Error::NonFinite(_))));
    }

    #[test]
    fn hankelize_two_by_two() {
        let (a, b, c, d) = (1.0, 4.0, 2.0, -3.0);
        let out = hankelize(&DMatrix::from_row_slice(2, 2, &[a, b, c, d]));
        assert_eq!(out, vec![a, (b + c) / 2.0, d]);
    }

    #[test]
    fn hankelize_is_frobenius_nearest() {
        // Perturbing any anti-diagonal level away from its mean increases the
        // Frobenius distance to M.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let y = hankelize(&m);
            let dist = |s: &[f64]| -> f64 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += (m[(i, j)] - s[i + j]).powi(2);
                    }
                }
                acc
            };
            let base = dist(&y);
            for s in 0..y.len() {
                for eps in [1e-3, -1e-3, 1e-1, -1e-1] {
                    let mut z = y.clone();
                    z[s] += eps;
                    assert!(dist(&z) > base);
                }
            }
        }
    }

    #[test]
    fn full_reconstruction_and_truncated_sinusoid() {
        let values = sinusoid(50, 0.3);
        let model =
            spectral_decompose(&build_hankel(&series(values.clone()), 10).unwrap()).unwrap();
        let two = model.reconstruct_leading(2).unwrap();
        for (a, b) in two.values().iter().zip(&values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert!(matches!(
            reconstruct(&model, &[2]),
            Err(Error::DegenerateComponent { index: 2, .. })
        ));
    }

    #[test]
    fn reconstruction_with_all_components_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let model = spectral_decompose(&build_hankel(&series(values.clone()), 7).unwrap()).unwrap();
        let all: Vec<usize> = (0..7).collect();
        let out = reconstruct(&model, &all).unwrap();
        for (a, b) in out.values().iter().zip(&values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn leading_component_denoises_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = 1.5;
        let noisy: Vec<f64> = (0..100).map(|_| truth + rng.random_range(-0.2..0.2)).collect();
        let model = spectral_decompose(&build_hankel(&series(noisy.clone()), 24).unwrap()).unwrap();
        let rec = reconstruct(&model, &[0]).unwrap();
        let err = |s: &[f64]| s.iter().map(|v| (v - truth).powi(2)).sum::<f64>().sqrt();
        assert!(err(rec.values()) < err(&noisy));
    }

    #[test]
    fn rank_of_noiseless_sinusoid_is_two() {
        let model =
            spectral_decompose(&build_hankel(&series(sinusoid(100, 0.25)), 24).unwrap()).unwrap();
        assert_eq!(select_rank(&model, 1e-6, 100).unwrap(), 2);
    }

    #[test]
    fn select_rank_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (1..=100)
            .map(|t| {
                let t = t as f64;
                2.0 * (0.2 * t).sin() + 0.7 * (0.55 * t).cos() + rng.random_range(-0.1..0.1)
            })
            .collect();
        let model = spectral_decompose(&build_hankel(&series(values), 20).unwrap()).unwrap();
        for delta in [0.5, 2.0, 5.0, 20.0] {
            let got = select_rank(&model, delta, 100).unwrap();
            // Scan with explicit reconstructions Y^{1:d}.
            let rec = |d: usize| -> Vec<f64> {
                let mut acc = vec![0.0; 100];
                for p in 0..d {
                    for (a, e) in acc.iter_mut().zip(model.elementary(p)) {
                        *a += e;
                    }
                }
                acc
            };
            let diff = |a: &[f64], b: &[f64]| -> f64 {
                a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            };
            let mut expected = 18;
            for t in 1..=18 {
                let lhs = diff(&rec(t), &rec(t + 1)) - diff(&rec(t + 1), &rec(t + 2));
                if lhs <= delta / 100.0 {
                    expected = t;
                    break;
                }
            }
            assert_eq!(got, expected, "delta = {delta}");
        }
    }

    #[test]
    fn select_rank_rejects_non_positive_threshold() {
        let model = spectral_decompose(&build_hankel(&series(sinusoid(20, 0.5)), 5).unwrap()).unwrap();
        assert!(select_rank(&model, 0.0, 20).is_err());
    }

    #[test]
    fn geometric_series_recurrence() {
        for a in [0.9, 1.05, -0.8] {
            let values: Vec<f64> = (1..=20).map(|t| f64::powi(a, t)).collect();
            let model = spectral_decompose(&build_hankel(&series(values), 2).unwrap()).unwrap();
            let lrf = lrf_coefficients(&model, 1).unwrap();
            assert_abs_diff_eq!(lrf.phi()[0], a, epsilon = 1e-8);
        }
    }

    #[test]
    fn harmonic_recurrence() {
        let omega: f64 = 0.7;
        let model = spectral_decompose(&build_hankel(&series(sinusoid(40, omega)), 3).unwrap()).unwrap();
        let lrf = lrf_coefficients(&model, 2).unwrap();
        assert_abs_diff_eq!(lrf.phi()[0], 2.0 * omega.cos(), epsilon = 1e-7);
        assert_abs_diff_eq!(lrf.phi()[1], -1.0, epsilon = 1e-7);
    }

    #[test]
    fn verticality_failure() {
        // A single eigenvector equal to e_L has verticality one.
        let mut v = DMatrix::zeros(3, 1);
        v[(2, 0)] = 1.0;
        assert!(matches!(lrf_from_eigenvectors(&v), Err(Error::Verticality(_))));
    }

    #[test]
    fn lrf_rank_bounds() {
        let model = spectral_decompose(&build_hankel(&series(sinusoid(20, 0.5)), 5).unwrap()).unwrap();
        assert!(lrf_coefficients(&model, 0).is_err());
        assert!(lrf_coefficients(&model, 5).is_err());
    }

    #[test]
    fn constant_forecast() {
        let values = vec![4.2; 30];
        let model = spectral_decompose(&build_hankel(&series(values.clone()), 6).unwrap()).unwrap();
        let lrf = lrf_coefficients(&model, 1).unwrap();
        let out = forecast(&values, &lrf, 10).unwrap();
        assert!(out.iter().all(|v| (v - 4.2).abs() < 1e-8));
    }

    #[test]
    fn sinusoid_forecast_continues_exactly() {
        let omega = 0.3;
        let n = 60;
        let values = sinusoid(n, omega);
        let model = spectral_decompose(&build_hankel(&series(values.clone()), 3).unwrap()).unwrap();
        let lrf = lrf_coefficients(&model, 2).unwrap();
        let out = forecast(&values, &lrf, 10).unwrap();
        for (h, v) in out.iter().enumerate() {
            let t = (n + h + 1) as f64;
            assert_abs_diff_eq!(*v, (omega * t).sin(), epsilon = 1e-6);
        }
    }

    #[test]
    fn projected_tail_matches_full_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let values: Vec<f64> = (0..60).map(|t| (0.1 * t as f64).sin() + rng.random_range(-0.3..0.3)).collect();
        let model = spectral_decompose(&build_hankel(&series(values.clone()), 12).unwrap()).unwrap();
        let full = model.reconstruct_leading(4).unwrap();
        let basis = model.eigenvectors().columns(0, 4).into_owned();
        let tail = projected_tail(&values, &basis, 11);
        for (a, b) in tail.iter().zip(&full.values()[49..]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn forecast_argument_errors() {
        let lrf = LrfModel {
            phi: vec![1.0, 0.0],
            verticality: 0.0,
            rank: 1,
        };
        assert!(matches!(forecast(&[1.0, 2.0], &lrf, 0), Err(Error::Argument(_))));
        assert!(matches!(
            forecast(&[1.0], &lrf, 3),
            Err(Error::InsufficientData { .. })
        ));
    }
}
