//! Bootstrap ensembles of SSA recurrence models.
//!
//! For every measured axis the training window is grown in steps of
//! `n_step` and, inside each window, the truncation rank is relaxed from the
//! selected rank `t` up to `t + n_sigma`. Each (window, rank) pair is one
//! model tuple; member `j` of the ensemble combines the `j`-th tuple of the
//! x, y and z axes.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssa::{self, LrfModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Per-axis ring buffer of obstacle center measurements.
#[derive(Debug, Clone)]
pub struct MeasurementBuffer {
    axes: [VecDeque<f64>; 3],
    max_history: usize,
    sample_rate: f64,
    received: usize,
}

impl MeasurementBuffer {
    pub fn new(max_history: usize, sample_rate: f64) -> Result<Self> {
        if max_history == 0 {
            return Err(Error::Argument("maximum history must be positive".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            axes: Default::default(),
            max_history,
            sample_rate,
            received: 0,
        })
    }

    /// Append one sample to every axis, dropping the oldest beyond `max_history`.
    pub fn accumulate(&mut self, sample: [f64; 3]) -> Result<()> {
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement sample"));
        }
        for (axis, value) in self.axes.iter_mut().zip(sample) {
            if axis.len() == self.max_history {
                axis.pop_front();
            }
            axis.push_back(value);
        }
        self.received += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_history(&self) -> usize {
        self.max_history
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Total number of samples ever accumulated (time index of the newest one).
    pub fn received(&self) -> usize {
        self.received
    }

    /// The most recent `count` samples of one axis, oldest first.
    pub fn latest(&self, axis: Axis, count: usize) -> Vec<f64> {
        let data = &self.axes[axis.index()];
        let start = data.len().saturating_sub(count);
        data.range(start..).copied().collect()
    }

    pub fn last(&self) -> Option<[f64; 3]> {
        Some([
            *self.axes[0].back()?,
            *self.axes[1].back()?,
            *self.axes[2].back()?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapParams {
    /// Initial training window, samples.
    pub n_train: usize,
    /// Window growth per enumeration step, samples.
    pub n_step: usize,
    /// Rank-selection threshold.
    pub delta_t: f64,
    /// Number of rank relaxations beyond the selected rank.
    pub n_sigma: usize,
    /// Ensemble size per axis.
    pub n_strap: usize,
    /// Embedding length L.
    pub window: usize,
    /// Forecast horizon, steps.
    pub horizon: usize,
    /// Ring-buffer capacity; `4 * n_train` when absent.
    #[serde(default)]
    pub max_history: Option<usize>,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_step: 5,
            delta_t: 20.0,
            n_sigma: 8,
            n_strap: 40,
            window: 24,
            horizon: 10,
            max_history: None,
        }
    }
}

impl BootstrapParams {
    pub fn max_history(&self) -> usize {
        self.max_history.unwrap_or(4 * self.n_train)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.window < 2 {
            return bad(format!("embedding length {} must be at least 2", self.window));
        }
        if self.window > self.n_train / 2 {
            return bad(format!(
                "embedding length {} exceeds half the training window {}",
                self.window, self.n_train
            ));
        }
        if self.n_step == 0 {
            return bad("window growth n_step must be positive".into());
        }
        if self.n_strap == 0 {
            return bad("ensemble size n_strap must be positive".into());
        }
        if self.horizon == 0 {
            return bad("forecast horizon must be positive".into());
        }
        if !(self.delta_t.is_finite() && self.delta_t > 0.0) {
            return bad(format!("rank threshold {} must be positive", self.delta_t));
        }
        if self.max_history() < self.n_train {
            return bad(format!(
                "history capacity {} is shorter than the training window {}",
                self.max_history(),
                self.n_train
            ));
        }
        if self.n_train < 10 * self.horizon {
            log::warn!(
                "training window {} is shorter than ten forecast horizons ({})",
                self.n_train,
                10 * self.horizon
            );
        }
        Ok(())
    }
}

/// One SSA recurrence model fitted on a single axis.
#[derive(Debug, Clone)]
pub struct ModelTuple {
    pub axis: Axis,
    pub train_window: usize,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    /// `L x rank`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    pub lrf: LrfModel,
    /// RMS of the raw-minus-reconstruction residual over the training window.
    pub residual_rms: f64,
}

#[derive(Debug, Clone)]
pub enum EnsembleMember {
    Model(ModelTuple),
    /// Least-squares constant-velocity extrapolation.
    Backup,
}

impl EnsembleMember {
    pub fn as_model(&self) -> Option<&ModelTuple> {
        match self {
            EnsembleMember::Model(t) => Some(t),
            EnsembleMember::Backup => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EnsembleDiagnostics {
    /// Candidates enumerated per axis before truncation to `n_strap`.
    pub candidates: usize,
    /// Training windows visited.
    pub windows: Vec<usize>,
    /// Members per axis replaced by the backup model.
    pub backup_members: [usize; 3],
}

/// `n_strap` members for each of the three axes.
#[derive(Debug, Clone)]
pub struct ModelEnsemble {
    members: [Vec<EnsembleMember>; 3],
    pub diagnostics: EnsembleDiagnostics,
}

impl ModelEnsemble {
    pub fn axis(&self, axis: Axis) -> &[EnsembleMember] {
        &self.members[axis.index()]
    }

    pub fn size(&self) -> usize {
        self.members[0].len()
    }
}

/// Member-by-step obstacle center predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    /// `predictions[member][step]`, meters.
    pub predictions: Vec<Vec<[f64; 3]>>,
    pub obstacle_id: usize,
    /// Time index (sample count) of the newest measurement used.
    pub origin_index: usize,
    /// Members whose forecast came from the backup model, per axis.
    pub backup_members: [usize; 3],
}

impl ForecastEnsemble {
    pub fn members(&self) -> usize {
        self.predictions.len()
    }

    pub fn horizon(&self) -> usize {
        self.predictions.first().map_or(0, Vec::len)
    }

    pub fn at(&self, member: usize, step: usize) -> [f64; 3] {
        self.predictions[member][step]
    }

    pub fn mean(&self, step: usize) -> [f64; 3] {
        let n = self.members() as f64;
        let mut acc = [0.0; 3];
        for member in &self.predictions {
            for (a, v) in acc.iter_mut().zip(member[step]) {
                *a += v;
            }
        }
        acc.map(|a| a / n)
    }

    /// Per-axis sample standard deviation (divisor `n - 1`; zero for one member).
    pub fn std(&self, step: usize) -> [f64; 3] {
        let n = self.members();
        if n < 2 {
            return [0.0; 3];
        }
        let mean = self.mean(step);
        let mut acc = [0.0; 3];
        for member in &self.predictions {
            for ((a, v), m) in acc.iter_mut().zip(member[step]).zip(mean) {
                *a += (v - m).powi(2);
            }
        }
        acc.map(|a| (a / (n - 1) as f64).sqrt())
    }
}

struct Candidate {
    member: EnsembleMember,
    residual: f64,
}

pub fn generate_ensemble(buffer: &MeasurementBuffer, params: &BootstrapParams) -> Result<ModelEnsemble> {
    params.validate()?;
    let available = buffer.len();
    if available < params.n_train {
        return Err(Error::InsufficientData {
            needed: params.n_train,
            available,
        });
    }

    let mut candidates: [Vec<Candidate>; 3] = Default::default();
    let mut windows = Vec::new();
    let mut w = params.n_train;
    while w <= available && candidates[0].len() < params.n_strap {
        windows.push(w);
        for axis in Axis::ALL {
            let values = buffer.latest(axis, w);
            candidates[axis.index()].extend(window_candidates(&values, axis, params)?);
        }
        w += params.n_step;
    }

    let enumerated = candidates[0].len();
    let mut diagnostics = EnsembleDiagnostics {
        candidates: enumerated,
        windows,
        backup_members: [0; 3],
    };
    let members = candidates.map(|c| keep_best(c, params.n_strap));
    for axis in Axis::ALL {
        diagnostics.backup_members[axis.index()] = members[axis.index()]
            .iter()
            .filter(|m| matches!(m, EnsembleMember::Backup))
            .count();
    }
    Ok(ModelEnsemble {
        members,
        diagnostics,
    })
}

/// Tuples for ranks `t, t+1, ..., t+n_sigma` on one training window.
fn window_candidates(values: &[f64], axis: Axis, params: &BootstrapParams) -> Result<Vec<Candidate>> {
    let n = values.len();
    let hankel = ssa::hankel_from_slice(values, params.window)?;
    let model = ssa::spectral_decompose(&hankel)?;
    let l = model.window();

    let elementary: Vec<Vec<f64>> = (0..l).map(|p| model.elementary(p)).collect();
    let norms: Vec<f64> = elementary.iter().map(|y| ssa::norm2(y)).collect();
    let max_rank = model.numerical_rank().min(l - 1);

    let count = params.n_sigma + 1;
    if max_rank == 0 {
        return Ok((0..count)
            .map(|_| Candidate {
                member: EnsembleMember::Backup,
                residual: f64::INFINITY,
            })
            .collect());
    }

    let selected = ssa::select_rank_from_norms(&norms, params.delta_t, n).min(max_rank);

    // Residual of each leading-rank reconstruction, built incrementally.
    let mut reconstruction = vec![0.0; n];
    let mut residuals = Vec::with_capacity(max_rank);
    for y in elementary.iter().take(max_rank) {
        for (r, e) in reconstruction.iter_mut().zip(y) {
            *r += e;
        }
        let ss: f64 = values
            .iter()
            .zip(&reconstruction)
            .map(|(v, r)| (v - r).powi(2))
            .sum();
        residuals.push((ss / n as f64).sqrt());
    }

    let mut out = Vec::with_capacity(count);
    for relax in 0..count {
        // Ranks beyond the numerical rank add nothing; reuse the largest valid one.
        let rank = (selected + relax).min(max_rank);
        let basis = model.eigenvectors().columns(0, rank).into_owned();
        let candidate = match ssa::lrf_from_eigenvectors(&basis) {
            Ok(lrf) => Candidate {
                residual: residuals[rank - 1],
                member: EnsembleMember::Model(ModelTuple {
                    axis,
                    train_window: n,
                    rank,
                    eigenvalues: model.eigenvalues().as_slice()[..rank].to_vec(),
                    eigenvectors: basis,
                    lrf,
                    residual_rms: residuals[rank - 1],
                }),
            },
            Err(Error::Verticality(_)) => Candidate {
                member: EnsembleMember::Backup,
                residual: f64::INFINITY,
            },
            Err(e) => return Err(e),
        };
        out.push(candidate);
    }
    Ok(out)
}

/// Keep the `n` best-fitting candidates in enumeration order, padding with backups.
fn keep_best(candidates: Vec<Candidate>, n: usize) -> Vec<EnsembleMember> {
    let mut keep = vec![true; candidates.len()];
    if candidates.len() > n {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        // Stable sort: equal residuals keep enumeration order.
        order.sort_by(|&a, &b| candidates[a].residual.total_cmp(&candidates[b].residual));
        for &drop in &order[n..] {
            keep[drop] = false;
        }
    }
    let mut members: Vec<EnsembleMember> = candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c.member))
        .collect();
    members.resize_with(n, || EnsembleMember::Backup);
    members
}

/// Constant-velocity extrapolation from a least-squares line through the last
/// `min(10, available)` samples of each axis.
pub fn backup_model(buffer: &MeasurementBuffer, horizon: usize) -> Result<Vec<[f64; 3]>> {
    if buffer.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let dt = 1.0 / buffer.sample_rate();
    let mut out = vec![[0.0; 3]; horizon];
    for axis in Axis::ALL {
        let samples = buffer.latest(axis, 10);
        let (intercept, slope) = line_fit(&samples, dt);
        let t_last = (samples.len() - 1) as f64 * dt;
        for (step, row) in out.iter_mut().enumerate() {
            row[axis.index()] = intercept + slope * (t_last + (step + 1) as f64 * dt);
        }
    }
    Ok(out)
}

/// Ordinary least squares `y = a + b t` for samples at `t = 0, dt, 2 dt, ...`.
fn line_fit(samples: &[f64], dt: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return (samples[0], 0.0);
    }
    let t_mean = (n - 1.0) * dt / 2.0;
    let y_mean = samples.iter().sum::<f64>() / n;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (i, y) in samples.iter().enumerate() {
        let dt_i = i as f64 * dt - t_mean;
        sty += dt_i * (y - y_mean);
        stt += dt_i * dt_i;
    }
    let slope = sty / stt;
    (y_mean - slope * t_mean, slope)
}

/// Apply every member's projection and recurrence to the current buffer.
pub fn forecast_ensemble(
    ensemble: &ModelEnsemble,
    buffer: &MeasurementBuffer,
    horizon: usize,
    obstacle_id: usize,
) -> Result<ForecastEnsemble> {
    if horizon == 0 {
        return Err(Error::Argument("forecast horizon must be positive".into()));
    }
    let size = ensemble.size();
    let backup = backup_model(buffer, horizon)?;
    let mut predictions = vec![vec![[0.0; 3]; horizon]; size];
    let mut backup_members = [0; 3];

    for axis in Axis::ALL {
        let a = axis.index();
        for (j, member) in ensemble.axis(axis).iter().enumerate() {
            let path = member
                .as_model()
                .and_then(|tuple| tuple_forecast(tuple, buffer, horizon))
                .filter(|p| p.iter().all(|v| v.is_finite()));
            match path {
                Some(path) => {
                    for (row, v) in predictions[j].iter_mut().zip(path) {
                        row[a] = v;
                    }
                }
                None => {
                    backup_members[a] += 1;
                    for (row, b) in predictions[j].iter_mut().zip(&backup) {
                        row[a] = b[a];
                    }
                }
            }
        }
    }

    Ok(ForecastEnsemble {
        predictions,
        obstacle_id,
        origin_index: buffer.received(),
        backup_members,
    })
}

fn tuple_forecast(tuple: &ModelTuple, buffer: &MeasurementBuffer, horizon: usize) -> Option<Vec<f64>> {
    if buffer.len() < tuple.train_window {
        return None;
    }
    let values = buffer.latest(tuple.axis, tuple.train_window);
    let order = tuple.lrf.order();
    let tail = ssa::projected_tail(&values, &tuple.eigenvectors, order);
    ssa::forecast(&tail, &tuple.lrf, horizon).ok()
}

/// Generate the model ensemble and forecast with it in one call.
pub fn bootstrap_forecast(
    buffer: &MeasurementBuffer,
    params: &BootstrapParams,
    obstacle_id: usize,
) -> Result<ForecastEnsemble> {
    let ensemble = generate_ensemble(buffer, params)?;
    forecast_ensemble(&ensemble, buffer, params.horizon, obstacle_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn filled(samples: impl IntoIterator<Item = [f64; 3]>, cap: usize) -> MeasurementBuffer {
        let mut b = MeasurementBuffer::new(cap, 20.0).unwrap();
        for s in samples {
            b.accumulate(s).unwrap();
        }
        b
    }

    #[test]
    fn accumulate_and_ring_semantics() {
        let mut b = MeasurementBuffer::new(3, 20.0).unwrap();
        b.accumulate([1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b.len(), 1);
        for i in 0..5 {
            b.accumulate([i as f64, 0.0, 0.0]).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.latest(Axis::X, 3), vec![2.0, 3.0, 4.0]);
        assert_eq!(b.received(), 6);
        assert!(matches!(
            b.accumulate([f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn five_seconds_at_twenty_hertz() {
        let b = filled((0..100).map(|i| [i as f64 * 0.05, 0.0, 1.0]), 400);
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn candidate_count_with_reference_parameters() {
        let params = BootstrapParams::default();
        let b = filled(
            (0..120).map(|i| {
                let t = i as f64 * 0.05;
                [t.sin() + 0.01 * (i % 7) as f64, 2.0 * t, 0.5 * (0.3 * t).cos()]
            }),
            400,
        );
        let ens = generate_ensemble(&b, &params).unwrap();
        assert_eq!(ens.diagnostics.windows, vec![100, 105, 110, 115, 120]);
        assert_eq!(ens.diagnostics.candidates, 45);
        assert_eq!(ens.size(), 40);
        for axis in Axis::ALL {
            assert_eq!(ens.axis(axis).len(), 40);
        }
    }

    #[test]
    fn degenerate_enumeration_yields_selected_rank() {
        let params = BootstrapParams {
            n_train: 60,
            n_step: 5,
            delta_t: 1e-3,
            n_sigma: 0,
            n_strap: 1,
            window: 12,
            horizon: 5,
            max_history: None,
        };
        let b = filled(
            (0..60).map(|i| {
                let t = i as f64;
                [(0.2 * t).sin(), (0.3 * t).cos(), 1.0]
            }),
            240,
        );
        let ens = generate_ensemble(&b, &params).unwrap();
        assert_eq!(ens.diagnostics.windows, vec![60]);
        for axis in Axis::ALL {
            let tuple = ens.axis(axis)[0].as_model().unwrap();
            let values = b.latest(axis, 60);
            let model = ssa::spectral_decompose(&ssa::hankel_from_slice(&values, 12).unwrap()).unwrap();
            let expected = ssa::select_rank(&model, 1e-3, 60).unwrap().min(model.numerical_rank());
            assert_eq!(tuple.rank, expected);
        }
    }

    #[test]
    fn insufficient_history() {
        let b = filled((0..50).map(|i| [i as f64, 0.0, 0.0]), 400);
        assert!(matches!(
            generate_ensemble(&b, &BootstrapParams::default()),
            Err(Error::InsufficientData { needed: 100, available: 50 })
        ));
    }

    #[test]
    fn short_history_is_padded_with_backups() {
        let b = filled((0..100).map(|i| [0.05 * i as f64, 1.0, -0.1 * i as f64]), 400);
        let ens = generate_ensemble(&b, &BootstrapParams::default()).unwrap();
        assert_eq!(ens.size(), 40);
        assert_eq!(ens.diagnostics.candidates, 9);
        assert_eq!(ens.diagnostics.backup_members, [31, 31, 31]);
    }

    #[test]
    fn constant_obstacle_forecast() {
        let b = filled((0..120).map(|_| [1.0, 1.0, 1.0]), 400);
        let f = bootstrap_forecast(&b, &BootstrapParams::default(), 0).unwrap();
        assert_eq!((f.members(), f.horizon()), (40, 10));
        for member in &f.predictions {
            for p in member {
                for v in p {
                    assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn ballistic_channel_matches_parabola() {
        let dt = 0.05;
        let z = |t: f64| 30.0 + 8.0 * t - 0.5 * 9.81 * t * t;
        let b = filled((0..120).map(|i| [0.0, 0.0, z(i as f64 * dt)]), 400);
        let f = bootstrap_forecast(&b, &BootstrapParams::default(), 0).unwrap();
        for step in 0..10 {
            let t = (119 + step + 1) as f64 * dt;
            assert_abs_diff_eq!(f.mean(step)[2], z(t), epsilon = 1e-3);
        }
    }

    #[test]
    fn backup_two_point_line() {
        let b = filled([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 10);
        let out = backup_model(&b, 3).unwrap();
        for (k, p) in out.iter().enumerate() {
            assert_abs_diff_eq!(p[0], 2.0 + k as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], 0.0);
        }
        let repeated = filled([[0.5, -1.0, 2.0]; 4], 10);
        assert!(backup_model(&repeated, 4)
            .unwrap()
            .iter()
            .all(|p| *p == [0.5, -1.0, 2.0]));
        let single = filled([[0.5, -1.0, 2.0]], 10);
        assert_eq!(backup_model(&single, 2).unwrap(), vec![[0.5, -1.0, 2.0]; 2]);
    }

    #[test]
    fn backup_slope_matches_normal_equations() {
        let noise = [0.03, -0.05, 0.01, 0.04, -0.02, 0.0, -0.04, 0.05, -0.01, 0.02];
        let samples: Vec<f64> = (0..10).map(|i| 1.0 + 3.0 * i as f64 * 0.05 + noise[i]).collect();
        let (_, slope) = line_fit(&samples, 0.05);
        // Normal equations [n, St; St, Stt] [a; b] = [Sy; Sty].
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.05).collect();
        let (n, st, stt) = (10.0, t.iter().sum::<f64>(), t.iter().map(|x| x * x).sum::<f64>());
        let sy: f64 = samples.iter().sum();
        let sty: f64 = t.iter().zip(&samples).map(|(a, b)| a * b).sum();
        let expected = (n * sty - st * sy) / (n * stt - st * st);
        assert_abs_diff_eq!(slope, expected, epsilon = 1e-9);
    }

    #[test]
    fn params_validation() {
        let mut p = BootstrapParams::default();
        assert!(p.validate().is_ok());
        p.window = 60;
        assert!(p.validate().is_err());
        p = BootstrapParams { n_step: 0, ..Default::default() };
        assert!(p.validate().is_err());
        assert_eq!(BootstrapParams::default().max_history(), 400);
    }
}
