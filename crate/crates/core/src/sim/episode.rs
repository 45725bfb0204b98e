use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::obstacle::step_obstacle;
use super::scenario::{sample_encounter, stream_rng, Encounter, Scenario, NOISE_STREAM};
use crate::bootstrap::{bootstrap_forecast, ForecastEnsemble, MeasurementBuffer};
use crate::error::Result;
use crate::qp::{QpProblem, QpSolution};
use crate::planner::{discretize_agent, DoubleIntegratorSpec, PlanResult, Planner, PlannerConfig, TrackedObstacle};

/// Center plus independent uniform noise on each axis.
pub fn measure<R: Rng>(center: &Vector3<f64>, half_width: f64, rng: &mut R) -> [f64; 3] {
    let mut out = [center.x, center.y, center.z];
    if half_width > 0.0 {
        for v in &mut out {
            *v += rng.random_range(-half_width..=half_width);
        }
    }
    out
}

/// Obstacle truth, measurements and forecasts at every step of one run.
///
/// None of it depends on the agent, so runs at different risk levels share it.
#[derive(Debug, Clone)]
pub struct ObstacleTrack {
    pub encounter: Encounter,
    pub truth: Vec<Option<Vector3<f64>>>,
    pub measured: Vec<Option<[f64; 3]>>,
    pub forecasts: Vec<Option<ForecastEnsemble>>,
    /// Wall time of each forecast, seconds.
    pub forecast_time: Vec<f64>,
}

impl ObstacleTrack {
    pub fn steps(&self) -> usize {
        self.truth.len()
    }
}

pub fn obstacle_track(s: &Scenario, run: u64) -> Result<ObstacleTrack> {
    let enc = sample_encounter(s, run)?;
    let mut noise = stream_rng(s.seed, run, NOISE_STREAM);
    let dt = s.dt();
    let mut buffer = MeasurementBuffer::new(s.bootstrap.max_history(), s.rate)?;
    let steps = enc.end_step + 1;
    let mut truth = Vec::with_capacity(steps);
    let mut measured = Vec::with_capacity(steps);
    let mut forecasts = Vec::with_capacity(steps);
    let mut forecast_time = Vec::with_capacity(steps);
    let mut obstacle = enc.obstacle.clone();
    for k in 0..steps {
        if k < enc.intro_step {
            truth.push(None);
            measured.push(None);
            forecasts.push(None);
            forecast_time.push(0.0);
            continue;
        }
        if k > enc.intro_step {
            obstacle = step_obstacle(&obstacle, dt);
        }
        let pos = obstacle.position();
        let m = measure(&pos, s.noise_half_width, &mut noise);
        buffer.accumulate(m)?;
        truth.push(Some(pos));
        measured.push(Some(m));
        if buffer.len() >= s.bootstrap.n_train {
            let start = Instant::now();
            let f = bootstrap_forecast(&buffer, &s.bootstrap, 0)?;
            forecast_time.push(start.elapsed().as_secs_f64());
            forecasts.push(Some(f));
        } else {
            forecasts.push(None);
            forecast_time.push(0.0);
        }
        let t = k as f64 * dt;
        if k > enc.encounter_step && (pos - s.reference.position(t)).norm() > s.encounter.exit_radius {
            break;
        }
    }
    Ok(ObstacleTrack { encounter: enc, truth, measured, forecasts, forecast_time })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent: [f64; 3],
    pub obstacle: Option<[f64; 3]>,
    pub measured: Option<[f64; 3]>,
    pub distance: Option<f64>,
    pub feasible: bool,
    pub forecast_mean: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub run: u64,
    pub epsilon: f64,
    /// Minimum center distance over the encounter window, meters.
    pub d_min: f64,
    pub collided: bool,
    pub n_infeasible: usize,
    /// Planner calls with at least one obstacle forecast.
    pub n_obstacle_plans: usize,
    pub n_plans: usize,
    pub launch_speed: f64,
    pub failure: Option<String>,
    #[serde(skip)]
    pub timing: Timing,
    #[serde(skip)]
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

impl EpisodeResult {
    pub fn remained_feasible(&self) -> bool {
        self.n_infeasible == 0
    }
}

/// Wall-clock timing; excluded from every reproducible artifact.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    /// Forecast plus plan, averaged over updates with an obstacle forecast.
    pub mean_update: f64,
    pub max_update: f64,
    pub mean_plan_all: f64,
}

/// Planner and agent model for a scenario at risk level `epsilon`.
pub fn build_planner(s: &Scenario, epsilon: f64) -> Result<Planner> {
    let model = discretize_agent(&DoubleIntegratorSpec::quadrotor(), s.dt())?;
    let cfg = PlannerConfig { epsilon, ..s.planner.clone() };
    Planner::new(model, cfg)
}

pub fn run_episode(s: &Scenario, run: u64, keep_trajectory: bool) -> Result<EpisodeResult> {
    s.validate()?;
    let track = obstacle_track(s, run)?;
    run_with_track(s, run, s.planner.epsilon, &track, keep_trajectory)
}

/// Closed loop against a precomputed obstacle track.
pub fn run_with_track(
    s: &Scenario,
    run: u64,
    epsilon: f64,
    track: &ObstacleTrack,
    keep_trajectory: bool,
) -> Result<EpisodeResult> {
    closed_loop(s, run, epsilon, track, keep_trajectory, None)
}

/// QP subproblems, with solutions, from every `stride`-th planner call that
/// saw an obstacle forecast during one episode.
pub fn collect_subproblems(s: &Scenario, run: u64, epsilon: f64, stride: usize) -> Result<Vec<(QpProblem, QpSolution)>> {
    s.validate()?;
    let track = obstacle_track(s, run)?;
    let mut sink = QpSink { stride: stride.max(1), seen: 0, qps: Vec::new() };
    closed_loop(s, run, epsilon, &track, false, Some(&mut sink))?;
    Ok(sink.qps)
}

struct QpSink {
    stride: usize,
    seen: usize,
    qps: Vec<(QpProblem, QpSolution)>,
}

fn closed_loop(
    s: &Scenario,
    run: u64,
    epsilon: f64,
    track: &ObstacleTrack,
    keep_trajectory: bool,
    mut sink: Option<&mut QpSink>,
) -> Result<EpisodeResult> {
    let planner = build_planner(s, epsilon)?;
    let model = planner.model().clone();
    let mut sim_model = model.clone();
    sim_model.b *= s.actuation_gain;
    let dt = s.dt();
    let n = planner.config().horizon;
    let r_hat = s.radius_estimate();
    let collision = s.obstacle.radius + planner.config().r_p;

    let p0 = s.reference.position(0.0);
    let v0 = s.reference.velocity(0.0);
    let mut x = model.state_at(&[p0.x, p0.y, p0.z, s.reference.yaw]);
    x[1] = v0.x;
    x[3] = v0.y;
    x[5] = v0.z;

    let mut result = EpisodeResult {
        run,
        epsilon,
        d_min: f64::INFINITY,
        collided: false,
        n_infeasible: 0,
        n_obstacle_plans: 0,
        n_plans: 0,
        launch_speed: track.encounter.launch_speed,
        failure: None,
        timing: Timing::default(),
        trajectory: keep_trajectory.then(Vec::new),
    };
    let mut prev: Option<PlanResult> = None;
    let mut update_times = Vec::new();
    let mut plan_total = 0.0;

    for k in 0..track.steps() {
        let t = k as f64 * dt;
        let agent_pos = model.position(&x);
        let distance = track.truth[k].map(|o| (agent_pos - o).norm());
        if let Some(d) = distance {
            result.d_min = result.d_min.min(d);
        }
        let forecast = if s.avoid { track.forecasts[k].as_ref() } else { None };
        let obstacles: Vec<TrackedObstacle> = forecast
            .map(|f| TrackedObstacle { ensemble: f.clone(), radius_estimate: r_hat })
            .into_iter()
            .collect();
        let reference = s.reference.window(t, dt, n);
        let outcome = match sink.as_deref_mut() {
            Some(sink) if !obstacles.is_empty() => {
                sink.seen += 1;
                planner.plan_traced(&x, &reference, &obstacles, prev.as_ref()).map(|(p, qps)| {
                    if (sink.seen - 1) % sink.stride == 0 {
                        sink.qps.extend(qps);
                    }
                    p
                })
            }
            _ => planner.plan(&x, &reference, &obstacles, prev.as_ref()),
        };
        let plan = match outcome {
            Ok(p) => p,
            Err(e) => {
                result.failure = Some(format!("planner error at t = {t:.2} s: {e}"));
                break;
            }
        };
        result.n_plans += 1;
        plan_total += plan.solve_time;
        if !obstacles.is_empty() {
            result.n_obstacle_plans += 1;
            update_times.push(plan.solve_time + track.forecast_time[k]);
            if !plan.feasible {
                result.n_infeasible += 1;
            }
        }
        if let Some(rows) = result.trajectory.as_mut() {
            rows.push(TrajectoryRow {
                t,
                agent: agent_pos.into(),
                obstacle: track.truth[k].map(Into::into),
                measured: track.measured[k],
                distance,
                feasible: plan.feasible,
                forecast_mean: track.forecasts[k].as_ref().map(|f| f.mean(0)),
            });
        }
        let u: DVector<f64> = plan.controls[0].clone();
        x = sim_model.step(&x, &u);
        prev = Some(plan);
    }

    result.collided = result.d_min < collision;
    if !update_times.is_empty() {
        result.timing.mean_update = update_times.iter().sum::<f64>() / update_times.len() as f64;
        result.timing.max_update = update_times.iter().cloned().fold(0.0, f64::max);
    }
    if result.n_plans > 0 {
        result.timing.mean_plan_all = plan_total / result.n_plans as f64;
    }
    Ok(result)
}
