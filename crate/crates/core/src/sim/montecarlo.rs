use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{obstacle_track, run_with_track, EpisodeResult, Timing};
use super::scenario::Scenario;
use crate::error::{Error, Result};

/// Aggregate metrics for one (case, epsilon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case: String,
    pub epsilon: f64,
    pub runs: usize,
    pub seed: u64,
    /// Feasible share of planner calls that had obstacle constraints, percent.
    pub pct_feasible: f64,
    /// Share of runs with no infeasible planner call, percent.
    pub pct_feasible_runs: f64,
    /// Collision-free share of the runs that stayed feasible, percent.
    pub pct_success: Option<f64>,
    pub mean_d_min: f64,
    pub std_d_min: f64,
    pub collisions: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub rows: Vec<MetricsRow>,
    /// `episodes[e][run]` for `epsilons[e]`.
    pub episodes: Vec<Vec<EpisodeResult>>,
}

impl MonteCarloReport {
    /// Mean update time over every episode that planned around an obstacle.
    pub fn mean_update_time(&self) -> f64 {
        let t: Vec<f64> = self
            .episodes
            .iter()
            .flatten()
            .filter(|e| e.n_obstacle_plans > 0)
            .map(|e| e.timing.mean_update)
            .collect();
        if t.is_empty() {
            0.0
        } else {
            t.iter().sum::<f64>() / t.len() as f64
        }
    }
}

fn failed_episode(run: u64, epsilon: f64, msg: String) -> EpisodeResult {
    EpisodeResult {
        run,
        epsilon,
        d_min: f64::NAN,
        collided: false,
        n_infeasible: 0,
        n_obstacle_plans: 0,
        n_plans: 0,
        launch_speed: f64::NAN,
        failure: Some(msg),
        timing: Timing::default(),
        trajectory: None,
    }
}

/// Runs `n_runs` matched episodes per risk level. Each run's obstacle track is
/// computed once and shared by all risk levels.
pub fn monte_carlo(
    template: &Scenario,
    n_runs: usize,
    epsilons: &[f64],
    jobs: usize,
    keep_trajectories: bool,
) -> Result<MonteCarloReport> {
    if n_runs == 0 {
        return Err(Error::Argument("need at least one run".into()));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1], got {e}")));
    }
    template.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Consistency(format!("worker pool: {e}")))?;

    let per_run: Vec<Vec<EpisodeResult>> = pool.install(|| {
        (0..n_runs as u64)
            .into_par_iter()
            .map(|run| match obstacle_track(template, run) {
                Ok(track) => epsilons
                    .iter()
                    .map(|&eps| {
                        run_with_track(template, run, eps, &track, keep_trajectories)
                            .unwrap_or_else(|e| failed_episode(run, eps, e.to_string()))
                    })
                    .collect(),
                Err(e) => epsilons
                    .iter()
                    .map(|&eps| failed_episode(run, eps, format!("obstacle track: {e}")))
                    .collect(),
            })
            .collect()
    });

    let episodes: Vec<Vec<EpisodeResult>> = (0..epsilons.len())
        .map(|e| per_run.iter().map(|r| r[e].clone()).collect())
        .collect();
    let rows = epsilons
        .iter()
        .zip(&episodes)
        .map(|(&eps, eps_runs)| aggregate(&template.name, template.seed, eps, eps_runs))
        .collect();
    Ok(MonteCarloReport { rows, episodes })
}

pub fn aggregate(case: &str, seed: u64, epsilon: f64, episodes: &[EpisodeResult]) -> MetricsRow {
    let ok: Vec<&EpisodeResult> = episodes.iter().filter(|e| e.failure.is_none()).collect();
    let calls: usize = ok.iter().map(|e| e.n_obstacle_plans).sum();
    let infeasible: usize = ok.iter().map(|e| e.n_infeasible).sum();
    let pct = |num: usize, den: usize| if den == 0 { 100.0 } else { 100.0 * num as f64 / den as f64 };
    let feasible_runs: Vec<&&EpisodeResult> = ok.iter().filter(|e| e.remained_feasible()).collect();
    let successes = feasible_runs.iter().filter(|e| !e.collided).count();
    let d: Vec<f64> = ok.iter().map(|e| e.d_min).collect();
    let mean = if d.is_empty() { f64::NAN } else { d.iter().sum::<f64>() / d.len() as f64 };
    let std = if d.len() < 2 {
        0.0
    } else {
        (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt()
    };
    MetricsRow {
        case: case.to_string(),
        epsilon,
        runs: episodes.len(),
        seed,
        pct_feasible: pct(calls - infeasible, calls),
        pct_feasible_runs: pct(feasible_runs.len(), ok.len()),
        pct_success: (!feasible_runs.is_empty()).then(|| pct(successes, feasible_runs.len())),
        mean_d_min: mean,
        std_d_min: std,
        collisions: ok.iter().filter(|e| e.collided).count(),
        failed: episodes.len() - ok.len(),
    }
}

/// Plain-text table with one column per risk level.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let mut cases: Vec<&str> = rows.iter().map(|r| r.case.as_str()).collect();
    cases.dedup();
    for case in cases {
        let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.case == case).collect();
        let line = |label: &str, f: &dyn Fn(&MetricsRow) -> String| {
            let cells: Vec<String> = sel.iter().map(|r| format!("{:>8}", f(r))).collect();
            format!("{case:<10} {label:<10}{}\n", cells.join(""))
        };
        out += &line("epsilon", &|r| format!("{}", r.epsilon));
        out += &line("%Feas", &|r| format!("{:.1}", r.pct_feasible));
        out += &line("%Succ", &|r| r.pct_success.map_or("-".into(), |v| format!("{v:.1}")));
        out += &line("d_min", &|r| format!("{:.2}", r.mean_d_min));
        out += &line("sd(d_min)", &|r| format!("{:.2}", r.std_d_min));
    }
    out
}
