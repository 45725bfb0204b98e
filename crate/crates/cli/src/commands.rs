use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use ssa_mpc::bootstrap::{forecast_ensemble, generate_ensemble, MeasurementBuffer};
use ssa_mpc::sim::montecarlo::format_table;
use ssa_mpc::sim::output::{metrics_jsonl, trajectory_csv};
use ssa_mpc::sim::{monte_carlo, run_episode, Scenario};

use crate::config::{resolve, scenario_source, to_toml};
use crate::manifest::{write_run, Manifest};
use crate::{CliError, ScenarioArgs};

/// What to run; recorded in the manifest so the run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Forecast { input: PathBuf },
    Simulate { run: u64, epsilon: f64 },
    Montecarlo { runs: usize, epsilons: Vec<f64>, dump_trajectories: bool },
}

pub type Artifacts = Vec<(String, Vec<u8>)>;

fn load(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let source = scenario_source(&args.scenario)?;
    let mut s = resolve(&source, &args.overrides)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn read_series(path: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| CliError::Usage(format!("{}: missing column {name}", path.display())))
    };
    let cols = [column("x")?, column("y")?, column("z")?];
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Data rows are numbered from 1; the header is not counted.
        let row = i + 1;
        let record = record.map_err(|e| CliError::Usage(format!("row {row}: {e}")))?;
        let mut sample = [0.0; 3];
        for (v, &c) in sample.iter_mut().zip(&cols) {
            let field = record.get(c).unwrap_or("");
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("row {row}: {:?} is not a finite number", field)))?;
        }
        out.push(sample);
    }
    Ok(out)
}

fn run_forecast(s: &Scenario, input: &Path) -> Result<Artifacts, CliError> {
    s.bootstrap.validate()?;
    let series = read_series(input)?;
    if series.len() < s.bootstrap.n_train {
        return Err(CliError::Usage(format!(
            "{} has {} rows; at least {} are needed",
            input.display(),
            series.len(),
            s.bootstrap.n_train
        )));
    }
    let mut buffer = MeasurementBuffer::new(s.bootstrap.max_history(), s.rate)?;
    for sample in &series {
        buffer.accumulate(*sample)?;
    }
    let ensemble = generate_ensemble(&buffer, &s.bootstrap)?;
    let forecast = forecast_ensemble(&ensemble, &buffer, s.bootstrap.horizon, 0)?;

    let mut members = String::from("member,step,x,y,z\n");
    for (j, path) in forecast.predictions.iter().enumerate() {
        for (i, p) in path.iter().enumerate() {
            let _ = writeln!(members, "{j},{},{},{},{}", i + 1, p[0], p[1], p[2]);
        }
    }
    let mut stats = String::from("step,mean_x,mean_y,mean_z,std_x,std_y,std_z\n");
    let mut steps = Vec::new();
    for i in 0..forecast.horizon() {
        let (m, sd) = (forecast.mean(i), forecast.std(i));
        let _ = writeln!(stats, "{},{},{},{},{},{},{}", i + 1, m[0], m[1], m[2], sd[0], sd[1], sd[2]);
        steps.push(json!({ "step": i + 1, "mean": m, "std": sd }));
    }
    let summary = json!({
        "samples": series.len(),
        "samples_used": buffer.len(),
        "members": forecast.members(),
        "horizon": forecast.horizon(),
        "window": s.bootstrap.window,
        "windows": ensemble.diagnostics.windows,
        "candidates": ensemble.diagnostics.candidates,
        "backup_members": forecast.backup_members,
        "steps": steps,
    });
    println!(
        "forecast: {} members, {} steps, backup members per axis {:?}",
        forecast.members(),
        forecast.horizon(),
        forecast.backup_members
    );
    Ok(vec![
        ("ensemble.csv".into(), members.into_bytes()),
        ("stats.csv".into(), stats.into_bytes()),
        ("summary.json".into(), json_bytes(&summary)?),
    ])
}

fn run_simulate(s: &Scenario, run: u64, epsilon: f64) -> Result<Artifacts, CliError> {
    let mut s = s.clone();
    s.planner.epsilon = epsilon;
    let result = run_episode(&s, run, true)?;
    if let Some(f) = &result.failure {
        log::warn!("episode stopped early: {f}");
    }
    println!(
        "run {run} epsilon {epsilon}: d_min {:.3} m, collided {}, infeasible {}/{} obstacle plans",
        result.d_min, result.collided, result.n_infeasible, result.n_obstacle_plans
    );
    let csv = trajectory_csv(result.trajectory.as_deref().unwrap_or(&[]));
    Ok(vec![
        ("trajectory.csv".into(), csv.into_bytes()),
        ("episode.json".into(), json_bytes(&result)?),
    ])
}

fn run_montecarlo(s: &Scenario, runs: usize, epsilons: &[f64], jobs: usize, dump: bool) -> Result<Artifacts, CliError> {
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let report = monte_carlo(s, runs, epsilons, jobs, dump)?;
    let table = format_table(&report.rows);
    print!("{table}");
    let mut out: Artifacts = vec![
        ("metrics.jsonl".into(), metrics_jsonl(&report.rows)?.into_bytes()),
        ("summary.txt".into(), table.into_bytes()),
    ];
    for eps_runs in &report.episodes {
        for e in eps_runs {
            if let Some(f) = &e.failure {
                log::warn!("run {} epsilon {} failed: {f}", e.run, e.epsilon);
            }
        }
    }
    if dump {
        for eps_runs in &report.episodes {
            for e in eps_runs {
                if let Some(rows) = &e.trajectory {
                    let name = format!("trajectories/run{:04}_eps{}.csv", e.run, e.epsilon);
                    out.push((name, trajectory_csv(rows).into_bytes()));
                }
            }
        }
    }
    Ok(out)
}

/// Runs `job` on a resolved scenario and returns its artifacts.
pub fn execute(job: &Job, s: &Scenario, jobs: usize) -> Result<Artifacts, CliError> {
    match job {
        Job::Forecast { input } => run_forecast(s, input),
        Job::Simulate { run, epsilon } => run_simulate(s, *run, *epsilon),
        Job::Montecarlo { runs, epsilons, dump_trajectories } => {
            run_montecarlo(s, *runs, epsilons, jobs, *dump_trajectories)
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run_and_record(job: Job, s: Scenario, jobs: usize, out: &Path) -> Result<(), CliError> {
    let artifacts = execute(&job, &s, jobs)?;
    let manifest = Manifest::new(job, to_toml(&s)?, s.seed, &artifacts);
    write_run(out, &artifacts, &manifest)?;
    println!("wrote {} artifacts and manifest.json to {}", artifacts.len(), out.display());
    Ok(())
}

pub fn forecast(input: &Path, args: &ScenarioArgs, out: &Path) -> Result<(), CliError> {
    let s = load(args)?;
    run_and_record(Job::Forecast { input: input.to_path_buf() }, s, 1, out)
}

pub fn simulate(args: &ScenarioArgs, run: u64, epsilon: Option<f64>, out: &Path) -> Result<(), CliError> {
    let mut s = load(args)?;
    if let Some(e) = epsilon {
        s.planner.epsilon = e;
    }
    s.validate()?;
    let job = Job::Simulate { run, epsilon: s.planner.epsilon };
    run_and_record(job, s, 1, out)
}

pub fn montecarlo(
    args: &ScenarioArgs,
    runs: usize,
    epsilons: &[f64],
    jobs: Option<usize>,
    out: &Path,
    dump_trajectories: bool,
) -> Result<(), CliError> {
    let s = load(args)?;
    s.validate()?;
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(CliError::Usage(format!("epsilon must lie in (0, 1], got {e}")));
    }
    let job = Job::Montecarlo { runs, epsilons: epsilons.to_vec(), dump_trajectories };
    run_and_record(job, s, jobs.unwrap_or_else(default_jobs), out)
}

pub fn rerun_jobs() -> usize {
    default_jobs()
}
