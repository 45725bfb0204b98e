use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssa_mpc::qp::{solve, QpProblem, QpSettings, QpStatus};

use crate::CliError;

const TOL: f64 = 1e-6;

fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    // Feasible by construction: z0 satisfies every row with some slack.
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &z0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    let lb = DVector::from_fn(n, |i, _| if i % 3 == 0 { z0[i] - 1.0 } else { f64::NEG_INFINITY });
    let ub = DVector::from_fn(n, |i, _| if i % 4 == 1 { z0[i] + 0.5 } else { f64::INFINITY });
    QpProblem::new(p, q, a, b).with_bounds(lb, ub)
}

/// Solves random feasible and infeasible problems; fails on any KKT or status error.
pub fn run(cases: usize, seed: u64) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = QpSettings::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..cases {
        let n = rng.random_range(1..=12);
        let m = rng.random_range(0..=16);
        let prob = random_problem(&mut rng, n, m);
        let sol = solve(&prob, &settings).map_err(|e| CliError::Internal(e.to_string()))?;
        let dual_ok = sol.row_duals.iter().all(|&y| y >= -TOL);
        let kkt = sol.kkt.max();
        worst = worst.max(kkt);
        if sol.status != QpStatus::Optimal || kkt > TOL || !dual_ok {
            failures.push(format!("case {case} (n {n}, m {m}): {:?}, kkt {kkt:.2e}", sol.status));
        }

        // Two opposite half-spaces with a gap cannot both hold.
        let row = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::from_element(1, n, 0.1);
        let mut a = DMatrix::zeros(2, n);
        a.set_row(0, &row.row(0));
        a.set_row(1, &(-row.row(0)));
        let bad = QpProblem::new(prob.p.clone(), prob.q.clone(), a, DVector::from_vec(vec![-1.0, -1.0]));
        let sol = solve(&bad, &settings).map_err(|e| CliError::Internal(e.to_string()))?;
        if sol.status != QpStatus::Infeasible {
            failures.push(format!("case {case}: infeasible problem reported {:?}", sol.status));
        }
    }
    println!("solver self-test: {cases} feasible and {cases} infeasible problems, worst KKT residual {worst:.2e}");
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        for f in &failures {
            eprintln!("{f}");
        }
        Err(CliError::Internal(format!("{} self-test failures", failures.len())))
    }
}
