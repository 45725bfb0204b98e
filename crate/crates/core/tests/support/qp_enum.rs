//! Brute-force reference solutions for small QPs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssa_mpc::qp::QpProblem;

/// Enumerate every active set, solve its equality-constrained KKT system and
/// keep the best primal and dual feasible point.
pub fn enumerate(prob: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = prob.n();
    let mut rows: Vec<(Vec<f64>, f64)> = (0..prob.m())
        .map(|i| (prob.a.row(i).iter().copied().collect(), prob.b[i]))
        .collect();
    for i in 0..n {
        if prob.ub[i].is_finite() {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            rows.push((e, prob.ub[i]));
        }
        if prob.lb[i].is_finite() {
            let mut e = vec![0.0; n];
            e[i] = -1.0;
            rows.push((e, -prob.lb[i]));
        }
    }
    let total = rows.len();
    let feasible = |z: &DVector<f64>| rows.iter().all(|(a, b)| a.iter().zip(z.iter()).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << total) {
        let set: Vec<usize> = (0..total).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&prob.q));
        for (c, &ri) in set.iter().enumerate() {
            for j in 0..n {
                kkt[(n + c, j)] = rows[ri].0[j];
                kkt[(j, n + c)] = rows[ri].0[j];
            }
            rhs[n + c] = rows[ri].1;
        }
        let lu = kkt.clone().lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        if (0..k).any(|c| sol[n + c] < -1e-9) || !feasible(&z) {
            continue;
        }
        let obj = prob.objective(&z);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    }
    best
}

pub fn random_problem(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(0..=8);
    let mut u = || rng.random_range(-1.0..1.0);
    let mhalf = DMatrix::from_fn(n, n, |_, _| u());
    let p = mhalf.transpose() * &mhalf + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| 2.0 * u());
    let a = DMatrix::from_fn(m, n, |_, _| u());
    let b = DVector::from_fn(m, |_, _| 0.5 * u());
    let mut prob = QpProblem::new(p, q, a, b);
    // A few box bounds, keeping the enumeration small.
    let mut budget = 12usize.saturating_sub(m);
    for i in 0..n {
        if budget >= 2 && rng.random_bool(0.3) {
            let lo = rng.random_range(-1.5..0.0);
            prob.lb[i] = lo;
            prob.ub[i] = lo + rng.random_range(0.1..2.0);
            budget -= 2;
        }
    }
    prob
}
