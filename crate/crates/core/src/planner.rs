//! Receding-horizon planner: sequential convex programming over QPs with
//! distributionally robust avoidance rows and a shrinking box trust region.
//!
//! States are eliminated by linear rollout, so each subproblem is a dense QP
//! in the stacked controls `u_1..u_N` and one slack triple per
//! (step, obstacle). The box trust region `|x_i - x_bar_i|_inf <= r` is
//! contained in the Euclidean ball of radius `sqrt(n) r`, so it enforces the
//! 2-norm version with a rescaled radius while keeping every subproblem a QP.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::bootstrap::ForecastEnsemble;
use crate::error::{Error, Result};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::risk::{self, BetaFormula};

pub const GRAVITY: f64 = 9.81;

/// One double-integrator channel `q'' = gain * u[input] + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub input: usize,
    pub gain: f64,
    #[serde(default)]
    pub bias: f64,
}

/// Decoupled double-integrator chains. The first three are the position axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegratorSpec {
    pub chains: Vec<Chain>,
    pub n_u: usize,
}

impl DoubleIntegratorSpec {
    /// Small-angle quadrotor: inputs `[u1, theta, phi, u4]`, outputs `[x, y, z, psi]`.
    pub fn quadrotor() -> Self {
        Self {
            chains: vec![
                Chain { input: 1, gain: -GRAVITY, bias: 0.0 },
                Chain { input: 2, gain: GRAVITY, bias: 0.0 },
                Chain { input: 0, gain: -1.0, bias: -GRAVITY },
                Chain { input: 3, gain: 1.0, bias: 0.0 },
            ],
            n_u: 4,
        }
    }
}

/// Discrete model `x+ = A x + B u`, outputs `G x`, position `C x`.
///
/// The state is `[q_1, q_1', ..., q_n, q_n', 1]`; the trailing constant
/// carries affine terms such as gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dt: f64,
    /// Input holding every chain at zero acceleration.
    pub trim: DVector<f64>,
}

impl AgentModel {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.g.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn position(&self, x: &DVector<f64>) -> Vector3<f64> {
        let p = &self.c * x;
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.g * x
    }

    /// State at rest with the given outputs.
    pub fn state_at(&self, outputs: &[f64]) -> DVector<f64> {
        let n_x = self.n_x();
        let mut x = DVector::zeros(n_x);
        for (c, &o) in outputs.iter().enumerate().take(self.n_y()) {
            x[2 * c] = o;
        }
        x[n_x - 1] = 1.0;
        x
    }

    /// Roll out `controls` from `x0`; returns `x0` followed by every successor.
    pub fn rollout(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        for u in controls {
            let next = self.step(states.last().unwrap(), u);
            states.push(next);
        }
        states
    }
}

/// Exact zero-order-hold discretization of the chains.
pub fn discretize_agent(spec: &DoubleIntegratorSpec, dt: f64) -> Result<AgentModel> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    let nc = spec.chains.len();
    if nc < 3 {
        return Err(Error::Dimension("need at least three position chains".into()));
    }
    if let Some(ch) = spec.chains.iter().find(|ch| ch.input >= spec.n_u) {
        return Err(Error::Dimension(format!("chain input {} out of range", ch.input)));
    }
    let n_x = 2 * nc + 1;
    let one = n_x - 1;
    let mut a = DMatrix::identity(n_x, n_x);
    let mut b = DMatrix::zeros(n_x, spec.n_u);
    let mut g = DMatrix::zeros(nc, n_x);
    let mut c = DMatrix::zeros(3, n_x);
    let mut trim = DVector::zeros(spec.n_u);
    let h2 = 0.5 * dt * dt;
    for (k, ch) in spec.chains.iter().enumerate() {
        let (p, v) = (2 * k, 2 * k + 1);
        a[(p, v)] = dt;
        b[(p, ch.input)] += h2 * ch.gain;
        b[(v, ch.input)] += dt * ch.gain;
        a[(p, one)] = h2 * ch.bias;
        a[(v, one)] = dt * ch.bias;
        g[(k, p)] = 1.0;
        if k < 3 {
            c[(k, p)] = 1.0;
        }
        if ch.bias != 0.0 && ch.gain != 0.0 {
            trim[ch.input] = -ch.bias / ch.gain;
        }
    }
    Ok(AgentModel { a, b, g, c, dt, trim })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustStart {
    /// Radii `chi tau, chi tau^2, ...`.
    #[default]
    Shrunk,
    /// Radii `chi, chi tau, ...`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub epsilon: f64,
    pub chi: f64,
    pub tau: f64,
    pub scp_iters: usize,
    pub trust_start: TrustStart,
    /// Diagonal of the output tracking weight.
    pub q: Vec<f64>,
    /// Diagonal of the input weight, applied to `u - trim`.
    pub r: Vec<f64>,
    pub slack_weight: f64,
    pub state_bounds: Vec<StateBound>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Agent safety radius, meters.
    pub r_p: f64,
    pub beta_formula: BetaFormula,
    pub qp_max_iter: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let vel = |index| StateBound { index, lower: -10.0, upper: 10.0 };
        Self {
            horizon: 10,
            epsilon: 0.05,
            chi: 50.0,
            tau: 0.25,
            scp_iters: 4,
            trust_start: TrustStart::Shrunk,
            q: vec![10.0, 10.0, 10.0, 1.0],
            r: vec![0.01, 1.0, 1.0, 0.01],
            slack_weight: 1e-6,
            state_bounds: vec![vel(1), vel(3), vel(5)],
            input_lower: vec![-19.81, -1.0, -1.0, -5.0],
            input_upper: vec![0.19, 1.0, 1.0, 5.0],
            r_p: 0.25,
            beta_formula: BetaFormula::Corrected,
            qp_max_iter: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self, model: &AgentModel) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.chi >= 0.0) {
            return bad(format!("chi must be non-negative, got {}", self.chi));
        }
        if self.scp_iters == 0 {
            return bad("scp_iters must be at least 1".into());
        }
        if self.q.len() != model.n_y() || self.q.iter().any(|&v| !(v >= 0.0)) {
            return bad(format!("q must hold {} non-negative weights", model.n_y()));
        }
        if self.r.len() != model.n_u() || self.r.iter().any(|&v| !(v >= 0.0)) {
            return bad(format!("r must hold {} non-negative weights", model.n_u()));
        }
        if !(self.slack_weight >= 0.0) || !(self.r_p >= 0.0) {
            return bad("slack_weight and r_p must be non-negative".into());
        }
        if self.input_lower.len() != model.n_u() || self.input_upper.len() != model.n_u() {
            return bad(format!("input bounds must have {} entries", model.n_u()));
        }
        if self.input_lower.iter().zip(&self.input_upper).any(|(l, u)| l > u) {
            return bad("input lower bound exceeds upper bound".into());
        }
        for sb in &self.state_bounds {
            if sb.index >= model.n_x() - 1 || sb.lower > sb.upper {
                return bad(format!("invalid state bound on index {}", sb.index));
            }
        }
        Ok(())
    }

    /// Trust-region radius of every SCP iteration.
    pub fn trust_radii(&self) -> Vec<f64> {
        let offset = match self.trust_start {
            TrustStart::Shrunk => 1,
            TrustStart::Full => 0,
        };
        (0..self.scp_iters)
            .map(|w| self.chi * self.tau.powi((w + offset) as i32))
            .collect()
    }
}

/// Forecast ensemble of one obstacle plus its estimated radius.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObstacle {
    pub ensemble: ForecastEnsemble,
    pub radius_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScpIterate {
    pub radius: f64,
    pub status: QpStatus,
    pub objective: f64,
    pub qp_iterations: usize,
    pub kkt_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub controls: Vec<DVector<f64>>,
    /// `x_1 = x_init` followed by the `N` predicted states.
    pub states: Vec<DVector<f64>>,
    pub feasible: bool,
    pub scp_trace: Vec<ScpIterate>,
    pub solve_time: f64,
}

impl PlanResult {
    /// Controls shifted by one step with the last one repeated.
    pub fn shifted_controls(&self) -> Vec<DVector<f64>> {
        let mut c: Vec<_> = self.controls.iter().skip(1).cloned().collect();
        if let Some(last) = self.controls.last() {
            c.push(last.clone());
        }
        c
    }
}

/// Planner with the horizon-dependent matrices precomputed.
#[derive(Debug, Clone)]
pub struct Planner {
    model: AgentModel,
    cfg: PlannerConfig,
    /// Stacked `[x_2; ...; x_{N+1}] = phi x_1 + gamma U`.
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    /// Outputs `G x_{i+1}` as a function of `U`.
    out_gamma: DMatrix<f64>,
    hessian_u: DMatrix<f64>,
}

impl Planner {
    pub fn new(model: AgentModel, cfg: PlannerConfig) -> Result<Self> {
        cfg.validate(&model)?;
        let (n_x, n_u, n_y, n) = (model.n_x(), model.n_u(), model.n_y(), cfg.horizon);
        let mut phi = DMatrix::zeros(n_x * n, n_x);
        let mut gamma = DMatrix::zeros(n_x * n, n_u * n);
        let mut power = model.a.clone();
        // A^k B for k = 0..N-1.
        let mut ab = Vec::with_capacity(n);
        ab.push(model.b.clone());
        for k in 1..n {
            let next = &model.a * &ab[k - 1];
            ab.push(next);
        }
        for i in 0..n {
            phi.view_mut((i * n_x, 0), (n_x, n_x)).copy_from(&power);
            power = &model.a * power;
            for j in 0..=i {
                gamma.view_mut((i * n_x, j * n_u), (n_x, n_u)).copy_from(&ab[i - j]);
            }
        }
        let mut out_gamma = DMatrix::zeros(n_y * n, n_u * n);
        for i in 0..n {
            let rows = &model.g * gamma.rows(i * n_x, n_x);
            out_gamma.view_mut((i * n_y, 0), (n_y, n_u * n)).copy_from(&rows);
        }
        let qbar = DVector::from_fn(n_y * n, |r, _| cfg.q[r % n_y]);
        let rbar = DVector::from_fn(n_u * n, |r, _| cfg.r[r % n_u]);
        let mut hessian_u = out_gamma.tr_mul(&DMatrix::from_diagonal(&qbar)) * &out_gamma;
        for (i, rv) in rbar.iter().enumerate() {
            hessian_u[(i, i)] += rv;
        }
        hessian_u *= 2.0;
        Ok(Self { model, cfg, phi, gamma, out_gamma, hessian_u })
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    fn stacked_reference(&self, reference: &[DVector<f64>]) -> Result<DVector<f64>> {
        let (n_y, n) = (self.model.n_y(), self.cfg.horizon);
        if reference.len() != n || reference.iter().any(|r| r.len() != n_y) {
            return Err(Error::Dimension(format!(
                "reference must hold {n} outputs of length {n_y}"
            )));
        }
        let mut y = DVector::zeros(n_y * n);
        for (i, r) in reference.iter().enumerate() {
            y.rows_mut(i * n_y, n_y).copy_from(r);
        }
        Ok(y)
    }

    /// Linear term of the tracking cost in `U`, and its constant.
    fn tracking_terms(&self, x_init: &DVector<f64>, yref: &DVector<f64>) -> (DVector<f64>, f64) {
        let (n_y, n_u) = (self.model.n_y(), self.model.n_u());
        let free = yref - self.block_output(&(&self.phi * x_init));
        let qfree = DVector::from_fn(free.len(), |r, _| self.cfg.q[r % n_y] * free[r]);
        let trim = DVector::from_fn(n_u * self.cfg.horizon, |r, _| self.model.trim[r % n_u]);
        let rtrim = DVector::from_fn(trim.len(), |r, _| self.cfg.r[r % n_u] * trim[r]);
        let lin = -2.0 * self.out_gamma.tr_mul(&qfree) - 2.0 * &rtrim;
        (lin, free.dot(&qfree) + trim.dot(&rtrim))
    }

    fn block_output(&self, stacked_x: &DVector<f64>) -> DVector<f64> {
        let (n_x, n_y, n) = (self.model.n_x(), self.model.n_y(), self.cfg.horizon);
        let mut y = DVector::zeros(n_y * n);
        for i in 0..n {
            y.rows_mut(i * n_y, n_y).copy_from(&(&self.model.g * stacked_x.rows(i * n_x, n_x)));
        }
        y
    }

    fn split_controls(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_u = self.model.n_u();
        (0..self.cfg.horizon).map(|i| z.rows(i * n_u, n_u).into_owned()).collect()
    }

    /// Minimizer of the tracking cost with no constraints at all.
    pub fn unconstrained_controls(
        &self,
        x_init: &DVector<f64>,
        reference: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>> {
        let yref = self.stacked_reference(reference)?;
        let (lin, _) = self.tracking_terms(x_init, &yref);
        let chol = self
            .hessian_u
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("tracking cost is not strictly convex in the inputs".into()))?;
        Ok(self.split_controls(&chol.solve(&(-lin))))
    }

    /// Initial SCP iterate: the previous plan shifted, else the LQ rollout.
    pub fn warm_start(
        &self,
        x_init: &DVector<f64>,
        reference: &[DVector<f64>],
        prev_plan: Option<&PlanResult>,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let controls = match prev_plan {
            Some(prev) if prev.controls.len() == self.cfg.horizon => prev.shifted_controls(),
            _ => self.unconstrained_controls(x_init, reference)?,
        };
        let states = self.model.rollout(x_init, &controls);
        Ok((controls, states))
    }

    pub fn plan(
        &self,
        x_init: &DVector<f64>,
        reference: &[DVector<f64>],
        obstacles: &[TrackedObstacle],
        prev_plan: Option<&PlanResult>,
    ) -> Result<PlanResult> {
        self.plan_impl(x_init, reference, obstacles, prev_plan, None)
    }

    /// Like [`Planner::plan`], also returning every QP subproblem with its solution.
    pub fn plan_traced(
        &self,
        x_init: &DVector<f64>,
        reference: &[DVector<f64>],
        obstacles: &[TrackedObstacle],
        prev_plan: Option<&PlanResult>,
    ) -> Result<(PlanResult, Vec<(QpProblem, QpSolution)>)> {
        let mut qps = Vec::new();
        let plan = self.plan_impl(x_init, reference, obstacles, prev_plan, Some(&mut qps))?;
        Ok((plan, qps))
    }

    fn plan_impl(
        &self,
        x_init: &DVector<f64>,
        reference: &[DVector<f64>],
        obstacles: &[TrackedObstacle],
        prev_plan: Option<&PlanResult>,
        mut sink: Option<&mut Vec<(QpProblem, QpSolution)>>,
    ) -> Result<PlanResult> {
        let start = Instant::now();
        let (n_x, n_u, n) = (self.model.n_x(), self.model.n_u(), self.cfg.horizon);
        if x_init.len() != n_x {
            return Err(Error::Dimension(format!("initial state must have length {n_x}")));
        }
        for ob in obstacles {
            if ob.ensemble.horizon() < n {
                return Err(Error::Dimension(format!(
                    "obstacle {} forecast covers {} steps, horizon is {n}",
                    ob.ensemble.obstacle_id,
                    ob.ensemble.horizon()
                )));
            }
        }
        let yref = self.stacked_reference(reference)?;
        let (lin_u, constant) = self.tracking_terms(x_init, &yref);
        let (warm_controls, mut x_bar) = self.warm_start(x_init, reference, prev_plan)?;
        let free_x = &self.phi * x_init;

        let n_obs = obstacles.len();
        let n_s = 3 * n * n_obs;
        let nz = n_u * n + n_s;
        let mut p = DMatrix::zeros(nz, nz);
        p.view_mut((0, 0), (n_u * n, n_u * n)).copy_from(&self.hessian_u);
        for i in n_u * n..nz {
            p[(i, i)] = 2.0 * self.cfg.slack_weight;
        }
        let mut q = DVector::zeros(nz);
        q.rows_mut(0, n_u * n).copy_from(&lin_u);
        let mut lb = DVector::from_element(nz, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(nz, f64::INFINITY);
        for i in 0..n * n_u {
            lb[i] = self.cfg.input_lower[i % n_u];
            ub[i] = self.cfg.input_upper[i % n_u];
        }

        let radii: Vec<f64> = if n_obs == 0 { vec![f64::INFINITY] } else { self.cfg.trust_radii() };
        let settings = QpSettings { max_iter: self.cfg.qp_max_iter, ..Default::default() };
        let mut trace = Vec::with_capacity(radii.len());
        let mut solution = None;
        for &radius in &radii {
            let (a, b) = self.constraint_rows(x_init, &free_x, &x_bar, radius, obstacles, nz)?;
            let prob = QpProblem {
                p: p.clone(),
                q: q.clone(),
                a,
                b,
                lb: lb.clone(),
                ub: ub.clone(),
            };
            let sol = qp::solve(&prob, &settings)?;
            trace.push(ScpIterate {
                radius,
                status: sol.status,
                objective: sol.objective + constant,
                qp_iterations: sol.iterations,
                kkt_max: sol.kkt.max(),
            });
            let optimal = sol.is_optimal();
            let controls = self.split_controls(&sol.z);
            if let Some(sink) = sink.as_deref_mut() {
                sink.push((prob, sol));
            }
            if !optimal {
                solution = None;
                break;
            }
            x_bar = self.model.rollout(x_init, &controls);
            solution = Some(controls);
        }

        let (controls, feasible) = match solution {
            Some(c) => (c, true),
            None => {
                let fallback = match prev_plan {
                    Some(prev) if prev.controls.len() == n => prev.shifted_controls(),
                    _ => warm_controls,
                };
                (fallback, false)
            }
        };
        let states = self.model.rollout(x_init, &controls);
        Ok(PlanResult {
            controls,
            states,
            feasible,
            scp_trace: trace,
            solve_time: start.elapsed().as_secs_f64(),
        })
    }

    /// State bounds, trust region and risk rows, in `A z <= b` form.
    fn constraint_rows(
        &self,
        x_init: &DVector<f64>,
        free_x: &DVector<f64>,
        x_bar: &[DVector<f64>],
        radius: f64,
        obstacles: &[TrackedObstacle],
        nz: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (n_x, n_u, n) = (self.model.n_x(), self.model.n_u(), self.cfg.horizon);
        let nu_cols = n_u * n;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let gamma_row = |r: usize| -> Vec<f64> {
            let mut v = vec![0.0; nz];
            for (c, val) in v.iter_mut().take(nu_cols).enumerate() {
                *val = self.gamma[(r, c)];
            }
            v
        };
        let negate = |mut v: Vec<f64>| {
            v.iter_mut().for_each(|e| *e = -*e);
            v
        };

        for i in 0..n {
            for sb in &self.cfg.state_bounds {
                let r = i * n_x + sb.index;
                if sb.upper.is_finite() {
                    rows.push((gamma_row(r), sb.upper - free_x[r]));
                }
                if sb.lower.is_finite() {
                    rows.push((negate(gamma_row(r)), free_x[r] - sb.lower));
                }
            }
        }

        if radius.is_finite() {
            for i in 0..n {
                for j in 0..n_x - 1 {
                    let r = i * n_x + j;
                    let centre = x_bar[i + 1][j] - free_x[r];
                    rows.push((gamma_row(r), centre + radius));
                    rows.push((negate(gamma_row(r)), radius - centre));
                }
            }
        }

        let n_obs = obstacles.len();
        let p_now = self.model.position(x_init);
        for (k, ob) in obstacles.iter().enumerate() {
            let r_bar = ob.radius_estimate + self.cfg.r_p;
            // A path through the obstacle yields half-spaces facing opposite
            // ways; linearize at the current position instead.
            let crosses = (0..n).any(|i| {
                let mean = Vector3::from(ob.ensemble.mean(i));
                (self.model.position(&x_bar[i + 1]) - mean).norm() < r_bar
            });
            for i in 0..n {
                let mut p_bar = if crosses { p_now } else { self.model.position(&x_bar[i + 1]) };
                let coeffs = loop {
                    let attempt: Result<Vec<_>> = ob
                        .ensemble
                        .predictions
                        .iter()
                        .map(|member| {
                            let y = Vector3::from(member[i]);
                            risk::linearize_avoidance(&p_bar, &y, r_bar, self.cfg.beta_formula)
                                .map(|c| c.at(k, i))
                        })
                        .collect();
                    match attempt {
                        Ok(c) => break c,
                        Err(Error::DegenerateLinearization) => p_bar.x += 1e-6,
                        Err(e) => return Err(e),
                    }
                };
                let moments = risk::ensemble_moments(&coeffs)?;
                let offsets = risk::schur_offsets(&moments);
                let rr = risk::build_risk_rows(&moments, &offsets, self.cfg.epsilon, n_obs, &self.model.c)?;
                let lam_x = rr.lambda.columns(0, n_x);
                let block = lam_x * self.gamma.rows(i * n_x, n_x);
                let shift = lam_x * free_x.rows(i * n_x, n_x);
                let s_col = nu_cols + 3 * (k * n + i);
                let used = if rr.nu == 0.0 { 1 } else { 7 };
                for row in 0..used {
                    let mut v = vec![0.0; nz];
                    for c in 0..nu_cols {
                        v[c] = block[(row, c)];
                    }
                    if rr.nu != 0.0 {
                        for t in 0..3 {
                            v[s_col + t] = rr.lambda[(row, n_x + t)];
                        }
                    }
                    rows.push((v, rr.gamma[row] - shift[row]));
                }
            }
        }

        let m = rows.len();
        let mut a = DMatrix::zeros(m, nz);
        let mut b = DVector::zeros(m);
        for (r, (v, rhs)) in rows.into_iter().enumerate() {
            for (c, val) in v.into_iter().enumerate() {
                a[(r, c)] = val;
            }
            b[r] = rhs;
        }
        Ok((a, b))
    }
}

/// One-shot planning; builds a [`Planner`] each call.
pub fn plan(
    x_init: &DVector<f64>,
    reference: &[DVector<f64>],
    obstacles: &[TrackedObstacle],
    prev_plan: Option<&PlanResult>,
    cfg: &PlannerConfig,
    model: &AgentModel,
) -> Result<PlanResult> {
    Planner::new(model.clone(), cfg.clone())?.plan(x_init, reference, obstacles, prev_plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad() -> AgentModel {
        discretize_agent(&DoubleIntegratorSpec::quadrotor(), 0.05).unwrap()
    }

    #[test]
    fn zoh_gains() {
        let m = quad();
        assert_eq!(m.n_x(), 9);
        assert_abs_diff_eq!(m.a[(0, 1)], 0.05);
        assert_abs_diff_eq!(m.b[(0, 1)], -GRAVITY * 0.00125, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b[(3, 2)], GRAVITY * 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b[(4, 0)], -0.00125, epsilon = 1e-15);
        assert_abs_diff_eq!(m.a[(4, 8)], -GRAVITY * 0.00125, epsilon = 1e-15);
        assert_eq!(m.trim, DVector::from_vec(vec![-GRAVITY, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_input_falls_and_trim_hovers() {
        let m = quad();
        let x0 = m.state_at(&[1.0, 2.0, 3.0, 0.5]);
        let x1 = m.step(&x0, &DVector::zeros(4));
        assert_eq!((x1[0], x1[2], x1[6]), (1.0, 2.0, 0.5));
        assert_abs_diff_eq!(x1[4], 3.0 - 0.5 * GRAVITY * 0.0025, epsilon = 1e-14);
        let hover = m.step(&x0, &m.trim);
        assert_abs_diff_eq!((hover - x0).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn bad_time_step() {
        assert!(discretize_agent(&DoubleIntegratorSpec::quadrotor(), 0.0).is_err());
    }

    #[test]
    fn trust_radii_reference_values() {
        let cfg = PlannerConfig::default();
        assert_eq!(cfg.trust_radii(), vec![12.5, 3.125, 0.78125, 0.1953125]);
        let full = PlannerConfig { trust_start: TrustStart::Full, ..cfg };
        assert_eq!(full.trust_radii()[0], 50.0);
    }

    #[test]
    fn config_validation() {
        let m = quad();
        let bad = PlannerConfig { epsilon: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(&m), Err(Error::Config(_))));
        let bad = PlannerConfig { tau: 1.0, ..Default::default() };
        assert!(bad.validate(&m).is_err());
        assert!(PlannerConfig::default().validate(&m).is_ok());
    }

    #[test]
    fn shift_repeats_last_control() {
        let controls: Vec<_> = (0..10).map(|i| DVector::from_element(4, i as f64)).collect();
        let prev = PlanResult {
            states: vec![],
            controls,
            feasible: true,
            scp_trace: vec![],
            solve_time: 0.0,
        };
        let shifted = prev.shifted_controls();
        assert_eq!(shifted.len(), 10);
        assert_eq!(shifted[0][0], 1.0);
        assert_eq!(shifted[8][0], 9.0);
        assert_eq!(shifted[9][0], 9.0);
    }

    #[test]
    fn hover_at_origin_warm_start() {
        let m = quad();
        let planner = Planner::new(m.clone(), PlannerConfig::default()).unwrap();
        let x0 = m.state_at(&[0.0; 4]);
        let reference = vec![DVector::zeros(4); 10];
        let (_, states) = planner.warm_start(&x0, &reference, None).unwrap();
        for s in states {
            assert_abs_diff_eq!((s - &x0).amax(), 0.0, epsilon = 1e-10);
        }
    }
}
