//! Obstacle motion models. The world frame has `z` up.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::GRAVITY;

/// Flat spinning disc aerodynamics.
///
/// Lift and drag act on the whole disc; pitch, roll and spin moments use
/// rates made dimensionless with `d / (2 V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscParams {
    pub mass: f64,
    pub diameter: f64,
    pub area: f64,
    pub air_density: f64,
    pub ixx: f64,
    pub izz: f64,
    pub cl0: f64,
    pub cl_alpha: f64,
    pub cd0: f64,
    pub cd_alpha: f64,
    /// Angle of attack of minimum drag, radians.
    pub alpha0: f64,
    pub cm0: f64,
    pub cm_alpha: f64,
    pub cm_q: f64,
    pub cr_r: f64,
    pub cr_p: f64,
    pub cn_r: f64,
}

impl Default for DiscParams {
    fn default() -> Self {
        Self {
            mass: 0.175,
            diameter: 0.274,
            area: 0.057,
            air_density: 1.23,
            ixx: 0.001219,
            izz: 0.002352,
            cl0: 0.33,
            cl_alpha: 1.9,
            cd0: 0.18,
            cd_alpha: 0.69,
            alpha0: -4.0_f64.to_radians(),
            cm0: -0.08,
            cm_alpha: 0.43,
            cm_q: -0.005,
            cr_r: 0.014,
            cr_p: -0.0055,
            cn_r: -0.0000071,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleKind {
    ConstantVelocity,
    /// `v' = g - drag * v`.
    DragBall { drag: f64 },
    Frisbee(DiscParams),
}

impl ObstacleKind {
    pub fn state_dim(&self) -> usize {
        match self {
            ObstacleKind::Frisbee(_) => 12,
            _ => 6,
        }
    }
}

/// Spheres use `[position, velocity]`; the disc appends roll, pitch and spin
/// angles and the body rates `p, q, r` in the non-spinning disc frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleModel {
    pub kind: ObstacleKind,
    pub state: Vec<f64>,
    pub radius: f64,
}

impl ObstacleModel {
    pub fn new(kind: ObstacleKind, state: Vec<f64>, radius: f64) -> Result<Self> {
        if state.len() != kind.state_dim() {
            return Err(Error::Dimension(format!(
                "obstacle state has {} entries, expected {}",
                state.len(),
                kind.state_dim()
            )));
        }
        if !(radius > 0.0) {
            return Err(Error::Argument(format!("obstacle radius must be positive, got {radius}")));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("obstacle state"));
        }
        Ok(Self { kind, state, radius })
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.state[0], self.state[1], self.state[2])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.state[3], self.state[4], self.state[5])
    }

    pub fn translate(&mut self, offset: &Vector3<f64>) {
        for i in 0..3 {
            self.state[i] += offset[i];
        }
    }
}

fn derivative(kind: &ObstacleKind, s: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; s.len()];
    d[..3].copy_from_slice(&s[3..6]);
    match kind {
        ObstacleKind::ConstantVelocity => {}
        ObstacleKind::DragBall { drag } => {
            d[3] = -drag * s[3];
            d[4] = -drag * s[4];
            d[5] = -GRAVITY - drag * s[5];
        }
        ObstacleKind::Frisbee(p) => disc_derivative(p, s, &mut d),
    }
    d
}

/// Rotation from the disc frame to the world: roll about `x`, then pitch about `y`.
fn disc_rotation(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cf, -sf, 0.0, sf, cf);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    rx * ry
}

fn disc_derivative(p: &DiscParams, s: &[f64], d: &mut [f64]) {
    let vel = Vector3::new(s[3], s[4], s[5]);
    let (phi, theta) = (s[6], s[7]);
    let (wp, wq, wr) = (s[9], s[10], s[11]);
    let rot = disc_rotation(phi, theta);
    let normal = rot.column(2).into_owned();

    let speed = vel.norm();
    let mut force = Vector3::new(0.0, 0.0, -p.mass * GRAVITY);
    let mut moment = Vector3::zeros();
    if speed > 1e-9 {
        let v_disc = rot.transpose() * vel;
        let planar = (v_disc.x.powi(2) + v_disc.y.powi(2)).sqrt();
        let alpha = (-v_disc.z).atan2(planar);
        let qbar = 0.5 * p.air_density * speed * speed * p.area;
        let v_hat = vel / speed;

        let cl = p.cl0 + p.cl_alpha * alpha;
        let cd = p.cd0 + p.cd_alpha * (alpha - p.alpha0).powi(2);
        let lift_dir = normal - v_hat * normal.dot(&v_hat);
        if lift_dir.norm() > 1e-12 {
            force += lift_dir.normalize() * (qbar * cl);
        }
        force -= v_hat * (qbar * cd);

        // Moments in the disc frame about the airflow-aligned axes; with no
        // in-plane airflow only spin damping remains.
        let scale = p.diameter / (2.0 * speed);
        let spin = wr * scale;
        let lever = qbar * p.diameter;
        moment = Vector3::z() * (lever * p.cn_r * spin);
        if planar > 1e-9 {
            let e_p = Vector3::new(v_disc.x / planar, v_disc.y / planar, 0.0);
            let e_lat = Vector3::z().cross(&e_p);
            let omega = Vector3::new(wp, wq, wr);
            let nose_up_rate = -omega.dot(&e_lat) * scale;
            let roll_rate = omega.dot(&e_p) * scale;
            let pitch = lever * (p.cm0 + p.cm_alpha * alpha + p.cm_q * nose_up_rate);
            let roll = lever * (p.cr_r * spin + p.cr_p * roll_rate);
            moment += -e_lat * pitch + e_p * roll;
        }
    }

    let acc = force / p.mass;
    d[3] = acc.x;
    d[4] = acc.y;
    d[5] = acc.z;

    let tan_t = theta.tan();
    d[6] = wp / theta.cos();
    d[7] = wq;
    d[8] = wr - wp * tan_t;
    // Angular momentum in the non-spinning frame, which turns at (p, q, p tan).
    let (i, j) = (p.ixx, p.izz);
    d[9] = (moment.x - (wq * j * wr - i * wp * wq * tan_t)) / i;
    d[10] = (moment.y - (i * wp * wp * tan_t - wp * j * wr)) / i;
    d[11] = moment.z / j;
}

/// Largest RK4 substep for the disc; the spin makes its attitude stiff.
const DISC_SUBSTEP: f64 = 0.002;

fn rk4(kind: &ObstacleKind, s: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + w * y).collect() };
    let k1 = derivative(kind, s);
    let k2 = derivative(kind, &add(s, &k1, 0.5 * h));
    let k3 = derivative(kind, &add(s, &k2, 0.5 * h));
    let k4 = derivative(kind, &add(s, &k3, h));
    s.iter()
        .enumerate()
        .map(|(i, v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Advances the obstacle by `dt`: exact for constant velocity, RK4 otherwise.
pub fn step_obstacle(model: &ObstacleModel, dt: f64) -> ObstacleModel {
    let s = &model.state;
    let next = match model.kind {
        ObstacleKind::ConstantVelocity => {
            let mut n = s.clone();
            for i in 0..3 {
                n[i] += dt * s[3 + i];
            }
            n
        }
        ObstacleKind::DragBall { .. } => rk4(&model.kind, s, dt),
        ObstacleKind::Frisbee(_) => {
            let n = (dt.abs() / DISC_SUBSTEP).ceil().max(1.0) as usize;
            let h = dt / n as f64;
            let mut x = s.clone();
            for _ in 0..n {
                x = rk4(&model.kind, &x, h);
            }
            x
        }
    };
    ObstacleModel {
        kind: model.kind,
        state: next,
        radius: model.radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_velocity_advances() {
        let m = ObstacleModel::new(ObstacleKind::ConstantVelocity, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0.25).unwrap();
        let n = step_obstacle(&m, 0.05);
        assert_abs_diff_eq!(n.state[0], 0.05);
        assert_eq!(n.velocity(), m.velocity());
    }

    #[test]
    fn drag_free_ball_is_a_parabola() {
        let mut m = ObstacleModel::new(ObstacleKind::DragBall { drag: 0.0 }, vec![0.0, 0.0, 0.0, 1.0, 0.0, 10.0], 0.2).unwrap();
        let dt = 0.05;
        for k in 1..=40 {
            m = step_obstacle(&m, dt);
            let t = k as f64 * dt;
            assert_abs_diff_eq!(m.state[2], 10.0 * t - 0.5 * GRAVITY * t * t, epsilon = 1e-8);
            assert_abs_diff_eq!(m.state[0], t, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrong_state_size() {
        assert!(ObstacleModel::new(ObstacleKind::Frisbee(DiscParams::default()), vec![0.0; 6], 0.1).is_err());
        assert!(ObstacleModel::new(ObstacleKind::ConstantVelocity, vec![0.0; 6], 0.0).is_err());
    }

    #[test]
    fn disc_at_rest_falls_freely() {
        let mut s = vec![0.0; 12];
        s[2] = 10.0;
        let m = ObstacleModel::new(ObstacleKind::Frisbee(DiscParams::default()), s, 0.137).unwrap();
        let n = step_obstacle(&m, 0.01);
        assert!(n.state[5] < 0.0);
        assert_abs_diff_eq!(n.state[0], 0.0);
    }
}
