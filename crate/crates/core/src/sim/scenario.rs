use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::obstacle::{step_obstacle, DiscParams, ObstacleKind, ObstacleModel};
use super::reference::FigureEight;
use crate::bootstrap::BootstrapParams;
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncounterConfig {
    /// Range of the obstacle introduction time, seconds.
    pub intro_time: [f64; 2],
    /// Range of the delay from introduction to crossing the reference, seconds.
    pub lead_time: [f64; 2],
    /// Radius of the ball around the reference point the obstacle is aimed at.
    pub aim_jitter: f64,
    /// Minimum distance the obstacle travels before the crossing, meters;
    /// slow obstacles get a longer lead time.
    pub min_travel: f64,
    /// Simulated time after the crossing, seconds.
    pub post_encounter: f64,
    /// The obstacle has left once it is this far from the reference point.
    pub exit_radius: f64,
}

impl Default for EncounterConfig {
    fn default() -> Self {
        Self {
            intro_time: [1.0, 2.0],
            lead_time: [6.0, 7.0],
            aim_jitter: 0.3,
            min_travel: 6.0,
            post_encounter: 2.0,
            exit_radius: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleConfig {
    pub model: ObstacleKind,
    /// True radius, meters.
    pub radius: f64,
    /// Planner radius estimate as a multiple of the true radius (at least 1).
    pub radius_margin: f64,
    /// Launch speed range, m/s.
    pub speed: [f64; 2],
    /// Launch elevation range, radians.
    pub elevation: [f64; 2],
    /// Heading spread around the perpendicular to the reference, radians.
    pub heading_spread: f64,
    /// Disc only: spin rate range, rad/s.
    pub spin: [f64; 2],
    /// Disc only: nose-up tilt of the disc against its velocity, radians.
    pub tilt: [f64; 2],
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            model: ObstacleKind::ConstantVelocity,
            radius: 0.25,
            radius_margin: 1.1,
            speed: [0.41, 8.43],
            elevation: [-0.2, 0.2],
            heading_spread: 0.5,
            spin: [50.0, 80.0],
            tilt: [0.05, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Planner and measurement rate, Hz.
    pub rate: f64,
    /// Half-width of the uniform measurement noise, meters.
    pub noise_half_width: f64,
    /// When false the planner ignores the obstacle.
    pub avoid: bool,
    /// Scale on the simulated agent's input matrix; 1 means no model mismatch.
    pub actuation_gain: f64,
    pub encounter: EncounterConfig,
    pub reference: FigureEight,
    pub obstacle: ObstacleConfig,
    pub planner: PlannerConfig,
    pub bootstrap: BootstrapParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "case1".into(),
            seed: 1,
            rate: 20.0,
            noise_half_width: 0.125,
            avoid: true,
            actuation_gain: 1.0,
            encounter: EncounterConfig::default(),
            reference: FigureEight::default(),
            obstacle: ObstacleConfig::default(),
            planner: PlannerConfig::default(),
            bootstrap: BootstrapParams::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be an ordered finite range, got {r:?}")));
    }
    Ok(())
}

impl Scenario {
    /// Scenario with case-specific obstacle settings.
    pub fn case(n: usize) -> Result<Self> {
        let mut s = Scenario { name: format!("case{n}"), ..Default::default() };
        match n {
            1 => {}
            2 => {
                s.obstacle.model = ObstacleKind::DragBall { drag: 1.6 };
                s.obstacle.speed = [3.41, 6.37];
                s.obstacle.elevation = [0.0, 0.6];
            }
            3 => {
                s.obstacle.model = ObstacleKind::Frisbee(DiscParams::default());
                s.obstacle.radius = 0.137;
                s.obstacle.speed = [5.76, 6.68];
                s.obstacle.elevation = [0.35, 0.55];
                s.encounter.lead_time = [6.5, 7.0];
            }
            _ => return Err(Error::Config(format!("unknown case {n}; expected 1, 2 or 3"))),
        }
        Ok(s)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn radius_estimate(&self) -> f64 {
        self.obstacle.radius * self.obstacle.radius_margin
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("rate must be positive, got {}", self.rate)));
        }
        if !(self.noise_half_width >= 0.0) {
            return Err(Error::Config("noise_half_width must be non-negative".into()));
        }
        if !(self.obstacle.radius > 0.0) || !(self.obstacle.radius_margin >= 1.0) {
            return Err(Error::Config("obstacle radius must be positive and radius_margin at least 1".into()));
        }
        if !(self.reference.period > 0.0) {
            return Err(Error::Config("reference period must be positive".into()));
        }
        if !(self.actuation_gain > 0.0) {
            return Err(Error::Config("actuation_gain must be positive".into()));
        }
        check_range("encounter.intro_time", self.encounter.intro_time)?;
        check_range("encounter.lead_time", self.encounter.lead_time)?;
        check_range("obstacle.speed", self.obstacle.speed)?;
        check_range("obstacle.elevation", self.obstacle.elevation)?;
        check_range("obstacle.spin", self.obstacle.spin)?;
        check_range("obstacle.tilt", self.obstacle.tilt)?;
        if self.encounter.intro_time[0] < 0.0 || self.obstacle.speed[0] < 0.0 {
            return Err(Error::Config("introduction time and speed must be non-negative".into()));
        }
        if self.bootstrap.horizon != self.planner.horizon {
            return Err(Error::Config(format!(
                "forecast horizon {} differs from planner horizon {}",
                self.bootstrap.horizon, self.planner.horizon
            )));
        }
        let needed = self.bootstrap.n_train as f64 / self.rate;
        if self.encounter.lead_time[0] < needed {
            log::warn!(
                "lead time {:.2} s is shorter than the {needed:.2} s of history the forecaster needs",
                self.encounter.lead_time[0]
            );
        }
        self.bootstrap.validate()
    }
}

/// Independent random stream for `(seed, run, stream)`.
pub fn stream_rng(seed: u64, run: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_mul(4).wrapping_add(stream));
    rng
}

pub(crate) const SCENARIO_STREAM: u64 = 0;
pub(crate) const NOISE_STREAM: u64 = 1;

/// Sampled obstacle launch for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Encounter {
    pub intro_step: usize,
    pub encounter_step: usize,
    pub end_step: usize,
    /// Obstacle at the introduction step.
    pub obstacle: ObstacleModel,
    pub launch_speed: f64,
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn sample_encounter(s: &Scenario, run: u64) -> Result<Encounter> {
    let mut rng = stream_rng(s.seed, run, SCENARIO_STREAM);
    let dt = s.dt();
    let intro_step = (sample(&mut rng, s.encounter.intro_time) / dt).ceil() as usize;
    let speed = sample(&mut rng, s.obstacle.speed);
    let mut lead = sample(&mut rng, s.encounter.lead_time);
    if speed > 0.0 {
        lead = lead.max(s.encounter.min_travel / speed);
    }
    let lead_steps = ((lead / dt).round() as usize).max(1);
    let encounter_step = intro_step + lead_steps;
    let t_e = encounter_step as f64 * dt;

    let tangent = s.reference.velocity(t_e);
    let tangent = if tangent.norm() > 1e-9 { tangent.normalize() } else { Vector3::x() };
    let mut perp = Vector3::z().cross(&tangent);
    // Head inward so the obstacle approaches from outside the reference loop.
    let outward = s.reference.position(t_e) - Vector3::from(s.reference.center);
    let coin = rng.random_bool(0.5);
    let inward = perp.dot(&outward);
    if inward > 1e-6 || (inward.abs() <= 1e-6 && coin) {
        perp = -perp;
    }
    let yaw = sample(&mut rng, [-s.obstacle.heading_spread, s.obstacle.heading_spread]);
    let heading = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * perp;
    let elevation = sample(&mut rng, s.obstacle.elevation);
    let dir = heading * elevation.cos() + Vector3::z() * elevation.sin();
    let vel = dir * speed;

    let mut state = vec![0.0, 0.0, 0.0, vel.x, vel.y, vel.z];
    if let ObstacleKind::Frisbee(_) = s.obstacle.model {
        // Tilt the disc normal back against the flight direction.
        let tilt = sample(&mut rng, s.obstacle.tilt);
        let axis = Unit::new_normalize(Vector3::z().cross(&dir).try_normalize(1e-12).unwrap_or(Vector3::y()));
        let normal = Rotation3::from_axis_angle(&axis, -tilt) * Vector3::z();
        let theta = normal.x.clamp(-1.0, 1.0).asin();
        let phi = (-normal.y).atan2(normal.z);
        let spin = sample(&mut rng, s.obstacle.spin);
        state.extend_from_slice(&[phi, theta, 0.0, 0.0, 0.0, spin]);
    }
    let jitter = loop {
        let j = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if j.norm_squared() <= 1.0 {
            break j * s.encounter.aim_jitter;
        }
    };

    let launch = ObstacleModel::new(s.obstacle.model, state, s.obstacle.radius)?;
    let mut nominal = launch.clone();
    for _ in 0..lead_steps {
        nominal = step_obstacle(&nominal, dt);
    }
    if nominal.state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nominal obstacle trajectory"));
    }
    let offset = s.reference.position(t_e) + jitter - nominal.position();
    let mut obstacle = launch;
    obstacle.translate(&offset);

    let end_step = encounter_step + (s.encounter.post_encounter / dt).ceil() as usize;
    Ok(Encounter {
        intro_step,
        encounter_step,
        end_step,
        obstacle,
        launch_speed: speed,
    })
}
