use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Lissajous figure eight: `x = A_x sin(w t)`, `y = A_y sin(2 w t)`, constant height and yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureEight {
    pub center: [f64; 3],
    pub amplitude: [f64; 2],
    /// Seconds per full loop.
    pub period: f64,
    pub yaw: f64,
}

impl Default for FigureEight {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 2.0],
            amplitude: [4.0, 2.0],
            period: 20.0,
            yaw: 0.0,
        }
    }
}

impl FigureEight {
    fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let w = self.omega();
        Vector3::new(
            self.center[0] + self.amplitude[0] * (w * t).sin(),
            self.center[1] + self.amplitude[1] * (2.0 * w * t).sin(),
            self.center[2],
        )
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let w = self.omega();
        Vector3::new(
            self.amplitude[0] * w * (w * t).cos(),
            2.0 * self.amplitude[1] * w * (2.0 * w * t).cos(),
            0.0,
        )
    }

    /// Output `[x, y, z, yaw]`.
    pub fn output(&self, t: f64) -> DVector<f64> {
        let p = self.position(t);
        DVector::from_vec(vec![p.x, p.y, p.z, self.yaw])
    }

    /// Outputs at `t + dt, ..., t + n dt`.
    pub fn window(&self, t: f64, dt: f64, n: usize) -> Vec<DVector<f64>> {
        (1..=n).map(|i| self.output(t + i as f64 * dt)).collect()
    }

    pub fn max_speed(&self) -> f64 {
        let w = self.omega();
        (0..1000)
            .map(|k| self.velocity(k as f64 * self.period / 1000.0).norm())
            .fold(0.0, f64::max)
            .max(w * self.amplitude[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closes_after_one_period() {
        let f = FigureEight::default();
        assert!((f.position(0.0) - f.position(f.period)).norm() < 1e-12);
        assert!(f.max_speed() < 2.0);
    }

    #[test]
    fn velocity_matches_finite_difference() {
        let f = FigureEight::default();
        let h = 1e-6;
        for t in [0.0, 1.3, 7.7] {
            let fd = (f.position(t + h) - f.position(t - h)) / (2.0 * h);
            assert!((fd - f.velocity(t)).norm() < 1e-6);
        }
    }
}
