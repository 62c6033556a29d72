//! Analytic conductivity phantoms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Point;

/// Gaussian bump `amplitude * exp(-|x - center|² / (2 width²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub width: f64,
    pub amplitude: f64,
}

/// Disk with a constant conductivity that overrides everything beneath it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub background: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub disks: Vec<Disk>,
}

impl Phantom {
    /// Checks that the phantom is bounded below by a positive constant.
    pub fn validate(&self) -> Result<()> {
        let floor = self.background
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude.min(0.0))
                .sum::<f64>();
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::Parameter(format!(
                "phantom may reach nonpositive conductivity (lower bound {floor})"
            )));
        }
        if self.bumps.iter().any(|b| !(b.width > 0.0)) {
            return Err(Error::Parameter("bump widths must be positive".into()));
        }
        if self
            .disks
            .iter()
            .any(|d| !(d.value > 0.0 && d.value.is_finite() && d.radius > 0.0))
        {
            return Err(Error::Parameter(
                "disk values and radii must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, x: Point) -> f64 {
        for d in &self.disks {
            if (x[0] - d.center[0]).hypot(x[1] - d.center[1]) < d.radius {
                return d.value;
            }
        }
        self.background
            + self
                .bumps
                .iter()
                .map(|b| {
                    let r2 = (x[0] - b.center[0]).powi(2) + (x[1] - b.center[1]).powi(2);
                    b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp()
                })
                .sum::<f64>()
    }

    /// Mean over the unit square by the midpoint rule on an `n × n` grid.
    pub fn mean(&self, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += self.eval([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        total / (n * n) as f64
    }

    /// Smooth inhomogeneous test phantom with unit background.
    pub fn smooth_default() -> Self {
        Self {
            background: 1.0,
            bumps: vec![
                Bump {
                    center: [0.3, 0.3],
                    width: 0.1,
                    amplitude: 1.0,
                },
                Bump {
                    center: [0.7, 0.6],
                    width: 0.12,
                    amplitude: -0.5,
                },
                Bump {
                    center: [0.4, 0.75],
                    width: 0.08,
                    amplitude: 0.6,
                },
            ],
            disks: Vec::new(),
        }
    }

    /// Homogeneous background with one nearly insulating disk.
    pub fn insulating_disk(background: f64, center: Point, radius: f64) -> Self {
        Self {
            background,
            bumps: Vec::new(),
            disks: vec![Disk {
                center,
                radius,
                value: 1e-3 * background,
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_validate() {
        let p = Phantom::smooth_default();
        p.validate().unwrap();
        assert!((p.eval([0.3, 0.3]) - 2.0).abs() < 0.01);
        assert!(p.eval([0.95, 0.05]) > 0.99);
        let d = Phantom::insulating_disk(2.0, [0.5, 0.5], 0.1);
        assert_eq!(d.eval([0.5, 0.55]), 2e-3);
        assert_eq!(d.eval([0.5, 0.65]), 2.0);
        let bad = Phantom {
            background: 1.0,
            bumps: vec![Bump {
                center: [0.5, 0.5],
                width: 0.1,
                amplitude: -1.5,
            }],
            disks: vec![],
        };
        assert!(bad.validate().is_err());
    }
}
