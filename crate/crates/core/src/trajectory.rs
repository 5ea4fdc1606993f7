//! Cartesian reference trajectories for the end effector.
//!
//! Each variant produces a position plus the matching feedforward velocity,
//! so the performance controller can track with zero steady-state lag. All
//! variants are periodic (or constant) and defined for any `t >= 0`.

use nalgebra::Vector3;

use crate::controller::TrackingTarget;
use crate::error::{Error, Result};

/// An end-effector reference path sampled by time.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// Stay at a fixed point.
    Hold { position: Vector3<f64> },
    /// Shuttle between two points with a cosine blend: smooth velocity that
    /// vanishes at both ends, one full there-and-back per period.
    PickPlace { from: Vector3<f64>, to: Vector3<f64>, period: f64 },
    /// Constant-rate circle in the xy-plane.
    CircleXy { center: Vector3<f64>, radius: f64, angular_rate: f64 },
    /// Constant-rate circle in the yz-plane.
    CircleYz { center: Vector3<f64>, radius: f64, angular_rate: f64 },
    /// Axis-aligned square in the xy-plane traversed at constant speed,
    /// counter-clockwise starting from the (+,+) corner. Velocity jumps at
    /// the corners, which makes it a deliberately harsh reference.
    Square { center: Vector3<f64>, half_side: f64, period: f64 },
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vector3<f64>, what: &str| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("trajectory {what} must be finite")))
            }
        };
        match self {
            Trajectory::Hold { position } => finite(position, "hold position"),
            Trajectory::PickPlace { from, to, period } => {
                finite(from, "pick point")?;
                finite(to, "place point")?;
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "pick-place period must be positive and finite".into(),
                    ));
                }
                Ok(())
            }
            Trajectory::CircleXy { center, radius, angular_rate }
            | Trajectory::CircleYz { center, radius, angular_rate } => {
                finite(center, "circle center")?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "circle radius must be positive and finite".into(),
                    ));
                }
                if !angular_rate.is_finite() {
                    return Err(Error::InvalidConfig(
                        "circle angular rate must be finite".into(),
                    ));
                }
                Ok(())
            }
            Trajectory::Square { center, half_side, period } => {
                finite(center, "square center")?;
                if !(*half_side > 0.0 && half_side.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "square half side must be positive and finite".into(),
                    ));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "square period must be positive and finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Reference position and feedforward velocity at time `t`.
    pub fn sample(&self, t: f64) -> TrackingTarget<f64> {
        match *self {
            Trajectory::Hold { position } => {
                TrackingTarget { position, velocity: Vector3::zeros() }
            }
            Trajectory::PickPlace { from, to, period } => {
                let phase = 2.0 * std::f64::consts::PI * (t.rem_euclid(period)) / period;
                let s = 0.5 * (1.0 - phase.cos());
                let s_dot = std::f64::consts::PI / period * phase.sin();
                TrackingTarget {
                    position: from + (to - from) * s,
                    velocity: (to - from) * s_dot,
                }
            }
            Trajectory::CircleXy { center, radius, angular_rate } => {
                let theta = angular_rate * t;
                TrackingTarget {
                    position: center
                        + Vector3::new(theta.cos(), theta.sin(), 0.0) * radius,
                    velocity: Vector3::new(-theta.sin(), theta.cos(), 0.0)
                        * (radius * angular_rate),
                }
            }
            Trajectory::CircleYz { center, radius, angular_rate } => {
                let theta = angular_rate * t;
                TrackingTarget {
                    position: center
                        + Vector3::new(0.0, theta.cos(), theta.sin()) * radius,
                    velocity: Vector3::new(0.0, -theta.sin(), theta.cos())
                        * (radius * angular_rate),
                }
            }
            Trajectory::Square { center, half_side, period } => {
                let h = half_side;
                let speed = 8.0 * h / period;
                let u4 = 4.0 * t.rem_euclid(period) / period;
                let k = u4.floor().min(3.0);
                let u = u4 - k; // progress along the current side, [0, 1)
                let (xy, v) = match k as usize {
                    0 => ((h - 2.0 * h * u, h), (-speed, 0.0)),
                    1 => ((-h, h - 2.0 * h * u), (0.0, -speed)),
                    2 => ((-h + 2.0 * h * u, -h), (speed, 0.0)),
                    _ => ((h, -h + 2.0 * h * u), (0.0, speed)),
                };
                TrackingTarget {
                    position: center + Vector3::new(xy.0, xy.1, 0.0),
                    velocity: Vector3::new(v.0, v.1, 0.0),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_velocity(traj: &Trajectory, t: f64) -> Vector3<f64> {
        let dt = 1e-7;
        (traj.sample(t + dt).position - traj.sample(t - dt).position) / (2.0 * dt)
    }

    #[test]
    fn hold_is_constant_with_zero_velocity() {
        let traj = Trajectory::Hold { position: Vector3::new(1.0, -2.0, 0.5) };
        for t in [0.0, 0.3, 10.0] {
            let s = traj.sample(t);
            assert_eq!(s.position, Vector3::new(1.0, -2.0, 0.5));
            assert_eq!(s.velocity, Vector3::zeros());
        }
    }

    #[test]
    fn pick_place_hits_both_endpoints_with_zero_velocity() {
        let from = Vector3::new(0.4, 0.0, 0.0);
        let to = Vector3::new(1.95, 0.0, 0.0);
        let traj = Trajectory::PickPlace { from, to, period: 24.0 };
        let start = traj.sample(0.0);
        assert_relative_eq!(start.position, from, epsilon = 1e-12);
        assert_relative_eq!(start.velocity.norm(), 0.0, epsilon = 1e-12);
        let mid = traj.sample(12.0);
        assert_relative_eq!(mid.position, to, epsilon = 1e-9);
        assert_relative_eq!(mid.velocity.norm(), 0.0, epsilon = 1e-9);
        let back = traj.sample(24.0);
        assert_relative_eq!(back.position, from, epsilon = 1e-9);
    }

    #[test]
    fn reported_velocity_matches_finite_differences() {
        let cases = vec![
            Trajectory::PickPlace {
                from: Vector3::new(0.0, 0.0, 0.0),
                to: Vector3::new(1.0, 2.0, -0.5),
                period: 7.0,
            },
            Trajectory::CircleXy {
                center: Vector3::new(0.5, 0.0, 0.3),
                radius: 0.4,
                angular_rate: 1.7,
            },
            Trajectory::CircleYz {
                center: Vector3::new(0.5, 0.0, 0.3),
                radius: 0.2,
                angular_rate: -0.9,
            },
            // Sample times below stay away from the square's corners.
            Trajectory::Square {
                center: Vector3::new(0.0, 0.5, 0.2),
                half_side: 0.3,
                period: 8.0,
            },
        ];
        for traj in cases {
            for t in [0.31, 1.13, 2.71, 5.41, 6.9] {
                let s = traj.sample(t);
                let fd = fd_velocity(&traj, t);
                assert_relative_eq!(s.velocity, fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn circles_keep_their_radius_and_speed() {
        let traj = Trajectory::CircleXy {
            center: Vector3::new(1.0, 1.0, 1.0),
            radius: 0.75,
            angular_rate: 2.0,
        };
        for t in [0.0, 0.5, 1.9, 3.3] {
            let s = traj.sample(t);
            assert_relative_eq!(
                (s.position - Vector3::new(1.0, 1.0, 1.0)).norm(),
                0.75,
                epsilon = 1e-12
            );
            assert_relative_eq!(s.velocity.norm(), 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_visits_all_corners_at_constant_speed() {
        let traj = Trajectory::Square {
            center: Vector3::zeros(),
            half_side: 0.5,
            period: 4.0,
        };
        assert_relative_eq!(
            traj.sample(0.0).position,
            Vector3::new(0.5, 0.5, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            traj.sample(1.0).position,
            Vector3::new(-0.5, 0.5, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            traj.sample(2.0).position,
            Vector3::new(-0.5, -0.5, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            traj.sample(3.0).position,
            Vector3::new(0.5, -0.5, 0.0),
            epsilon = 1e-12
        );
        for t in [0.2, 1.4, 2.6, 3.8] {
            assert_relative_eq!(traj.sample(t).velocity.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn trajectories_are_periodic() {
        let traj = Trajectory::PickPlace {
            from: Vector3::zeros(),
            to: Vector3::new(1.0, 0.0, 0.0),
            period: 3.0,
        };
        for t in [0.1, 0.77, 2.9] {
            assert_relative_eq!(
                traj.sample(t).position,
                traj.sample(t + 3.0).position,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Trajectory::Hold { position: Vector3::new(f64::NAN, 0.0, 0.0) }
            .validate()
            .is_err());
        assert!(Trajectory::PickPlace {
            from: Vector3::zeros(),
            to: Vector3::zeros(),
            period: 0.0,
        }
        .validate()
        .is_err());
        assert!(Trajectory::CircleXy {
            center: Vector3::zeros(),
            radius: -0.1,
            angular_rate: 1.0,
        }
        .validate()
        .is_err());
        assert!(Trajectory::Square {
            center: Vector3::zeros(),
            half_side: 0.5,
            period: f64::INFINITY,
        }
        .validate()
        .is_err());
        assert!(Trajectory::CircleYz {
            center: Vector3::zeros(),
            radius: 0.5,
            angular_rate: 1.0,
        }
        .validate()
        .is_ok());
    }
}
