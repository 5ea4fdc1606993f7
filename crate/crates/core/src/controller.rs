//! The nominal velocity-level performance controller the safety filter wraps.
//!
//! The controller tracks a Cartesian end-effector reference with damped
//! least-squares resolved-rate control and spends the remaining redundancy on
//! a mid-range joint posture:
//!
//! ```text
//! q_dot = J_ee^+ (p_dot_d - lambda (p - p_d)) + (I - J_ee^+ J_ee) u_posture,
//! u_posture = -k_posture W (q - q_mid),   W = diag(1 / (upper - lower)).
//! ```
//!
//! `J_ee^+` is the damped pseudo-inverse `J' (J J' + mu I)^{-1}`. The damping
//! trades tracking bandwidth near singularities for bounded joint speeds: the
//! effective error decay in a task direction with singular value `sigma` is
//! `lambda sigma^2 / (sigma^2 + mu)`, and posture motion leaks into the task
//! space with gain at most `mu sigma_max / (sigma_min^2 + mu)`.
//!
//! Nothing here knows about obstacles; safety is entirely the filter's job.

use nalgebra::{DVector, Vector3};

use crate::chain::{damped_pseudo_inverse, null_space_projector, KinematicChain};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Instantaneous Cartesian reference for the end effector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingTarget<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
}

/// Gains of the performance controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfConfig<T: Real> {
    /// Proportional gain on the Cartesian tracking error (1/s).
    pub tracking_gain: T,
    /// Pseudo-inverse damping; must be positive.
    pub damping: T,
    /// Gain of the null-space pull toward mid-range joints; zero disables it.
    pub posture_gain: T,
}

impl<T: Real> Default for PerfConfig<T> {
    fn default() -> Self {
        Self {
            tracking_gain: crate::scalar::real(2.0),
            damping: crate::scalar::real(0.01),
            posture_gain: T::zero(),
        }
    }
}

impl<T: Real> PerfConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tracking_gain >= T::zero() && self.tracking_gain.finite()) {
            return Err(Error::InvalidConfig(
                "tracking gain must be non-negative and finite".into(),
            ));
        }
        if !(self.damping > T::zero() && self.damping.finite()) {
            return Err(Error::InvalidConfig(
                "pseudo-inverse damping must be positive and finite".into(),
            ));
        }
        if !(self.posture_gain >= T::zero() && self.posture_gain.finite()) {
            return Err(Error::InvalidConfig(
                "posture gain must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Range-normalized pull toward the middle of the joint limits:
/// `-gain * (q - q_mid) / (upper - lower)` per joint.
pub fn mid_range_bias<T: Real>(
    chain: &KinematicChain<T>,
    q: &DVector<T>,
    gain: T,
) -> DVector<T> {
    let mid = chain.mid_range();
    let lower = chain.joint_lower();
    let upper = chain.joint_upper();
    DVector::from_fn(chain.n_joints(), |i, _| {
        -gain * (q[i] - mid[i]) / (upper[i] - lower[i])
    })
}

/// Computes the nominal joint-velocity command for the current state.
pub fn performance_command<T: Real>(
    chain: &KinematicChain<T>,
    q: &DVector<T>,
    target: &TrackingTarget<T>,
    config: &PerfConfig<T>,
) -> Result<DVector<T>> {
    config.validate()?;
    if q.len() != chain.n_joints() {
        return Err(Error::DimensionMismatch {
            what: "joint vector",
            expected: chain.n_joints(),
            got: q.len(),
        });
    }
    let kinematics = chain.point_kinematics(q)?;
    let ee = &kinematics[chain.end_effector_index()];
    let error = ee.position - target.position;
    let task_velocity = target.velocity - error * config.tracking_gain;
    let pinv = damped_pseudo_inverse(&ee.jacobian, config.damping)?;
    let mut command = &pinv * task_velocity;
    if config.posture_gain > T::zero() {
        let projector = null_space_projector(&ee.jacobian, &pinv);
        let bias = mid_range_bias(chain, q, config.posture_gain);
        command += projector * bias;
    }
    Ok(command)
}
