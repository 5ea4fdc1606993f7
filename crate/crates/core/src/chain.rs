//! Serial-chain kinematics for velocity-controlled manipulators.
//!
//! A chain is a sequence of revolute joints. Joint `i` contributes the
//! transform `Trans(offset_i) * Rot(axis_i, q_i)` relative to its parent, so a
//! chain is fully described by one fixed translation and one unit rotation
//! axis per joint (axis directions are expressed in the parent frame, i.e.
//! they are world directions at the zero configuration). Collision geometry is
//! a set of spheres ("control points") rigidly attached to links; the safety
//! filter constrains the velocity of each sphere center.
//!
//! The module provides forward kinematics, positional point Jacobians, the
//! damped pseudo-inverse `J^T (J J^T + mu I)^{-1}`, and the null-space
//! projector `I - J^+ J` used for mid-range joint biasing.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Matrix3xX, OMatrix, Translation3, Unit, UnitQuaternion, Vector3, U3};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Unit-norm tolerance accepted for joint axes at construction.
const AXIS_NORM_TOL: f64 = 1e-9;

/// One revolute joint: a fixed translation from the parent frame followed by a
/// rotation of `q` radians about `axis`.
#[derive(Debug, Clone)]
pub struct Joint<T: Real> {
    /// Rotation axis, expressed in the parent frame. Must be unit length.
    pub axis: Unit<Vector3<T>>,
    /// Fixed translation from the parent joint's frame to this joint's origin.
    pub offset: Vector3<T>,
}

/// A sphere rigidly attached to a link, used as a collision-avoidance site.
#[derive(Debug, Clone)]
pub struct ControlPoint<T: Real> {
    /// Index of the link the sphere rides on (link `i` is the body moved by
    /// joint `i`).
    pub link: usize,
    /// Sphere center in the link frame.
    pub local: Vector3<T>,
    /// Sphere radius (meters, non-negative).
    pub radius: T,
    /// Marks the point tracked by the performance controller.
    pub end_effector: bool,
}

/// Joint positions plus simulation time; the minimal state of a
/// velocity-controlled arm.
#[derive(Debug, Clone)]
pub struct RobotState<T: Real> {
    pub q: DVector<T>,
    pub t: T,
}

impl<T: Real> RobotState<T> {
    pub fn new(q: DVector<T>, t: T) -> Self {
        Self { q, t }
    }
}

/// World-frame position and positional Jacobian of one control point.
#[derive(Debug, Clone)]
pub struct ControlPointKinematics<T: Real> {
    pub position: Vector3<T>,
    /// 3 x n Jacobian mapping joint velocities to the point's linear velocity.
    pub jacobian: Matrix3xX<T>,
}

/// A validated serial chain with joint/velocity limits and collision spheres.
#[derive(Debug, Clone)]
pub struct KinematicChain<T: Real> {
    joints: Vec<Joint<T>>,
    joint_lower: DVector<T>,
    joint_upper: DVector<T>,
    vel_lower: DVector<T>,
    vel_upper: DVector<T>,
    control_points: Vec<ControlPoint<T>>,
    end_effector: usize,
}

impl<T: Real> KinematicChain<T> {
    /// Builds a chain, checking every structural invariant:
    ///
    /// * at least one joint, all limit vectors of matching length;
    /// * every axis unit-norm within `1e-9`;
    /// * `joint_lower[i] < joint_upper[i]` (zero-width ranges rejected);
    /// * `vel_lower[i] < 0 < vel_upper[i]` so the zero command is always
    ///   admissible;
    /// * control points reference existing links, have non-negative radii,
    ///   and at least one is flagged as the end-effector.
    pub fn new(
        joints: Vec<Joint<T>>,
        joint_lower: DVector<T>,
        joint_upper: DVector<T>,
        vel_lower: DVector<T>,
        vel_upper: DVector<T>,
        control_points: Vec<ControlPoint<T>>,
    ) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(Error::InvalidChain("chain needs at least one joint".into()));
        }
        for (name, v) in [
            ("joint_lower", &joint_lower),
            ("joint_upper", &joint_upper),
            ("vel_lower", &vel_lower),
            ("vel_upper", &vel_upper),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: match name {
                        "joint_lower" => "joint_lower",
                        "joint_upper" => "joint_upper",
                        "vel_lower" => "vel_lower",
                        _ => "vel_upper",
                    },
                    expected: n,
                    got: v.len(),
                });
            }
        }
        let tol = real::<T>(AXIS_NORM_TOL);
        for (i, joint) in joints.iter().enumerate() {
            let norm_err = (joint.axis.as_ref().norm() - T::one()).abs();
            if norm_err > tol {
                return Err(Error::InvalidChain(format!(
                    "joint {i} axis is not unit length (|norm - 1| = {:e})",
                    norm_err.to_f64().unwrap_or(f64::NAN)
                )));
            }
            if !joint.offset.iter().all(|c| c.finite()) {
                return Err(Error::InvalidChain(format!("joint {i} offset is not finite")));
            }
        }
        for i in 0..n {
            if !(joint_lower[i] < joint_upper[i]) {
                return Err(Error::InvalidChain(format!(
                    "joint {i} position range is empty or reversed"
                )));
            }
            if !(vel_lower[i] < T::zero() && T::zero() < vel_upper[i]) {
                return Err(Error::InvalidChain(format!(
                    "joint {i} velocity bounds must straddle zero"
                )));
            }
        }
        if control_points.is_empty() {
            return Err(Error::InvalidChain("chain needs at least one control point".into()));
        }
        for (k, cp) in control_points.iter().enumerate() {
            if cp.link >= n {
                return Err(Error::InvalidChain(format!(
                    "control point {k} references link {} but the chain has {n} links",
                    cp.link
                )));
            }
            if cp.radius < T::zero() || !cp.radius.finite() {
                return Err(Error::InvalidChain(format!(
                    "control point {k} radius must be finite and non-negative"
                )));
            }
        }
        let end_effector = control_points
            .iter()
            .position(|cp| cp.end_effector)
            .ok_or_else(|| {
                Error::InvalidChain("no control point is flagged as the end-effector".into())
            })?;
        Ok(Self {
            joints,
            joint_lower,
            joint_upper,
            vel_lower,
            vel_upper,
            control_points,
            end_effector,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_points(&self) -> usize {
        self.control_points.len()
    }

    pub fn control_points(&self) -> &[ControlPoint<T>] {
        &self.control_points
    }

    /// Index (into `control_points`) of the tracked end-effector point.
    pub fn end_effector_index(&self) -> usize {
        self.end_effector
    }

    pub fn joint_lower(&self) -> &DVector<T> {
        &self.joint_lower
    }

    pub fn joint_upper(&self) -> &DVector<T> {
        &self.joint_upper
    }

    pub fn vel_lower(&self) -> &DVector<T> {
        &self.vel_lower
    }

    pub fn vel_upper(&self) -> &DVector<T> {
        &self.vel_upper
    }

    /// Center of each joint's position range; the rest posture the mid-range
    /// bias pulls toward.
    pub fn mid_range(&self) -> DVector<T> {
        (&self.joint_lower + &self.joint_upper) * real::<T>(0.5)
    }

    /// Clamps `q` into the joint-position box in place. Returns `true` if any
    /// component was altered.
    pub fn clamp_joints(&self, q: &mut DVector<T>) -> bool {
        let mut clamped = false;
        for i in 0..q.len() {
            if q[i] < self.joint_lower[i] {
                q[i] = self.joint_lower[i];
                clamped = true;
            } else if q[i] > self.joint_upper[i] {
                q[i] = self.joint_upper[i];
                clamped = true;
            }
        }
        clamped
    }

    fn check_q(&self, q: &DVector<T>) -> Result<()> {
        if q.len() != self.n_joints() {
            return Err(Error::DimensionMismatch {
                what: "joint vector q",
                expected: self.n_joints(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// World origin and world axis of every joint, plus the cumulative frame
    /// of every link, at configuration `q`.
    fn frames(&self, q: &DVector<T>) -> (Vec<Vector3<T>>, Vec<Vector3<T>>, Vec<Isometry3<T>>) {
        let n = self.n_joints();
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut links = Vec::with_capacity(n);
        let mut iso = Isometry3::identity();
        for (i, joint) in self.joints.iter().enumerate() {
            iso *= Translation3::from(joint.offset);
            origins.push(iso.translation.vector);
            axes.push(iso.rotation * joint.axis.as_ref());
            iso *= UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            links.push(iso);
        }
        (origins, axes, links)
    }

    /// World position of every control point at configuration `q`.
    pub fn forward_kinematics(&self, q: &DVector<T>) -> Result<Vec<Vector3<T>>> {
        self.check_q(q)?;
        let (_, _, links) = self.frames(q);
        Ok(self
            .control_points
            .iter()
            .map(|cp| links[cp.link].transform_point(&cp.local.into()).coords)
            .collect())
    }

    /// 3 x n positional Jacobian of control point `point_index` at `q`.
    ///
    /// Column `i` is `axis_i x (p - origin_i)` for joints at or before the
    /// point's link and zero for joints beyond it (moving a distal joint does
    /// not displace a proximal point).
    pub fn control_point_jacobian(&self, q: &DVector<T>, point_index: usize) -> Result<Matrix3xX<T>> {
        self.check_q(q)?;
        let cp = self.control_points.get(point_index).ok_or(Error::DimensionMismatch {
            what: "control point index",
            expected: self.control_points.len(),
            got: point_index,
        })?;
        let (origins, axes, links) = self.frames(q);
        let p = links[cp.link].transform_point(&cp.local.into()).coords;
        Ok(Self::point_jacobian(self.n_joints(), cp.link, &p, &origins, &axes))
    }

    fn point_jacobian(
        n: usize,
        link: usize,
        p: &Vector3<T>,
        origins: &[Vector3<T>],
        axes: &[Vector3<T>],
    ) -> Matrix3xX<T> {
        let mut jac = Matrix3xX::zeros(n);
        for i in 0..=link {
            let col = axes[i].cross(&(p - origins[i]));
            jac.set_column(i, &col);
        }
        jac
    }

    /// Position and Jacobian of every control point in one kinematic pass.
    pub fn point_kinematics(&self, q: &DVector<T>) -> Result<Vec<ControlPointKinematics<T>>> {
        self.check_q(q)?;
        let n = self.n_joints();
        let (origins, axes, links) = self.frames(q);
        Ok(self
            .control_points
            .iter()
            .map(|cp| {
                let position = links[cp.link].transform_point(&cp.local.into()).coords;
                let jacobian = Self::point_jacobian(n, cp.link, &position, &origins, &axes);
                ControlPointKinematics { position, jacobian }
            })
            .collect())
    }
}

/// Damped pseudo-inverse `J^T (J J^T + mu I)^{-1}` of a 3 x n point Jacobian.
///
/// The damping term keeps the 3x3 system positive definite for any `J`, so
/// singular configurations yield small commands instead of errors; the price
/// is a small tracking bias of relative size about `mu / (sigma^2 + mu)` in
/// directions with singular value `sigma`. `mu` must be positive.
pub fn damped_pseudo_inverse<T: Real>(jacobian: &Matrix3xX<T>, mu: T) -> Result<OMatrix<T, nalgebra::Dyn, U3>> {
    if !(mu > T::zero()) || !mu.finite() {
        return Err(Error::InvalidChain(format!(
            "pseudo-inverse damping must be positive and finite (got {})",
            mu.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let jjt: Matrix3<T> = jacobian * jacobian.transpose() + Matrix3::identity() * mu;
    let inv = jjt
        .try_inverse()
        .ok_or_else(|| Error::InvalidChain("damped Gram matrix was not invertible".into()))?;
    Ok(jacobian.transpose() * inv)
}

/// Null-space projector `I - J^+ J`; joint motions in its range do not move
/// the point `J` belongs to (exactly for the true pseudo-inverse, to within
/// the damping-induced leakage for the damped one).
pub fn null_space_projector<T: Real>(
    jacobian: &Matrix3xX<T>,
    pseudo_inverse: &OMatrix<T, nalgebra::Dyn, U3>,
) -> DMatrix<T> {
    let n = jacobian.ncols();
    DMatrix::identity(n, n) - pseudo_inverse * jacobian
}
