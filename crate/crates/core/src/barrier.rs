//! Distance barriers between robot control points and spherical obstacles,
//! and their linearization into joint-velocity constraints.
//!
//! For a control point at `p` (radius `r`) and an obstacle at `c` (radius
//! `R`, velocity `v`), the barrier is the inflated signed clearance
//!
//! ```text
//! h = ||p - c|| - r - R - margin,
//! ```
//!
//! and the safe set is `h >= 0`. Differentiating along the unit direction
//! `n = (p - c) / ||p - c||` gives `dh/dt = n . (J q_dot - v)`, so enforcing
//! the exponential decay condition `dh/dt >= -gamma h` (with `gamma` the
//! obstacle's own class-K slope) is the linear constraint
//!
//! ```text
//! (n' J) q_dot >= -gamma h + n . v.
//! ```
//!
//! Obstacles carry a relaxation policy: priority 0 marks a region that must
//! never be relaxed, while positive priorities admit a slack variable with
//! quadratic penalty weight `beta` and an upper cap. All rows produced by one
//! obstacle share a single slack variable, so relaxing an obstacle weakens
//! every pairing with it coherently instead of point by point.

use nalgebra::{DVector, Unit, Vector3};

use crate::chain::KinematicChain;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Separation below which the contact direction is numerically meaningless
/// and constraint assembly refuses to proceed.
pub const DIRECTION_TOL: f64 = 1e-6;

/// A spherical unsafe region with a relaxation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle<T: Real> {
    /// Stable name used in reports and CSV columns.
    pub name: String,
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub radius: T,
    /// 0 protects the region unconditionally; positive values mark it as a
    /// candidate for relaxation when the constraint set turns infeasible.
    pub priority: u32,
    /// Quadratic slack penalty weight. Larger values keep the relaxed
    /// behavior closer to the strict one; must be positive and finite when
    /// the obstacle is relaxable (unused otherwise).
    pub beta: T,
    /// Upper bound on the slack. Zero makes the constraint effectively hard
    /// even at positive priority; `infinity` leaves the slack unbounded.
    pub slack_cap: T,
    /// Class-K slope of this obstacle's decay condition `dh/dt >= -gamma h`;
    /// larger lets the arm approach faster. Must be positive.
    pub gamma: T,
}

impl<T: Real> Obstacle<T> {
    /// Whether infeasibility handling may open this obstacle's constraints.
    pub fn relaxable(&self) -> bool {
        self.priority > 0 && self.slack_cap > T::zero()
    }

    /// Checks the numeric fields; called by constraint assembly.
    pub fn validate(&self) -> Result<()> {
        let finite_vec =
            |v: &Vector3<T>| v.iter().all(|x| x.finite());
        if !finite_vec(&self.position) || !finite_vec(&self.velocity) {
            return Err(Error::InvalidConfig(format!(
                "obstacle '{}' has non-finite position or velocity",
                self.name
            )));
        }
        if !self.radius.finite() || self.radius < T::zero() {
            return Err(Error::InvalidConfig(format!(
                "obstacle '{}' needs a finite non-negative radius",
                self.name
            )));
        }
        if self.slack_cap < T::zero() || self.slack_cap != self.slack_cap {
            return Err(Error::InvalidConfig(format!(
                "obstacle '{}' needs a non-negative slack cap",
                self.name
            )));
        }
        if self.relaxable() && !(self.beta > T::zero() && self.beta.finite()) {
            return Err(Error::InvalidConfig(format!(
                "relaxable obstacle '{}' needs a positive finite slack penalty",
                self.name
            )));
        }
        if !(self.gamma > T::zero() && self.gamma.finite()) {
            return Err(Error::InvalidConfig(format!(
                "obstacle '{}' needs a positive finite decay rate gamma",
                self.name
            )));
        }
        Ok(())
    }
}

/// Inflated signed clearance between a control point and an obstacle.
pub fn barrier_value<T: Real>(
    point: &Vector3<T>,
    point_radius: T,
    obstacle_position: &Vector3<T>,
    obstacle_radius: T,
    margin: T,
) -> T {
    (point - obstacle_position).norm() - point_radius - obstacle_radius - margin
}

/// Unit vector from the obstacle center toward the control point - the
/// gradient of the separation distance with respect to the point position.
/// Errors when the two centers (nearly) coincide.
pub fn barrier_direction<T: Real>(
    point: &Vector3<T>,
    obstacle_position: &Vector3<T>,
) -> Result<Unit<Vector3<T>>> {
    let diff = point - obstacle_position;
    let separation = diff.norm();
    if separation <= real::<T>(DIRECTION_TOL) {
        return Err(Error::DegenerateDirection {
            separation: separation.to_f64().unwrap_or(0.0),
        });
    }
    Ok(Unit::new_unchecked(diff / separation))
}

/// One linear joint-velocity constraint derived from a (point, obstacle)
/// pairing: `row . q_dot (+ slack) >= rhs`.
#[derive(Debug, Clone)]
pub struct BarrierConstraint<T: Real> {
    /// Constraint coefficients, one per joint.
    pub row: DVector<T>,
    /// Right-hand side `-gamma_i h + n . v_obstacle`.
    pub rhs: T,
    /// Barrier value at assembly time.
    pub h: T,
    /// Index into the obstacle slice this row guards against.
    pub obstacle: usize,
    /// Index of the chain control point this row constrains.
    pub point: usize,
    /// Shared slack slot when the obstacle is relaxable, `None` for hard rows.
    pub relax_slot: Option<usize>,
}

/// All constraints for one instant, plus the slack-slot layout.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet<T: Real> {
    pub constraints: Vec<BarrierConstraint<T>>,
    /// Obstacle index behind each slack slot, in slot order.
    pub slack_obstacles: Vec<usize>,
}

impl<T: Real> ConstraintSet<T> {
    /// Number of shared slack variables a relaxed program would add.
    pub fn n_slacks(&self) -> usize {
        self.slack_obstacles.len()
    }

    /// Smallest barrier value in the set, `None` when empty.
    pub fn min_barrier(&self) -> Option<T> {
        self.constraints
            .iter()
            .map(|c| c.h)
            .min_by(|a, b| a.partial_cmp(b).expect("barrier values are finite"))
    }
}

/// Builds the constraint set for the given configuration: one row per
/// (constrained point, obstacle) pairing, with slack slots assigned per
/// relaxable obstacle in obstacle order.
pub fn build_constraints<T: Real>(
    chain: &KinematicChain<T>,
    q: &DVector<T>,
    obstacles: &[Obstacle<T>],
    constrained_points: &[usize],
    margin: T,
) -> Result<ConstraintSet<T>> {
    if !(margin >= T::zero() && margin.finite()) {
        return Err(Error::InvalidConfig(
            "barrier margin must be non-negative and finite".into(),
        ));
    }
    for obstacle in obstacles {
        obstacle.validate()?;
    }

    let mut slack_obstacles = Vec::new();
    let mut slot_of = vec![None; obstacles.len()];
    if !constrained_points.is_empty() {
        for (i, obstacle) in obstacles.iter().enumerate() {
            if obstacle.relaxable() {
                slot_of[i] = Some(slack_obstacles.len());
                slack_obstacles.push(i);
            }
        }
    }

    let all_kinematics = chain.point_kinematics(q)?;
    let mut constraints = Vec::with_capacity(constrained_points.len() * obstacles.len());
    for &point in constrained_points {
        let kin = all_kinematics.get(point).ok_or(Error::DimensionMismatch {
            what: "constrained point index",
            expected: chain.n_points(),
            got: point,
        })?;
        let point_radius = chain.control_points()[point].radius;
        for (index, obstacle) in obstacles.iter().enumerate() {
            let h = barrier_value(
                &kin.position,
                point_radius,
                &obstacle.position,
                obstacle.radius,
                margin,
            );
            let direction = barrier_direction(&kin.position, &obstacle.position)?;
            let row = kin.jacobian.tr_mul(&direction);
            let rhs = -obstacle.gamma * h + direction.dot(&obstacle.velocity);
            constraints.push(BarrierConstraint {
                row,
                rhs,
                h,
                obstacle: index,
                point,
                relax_slot: slot_of[index],
            });
        }
    }
    Ok(ConstraintSet { constraints, slack_obstacles })
}
