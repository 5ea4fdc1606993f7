//! Slow, independent reference implementations used to validate the fast
//! paths, plus the random generators the test suites draw from.
//!
//! Everything here is deliberately written with a *different* algorithm than
//! the production code it checks: Jacobians come from central differences
//! instead of the axis-cross-arm formula, QPs are solved by an accelerated
//! projected-gradient ascent on the dual instead of an active-set method, and
//! hull areas come from gift wrapping instead of the monotone chain. A bug
//! would have to be implemented twice, two different ways, to slip through.
//!
//! These routines are orders of magnitude slower than the production ones and
//! exist only for verification; nothing in the simulator calls them.

use nalgebra::{DMatrix, DVector, Matrix3xX, Unit, Vector3};
use rand::Rng;

use crate::chain::{ControlPoint, Joint, KinematicChain};
use crate::error::{Error, Result};
use crate::qp::QpProblem;

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

/// Central-difference positional Jacobian of one control point.
pub fn fd_point_jacobian(
    chain: &KinematicChain<f64>,
    q: &DVector<f64>,
    point_index: usize,
    step: f64,
) -> Matrix3xX<f64> {
    let n = chain.n_joints();
    let mut jac = Matrix3xX::zeros(n);
    for i in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += step;
        qm[i] -= step;
        let pp = chain.forward_kinematics(&qp).unwrap()[point_index];
        let pm = chain.forward_kinematics(&qm).unwrap()[point_index];
        jac.set_column(i, &((pp - pm) / (2.0 * step)));
    }
    jac
}

/// Random serial chain (1-7 joints, 1-3 collision spheres) plus a joint
/// vector sampled inside its position limits.
pub fn random_chain<R: Rng>(rng: &mut R) -> (KinematicChain<f64>, DVector<f64>) {
    let n = rng.random_range(1..=7);
    let joints: Vec<Joint<f64>> = (0..n)
        .map(|i| {
            let axis = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 {
                    break Unit::new_normalize(v);
                }
            };
            let offset = if i == 0 {
                Vector3::zeros()
            } else {
                Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
            };
            Joint { axis, offset }
        })
        .collect();
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut vlo = DVector::zeros(n);
    let mut vhi = DVector::zeros(n);
    for i in 0..n {
        let center = rng.random_range(-0.5..0.5);
        let half = rng.random_range(0.3..2.5);
        lower[i] = center - half;
        upper[i] = center + half;
        vlo[i] = -rng.random_range(0.5..3.0);
        vhi[i] = rng.random_range(0.5..3.0);
    }
    let n_points = rng.random_range(1..=3);
    let points: Vec<ControlPoint<f64>> = (0..n_points)
        .map(|k| {
            let last = k == n_points - 1;
            ControlPoint {
                // The last point rides the last link and is the end-effector.
                link: if last { n - 1 } else { rng.random_range(0..n) },
                local: Vector3::new(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                ),
                radius: rng.random_range(0.0..0.2),
                end_effector: last,
            }
        })
        .collect();
    let chain = KinematicChain::new(joints, lower.clone(), upper.clone(), vlo, vhi, points)
        .expect("generated chain is structurally valid");
    let q = DVector::from_fn(n, |i, _| rng.random_range(lower[i]..upper[i]));
    (chain, q)
}

// ---------------------------------------------------------------------------
// Quadratic programs
// ---------------------------------------------------------------------------

/// Output of the reference QP solve.
#[derive(Debug, Clone)]
pub struct ReferenceQpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Certified bound on the objective sub-optimality at `x`.
    pub gap: f64,
}

/// Solves a feasible strictly convex QP by accelerated projected-gradient
/// ascent on the Lagrange dual, stopping once the duality gap certifies the
/// objective to `gap_tol` (relative). Errors if the budget runs out first -
/// callers treat that as a test failure, never as "close enough".
pub fn solve_qp_reference(
    problem: &QpProblem<f64>,
    gap_tol: f64,
    max_iterations: usize,
) -> Result<ReferenceQpSolution> {
    let m = problem.n_vars();
    // Stack general rows and finite bounds into one n_i' x >= b_i list.
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for r in 0..problem.n_rows() {
        normals.push(problem.ineq_matrix.row(r).transpose());
        rhs.push(problem.ineq_rhs[r]);
    }
    for i in 0..m {
        if let Some(lo) = problem.lower[i] {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            normals.push(e);
            rhs.push(lo);
        }
        if let Some(hi) = problem.upper[i] {
            let mut e = DVector::zeros(m);
            e[i] = -1.0;
            normals.push(e);
            rhs.push(-hi);
        }
    }
    let k = normals.len();
    let chol = problem
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidQp("reference solver needs a PD Hessian".into()))?;

    let x_of = |lambda: &DVector<f64>| -> DVector<f64> {
        let mut rhs_vec = -problem.linear.clone();
        for (i, n_i) in normals.iter().enumerate() {
            rhs_vec.axpy(lambda[i], n_i, 1.0);
        }
        chol.solve(&rhs_vec)
    };

    if k == 0 {
        let x = x_of(&DVector::zeros(0));
        let objective = problem.objective(&x);
        return Ok(ReferenceQpSolution { x, objective, gap: 0.0 });
    }

    // Lipschitz constant of the dual gradient: lambda_max(N' H^{-1} N),
    // estimated by power iteration with a safety factor.
    let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut lip = 1.0;
    for _ in 0..50 {
        // w = N' H^{-1} N v
        let mut nv = DVector::zeros(m);
        for (i, n_i) in normals.iter().enumerate() {
            nv.axpy(v[i], n_i, 1.0);
        }
        let hinv_nv = chol.solve(&nv);
        let mut w = DVector::zeros(k);
        for (i, n_i) in normals.iter().enumerate() {
            w[i] = n_i.dot(&hinv_nv);
        }
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE {
            break;
        }
        lip = norm;
        v = w / norm;
    }
    let step = 1.0 / (lip * 1.05 + 1e-12);

    // FISTA with gradient-based adaptive restart.
    let mut lambda = DVector::zeros(k);
    let mut momentum = lambda.clone();
    let mut theta = 1.0_f64;
    let mut best: Option<ReferenceQpSolution> = None;
    for _ in 0..max_iterations {
        let x = x_of(&momentum);
        let mut grad = DVector::zeros(k);
        for (i, n_i) in normals.iter().enumerate() {
            grad[i] = rhs[i] - n_i.dot(&x);
        }
        let mut next = &momentum + &grad * step;
        for l in next.iter_mut() {
            if *l < 0.0 {
                *l = 0.0;
            }
        }

        // Certificate check at the new multiplier.
        let x_next = x_of(&next);
        let mut violation = 0.0_f64;
        let mut comp = 0.0_f64;
        for (i, n_i) in normals.iter().enumerate() {
            let s = n_i.dot(&x_next) - rhs[i];
            violation = violation.max(-s);
            comp += next[i] * s;
        }
        let objective = problem.objective(&x_next);
        let scale = objective.abs().max(1.0);
        let gap = comp.abs() + violation * (problem.linear.norm() + problem.hessian.norm());
        if violation <= gap_tol * 10.0 && gap <= gap_tol * scale {
            return Ok(ReferenceQpSolution { x: x_next, objective, gap });
        }
        match &best {
            Some(b) if b.gap <= gap => {}
            _ => best = Some(ReferenceQpSolution { x: x_next.clone(), objective, gap }),
        }

        // Adaptive restart: drop momentum when it points against the gradient.
        let diff = &next - &lambda;
        if grad.dot(&diff) < 0.0 {
            theta = 1.0;
            momentum = next.clone();
        } else {
            let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            momentum = &next + &diff * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        lambda = next;
    }
    Err(Error::InvalidQp(format!(
        "reference QP solver did not certify gap {gap_tol:e} within {max_iterations} iterations \
         (best gap {:e})",
        best.map(|b| b.gap).unwrap_or(f64::NAN)
    )))
}

/// Random strictly convex QP with a guaranteed strictly feasible interior
/// point, up to 12 variables and 40 general rows.
pub fn random_feasible_qp<R: Rng>(rng: &mut R) -> QpProblem<f64> {
    let m = rng.random_range(2..=12);
    let k = rng.random_range(0..=40);
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let hessian = &a.transpose() * &a + DMatrix::identity(m, m);
    let linear = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    // Strictly feasible anchor the constraints are carved around.
    let x0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let ineq_matrix = DMatrix::from_fn(k, m, |_, _| rng.random_range(-1.0..1.0));
    let mut ineq_rhs = DVector::zeros(k);
    for r in 0..k {
        let margin = rng.random_range(0.05..1.0);
        ineq_rhs[r] = ineq_matrix.row(r).transpose().dot(&x0) - margin;
    }
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for i in 0..m {
        lower.push(if rng.random_range(0.0..1.0) < 0.3 {
            None
        } else {
            Some(x0[i] - rng.random_range(0.2..2.0))
        });
        upper.push(if rng.random_range(0.0..1.0) < 0.3 {
            None
        } else {
            Some(x0[i] + rng.random_range(0.2..2.0))
        });
    }
    QpProblem::new(hessian, linear, ineq_matrix, ineq_rhs, lower, upper)
        .expect("generated problem is valid by construction")
}

// ---------------------------------------------------------------------------
// Convex hulls
// ---------------------------------------------------------------------------

/// Convex hull area by gift wrapping (Jarvis march) plus the shoelace
/// formula. Quadratic in the point count; used only to cross-check the
/// production monotone-chain implementation.
pub fn gift_wrap_hull_area(points: &[(f64, f64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let dist2 = |a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
    };
    // Start at the lexicographically smallest point.
    let start = *points
        .iter()
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap())
        .unwrap();
    let mut hull = vec![start];
    let mut current = start;
    loop {
        // Pick the point everything else lies to the left of; break angle
        // ties by taking the farthest so collinear chains collapse.
        let mut candidate = points[0];
        for &p in points.iter().skip(1) {
            if p == current {
                continue;
            }
            if candidate == current {
                candidate = p;
                continue;
            }
            let c = cross(current, candidate, p);
            if c < 0.0 || (c == 0.0 && dist2(current, p) > dist2(current, candidate)) {
                candidate = p;
            }
        }
        if candidate == current {
            return 0.0; // all points coincide
        }
        if candidate == start {
            break;
        }
        hull.push(candidate);
        current = candidate;
        if hull.len() > points.len() {
            return 0.0; // degenerate input (defensive; cannot cycle otherwise)
        }
    }
    if hull.len() < 3 {
        return 0.0;
    }
    let mut twice_area = 0.0;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        twice_area += a.0 * b.1 - b.0 * a.1;
    }
    twice_area.abs() / 2.0
}
