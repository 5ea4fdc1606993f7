//! Dense solver for strictly convex quadratic programs.
//!
//! Problem form:
//!
//! ```text
//! minimize   1/2 x' H x + f' x
//! subject to G x >= g            (general inequality rows)
//!            lb <= x <= ub       (per-coordinate box, sides optional)
//! ```
//!
//! `H` must be symmetric positive definite, which makes the minimizer unique.
//! The solver is a dual active-set method: it starts at the unconstrained
//! minimum `-H^{-1} f` (always computable), repeatedly picks a violated
//! constraint, and takes the exact primal/dual step that adds it to the active
//! set, dropping blocking constraints along the way. Every step solves a small
//! equality-constrained subproblem exactly, so on regular problems the method
//! terminates after finitely many active-set changes with KKT residuals at
//! rounding level - there is no tolerance tuning and no convergence loop to
//! baby-sit.
//!
//! Infeasibility is certified, not guessed: the method only reports
//! `Infeasible` when the violated constraint's normal is a combination of
//! active normals and no active constraint can be dropped, i.e. the dual
//! objective increases without bound along a feasible dual ray (a Farkas
//! certificate that no point satisfies all constraints).
//!
//! The solve is deterministic: identical inputs (including the warm start)
//! produce bit-identical outputs. A warm start does not move the minimizer -
//! it only reorders which violated constraint is activated first, which tends
//! to rebuild the previous tick's active set in fewer iterations.
//!
//! Sizes here are small (tens of variables, tens of rows), so everything is
//! dense and factorizations are refreshed per iteration; no sparse machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Solver tolerances and iteration budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings<T: Real> {
    /// Acceptable stationarity / complementary-slackness residual.
    pub kkt_tol: T,
    /// Constraint violations below this (scaled) threshold count as satisfied.
    pub feas_tol: T,
    /// Cap on active-set changes before giving up with `IterationLimit`.
    pub max_iterations: usize,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            kkt_tol: real(1e-6),
            feas_tol: real(1e-8),
            max_iterations: 2000,
        }
    }
}

/// A validated strictly convex QP.
#[derive(Debug, Clone)]
pub struct QpProblem<T: Real> {
    /// Symmetric positive definite cost Hessian `H` (m x m).
    pub hessian: DMatrix<T>,
    /// Linear cost term `f` (m).
    pub linear: DVector<T>,
    /// Inequality rows `G` (k x m); the constraint sense is `G x >= g`.
    pub ineq_matrix: DMatrix<T>,
    /// Inequality right-hand side `g` (k).
    pub ineq_rhs: DVector<T>,
    /// Per-coordinate lower bounds; `None` marks an unbounded side (infinite
    /// floats are rejected - absence is the sentinel, not a large number).
    pub lower: Vec<Option<T>>,
    /// Per-coordinate upper bounds, same convention as `lower`.
    pub upper: Vec<Option<T>>,
}

/// Symmetry tolerance on `H` accepted at validation.
const SYMMETRY_TOL: f64 = 1e-10;

impl<T: Real> QpProblem<T> {
    /// Builds and validates a problem. Rejects dimension mismatches,
    /// non-finite entries, asymmetric or non-positive-definite Hessians, and
    /// crossed bounds (`lb > ub`).
    pub fn new(
        hessian: DMatrix<T>,
        linear: DVector<T>,
        ineq_matrix: DMatrix<T>,
        ineq_rhs: DVector<T>,
        lower: Vec<Option<T>>,
        upper: Vec<Option<T>>,
    ) -> Result<Self> {
        let problem = Self { hessian, linear, ineq_matrix, ineq_rhs, lower, upper };
        problem.validate()?;
        Ok(problem)
    }

    /// Number of decision variables.
    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    /// Number of general inequality rows.
    pub fn n_rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    /// Cost `1/2 x' H x + f' x` at `x`.
    pub fn objective(&self, x: &DVector<T>) -> T {
        (x.dot(&(&self.hessian * x))) * real::<T>(0.5) + self.linear.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let m = self.n_vars();
        if self.hessian.nrows() != m || self.hessian.ncols() != m {
            return Err(Error::InvalidQp(format!(
                "Hessian is {}x{} but there are {m} variables",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        let k = self.n_rows();
        if self.ineq_matrix.nrows() != k || (k > 0 && self.ineq_matrix.ncols() != m) {
            return Err(Error::InvalidQp(format!(
                "constraint matrix is {}x{} but expected {k}x{m}",
                self.ineq_matrix.nrows(),
                self.ineq_matrix.ncols()
            )));
        }
        if self.lower.len() != m || self.upper.len() != m {
            return Err(Error::InvalidQp("bound vectors must have one entry per variable".into()));
        }
        if !self.hessian.iter().all(|v| v.finite())
            || !self.linear.iter().all(|v| v.finite())
            || !self.ineq_matrix.iter().all(|v| v.finite())
            || !self.ineq_rhs.iter().all(|v| v.finite())
        {
            return Err(Error::InvalidQp("matrix or vector entry is NaN or infinite".into()));
        }
        let sym_tol = real::<T>(SYMMETRY_TOL);
        for i in 0..m {
            for j in (i + 1)..m {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > sym_tol {
                    return Err(Error::InvalidQp(format!(
                        "Hessian is asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        if self.hessian.clone().cholesky().is_none() {
            return Err(Error::InvalidQp("Hessian is not positive definite".into()));
        }
        for i in 0..m {
            if let Some(lo) = self.lower[i] {
                if !lo.finite() {
                    return Err(Error::InvalidQp(format!(
                        "lower bound {i} is not finite; use None for an unbounded side"
                    )));
                }
            }
            if let Some(hi) = self.upper[i] {
                if !hi.finite() {
                    return Err(Error::InvalidQp(format!(
                        "upper bound {i} is not finite; use None for an unbounded side"
                    )));
                }
            }
            if let (Some(lo), Some(hi)) = (self.lower[i], self.upper[i]) {
                if lo > hi {
                    return Err(Error::InvalidQp(format!("bounds crossed at variable {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// KKT point found; `x` is the unique minimizer.
    Optimal,
    /// The constraint set is empty (certified by an unbounded dual ray).
    Infeasible,
    /// Iteration budget exhausted before reaching either verdict.
    IterationLimit,
}

/// Result of a solve.
#[derive(Debug, Clone)]
pub struct QpSolution<T: Real> {
    /// Final iterate; the minimizer when `status == Optimal`.
    pub x: DVector<T>,
    pub status: QpStatus,
    /// Worst KKT residual at `x`: max of stationarity, primal violation,
    /// complementary slackness, and dual negativity.
    pub kkt_residual: T,
    /// Active-set changes performed.
    pub iterations: usize,
    /// Cost `1/2 x' H x + f' x` at `x`.
    pub objective: T,
    /// Multipliers for the `G x >= g` rows (non-negative at optimum).
    pub ineq_duals: DVector<T>,
    /// Signed bound multipliers: positive entries push off the lower bound,
    /// negative off the upper, zero when the coordinate is interior. The
    /// stationarity identity is `H x + f = G' lambda + nu`.
    pub bound_duals: DVector<T>,
}

/// Internal label for the constraint list the solver iterates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    /// Index into the `G x >= g` rows.
    Ineq(usize),
    /// `x_i >= lb_i`.
    Lower(usize),
    /// `-x_i >= -ub_i`.
    Upper(usize),
}

/// Solves a validated problem. `warm_start` is an optional previous solution;
/// it never changes the answer, only the activation order (see module docs).
pub fn solve<T: Real>(
    problem: &QpProblem<T>,
    warm_start: Option<&DVector<T>>,
    settings: &SolverSettings<T>,
) -> Result<QpSolution<T>> {
    problem.validate()?;
    let m = problem.n_vars();
    if let Some(w) = warm_start {
        if w.len() != m {
            return Err(Error::DimensionMismatch { what: "warm start", expected: m, got: w.len() });
        }
    }

    // Assemble the unified row list: general rows first, then finite bounds.
    let mut rows: Vec<Row> = (0..problem.n_rows()).map(Row::Ineq).collect();
    for i in 0..m {
        if problem.lower[i].is_some() {
            rows.push(Row::Lower(i));
        }
        if problem.upper[i].is_some() {
            rows.push(Row::Upper(i));
        }
    }

    let normal = |row: Row| -> DVector<T> {
        match row {
            Row::Ineq(r) => problem.ineq_matrix.row(r).transpose(),
            Row::Lower(i) => {
                let mut e = DVector::zeros(m);
                e[i] = T::one();
                e
            }
            Row::Upper(i) => {
                let mut e = DVector::zeros(m);
                e[i] = -T::one();
                e
            }
        }
    };
    let rhs = |row: Row| -> T {
        match row {
            Row::Ineq(r) => problem.ineq_rhs[r],
            Row::Lower(i) => problem.lower[i].expect("finite by construction"),
            Row::Upper(i) => -problem.upper[i].expect("finite by construction"),
        }
    };
    // Slack of a row at x; negative means violated.
    let slack = |row: Row, x: &DVector<T>| -> T {
        match row {
            Row::Ineq(r) => problem.ineq_matrix.row(r).transpose().dot(x) - problem.ineq_rhs[r],
            Row::Lower(i) => x[i] - problem.lower[i].expect("finite"),
            Row::Upper(i) => problem.upper[i].expect("finite") - x[i],
        }
    };
    let scale = |row: Row| -> T {
        let b = rhs(row).abs();
        if b > T::one() {
            b
        } else {
            T::one()
        }
    };

    let chol = problem
        .hessian
        .clone()
        .cholesky()
        .expect("validated Hessian must factor");

    // Rows that were (nearly) active at the warm start get activation
    // priority; rebuilding last tick's active set first shortens the solve.
    let warm_tol = real::<T>(1e-6);
    let warm_active: Vec<bool> = match warm_start {
        Some(w) => rows.iter().map(|&r| slack(r, w).abs() <= warm_tol * scale(r)).collect(),
        None => vec![false; rows.len()],
    };

    let mut x = -chol.solve(&problem.linear);
    let mut active: Vec<usize> = Vec::new(); // indices into `rows`
    let mut duals: Vec<T> = Vec::new(); // multipliers aligned with `active`
    let mut hinv_normals: Vec<DVector<T>> = Vec::new(); // H^{-1} n for active rows
    let mut iterations = 0usize;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Pick the worst violated row, preferring warm-active rows.
        let mut pick: Option<(usize, T)> = None;
        let mut pick_warm: Option<(usize, T)> = None;
        for (idx, &row) in rows.iter().enumerate() {
            if active.contains(&idx) {
                continue;
            }
            let s = slack(row, &x) / scale(row);
            if s < -settings.feas_tol {
                if warm_active[idx] {
                    match pick_warm {
                        Some((_, best)) if s >= best => {}
                        _ => pick_warm = Some((idx, s)),
                    }
                }
                match pick {
                    Some((_, best)) if s >= best => {}
                    _ => pick = Some((idx, s)),
                }
            }
        }
        let p_idx = match pick_warm.or(pick) {
            Some((idx, _)) => idx,
            None => break 'outer, // no violations: optimal
        };
        let n_p = normal(rows[p_idx]);
        let hinv_np = chol.solve(&n_p);
        let mut u_p = T::zero();

        // Inner loop: step toward satisfying row `p_idx`, dropping blockers.
        loop {
            if iterations >= settings.max_iterations {
                status = QpStatus::IterationLimit;
                break 'outer;
            }
            iterations += 1;

            let a = active.len();
            // r = (N' H^{-1} N)^{-1} N' H^{-1} n_p ; z = H^{-1}(n_p - N r).
            let (z, r) = if a == 0 {
                (hinv_np.clone(), DVector::zeros(0))
            } else {
                let mut gram = DMatrix::zeros(a, a);
                let mut d = DVector::zeros(a);
                for i in 0..a {
                    let n_i = normal(rows[active[i]]);
                    for j in 0..a {
                        gram[(i, j)] = n_i.dot(&hinv_normals[j]);
                    }
                    d[i] = n_i.dot(&hinv_np);
                }
                // Rounding can push two active normals to exact parallelism
                // (e.g. two obstacles converging on one control point), which
                // makes the Gram matrix rank-deficient; the least-squares
                // multiplier split keeps the step well-defined in that case.
                let r = match gram.clone().lu().solve(&d) {
                    Some(r) => r,
                    None => gram.svd(true, true).solve(&d, real::<T>(1e-12)).map_err(
                        |e| Error::InvalidQp(format!("active-set system unsolvable: {e}")),
                    )?,
                };
                let mut z = hinv_np.clone();
                for j in 0..a {
                    z.axpy(-r[j], &hinv_normals[j], T::one());
                }
                (z, r)
            };

            let z_norm = z.norm();
            let dependent = z_norm <= real::<T>(1e-12) * (T::one() + hinv_np.norm());

            // Dual step length: first active multiplier driven to zero.
            let mut t1 = None;
            let mut blocker = None;
            for j in 0..active.len() {
                if r[j] > real::<T>(1e-14) {
                    let step = duals[j] / r[j];
                    if t1.map_or(true, |best| step < best) {
                        t1 = Some(step);
                        blocker = Some(j);
                    }
                }
            }

            if dependent {
                match (t1, blocker) {
                    (Some(t), Some(j)) => {
                        // Pure dual step: transfer multiplier mass, drop blocker.
                        for (jj, d) in duals.iter_mut().enumerate() {
                            *d -= t * r[jj];
                        }
                        u_p += t;
                        active.remove(j);
                        duals.remove(j);
                        hinv_normals.remove(j);
                        continue;
                    }
                    _ => {
                        // Dual ray with no blocker: certified infeasible.
                        status = QpStatus::Infeasible;
                        break 'outer;
                    }
                }
            }

            let s_p = slack(rows[p_idx], &x);
            let denom = z.dot(&n_p);
            if denom <= T::zero() {
                // Numerically indistinguishable from dependence; treat as such.
                match (t1, blocker) {
                    (Some(t), Some(j)) => {
                        for (jj, d) in duals.iter_mut().enumerate() {
                            *d -= t * r[jj];
                        }
                        u_p += t;
                        active.remove(j);
                        duals.remove(j);
                        hinv_normals.remove(j);
                        continue;
                    }
                    _ => {
                        status = QpStatus::Infeasible;
                        break 'outer;
                    }
                }
            }
            let t2 = -s_p / denom;

            let take_full = match t1 {
                Some(t1v) => t2 <= t1v,
                None => true,
            };
            let t = if take_full { t2 } else { t1.expect("partial step requires t1") };

            x.axpy(t, &z, T::one());
            for (jj, d) in duals.iter_mut().enumerate() {
                *d -= t * r[jj];
            }
            u_p += t;

            if take_full {
                active.push(p_idx);
                duals.push(u_p);
                hinv_normals.push(hinv_np.clone());
                break; // rescan for violations
            } else {
                let j = blocker.expect("partial step has a blocker");
                active.remove(j);
                duals.remove(j);
                hinv_normals.remove(j);
            }
        }
    }

    // Map multipliers back onto rows and score the KKT system at x.
    let mut ineq_duals = DVector::zeros(problem.n_rows());
    let mut bound_duals = DVector::zeros(m);
    for (j, &idx) in active.iter().enumerate() {
        let u = duals[j];
        match rows[idx] {
            Row::Ineq(r) => ineq_duals[r] = u,
            Row::Lower(i) => bound_duals[i] += u,
            Row::Upper(i) => bound_duals[i] -= u,
        }
    }

    let mut grad = &problem.hessian * &x + &problem.linear;
    for r in 0..problem.n_rows() {
        grad.axpy(-ineq_duals[r], &problem.ineq_matrix.row(r).transpose(), T::one());
    }
    grad -= &bound_duals;
    let stationarity = grad.amax();

    let mut primal = T::zero();
    let mut comp = T::zero();
    for (idx, &row) in rows.iter().enumerate() {
        let s = slack(row, &x);
        if -s > primal {
            primal = -s;
        }
        let u = match rows[idx] {
            Row::Ineq(r) => ineq_duals[r],
            Row::Lower(i) => bound_duals[i].max(T::zero()),
            Row::Upper(i) => (-bound_duals[i]).max(T::zero()),
        };
        let c = (u * s).abs();
        if c > comp {
            comp = c;
        }
    }
    let dual_neg = ineq_duals.iter().fold(T::zero(), |acc, &u| acc.max(-u));
    let kkt_residual = stationarity.max(primal).max(comp).max(dual_neg);

    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        status,
        kkt_residual,
        iterations,
        ineq_duals,
        bound_duals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn settings() -> SolverSettings<f64> {
        SolverSettings::default()
    }

    fn free_bounds(m: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        (vec![None; m], vec![None; m])
    }

    /// min ||x - target||^2 with no constraints.
    fn projection_problem(target: &[f64]) -> QpProblem<f64> {
        let m = target.len();
        let (lo, hi) = free_bounds(m);
        QpProblem::new(
            DMatrix::identity(m, m) * 2.0,
            DVector::from_iterator(m, target.iter().map(|t| -2.0 * t)),
            DMatrix::zeros(0, m),
            DVector::zeros(0),
            lo,
            hi,
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimum_is_the_target() {
        let problem = projection_problem(&[1.0, 2.0]);
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x, dvector![1.0, 2.0], epsilon = 1e-14);
        assert_eq!(sol.iterations, 0);
        assert!(sol.kkt_residual <= 1e-12);
    }

    #[test]
    fn scalar_upper_bound_activates_with_multiplier_two() {
        // min (x-1)^2 s.t. x <= 0  ->  x*=0, bound multiplier magnitude 2.
        let mut problem = projection_problem(&[1.0]);
        problem.upper[0] = Some(0.0);
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-14);
        // Upper-side multipliers are reported with negative sign.
        assert_relative_eq!(sol.bound_duals[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_projection_splits_evenly() {
        // min ||x - (1,1)||^2 s.t. x1 + x2 <= 1  ->  (0.5, 0.5).
        let (lo, hi) = free_bounds(2);
        let problem = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![-2.0, -2.0],
            dmatrix![-1.0, -1.0],
            dvector![-1.0],
            lo,
            hi,
        )
        .unwrap();
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-14);
        assert!(sol.ineq_duals[0] > 0.0);
    }

    #[test]
    fn contradictory_rows_are_certified_infeasible() {
        // x >= 1 and -x >= 1 cannot both hold.
        let (lo, hi) = free_bounds(1);
        let problem = QpProblem::new(
            dmatrix![2.0],
            dvector![0.0],
            dmatrix![1.0; -1.0],
            dvector![1.0, 1.0],
            lo,
            hi,
        )
        .unwrap();
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn crossed_row_and_bound_are_certified_infeasible() {
        // x >= 1 (row) against x <= -1 (bound).
        let problem = QpProblem::new(
            dmatrix![2.0],
            dvector![0.0],
            dmatrix![1.0],
            dvector![1.0],
            vec![None],
            vec![Some(-1.0)],
        )
        .unwrap();
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_via_matching_bounds_pins_the_variable() {
        let mut problem = projection_problem(&[5.0, -3.0]);
        problem.lower[0] = Some(1.25);
        problem.upper[0] = Some(1.25);
        let sol = solve(&problem, None, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.25, epsilon = 1e-14);
        assert_relative_eq!(sol.x[1], -3.0, epsilon = 1e-14);
    }

    #[test]
    fn validation_rejects_malformed_problems() {
        // NaN in f.
        let (lo, hi) = free_bounds(1);
        assert!(QpProblem::new(
            dmatrix![2.0],
            dvector![f64::NAN],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            lo.clone(),
            hi.clone()
        )
        .is_err());
        // Asymmetric H.
        assert!(QpProblem::new(
            dmatrix![2.0, 0.5; 0.3, 2.0],
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            vec![None; 2],
            vec![None; 2]
        )
        .is_err());
        // Indefinite H.
        assert!(QpProblem::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            dvector![0.0, 0.0],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            vec![None; 2],
            vec![None; 2]
        )
        .is_err());
        // Infinite bound instead of the None sentinel.
        assert!(QpProblem::new(
            dmatrix![2.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            vec![Some(f64::NEG_INFINITY)],
            vec![None]
        )
        .is_err());
        // Crossed bounds.
        assert!(QpProblem::new(
            dmatrix![2.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            vec![Some(1.0)],
            vec![Some(-1.0)]
        )
        .is_err());
    }

    #[test]
    fn iteration_budget_is_honored() {
        let mut problem = projection_problem(&[5.0, 5.0]);
        problem.upper = vec![Some(0.0), Some(0.0)];
        let tight = SolverSettings { max_iterations: 1, ..settings() };
        let sol = solve(&problem, None, &tight).unwrap();
        assert_eq!(sol.status, QpStatus::IterationLimit);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let problem = random_suite_problem(42);
        let a = solve(&problem, None, &settings()).unwrap();
        let b = solve(&problem, None, &settings()).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn warm_start_never_moves_the_minimizer() {
        for seed in 0..30u64 {
            let problem = random_suite_problem(seed);
            let cold = solve(&problem, None, &settings()).unwrap();
            if cold.status != QpStatus::Optimal {
                continue;
            }
            let mut shifted = cold.x.clone();
            for v in shifted.iter_mut() {
                *v += 1e-3;
            }
            let warm = solve(&problem, Some(&shifted), &settings()).unwrap();
            assert_eq!(warm.status, QpStatus::Optimal);
            assert!((&warm.x - &cold.x).norm() <= 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn random_problems_match_reference_solver_and_satisfy_kkt() {
        for seed in 0..80u64 {
            let problem = random_suite_problem(seed);
            let sol = solve(&problem, None, &settings()).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "seed {seed}");
            assert!(sol.kkt_residual <= 1e-6, "seed {seed}: kkt {}", sol.kkt_residual);
            let oracle = crate::reference::solve_qp_reference(&problem, 1e-10, 400_000)
                .expect("reference converges on feasible suite problems");
            let scale = oracle.objective.abs().max(1.0);
            assert!(
                (sol.objective - oracle.objective).abs() / scale <= 1e-6,
                "seed {seed}: objective {} vs reference {}",
                sol.objective,
                oracle.objective
            );
        }
    }

    /// Random strictly convex QP with a guaranteed interior feasible point.
    fn random_suite_problem(seed: u64) -> QpProblem<f64> {
        crate::reference::random_feasible_qp(&mut {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(seed)
        })
    }
}
