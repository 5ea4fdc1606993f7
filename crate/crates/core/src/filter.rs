//! The safety filter: a quadratic program wrapped around the performance
//! controller that keeps every control point out of the unsafe regions.
//!
//! Each step the filter linearizes the barriers (see [`crate::barrier`]) and
//! solves
//!
//! ```text
//! min  w ||q_dot - q_dot_perf||^2            (strict form)
//! s.t. row_i . q_dot >= rhs_i   for every pairing,
//!      vel_lower <= q_dot <= vel_upper,
//! ```
//!
//! or, in relaxed form, adds one slack per relaxable obstacle:
//!
//! ```text
//! min  w ||q_dot - q_dot_perf||^2 + sum_k beta_k delta_k^2
//! s.t. row_i . q_dot + delta_{slot(i)} >= rhs_i   (soft rows)
//!      row_i . q_dot                   >= rhs_i   (hard rows)
//!      0 <= delta_k <= cap_k,  vel box as above.
//! ```
//!
//! Two structural facts the tests lean on: if the strict constraints admit
//! `q_dot_perf` itself, both forms return it exactly (the all-zero slack
//! point has objective zero, which is a global minimum), and since every
//! strict-feasible point embeds into the relaxed program with zero slack, a
//! feasible strict program implies a feasible relaxed one with no larger
//! objective value. As the penalties grow the relaxed solution approaches
//! the strict one, so `beta` tunes how reluctantly each obstacle is traded
//! away. Priority-0 obstacles never receive a slack variable at all.
//!
//! When even the relaxed program is infeasible - the protected rows conflict
//! with each other or with the velocity box - the filter declares an
//! emergency and either commands zero velocity or returns an error,
//! depending on policy.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::barrier::{build_constraints, ConstraintSet, Obstacle};
use crate::chain::{KinematicChain, RobotState};
use crate::error::{Error, Result};
use crate::qp::{solve, QpProblem, QpSolution, QpStatus, SolverSettings};
use crate::scalar::{real, Real};

/// Which program the filter solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Never relax: infeasibility is an emergency.
    Strict,
    /// Buy feasibility with penalized slacks on relaxable obstacles.
    Relaxed,
}

/// What to do when even the relaxed program has no feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmergencyPolicy {
    /// Command zero joint velocity and report the emergency.
    Stop,
    /// Abort with [`Error::SafetyEmergency`].
    Fail,
}

/// Which control points receive barrier constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PointSelection {
    /// Every control point on the chain.
    All,
    /// Only the end effector.
    EndEffector,
    /// An explicit list of control-point indices (no duplicates).
    Indices(Vec<usize>),
}

impl PointSelection {
    /// Resolves the selection against a chain into concrete indices.
    pub fn resolve<T: Real>(&self, chain: &KinematicChain<T>) -> Result<Vec<usize>> {
        match self {
            PointSelection::All => Ok((0..chain.n_points()).collect()),
            PointSelection::EndEffector => Ok(vec![chain.end_effector_index()]),
            PointSelection::Indices(list) => {
                let mut seen = BTreeSet::new();
                for &i in list {
                    if i >= chain.n_points() {
                        return Err(Error::DimensionMismatch {
                            what: "constrained point index",
                            expected: chain.n_points(),
                            got: i,
                        });
                    }
                    if !seen.insert(i) {
                        return Err(Error::InvalidConfig(format!(
                            "constrained point index {i} listed twice"
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

/// Filter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<T: Real> {
    pub mode: FilterMode,
    /// Inflation margin added to every combined radius.
    pub margin: T,
    /// Weight on the deviation from the performance command.
    pub perf_weight: T,
    pub constrained_points: PointSelection,
    pub emergency: EmergencyPolicy,
    /// In relaxed mode, additionally solve the strict program each step so
    /// reports can tell when relaxation was actually necessary.
    pub probe_strict: bool,
    /// Horizon (seconds) converting remaining joint-position travel into
    /// velocity bounds: the box side for joint `j` tightens to
    /// `(limit - q_j) / limit_horizon`. This makes the program aware that a
    /// joint resting on its stop cannot move outward, so barrier guarantees
    /// are made with achievable velocities. Zero disables the tightening and
    /// leaves the pure velocity box.
    pub limit_horizon: T,
    pub solver: SolverSettings<T>,
}

impl<T: Real> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            mode: FilterMode::Relaxed,
            margin: real(0.05),
            perf_weight: real(200.0),
            constrained_points: PointSelection::All,
            emergency: EmergencyPolicy::Stop,
            probe_strict: false,
            limit_horizon: T::zero(),
            solver: SolverSettings::default(),
        }
    }
}

impl<T: Real> FilterConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= T::zero() && self.margin.finite()) {
            return Err(Error::InvalidConfig(
                "filter margin must be non-negative and finite".into(),
            ));
        }
        if !(self.perf_weight > T::zero() && self.perf_weight.finite()) {
            return Err(Error::InvalidConfig(
                "performance weight must be positive and finite".into(),
            ));
        }
        if !(self.solver.kkt_tol > T::zero() && self.solver.feas_tol > T::zero()) {
            return Err(Error::InvalidConfig(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "solver iteration budget must be at least 1".into(),
            ));
        }
        if let PointSelection::Indices(list) = &self.constrained_points {
            if list.is_empty() {
                return Err(Error::InvalidConfig(
                    "constrained point list must not be empty".into(),
                ));
            }
        }
        if !(self.limit_horizon >= T::zero() && self.limit_horizon.finite()) {
            return Err(Error::InvalidConfig(
                "limit horizon must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// How the command left the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyStatus {
    /// Every constraint holds with no meaningful slack - either the
    /// performance command passed through untouched (see
    /// [`SolveStats::fast_path`]) or it was projected onto the safe set.
    Nominal,
    /// Feasibility was bought by relaxing at least one obstacle.
    Relaxing,
    /// No feasible point existed (or the barrier direction was degenerate);
    /// the command is the emergency fallback.
    Emergency,
}

impl SafetyStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SafetyStatus::Nominal => "nominal",
            SafetyStatus::Relaxing => "relaxing",
            SafetyStatus::Emergency => "emergency",
        }
    }
}

/// Bookkeeping for one filter invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    /// The pass-through check succeeded and no program was solved.
    pub fast_path: bool,
    /// Status of the program whose solution was returned (None on the fast
    /// path and for a strict-infeasible emergency fallback in strict mode).
    pub qp_status: Option<QpStatus>,
    pub iterations: usize,
    pub n_rows: usize,
    pub n_slacks: usize,
    /// Whether the strict program was feasible, when that is known (fast
    /// path, strict mode, zero slacks, or `probe_strict`).
    pub strict_feasible: Option<bool>,
    pub kkt_residual: f64,
    /// Wall time of the whole filter step, including constraint assembly.
    pub solve_time: Duration,
}

/// The filtered command plus everything a caller needs for reporting.
#[derive(Debug, Clone)]
pub struct SafeCommand<T: Real> {
    pub q_dot: DVector<T>,
    /// Slack value per relaxable obstacle name (zero when unused). Hard
    /// obstacles never appear here.
    pub deltas: BTreeMap<String, T>,
    pub status: SafetyStatus,
    pub stats: SolveStats,
}

/// Serializable snapshot of one solved program, for offline inspection.
#[derive(Debug, Clone, Serialize)]
pub struct QpDump {
    pub n_vars: usize,
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub status: String,
    pub solution: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// The programs solved during the most recent non-trivial step.
#[derive(Debug, Clone, Serialize)]
pub struct ProgramRecord {
    pub time: f64,
    pub strict: Option<QpDump>,
    pub relaxed: Option<QpDump>,
}

/// Stateful safety filter; keeps warm-start memory between steps.
#[derive(Debug, Clone)]
pub struct SafetyFilter<T: Real> {
    config: FilterConfig<T>,
    warm_strict: Option<DVector<T>>,
    warm_relaxed: Option<DVector<T>>,
    recording: bool,
    last_record: Option<ProgramRecord>,
}

impl<T: Real> SafetyFilter<T> {
    pub fn new(config: FilterConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            warm_strict: None,
            warm_relaxed: None,
            recording: false,
            last_record: None,
        })
    }

    pub fn config(&self) -> &FilterConfig<T> {
        &self.config
    }

    /// Enables or disables program recording (see [`Self::last_record`]).
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
        if !on {
            self.last_record = None;
        }
    }

    /// The programs solved during the most recent step that actually solved
    /// one; fast-path steps do not overwrite it.
    pub fn last_record(&self) -> Option<&ProgramRecord> {
        self.last_record.as_ref()
    }

    /// The velocity box at configuration `q`: the chain's velocity limits,
    /// tightened so no joint can overrun a position limit within
    /// `limit_horizon` seconds (see [`FilterConfig::limit_horizon`]). Zero
    /// velocity is always inside the box, so an emergency stop stays valid.
    pub fn velocity_box(
        &self,
        chain: &KinematicChain<T>,
        q: &DVector<T>,
    ) -> (DVector<T>, DVector<T>) {
        let mut lo = chain.vel_lower().clone();
        let mut hi = chain.vel_upper().clone();
        let tau = self.config.limit_horizon;
        if tau > T::zero() {
            for j in 0..chain.n_joints() {
                let inward = (chain.joint_lower()[j] - q[j]) / tau;
                let outward = (chain.joint_upper()[j] - q[j]) / tau;
                lo[j] = lo[j].max(inward.min(T::zero()));
                hi[j] = hi[j].min(outward.max(T::zero()));
            }
        }
        (lo, hi)
    }

    /// Assembles the strict program for a constraint set at configuration `q`.
    pub fn build_strict_qp(
        &self,
        chain: &KinematicChain<T>,
        set: &ConstraintSet<T>,
        q: &DVector<T>,
        q_dot_perf: &DVector<T>,
    ) -> Result<QpProblem<T>> {
        let n = chain.n_joints();
        let w2 = real::<T>(2.0) * self.config.perf_weight;
        let hessian = DMatrix::identity(n, n) * w2;
        let linear = q_dot_perf * (-w2);
        let k = set.constraints.len();
        let mut rows = DMatrix::zeros(k, n);
        let mut rhs = DVector::zeros(k);
        for (r, c) in set.constraints.iter().enumerate() {
            rows.row_mut(r).tr_copy_from(&c.row);
            rhs[r] = c.rhs;
        }
        let (lo, hi) = self.velocity_box(chain, q);
        let lower = lo.iter().map(|v| Some(*v)).collect();
        let upper = hi.iter().map(|v| Some(*v)).collect();
        QpProblem::new(hessian, linear, rows, rhs, lower, upper)
    }

    /// Assembles the relaxed program: joint velocities plus one slack per
    /// relaxable obstacle.
    pub fn build_relaxed_qp(
        &self,
        chain: &KinematicChain<T>,
        set: &ConstraintSet<T>,
        obstacles: &[Obstacle<T>],
        q: &DVector<T>,
        q_dot_perf: &DVector<T>,
    ) -> Result<QpProblem<T>> {
        let n = chain.n_joints();
        let s = set.n_slacks();
        let m = n + s;
        let w2 = real::<T>(2.0) * self.config.perf_weight;
        let mut hessian = DMatrix::zeros(m, m);
        for i in 0..n {
            hessian[(i, i)] = w2;
        }
        for (slot, &oi) in set.slack_obstacles.iter().enumerate() {
            hessian[(n + slot, n + slot)] = real::<T>(2.0) * obstacles[oi].beta;
        }
        let mut linear = DVector::zeros(m);
        linear.rows_mut(0, n).copy_from(&(q_dot_perf * (-w2)));
        let k = set.constraints.len();
        let mut rows = DMatrix::zeros(k, m);
        let mut rhs = DVector::zeros(k);
        for (r, c) in set.constraints.iter().enumerate() {
            rows.view_mut((r, 0), (1, n)).tr_copy_from(&c.row);
            if let Some(slot) = c.relax_slot {
                rows[(r, n + slot)] = T::one();
            }
            rhs[r] = c.rhs;
        }
        let (lo, hi) = self.velocity_box(chain, q);
        let mut lower: Vec<Option<T>> = lo.iter().map(|v| Some(*v)).collect();
        let mut upper: Vec<Option<T>> = hi.iter().map(|v| Some(*v)).collect();
        for &oi in &set.slack_obstacles {
            lower.push(Some(T::zero()));
            let cap = obstacles[oi].slack_cap;
            upper.push(if cap.finite() { Some(cap) } else { None });
        }
        QpProblem::new(hessian, linear, rows, rhs, lower, upper)
    }

    /// Filters one performance command. This is the per-step entry point.
    pub fn filter(
        &mut self,
        chain: &KinematicChain<T>,
        state: &RobotState<T>,
        q_dot_perf: &DVector<T>,
        obstacles: &[Obstacle<T>],
    ) -> Result<SafeCommand<T>> {
        let start = Instant::now();
        let mut out = self.filter_inner(chain, state, q_dot_perf, obstacles)?;
        out.stats.solve_time = start.elapsed();
        Ok(out)
    }

    fn filter_inner(
        &mut self,
        chain: &KinematicChain<T>,
        state: &RobotState<T>,
        q_dot_perf: &DVector<T>,
        obstacles: &[Obstacle<T>],
    ) -> Result<SafeCommand<T>> {
        let n = chain.n_joints();
        if q_dot_perf.len() != n {
            return Err(Error::DimensionMismatch {
                what: "performance command",
                expected: n,
                got: q_dot_perf.len(),
            });
        }
        if !q_dot_perf.iter().all(|v| v.finite()) {
            return Err(Error::InvalidConfig(
                "performance command contains non-finite entries".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for o in obstacles {
            if !names.insert(o.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate obstacle name '{}'",
                    o.name
                )));
            }
        }

        let points = self.config.constrained_points.resolve(chain)?;
        let set = match build_constraints(
            chain,
            &state.q,
            obstacles,
            &points,
            self.config.margin,
        ) {
            Ok(set) => set,
            // A (near-)coincident point/obstacle pair leaves the constraint
            // direction undefined: treat it like an infeasible program.
            Err(Error::DegenerateDirection { separation }) => {
                return match self.config.emergency {
                    EmergencyPolicy::Stop => Ok(SafeCommand {
                        q_dot: DVector::zeros(n),
                        deltas: BTreeMap::new(),
                        status: SafetyStatus::Emergency,
                        stats: SolveStats {
                            fast_path: false,
                            qp_status: None,
                            iterations: 0,
                            n_rows: 0,
                            n_slacks: 0,
                            strict_feasible: None,
                            kkt_residual: 0.0,
                            solve_time: Duration::ZERO,
                        },
                    }),
                    EmergencyPolicy::Fail => Err(Error::SafetyEmergency {
                        time: state.t.to_f64().unwrap_or(f64::NAN),
                        detail: format!(
                            "barrier direction degenerate at separation {separation:e}"
                        ),
                    }),
                };
            }
            Err(other) => return Err(other),
        };
        let zero_deltas = || -> BTreeMap<String, T> {
            set.slack_obstacles
                .iter()
                .map(|&oi| (obstacles[oi].name.clone(), T::zero()))
                .collect()
        };

        // Fast path: pass the performance command through untouched when it
        // already satisfies every row and the velocity box.
        let (lo, hi) = self.velocity_box(chain, &state.q);
        let feas_tol = self.config.solver.feas_tol;
        let in_box = (0..n).all(|i| q_dot_perf[i] >= lo[i] && q_dot_perf[i] <= hi[i]);
        let rows_ok = set.constraints.iter().all(|c| {
            let scale = T::one().max(c.rhs.abs());
            c.row.dot(q_dot_perf) >= c.rhs - feas_tol * scale
        });
        if in_box && rows_ok {
            return Ok(SafeCommand {
                q_dot: q_dot_perf.clone(),
                deltas: zero_deltas(),
                status: SafetyStatus::Nominal,
                stats: SolveStats {
                    fast_path: true,
                    qp_status: None,
                    iterations: 0,
                    n_rows: set.constraints.len(),
                    n_slacks: set.n_slacks(),
                    strict_feasible: Some(true),
                    kkt_residual: 0.0,
                    solve_time: Duration::ZERO,
                },
            });
        }

        let n_rows = set.constraints.len();
        let n_slacks = set.n_slacks();
        let mut record = ProgramRecord {
            time: state.t.to_f64().unwrap_or(f64::NAN),
            strict: None,
            relaxed: None,
        };

        let use_strict_form =
            self.config.mode == FilterMode::Strict || n_slacks == 0;
        let probe = self.config.mode == FilterMode::Relaxed
            && self.config.probe_strict
            && !use_strict_form;

        let mut strict_feasible = None;
        if use_strict_form || probe {
            let program = self.build_strict_qp(chain, &set, &state.q, q_dot_perf)?;
            let solution = solve(&program, self.warm_strict.as_ref(), &self.config.solver)?;
            if solution.status == QpStatus::IterationLimit {
                return Err(Error::InvalidQp(
                    "strict program hit the iteration budget".into(),
                ));
            }
            strict_feasible = Some(solution.status == QpStatus::Optimal);
            if self.recording {
                record.strict = Some(dump_program(&program, &solution));
            }
            if solution.status == QpStatus::Optimal {
                self.warm_strict = Some(solution.x.clone());
            }
            if use_strict_form {
                let outcome = self.finish(
                    chain,
                    obstacles,
                    &set,
                    solution,
                    zero_deltas(),
                    n_rows,
                    n_slacks,
                    strict_feasible,
                    state,
                    "strict program infeasible and no obstacle is relaxable",
                );
                if self.recording {
                    self.last_record = Some(record);
                }
                return outcome;
            }
        }

        let program = self.build_relaxed_qp(chain, &set, obstacles, &state.q, q_dot_perf)?;
        let solution = solve(&program, self.warm_relaxed.as_ref(), &self.config.solver)?;
        if solution.status == QpStatus::IterationLimit {
            return Err(Error::InvalidQp(
                "relaxed program hit the iteration budget".into(),
            ));
        }
        if self.recording {
            record.relaxed = Some(dump_program(&program, &solution));
            self.last_record = Some(record);
        }
        if solution.status == QpStatus::Optimal {
            self.warm_relaxed = Some(solution.x.clone());
        }
        self.finish(
            chain,
            obstacles,
            &set,
            solution,
            zero_deltas(),
            n_rows,
            n_slacks,
            strict_feasible,
            state,
            "relaxed program infeasible: protected constraints conflict",
        )
    }

    /// Common tail: clamp, extract slacks, classify, or escalate.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        chain: &KinematicChain<T>,
        obstacles: &[Obstacle<T>],
        set: &ConstraintSet<T>,
        solution: QpSolution<T>,
        mut deltas: BTreeMap<String, T>,
        n_rows: usize,
        n_slacks: usize,
        strict_feasible: Option<bool>,
        state: &RobotState<T>,
        infeasible_detail: &str,
    ) -> Result<SafeCommand<T>> {
        let n = chain.n_joints();
        let stats_base = |qp_status, iterations, kkt: f64| SolveStats {
            fast_path: false,
            qp_status,
            iterations,
            n_rows,
            n_slacks,
            strict_feasible,
            kkt_residual: kkt,
            solve_time: Duration::ZERO,
        };
        if solution.status == QpStatus::Infeasible {
            return match self.config.emergency {
                EmergencyPolicy::Stop => Ok(SafeCommand {
                    q_dot: DVector::zeros(n),
                    deltas,
                    status: SafetyStatus::Emergency,
                    stats: stats_base(
                        Some(QpStatus::Infeasible),
                        solution.iterations,
                        solution.kkt_residual.to_f64().unwrap_or(f64::NAN),
                    ),
                }),
                EmergencyPolicy::Fail => Err(Error::SafetyEmergency {
                    time: state.t.to_f64().unwrap_or(f64::NAN),
                    detail: infeasible_detail.into(),
                }),
            };
        }

        // Clamp the command into the velocity box so the reported command
        // honors the bounds literally, not just to solver tolerance.
        let mut q_dot = solution.x.rows(0, n).into_owned();
        let (lo, hi) = self.velocity_box(chain, &state.q);
        for i in 0..n {
            q_dot[i] = q_dot[i].max(lo[i]).min(hi[i]);
        }

        let mut relaxing = false;
        let threshold = real::<T>(10.0) * self.config.solver.kkt_tol;
        // The strict form carries no slack columns even when relaxable
        // obstacles exist, so only the relaxed form's solution holds slacks.
        if solution.x.len() > n {
            for (slot, &oi) in set.slack_obstacles.iter().enumerate() {
                let cap = obstacles[oi].slack_cap;
                let mut value = solution.x[n + slot].max(T::zero());
                if cap.finite() {
                    value = value.min(cap);
                }
                if value > threshold {
                    relaxing = true;
                }
                deltas.insert(obstacles[oi].name.clone(), value);
            }
        }

        Ok(SafeCommand {
            q_dot,
            deltas,
            status: if relaxing {
                SafetyStatus::Relaxing
            } else {
                SafetyStatus::Nominal
            },
            stats: stats_base(
                Some(solution.status),
                solution.iterations,
                solution.kkt_residual.to_f64().unwrap_or(f64::NAN),
            ),
        })
    }
}

fn dump_program<T: Real>(problem: &QpProblem<T>, solution: &QpSolution<T>) -> QpDump {
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    QpDump {
        n_vars: problem.n_vars(),
        hessian: problem
            .hessian
            .row_iter()
            .map(|r| r.iter().map(|&v| f(v)).collect())
            .collect(),
        linear: problem.linear.iter().map(|&v| f(v)).collect(),
        rows: problem
            .ineq_matrix
            .row_iter()
            .map(|r| r.iter().map(|&v| f(v)).collect())
            .collect(),
        rhs: problem.ineq_rhs.iter().map(|&v| f(v)).collect(),
        lower: problem.lower.iter().map(|o| o.map(f)).collect(),
        upper: problem.upper.iter().map(|o| o.map(f)).collect(),
        status: format!("{:?}", solution.status),
        solution: solution.x.iter().map(|&v| f(v)).collect(),
        objective: f(solution.objective),
        iterations: solution.iterations,
    }
}
