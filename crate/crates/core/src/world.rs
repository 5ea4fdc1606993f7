//! Obstacle motion models and the closed-loop simulator.
//!
//! The plant is a single integrator in joint space: each tick computes the
//! performance command, filters it, integrates `q += dt * q_dot_safe`
//! (explicit Euler), clamps to joint limits, then advances the obstacles.
//! Records carry everything the metrics layer needs, so a rollout is a pure
//! value: same inputs, bit-identical records (wall-clock solve times aside).
//!
//! Also here: the randomized infeasibility coverage search. It samples
//! (configuration, obstacle placement) pairs from a template, flags samples
//! whose strict program is certified infeasible, and solves the relaxed
//! program on each flagged sample so the two verdicts can be compared side
//! by side.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::barrier::{build_constraints, Obstacle};
use crate::chain::{KinematicChain, RobotState};
use crate::controller::{performance_command, PerfConfig};
use crate::error::{Error, Result};
use crate::filter::{SafetyFilter, SafetyStatus};
use crate::qp::{solve, QpStatus, SolverSettings};
use crate::trajectory::Trajectory;

/// How an obstacle moves between ticks.
#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleMotion {
    /// Fixed in place.
    Static,
    /// Piecewise-linear waypoint track `(t, position)`; position holds at
    /// both ends, velocity is the segment slope (zero outside the track).
    Scripted { waypoints: Vec<(f64, Vector3<f64>)> },
    /// Pursuit of the end effector: `v = k (p_ee - p_obs) - b v_obs`,
    /// rescaled to `v_max` when faster.
    SpringDamper { k: f64, b: f64, v_max: f64 },
    /// Waypoint track loaded from a CSV file of `t,x,y,z` rows; becomes a
    /// `Scripted` track at world construction.
    Replay { path: PathBuf },
}

impl ObstacleMotion {
    pub fn validate(&self) -> Result<()> {
        match self {
            ObstacleMotion::Static => Ok(()),
            ObstacleMotion::Scripted { waypoints } => validate_waypoints(waypoints),
            ObstacleMotion::SpringDamper { k, b, v_max } => {
                if !(*k >= 0.0 && k.is_finite()) || !(*b >= 0.0 && b.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "spring-damper gains must be non-negative and finite".into(),
                    ));
                }
                if !(*v_max > 0.0 && v_max.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "spring-damper max speed must be positive and finite".into(),
                    ));
                }
                Ok(())
            }
            // Validated after loading.
            ObstacleMotion::Replay { .. } => Ok(()),
        }
    }

    /// Loads replay tracks from disk, leaving other variants untouched.
    pub fn resolved(self) -> Result<ObstacleMotion> {
        match self {
            ObstacleMotion::Replay { path } => Ok(ObstacleMotion::Scripted {
                waypoints: load_replay_csv(&path)?,
            }),
            other => Ok(other),
        }
    }
}

fn validate_waypoints(waypoints: &[(f64, Vector3<f64>)]) -> Result<()> {
    if waypoints.is_empty() {
        return Err(Error::InvalidConfig(
            "scripted motion needs at least one waypoint".into(),
        ));
    }
    for (t, p) in waypoints {
        if !t.is_finite() || !p.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig(
                "scripted waypoints must be finite".into(),
            ));
        }
    }
    for pair in waypoints.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::InvalidConfig(format!(
                "scripted timestamps must strictly increase, got {} then {}",
                pair[0].0, pair[1].0
            )));
        }
    }
    Ok(())
}

/// Reads a replay track: CSV rows `t,x,y,z`, `#`-comments and a non-numeric
/// header line allowed.
pub fn load_replay_csv(path: &Path) -> Result<Vec<(f64, Vector3<f64>)>> {
    let io_err = |e: std::io::Error| Error::Io {
        context: format!("reading replay track {}", path.display()),
        source: e,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    let mut waypoints = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "replay line {}: expected 4 comma-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => waypoints.push((v[0], Vector3::new(v[1], v[2], v[3]))),
            // A single non-numeric line at the top is a header.
            Err(_) if waypoints.is_empty() && lineno == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidConfig(format!(
                    "replay line {}: {}",
                    lineno + 1,
                    e
                )))
            }
        }
    }
    validate_waypoints(&waypoints)?;
    Ok(waypoints)
}

/// Position and velocity of a waypoint track at time `t` (hold both ends).
fn sample_waypoints(waypoints: &[(f64, Vector3<f64>)], t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let first = waypoints.first().expect("validated non-empty");
    let last = waypoints.last().expect("validated non-empty");
    if t <= first.0 {
        return (first.1, Vector3::zeros());
    }
    if t >= last.0 {
        return (last.1, Vector3::zeros());
    }
    let idx = waypoints.partition_point(|(wt, _)| *wt <= t);
    let (t0, p0) = waypoints[idx - 1];
    let (t1, p1) = waypoints[idx];
    let slope = (p1 - p0) / (t1 - t0);
    (p0 + slope * (t - t0), slope)
}

/// Pursuit velocity `k (p_ee - p_obs) - b v_obs`, rescaled to `v_max` when
/// its norm exceeds it.
pub fn spring_damper_velocity(
    p_ee: &Vector3<f64>,
    p_obs: &Vector3<f64>,
    v_obs: &Vector3<f64>,
    k: f64,
    b: f64,
    v_max: f64,
) -> Vector3<f64> {
    let raw = (p_ee - p_obs) * k - v_obs * b;
    let norm = raw.norm();
    if norm > v_max {
        raw * (v_max / norm)
    } else {
        raw
    }
}

/// An obstacle plus the rule that moves it.
#[derive(Debug, Clone)]
pub struct MovingObstacle {
    pub obstacle: Obstacle<f64>,
    pub motion: ObstacleMotion,
}

/// Per-obstacle diagnostics for one tick, computed at the pre-step state.
#[derive(Debug, Clone)]
pub struct ObstacleStepInfo {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Smallest barrier value over the constrained points (margin included).
    pub h_min: f64,
    /// Smallest center-to-point distance over the constrained points.
    pub center_dist: f64,
    /// Smallest surface clearance (center distance minus both radii, no
    /// margin) over the constrained points.
    pub clearance: f64,
    /// Realized relaxation, zero for hard obstacles.
    pub delta: f64,
}

/// One tick of a rollout.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub q_dot_safe: DVector<f64>,
    pub q_dot_perf: DVector<f64>,
    /// Aligned with the world's obstacle order.
    pub obstacles: Vec<ObstacleStepInfo>,
    pub status: SafetyStatus,
    pub solve_time: Duration,
    /// The joint-limit clamp fired during integration.
    pub joint_clamped: bool,
    pub target: Vector3<f64>,
    pub ee_position: Vector3<f64>,
    pub ee_velocity: Vector3<f64>,
}

/// The closed-loop simulator: one robot, one filter, moving obstacles.
#[derive(Debug, Clone)]
pub struct World {
    chain: KinematicChain<f64>,
    trajectory: Trajectory,
    perf: PerfConfig<f64>,
    filter: SafetyFilter<f64>,
    obstacles: Vec<MovingObstacle>,
    state: RobotState<f64>,
    dt: f64,
    constrained_points: Vec<usize>,
}

impl World {
    pub fn new(
        chain: KinematicChain<f64>,
        q0: DVector<f64>,
        trajectory: Trajectory,
        perf: PerfConfig<f64>,
        filter: SafetyFilter<f64>,
        obstacles: Vec<MovingObstacle>,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be positive and finite".into()));
        }
        if q0.len() != chain.n_joints() {
            return Err(Error::DimensionMismatch {
                what: "initial joint vector",
                expected: chain.n_joints(),
                got: q0.len(),
            });
        }
        trajectory.validate()?;
        perf.validate()?;
        let obstacles = obstacles
            .into_iter()
            .map(|mo| {
                mo.obstacle.validate()?;
                mo.motion.validate()?;
                Ok(MovingObstacle { obstacle: mo.obstacle, motion: mo.motion.resolved()? })
            })
            .collect::<Result<Vec<_>>>()?;
        let constrained_points = filter.config().constrained_points.resolve(&chain)?;
        Ok(Self {
            chain,
            trajectory,
            perf,
            filter,
            obstacles,
            state: RobotState::new(q0, 0.0),
            dt,
            constrained_points,
        })
    }

    pub fn state(&self) -> &RobotState<f64> {
        &self.state
    }

    pub fn chain(&self) -> &KinematicChain<f64> {
        &self.chain
    }

    pub fn obstacle_names(&self) -> Vec<String> {
        self.obstacles.iter().map(|o| o.obstacle.name.clone()).collect()
    }

    pub fn filter_mut(&mut self) -> &mut SafetyFilter<f64> {
        &mut self.filter
    }

    /// Overrides an obstacle's starting position (used by scenario setup to
    /// apply randomized placements before the first step).
    pub fn set_obstacle_position(&mut self, index: usize, position: Vector3<f64>) {
        self.obstacles[index].obstacle.position = position;
    }

    /// Advances one tick and reports what happened during it.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.state.t;
        let target = self.trajectory.sample(t);
        let q_dot_perf =
            performance_command(&self.chain, &self.state.q, &target, &self.perf)?;

        let obstacle_states: Vec<Obstacle<f64>> =
            self.obstacles.iter().map(|o| o.obstacle.clone()).collect();
        let command =
            self.filter
                .filter(&self.chain, &self.state, &q_dot_perf, &obstacle_states)?;

        // Diagnostics at the pre-step state.
        let positions = self.chain.forward_kinematics(&self.state.q)?;
        let ee_index = self.chain.end_effector_index();
        let ee_kinematics = &self.chain.point_kinematics(&self.state.q)?[ee_index];
        let margin = self.filter.config().margin;
        let infos: Vec<ObstacleStepInfo> = obstacle_states
            .iter()
            .map(|obs| {
                let mut h_min = f64::INFINITY;
                let mut center_dist = f64::INFINITY;
                let mut clearance = f64::INFINITY;
                for &pi in &self.constrained_points {
                    let r = self.chain.control_points()[pi].radius;
                    let dist = (positions[pi] - obs.position).norm();
                    center_dist = center_dist.min(dist);
                    clearance = clearance.min(dist - r - obs.radius);
                    h_min = h_min.min(dist - r - obs.radius - margin);
                }
                ObstacleStepInfo {
                    position: obs.position,
                    velocity: obs.velocity,
                    h_min,
                    center_dist,
                    clearance,
                    delta: command.deltas.get(&obs.name).copied().unwrap_or(0.0),
                }
            })
            .collect();

        let record = StepRecord {
            t,
            q: self.state.q.clone(),
            q_dot_safe: command.q_dot.clone(),
            q_dot_perf,
            obstacles: infos,
            status: command.status,
            solve_time: command.stats.solve_time,
            joint_clamped: false,
            target: target.position,
            ee_position: ee_kinematics.position,
            ee_velocity: &ee_kinematics.jacobian * &command.q_dot,
        };

        // Integrate, clamp, advance time and obstacles.
        self.state.q += &command.q_dot * self.dt;
        let clamped = self.chain.clamp_joints(&mut self.state.q);
        self.state.t += self.dt;
        let p_ee = record.ee_position;
        for mo in &mut self.obstacles {
            match &mo.motion {
                ObstacleMotion::Static => {}
                ObstacleMotion::Scripted { waypoints } => {
                    let (p, v) = sample_waypoints(waypoints, self.state.t);
                    mo.obstacle.position = p;
                    mo.obstacle.velocity = v;
                }
                ObstacleMotion::SpringDamper { k, b, v_max } => {
                    let v = spring_damper_velocity(
                        &p_ee,
                        &mo.obstacle.position,
                        &mo.obstacle.velocity,
                        *k,
                        *b,
                        *v_max,
                    );
                    mo.obstacle.position += v * self.dt;
                    mo.obstacle.velocity = v;
                }
                ObstacleMotion::Replay { .. } => unreachable!("resolved at construction"),
            }
        }

        Ok(StepRecord { joint_clamped: clamped, ..record })
    }

    /// Runs for `duration` seconds and collects every record.
    pub fn run(&mut self, duration: f64) -> Result<Vec<StepRecord>> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidConfig(
                "rollout duration must be positive and finite".into(),
            ));
        }
        let n_steps = (duration / self.dt).round().max(1.0) as usize;
        let mut records = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            records.push(self.step()?);
        }
        Ok(records)
    }
}

// ---------------------------------------------------------------------------
// Infeasibility coverage search
// ---------------------------------------------------------------------------

/// Sampling rule for the coverage search.
#[derive(Debug, Clone, PartialEq)]
pub enum CoverageTemplate {
    /// Negative control: one hard obstacle placed `distance` away from a
    /// random control point, random drift velocity. Never infeasible.
    FarField { distance: f64 },
    /// Antipodal pinch around a random control point: a protected obstacle
    /// whose closing speed stays within what the decay condition can absorb
    /// (so the relaxed program always has an escape) and a relaxable one
    /// closing fast enough to create genuine conflicts.
    Squeeze {
        radius: f64,
        /// Barrier values sampled from `[h_min, h_max]` on both sides.
        h_range: (f64, f64),
        /// Relaxable-side closing speed range; the protected side samples
        /// within `gamma * h` of its own barrier.
        speed_range: (f64, f64),
        beta: f64,
    },
}

impl CoverageTemplate {
    pub fn validate(&self) -> Result<()> {
        match self {
            CoverageTemplate::FarField { distance } => {
                if !(*distance > 0.0 && distance.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "far-field distance must be positive and finite".into(),
                    ));
                }
                Ok(())
            }
            CoverageTemplate::Squeeze { radius, h_range, speed_range, beta } => {
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "squeeze radius must be non-negative and finite".into(),
                    ));
                }
                if !(h_range.0 > 0.0 && h_range.1 >= h_range.0 && h_range.1.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "squeeze barrier range must satisfy 0 < lo <= hi".into(),
                    ));
                }
                if !(speed_range.0 >= 0.0
                    && speed_range.1 >= speed_range.0
                    && speed_range.1.is_finite())
                {
                    return Err(Error::InvalidConfig(
                        "squeeze speed range must satisfy 0 <= lo <= hi".into(),
                    ));
                }
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "squeeze beta must be positive and finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// One sample the coverage search flagged as strict-infeasible.
#[derive(Debug, Clone)]
pub struct CoverageSample {
    pub index: usize,
    pub q: DVector<f64>,
    pub obstacles: Vec<Obstacle<f64>>,
    pub strict_status: QpStatus,
    pub relaxed_status: QpStatus,
    /// Largest slack the relaxed solution assigned to any relaxable row.
    pub max_slack: f64,
    /// Most-negative residual of any protected (priority 0) row at the
    /// relaxed solution; near zero or positive means they all held.
    pub min_priority0_residual: f64,
}

/// Samples random (q, placement) pairs, flags strict-infeasible ones, and
/// solves the relaxed program for each flagged sample. Deterministic in
/// `seed`. Returns the flagged samples only.
pub fn coverage_search(
    chain: &KinematicChain<f64>,
    template: &CoverageTemplate,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CoverageSample>> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig(
            "coverage search needs at least one sample".into(),
        ));
    }
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filter = SafetyFilter::new(crate::filter::FilterConfig {
        mode: crate::filter::FilterMode::Relaxed,
        margin: 0.0,
        perf_weight: 1.0,
        constrained_points: crate::filter::PointSelection::All,
        ..Default::default()
    })?;
    let settings = SolverSettings::default();
    let mut flagged = Vec::new();

    for index in 0..n_samples {
        let q = DVector::from_fn(chain.n_joints(), |i, _| {
            rng.random_range(chain.joint_lower()[i]..chain.joint_upper()[i])
        });
        let point = rng.random_range(0..chain.n_points());
        let positions = chain.forward_kinematics(&q)?;
        let p = positions[point];
        let point_radius = chain.control_points()[point].radius;
        let direction = random_unit(&mut rng);

        let obstacles: Vec<Obstacle<f64>> = match template {
            CoverageTemplate::FarField { distance } => {
                vec![Obstacle {
                    name: "far".into(),
                    position: p + direction * (*distance + point_radius),
                    velocity: random_unit(&mut rng) * rng.random_range(0.0..1.0),
                    radius: 0.1,
                    priority: 0,
                    beta: 1.0,
                    slack_cap: 0.0,
                    gamma: 1.0,
                }]
            }
            CoverageTemplate::Squeeze { radius, h_range, speed_range, beta } => {
                let gamma = 1.0;
                let h_a = rng.random_range(h_range.0..=h_range.1);
                let h_b = rng.random_range(h_range.0..=h_range.1);
                // Protected side: closing speed within gamma * h of its own
                // barrier, so standing still always satisfies its row.
                let speed_a = rng.random_range(0.0..=gamma * h_a);
                let speed_b = rng.random_range(speed_range.0..=speed_range.1);
                let offset_a = point_radius + radius + h_a;
                let offset_b = point_radius + radius + h_b;
                vec![
                    Obstacle {
                        name: "protected".into(),
                        position: p + direction * offset_a,
                        velocity: -direction * speed_a,
                        radius: *radius,
                        priority: 0,
                        beta: 1.0,
                        slack_cap: 0.0,
                        gamma,
                    },
                    Obstacle {
                        name: "sacrificial".into(),
                        position: p - direction * offset_b,
                        velocity: direction * speed_b,
                        radius: *radius,
                        priority: 1,
                        beta: *beta,
                        slack_cap: f64::INFINITY,
                        gamma,
                    },
                ]
            }
        };

        let all_points: Vec<usize> = (0..chain.n_points()).collect();
        let set = match build_constraints(chain, &q, &obstacles, &all_points, 0.0) {
            Ok(set) => set,
            // Random placement landed an obstacle on another control point;
            // the sample is degenerate, not infeasible. Skip it.
            Err(Error::DegenerateDirection { .. }) => continue,
            Err(other) => return Err(other),
        };
        // The templates promise that an unrelaxable row is always absorbable
        // by standing still (rhs ≤ 0). A draw can break that promise by
        // parking the protected ball next to a *different* control point
        // than the one it was aimed at, with inward velocity beyond that
        // point's decay budget; such draws are degenerate too — they witness
        // a broken template, not a constraint conflict.
        if set
            .constraints
            .iter()
            .any(|c| c.relax_slot.is_none() && c.rhs > 0.0)
        {
            continue;
        }
        let q_dot_perf = DVector::zeros(chain.n_joints());
        let strict_solution = solve(
            &filter.build_strict_qp(chain, &set, &q, &q_dot_perf)?,
            None,
            &settings,
        )?;
        if strict_solution.status != QpStatus::Infeasible {
            continue;
        }
        let relaxed_program =
            filter.build_relaxed_qp(chain, &set, &obstacles, &q, &q_dot_perf)?;
        let relaxed_solution = solve(&relaxed_program, None, &settings)?;
        let n = chain.n_joints();
        let max_slack = (n..relaxed_program.n_vars())
            .map(|i| relaxed_solution.x[i])
            .fold(0.0, f64::max);
        let min_priority0_residual = set
            .constraints
            .iter()
            .filter(|c| c.relax_slot.is_none())
            .map(|c| c.row.dot(&relaxed_solution.x.rows(0, n).into_owned()) - c.rhs)
            .fold(f64::INFINITY, f64::min);
        flagged.push(CoverageSample {
            index,
            q,
            obstacles,
            strict_status: strict_solution.status,
            relaxed_status: relaxed_solution.status,
            max_slack,
            min_priority0_residual,
        });
    }
    Ok(flagged)
}

/// Uniformly distributed unit vector (rejection-sampled from the cube).
pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------------------
// Step-log CSV
// ---------------------------------------------------------------------------

/// Writes the step log with the fixed schema: `t`, `q0..`, `qd_safe0..`,
/// `qd_perf0..`, then `<name>_px,<name>_py,<name>_pz,<name>_h_min,
/// <name>_dist,<name>_delta` per obstacle, then `status,solve_us`.
pub fn write_step_csv(
    path: &Path,
    records: &[StepRecord],
    obstacle_names: &[String],
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        context: format!("writing step log {}", path.display()),
        source: e,
    };
    let n = records.first().map(|r| r.q.len()).unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("qd_safe{i}")));
    header.extend((0..n).map(|i| format!("qd_perf{i}")));
    for name in obstacle_names {
        for suffix in ["px", "py", "pz", "h_min", "dist", "delta"] {
            header.push(format!("{name}_{suffix}"));
        }
    }
    header.push("status".into());
    header.push("solve_us".into());
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;

    for record in records {
        let mut fields = vec![format!("{:.6}", record.t)];
        fields.extend(record.q.iter().map(|v| format!("{v:.9}")));
        fields.extend(record.q_dot_safe.iter().map(|v| format!("{v:.9}")));
        fields.extend(record.q_dot_perf.iter().map(|v| format!("{v:.9}")));
        for info in &record.obstacles {
            fields.push(format!("{:.9}", info.position.x));
            fields.push(format!("{:.9}", info.position.y));
            fields.push(format!("{:.9}", info.position.z));
            fields.push(format!("{:.9}", info.h_min));
            fields.push(format!("{:.9}", info.center_dist));
            fields.push(format!("{:.9}", info.delta));
        }
        fields.push(record.status.as_str().to_string());
        fields.push(format!("{}", record.solve_time.as_micros()));
        writeln!(out, "{}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ControlPoint, Joint};
    use crate::filter::{FilterConfig, FilterMode, PointSelection};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn planar_two_dof() -> KinematicChain<f64> {
        let joints = vec![
            Joint { axis: Vector3::z_axis(), offset: Vector3::zeros() },
            Joint { axis: Vector3::z_axis(), offset: Vector3::new(1.0, 0.0, 0.0) },
        ];
        let points = vec![ControlPoint {
            link: 1,
            local: Vector3::new(1.0, 0.0, 0.0),
            radius: 0.0,
            end_effector: true,
        }];
        KinematicChain::new(
            joints,
            dvector![-3.1, -3.1],
            dvector![3.1, 3.1],
            dvector![-2.5, -2.5],
            dvector![2.5, 2.5],
            points,
        )
        .unwrap()
    }

    fn hard_obstacle(name: &str, position: Vector3<f64>) -> Obstacle<f64> {
        Obstacle {
            name: name.into(),
            position,
            velocity: Vector3::zeros(),
            radius: 0.1,
            priority: 0,
            beta: 1.0,
            slack_cap: 0.0,
            gamma: 1.0,
        }
    }

    fn relaxed_filter() -> SafetyFilter<f64> {
        SafetyFilter::new(FilterConfig {
            mode: FilterMode::Relaxed,
            margin: 0.05,
            perf_weight: 1.0,
            constrained_points: PointSelection::EndEffector,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn spring_damper_matches_the_hand_arithmetic() {
        // raw = 2.0 * (0.5,0,0) - 0.2 * (0.1,0,0) = (0.98,0,0), clamped to
        // the 0.10 cap.
        let v = spring_damper_velocity(
            &Vector3::new(0.5, 0.0, 0.0),
            &Vector3::zeros(),
            &Vector3::new(0.1, 0.0, 0.0),
            2.0,
            0.2,
            0.10,
        );
        assert_relative_eq!(v, Vector3::new(0.10, 0.0, 0.0), epsilon = 1e-12);

        // Coincident and at rest: zero.
        let z = spring_damper_velocity(
            &Vector3::new(0.3, 0.2, 0.1),
            &Vector3::new(0.3, 0.2, 0.1),
            &Vector3::zeros(),
            2.0,
            0.2,
            0.10,
        );
        assert_eq!(z, Vector3::zeros());

        // Below the cap: unchanged.
        let slow = spring_damper_velocity(
            &Vector3::new(0.01, 0.0, 0.0),
            &Vector3::zeros(),
            &Vector3::zeros(),
            2.0,
            0.0,
            0.10,
        );
        assert_relative_eq!(slow, Vector3::new(0.02, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn holding_the_current_pose_leaves_q_unchanged() {
        let chain = planar_two_dof();
        let q0 = dvector![0.3, -0.2];
        let ee = chain.forward_kinematics(&q0).unwrap()[0];
        let mut world = World::new(
            chain,
            q0.clone(),
            Trajectory::Hold { position: ee },
            PerfConfig { tracking_gain: 2.0, damping: 0.01, posture_gain: 0.0 },
            relaxed_filter(),
            vec![],
            1e-3,
        )
        .unwrap();
        for _ in 0..10 {
            let record = world.step().unwrap();
            assert_relative_eq!(record.q_dot_safe.norm(), 0.0, epsilon = 1e-12);
        }
        assert_relative_eq!(world.state().q, q0, epsilon = 1e-12);
    }

    #[test]
    fn euler_update_is_exact_when_no_clamp_fires() {
        let chain = planar_two_dof();
        let mut world = World::new(
            chain,
            dvector![0.5, 0.5],
            Trajectory::Hold { position: Vector3::new(1.2, 0.8, 0.0) },
            PerfConfig { tracking_gain: 2.0, damping: 0.01, posture_gain: 0.0 },
            relaxed_filter(),
            vec![],
            1e-3,
        )
        .unwrap();
        for _ in 0..200 {
            let before = world.state().q.clone();
            let record = world.step().unwrap();
            assert!(!record.joint_clamped);
            let expected = &before + &record.q_dot_safe * 1e-3;
            assert_eq!(world.state().q, expected, "Euler update must be exact");
        }
    }

    #[test]
    fn closed_loop_tracking_decays_like_the_controller_test() {
        let chain = planar_two_dof();
        let q0 = dvector![0.9, -0.5];
        // Close enough that the commanded joint rates never touch the
        // velocity box, which would slow the decay.
        let goal = Vector3::new(1.423, 1.013, 0.0);
        let e0 = (chain.forward_kinematics(&q0).unwrap()[0] - goal).norm();
        let mut world = World::new(
            chain,
            q0,
            Trajectory::Hold { position: goal },
            PerfConfig { tracking_gain: 3.0, damping: 1e-9, posture_gain: 0.0 },
            relaxed_filter(),
            vec![],
            1e-3,
        )
        .unwrap();
        let records = world.run(1.0).unwrap();
        assert_eq!(records.len(), 1000);
        let e1 = (records.last().unwrap().ee_position - goal).norm();
        // One dt of lag: the last record holds the state *before* its step.
        let ratio = e1 / e0;
        let expected = (-3.0_f64 * (1.0 - 1e-3)).exp();
        assert!((ratio / expected - 1.0).abs() < 0.05, "ratio {ratio} vs {expected}");
    }

    #[test]
    fn pursuit_speed_never_exceeds_the_cap() {
        let chain = planar_two_dof();
        let pursuer = MovingObstacle {
            obstacle: hard_obstacle("chaser", Vector3::new(3.0, 1.5, 0.0)),
            motion: ObstacleMotion::SpringDamper { k: 2.0, b: 0.2, v_max: 0.10 },
        };
        let mut world = World::new(
            chain,
            dvector![0.4, 0.3],
            Trajectory::CircleXy {
                center: Vector3::new(1.0, 0.5, 0.0),
                radius: 0.4,
                angular_rate: 1.0,
            },
            PerfConfig { tracking_gain: 2.0, damping: 0.01, posture_gain: 0.0 },
            relaxed_filter(),
            vec![pursuer],
            1e-3,
        )
        .unwrap();
        let records = world.run(2.0).unwrap();
        for record in &records {
            assert!(record.obstacles[0].velocity.norm() <= 0.10 + 1e-12);
        }
        // The pursuer actually moved toward the arm.
        let first = records.first().unwrap().obstacles[0].position;
        let last = records.last().unwrap().obstacles[0].position;
        assert!((last - first).norm() > 0.05);
    }

    #[test]
    fn scripted_tracks_interpolate_linearly_and_hold_the_ends() {
        let waypoints =
            vec![(0.0, Vector3::zeros()), (1.0, Vector3::new(1.0, 0.0, 0.0))];
        let (p, v) = sample_waypoints(&waypoints, 0.5);
        assert_relative_eq!(p, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(v, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        let (p_end, v_end) = sample_waypoints(&waypoints, 5.0);
        assert_eq!(p_end, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(v_end, Vector3::zeros());
        let (p_start, _) = sample_waypoints(&waypoints, -1.0);
        assert_eq!(p_start, Vector3::zeros());

        assert!(validate_waypoints(&[(0.0, Vector3::zeros()), (0.0, Vector3::zeros())])
            .is_err());
        assert!(validate_waypoints(&[]).is_err());
    }

    #[test]
    fn replay_tracks_load_from_csv_with_header_and_comments() {
        let dir = std::env::temp_dir().join(format!("replay_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("track.csv");
        std::fs::write(&path, "t,x,y,z\n# comment\n0.0,1.0,2.0,3.0\n1.0,2.0,2.0,3.0\n")
            .unwrap();
        let waypoints = load_replay_csv(&path).unwrap();
        assert_eq!(waypoints.len(), 2);
        assert_eq!(waypoints[0].1, Vector3::new(1.0, 2.0, 3.0));
        let motion = ObstacleMotion::Replay { path: path.clone() }.resolved().unwrap();
        assert!(matches!(motion, ObstacleMotion::Scripted { .. }));
        std::fs::remove_dir_all(&dir).unwrap();

        let missing = load_replay_csv(Path::new("/nonexistent/track.csv"));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }

    #[test]
    fn emergencies_freeze_the_arm_but_the_rollout_continues() {
        // Two fast antipodal closers scripted straight at the end-effector.
        let chain = planar_two_dof();
        let ee = Vector3::new(2.0, 0.0, 0.0);
        let mk = |name: &str, from: Vector3<f64>| MovingObstacle {
            obstacle: hard_obstacle(name, from),
            motion: ObstacleMotion::Scripted {
                waypoints: vec![
                    (0.0, from),
                    // Rush to a standoff just outside the point.
                    (0.5, ee + (from - ee).normalize() * 0.12),
                ],
            },
        };
        let mut world = World::new(
            chain,
            dvector![0.0, 0.0],
            Trajectory::Hold { position: ee },
            PerfConfig { tracking_gain: 2.0, damping: 0.01, posture_gain: 0.0 },
            relaxed_filter(),
            vec![
                mk("upper", ee + Vector3::new(0.0, 0.6, 0.0)),
                mk("lower", ee - Vector3::new(0.0, 0.6, 0.0)),
            ],
            1e-3,
        )
        .unwrap();
        let records = world.run(1.0).unwrap();
        let n_emergency = records
            .iter()
            .filter(|r| r.status == SafetyStatus::Emergency)
            .count();
        assert!(n_emergency > 0, "squeeze must trigger at least one emergency tick");
        assert_eq!(records.len(), 1000, "rollout continues through emergencies");
        for r in &records {
            if r.status == SafetyStatus::Emergency {
                assert_relative_eq!(r.q_dot_safe.norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn far_field_coverage_finds_nothing() {
        let chain = planar_two_dof();
        let flagged = coverage_search(
            &chain,
            &CoverageTemplate::FarField { distance: 10.0 },
            500,
            7,
        )
        .unwrap();
        assert!(flagged.is_empty());
    }

    #[test]
    fn squeeze_coverage_finds_conflicts_and_relaxation_resolves_them() {
        let chain = planar_two_dof();
        let flagged = coverage_search(
            &chain,
            &CoverageTemplate::Squeeze {
                radius: 0.15,
                h_range: (0.01, 0.10),
                speed_range: (0.1, 1.0),
                beta: 100.0,
            },
            500,
            11,
        )
        .unwrap();
        assert!(!flagged.is_empty(), "squeeze template must find conflicts");
        for sample in &flagged {
            assert_eq!(sample.strict_status, QpStatus::Infeasible);
            assert_eq!(sample.relaxed_status, QpStatus::Optimal);
            assert!(sample.max_slack > 0.0);
            assert!(
                sample.min_priority0_residual >= -1e-6,
                "protected rows must hold, residual {}",
                sample.min_priority0_residual
            );
        }
    }

    #[test]
    fn coverage_is_deterministic_and_rejects_zero_samples() {
        let chain = planar_two_dof();
        let template = CoverageTemplate::Squeeze {
            radius: 0.15,
            h_range: (0.01, 0.10),
            speed_range: (0.1, 1.0),
            beta: 100.0,
        };
        let a = coverage_search(&chain, &template, 200, 3).unwrap();
        let b = coverage_search(&chain, &template, 200, 3).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.index, y.index);
            assert_eq!(x.q, y.q);
            assert_eq!(x.max_slack.to_bits(), y.max_slack.to_bits());
        }
        assert!(coverage_search(&chain, &template, 0, 0).is_err());
    }

    #[test]
    fn step_csv_has_the_fixed_schema() {
        let chain = planar_two_dof();
        let obstacle = MovingObstacle {
            obstacle: hard_obstacle("red", Vector3::new(3.0, 0.0, 0.0)),
            motion: ObstacleMotion::Static,
        };
        let mut world = World::new(
            chain,
            dvector![0.1, 0.1],
            Trajectory::Hold { position: Vector3::new(1.5, 0.5, 0.0) },
            PerfConfig { tracking_gain: 2.0, damping: 0.01, posture_gain: 0.0 },
            relaxed_filter(),
            vec![obstacle],
            1e-3,
        )
        .unwrap();
        let records = world.run(0.002).unwrap();
        let dir = std::env::temp_dir().join(format!("csv_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("steps.csv");
        write_step_csv(&path, &records, &world.obstacle_names()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,q0,q1,qd_safe0,qd_safe1,qd_perf0,qd_perf1,\
             red_px,red_py,red_pz,red_h_min,red_dist,red_delta,status,solve_us"
        );
        assert_eq!(lines.count(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
