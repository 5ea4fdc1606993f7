//! Scenario configuration, embedded presets, and the end-to-end rollout
//! entry point.
//!
//! A scenario is a JSON document: chain (preset name or inline definition),
//! trajectory, obstacle list, filter parameters, and simulation settings.
//! A document may instead name a `preset` and override individual fields;
//! the override is deep-merged over the preset before validation, and the
//! fully resolved config serializes back to JSON so any run can be
//! reproduced exactly from its echoed config and seed.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::barrier::Obstacle;
use crate::chain::{ControlPoint, Joint, KinematicChain};
use crate::controller::PerfConfig;
use crate::error::{Error, Result};
use crate::filter::{
    EmergencyPolicy, FilterConfig, FilterMode, PointSelection, ProgramRecord, SafetyFilter,
};
use crate::metrics::{aggregate, RoiRule, ScenarioMetrics};
use crate::trajectory::Trajectory;
use crate::world::{
    random_unit, CoverageTemplate, MovingObstacle, ObstacleMotion, StepRecord, World,
};

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// Root scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub chain: ChainSpec,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Sampling rule for the infeasibility coverage search; optional, only
    /// used by the coverage command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSpec>,
}

/// Either a named chain preset or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSpec {
    Preset { preset: String },
    Inline(InlineChainSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineChainSpec {
    pub joints: Vec<JointSpec>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub vel_lower: Vec<f64>,
    pub vel_upper: Vec<f64>,
    pub control_points: Vec<ControlPointSpec>,
    /// Default starting pose; mid-range when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPointSpec {
    pub link: usize,
    pub local: [f64; 3],
    pub radius: f64,
    #[serde(default)]
    pub end_effector: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Hold { position: [f64; 3] },
    PickPlace { from: [f64; 3], to: [f64; 3], period: f64 },
    CircleXy { center: [f64; 3], radius: f64, angular_rate: f64 },
    CircleYz { center: [f64; 3], radius: f64, angular_rate: f64 },
    Square { center: [f64; 3], half_side: f64, period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub name: String,
    pub radius: f64,
    /// 0 = protected (never relaxed); larger numbers relax sooner.
    #[serde(default)]
    pub priority: u32,
    /// Barrier decay rate.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Slack penalty weight; required for relaxable obstacles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Upper bound on the slack; omitted means unlimited for priority > 0.
    /// Zero disables relaxation. Must be absent or zero for priority 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_cap: Option<f64>,
    #[serde(default)]
    pub motion: MotionSpec,
    pub placement: PlacementSpec,
    /// Initial velocity.
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    #[default]
    Static,
    /// Rows of `[t, x, y, z]`, strictly increasing in `t`.
    Scripted { waypoints: Vec<[f64; 4]> },
    SpringDamper { k: f64, b: f64, v_max: f64 },
    Replay { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementSpec {
    /// Explicit starting position.
    Fixed { position: [f64; 3] },
    /// Uniform direction at a uniform distance (meters, `[lo, hi]`) from the
    /// end effector's starting position; drawn from the run seed.
    Shell { distance: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Strict,
    #[default]
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmergencySpec {
    #[default]
    Stop,
    Fail,
}

/// Which control points get barrier constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointsSpec {
    Named(String),
    Indices(Vec<usize>),
}

impl Default for PointsSpec {
    fn default() -> Self {
        PointsSpec::Named("all".into())
    }
}

/// Filter and controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    /// Tracking weight on `|q_dot - q_dot_perf|^2`.
    #[serde(default = "default_perf_weight")]
    pub perf_weight: f64,
    /// Safety margin added to every barrier.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Task-error feedback gain of the performance controller.
    #[serde(default = "default_tracking_gain")]
    pub tracking_gain: f64,
    /// Pseudo-inverse damping.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Null-space mid-range bias gain.
    #[serde(default = "default_posture_gain")]
    pub posture_gain: f64,
    #[serde(default)]
    pub constrained_points: PointsSpec,
    #[serde(default)]
    pub emergency: EmergencySpec,
    /// Also solve the strict program each tick for diagnostics.
    #[serde(default)]
    pub probe_strict: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            mode: ModeSpec::default(),
            perf_weight: default_perf_weight(),
            margin: default_margin(),
            tracking_gain: default_tracking_gain(),
            damping: default_damping(),
            posture_gain: default_posture_gain(),
            constrained_points: PointsSpec::default(),
            emergency: EmergencySpec::default(),
            probe_strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Starting joint vector; chain home pose when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self { dt: default_dt(), duration: default_duration(), seed: 0, q0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub roi_rule: RoiRule,
    /// Step-log file name inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_csv: Option<String>,
    /// Metrics file name inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_json: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoverageSpec {
    FarField {
        #[serde(default = "default_far_distance")]
        distance: f64,
    },
    Squeeze {
        #[serde(default = "default_squeeze_radius")]
        radius: f64,
        #[serde(default = "default_h_range")]
        h_range: [f64; 2],
        #[serde(default = "default_speed_range")]
        speed_range: [f64; 2],
        #[serde(default = "default_squeeze_beta")]
        beta: f64,
    },
}

impl Default for CoverageSpec {
    fn default() -> Self {
        CoverageSpec::Squeeze {
            radius: default_squeeze_radius(),
            h_range: default_h_range(),
            speed_range: default_speed_range(),
            beta: default_squeeze_beta(),
        }
    }
}

fn default_gamma() -> f64 {
    1.0
}
fn default_perf_weight() -> f64 {
    200.0
}
fn default_margin() -> f64 {
    0.05
}
fn default_tracking_gain() -> f64 {
    2.0
}
fn default_damping() -> f64 {
    0.01
}
fn default_posture_gain() -> f64 {
    0.5
}
fn default_dt() -> f64 {
    1e-3
}
fn default_duration() -> f64 {
    10.0
}
fn default_far_distance() -> f64 {
    5.0
}
fn default_squeeze_radius() -> f64 {
    0.15
}
fn default_h_range() -> [f64; 2] {
    [0.01, 0.10]
}
fn default_speed_range() -> [f64; 2] {
    [0.1, 1.0]
}
fn default_squeeze_beta() -> f64 {
    100.0
}

// ---------------------------------------------------------------------------
// Building runtime objects from the schema
// ---------------------------------------------------------------------------

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl ScenarioConfig {
    /// Full validation: builds every runtime object once and discards it.
    pub fn validate(&self) -> Result<()> {
        build_world(self, None)?;
        if let Some(coverage) = &self.coverage {
            coverage.template()?;
        }
        Ok(())
    }

    /// Chain plus its home pose.
    pub fn build_chain(&self) -> Result<(KinematicChain<f64>, DVector<f64>)> {
        match &self.chain {
            ChainSpec::Preset { preset } => chain_preset(preset),
            ChainSpec::Inline(spec) => spec.build(),
        }
    }

    pub fn build_trajectory(&self) -> Result<Trajectory> {
        let trajectory = match &self.trajectory {
            TrajectorySpec::Hold { position } => Trajectory::Hold { position: vec3(*position) },
            TrajectorySpec::PickPlace { from, to, period } => Trajectory::PickPlace {
                from: vec3(*from),
                to: vec3(*to),
                period: *period,
            },
            TrajectorySpec::CircleXy { center, radius, angular_rate } => Trajectory::CircleXy {
                center: vec3(*center),
                radius: *radius,
                angular_rate: *angular_rate,
            },
            TrajectorySpec::CircleYz { center, radius, angular_rate } => Trajectory::CircleYz {
                center: vec3(*center),
                radius: *radius,
                angular_rate: *angular_rate,
            },
            TrajectorySpec::Square { center, half_side, period } => Trajectory::Square {
                center: vec3(*center),
                half_side: *half_side,
                period: *period,
            },
        };
        trajectory.validate()?;
        Ok(trajectory)
    }

    /// Controller gains and filter configuration.
    pub fn build_filter(&self) -> Result<(PerfConfig<f64>, FilterConfig<f64>)> {
        let f = &self.filter;
        let perf = PerfConfig {
            tracking_gain: f.tracking_gain,
            damping: f.damping,
            posture_gain: f.posture_gain,
        };
        perf.validate()?;
        let constrained_points = match &f.constrained_points {
            PointsSpec::Named(name) => match name.as_str() {
                "all" => PointSelection::All,
                "end_effector" => PointSelection::EndEffector,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "filter.constrained_points: unknown selector {other:?} \
                         (expected \"all\", \"end_effector\", or an index list)"
                    )))
                }
            },
            PointsSpec::Indices(list) => PointSelection::Indices(list.clone()),
        };
        let config = FilterConfig {
            mode: match f.mode {
                ModeSpec::Strict => FilterMode::Strict,
                ModeSpec::Relaxed => FilterMode::Relaxed,
            },
            margin: f.margin,
            perf_weight: f.perf_weight,
            constrained_points,
            emergency: match f.emergency {
                EmergencySpec::Stop => EmergencyPolicy::Stop,
                EmergencySpec::Fail => EmergencyPolicy::Fail,
            },
            probe_strict: f.probe_strict,
            // Brake ramp toward joint stops: each joint may close at most the
            // remaining travel per half second, which keeps commanded motion
            // deliverable (the integrator never has to clamp) and steers the
            // program away from stops before they pin the arm.
            limit_horizon: (0.5_f64).max(self.sim.dt),
            ..Default::default()
        };
        config.validate()?;
        Ok((perf, config))
    }

    /// The coverage template (defaults to the squeeze sampler).
    pub fn coverage_template(&self) -> Result<CoverageTemplate> {
        self.coverage.clone().unwrap_or_default().template()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl InlineChainSpec {
    fn build(&self) -> Result<(KinematicChain<f64>, DVector<f64>)> {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let axis = vec3(j.axis);
                let norm = axis.norm();
                if !(norm > 1e-9 && norm.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "chain.joints.axis must be a nonzero vector".into(),
                    ));
                }
                Ok(Joint {
                    axis: nalgebra::Unit::new_normalize(axis),
                    offset: vec3(j.offset),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let points = self
            .control_points
            .iter()
            .map(|p| ControlPoint {
                link: p.link,
                local: vec3(p.local),
                radius: p.radius,
                end_effector: p.end_effector,
            })
            .collect();
        let chain = KinematicChain::new(
            joints,
            DVector::from_vec(self.joint_lower.clone()),
            DVector::from_vec(self.joint_upper.clone()),
            DVector::from_vec(self.vel_lower.clone()),
            DVector::from_vec(self.vel_upper.clone()),
            points,
        )?;
        let home = match &self.home {
            Some(q) => {
                let q = DVector::from_vec(q.clone());
                check_pose(&chain, &q, "chain.home")?;
                q
            }
            None => chain.mid_range(),
        };
        Ok((chain, home))
    }
}

fn check_pose(chain: &KinematicChain<f64>, q: &DVector<f64>, field: &str) -> Result<()> {
    if q.len() != chain.n_joints() {
        return Err(Error::InvalidConfig(format!(
            "{field}: expected {} joint values, got {}",
            chain.n_joints(),
            q.len()
        )));
    }
    for i in 0..q.len() {
        if !(q[i] >= chain.joint_lower()[i] && q[i] <= chain.joint_upper()[i]) {
            return Err(Error::InvalidConfig(format!(
                "{field}[{i}] = {} outside joint limits [{}, {}]",
                q[i],
                chain.joint_lower()[i],
                chain.joint_upper()[i]
            )));
        }
    }
    Ok(())
}

/// Everything a shell placement needs to avoid spawning in contact with the
/// arm: the constrained spheres at the starting pose and the barrier margin.
struct PlacementContext {
    ee_start: Vector3<f64>,
    /// `(center, radius)` of each constrained control sphere at `q0`.
    spheres: Vec<(Vector3<f64>, f64)>,
    margin: f64,
}

/// Extra clearance required at spawn beyond the barrier boundary, so
/// rollouts start strictly inside the safe set.
const SPAWN_CLEARANCE: f64 = 0.02;

impl ObstacleSpec {
    /// Resolves priority/cap/penalty bookkeeping and draws the starting
    /// position (shell placements consume the RNG).
    fn build<R: Rng>(&self, ctx: &PlacementContext, rng: &mut R) -> Result<MovingObstacle> {
        let slack_cap = match (self.priority, self.slack_cap) {
            (0, None) => 0.0,
            (0, Some(c)) if c == 0.0 => 0.0,
            (0, Some(c)) => {
                return Err(Error::InvalidConfig(format!(
                    "obstacles.{}.slack_cap: protected (priority 0) obstacles \
                     cannot be relaxed, got cap {c}",
                    self.name
                )))
            }
            (_, Some(c)) => c,
            (_, None) => f64::INFINITY,
        };
        let beta = if self.priority > 0 && slack_cap > 0.0 {
            self.beta.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "obstacles.{}.beta: relaxable obstacles need a slack penalty",
                    self.name
                ))
            })?
        } else {
            self.beta.unwrap_or(1.0)
        };
        let position = match &self.placement {
            PlacementSpec::Fixed { position } => vec3(*position),
            PlacementSpec::Shell { distance } => {
                let [lo, hi] = *distance;
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "obstacles.{}.placement.distance: need 0 < lo <= hi, got [{lo}, {hi}]",
                        self.name
                    )));
                }
                // The shell is centered on the end effector, but its inner
                // radius may still reach other parts of the arm; reject draws
                // that would start inside (or hugging) any safety boundary.
                let mut placed = None;
                for _ in 0..1000 {
                    let direction = random_unit(rng);
                    let candidate = ctx.ee_start + direction * rng.random_range(lo..=hi);
                    let clear = ctx.spheres.iter().all(|(center, point_radius)| {
                        (candidate - center).norm()
                            >= point_radius + self.radius + ctx.margin + SPAWN_CLEARANCE
                    });
                    if clear {
                        placed = Some(candidate);
                        break;
                    }
                }
                placed.ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "obstacles.{}.placement: no collision-free start found on the \
                         shell [{lo}, {hi}]; widen the band or shrink the obstacle",
                        self.name
                    ))
                })?
            }
        };
        let obstacle = Obstacle {
            name: self.name.clone(),
            position,
            velocity: vec3(self.velocity),
            radius: self.radius,
            priority: self.priority,
            beta,
            slack_cap,
            gamma: self.gamma,
        };
        obstacle.validate()?;
        let motion = match &self.motion {
            MotionSpec::Static => ObstacleMotion::Static,
            MotionSpec::Scripted { waypoints } => ObstacleMotion::Scripted {
                waypoints: waypoints
                    .iter()
                    .map(|w| (w[0], Vector3::new(w[1], w[2], w[3])))
                    .collect(),
            },
            MotionSpec::SpringDamper { k, b, v_max } => {
                ObstacleMotion::SpringDamper { k: *k, b: *b, v_max: *v_max }
            }
            MotionSpec::Replay { path } => ObstacleMotion::Replay { path: path.into() },
        };
        motion.validate()?;
        Ok(MovingObstacle { obstacle, motion })
    }
}

impl CoverageSpec {
    pub fn template(&self) -> Result<CoverageTemplate> {
        let template = match self {
            CoverageSpec::FarField { distance } => {
                CoverageTemplate::FarField { distance: *distance }
            }
            CoverageSpec::Squeeze { radius, h_range, speed_range, beta } => {
                CoverageTemplate::Squeeze {
                    radius: *radius,
                    h_range: (h_range[0], h_range[1]),
                    speed_range: (speed_range[0], speed_range[1]),
                    beta: *beta,
                }
            }
        };
        template.validate()?;
        Ok(template)
    }
}

// ---------------------------------------------------------------------------
// Chain presets
// ---------------------------------------------------------------------------

pub fn chain_preset_names() -> &'static [&'static str] {
    &["planar2", "franka7"]
}

/// Built-in chains with their home poses.
pub fn chain_preset(name: &str) -> Result<(KinematicChain<f64>, DVector<f64>)> {
    match name {
        "planar2" => planar2(),
        "franka7" => franka7(),
        other => Err(Error::InvalidConfig(format!(
            "chain.preset: unknown chain {other:?} (available: {})",
            chain_preset_names().join(", ")
        ))),
    }
}

/// Two-link planar arm (1 m links, z-axis joints) with elbow and
/// end-effector spheres. Home pose reaches (0.4, 0, 0).
fn planar2() -> Result<(KinematicChain<f64>, DVector<f64>)> {
    let joints = vec![
        Joint { axis: Vector3::z_axis(), offset: Vector3::zeros() },
        Joint { axis: Vector3::z_axis(), offset: Vector3::new(1.0, 0.0, 0.0) },
    ];
    let points = vec![
        ControlPoint {
            link: 0,
            local: Vector3::new(1.0, 0.0, 0.0),
            radius: 0.05,
            end_effector: false,
        },
        ControlPoint {
            link: 1,
            local: Vector3::new(1.0, 0.0, 0.0),
            radius: 0.05,
            end_effector: true,
        },
    ];
    let chain = KinematicChain::new(
        joints,
        DVector::from_vec(vec![-3.1, -3.1]),
        DVector::from_vec(vec![3.1, 3.1]),
        DVector::from_vec(vec![-3.0, -3.0]),
        DVector::from_vec(vec![3.0, 3.0]),
        points,
    )?;
    let home = DVector::from_vec(vec![PLANAR2_HOME[0], PLANAR2_HOME[1]]);
    Ok((chain, home))
}

/// Elbow-bent pose whose end effector sits at (0.4, 0, 0): the inverse
/// kinematics of a 1 m + 1 m arm at reach 0.4.
pub const PLANAR2_HOME: [f64; 2] = [1.3694384060045657, -2.7388768120091314];

/// Seven-joint spatial arm with roughly anthropomorphic proportions and six
/// collision spheres on the distal links.
fn franka7() -> Result<(KinematicChain<f64>, DVector<f64>)> {
    let z = Vector3::z_axis;
    let y = Vector3::y_axis;
    let joints = vec![
        Joint { axis: z(), offset: Vector3::new(0.0, 0.0, 0.333) },
        Joint { axis: y(), offset: Vector3::zeros() },
        Joint { axis: z(), offset: Vector3::new(0.0, 0.0, 0.316) },
        Joint { axis: y(), offset: Vector3::new(0.0825, 0.0, 0.0) },
        Joint { axis: z(), offset: Vector3::new(-0.0825, 0.0, 0.384) },
        Joint { axis: y(), offset: Vector3::zeros() },
        Joint { axis: z(), offset: Vector3::new(0.088, 0.0, 0.107) },
    ];
    let sphere = |link: usize, local: Vector3<f64>, radius: f64, end_effector: bool| {
        ControlPoint { link, local, radius, end_effector }
    };
    let points = vec![
        sphere(1, Vector3::new(0.0, 0.0, 0.16), 0.09, false),
        sphere(2, Vector3::new(0.0, 0.0, 0.16), 0.09, false),
        sphere(3, Vector3::new(0.0, 0.0, 0.12), 0.08, false),
        sphere(4, Vector3::new(0.0, 0.0, 0.19), 0.08, false),
        sphere(5, Vector3::new(0.0, 0.0, 0.10), 0.07, false),
        sphere(6, Vector3::new(0.0, 0.0, 0.11), 0.05, true),
    ];
    let chain = KinematicChain::new(
        joints,
        DVector::from_vec(vec![-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973]),
        DVector::from_vec(vec![2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973]),
        DVector::from_vec(vec![-2.175, -2.175, -2.175, -2.175, -2.61, -2.61, -2.61]),
        DVector::from_vec(vec![2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61]),
        points,
    )?;
    let home = DVector::from_vec(FRANKA7_HOME.to_vec());
    Ok((chain, home))
}

/// Ready pose of the seven-joint preset: elbow moderately extended so the
/// tool works well clear of the base column.
pub const FRANKA7_HOME: [f64; 7] = [0.0, -1.1, 0.0, -1.0, 0.0, 2.0, 0.8];

/// End-effector position at [`FRANKA7_HOME`]; the pursuit presets center
/// their reference trajectory here.
pub const FRANKA7_HOME_EE: [f64; 3] = [-0.4681259237933782, 0.0, 0.5094865491909261];

// ---------------------------------------------------------------------------
// Scenario presets
// ---------------------------------------------------------------------------

pub fn preset_names() -> &'static [&'static str] {
    &[
        "easy",
        "medium",
        "hard",
        "squeeze2d",
        "squeeze2d_cap0",
        "squeeze2d_cap03",
        "squeeze2d_cap06",
    ]
}

/// Built-in scenarios.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "easy" => Ok(pursuit_preset("easy", [0.75, 1.2], 0.5, 1.0, 0.05, 0.05)),
        "medium" => Ok(pursuit_preset("medium", [0.6, 0.9], 2.0, 0.2, 0.10, 0.03)),
        "hard" => Ok(pursuit_preset("hard", [0.3, 0.6], 4.0, 0.1, 0.15, 0.02)),
        "squeeze2d" => Ok(squeeze_preset("squeeze2d", None)),
        "squeeze2d_cap0" => Ok(squeeze_preset("squeeze2d_cap0", Some(0.0))),
        "squeeze2d_cap03" => Ok(squeeze_preset("squeeze2d_cap03", Some(0.3))),
        "squeeze2d_cap06" => Ok(squeeze_preset("squeeze2d_cap06", Some(0.6))),
        other => Err(Error::InvalidConfig(format!(
            "preset: unknown scenario {other:?} (available: {})",
            preset_names().join(", ")
        ))),
    }
}

/// Three spherical pursuers (protected, mid, low priority) chasing the
/// seven-joint arm around a circular reference. The difficulty knobs are the
/// spawn shell, the pursuit gains, and the barrier margin: slow pursuers get
/// a generous margin (violations are cheap to avoid, so buy comfort), fast
/// close-quarters pursuit gets a slim one so the standoff ring stays inside
/// the arm's dexterous workspace instead of crowding it against its base.
fn pursuit_preset(
    name: &str,
    shell: [f64; 2],
    k: f64,
    b: f64,
    v_max: f64,
    margin: f64,
) -> ScenarioConfig {
    let pursuer = |obstacle_name: &str, priority: u32, beta: Option<f64>| ObstacleSpec {
        name: obstacle_name.into(),
        radius: 0.06,
        priority,
        gamma: 1.0,
        beta,
        slack_cap: None,
        motion: MotionSpec::SpringDamper { k, b, v_max },
        placement: PlacementSpec::Shell { distance: shell },
        velocity: [0.0; 3],
    };
    ScenarioConfig {
        name: name.into(),
        chain: ChainSpec::Preset { preset: "franka7".into() },
        trajectory: TrajectorySpec::CircleYz {
            center: FRANKA7_HOME_EE,
            radius: 0.15,
            angular_rate: 1.0,
        },
        obstacles: vec![
            pursuer("red", 0, None),
            pursuer("blue", 1, Some(500.0)),
            pursuer("green", 2, Some(250.0)),
        ],
        filter: FilterSpec {
            margin,
            // A firm mid-range pull restores joint travel between lunges so
            // repeated evasion does not ratchet the arm into a folded pose.
            posture_gain: 1.0,
            ..Default::default()
        },
        sim: SimSpec { dt: 1e-3, duration: 30.0, seed: 0, q0: None },
        output: OutputSpec::default(),
        coverage: None,
    }
}

/// Planar antipodal squeeze: two static discs pinch the straight-line path,
/// the protected one above, the sacrificial one below. The slack cap decides
/// how deep the arm may cut into the sacrificial disc's safety region.
fn squeeze_preset(name: &str, cap: Option<f64>) -> ScenarioConfig {
    let disc = |obstacle_name: &str, y: f64, priority: u32, beta: Option<f64>, cap: Option<f64>| {
        ObstacleSpec {
            name: obstacle_name.into(),
            radius: 0.65,
            priority,
            // A brisker barrier decay lets the pinched end effector settle
            // onto the equidistant point between the discs within the run.
            gamma: 2.0,
            beta,
            slack_cap: cap,
            motion: MotionSpec::Static,
            placement: PlacementSpec::Fixed { position: [1.2, y, 0.0] },
            velocity: [0.0; 3],
        }
    };
    ScenarioConfig {
        name: name.into(),
        chain: ChainSpec::Preset { preset: "planar2".into() },
        trajectory: TrajectorySpec::PickPlace {
            from: [0.4, 0.0, 0.0],
            to: [1.95, 0.0, 0.0],
            period: 40.0,
        },
        obstacles: vec![
            disc("red", 0.35, 0, None, None),
            disc("green", -0.35, 1, Some(20.0), cap),
        ],
        filter: FilterSpec {
            constrained_points: PointsSpec::Named("end_effector".into()),
            // Light damping keeps the approach on the symmetry axis; the
            // heavier default would leak a lateral drift through the
            // pseudo-inverse and bias the first contact toward one disc.
            damping: 1e-4,
            posture_gain: 0.0,
            ..Default::default()
        },
        sim: SimSpec { dt: 1e-3, duration: 20.0, seed: 0, q0: None },
        output: OutputSpec::default(),
        coverage: None,
    }
}

// ---------------------------------------------------------------------------
// Loading and merging
// ---------------------------------------------------------------------------

/// Deep merge: objects merge key-wise (overlay wins on conflicts), everything
/// else is replaced by the overlay. An object that changes the variant tag
/// (`type` / `template`) replaces the base object wholesale, so switching a
/// trajectory or motion kind does not drag the old variant's fields along.
pub fn merge_json(base: Value, overlay: Value) -> Value {
    match (base, overlay) {
        (Value::Object(mut base_map), Value::Object(overlay_map)) => {
            let tag_changed = ["type", "template"].iter().any(|tag| {
                matches!(
                    (base_map.get(*tag), overlay_map.get(*tag)),
                    (Some(a), Some(b)) if a != b
                )
            });
            if tag_changed {
                return Value::Object(overlay_map);
            }
            for (key, value) in overlay_map {
                match base_map.remove(&key) {
                    Some(existing) => {
                        base_map.insert(key, merge_json(existing, value));
                    }
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
            Value::Object(base_map)
        }
        (_, overlay) => overlay,
    }
}

/// Parses a config document. A `preset` key selects a built-in scenario and
/// deep-merges the remaining fields over it.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidConfig(format!("config is not valid JSON: {e}")))?;
    config_from_value(value)
}

pub fn config_from_value(mut value: Value) -> Result<ScenarioConfig> {
    let preset_name = value
        .as_object_mut()
        .and_then(|map| map.remove("preset"))
        .map(|v| match v {
            Value::String(s) => Ok(s),
            other => Err(Error::InvalidConfig(format!(
                "preset: expected a string, got {other}"
            ))),
        })
        .transpose()?;
    let value = match preset_name {
        Some(name) => {
            let base = serde_json::to_value(preset(&name)?).expect("preset serializes");
            merge_json(base, value)
        }
        None => value,
    };
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Loads a config file; replay paths resolve relative to the file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("reading config {}", path.display()),
        source: e,
    })?;
    let mut config = parse_config(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if let Some(dir) = path.parent() {
        for obstacle in &mut config.obstacles {
            if let MotionSpec::Replay { path: replay } = &mut obstacle.motion {
                let p = Path::new(replay.as_str());
                if p.is_relative() {
                    *replay = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// A finished rollout: the resolved config (echo it to reproduce the run),
/// the per-tick log, and the aggregated metrics.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub obstacle_names: Vec<String>,
    pub records: Vec<StepRecord>,
    pub metrics: ScenarioMetrics,
    /// Last tick's assembled programs, when QP recording was requested.
    pub last_qp: Option<ProgramRecord>,
}

/// Builds the world for a config. `seed_override` replaces `sim.seed` for
/// the shell placement draws.
pub fn build_world(config: &ScenarioConfig, seed_override: Option<u64>) -> Result<World> {
    let (chain, home) = config.build_chain()?;
    let q0 = match &config.sim.q0 {
        Some(q) => {
            let q = DVector::from_vec(q.clone());
            check_pose(&chain, &q, "sim.q0")?;
            q
        }
        None => home,
    };
    if !(config.sim.dt > 0.0 && config.sim.dt.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sim.dt: must be positive and finite, got {}",
            config.sim.dt
        )));
    }
    if !(config.sim.duration > 0.0 && config.sim.duration.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sim.duration: must be positive and finite, got {}",
            config.sim.duration
        )));
    }
    let trajectory = config.build_trajectory()?;
    let (perf, filter_config) = config.build_filter()?;
    let filter = SafetyFilter::new(filter_config)?;
    let seed = seed_override.unwrap_or(config.sim.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = chain.forward_kinematics(&q0)?;
    let constrained = filter.config().constrained_points.resolve(&chain)?;
    let ctx = PlacementContext {
        ee_start: positions[chain.end_effector_index()],
        spheres: constrained
            .iter()
            .map(|&i| (positions[i], chain.control_points()[i].radius))
            .collect(),
        margin: config.filter.margin,
    };
    let obstacles = config
        .obstacles
        .iter()
        .map(|spec| spec.build(&ctx, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    World::new(chain, q0, trajectory, perf, filter, obstacles, config.sim.dt)
}

/// Runs a scenario to completion. Deterministic in (config, seed): two calls
/// produce bit-identical logs (solve times aside).
pub fn run_scenario(config: &ScenarioConfig, seed_override: Option<u64>) -> Result<ScenarioRun> {
    run_scenario_with(config, seed_override, false)
}

/// [`run_scenario`] with optional QP recording for the last tick.
pub fn run_scenario_with(
    config: &ScenarioConfig,
    seed_override: Option<u64>,
    record_qp: bool,
) -> Result<ScenarioRun> {
    let seed = seed_override.unwrap_or(config.sim.seed);
    let mut world = build_world(config, Some(seed))?;
    if record_qp {
        world.filter_mut().set_recording(true);
    }
    let records = world.run(config.sim.duration)?;
    let obstacle_names = world.obstacle_names();
    let metrics = aggregate(&records, &obstacle_names, config.output.roi_rule)?;
    let mut resolved = config.clone();
    resolved.sim.seed = seed;
    Ok(ScenarioRun {
        config: resolved,
        obstacle_names,
        records,
        metrics,
        last_qp: world.filter_mut().last_record().cloned(),
    })
}
