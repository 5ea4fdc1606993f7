//! Rollout summary statistics.
//!
//! Everything here is a pure reduction over [`StepRecord`]s. The accumulator
//! is a monoid: pushing records one by one and merging partial accumulators
//! commute, so logs can be aggregated piecewise (split across workers,
//! concatenated later) without changing the result.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::SafetyStatus;
use crate::world::StepRecord;

/// Region-of-interest radius (meters) around an obstacle: ticks closer than
/// this count as "near".
pub const ROI_DISTANCE: f64 = 0.6;

/// Separations below this are treated as coincident: the relative-velocity
/// direction is undefined and the tick is excluded (and counted) instead.
pub const COINCIDENT_TOL: f64 = 1e-9;

/// Which ticks belong to an obstacle's region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoiRule {
    /// Near the obstacle **or** approaching it.
    #[default]
    NearOrApproaching,
    /// Near the obstacle **and** approaching it.
    NearAndApproaching,
}

impl RoiRule {
    fn admits(self, distance: f64, rel_velocity: f64) -> bool {
        let near = distance < ROI_DISTANCE;
        let approaching = rel_velocity < 0.0;
        match self {
            RoiRule::NearOrApproaching => near || approaching,
            RoiRule::NearAndApproaching => near && approaching,
        }
    }
}

/// Signed closing speed: the component of the relative velocity along the
/// separation direction, `(p_a - p_b) . (v_a - v_b) / |p_a - p_b|`. Negative
/// means the pair is approaching. `None` when the points are coincident.
pub fn relative_velocity(
    p_a: &Vector3<f64>,
    p_b: &Vector3<f64>,
    v_a: &Vector3<f64>,
    v_b: &Vector3<f64>,
) -> Option<f64> {
    let diff = p_a - p_b;
    let dist = diff.norm();
    if dist < COINCIDENT_TOL {
        return None;
    }
    Some(diff.dot(&(v_a - v_b)) / dist)
}

/// Root-mean-square end-effector tracking error over a log.
pub fn rmse(records: &[StepRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records
        .iter()
        .map(|r| (r.ee_position - r.target).norm_squared())
        .sum();
    (sum / records.len() as f64).sqrt()
}

/// Area of the convex hull of a 2-d point set (Andrew's monotone chain, then
/// the shoelace formula). Fewer than three non-collinear points give zero.
pub fn hull_area(points: &[(f64, f64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    sorted.dedup();
    if sorted.len() < 3 {
        return 0.0;
    }

    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let half_hull = |iter: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for p in iter {
            while hull.len() >= 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop(); // shared with the other half
        hull
    };
    let lower = half_hull(&mut sorted.iter().copied());
    let upper = half_hull(&mut sorted.iter().rev().copied());
    let hull: Vec<(f64, f64)> = lower.into_iter().chain(upper).collect();

    if hull.len() < 3 {
        return 0.0;
    }
    let mut twice_area = 0.0;
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        twice_area += x0 * y1 - x1 * y0;
    }
    twice_area.abs() / 2.0
}

/// Per-obstacle statistics over the region-of-interest ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub ticks: usize,
    pub mean_distance: f64,
    pub mean_rel_velocity: f64,
    /// Convex-hull area of the (distance, relative velocity) point cloud.
    pub hull_area: f64,
}

/// Summary of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    /// Root-mean-square end-effector tracking error.
    pub rmse: f64,
    /// Per obstacle: smallest surface clearance (center distance minus both
    /// radii, margin **not** included) over the whole log.
    pub d_min: BTreeMap<String, f64>,
    /// Per obstacle: largest realized relaxation.
    pub delta_max: BTreeMap<String, f64>,
    /// Per obstacle: whether any tick had a negative barrier value (margin
    /// included).
    pub violation: BTreeMap<String, bool>,
    /// Per obstacle: region-of-interest statistics; absent when no tick
    /// qualified.
    pub roi: BTreeMap<String, Option<RoiStats>>,
    pub roi_rule: RoiRule,
    pub ticks: usize,
    pub nominal_ticks: usize,
    pub relaxing_ticks: usize,
    pub emergency_ticks: usize,
    pub joint_clamp_ticks: usize,
    /// Ticks skipped from ROI statistics because the end effector and the
    /// obstacle were coincident.
    pub degenerate_roi_ticks: usize,
}

/// Streaming reduction of step records; see the module docs for the merge
/// law.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    rule: RoiRule,
    names: Vec<String>,
    ticks: usize,
    sq_err_sum: f64,
    nominal: usize,
    relaxing: usize,
    emergency: usize,
    clamped: usize,
    degenerate: usize,
    d_min: Vec<f64>,
    delta_max: Vec<f64>,
    violation: Vec<bool>,
    roi_points: Vec<Vec<(f64, f64)>>,
}

impl MetricsAccumulator {
    pub fn new(obstacle_names: &[String], rule: RoiRule) -> Self {
        let k = obstacle_names.len();
        Self {
            rule,
            names: obstacle_names.to_vec(),
            ticks: 0,
            sq_err_sum: 0.0,
            nominal: 0,
            relaxing: 0,
            emergency: 0,
            clamped: 0,
            degenerate: 0,
            d_min: vec![f64::INFINITY; k],
            delta_max: vec![0.0; k],
            violation: vec![false; k],
            roi_points: vec![Vec::new(); k],
        }
    }

    pub fn push(&mut self, record: &StepRecord) -> Result<()> {
        if record.obstacles.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                what: "obstacle count in step record",
                expected: self.names.len(),
                got: record.obstacles.len(),
            });
        }
        self.ticks += 1;
        self.sq_err_sum += (record.ee_position - record.target).norm_squared();
        match record.status {
            SafetyStatus::Nominal => self.nominal += 1,
            SafetyStatus::Relaxing => self.relaxing += 1,
            SafetyStatus::Emergency => self.emergency += 1,
        }
        if record.joint_clamped {
            self.clamped += 1;
        }
        for (i, info) in record.obstacles.iter().enumerate() {
            self.d_min[i] = self.d_min[i].min(info.clearance);
            self.delta_max[i] = self.delta_max[i].max(info.delta);
            self.violation[i] |= info.h_min < 0.0;
            let distance = (record.ee_position - info.position).norm();
            match relative_velocity(
                &record.ee_position,
                &info.position,
                &record.ee_velocity,
                &info.velocity,
            ) {
                Some(v_rel) => {
                    if self.rule.admits(distance, v_rel) {
                        self.roi_points[i].push((distance, v_rel));
                    }
                }
                None => self.degenerate += 1,
            }
        }
        Ok(())
    }

    /// Combines two partial reductions; `self` absorbs `other`.
    pub fn merge(&mut self, other: MetricsAccumulator) -> Result<()> {
        if other.names != self.names || other.rule != self.rule {
            return Err(Error::InvalidConfig(
                "cannot merge metrics over different obstacle sets or rules".into(),
            ));
        }
        self.ticks += other.ticks;
        self.sq_err_sum += other.sq_err_sum;
        self.nominal += other.nominal;
        self.relaxing += other.relaxing;
        self.emergency += other.emergency;
        self.clamped += other.clamped;
        self.degenerate += other.degenerate;
        for i in 0..self.names.len() {
            self.d_min[i] = self.d_min[i].min(other.d_min[i]);
            self.delta_max[i] = self.delta_max[i].max(other.delta_max[i]);
            self.violation[i] |= other.violation[i];
            self.roi_points[i].extend_from_slice(&other.roi_points[i]);
        }
        Ok(())
    }

    pub fn finish(self) -> ScenarioMetrics {
        let mut d_min = BTreeMap::new();
        let mut delta_max = BTreeMap::new();
        let mut violation = BTreeMap::new();
        let mut roi = BTreeMap::new();
        for (i, name) in self.names.iter().enumerate() {
            d_min.insert(name.clone(), self.d_min[i]);
            delta_max.insert(name.clone(), self.delta_max[i]);
            violation.insert(name.clone(), self.violation[i]);
            let points = &self.roi_points[i];
            let stats = if points.is_empty() {
                None
            } else {
                let n = points.len() as f64;
                Some(RoiStats {
                    ticks: points.len(),
                    mean_distance: points.iter().map(|p| p.0).sum::<f64>() / n,
                    mean_rel_velocity: points.iter().map(|p| p.1).sum::<f64>() / n,
                    hull_area: hull_area(points),
                })
            };
            roi.insert(name.clone(), stats);
        }
        ScenarioMetrics {
            rmse: if self.ticks == 0 {
                0.0
            } else {
                (self.sq_err_sum / self.ticks as f64).sqrt()
            },
            d_min,
            delta_max,
            violation,
            roi,
            roi_rule: self.rule,
            ticks: self.ticks,
            nominal_ticks: self.nominal,
            relaxing_ticks: self.relaxing,
            emergency_ticks: self.emergency,
            joint_clamp_ticks: self.clamped,
            degenerate_roi_ticks: self.degenerate,
        }
    }
}

/// One-shot reduction of a whole log.
pub fn aggregate(
    records: &[StepRecord],
    obstacle_names: &[String],
    rule: RoiRule,
) -> Result<ScenarioMetrics> {
    let mut acc = MetricsAccumulator::new(obstacle_names, rule);
    for record in records {
        acc.push(record)?;
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::ObstacleStepInfo;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::time::Duration;

    fn record(
        t: f64,
        ee_position: Vector3<f64>,
        ee_velocity: Vector3<f64>,
        target: Vector3<f64>,
        obstacles: Vec<ObstacleStepInfo>,
        status: SafetyStatus,
    ) -> StepRecord {
        StepRecord {
            t,
            q: dvector![0.0],
            q_dot_safe: dvector![0.0],
            q_dot_perf: dvector![0.0],
            obstacles,
            status,
            solve_time: Duration::from_micros(10),
            joint_clamped: false,
            target,
            ee_position,
            ee_velocity,
        }
    }

    fn info(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        h_min: f64,
        clearance: f64,
        delta: f64,
    ) -> ObstacleStepInfo {
        ObstacleStepInfo {
            position,
            velocity,
            h_min,
            center_dist: clearance + 0.2,
            clearance,
            delta,
        }
    }

    #[test]
    fn relative_velocity_matches_hand_values() {
        let p = Vector3::new(1.0, 0.0, 0.0);
        let o = Vector3::zeros();
        // Moving straight at the obstacle: closing at 0.1.
        let v = relative_velocity(&p, &o, &Vector3::new(-0.1, 0.0, 0.0), &Vector3::zeros());
        assert_relative_eq!(v.unwrap(), -0.1, epsilon = 1e-12);
        // Moving straight away: +0.1.
        let v = relative_velocity(&p, &o, &Vector3::new(0.1, 0.0, 0.0), &Vector3::zeros());
        assert_relative_eq!(v.unwrap(), 0.1, epsilon = 1e-12);
        // Pure tangential motion: zero.
        let v = relative_velocity(&p, &o, &Vector3::new(0.0, 0.7, 0.0), &Vector3::zeros());
        assert_relative_eq!(v.unwrap(), 0.0, epsilon = 1e-12);
        // The obstacle's own motion counts: both moving at the same velocity
        // means no closing.
        let same = Vector3::new(0.3, -0.2, 0.1);
        let v = relative_velocity(&p, &o, &same, &same);
        assert_relative_eq!(v.unwrap(), 0.0, epsilon = 1e-12);
        // Coincident points: undefined.
        assert!(relative_velocity(&p, &p, &same, &Vector3::zeros()).is_none());
    }

    #[test]
    fn rmse_of_the_three_tick_fixture() {
        let recs: Vec<StepRecord> = [0.1, 0.2, 0.2]
            .iter()
            .enumerate()
            .map(|(i, e)| {
                record(
                    i as f64,
                    Vector3::new(*e, 0.0, 0.0),
                    Vector3::zeros(),
                    Vector3::zeros(),
                    vec![],
                    SafetyStatus::Nominal,
                )
            })
            .collect();
        assert_relative_eq!(rmse(&recs), 0.03_f64.sqrt(), epsilon = 1e-12);
        // Perfect tracking: zero.
        let perfect = vec![record(
            0.0,
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::zeros(),
            Vector3::new(1.0, 2.0, 3.0),
            vec![],
            SafetyStatus::Nominal,
        )];
        assert_eq!(rmse(&perfect), 0.0);
        assert_eq!(rmse(&[]), 0.0);
    }

    #[test]
    fn hull_area_of_a_unit_square_with_interior_noise() {
        let mut points = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..60 {
            points.push((rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)));
        }
        assert_relative_eq!(hull_area(&points), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hull_area_degenerates_to_zero() {
        assert_eq!(hull_area(&[]), 0.0);
        assert_eq!(hull_area(&[(1.0, 2.0)]), 0.0);
        assert_eq!(hull_area(&[(1.0, 2.0), (3.0, 4.0)]), 0.0);
        // Collinear points enclose nothing.
        let collinear: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert_relative_eq!(hull_area(&collinear), 0.0, epsilon = 1e-12);
        // Repeated copies of the same point likewise.
        assert_eq!(hull_area(&[(1.0, 1.0); 8]), 0.0);
    }

    #[test]
    fn hull_area_matches_the_gift_wrapping_oracle() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(3..60);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let fast = hull_area(&points);
            let slow = crate::reference::gift_wrap_hull_area(&points);
            assert_relative_eq!(fast, slow, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn aggregate_matches_the_hand_computed_fixture() {
        let names = vec!["red".to_string()];
        let obs_pos = Vector3::new(0.5, 0.0, 0.0);
        let recs = vec![
            // d = 0.5 (near), approaching at -0.2; clearance 0.30.
            record(
                0.0,
                Vector3::zeros(),
                Vector3::new(0.2, 0.0, 0.0),
                Vector3::zeros(),
                vec![info(obs_pos, Vector3::zeros(), 0.25, 0.30, 0.0)],
                SafetyStatus::Nominal,
            ),
            // d = 0.7 (far), receding at +0.1: outside an AND region, inside
            // an OR region only if approaching, which it is not -> excluded.
            record(
                1e-3,
                Vector3::new(-0.2, 0.0, 0.0),
                Vector3::new(-0.1, 0.0, 0.0),
                Vector3::new(0.0, 0.1, 0.0),
                vec![info(obs_pos, Vector3::zeros(), 0.45, 0.50, 0.0)],
                SafetyStatus::Nominal,
            ),
            // d = 0.4, approaching at -0.3, a relaxation tick with a barrier
            // violation; clearance 0.02.
            record(
                2e-3,
                Vector3::new(0.1, 0.0, 0.0),
                Vector3::new(0.3, 0.0, 0.0),
                Vector3::zeros(),
                vec![info(obs_pos, Vector3::zeros(), -0.03, 0.02, 0.15)],
                SafetyStatus::Relaxing,
            ),
        ];
        let m = aggregate(&recs, &names, RoiRule::NearOrApproaching).unwrap();
        assert_eq!(m.ticks, 3);
        assert_eq!(m.nominal_ticks, 2);
        assert_eq!(m.relaxing_ticks, 1);
        assert_eq!(m.emergency_ticks, 0);
        assert_relative_eq!(m.d_min["red"], 0.02, epsilon = 1e-12);
        assert_relative_eq!(m.delta_max["red"], 0.15, epsilon = 1e-12);
        assert!(m.violation["red"]);
        let roi = m.roi["red"].as_ref().unwrap();
        assert_eq!(roi.ticks, 2);
        assert_relative_eq!(roi.mean_distance, (0.5 + 0.4) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(roi.mean_rel_velocity, (-0.2 - 0.3) / 2.0, epsilon = 1e-12);
        // Two points enclose nothing.
        assert_eq!(roi.hull_area, 0.0);
        // RMSE over the three targets.
        let expected =
            ((0.0 + (0.2_f64.powi(2) + 0.1_f64.powi(2)) + 0.1_f64.powi(2)) / 3.0).sqrt();
        assert_relative_eq!(m.rmse, expected, epsilon = 1e-12);
    }

    #[test]
    fn and_rule_is_stricter_than_or_rule() {
        let names = vec!["red".to_string()];
        // Near but receding: OR admits, AND does not.
        let recs = vec![record(
            0.0,
            Vector3::zeros(),
            Vector3::new(-0.1, 0.0, 0.0),
            Vector3::zeros(),
            vec![info(
                Vector3::new(0.5, 0.0, 0.0),
                Vector3::zeros(),
                0.2,
                0.25,
                0.0,
            )],
            SafetyStatus::Nominal,
        )];
        let or = aggregate(&recs, &names, RoiRule::NearOrApproaching).unwrap();
        let and = aggregate(&recs, &names, RoiRule::NearAndApproaching).unwrap();
        assert!(or.roi["red"].is_some());
        assert!(and.roi["red"].is_none(), "empty region must be absent, not zeroed");
    }

    #[test]
    fn violation_requires_a_strictly_negative_barrier() {
        let names = vec!["red".to_string()];
        let tick = |h: f64| {
            record(
                0.0,
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros(),
                vec![info(Vector3::new(2.0, 0.0, 0.0), Vector3::zeros(), h, h + 0.05, 0.0)],
                SafetyStatus::Nominal,
            )
        };
        let at_zero = aggregate(&[tick(0.0)], &names, RoiRule::NearOrApproaching).unwrap();
        assert!(!at_zero.violation["red"]);
        let below = aggregate(&[tick(-1e-9)], &names, RoiRule::NearOrApproaching).unwrap();
        assert!(below.violation["red"]);
    }

    #[test]
    fn coincident_ticks_are_excluded_and_counted() {
        let names = vec!["red".to_string()];
        let p = Vector3::new(0.3, 0.0, 0.0);
        let recs = vec![record(
            0.0,
            p,
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::zeros(),
            vec![info(p, Vector3::zeros(), -0.4, -0.35, 0.0)],
            SafetyStatus::Relaxing,
        )];
        let m = aggregate(&recs, &names, RoiRule::NearOrApproaching).unwrap();
        assert_eq!(m.degenerate_roi_ticks, 1);
        assert!(m.roi["red"].is_none());
    }

    #[test]
    fn merging_partial_accumulators_equals_one_pass() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut rng = StdRng::seed_from_u64(17);
        let mut recs = Vec::new();
        for i in 0..40 {
            let ee = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            );
            let infos = (0..2)
                .map(|_| {
                    let h = rng.random_range(-0.2..0.5);
                    info(
                        Vector3::new(rng.random_range(-1.0..1.0), 0.2, 0.0),
                        Vector3::new(rng.random_range(-0.5..0.5), 0.0, 0.0),
                        h,
                        h + 0.05,
                        rng.random_range(0.0..0.3),
                    )
                })
                .collect();
            recs.push(record(
                i as f64 * 1e-3,
                ee,
                Vector3::new(rng.random_range(-1.0..1.0), 0.0, 0.0),
                Vector3::zeros(),
                infos,
                if i % 7 == 0 { SafetyStatus::Relaxing } else { SafetyStatus::Nominal },
            ));
        }
        let whole = aggregate(&recs, &names, RoiRule::NearOrApproaching).unwrap();
        for split in [1, 13, 20, 39] {
            let mut left = MetricsAccumulator::new(&names, RoiRule::NearOrApproaching);
            let mut right = MetricsAccumulator::new(&names, RoiRule::NearOrApproaching);
            for r in &recs[..split] {
                left.push(r).unwrap();
            }
            for r in &recs[split..] {
                right.push(r).unwrap();
            }
            left.merge(right).unwrap();
            let merged = left.finish();
            assert_eq!(merged.ticks, whole.ticks);
            assert_eq!(merged.violation, whole.violation);
            assert_eq!(merged.d_min, whole.d_min);
            assert_eq!(merged.delta_max, whole.delta_max);
            assert_relative_eq!(merged.rmse, whole.rmse, max_relative = 1e-12);
            for name in &names {
                match (&merged.roi[name], &whole.roi[name]) {
                    (Some(m), Some(w)) => {
                        assert_eq!(m.ticks, w.ticks);
                        assert_relative_eq!(m.mean_distance, w.mean_distance, max_relative = 1e-12);
                        assert_relative_eq!(
                            m.mean_rel_velocity,
                            w.mean_rel_velocity,
                            max_relative = 1e-12
                        );
                        assert_relative_eq!(m.hull_area, w.hull_area, max_relative = 1e-12);
                    }
                    (None, None) => {}
                    other => panic!("ROI presence diverged: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn mismatched_obstacle_counts_are_rejected() {
        let names = vec!["a".to_string()];
        let rec = record(
            0.0,
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::zeros(),
            vec![],
            SafetyStatus::Nominal,
        );
        let mut acc = MetricsAccumulator::new(&names, RoiRule::NearOrApproaching);
        assert!(acc.push(&rec).is_err());
        let other = MetricsAccumulator::new(&[], RoiRule::NearOrApproaching);
        assert!(acc.merge(other).is_err());
    }

    #[test]
    fn metrics_serialize_round_trip() {
        let names = vec!["red".to_string()];
        let recs = vec![record(
            0.0,
            Vector3::zeros(),
            Vector3::new(0.2, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            vec![info(
                Vector3::new(0.5, 0.0, 0.0),
                Vector3::zeros(),
                0.25,
                0.30,
                0.05,
            )],
            SafetyStatus::Relaxing,
        )];
        let m = aggregate(&recs, &names, RoiRule::NearAndApproaching).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: ScenarioMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
