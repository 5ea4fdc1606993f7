//! Temporary preset probe; not part of the deliverable.

use cbf_core::scenario::{config_from_value, preset, run_scenario};
use serde_json::json;

fn main() {
    // Criterion-3 shape: easy preset, strict mode, 30 s.
    let easy_strict = config_from_value(json!({
        "preset": "easy",
        "filter": { "mode": "strict" },
    }))
    .unwrap();
    let t0 = std::time::Instant::now();
    match run_scenario(&easy_strict, Some(0)) {
        Ok(run) => {
            let min_h = run
                .records
                .iter()
                .flat_map(|r| r.obstacles.iter().map(|o| o.h_min))
                .fold(f64::INFINITY, f64::min);
            println!(
                "easy/strict seed0: min_h={:.6} emergencies={} rmse={:.4} relaxing={} \
                 clamp={} wall={:?}",
                min_h,
                run.metrics.emergency_ticks,
                run.metrics.rmse,
                run.metrics.relaxing_ticks,
                run.metrics.joint_clamp_ticks,
                t0.elapsed()
            );
            if let Some(first) = run
                .records
                .iter()
                .position(|r| r.obstacles.iter().any(|o| o.h_min < -1e-3))
            {
                let world = cbf_core::scenario::build_world(&easy_strict, Some(0)).unwrap();
                let chain = world.chain();
                for r in &run.records[first.saturating_sub(3)..=(first + 1).min(run.records.len() - 1)] {
                    let at_limit: Vec<usize> = (0..r.q.len())
                        .filter(|&j| {
                            (r.q[j] - chain.joint_lower()[j]).abs() < 1e-9
                                || (r.q[j] - chain.joint_upper()[j]).abs() < 1e-9
                        })
                        .collect();
                    let hs: Vec<String> = r
                        .obstacles
                        .iter()
                        .map(|o| format!("{:+.5}", o.h_min))
                        .collect();
                    println!(
                        "  t={:.3} status={:?} h={:?} clamped={} at_limit={:?} |qd|={:.3}",
                        r.t, r.status, hs, r.joint_clamped, at_limit, r.q_dot_safe.norm()
                    );
                }
            }
        }
        Err(e) => println!("easy/strict seed0: ERROR {e}"),
    }

    // Criterion-7 shape: hard preset, relaxed, ten seeds.
    for seed in 0..10 {
        let hard = preset("hard").unwrap();
        let t0 = std::time::Instant::now();
        match run_scenario(&hard, Some(seed)) {
            Ok(run) => {
                let first_emergency = run
                    .records
                    .iter()
                    .find(|r| r.status == cbf_core::filter::SafetyStatus::Emergency)
                    .map(|r| r.t);
                println!(
                    "hard/relaxed seed{}: d_min(red)={:.4} viol(red)={} clamp={} relax={} \
                     emerg={} first_emerg={:?} rmse={:.4} wall={:?}",
                    seed,
                    run.metrics.d_min["red"],
                    run.metrics.violation["red"],
                    run.metrics.joint_clamp_ticks,
                    run.metrics.relaxing_ticks,
                    run.metrics.emergency_ticks,
                    first_emergency,
                    run.metrics.rmse,
                    t0.elapsed()
                );
                if run.metrics.violation["red"] {
                    // Post-mortem: spawn geometry, column proximity over
                    // time, and the binding rows at the first emergency.
                    let world = cbf_core::scenario::build_world(&hard, Some(seed)).unwrap();
                    let chain = world.chain();
                    let spawn = &run.records[0].obstacles[0].position;
                    let first_viol = run
                        .records
                        .iter()
                        .find(|r| r.obstacles[0].h_min < 0.0)
                        .map(|r| r.t);
                    let min_red_axis = run
                        .records
                        .iter()
                        .map(|r| r.obstacles[0].position.xy().norm())
                        .fold(f64::INFINITY, f64::min);
                    let min_ee_axis = run
                        .records
                        .iter()
                        .map(|r| r.ee_position.xy().norm())
                        .fold(f64::INFINITY, f64::min);
                    println!(
                        "    red spawn=({:+.2},{:+.2},{:+.2}) axis_dist={:.3} | \
                         min axis dist: red={:.3} ee={:.3} | first_viol={:?}",
                        spawn.x,
                        spawn.y,
                        spawn.z,
                        spawn.xy().norm(),
                        min_red_axis,
                        min_ee_axis,
                        first_viol
                    );
                    if let Some(first) = run
                        .records
                        .iter()
                        .position(|r| r.status == cbf_core::filter::SafetyStatus::Emergency)
                    {
                        let r = &run.records[first];
                        let red = &r.obstacles[0];
                        println!(
                            "    at first emerg t={:.3}: red=({:+.2},{:+.2},{:+.2}) \
                             ee=({:+.2},{:+.2},{:+.2}) red_axis={:.3} ee_axis={:.3}",
                            r.t,
                            red.position.x,
                            red.position.y,
                            red.position.z,
                            r.ee_position.x,
                            r.ee_position.y,
                            r.ee_position.z,
                            red.position.xy().norm(),
                            r.ee_position.xy().norm()
                        );
                        let kin = chain.point_kinematics(&r.q).unwrap();
                        let margin = 0.05;
                        // Same arithmetic as the filter's limit brake (tau 0.5 s).
                        let mut lo = chain.vel_lower().clone();
                        let mut hi = chain.vel_upper().clone();
                        for j in 0..chain.n_joints() {
                            lo[j] = lo[j].max(((chain.joint_lower()[j] - r.q[j]) / 0.5).min(0.0));
                            hi[j] = hi[j].min(((chain.joint_upper()[j] - r.q[j]) / 0.5).max(0.0));
                        }
                        let box_str: Vec<String> = (0..r.q.len())
                            .map(|j| format!("[{:+.2},{:+.2}]", lo[j], hi[j]))
                            .collect();
                        println!("      box: {}", box_str.join(" "));
                        for (pi, pk) in kin.iter().enumerate() {
                            let diff = pk.position - red.position;
                            let dist = diff.norm();
                            let radius = chain.control_points()[pi].radius;
                            let h = dist - radius - 0.06 - margin;
                            if h < 0.12 {
                                let n = diff / dist;
                                let row = pk.jacobian.transpose() * n;
                                // Best achievable row dot within the box vs the
                                // required right-hand side for this row alone.
                                let best: f64 = (0..row.len())
                                    .map(|j| {
                                        if row[j] >= 0.0 { row[j] * hi[j] } else { row[j] * lo[j] }
                                    })
                                    .sum();
                                let need = -1.0 * h + n.dot(&red.velocity);
                                println!(
                                    "      red pt{pi} h={:+.4} |row|={:.3} n.v_obs={:+.4} \
                                     need={:+.4} best={:+.4} row={:?}",
                                    h,
                                    row.norm(),
                                    n.dot(&red.velocity),
                                    need,
                                    best,
                                    row.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
                                );
                            }
                        }
                    }
                }
            }
            Err(e) => println!("hard/relaxed seed{seed}: ERROR {e}"),
        }
    }

    // Criterion-8 shape: squeeze cap family.
    for name in ["squeeze2d_cap0", "squeeze2d_cap03", "squeeze2d_cap06", "squeeze2d"] {
        let config = preset(name).unwrap();
        let t0 = std::time::Instant::now();
        match run_scenario(&config, None) {
            Ok(run) => {
                println!(
                    "{name}: d_min(red)={:.4} d_min(green)={:.4} dmax(green)={:.3} \
                     relax={} emerg={} rmse={:.4} wall={:?}",
                    run.metrics.d_min["red"],
                    run.metrics.d_min["green"],
                    run.metrics.delta_max["green"],
                    run.metrics.relaxing_ticks,
                    run.metrics.emergency_ticks,
                    run.metrics.rmse,
                    t0.elapsed()
                );
            }
            Err(e) => println!("{name}: ERROR {e}"),
        }
    }

    // Criterion-9 shape: obstacle-free decay toward a held target, planar2.
    let decay = config_from_value(json!({
        "preset": "squeeze2d",
        "obstacles": [],
        "trajectory": { "type": "hold", "position": [0.61, 0.21, 0.0] },
        "filter": { "damping": 1e-6, "tracking_gain": 2.0, "posture_gain": 0.0 },
        "sim": { "duration": 3.0 },
    }))
    .unwrap();
    match run_scenario(&decay, None) {
        Ok(run) => {
            let e0 = (run.records[0].ee_position - run.records[0].target).norm();
            let mut worst: f64 = 0.0;
            for r in &run.records {
                let e = (r.ee_position - r.target).norm();
                let bound = 1.05 * (-2.0 * r.t).exp() * e0;
                if e > bound {
                    worst = worst.max(e / bound);
                }
            }
            println!("decay planar2: e0={e0:.4} worst_ratio_over_bound={worst:.4} (0 = inside)");
        }
        Err(e) => println!("decay: ERROR {e}"),
    }
}
