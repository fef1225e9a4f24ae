//! Acceptance run: one PASS or FAIL line per criterion, non-zero exit on
//! any failure.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reachguard::confidence::ConfidenceBelief;
use reachguard::dynamics::ControlInput;
use reachguard::prediction::{
    apply_hard_caps, bounds_from_gamma, endpoints, gamma_half_width, scale_covariance, ControlBoundsEndpoints, Cov2,
    GaussianControlPrediction,
};
use reachguard::reachability::{
    family_precompute, family_query, frt_set, project_positions, solve_frt, Axis, FrtQueryKey, GridSpec,
    InitialSetMargins, Lattice, SolverSettings,
};
use reachguard::sim::{run, Params, Scenario, SimLog};

use common::{drive, gaussian_mass, hull_fits, mc_containment, random_key};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Confidence-on and confidence-off logs of one bundled scenario.
struct Bundled {
    name: &'static str,
    scenario: Scenario,
    on: SimLog,
    off: SimLog,
}

fn bundled() -> Result<Vec<Bundled>, String> {
    ["uturn", "stop_sign"]
        .into_iter()
        .map(|name| {
            let scenario = Scenario::load(&scenario_path(&format!("{name}.json"))).map_err(|e| e.to_string())?;
            let on = run(&scenario, true, None).map_err(|e| e.to_string())?;
            let off = run(&scenario, false, None).map_err(|e| e.to_string())?;
            Ok(Bundled {
                name,
                scenario,
                on,
                off,
            })
        })
        .collect()
}

fn detect_step(log: &SimLog) -> Option<usize> {
    log.steps.iter().find(|r| r.detection).map(|r| r.step)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let grid = GridSpec::default();
    let settings = SolverSettings::default();
    let horizon = 3.0;
    let tol = 2.0 * grid.max_spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut accepted = 0;
    let mut rejected = 0;
    let mut total = 0;
    let mut worst = f64::NEG_INFINITY;
    while accepted < 5 {
        let key = random_key(&mut rng);
        if !hull_fits(&key, &grid, &settings.margins, horizon) {
            rejected += 1;
            continue;
        }
        let vf = match solve_frt(key.v_start, &key.endpoints, &grid, horizon, &settings) {
            Ok(vf) => vf,
            Err(reachguard::Error::DomainTooSmall { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        let report = mc_containment(&vf, 10_000, 0xc0ff_ee00 + accepted as u64, 0.1, tol);
        worst = worst.max(report.worst);
        total += report.trajectories;
        ensure(
            report.violations == 0,
            format!(
                "config {accepted} (v_start {:.2}): {} of {} checks above V = {tol:.3}, worst {:.3}",
                key.v_start, report.violations, report.checks, report.worst
            ),
        )?;
        accepted += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs <= 900.0, format!("took {secs:.0} s"))?;
    Ok(format!(
        "5 configs ({rejected} redrawn off-grid), {total} trajectories, 0 violations, max V {worst:.3} <= {tol:.3}, {secs:.0} s"
    ))
}

fn criterion_2() -> Outcome {
    let grid = GridSpec::default();
    let settings = SolverSettings::default();
    let n = 6;
    let pred = GaussianControlPrediction::new(0.5, vec![[0.1, 0.5]; n], vec![Cov2::diag(0.04, 1.0).unwrap(); n])
        .map_err(|e| e.to_string())?;
    let mut masks = Vec::new();
    for beta in [0.2, 0.5, 1.0] {
        let ep = scale_covariance(&pred, beta)
            .and_then(|p| bounds_from_gamma(&p, Params::default().gamma))
            .and_then(|b| endpoints(&apply_hard_caps(&b)))
            .map_err(|e| e.to_string())?;
        let vf = solve_frt(5.0, &ep, &grid, pred.horizon(), &settings).map_err(|e| e.to_string())?;
        masks.push(frt_set(&vf, 0.0).map_err(|e| e.to_string())?);
    }
    let outer = masks[1].excess_over(&masks[0]);
    let inner = masks[2].excess_over(&masks[1]);
    ensure(
        outer == 0 && inner == 0,
        format!("{outer} cells of beta 0.5 outside beta 0.2, {inner} cells of beta 1 outside beta 0.5"),
    )?;
    Ok(format!(
        "cells {} >= {} >= {}, 0 violating",
        masks[0].count(),
        masks[1].count(),
        masks[2].count()
    ))
}

fn criterion_3() -> Outcome {
    let grid = GridSpec::default();
    let settings = SolverSettings::default();
    let horizon = 3.0;

    let vf = solve_frt(0.0, &ControlBoundsEndpoints::zero(), &grid, horizon, &settings).map_err(|e| e.to_string())?;
    let iv = grid.v.nearest(0.0).ok_or("v = 0 is off the grid")?;
    ensure(grid.v.coord(iv).abs() < 1e-12, "no speed node at 0".into())?;
    let mut mismatched = 0;
    let mut inside = 0;
    for flat in 0..grid.len() {
        if grid.unravel(flat)[3] != iv {
            continue;
        }
        let tube = vf.values[flat] < 0.0;
        let seed = vf.l_values[flat] < 0.0;
        inside += seed as usize;
        mismatched += (tube != seed) as usize;
    }
    ensure(
        mismatched == 0,
        format!("{mismatched} nodes on the v = 0 slice differ from l < 0"),
    )?;
    ensure(inside > 0, "empty initial set".into())?;

    let vf = solve_frt(5.0, &ControlBoundsEndpoints::zero(), &grid, horizon, &settings).map_err(|e| e.to_string())?;
    let k = project_positions(&frt_set(&vf, 0.0).map_err(|e| e.to_string())?);
    let cells = k.occupied_centers();
    let mut missing = Vec::new();
    for i in 0..=150 {
        let x = 0.1 * i as f64;
        if !cells.iter().any(|c| (c[0] - x).abs() <= k.cell && c[1].abs() <= k.cell) {
            missing.push(x);
        }
    }
    ensure(missing.is_empty(), format!("segment points not covered: {missing:?}"))?;
    let wide = cells.iter().filter(|c| c[1].abs() > 2.0 + k.cell).count();
    ensure(wide == 0, format!("{wide} cells with |y| > 2 m + one cell"))?;
    let max_y = cells.iter().map(|c| c[1].abs()).fold(0.0, f64::max);
    Ok(format!(
        "rest tube equals l < 0 on the v = 0 slice ({inside} nodes); straight tube covers x in [0, 15], max |y| {max_y:.2} m"
    ))
}

fn criterion_4() -> Outcome {
    let prior = ConfidenceBelief::new(0.2, 0.05).map_err(|e| e.to_string())?;
    let mu = [0.3, -1.2];
    let sigma = Cov2::diag(0.04, 1.0).map_err(|e| e.to_string())?;
    let post = prior
        .bayes_update(&ControlInput::new(mu[0], mu[1]), &mu, &sigma)
        .map_err(|e| e.to_string())?;
    let beta = post.effective_beta();
    ensure(
        (post.b_high - 1.0 / 1.2).abs() < 1e-9,
        format!("posterior {} vs {}", post.b_high, 1.0 / 1.2),
    )?;
    ensure((beta - 2.6 / 3.0).abs() < 1e-9, format!("effective beta {beta}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut b = prior;
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let mu = [rng.gen_range(-2.0..2.0), rng.gen_range(-10.0..10.0)];
        let cov = Cov2::diag(rng.gen_range(0.01..2.0), rng.gen_range(0.01..20.0)).unwrap();
        let u = ControlInput::new(rng.gen_range(-2.0..2.0), rng.gen_range(-10.0..10.0));
        b = b.bayes_update(&u, &mu, &cov).map_err(|e| e.to_string())?;
        if rng.gen_bool(0.5) {
            b = b.epsilon_static();
        }
        let ok = b.b_low >= 0.0 && b.b_high >= 0.0 && b.b_low.is_finite() && b.b_high.is_finite();
        ensure(ok, format!("left the simplex at {b:?}"))?;
        worst = worst.max((b.b_low + b.b_high - 1.0).abs());
    }
    ensure(worst < 1e-12, format!("sum drifted by {worst:e}"))?;
    Ok(format!(
        "posterior {:.10}, beta {:.10}, 10^6 updates with |sum - 1| <= {worst:.1e}",
        post.b_high, beta
    ))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mu = [rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)];
        let sd = [rng.gen_range(0.05..1.0), rng.gen_range(0.1..3.0)];
        let beta = rng.gen_range(0.2..=1.0);
        let gamma = rng.gen_range(0.05..0.99);
        let pred =
            GaussianControlPrediction::new(0.5, vec![mu], vec![Cov2::diag(sd[0] * sd[0], sd[1] * sd[1]).unwrap()])
                .map_err(|e| e.to_string())?;
        let b = scale_covariance(&pred, beta)
            .and_then(|p| bounds_from_gamma(&p, gamma))
            .map_err(|e| e.to_string())?;
        for i in 0..2 {
            let (lo, hi) = (b.lower[0][i], b.upper[0][i]);
            ensure(
                ((lo + hi) / 2.0 - mu[i]).abs() < 1e-12,
                format!("interval [{lo}, {hi}] not centred on {}", mu[i]),
            )?;
            let mass = gaussian_mass(sd[i] / beta.sqrt(), (hi - lo) / 2.0);
            worst = worst.max((mass - gamma).abs());
        }
    }
    ensure(worst < 1e-6, format!("quadrature off by {worst:e}"))?;
    let d = gamma_half_width(0.1);
    ensure((d - 0.12566).abs() < 1e-4, format!("delta(0.1, 1) = {d}"))?;
    Ok(format!(
        "200 marginals within {worst:.1e} of gamma, delta(0.1, 1) = {d:.5}"
    ))
}

fn metric_line(log: &SimLog) -> String {
    let m = &log.summary;
    format!(
        "detect {:.1} m, stop {:+.2} m, braking {:.2} s, collision {}",
        m.detection_distance.unwrap_or(f64::NAN),
        m.stop_position.unwrap_or(f64::NAN),
        m.braking_duration.unwrap_or(f64::NAN),
        m.collision
    )
}

fn criterion_6(runs: &[Bundled]) -> Outcome {
    let early = drive(-19.5, 23.0, 0, 0.5, 10.0);
    ensure(
        (early.overshoot - 6.9).abs() <= 0.15,
        format!("overshoot {:.3} m after detection at 19.5 m", early.overshoot),
    )?;
    ensure(
        (early.braking_duration - 2.3).abs() <= 0.25,
        format!("braking {:.3} s after detection at 19.5 m", early.braking_duration),
    )?;
    let late = drive(-8.0, 23.0, 0, 0.5, 10.0);
    ensure(
        (late.overshoot - 18.4).abs() <= 0.15,
        format!("overshoot {:.3} m after detection at 8 m", late.overshoot),
    )?;

    let b = runs.iter().find(|b| b.name == "stop_sign").ok_or("no stop_sign run")?;
    for (log, want) in [(&b.on, 19.5), (&b.off, 8.0)] {
        let m = &log.summary;
        let seen = m.detection_distance.unwrap_or(f64::NAN);
        let a_max = b.scenario.params.a_max;
        let v0 = b.scenario.ego.state.v;
        let expected = v0 * v0 / (2.0 * a_max) - seen;
        let stop = m.stop_position.unwrap_or(f64::NAN);
        ensure(
            (seen - want).abs() < 1e-6 && (stop - expected).abs() < 1e-6,
            format!("bundled stop_sign: {}", metric_line(log)),
        )?;
    }
    Ok(format!(
        "19.5 m: overshoot {:.2} m in {:.2} s; 8 m: overshoot {:.2} m; bundled on: {}; off: {}",
        early.overshoot,
        early.braking_duration,
        late.overshoot,
        metric_line(&b.on),
        metric_line(&b.off)
    ))
}

fn criterion_7(runs: &[Bundled]) -> Outcome {
    let early = drive(-39.0, 26.0, 0, 0.5, 10.0);
    ensure(
        (early.acceleration.abs() - 8.67).abs() <= 0.1,
        format!("|a| = {:.3} after detection at 39 m", early.acceleration.abs()),
    )?;
    ensure(
        early.overshoot <= 1e-9,
        format!("stopped {:.3} m past the line", early.overshoot),
    )?;
    let late = drive(-26.0, 26.0, 0, 0.5, 10.0);
    ensure(
        late.acceleration == -10.0,
        format!("a = {} after detection at 26 m", late.acceleration),
    )?;
    ensure(
        (late.braking_duration - 2.6).abs() <= 0.25,
        format!("braking {:.3} s after detection at 26 m", late.braking_duration),
    )?;
    ensure(
        late.overshoot > 0.0,
        format!("stopped {:.3} m before the line", -late.overshoot),
    )?;

    let b = runs.iter().find(|b| b.name == "uturn").ok_or("no uturn run")?;
    let on = &b.on.summary;
    let off = &b.off.summary;
    ensure(
        on.detection_distance.is_some_and(|d| (d - 39.0).abs() < 1e-6) && on.stop_position.is_some_and(|s| s <= 1e-9),
        format!("bundled uturn on: {}", metric_line(&b.on)),
    )?;
    ensure(
        off.detection_distance.is_some_and(|d| (d - 26.0).abs() < 1e-6)
            && off.stop_position.is_some_and(|s| s > 0.0)
            && off.collision,
        format!("bundled uturn off: {}", metric_line(&b.off)),
    )?;
    Ok(format!(
        "39 m: a = {:.2}, stop {:+.2} m; 26 m: a = {:.0} for {:.2} s, stop {:+.2} m; bundled off: {}",
        early.acceleration,
        early.overshoot,
        late.acceleration,
        late.braking_duration,
        late.overshoot,
        metric_line(&b.off)
    ))
}

fn criterion_8(runs: &[Bundled]) -> Outcome {
    let mut lines = Vec::new();
    for b in runs {
        let on = detect_step(&b.on).ok_or(format!("{}: confidence-on never detects", b.name))?;
        let off = detect_step(&b.off).map_or(usize::MAX, |s| s);
        ensure(on < off, format!("{}: on detects at step {on}, off at {off}", b.name))?;
        ensure(!b.on.summary.collision, format!("{}: confidence-on collides", b.name))?;
        ensure(
            b.off.summary.collision,
            format!("{}: confidence-off avoids collision", b.name),
        )?;
        let again_on = run(&b.scenario, true, None).map_err(|e| e.to_string())?;
        let again_off = run(&b.scenario, false, None).map_err(|e| e.to_string())?;
        ensure(
            again_on == b.on && again_off == b.off,
            format!("{}: rerun differs", b.name),
        )?;
        lines.push(format!(
            "{} on step {on} off step {off}, min sep {:.2} / {:.2} m",
            b.name, b.on.summary.min_separation, b.off.summary.min_separation
        ));
    }
    Ok(format!("{}; reruns identical", lines.join("; ")))
}

fn criterion_9() -> Outcome {
    let grid = GridSpec {
        x: Axis::new(-10.0, 30.0, 41),
        y: Axis::new(-20.0, 20.0, 41),
        theta: Axis::heading(40),
        v: Axis::new(-6.0, 16.0, 45),
    };
    let settings = SolverSettings {
        margins: InitialSetMargins::default().at_least_for(&grid),
        ..SolverSettings::default()
    };
    let horizon = 3.0;
    let lattice = Lattice {
        v_start: vec![2.0, 4.0],
        u_min_start: [vec![-0.4, -0.2], vec![-2.0, -1.0]],
        u_max_start: [vec![0.2, 0.4], vec![1.0, 2.0]],
        u_min_end: [vec![-0.4], vec![-2.0]],
        u_max_end: [vec![0.4], vec![2.0]],
    };
    let family = family_precompute(&lattice, &grid, horizon, &settings).map_err(|e| e.to_string())?;

    let indices = lattice.indices();
    for idx in &indices {
        let key = lattice.key_at(idx);
        let served = family_query(&family, &key).map_err(|e| e.to_string())?;
        let direct = solve_frt(
            key.v_start,
            &key.endpoints,
            &grid,
            horizon,
            &lattice.entry_settings(idx, &settings),
        )
        .map_err(|e| e.to_string())?;
        let same = served.values.len() == direct.values.len()
            && served
                .values
                .iter()
                .zip(&direct.values)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, format!("lattice key {idx:?} differs from its direct solve"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut excess_total = 0;
    let mut extra = 0usize;
    for i in 0..20 {
        let key = FrtQueryKey {
            v_start: rng.gen_range(2.05..3.95),
            endpoints: ControlBoundsEndpoints {
                u_min_start: [rng.gen_range(-0.4..-0.05), rng.gen_range(-2.0..-0.5)],
                u_max_start: [rng.gen_range(0.05..0.4), rng.gen_range(0.5..2.0)],
                u_min_end: [rng.gen_range(-0.4..-0.05), rng.gen_range(-2.0..-0.5)],
                u_max_end: [rng.gen_range(0.05..0.4), rng.gen_range(0.5..2.0)],
            },
        };
        let served = family_query(&family, &key).map_err(|e| e.to_string())?;
        let direct = solve_frt(key.v_start, &key.endpoints, &grid, horizon, &settings).map_err(|e| e.to_string())?;
        let s = frt_set(&served, 0.0).map_err(|e| e.to_string())?;
        let d = frt_set(&direct, 0.0).map_err(|e| e.to_string())?;
        let missing = d.excess_over(&s);
        ensure(
            missing == 0,
            format!("off-lattice key {i}: {missing} direct cells missing"),
        )?;
        excess_total += missing;
        extra += s.excess_over(&d);
    }
    Ok(format!(
        "{} lattice keys bit-identical; 20 off-lattice keys, {excess_total} missing cells, {extra} extra",
        indices.len()
    ))
}

fn report(n: usize, outcome: Outcome, failed: &mut bool) {
    match outcome {
        Ok(detail) => println!("criterion {n}: PASS  {detail}"),
        Err(detail) => {
            *failed = true;
            println!("criterion {n}: FAIL  {detail}");
        }
    }
}

fn main() {
    let mut failed = false;
    report(1, criterion_1(), &mut failed);
    report(2, criterion_2(), &mut failed);
    report(3, criterion_3(), &mut failed);
    report(4, criterion_4(), &mut failed);
    report(5, criterion_5(), &mut failed);
    match bundled() {
        Ok(runs) => {
            report(6, criterion_6(&runs), &mut failed);
            report(7, criterion_7(&runs), &mut failed);
            report(8, criterion_8(&runs), &mut failed);
        }
        Err(e) => {
            for n in 6..=8 {
                report(n, Err(format!("bundled scenarios: {e}")), &mut failed);
            }
        }
    }
    report(9, criterion_9(), &mut failed);
    if failed {
        std::process::exit(1);
    }
}
