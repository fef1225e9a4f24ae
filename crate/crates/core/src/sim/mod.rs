//! Closed-loop scenario runner.
//!
//! Each macro-step: update the confidence belief from the human's last
//! action, scale and trim the current prediction, look up the tube, place its
//! position footprint in the world and dilate it, check the ego's nominal path
//! against it, plan, then advance both agents.

mod export;
mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use export::{belief_csv, frame_svg, log_csv, occupancy_svg};
pub use scenario::{parse_json, EgoSpec, HumanSpec, Lane, Params, PredictorSpec, Scenario, ScriptedPrediction};

use crate::confidence::ConfidenceBelief;
use crate::dynamics::{self, AgentState, ControlInput, Trajectory};
use crate::error::{Error, Result};
use crate::prediction::{
    apply_hard_caps, bounds_from_gamma, endpoints, interp_bounds, scale_covariance, ControlBoundsEndpoints,
    GaussianControlPrediction,
};
use crate::reachability::{
    frt_set, project_positions, solve_frt, FrtQueryKey, SolverSettings, TubeCache, ValueFunction,
};
use crate::safety::{
    collision_check, minkowski_dilate, plan, world_occupancy, CollisionSet, OccupancyGrid2D, PlanCommand,
};

/// Integration sub-step for both agents, s.
pub const SUBSTEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// `[b_low, b_high]`; absent when confidence is off.
    pub belief: Option<[f64; 2]>,
    pub beta: f64,
    pub endpoints: ControlBoundsEndpoints,
    pub key: FrtQueryKey,
    /// Occupied cells of the world-frame position footprint.
    pub tube_cells: usize,
    pub detection: bool,
    /// Offset of the first nominal-path sample inside the collision set, s.
    pub hit_time: Option<f64>,
    pub command: PlanCommand,
    pub ego: AgentState,
    pub human: AgentState,
    pub dist_to_line: f64,
    /// Smallest ego-human distance over this step's sub-steps, m.
    pub separation: f64,
    /// Whether the human's scripted controls over the horizon stayed inside
    /// the bounds used for this tube, so containment was checked.
    pub containment_checked: bool,
    pub containment_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub detection_distance: Option<f64>,
    pub detection_time: Option<f64>,
    pub braking_duration: Option<f64>,
    /// Ego station minus stop-line station once stopped; positive is past the line.
    pub stop_position: Option<f64>,
    pub min_separation: f64,
    pub collision: bool,
    pub containment_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: String,
    pub use_confidence: bool,
    pub dt: f64,
    pub r_col: f64,
    pub steps: Vec<StepRecord>,
    pub final_ego: AgentState,
    pub final_human: AgentState,
    /// Time at which the ego came to rest, s.
    pub stop_time: Option<f64>,
    pub final_dist_to_line: f64,
    pub summary: Metrics,
}

/// Everything drawn for one step, handed to [`run_with`] observers.
pub struct Frame<'a> {
    pub record: &'a StepRecord,
    pub footprint: &'a OccupancyGrid2D,
    pub collision_set: &'a CollisionSet,
    pub nominal: &'a Trajectory,
    pub lane: &'a Lane,
    pub stop_line: f64,
}

/// Solver settings a scenario asks for.
pub fn solver_settings(scenario: &Scenario) -> SolverSettings {
    let mut s = SolverSettings::default();
    if let Some(m) = scenario.margins {
        s.margins = m;
    }
    s
}

/// Tube cache built from the scenario's grid, lattice and margins.
pub fn tube_cache(scenario: &Scenario, capacity: usize) -> Result<TubeCache> {
    TubeCache::new(
        scenario.lattice(),
        scenario.grid(),
        scenario.params.horizon,
        solver_settings(scenario),
        capacity,
    )
}

pub fn run(scenario: &Scenario, use_confidence: bool, cache: Option<&TubeCache>) -> Result<SimLog> {
    run_with(scenario, use_confidence, cache, |_| {})
}

/// Advance the ego for `dt` at constant acceleration `a` along its heading,
/// clamping at rest. Returns the new state and, if it stopped during this
/// call, the offset at which it did.
pub fn ego_advance(state: &AgentState, a: f64, dt: f64) -> Result<(AgentState, Option<f64>)> {
    let n = dynamics::substeps(dt, SUBSTEP)?;
    let h = dt / n as f64;
    let mut s = *state;
    let mut stopped = None;
    for i in 0..n {
        let (next, at) = ego_substep(&s, a, h)?;
        s = next;
        if stopped.is_none() {
            stopped = at.map(|t| i as f64 * h + t);
        }
    }
    Ok((s, stopped))
}

fn ego_substep(s: &AgentState, a: f64, h: f64) -> Result<(AgentState, Option<f64>)> {
    if s.v <= 0.0 && a <= 0.0 {
        return Ok((AgentState { v: 0.0, ..*s }, None));
    }
    let u = ControlInput::new(0.0, a);
    if a < 0.0 && s.v + a * h <= 0.0 {
        let t_stop = s.v / -a;
        let mut next = if t_stop > 0.0 {
            dynamics::step(s, &u, t_stop)?
        } else {
            *s
        };
        next.v = 0.0;
        return Ok((next, Some(t_stop)));
    }
    Ok((dynamics::step(s, &u, h)?, None))
}

fn nominal_path(ego: &AgentState, horizon: f64) -> Result<Trajectory> {
    let n = dynamics::substeps(horizon, SUBSTEP)?;
    dynamics::rollout(ego, &vec![ControlInput::ZERO; n], horizon / n as f64)
}

/// Human state expressed in the frame the tube was solved in: the human's
/// position at the origin, heading zero.
fn to_local(origin: &AgentState, s: &AgentState) -> [f64; 4] {
    let (sin, cos) = origin.theta.sin_cos();
    let dx = s.x - origin.x;
    let dy = s.y - origin.y;
    [
        cos * dx + sin * dy,
        -sin * dx + cos * dy,
        dynamics::wrap_angle(s.theta - origin.theta),
        s.v,
    ]
}

/// Roll the scripted controls forward from `step` over the horizon. Counts
/// realized sub-states outside the tube, provided every control stays inside
/// the bounds the tube was solved for; `None` when it does not.
fn containment(
    scenario: &Scenario,
    step: usize,
    human: &AgentState,
    ep: &ControlBoundsEndpoints,
    vf: &ValueFunction,
) -> Result<Option<usize>> {
    let horizon = scenario.params.horizon;
    let dt = scenario.dt;
    let macro_steps = ((horizon / dt) - 1e-9).ceil() as usize;
    let tol = 2.0 * vf.grid.max_spacing();
    let n = dynamics::substeps(dt, SUBSTEP)?;
    let h = dt / n as f64;
    let mut s = *human;
    let mut violations = 0;
    for j in 0..macro_steps {
        let Some(u) = scenario.human.controls.get(step + j) else {
            break;
        };
        let t0 = j as f64 * dt;
        let t1 = ((j + 1) as f64 * dt).min(horizon);
        for tau in [t0, t1] {
            let (lo, hi) = interp_bounds(ep, tau, 0.0, horizon)?;
            let inside = (0..2).all(|i| u[i] >= lo[i] - 1e-12 && u[i] <= hi[i] + 1e-12);
            if !inside {
                return Ok(None);
            }
        }
        let u = ControlInput::new(u[0], u[1]);
        for i in 0..n {
            if t0 + i as f64 * h >= horizon - 1e-9 {
                break;
            }
            s = dynamics::step(&s, &u, h)?;
            match vf.interpolate(to_local(human, &s)) {
                Some(v) if v <= tol => {}
                _ => violations += 1,
            }
        }
    }
    Ok(Some(violations))
}

fn tube_for(cache: &TubeCache, key: &FrtQueryKey) -> Result<Arc<ValueFunction>> {
    match cache.query(key) {
        Err(Error::OutOfRange(why)) => {
            log::debug!("{why}; solving directly");
            solve_frt(
                key.v_start,
                &key.endpoints,
                cache.grid(),
                cache.horizon(),
                cache.settings(),
            )
            .map(Arc::new)
        }
        other => other,
    }
}

/// [`run`], calling `observe` once per macro-step after planning.
pub fn run_with<F>(
    scenario: &Scenario,
    use_confidence: bool,
    cache: Option<&TubeCache>,
    mut observe: F,
) -> Result<SimLog>
where
    F: FnMut(&Frame<'_>),
{
    scenario.validate()?;
    let owned;
    let cache = match cache {
        Some(c) => c,
        None => {
            owned = tube_cache(scenario, 64)?;
            &owned
        }
    };
    if (cache.horizon() - scenario.params.horizon).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "tube cache horizon {} differs from the scenario horizon {}",
            cache.horizon(),
            scenario.params.horizon
        )));
    }
    let p = scenario.params;
    let source = scenario.prediction_source()?;
    let lane = scenario.ego.lane;
    let dist = |s: &AgentState| scenario.ego.stop_line - lane.station([s.x, s.y]);

    let mut belief = ConfidenceBelief::new(p.beta_low, p.epsilon)?;
    let mut previous: Option<GaussianControlPrediction> = None;
    let mut ego = scenario.ego.state;
    let mut human = scenario.human.state;
    let mut latched: Option<PlanCommand> = None;
    let mut stop_time = None;
    let mut records = Vec::with_capacity(scenario.steps());
    let n_sub = dynamics::substeps(scenario.dt, SUBSTEP)?;
    let h = scenario.dt / n_sub as f64;

    for k in 0..scenario.steps() {
        let t = k as f64 * scenario.dt;
        let stage = |stage: &'static str| move |e: Error| e.at_stage(k, stage);

        let beta = if use_confidence {
            if let Some(prev) = &previous {
                let u_obs = scenario.human_control(k - 1);
                belief = belief
                    .bayes_update(&u_obs, &prev.means[0], &prev.covariances[0])
                    .map_err(stage("belief"))?
                    .epsilon_static();
            }
            belief.effective_beta()
        } else {
            1.0
        };

        let pred = source.prediction_at(t, scenario.dt).map_err(stage("predict"))?;
        let ep = scale_covariance(&pred, beta)
            .and_then(|s| bounds_from_gamma(&s, p.gamma))
            .and_then(|b| endpoints(&apply_hard_caps(&b)))
            .map_err(stage("bounds"))?;
        previous = Some(pred);

        let key = FrtQueryKey {
            v_start: human.v,
            endpoints: ep,
        };
        let vf = tube_for(cache, &key).map_err(stage("tube"))?;

        let local = project_positions(&frt_set(&vf, 0.0).map_err(stage("project"))?);
        let footprint = world_occupancy(&local, [human.x, human.y, human.theta]).map_err(stage("project"))?;
        let cset = minkowski_dilate(&footprint, p.r_col).map_err(stage("dilate"))?;

        let nominal = nominal_path(&ego, p.horizon).map_err(stage("check"))?;
        let hit = collision_check(&nominal, &cset);

        let d = dist(&ego);
        let command = match latched {
            Some(c) => c,
            None => {
                let c = plan(&ego, hit, d, p.a_max).map_err(stage("plan"))?;
                if c.is_braking() {
                    latched = Some(c);
                }
                c
            }
        };

        let checked = containment(scenario, k, &human, &ep, &vf).map_err(stage("containment"))?;

        let mut separation = ego.distance_to(&human);
        let ego0 = ego;
        let human0 = human;
        let u_h = scenario.human_control(k);
        for i in 0..n_sub {
            let (next, stopped) = ego_substep(&ego, command.acceleration, h).map_err(stage("step"))?;
            ego = next;
            if stop_time.is_none() {
                stop_time = stopped.map(|s| t + i as f64 * h + s);
            }
            human = dynamics::step(&human, &u_h, h).map_err(stage("step"))?;
            separation = separation.min(ego.distance_to(&human));
        }

        records.push(StepRecord {
            step: k,
            time: t,
            belief: use_confidence.then_some([belief.b_low, belief.b_high]),
            beta,
            endpoints: ep,
            key,
            tube_cells: footprint.count(),
            detection: hit.is_some(),
            hit_time: hit,
            command,
            ego: ego0,
            human: human0,
            dist_to_line: d,
            separation,
            containment_checked: checked.is_some(),
            containment_violations: checked.unwrap_or(0),
        });
        observe(&Frame {
            record: records.last().expect("just pushed"),
            footprint: &footprint,
            collision_set: &cset,
            nominal: &nominal,
            lane: &lane,
            stop_line: scenario.ego.stop_line,
        });
    }

    let mut log = SimLog {
        scenario: scenario.name.clone(),
        use_confidence,
        dt: scenario.dt,
        r_col: p.r_col,
        steps: records,
        final_ego: ego,
        final_human: human,
        stop_time,
        final_dist_to_line: dist(&ego),
        summary: Metrics {
            detection_distance: None,
            detection_time: None,
            braking_duration: None,
            stop_position: None,
            min_separation: f64::INFINITY,
            collision: false,
            containment_violations: 0,
        },
    };
    log.summary = metrics(&log);
    Ok(log)
}

pub fn metrics(log: &SimLog) -> Metrics {
    let first = log.steps.iter().find(|r| r.detection);
    let brake_start = log.steps.iter().find(|r| r.command.is_braking()).map(|r| r.time);
    let end = log.steps.last().map_or(0.0, |r| r.time + log.dt);
    let min_separation = log.steps.iter().map(|r| r.separation).fold(f64::INFINITY, f64::min);
    Metrics {
        detection_distance: first.map(|r| r.dist_to_line),
        detection_time: first.map(|r| r.time),
        braking_duration: brake_start.map(|t0| log.stop_time.unwrap_or(end) - t0),
        stop_position: log.stop_time.map(|_| -log.final_dist_to_line),
        min_separation,
        collision: min_separation < log.r_col,
        containment_violations: log.steps.iter().map(|r| r.containment_violations).sum(),
    }
}
