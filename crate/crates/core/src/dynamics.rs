//! Extended unicycle dynamics shared by the ego and human vehicles.
//!
//! State is `(x, y, θ, v)` and the control is `(steering rate, acceleration)`:
//!
//! ```text
//! ẋ = v cos θ,  ẏ = v sin θ,  θ̇ = u1,  v̇ = u2
//! ```
//!
//! Integration is classical RK4 with the heading wrapped back into (−π, π]
//! after every step. Speed is never clamped here; callers that need a vehicle
//! to stop at zero speed shape their controls accordingly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the magnitude of the steering rate, rad/s.
pub const STEER_RATE_CAP: f64 = 2.0;
/// Hard cap on the magnitude of the acceleration, m/s².
pub const ACCEL_CAP: f64 = 10.0;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.theta, self.v]
    }

    fn offset(&self, d: &[f64; 4], h: f64) -> AgentState {
        AgentState {
            x: self.x + h * d[0],
            y: self.y + h * d[1],
            theta: self.theta + h * d[2],
            v: self.v + h * d[3],
        }
    }

    pub fn distance_to(&self, other: &AgentState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Steering rate, rad/s.
    pub u1: f64,
    /// Longitudinal acceleration, m/s².
    pub u2: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    /// Clamp both components to the hard physical caps.
    pub fn capped(self) -> Self {
        Self {
            u1: self.u1.clamp(-STEER_RATE_CAP, STEER_RATE_CAP),
            u2: self.u2.clamp(-ACCEL_CAP, ACCEL_CAP),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u1.is_finite() && self.u2.is_finite()
    }
}

/// Time derivative of the state under a constant control.
pub fn flow(state: &AgentState, u: &ControlInput) -> Result<[f64; 4]> {
    if !state.is_finite() {
        return Err(Error::InvalidState(format!("non-finite state {state:?}")));
    }
    if !u.is_finite() {
        return Err(Error::InvalidState(format!("non-finite control {u:?}")));
    }
    Ok(flow_unchecked(state, u))
}

#[inline]
fn flow_unchecked(s: &AgentState, u: &ControlInput) -> [f64; 4] {
    let (sin, cos) = s.theta.sin_cos();
    [s.v * cos, s.v * sin, u.u1, u.u2]
}

/// One RK4 step with a control that is constant over the step.
pub fn step(state: &AgentState, u: &ControlInput, dt: f64) -> Result<AgentState> {
    step_with(state, |_| *u, dt)
}

/// One RK4 step where the control may vary over the step; `control(s)` is
/// evaluated at the offset `s ∈ [0, dt]` of each stage.
pub fn step_with<F>(state: &AgentState, control: F, dt: f64) -> Result<AgentState>
where
    F: Fn(f64) -> ControlInput,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "integration step must be positive, got {dt}"
        )));
    }
    let u0 = control(0.0);
    let um = control(0.5 * dt);
    let u1 = control(dt);
    let k1 = flow(state, &u0)?;
    let k2 = flow_unchecked(&state.offset(&k1, 0.5 * dt), &um);
    let k3 = flow_unchecked(&state.offset(&k2, 0.5 * dt), &um);
    let k4 = flow_unchecked(&state.offset(&k3, dt), &u1);
    let mut d = [0.0; 4];
    for i in 0..4 {
        d[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let next = state.offset(&d, dt);
    let next = AgentState {
        theta: wrap_angle(next.theta),
        ..next
    };
    if !next.is_finite() {
        return Err(Error::Numerical(format!(
            "integration produced a non-finite state from {state:?}"
        )));
    }
    Ok(next)
}

/// Integrate over `duration` with a constant control, sub-stepping so that no
/// RK4 step exceeds `max_substep`.
pub fn advance(state: &AgentState, u: &ControlInput, duration: f64, max_substep: f64) -> Result<AgentState> {
    let n = substeps(duration, max_substep)?;
    let h = duration / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step(&s, u, h)?;
    }
    Ok(s)
}

/// Number of equal sub-steps no longer than `max_substep` covering `duration`.
pub fn substeps(duration: f64, max_substep: f64) -> Result<usize> {
    if !(duration > 0.0) || !(max_substep > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration ({duration}) and sub-step ({max_substep}) must be positive"
        )));
    }
    // Tolerate round-off so that 0.5 / 0.05 gives 10 and not 11.
    Ok(((duration / max_substep) - 1e-9).ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub states: Vec<AgentState>,
}

impl Trajectory {
    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &AgentState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn iter_timed(&self) -> impl Iterator<Item = (f64, &AgentState)> + '_ {
        self.states.iter().enumerate().map(move |(i, s)| (self.time(i), s))
    }
}

/// Apply `controls` one after another, each held for `dt`, starting from `state`.
pub fn rollout(state: &AgentState, controls: &[ControlInput], dt: f64) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("rollout needs at least one control".into()));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*state);
    let mut s = *state;
    for u in controls {
        s = step(&s, u, dt)?;
        states.push(s);
    }
    Ok(Trajectory { dt, t0: 0.0, states })
}
