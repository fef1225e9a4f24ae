//! Oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use reachguard::dynamics::{self, AgentState, ControlInput};
use reachguard::prediction::{interp_bounds, ControlBoundsEndpoints};
use reachguard::reachability::{FrtQueryKey, GridSpec, InitialSetMargins, ValueFunction};
use reachguard::safety::plan;
use reachguard::sim::ego_advance;

/// Closed interval arithmetic, just enough for a reach hull.
#[derive(Debug, Clone, Copy)]
pub struct Iv(pub f64, pub f64);

impl Iv {
    fn add(self, o: Iv) -> Iv {
        Iv(self.0 + o.0, self.1 + o.1)
    }
    fn scale(self, k: f64) -> Iv {
        if k >= 0.0 {
            Iv(self.0 * k, self.1 * k)
        } else {
            Iv(self.1 * k, self.0 * k)
        }
    }
    fn mul(self, o: Iv) -> Iv {
        let p = [self.0 * o.0, self.0 * o.1, self.1 * o.0, self.1 * o.1];
        Iv(
            p.iter().cloned().fold(f64::INFINITY, f64::min),
            p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
    fn hull(self, o: Iv) -> Iv {
        Iv(self.0.min(o.0), self.1.max(o.1))
    }
    /// Range of cos over the interval.
    fn cos(self) -> Iv {
        if self.1 - self.0 >= 2.0 * PI {
            return Iv(-1.0, 1.0);
        }
        let (a, b) = (self.0, self.1);
        let mut lo = a.cos().min(b.cos());
        let mut hi = a.cos().max(b.cos());
        // Multiples of 2π give the maximum, odd multiples of π the minimum.
        if (a / (2.0 * PI)).ceil() * 2.0 * PI <= b {
            hi = 1.0;
        }
        if ((a - PI) / (2.0 * PI)).ceil() * 2.0 * PI + PI <= b {
            lo = -1.0;
        }
        Iv(lo, hi)
    }
    fn sin(self) -> Iv {
        Iv(self.0 - PI / 2.0, self.1 - PI / 2.0).cos()
    }
}

/// Interval enclosure of every state reachable from the initial set under
/// the bounds, by forward Euler on intervals with per-step hulls.
pub fn reach_hull(key: &FrtQueryKey, margins: &InitialSetMargins, horizon: f64) -> [Iv; 4] {
    let n = 600;
    let dt = horizon / n as f64;
    let e = margins.position;
    let mut x = Iv(-e, e);
    let mut y = Iv(-e, e);
    let mut th = Iv(-margins.heading, margins.heading);
    let mut v = Iv(key.v_start - margins.speed, key.v_start + margins.speed);
    let mut all = [x, y, th, v];
    for k in 0..n {
        let t0 = k as f64 * dt;
        let (lo0, hi0) = interp_bounds(&key.endpoints, t0, 0.0, horizon).unwrap();
        let (lo1, hi1) = interp_bounds(&key.endpoints, t0 + dt, 0.0, horizon).unwrap();
        let u1 = Iv(lo0[0].min(lo1[0]), hi0[0].max(hi1[0]));
        let u2 = Iv(lo0[1].min(lo1[1]), hi0[1].max(hi1[1]));
        let th_next = th.add(u1.scale(dt));
        let v_next = v.add(u2.scale(dt));
        let th_step = th.hull(th_next);
        let v_step = v.hull(v_next);
        x = x.add(v_step.mul(th_step.cos()).scale(dt));
        y = y.add(v_step.mul(th_step.sin()).scale(dt));
        th = th_next;
        v = v_next;
        all = [all[0].hull(x), all[1].hull(y), all[2].hull(th), all[3].hull(v)];
    }
    all
}

/// Whether the reach hull stays on `grid` with one spare cell on each side
/// of the non-periodic axes.
pub fn hull_fits(key: &FrtQueryKey, grid: &GridSpec, margins: &InitialSetMargins, horizon: f64) -> bool {
    let h = reach_hull(key, margins, horizon);
    let inside = |iv: Iv, lo: f64, hi: f64, cell: f64| iv.0 >= lo + cell && iv.1 <= hi - cell;
    inside(h[0], grid.x.lo, grid.x.hi, grid.x.spacing())
        && inside(h[1], grid.y.lo, grid.y.hi, grid.y.spacing())
        && inside(h[3], grid.v.lo, grid.v.hi, grid.v.spacing())
}

fn ordered(rng: &mut ChaCha8Rng, center: f64, width: f64, cap: f64) -> [f64; 2] {
    let c: f64 = rng.gen_range(-center..=center);
    let w: f64 = rng.gen_range(0.0..=width);
    [(c - w).max(-cap), (c + w).min(cap)]
}

/// A random tube query with `v_start ∈ [0, 13]` and endpoint bounds inside
/// the caps.
pub fn random_key(rng: &mut ChaCha8Rng) -> FrtQueryKey {
    let v_start = rng.gen_range(0.0..=13.0);
    let mut pick = || {
        let s1 = ordered(rng, 1.0, 0.6, dynamics::STEER_RATE_CAP);
        let s2 = ordered(rng, 4.0, 2.0, dynamics::ACCEL_CAP);
        ([s1[0], s2[0]], [s1[1], s2[1]])
    };
    let (u_min_start, u_max_start) = pick();
    let (u_min_end, u_max_end) = pick();
    FrtQueryKey {
        v_start,
        endpoints: ControlBoundsEndpoints {
            u_min_start,
            u_max_start,
            u_min_end,
            u_max_end,
        },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McReport {
    pub trajectories: usize,
    pub checks: usize,
    pub violations: usize,
    pub worst: f64,
}

/// Sample `n` trajectories with controls inside the interpolated bounds and
/// check every `check_every` seconds that V stays at or below `tol`.
///
/// Initial states are uniform in the initial set. Controls are held per
/// 0.25 s segment at a fixed fraction of the bound interval, uniform or at
/// either end with equal odds; RK4 with 0.01 s steps.
pub fn mc_containment(vf: &ValueFunction, n: usize, seed: u64, check_every: f64, tol: f64) -> McReport {
    let horizon = vf.horizon;
    let dt = 0.01;
    let steps = (horizon / dt).round() as usize;
    let every = (check_every / dt).round() as usize;
    let segment = (0.25 / dt).round() as usize;
    let m = vf.margins;
    let ep = vf.key.endpoints;
    let chunks = 64;
    let per = n.div_ceil(chunks);
    let results: Vec<(usize, usize, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut checks = 0;
            let mut bad = 0;
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..per.min(n.saturating_sub(c * per)) {
                let r = m.position * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..2.0 * PI);
                let mut s = AgentState::new(
                    r * a.cos(),
                    r * a.sin(),
                    rng.gen_range(-m.heading..=m.heading),
                    vf.key.v_start + rng.gen_range(-m.speed..=m.speed),
                );
                let mut frac = [0.0; 2];
                for k in 0..=steps {
                    if k % every == 0 || k == steps {
                        checks += 1;
                        let v = vf.interpolate(s.as_array()).unwrap_or(f64::INFINITY);
                        worst = worst.max(v);
                        if v > tol {
                            bad += 1;
                        }
                    }
                    if k == steps {
                        break;
                    }
                    if k % segment == 0 {
                        for f in &mut frac {
                            *f = if rng.gen_bool(0.5) {
                                rng.gen::<f64>()
                            } else {
                                rng.gen_range(0..2) as f64
                            };
                        }
                    }
                    let t0 = k as f64 * dt;
                    let control = |off: f64| {
                        let (lo, hi) = interp_bounds(&ep, (t0 + off).min(horizon), 0.0, horizon).unwrap();
                        ControlInput::new(lo[0] + frac[0] * (hi[0] - lo[0]), lo[1] + frac[1] * (hi[1] - lo[1]))
                    };
                    s = dynamics::step_with(&s, control, dt).unwrap();
                }
            }
            (checks, bad, worst)
        })
        .collect();
    McReport {
        trajectories: n,
        checks: results.iter().map(|r| r.0).sum(),
        violations: results.iter().map(|r| r.1).sum(),
        worst: results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Mass of N(0, σ²) on [−δ, δ] by composite Simpson.
pub fn gaussian_mass(sigma: f64, delta: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 * delta / n as f64;
    let pdf = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
    let mut acc = pdf(-delta) + pdf(delta);
    for i in 1..n {
        let x = -delta + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, Copy)]
pub struct Drive {
    pub detection_distance: f64,
    pub acceleration: f64,
    pub braking_duration: f64,
    /// Final position minus the stop line; positive is past it.
    pub overshoot: f64,
}

/// An ego on the x axis, stop line at x = 0, that first sees a conflict at
/// macro-step `detect` and follows the planner from then on.
pub fn drive(x0: f64, v0: f64, detect: usize, dt: f64, a_max: f64) -> Drive {
    let mut ego = AgentState::new(x0, 0.0, 0.0, v0);
    let mut latched = None;
    let mut detection_distance = f64::NAN;
    let mut stop_time = None;
    let mut t = 0.0;
    for k in 0..200 {
        if k == detect {
            detection_distance = -ego.x;
        }
        let command = match latched {
            Some(c) => c,
            None => {
                let c = plan(&ego, (k >= detect).then_some(0.0), -ego.x, a_max).unwrap();
                if c.is_braking() {
                    latched = Some(c);
                }
                c
            }
        };
        let (next, stopped) = ego_advance(&ego, command.acceleration, dt).unwrap();
        if stop_time.is_none() {
            stop_time = stopped.map(|s| t + s);
        }
        ego = next;
        t += dt;
        if stop_time.is_some() {
            break;
        }
    }
    let a = latched.map_or(0.0, |c| c.acceleration);
    Drive {
        detection_distance,
        acceleration: a,
        braking_duration: stop_time.map_or(f64::NAN, |s| s - detect as f64 * dt),
        overshoot: ego.x,
    }
}
