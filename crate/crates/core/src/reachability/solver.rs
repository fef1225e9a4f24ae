//! Forward reachable tubes by a semi-Lagrangian level-set scheme.
//!
//! The value function starts at the initial-set function `l`. Each step of
//! size `h` applies
//!
//! ```text
//! V ← min(V, B_{h/2} A_h B_{h/2} V)
//! (A_h V)(x, y, θ, v) = V(x − h·v·cos θ, y − h·v·sin θ, θ, v)
//! (B_s V)(x, y, θ, v) = min { V(x, y, θ − s·u₁, v − s·u₂) : u ∈ [u_min, u_max] }
//! ```
//!
//! `A` moves every (θ, v) slice along its own constant velocity, `B` takes
//! the minimum over all headings and speeds the controls can reach in time
//! `s`, and V is read between nodes by multilinear interpolation. The
//! minimum in `B` is exact for the interpolant: a bilinear function on a
//! box attains its minimum at a corner, on a box edge where it crosses a
//! grid line, or at a node inside the box.
//!
//! Every operation is monotone in V, and `B` is monotone in the bounds, so
//! wider bounds give a pointwise smaller V (a larger tube) when the step is
//! shared. V never increases, hence `V ≤ l` and the tubes are nested in
//! time. Control bounds at each step are the hull of the interpolated bounds
//! at both ends of the step.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::dynamics::{wrap_angle, ACCEL_CAP, STEER_RATE_CAP};
use crate::error::{Error, Result};
use crate::prediction::{interp_weight, ControlBoundsEndpoints};

/// Half-widths of the initial set around the human's current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialSetMargins {
    /// Position radius, m.
    pub position: f64,
    /// Speed half-width, m/s.
    pub speed: f64,
    /// Heading half-width, rad.
    pub heading: f64,
}

impl InitialSetMargins {
    /// Each half-width raised, if needed, to the smallest value `grid` accepts.
    pub fn at_least_for(self, grid: &GridSpec) -> Self {
        let h = grid.spacings();
        Self {
            position: self.position.max(1.5 * h[0].max(h[1])),
            speed: self.speed.max(1.5 * h[3]),
            heading: self.heading.max(1.5 * h[2]),
        }
    }
}

impl Default for InitialSetMargins {
    fn default() -> Self {
        Self {
            position: 1.0,
            speed: 0.75,
            heading: 0.16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub margins: InitialSetMargins,
    /// Fixed time step; chosen from the step limit when absent.
    pub dtau: Option<f64>,
    /// Fraction of the step limit used when the step is chosen
    /// automatically. The automatic step assumes controls anywhere within the
    /// hard caps, so every solve on a grid shares it.
    pub courant: f64,
    /// Store a copy of V every this many seconds of τ.
    pub snapshot_interval: Option<f64>,
    /// V is clipped from above at this level. Only nodes near the tube then
    /// evolve, which makes the solve much cheaper; the clipping can only
    /// enlarge the tube.
    pub band: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            margins: InitialSetMargins::default(),
            dtau: None,
            courant: 1.0,
            snapshot_interval: None,
            band: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrtQueryKey {
    pub v_start: f64,
    pub endpoints: ControlBoundsEndpoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub values: Vec<f32>,
}

/// Solution of one tube computation. `values` holds V at the end of the
/// horizon; `l_values` the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub grid: GridSpec,
    pub key: FrtQueryKey,
    pub horizon: f64,
    pub margins: InitialSetMargins,
    pub values: Vec<f32>,
    pub l_values: Vec<f32>,
    pub snapshots: Vec<Snapshot>,
}

impl ValueFunction {
    /// V at a continuous body-frame state, or `None` off the grid.
    pub fn interpolate(&self, state: [f64; 4]) -> Option<f64> {
        self.grid.interpolate(&self.values, state)
    }

    /// Pointwise minimum of two solutions on the same grid (union of tubes).
    pub fn union(&self, other: &ValueFunction, key: FrtQueryKey) -> Result<ValueFunction> {
        if self.grid != other.grid || self.horizon != other.horizon {
            return Err(Error::Config(
                "cannot merge value functions solved on different grids or horizons".into(),
            ));
        }
        let min = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x.min(*y)).collect();
        Ok(ValueFunction {
            grid: self.grid,
            key,
            horizon: self.horizon,
            margins: self.margins,
            values: min(&self.values, &other.values),
            l_values: min(&self.l_values, &other.l_values),
            snapshots: Vec::new(),
        })
    }
}

/// Initial-set function in the human's body frame (origin, zero heading):
/// `l = max(‖(x, y)‖ − ε₁, |v − v_start| − ε₂, |θ| − ε₃)`.
pub fn initial_value(grid: &GridSpec, v_start: f64, margins: &InitialSetMargins) -> Result<Vec<f64>> {
    initial_terms(grid, v_start, margins, [1.0, 1.0])
}

/// `l` with the heading and speed terms multiplied by `scale`. The zero
/// level set does not depend on the (positive) scale.
fn initial_terms(grid: &GridSpec, v_start: f64, margins: &InitialSetMargins, scale: [f64; 2]) -> Result<Vec<f64>> {
    grid.validate()?;
    let h = grid.spacings();
    let checks = [
        ("position", margins.position, h[0].max(h[1])),
        ("heading", margins.heading, h[2]),
        ("speed", margins.speed, h[3]),
    ];
    for (name, eps, spacing) in checks {
        if !(eps > 0.0) || eps < 1.5 * spacing {
            return Err(Error::Config(format!(
                "{name} margin {eps} is below 1.5 grid spacings ({spacing}); \
                 the discrete initial set would be empty or degenerate"
            )));
        }
    }
    if !v_start.is_finite() {
        return Err(Error::InvalidArgument(format!("v_start must be finite, got {v_start}")));
    }
    let xs = grid.x.coords();
    let ys = grid.y.coords();
    let ts: Vec<f64> = grid
        .theta
        .coords()
        .into_iter()
        .map(|t| scale[0] * (wrap_angle(t).abs() - margins.heading))
        .collect();
    let vs: Vec<f64> = grid
        .v
        .coords()
        .into_iter()
        .map(|v| scale[1] * ((v - v_start).abs() - margins.speed))
        .collect();
    let mut l = Vec::with_capacity(grid.len());
    for x in &xs {
        for y in &ys {
            let r = x.hypot(*y) - margins.position;
            for t in &ts {
                let rt = r.max(*t);
                l.extend(vs.iter().map(|v| rt.max(*v)));
            }
        }
    }
    if !l.iter().any(|v| *v < 0.0) {
        return Err(Error::Config(format!(
            "initial set around v_start = {v_start} contains no grid node"
        )));
    }
    Ok(l)
}

/// Bang-bang maximisation of the control-affine part plus the drift term.
#[inline(always)]
fn hamiltonian_terms(p: [f64; 4], vcos: f64, vsin: f64, u_lo: [f64; 2], u_hi: [f64; 2]) -> f64 {
    p[0] * vcos + p[1] * vsin + (p[2] * u_lo[0]).max(p[2] * u_hi[0]) + (p[3] * u_lo[1]).max(p[3] * u_hi[1])
}

/// `max_u ∇V · f(x, u)` over the box `[u_min, u_max]`.
pub fn hamiltonian(grad: [f64; 4], state: [f64; 4], u_min: [f64; 2], u_max: [f64; 2]) -> f64 {
    let (sin, cos) = state[2].sin_cos();
    hamiltonian_terms(grad, state[3] * cos, state[3] * sin, u_min, u_max)
}
/// Time stepping chosen for a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStepping {
    pub dtau: f64,
    pub steps: usize,
    /// Largest allowed step for the bounds of this solve.
    pub limit: f64,
}

/// Cells a node may travel in x or y during one step at the grid's top speed.
const DRIFT_CELLS: f64 = 8.0;
/// Cells the control box may span in θ or v during one step.
const CONTROL_CELLS: f64 = 4.0;

/// Largest step on `grid` for steering rates up to `rates[0]` and
/// accelerations up to `rates[1]` in magnitude.
///
/// The scheme is stable for any step; the limit bounds the splitting error
/// by capping how far one step may carry a state: eight cells in position at
/// the grid's top speed, four cells in heading and speed.
pub fn stable_step(grid: &GridSpec, rates: [f64; 2]) -> f64 {
    let h = grid.spacings();
    let speed = grid.v.lo.abs().max(grid.v.hi.abs());
    let limits = [
        (DRIFT_CELLS * h[0], speed),
        (DRIFT_CELLS * h[1], speed),
        (CONTROL_CELLS * h[2], rates[0].abs()),
        (CONTROL_CELLS * h[3], rates[1].abs()),
    ];
    limits
        .into_iter()
        .filter(|(_, rate)| *rate > 0.0)
        .map(|(reach, rate)| reach / rate)
        .fold(f64::INFINITY, f64::min)
}

/// Step count and size for a solve.
pub fn time_stepping(
    grid: &GridSpec,
    ep: &ControlBoundsEndpoints,
    horizon: f64,
    settings: &SolverSettings,
) -> Result<TimeStepping> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let limit = stable_step(grid, ep.max_abs());
    let target = match settings.dtau {
        Some(dt) => {
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!("dtau must be positive, got {dt}")));
            }
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::Cfl { dtau: dt, limit });
            }
            dt
        }
        None => {
            if !(settings.courant > 0.0 && settings.courant <= 1.0) {
                return Err(Error::Config(format!(
                    "courant number must lie in (0, 1], got {}",
                    settings.courant
                )));
            }
            settings.courant * stable_step(grid, [STEER_RATE_CAP, ACCEL_CAP])
        }
    };
    let target = target.min(horizon);
    let mut steps = ((horizon / target) - 1e-9).ceil().max(1.0) as usize;
    if let Some(interval) = settings.snapshot_interval {
        let m = snapshot_count(horizon, interval)?;
        steps = steps.div_ceil(m) * m;
    }
    Ok(TimeStepping {
        dtau: horizon / steps as f64,
        steps,
        limit,
    })
}

fn snapshot_count(horizon: f64, interval: f64) -> Result<usize> {
    let m = (horizon / interval).round();
    if !(interval > 0.0) || m < 1.0 || (m * interval - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!(
            "snapshot interval {interval} must divide the horizon {horizon}"
        )));
    }
    Ok(m as usize)
}

/// Working precision of the solver. Values are stored in this precision.
type Real = f32;

/// Reading position along one axis, relative to the output node: the value
/// is `(1 − w)·V[i + k] + w·V[i + k + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Offset {
    k: i64,
    w: Real,
}

impl Offset {
    fn new(cells: f64) -> Self {
        let k = cells.floor();
        Self {
            k: k as i64,
            w: (cells - k) as Real,
        }
    }
}

/// Reading positions whose minimum equals the minimum of the piecewise-linear
/// interpolant over `[lo, hi]` (in cells): both ends and every node between.
fn candidates(lo: f64, hi: f64) -> Vec<Offset> {
    let mut out = vec![Offset::new(lo)];
    let mut n = lo.floor() + 1.0;
    while n < hi {
        out.push(Offset { k: n as i64, w: 0.0 });
        n += 1.0;
    }
    if hi > lo {
        out.push(Offset::new(hi));
    }
    out
}

struct Kernel {
    shape: [usize; 4],
    strides: [usize; 4],
    h: f64,
    spacing: [f64; 4],
    band: Real,
    /// Drift offsets in x and y for each (θ, v) pair, indexed `iθ·nv + iv`.
    drift_x: Vec<Offset>,
    drift_y: Vec<Offset>,
}

impl Kernel {
    fn new(grid: &GridSpec, h: f64, band: f64) -> Self {
        let spacing = grid.spacings();
        let vs = grid.v.coords();
        let n = grid.theta.n * grid.v.n;
        let mut drift_x = Vec::with_capacity(n);
        let mut drift_y = Vec::with_capacity(n);
        for t in grid.theta.coords() {
            let (s, c) = t.sin_cos();
            for v in &vs {
                drift_x.push(Offset::new(-h * v * c / spacing[0]));
                drift_y.push(Offset::new(-h * v * s / spacing[1]));
            }
        }
        Self {
            shape: grid.shape(),
            strides: grid.strides(),
            h,
            spacing,
            band: band as Real,
            drift_x,
            drift_y,
        }
    }

    /// One step from `cur` into `cur`, using `a` and `b` as scratch.
    /// Returns false if a non-finite value appeared.
    fn advance(&self, cur: &mut [Real], a: &mut [Real], b: &mut [Real], u_lo: [f64; 2], u_hi: [f64; 2]) -> bool {
        let s = 0.5 * self.h;
        let theta = candidates(-u_hi[0] * s / self.spacing[2], -u_lo[0] * s / self.spacing[2]);
        let speed = candidates(-u_hi[1] * s / self.spacing[3], -u_lo[1] * s / self.spacing[3]);
        self.controls(cur, a, &theta, &speed);
        self.drift(a, b);
        self.controls(b, a, &theta, &speed);
        let band = self.band;
        let column = self.strides[1];
        cur.par_chunks_mut(column)
            .zip(a.par_chunks(column))
            .map(|(c, n)| {
                let mut finite = true;
                for (c, n) in c.iter_mut().zip(n) {
                    finite &= n.is_finite();
                    *c = c.min(*n).min(band);
                }
                finite
            })
            .reduce(|| true, |x, y| x && y)
    }

    /// `out = A_h src`; positions beyond the grid read the nearest face.
    fn drift(&self, src: &[Real], out: &mut [Real]) {
        let [nx, ny, _, _] = self.shape;
        let [sx, sy, _, _] = self.strides;
        let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
        out.par_chunks_mut(sx).enumerate().for_each(|(ix, slab)| {
            for iy in 0..ny {
                let dst = &mut slab[iy * sy..(iy + 1) * sy];
                for (r, o) in dst.iter_mut().enumerate() {
                    let (ox, oy) = (self.drift_x[r], self.drift_y[r]);
                    let x0 = clamp(ix as i64 + ox.k, nx);
                    let x1 = clamp(ix as i64 + ox.k + 1, nx);
                    let y0 = clamp(iy as i64 + oy.k, ny);
                    let y1 = clamp(iy as i64 + oy.k + 1, ny);
                    let at = |x: usize, y: usize| src[x * sx + y * sy + r];
                    let lo = at(x0, y0) + ox.w * (at(x1, y0) - at(x0, y0));
                    let hi = at(x0, y1) + ox.w * (at(x1, y1) - at(x0, y1));
                    *o = lo + oy.w * (hi - lo);
                }
            }
        });
    }

    /// `out = B src` with the box given by its θ and v reading positions.
    fn controls(&self, src: &[Real], out: &mut [Real], theta: &[Offset], speed: &[Offset]) {
        let [_, _, nt, nv] = self.shape;
        let column = self.strides[1];
        let band = self.band;
        out.par_chunks_mut(column).zip(src.par_chunks(column)).for_each_init(
            || vec![0.0 as Real; speed.len() * column],
            |along_v, (dst, col)| {
                if col.iter().all(|v| *v >= band) {
                    dst.copy_from_slice(col);
                    return;
                }
                for (j, ob) in speed.iter().enumerate() {
                    let buf = &mut along_v[j * column..(j + 1) * column];
                    for it in 0..nt {
                        let line = &col[it * nv..(it + 1) * nv];
                        let out_line = &mut buf[it * nv..(it + 1) * nv];
                        for (iv, o) in out_line.iter_mut().enumerate() {
                            let i0 = (iv as i64 + ob.k).clamp(0, nv as i64 - 1) as usize;
                            let i1 = (iv as i64 + ob.k + 1).clamp(0, nv as i64 - 1) as usize;
                            *o = line[i0] + ob.w * (line[i1] - line[i0]);
                        }
                    }
                }
                dst.fill(Real::INFINITY);
                for j in 0..speed.len() {
                    let buf = &along_v[j * column..(j + 1) * column];
                    for oa in theta {
                        for it in 0..nt {
                            let t0 = (it as i64 + oa.k).rem_euclid(nt as i64) as usize;
                            let t1 = (t0 + 1) % nt;
                            let (l0, l1) = (&buf[t0 * nv..(t0 + 1) * nv], &buf[t1 * nv..(t1 + 1) * nv]);
                            let out_line = &mut dst[it * nv..(it + 1) * nv];
                            for iv in 0..nv {
                                let v = l0[iv] + oa.w * (l1[iv] - l0[iv]);
                                out_line[iv] = out_line[iv].min(v);
                            }
                        }
                    }
                }
            },
        );
    }
}

/// Compute the forward reachable tube from `(0, 0, 0, v_start)` over `horizon`
/// seconds with bounds interpolated between the endpoints.
pub fn solve_frt(
    v_start: f64,
    ep: &ControlBoundsEndpoints,
    grid: &GridSpec,
    horizon: f64,
    settings: &SolverSettings,
) -> Result<ValueFunction> {
    ep.validate()?;
    let started = Instant::now();
    let stepping = time_stepping(grid, ep, horizon, settings)?;
    let band = settings.band;
    if !(band > 0.0) {
        return Err(Error::Config(format!("band must be positive, got {band}")));
    }
    let l = initial_value(grid, v_start, &settings.margins)?;
    let l_values: Vec<f32> = l.iter().map(|v| *v as f32).collect();
    // Inside the initial set the heading and speed terms are shallow in
    // position units (0.16 rad reads as 0.16 m). Interpolation smears V by
    // a fraction of a cell per step, which would erase such a set. Starting
    // from the smaller of `l` and `l` with those terms measured in cells of
    // position keeps the same initial set and the bound V ≤ l.
    let h = grid.spacings();
    let deep = initial_terms(grid, v_start, &settings.margins, [h[0] / h[2], h[0] / h[3]])?;
    let mut current: Vec<Real> = l.iter().zip(&deep).map(|(a, b)| a.min(*b).min(band) as Real).collect();

    let mut snapshots = Vec::new();
    let snapshot_every = match settings.snapshot_interval {
        Some(interval) => {
            snapshots.push(Snapshot {
                time: 0.0,
                values: current.clone(),
            });
            Some(stepping.steps / snapshot_count(horizon, interval)?)
        }
        None => None,
    };

    let kernel = Kernel::new(grid, stepping.dtau, band);
    let mut scratch_a = vec![0.0 as Real; current.len()];
    let mut scratch_b = vec![0.0 as Real; current.len()];
    for k in 0..stepping.steps {
        let w0 = k as f64 / stepping.steps as f64;
        let w1 = (k + 1) as f64 / stepping.steps as f64;
        let (lo0, hi0) = interp_weight(ep, w0);
        let (lo1, hi1) = interp_weight(ep, w1);
        let u_lo = [lo0[0].min(lo1[0]), lo0[1].min(lo1[1])];
        let u_hi = [hi0[0].max(hi1[0]), hi0[1].max(hi1[1])];
        if !kernel.advance(&mut current, &mut scratch_a, &mut scratch_b, u_lo, u_hi) {
            return Err(Error::Numerical(format!(
                "non-finite value function at step {} of {} (tau = {:.4} s)",
                k + 1,
                stepping.steps,
                (k + 1) as f64 * stepping.dtau
            )));
        }
        if let Some(every) = snapshot_every {
            if (k + 1) % every == 0 {
                snapshots.push(Snapshot {
                    time: (k + 1) as f64 * stepping.dtau,
                    values: current.clone(),
                });
            }
        }
    }
    let values = current;
    check_boundary(grid, &values)?;
    log::debug!(
        "solved tube v_start={v_start} on {} nodes in {} steps of {:.5} s ({:.2?})",
        grid.len(),
        stepping.steps,
        stepping.dtau,
        started.elapsed()
    );
    Ok(ValueFunction {
        grid: *grid,
        key: FrtQueryKey {
            v_start,
            endpoints: *ep,
        },
        horizon,
        margins: settings.margins,
        values,
        l_values,
        snapshots,
    })
}

/// Error if any node on a non-periodic face of the grid lies in the tube.
fn check_boundary(grid: &GridSpec, values: &[f32]) -> Result<()> {
    let [nx, ny, nt, nv] = grid.shape();
    for ix in 0..nx {
        for iy in 0..ny {
            for it in 0..nt {
                for iv in 0..nv {
                    let on_face = [
                        (ix == 0 || ix == nx - 1, "x"),
                        (iy == 0 || iy == ny - 1, "y"),
                        (iv == 0 || iv == nv - 1, "v"),
                    ];
                    let face = on_face.iter().find(|(hit, _)| *hit);
                    if let Some((_, axis)) = face {
                        if values[grid.index([ix, iy, it, iv])] < 0.0 {
                            return Err(Error::DomainTooSmall { axis });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
