//! Collision sets around the human and the ego's braking rule.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, Trajectory};
use crate::error::{Error, Result};

pub const DEFAULT_COLLISION_RADIUS: f64 = 4.5;
pub const DEFAULT_MAX_DECEL: f64 = 10.0;

/// Boolean grid over the plane. Cell `(i, j)` is the square of side `cell`
/// centred at `origin + (i, j)·cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid2D {
    pub origin: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major with x slowest: index `i·ny + j`.
    pub cells: Vec<bool>,
}

impl OccupancyGrid2D {
    pub fn empty(origin: [f64; 2], cell: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) || !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "occupancy grid needs a finite origin and positive cell size, got {origin:?} / {cell}"
            )));
        }
        Ok(Self {
            origin,
            cell,
            nx,
            ny,
            cells: vec![false; nx * ny],
        })
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.ny + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.cells[i * self.ny + j] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.cells.iter().any(|c| *c)
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.cell * self.cell
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.cell,
            self.origin[1] + j as f64 * self.cell,
        ]
    }

    /// Cell containing a point, if it lies on the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let i = ((p[0] - self.origin[0]) / self.cell).round();
        let j = ((p[1] - self.origin[1]) / self.cell).round();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_some_and(|(i, j)| self.get(i, j))
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nx)
            .flat_map(move |i| (0..self.ny).map(move |j| (i, j)))
            .filter(|(i, j)| self.get(*i, *j))
    }

    /// Centres of all occupied cells.
    pub fn occupied_centers(&self) -> Vec<[f64; 2]> {
        self.occupied().map(|(i, j)| self.center(i, j)).collect()
    }

    /// Every occupied cell of `self` is occupied in `other` (compared by
    /// cell centre, so the grids need not share an extent).
    pub fn is_subset_of(&self, other: &OccupancyGrid2D) -> bool {
        self.occupied_centers().into_iter().all(|p| other.contains(p))
    }
}

/// `𝒦 ⊕ disk(radius)` on a grid padded so that the disk always fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSet {
    pub grid: OccupancyGrid2D,
    pub radius: f64,
}

impl CollisionSet {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.grid.contains(p)
    }
}

/// Place a body-frame occupancy grid at `pose = (x, y, θ)` in the world.
///
/// The world grid has the same cell size, with cell centres on integer
/// multiples of it. A world cell is marked when it overlaps a transformed
/// occupied cell with positive area.
pub fn world_occupancy(k_local: &OccupancyGrid2D, pose: [f64; 3]) -> Result<OccupancyGrid2D> {
    if !pose.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidState(format!("pose {pose:?} is not finite")));
    }
    let c = k_local.cell;
    let (sin, cos) = pose[2].sin_cos();
    let to_world = |p: [f64; 2]| [pose[0] + cos * p[0] - sin * p[1], pose[1] + sin * p[0] + cos * p[1]];
    let squares: Vec<[f64; 2]> = k_local
        .occupied()
        .map(|(i, j)| to_world(k_local.center(i, j)))
        .collect();
    // Half-extent of a rotated square along a world axis.
    let reach = 0.5 * c * (cos.abs() + sin.abs());
    if squares.is_empty() {
        let snap = |v: f64| (v / c).round() * c;
        return OccupancyGrid2D::empty([snap(pose[0]), snap(pose[1])], c, 0, 0);
    }
    let index_range = |lo: f64, hi: f64| ((lo / c + 0.5).floor() as i64, (hi / c - 0.5).ceil() as i64);
    let (mut i_lo, mut i_hi, mut j_lo, mut j_hi) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for s in &squares {
        let (a, b) = index_range(s[0] - reach, s[0] + reach);
        let (p, q) = index_range(s[1] - reach, s[1] + reach);
        i_lo = i_lo.min(a);
        i_hi = i_hi.max(b);
        j_lo = j_lo.min(p);
        j_hi = j_hi.max(q);
    }
    let nx = (i_hi - i_lo + 1) as usize;
    let ny = (j_hi - j_lo + 1) as usize;
    let mut out = OccupancyGrid2D::empty([i_lo as f64 * c, j_lo as f64 * c], c, nx, ny)?;
    let tol = 1e-9 * c;
    let half = 0.5 * c;
    for s in &squares {
        let (a, b) = index_range(s[0] - reach, s[0] + reach);
        let (p, q) = index_range(s[1] - reach, s[1] + reach);
        for wi in a..=b {
            for wj in p..=q {
                let centre = [wi as f64 * c, wj as f64 * c];
                let d = [centre[0] - s[0], centre[1] - s[1]];
                // Separating axes: the world axes and the square's own axes.
                let sep_world = d[0].abs() >= half + reach - tol || d[1].abs() >= half + reach - tol;
                let along = (cos * d[0] + sin * d[1]).abs();
                let across = (-sin * d[0] + cos * d[1]).abs();
                let sep_local = along >= half + reach - tol || across >= half + reach - tol;
                if !sep_world && !sep_local {
                    out.set((wi - i_lo) as usize, (wj - j_lo) as usize, true);
                }
            }
        }
    }
    Ok(out)
}

/// Mark every cell whose centre lies within `r` of an occupied cell centre.
pub fn minkowski_dilate(k: &OccupancyGrid2D, r: f64) -> Result<CollisionSet> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("dilation radius must be >= 0, got {r}")));
    }
    let pad = (r / k.cell).ceil() as usize;
    let nx = k.nx + 2 * pad;
    let ny = k.ny + 2 * pad;
    let origin = [k.origin[0] - pad as f64 * k.cell, k.origin[1] - pad as f64 * k.cell];
    let mut grid = OccupancyGrid2D::empty(origin, k.cell, nx, ny)?;
    if k.is_clear() {
        return Ok(CollisionSet { grid, radius: r });
    }
    let mut dist = vec![f64::INFINITY; nx * ny];
    for (i, j) in k.occupied() {
        dist[(i + pad) * ny + j + pad] = 0.0;
    }
    // Squared distances in cell units, separably: along y, then along x.
    let mut line = Vec::new();
    for i in 0..nx {
        line.clear();
        line.extend_from_slice(&dist[i * ny..(i + 1) * ny]);
        let out = squared_edt_1d(&line);
        dist[i * ny..(i + 1) * ny].copy_from_slice(&out);
    }
    for j in 0..ny {
        line.clear();
        line.extend((0..nx).map(|i| dist[i * ny + j]));
        let out = squared_edt_1d(&line);
        for (i, d) in out.into_iter().enumerate() {
            dist[i * ny + j] = d;
        }
    }
    let limit = (r / k.cell).powi(2) * (1.0 + 1e-12) + 1e-12;
    for (cell, d) in grid.cells.iter_mut().zip(&dist) {
        *cell = *d <= limit;
    }
    Ok(CollisionSet { grid, radius: r })
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn squared_edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|q| f[*q].is_finite()).collect();
    if sites.is_empty() {
        return out;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        while let Some(&p) = v.last() {
            let s = inter(q, p);
            if v.len() > 1 && s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        } else {
            z.push(inter(q, *v.last().unwrap()));
        }
        v.push(q);
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    out
}

/// Time of the first trajectory sample inside `c`, if any.
pub fn collision_check(nominal: &Trajectory, c: &CollisionSet) -> Option<f64> {
    nominal
        .iter_timed()
        .find(|(_, s)| c.contains([s.x, s.y]))
        .map(|(t, _)| t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanReason {
    Nominal,
    BrakeToLine,
    MaxBrake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCommand {
    pub acceleration: f64,
    pub reason: PlanReason,
}

impl PlanCommand {
    pub const NOMINAL: PlanCommand = PlanCommand {
        acceleration: 0.0,
        reason: PlanReason::Nominal,
    };

    pub fn is_braking(&self) -> bool {
        self.reason != PlanReason::Nominal
    }
}

/// Keep going when clear; otherwise stop at the line if that needs no more
/// than `a_max`, else brake as hard as allowed.
pub fn plan(ego: &AgentState, hit: Option<f64>, dist_to_line: f64, a_max: f64) -> Result<PlanCommand> {
    if !(a_max > 0.0) || a_max > crate::dynamics::ACCEL_CAP {
        return Err(Error::InvalidArgument(format!(
            "a_max must lie in (0, {}], got {a_max}",
            crate::dynamics::ACCEL_CAP
        )));
    }
    if !(ego.v >= 0.0) {
        return Err(Error::InvalidState(format!("ego speed must be >= 0, got {}", ego.v)));
    }
    if hit.is_none() {
        return Ok(PlanCommand::NOMINAL);
    }
    if dist_to_line > 0.0 {
        let needed = ego.v * ego.v / (2.0 * dist_to_line);
        if needed <= a_max {
            return Ok(PlanCommand {
                acceleration: -needed,
                reason: PlanReason::BrakeToLine,
            });
        }
    }
    Ok(PlanCommand {
        acceleration: -a_max,
        reason: PlanReason::MaxBrake,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn single(cell: f64, at: [f64; 2]) -> OccupancyGrid2D {
        let mut g = OccupancyGrid2D::empty(at, cell, 1, 1).unwrap();
        g.set(0, 0, true);
        g
    }

    #[test]
    fn identity_pose_keeps_cells() {
        let mut k = OccupancyGrid2D::empty([-2.0, -1.0], 0.5, 9, 5).unwrap();
        for (i, j) in [(0, 0), (3, 2), (8, 4), (4, 2)] {
            k.set(i, j, true);
        }
        let w = world_occupancy(&k, [0.0, 0.0, 0.0]).unwrap();
        let mut a = k.occupied_centers();
        let mut b = w.occupied_centers();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn translation_shifts_cells() {
        let k = single(0.5, [3.0, 0.0]);
        let w = world_occupancy(&k, [10.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.occupied_centers(), vec![[13.0, 0.0]]);
    }

    #[test]
    fn quarter_turn_maps_x_to_y() {
        let k = single(0.5, [5.0, 0.0]);
        let w = world_occupancy(&k, [0.0, 0.0, FRAC_PI_2]).unwrap();
        assert!(w.contains([0.0, 5.0]));
        // cos(π/2) is not exactly zero, but sliver overlaps are ignored.
        assert_eq!(w.count(), 1);
    }

    #[test]
    fn rotated_cells_are_rounded_outward() {
        let k = single(0.5, [0.0, 0.0]);
        let w = world_occupancy(&k, [0.0, 0.0, 0.3]).unwrap();
        assert!(w.count() > 1);
        assert!(w.contains([0.0, 0.0]));
    }

    #[test]
    fn zero_radius_is_identity() {
        let k = single(0.5, [1.0, 1.0]);
        let c = minkowski_dilate(&k, 0.0).unwrap();
        assert_eq!(c.grid.occupied_centers(), vec![[1.0, 1.0]]);
    }

    #[test]
    fn single_cell_grows_into_a_disk() {
        let k = single(0.5, [0.0, 0.0]);
        let c = minkowski_dilate(&k, 4.5).unwrap();
        let mut expected = 0;
        for i in -9i32..=9 {
            for j in -9i32..=9 {
                if ((i * i + j * j) as f64).sqrt() * 0.5 <= 4.5 {
                    expected += 1;
                }
            }
        }
        assert_eq!(c.grid.count(), expected);
        assert!(c.contains([4.5, 0.0]));
        assert!(!c.contains([4.0, 2.5]));
    }

    #[test]
    fn distant_points_give_disjoint_disks() {
        let mut k = OccupancyGrid2D::empty([0.0, 0.0], 0.5, 41, 1).unwrap();
        k.set(0, 0, true);
        k.set(40, 0, true);
        let c = minkowski_dilate(&k, 4.5).unwrap();
        assert!(c.contains([4.5, 0.0]));
        assert!(c.contains([15.5, 0.0]));
        assert!(!c.contains([10.0, 0.0]));
        assert_eq!(
            c.grid.count(),
            2 * minkowski_dilate(&single(0.5, [0.0, 0.0]), 4.5).unwrap().grid.count()
        );
    }

    #[test]
    fn plan_examples() {
        let ego = AgentState::new(0.0, 0.0, 0.0, 26.0);
        assert_eq!(plan(&ego, None, 39.0, 10.0).unwrap(), PlanCommand::NOMINAL);
        let cmd = plan(&ego, Some(1.0), 39.0, 10.0).unwrap();
        assert_eq!(cmd.reason, PlanReason::BrakeToLine);
        assert_abs_diff_eq!(cmd.acceleration, -26.0 * 26.0 / 78.0, epsilon = 1e-12);
        let cmd = plan(&ego, Some(1.0), 26.0, 10.0).unwrap();
        assert_eq!(
            cmd,
            PlanCommand {
                acceleration: -10.0,
                reason: PlanReason::MaxBrake
            }
        );
        let cmd = plan(&AgentState::new(0.0, 0.0, 0.0, 23.0), Some(0.5), 19.5, 10.0).unwrap();
        assert_eq!(cmd.reason, PlanReason::MaxBrake);
        let cmd = plan(&ego, Some(0.0), -3.0, 10.0).unwrap();
        assert_eq!(cmd.reason, PlanReason::MaxBrake);
    }

    #[test]
    fn plan_rejects_bad_arguments() {
        let ego = AgentState::new(0.0, 0.0, 0.0, 5.0);
        assert!(plan(&ego, None, 10.0, 0.0).is_err());
        assert!(plan(&AgentState::new(0.0, 0.0, 0.0, -1.0), None, 10.0, 5.0).is_err());
    }
}
