use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::wrap_angle;
use crate::error::{Error, Result};

/// One axis of the state grid.
///
/// Non-periodic axes have nodes at `lo + i·Δ` for `i in 0..n` with
/// `Δ = (hi − lo)/(n − 1)`. The periodic heading axis has `n` nodes at
/// `lo + i·Δ` with `Δ = (hi − lo)/n`; node `n` would coincide with node 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lo,
            hi,
            n,
            periodic: false,
        }
    }

    pub fn heading(n: usize) -> Self {
        Self {
            lo: -PI,
            hi: PI,
            n,
            periodic: true,
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.n as f64
        } else {
            (self.hi - self.lo) / (self.n - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Index of the node closest to `value` (wrapping on periodic axes), or
    /// `None` when it lies more than half a cell outside a bounded axis.
    pub fn nearest(&self, value: f64) -> Option<usize> {
        let h = self.spacing();
        if self.periodic {
            let r = (value - self.lo) / h;
            return Some((r.round() as i64).rem_euclid(self.n as i64) as usize);
        }
        let r = ((value - self.lo) / h).round();
        if r < 0.0 || r > (self.n - 1) as f64 {
            None
        } else {
            Some(r as usize)
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Config(format!(
                "grid axis {name} needs at least 3 cells, got {}",
                self.n
            )));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::Config(format!(
                "grid axis {name} needs finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Regular 4-D grid over (x, y, θ, v); θ is periodic.
///
/// Node `(ix, iy, iθ, iv)` lives at flat index `((ix·ny + iy)·nθ + iθ)·nv + iv`,
/// so x varies slowest and v fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: Axis,
    pub y: Axis,
    pub theta: Axis,
    pub v: Axis,
}

impl Default for GridSpec {
    /// Desktop-scale grid: 111 × 101 × 61 × 45 nodes at 0.5 m / 0.5 m/s spacing.
    fn default() -> Self {
        Self {
            x: Axis::new(-10.0, 45.0, 111),
            y: Axis::new(-25.0, 25.0, 101),
            theta: Axis::heading(61),
            v: Axis::new(-2.0, 20.0, 45),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.x.validate("x")?;
        self.y.validate("y")?;
        self.theta.validate("theta")?;
        self.v.validate("v")?;
        if !self.theta.periodic || self.x.periodic || self.y.periodic || self.v.periodic {
            return Err(Error::Config(
                "only the theta axis may be (and must be) periodic".into(),
            ));
        }
        // Position projections are square-celled occupancy grids.
        if (self.x.spacing() - self.y.spacing()).abs() > 1e-9 * self.x.spacing() {
            return Err(Error::Config(format!(
                "x and y spacing must match, got {} and {}",
                self.x.spacing(),
                self.y.spacing()
            )));
        }
        Ok(())
    }

    pub fn axes(&self) -> [&Axis; 4] {
        [&self.x, &self.y, &self.theta, &self.v]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.x.n, self.y.n, self.theta.n, self.v.n]
    }

    pub fn len(&self) -> usize {
        self.x.n * self.y.n * self.theta.n * self.v.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacings(&self) -> [f64; 4] {
        [
            self.x.spacing(),
            self.y.spacing(),
            self.theta.spacing(),
            self.v.spacing(),
        ]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacings().into_iter().fold(0.0, f64::max)
    }

    /// Flat-index strides for (x, y, θ, v).
    pub fn strides(&self) -> [usize; 4] {
        let sv = 1;
        let st = self.v.n;
        let sy = self.theta.n * st;
        let sx = self.y.n * sy;
        [sx, sy, st, sv]
    }

    pub fn index(&self, idx: [usize; 4]) -> usize {
        let s = self.strides();
        idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3] * s[3]
    }

    pub fn unravel(&self, mut flat: usize) -> [usize; 4] {
        let iv = flat % self.v.n;
        flat /= self.v.n;
        let it = flat % self.theta.n;
        flat /= self.theta.n;
        let iy = flat % self.y.n;
        [flat / self.y.n, iy, it, iv]
    }

    pub fn node(&self, idx: [usize; 4]) -> [f64; 4] {
        [
            self.x.coord(idx[0]),
            self.y.coord(idx[1]),
            self.theta.coord(idx[2]),
            self.v.coord(idx[3]),
        ]
    }

    /// Nearest node to a continuous state, if it lies on the grid.
    pub fn nearest(&self, state: [f64; 4]) -> Option<[usize; 4]> {
        Some([
            self.x.nearest(state[0])?,
            self.y.nearest(state[1])?,
            self.theta.nearest(wrap_angle(state[2]))?,
            self.v.nearest(state[3])?,
        ])
    }

    /// Multilinear interpolation of a node array at a continuous state.
    /// Returns `None` outside the bounded axes.
    pub fn interpolate(&self, values: &[f32], state: [f64; 4]) -> Option<f64> {
        debug_assert_eq!(values.len(), self.len());
        let mut lo = [0usize; 4];
        let mut hi = [0usize; 4];
        let mut w = [0.0f64; 4];
        for (d, axis) in self.axes().into_iter().enumerate() {
            let value = if axis.periodic { wrap_angle(state[d]) } else { state[d] };
            let r = (value - axis.lo) / axis.spacing();
            if axis.periodic {
                let f = r.floor();
                let i = (f as i64).rem_euclid(axis.n as i64) as usize;
                lo[d] = i;
                hi[d] = (i + 1) % axis.n;
                w[d] = r - f;
            } else {
                let last = (axis.n - 1) as f64;
                if !(r >= -1e-9 && r <= last + 1e-9) {
                    return None;
                }
                let r = r.clamp(0.0, last);
                let i = (r.floor() as usize).min(axis.n - 2);
                lo[d] = i;
                hi[d] = i + 1;
                w[d] = r - i as f64;
            }
        }
        let mut acc = 0.0;
        for corner in 0..16u32 {
            let mut weight = 1.0;
            let mut idx = [0usize; 4];
            for d in 0..4 {
                if corner >> d & 1 == 1 {
                    idx[d] = hi[d];
                    weight *= w[d];
                } else {
                    idx[d] = lo[d];
                    weight *= 1.0 - w[d];
                }
            }
            if weight != 0.0 {
                acc += weight * values[self.index(idx)] as f64;
            }
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_documented_shape() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!(g.shape(), [111, 101, 61, 45]);
        assert!((g.x.spacing() - 0.5).abs() < 1e-12);
        assert!((g.y.spacing() - 0.5).abs() < 1e-12);
        assert!((g.v.spacing() - 0.5).abs() < 1e-12);
        assert!((g.theta.spacing() - 2.0 * PI / 61.0).abs() < 1e-12);
    }

    #[test]
    fn index_round_trip() {
        let g = GridSpec {
            x: Axis::new(0.0, 1.0, 4),
            y: Axis::new(0.0, 1.0, 5),
            theta: Axis::heading(6),
            v: Axis::new(0.0, 1.0, 7),
        };
        for flat in 0..g.len() {
            assert_eq!(g.index(g.unravel(flat)), flat);
        }
        assert_eq!(g.index([1, 0, 0, 0]), 5 * 6 * 7);
    }

    #[test]
    fn rejects_degenerate_axes() {
        let mut g = GridSpec::default();
        g.v.n = 2;
        assert!(g.validate().is_err());
        let mut g = GridSpec::default();
        g.x.hi = g.x.lo;
        assert!(g.validate().is_err());
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = GridSpec {
            x: Axis::new(-1.0, 1.0, 5),
            y: Axis::new(-1.0, 2.0, 4),
            theta: Axis::heading(8),
            v: Axis::new(0.0, 3.0, 4),
        };
        let vals: Vec<f32> = (0..g.len())
            .map(|i| {
                let n = g.node(g.unravel(i));
                (2.0 * n[0] - n[1] + 0.5 * n[3]) as f32
            })
            .collect();
        let s = [0.3, 0.7, 0.2, 1.9];
        let got = g.interpolate(&vals, s).unwrap();
        assert!((got - (0.6 - 0.7 + 0.95)).abs() < 1e-5);
        assert!(g.interpolate(&vals, [5.0, 0.0, 0.0, 1.0]).is_none());
    }
}
