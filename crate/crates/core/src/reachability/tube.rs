use super::grid::GridSpec;
use super::solver::ValueFunction;
use crate::error::{Error, Result};
use crate::safety::OccupancyGrid2D;

/// Boolean mask over the nodes of a 4-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeMask {
    pub grid: GridSpec,
    pub cells: Vec<bool>,
}

impl TubeMask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|c| *c)
    }

    /// Whether the node nearest to `state` is in the mask.
    pub fn contains(&self, state: [f64; 4]) -> bool {
        self.grid
            .nearest(state)
            .is_some_and(|idx| self.cells[self.grid.index(idx)])
    }

    /// Nodes in `self` that are missing from `other`.
    pub fn excess_over(&self, other: &TubeMask) -> usize {
        self.cells.iter().zip(&other.cells).filter(|(a, b)| **a && !**b).count()
    }
}

/// Nodes with `V < threshold`. A positive threshold inflates the tube.
pub fn frt_set(vf: &ValueFunction, threshold: f64) -> Result<TubeMask> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tube threshold must be finite and >= 0, got {threshold}"
        )));
    }
    Ok(TubeMask {
        grid: vf.grid,
        cells: vf.values.iter().map(|v| (*v as f64) < threshold).collect(),
    })
}

/// Positions reached at any heading and speed.
pub fn project_positions(mask: &TubeMask) -> OccupancyGrid2D {
    let g = &mask.grid;
    let [nx, ny, _, _] = g.shape();
    let [sx, sy, _, _] = g.strides();
    let mut k =
        OccupancyGrid2D::empty([g.x.lo, g.y.lo], g.x.spacing(), nx, ny).expect("validated grids have positive spacing");
    for ix in 0..nx {
        for iy in 0..ny {
            let base = ix * sx + iy * sy;
            if mask.cells[base..base + sy].iter().any(|c| *c) {
                k.set(ix, iy, true);
            }
        }
    }
    k
}
