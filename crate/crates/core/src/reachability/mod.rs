//! Forward reachable tubes of the human on a 4-D grid.

pub mod family;
pub mod grid;
pub mod io;
pub mod solver;
pub mod tube;

pub use family::{
    family_precompute, family_query, precompute_to_dir, FamilyManifest, FrtFamily, Lattice, LatticeIndex,
    PrecomputeReport, TubeCache, MANIFEST_FILE,
};
pub use grid::{Axis, GridSpec};
pub use solver::{
    hamiltonian, initial_value, solve_frt, stable_step, time_stepping, FrtQueryKey, InitialSetMargins, Snapshot,
    SolverSettings, TimeStepping, ValueFunction,
};
pub use tube::{frt_set, project_positions, TubeMask};
