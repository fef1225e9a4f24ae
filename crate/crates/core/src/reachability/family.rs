//! Tubes indexed by the human's start speed and the control-bound endpoints.
//!
//! Each lattice point is an independent solve. Queries between knots snap
//! outward so that the returned tube is never smaller than the one asked for.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::io;
use super::solver::{solve_frt, FrtQueryKey, SolverSettings, ValueFunction};
use crate::dynamics::{ACCEL_CAP, STEER_RATE_CAP};
use crate::error::{Error, Result};
use crate::prediction::ControlBoundsEndpoints;

/// Knot indices along the nine lattice axes, in the order of [`Lattice::axes`].
pub type LatticeIndex = [usize; 9];

const KNOT_TOL: f64 = 1e-9;

/// Sorted knot vectors for the start speed and each endpoint component
/// (`[u1, u2]` per endpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub v_start: Vec<f64>,
    pub u_min_start: [Vec<f64>; 2],
    pub u_max_start: [Vec<f64>; 2],
    pub u_min_end: [Vec<f64>; 2],
    pub u_max_end: [Vec<f64>; 2],
}

impl Default for Lattice {
    /// Speeds every 1 m/s up to 13 m/s, steering-rate knots every
    /// 0.25 rad/s and acceleration knots every 1 m/s² across the caps.
    fn default() -> Self {
        let u1 = knots(-STEER_RATE_CAP, STEER_RATE_CAP, 0.25);
        let u2 = knots(-ACCEL_CAP, ACCEL_CAP, 1.0);
        Self {
            v_start: knots(0.0, 13.0, 1.0),
            u_min_start: [u1.clone(), u2.clone()],
            u_max_start: [u1.clone(), u2.clone()],
            u_min_end: [u1.clone(), u2.clone()],
            u_max_end: [u1, u2],
        }
    }
}

/// `lo, lo + step, …` up to and including `hi` (within round-off).
pub fn knots(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl Lattice {
    /// A lattice holding exactly one key.
    pub fn single(key: &FrtQueryKey) -> Self {
        let ep = &key.endpoints;
        let one = |v: [f64; 2]| [vec![v[0]], vec![v[1]]];
        Self {
            v_start: vec![key.v_start],
            u_min_start: one(ep.u_min_start),
            u_max_start: one(ep.u_max_start),
            u_min_end: one(ep.u_min_end),
            u_max_end: one(ep.u_max_end),
        }
    }

    pub fn axes(&self) -> [&[f64]; 9] {
        [
            &self.v_start,
            &self.u_min_start[0],
            &self.u_min_start[1],
            &self.u_max_start[0],
            &self.u_max_start[1],
            &self.u_min_end[0],
            &self.u_min_end[1],
            &self.u_max_end[0],
            &self.u_max_end[1],
        ]
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        const NAMES: [&str; 9] = [
            "v_start",
            "u_min_start.u1",
            "u_min_start.u2",
            "u_max_start.u1",
            "u_max_start.u2",
            "u_min_end.u1",
            "u_min_end.u2",
            "u_max_end.u1",
            "u_max_end.u2",
        ];
        for (d, axis) in self.axes().into_iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::Config(format!("lattice axis {} has no knots", NAMES[d])));
            }
            if axis.iter().any(|k| !k.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "lattice axis {} must be finite and strictly increasing",
                    NAMES[d]
                )));
            }
            let (lo, hi) = match d {
                0 => (grid.v.lo, grid.v.hi),
                d if d % 2 == 1 => (-STEER_RATE_CAP, STEER_RATE_CAP),
                _ => (-ACCEL_CAP, ACCEL_CAP),
            };
            if axis[0] < lo - KNOT_TOL || axis[axis.len() - 1] > hi + KNOT_TOL {
                return Err(Error::Config(format!(
                    "lattice axis {} leaves the admissible range [{lo}, {hi}]",
                    NAMES[d]
                )));
            }
        }
        Ok(())
    }

    pub fn key_at(&self, idx: &LatticeIndex) -> FrtQueryKey {
        let a = self.axes();
        let k = |d: usize| a[d][idx[d]];
        FrtQueryKey {
            v_start: k(0),
            endpoints: ControlBoundsEndpoints {
                u_min_start: [k(1), k(2)],
                u_max_start: [k(3), k(4)],
                u_min_end: [k(5), k(6)],
                u_max_end: [k(7), k(8)],
            },
        }
    }

    /// Extra speed margin for entries at start-speed knot `i`: half the wider
    /// of the adjacent knot gaps. Every start speed is then within the padded
    /// initial set of its nearest knot, so the union of the two bracketing
    /// entries contains the tube of any speed between them.
    pub fn speed_padding(&self, i: usize) -> f64 {
        let v = &self.v_start;
        let left = if i > 0 { v[i] - v[i - 1] } else { 0.0 };
        let right = if i + 1 < v.len() { v[i + 1] - v[i] } else { 0.0 };
        0.5 * left.max(right)
    }

    /// Solver settings used for the entry at `idx`.
    pub fn entry_settings(&self, idx: &LatticeIndex, settings: &SolverSettings) -> SolverSettings {
        let mut s = *settings;
        s.margins.speed += self.speed_padding(idx[0]);
        s
    }

    /// All lattice points whose bounds are ordered (`min ≤ max`).
    pub fn indices(&self) -> Vec<LatticeIndex> {
        let sizes = self.axes().map(|a| a.len());
        let total: usize = sizes.iter().product();
        let mut out = Vec::new();
        for flat in 0..total {
            let mut idx = [0usize; 9];
            let mut rest = flat;
            for d in (0..9).rev() {
                idx[d] = rest % sizes[d];
                rest /= sizes[d];
            }
            if self.key_at(&idx).endpoints.validate().is_ok() {
                out.push(idx);
            }
        }
        out
    }

    /// Lattice points covering `key`: bounds snapped outward and the start
    /// speed snapped to the knot itself or to both neighbours.
    pub fn snap(&self, key: &FrtQueryKey) -> Result<Vec<LatticeIndex>> {
        let a = self.axes();
        let ep = &key.endpoints;
        let mins = [ep.u_min_start[0], ep.u_min_start[1]];
        let maxs = [ep.u_max_start[0], ep.u_max_start[1]];
        let mins_end = [ep.u_min_end[0], ep.u_min_end[1]];
        let maxs_end = [ep.u_max_end[0], ep.u_max_end[1]];
        let mut idx = [0usize; 9];
        let targets = [
            (1, mins[0], false),
            (2, mins[1], false),
            (3, maxs[0], true),
            (4, maxs[1], true),
            (5, mins_end[0], false),
            (6, mins_end[1], false),
            (7, maxs_end[0], true),
            (8, maxs_end[1], true),
        ];
        for (d, value, up) in targets {
            idx[d] = snap_outward(a[d], value, up).ok_or_else(|| {
                Error::OutOfRange(format!(
                    "bound component {value} has no {} knot on axis {d}",
                    if up { "upper" } else { "lower" }
                ))
            })?;
        }
        let v = a[0];
        if let Some(i) = v.iter().position(|k| (k - key.v_start).abs() <= KNOT_TOL) {
            idx[0] = i;
            return Ok(vec![idx]);
        }
        let upper = v.iter().position(|k| *k > key.v_start);
        match upper {
            Some(i) if i > 0 => {
                let mut lo = idx;
                lo[0] = i - 1;
                idx[0] = i;
                Ok(vec![lo, idx])
            }
            _ => Err(Error::OutOfRange(format!(
                "v_start {} outside the knot range [{}, {}]",
                key.v_start,
                v[0],
                v[v.len() - 1]
            ))),
        }
    }
}

/// Largest knot `≤ value` (`up = false`) or smallest knot `≥ value`.
fn snap_outward(knots: &[f64], value: f64, up: bool) -> Option<usize> {
    if !value.is_finite() {
        return None;
    }
    if up {
        knots.iter().position(|k| *k >= value - KNOT_TOL)
    } else {
        knots.iter().rposition(|k| *k <= value + KNOT_TOL)
    }
}

/// Solved lattice points sharing one grid, horizon and solver settings.
#[derive(Debug, Clone)]
pub struct FrtFamily {
    pub lattice: Lattice,
    pub grid: GridSpec,
    pub horizon: f64,
    pub settings: SolverSettings,
    pub entries: BTreeMap<LatticeIndex, Arc<ValueFunction>>,
}

fn key_label(key: &FrtQueryKey) -> String {
    let ep = &key.endpoints;
    format!(
        "v_start={} u_min_start={:?} u_max_start={:?} u_min_end={:?} u_max_end={:?}",
        key.v_start, ep.u_min_start, ep.u_max_start, ep.u_min_end, ep.u_max_end
    )
}

fn solve_key(
    lattice: &Lattice,
    idx: &LatticeIndex,
    grid: &GridSpec,
    horizon: f64,
    settings: &SolverSettings,
) -> Result<ValueFunction> {
    let key = lattice.key_at(idx);
    let settings = lattice.entry_settings(idx, settings);
    solve_frt(key.v_start, &key.endpoints, grid, horizon, &settings).map_err(|e| Error::Key {
        key: key_label(&key),
        source: Box::new(e),
    })
}

/// Solve every ordered lattice point. Solves run in parallel.
pub fn family_precompute(
    lattice: &Lattice,
    grid: &GridSpec,
    horizon: f64,
    settings: &SolverSettings,
) -> Result<FrtFamily> {
    grid.validate()?;
    lattice.validate(grid)?;
    let indices = lattice.indices();
    let solved: Vec<(LatticeIndex, Arc<ValueFunction>)> = indices
        .par_iter()
        .map(|idx| solve_key(lattice, idx, grid, horizon, settings).map(|vf| (*idx, Arc::new(vf))))
        .collect::<Result<_>>()?;
    Ok(FrtFamily {
        lattice: lattice.clone(),
        grid: *grid,
        horizon,
        settings: *settings,
        entries: solved.into_iter().collect(),
    })
}

fn merge(parts: Vec<Arc<ValueFunction>>, key: &FrtQueryKey) -> Result<Arc<ValueFunction>> {
    match parts.as_slice() {
        [one] => Ok(one.clone()),
        [a, b] => Ok(Arc::new(a.union(b, *key)?)),
        _ => unreachable!("snapping yields one or two lattice points"),
    }
}

/// Tube for `key` from the stored entries.
pub fn family_query(family: &FrtFamily, key: &FrtQueryKey) -> Result<Arc<ValueFunction>> {
    let parts = family
        .lattice
        .snap(key)?
        .into_iter()
        .map(|idx| {
            family.entries.get(&idx).cloned().ok_or_else(|| {
                Error::OutOfRange(format!(
                    "lattice point {} was not precomputed",
                    key_label(&family.lattice.key_at(&idx))
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    merge(parts, key)
}

/// On-disk index of a precomputed family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub lattice: Lattice,
    pub grid: GridSpec,
    pub horizon: f64,
    pub settings: SolverSettings,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: LatticeIndex,
    pub key: FrtQueryKey,
    /// Path relative to the manifest.
    pub file: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// File name for a lattice point.
pub fn entry_file_name(idx: &LatticeIndex) -> String {
    let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
    format!("frt_{}.frtv", parts.join("_"))
}

/// Progress of a resumable precompute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrecomputeReport {
    pub solved: usize,
    pub skipped: usize,
}

/// Solve the lattice into `dir`, one value file per point plus a manifest.
/// Points whose file already exists are not solved again. Solves run one at
/// a time so that memory stays bounded by a single grid.
pub fn precompute_to_dir(
    lattice: &Lattice,
    grid: &GridSpec,
    horizon: f64,
    settings: &SolverSettings,
    dir: &Path,
    mut progress: impl FnMut(&FrtQueryKey, bool),
) -> Result<PrecomputeReport> {
    grid.validate()?;
    lattice.validate(grid)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let old = read_manifest(&manifest_path)?;
        if old.grid != *grid || old.horizon != horizon || old.settings != *settings {
            return Err(Error::Config(format!(
                "{} was written for a different grid, horizon or solver settings",
                manifest_path.display()
            )));
        }
    }
    let mut report = PrecomputeReport::default();
    let mut entries = Vec::new();
    for idx in lattice.indices() {
        let key = lattice.key_at(&idx);
        let file = entry_file_name(&idx);
        let path = dir.join(&file);
        let fresh = !path.exists();
        if fresh {
            let vf = solve_key(lattice, &idx, grid, horizon, settings)?;
            io::write_value_function(&path, &vf).map_err(|e| Error::Key {
                key: key_label(&key),
                source: Box::new(e),
            })?;
            report.solved += 1;
        } else {
            report.skipped += 1;
        }
        progress(&key, fresh);
        entries.push(ManifestEntry { index: idx, key, file });
    }
    let manifest = FamilyManifest {
        lattice: lattice.clone(),
        grid: *grid,
        horizon,
        settings: *settings,
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(report)
}

pub fn read_manifest(path: &Path) -> Result<FamilyManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl FrtFamily {
    /// Load a family written by [`precompute_to_dir`].
    pub fn load(manifest_path: &Path) -> Result<FrtFamily> {
        let manifest = read_manifest(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut entries = BTreeMap::new();
        for entry in &manifest.entries {
            let vf = io::read_value_function(&dir.join(&entry.file))?;
            let margins = manifest
                .lattice
                .entry_settings(&entry.index, &manifest.settings)
                .margins;
            if vf.grid != manifest.grid
                || vf.horizon != manifest.horizon
                || vf.key != entry.key
                || vf.margins != margins
            {
                return Err(Error::Format(format!(
                    "{} does not match its manifest entry",
                    entry.file
                )));
            }
            entries.insert(entry.index, Arc::new(vf));
        }
        Ok(FrtFamily {
            lattice: manifest.lattice,
            grid: manifest.grid,
            horizon: manifest.horizon,
            settings: manifest.settings,
            entries,
        })
    }
}

/// Lattice-snapped tubes solved on demand and kept in a small LRU cache,
/// optionally backed by a precomputed family and a directory of value files.
pub struct TubeCache {
    lattice: Lattice,
    grid: GridSpec,
    horizon: f64,
    settings: SolverSettings,
    family: Option<Arc<FrtFamily>>,
    memory: Mutex<LruCache<LatticeIndex, Arc<ValueFunction>>>,
    disk: Option<PathBuf>,
    solves: Mutex<usize>,
}

impl TubeCache {
    pub fn new(
        lattice: Lattice,
        grid: GridSpec,
        horizon: f64,
        settings: SolverSettings,
        capacity: usize,
    ) -> Result<Self> {
        grid.validate()?;
        lattice.validate(&grid)?;
        let capacity =
            NonZeroUsize::new(capacity).ok_or_else(|| Error::Config("cache capacity must be positive".into()))?;
        Ok(Self {
            lattice,
            grid,
            horizon,
            settings,
            family: None,
            memory: Mutex::new(LruCache::new(capacity)),
            disk: None,
            solves: Mutex::new(0),
        })
    }

    /// Serve lattice points from `family` when it was solved with the same
    /// lattice, grid, horizon and settings.
    pub fn with_family(mut self, family: Arc<FrtFamily>) -> Result<Self> {
        if family.lattice != self.lattice
            || family.grid != self.grid
            || family.horizon != self.horizon
            || family.settings != self.settings
        {
            return Err(Error::Config(
                "family was precomputed for a different lattice, grid, horizon or solver settings".into(),
            ));
        }
        self.family = Some(family);
        Ok(self)
    }

    /// Persist solved lattice points under `dir` and reuse them across runs.
    pub fn with_disk(mut self, dir: PathBuf) -> Self {
        self.disk = Some(dir);
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// Number of fresh solves performed so far.
    pub fn solves(&self) -> usize {
        *self.solves.lock().expect("cache lock")
    }

    fn disk_path(&self, idx: &LatticeIndex) -> Option<PathBuf> {
        let dir = self.disk.as_ref()?;
        let fingerprint = serde_json::to_string(&(&self.grid, self.horizon, &self.settings)).expect("serializes");
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        fingerprint.hash(&mut h);
        let key = self.lattice.key_at(idx);
        serde_json::to_string(&key).expect("serializes").hash(&mut h);
        Some(dir.join(format!("frt_{:016x}.frtv", h.finish())))
    }

    fn entry(&self, idx: &LatticeIndex) -> Result<Arc<ValueFunction>> {
        if let Some(vf) = self.memory.lock().expect("cache lock").get(idx) {
            return Ok(vf.clone());
        }
        let key = self.lattice.key_at(idx);
        let margins = self.lattice.entry_settings(idx, &self.settings).margins;
        let vf = if let Some(vf) = self.family.as_ref().and_then(|f| f.entries.get(idx)) {
            vf.clone()
        } else {
            let path = self.disk_path(idx);
            let cached = path
                .as_ref()
                .filter(|p| p.exists())
                .and_then(|p| io::read_value_function(p).ok())
                .filter(|vf| {
                    vf.grid == self.grid && vf.horizon == self.horizon && vf.key == key && vf.margins == margins
                });
            match cached {
                Some(vf) => Arc::new(vf),
                None => {
                    let vf = solve_key(&self.lattice, idx, &self.grid, self.horizon, &self.settings)?;
                    *self.solves.lock().expect("cache lock") += 1;
                    if let Some(p) = &path {
                        if let Err(e) = std::fs::create_dir_all(self.disk.as_ref().unwrap())
                            .map_err(|e| Error::io(p, e))
                            .and_then(|_| io::write_value_function(p, &vf))
                        {
                            log::warn!("could not write tube cache entry: {e}");
                        }
                    }
                    Arc::new(vf)
                }
            }
        };
        self.memory.lock().expect("cache lock").put(*idx, vf.clone());
        Ok(vf)
    }

    /// Tube for `key`, snapped outward onto the lattice.
    pub fn query(&self, key: &FrtQueryKey) -> Result<Arc<ValueFunction>> {
        let parts = self
            .lattice
            .snap(key)?
            .iter()
            .map(|idx| self.entry(idx))
            .collect::<Result<Vec<_>>>()?;
        merge(parts, key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Lattice {
        Lattice {
            v_start: vec![0.0, 1.0, 2.0],
            u_min_start: [vec![-1.0, -0.5, 0.5], vec![-2.0, 0.0]],
            u_max_start: [vec![0.0, 1.0, 1.5], vec![0.0, 2.0]],
            u_min_end: [vec![-1.0, 0.0], vec![-2.0, 0.0]],
            u_max_end: [vec![0.0, 1.0], vec![0.0, 2.0]],
        }
    }

    fn key(v: f64, lo: [f64; 2], hi: [f64; 2]) -> FrtQueryKey {
        FrtQueryKey {
            v_start: v,
            endpoints: ControlBoundsEndpoints::constant(lo, hi),
        }
    }

    #[test]
    fn default_lattice_spacing() {
        let l = Lattice::default();
        assert_eq!(l.v_start.len(), 14);
        assert_eq!(l.u_min_start[0].len(), 17);
        assert_eq!(l.u_max_end[1].len(), 21);
        assert!((l.u_min_start[0][3] - -1.25).abs() < 1e-12);
        l.validate(&GridSpec::default()).unwrap();
    }

    #[test]
    fn snapping_widens_bounds() {
        let l = small();
        let mut k = key(1.0, [-0.7, -1.0], [1.2, 1.0]);
        k.endpoints.u_max_end = [0.3, 1.0];
        let got = l.snap(&k).unwrap();
        assert_eq!(got.len(), 1);
        let k = l.key_at(&got[0]);
        assert_eq!(k.endpoints.u_min_start, [-1.0, -2.0]);
        assert_eq!(k.endpoints.u_max_start, [1.5, 2.0]);
        assert_eq!(k.endpoints.u_max_end, [1.0, 2.0]);
        assert_eq!(k.endpoints.u_min_end, [-1.0, -2.0]);
    }

    #[test]
    fn exact_knots_snap_to_themselves() {
        let l = small();
        let got = l.snap(&key(2.0, [-0.5, 0.0], [0.0, 0.0])).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(l.key_at(&got[0]).endpoints.u_min_start, [-0.5, 0.0]);
        assert_eq!(l.key_at(&got[0]).v_start, 2.0);
    }

    #[test]
    fn speed_between_knots_uses_both_neighbours() {
        let l = small();
        let got = l.snap(&key(1.5, [0.0, 0.0], [0.0, 0.0])).unwrap();
        let speeds: Vec<f64> = got.iter().map(|i| l.key_at(i).v_start).collect();
        assert_eq!(speeds, vec![1.0, 2.0]);
    }

    #[test]
    fn outside_the_lattice_is_out_of_range() {
        let l = small();
        assert!(matches!(
            l.snap(&key(2.5, [0.0; 2], [0.0; 2])),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            l.snap(&key(1.0, [-1.5, 0.0], [0.0; 2])),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            l.snap(&key(1.0, [0.0; 2], [1.7, 0.0])),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn speed_padding_is_half_the_wider_gap() {
        let mut l = small();
        l.v_start = vec![0.0, 1.0, 3.0];
        assert_eq!(l.speed_padding(0), 0.5);
        assert_eq!(l.speed_padding(1), 1.0);
        assert_eq!(l.speed_padding(2), 1.0);
        assert_eq!(Lattice::single(&key(2.0, [0.0; 2], [0.0; 2])).speed_padding(0), 0.0);
    }

    #[test]
    fn indices_skip_inverted_bounds() {
        let l = small();
        let all: usize = l.axes().iter().map(|a| a.len()).product();
        let idx = l.indices();
        assert!(idx.len() < all);
        assert!(idx.iter().all(|i| l.key_at(i).endpoints.validate().is_ok()));
    }

    #[test]
    fn validation_rejects_bad_knots() {
        let g = GridSpec::default();
        let mut l = small();
        l.v_start = vec![1.0, 1.0];
        assert!(l.validate(&g).is_err());
        let mut l = small();
        l.u_max_end[1] = vec![11.0];
        assert!(l.validate(&g).is_err());
        let mut l = small();
        l.u_min_start[0] = vec![];
        assert!(l.validate(&g).is_err());
    }
}
