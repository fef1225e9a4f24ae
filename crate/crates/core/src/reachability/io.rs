//! Value-function files and CSV exports.
//!
//! A value file is little-endian throughout:
//!
//! ```text
//! "FRTV1" 0x01 0x00 0x00                       magic, format version, padding
//! 4 × (lo: f64, hi: f64, n: u64, periodic: u8) x, y, θ, v axes
//! horizon: f64
//! v_start: f64, 8 × f64                         key; endpoints as
//!                                               u_min_start, u_max_start,
//!                                               u_min_end, u_max_end
//! 3 × f64                                       initial-set margins
//! count: u64, count × f32                       V in x-major order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::grid::{Axis, GridSpec};
use super::solver::{initial_value, FrtQueryKey, InitialSetMargins, ValueFunction};
use crate::error::{Error, Result};
use crate::prediction::ControlBoundsEndpoints;
use crate::safety::OccupancyGrid2D;

const MAGIC: &[u8; 5] = b"FRTV1";
const VERSION: u8 = 1;

pub fn write_value_function(path: &Path, vf: &ValueFunction) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, vf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, vf: &ValueFunction) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, 0, 0])?;
    for axis in vf.grid.axes() {
        w.write_all(&axis.lo.to_le_bytes())?;
        w.write_all(&axis.hi.to_le_bytes())?;
        w.write_all(&(axis.n as u64).to_le_bytes())?;
        w.write_all(&[axis.periodic as u8])?;
    }
    let ep = &vf.key.endpoints;
    let mut scalars = vec![vf.horizon, vf.key.v_start];
    for pair in [ep.u_min_start, ep.u_max_start, ep.u_min_end, ep.u_max_end] {
        scalars.extend(pair);
    }
    scalars.extend([vf.margins.position, vf.margins.speed, vf.margins.heading]);
    for s in scalars {
        w.write_all(&s.to_le_bytes())?;
    }
    w.write_all(&(vf.values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in vf.values.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

/// Load a value file. The initial-set array is recomputed from the header.
pub fn read_value_function(path: &Path) -> Result<ValueFunction> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("{} is truncated", path.display()))
        } else {
            Error::io(path, e)
        }
    };
    let head: [u8; 8] = r.bytes().map_err(truncated)?;
    if &head[..5] != MAGIC {
        return Err(Error::Format(format!("{} is not a value file", path.display())));
    }
    if head[5] != VERSION {
        return Err(Error::Format(format!("unsupported value file version {}", head[5])));
    }
    let mut axes = Vec::with_capacity(4);
    for _ in 0..4 {
        let lo = r.f64().map_err(truncated)?;
        let hi = r.f64().map_err(truncated)?;
        let n = r.u64().map_err(truncated)? as usize;
        let [periodic] = r.bytes::<1>().map_err(truncated)?;
        axes.push(Axis {
            lo,
            hi,
            n,
            periodic: periodic != 0,
        });
    }
    let grid = GridSpec {
        x: axes[0],
        y: axes[1],
        theta: axes[2],
        v: axes[3],
    };
    grid.validate()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut s = [0.0f64; 13];
    for v in s.iter_mut() {
        *v = r.f64().map_err(truncated)?;
    }
    let key = FrtQueryKey {
        v_start: s[1],
        endpoints: ControlBoundsEndpoints {
            u_min_start: [s[2], s[3]],
            u_max_start: [s[4], s[5]],
            u_min_end: [s[6], s[7]],
            u_max_end: [s[8], s[9]],
        },
    };
    let margins = InitialSetMargins {
        position: s[10],
        speed: s[11],
        heading: s[12],
    };
    let count = r.u64().map_err(truncated)? as usize;
    if count != grid.len() {
        return Err(Error::Format(format!(
            "{} holds {count} values for a grid of {} nodes",
            path.display(),
            grid.len()
        )));
    }
    let mut raw = vec![0u8; 4 * count];
    r.inner.read_exact(&mut raw).map_err(truncated)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{} contains non-finite values", path.display())));
    }
    let l_values = initial_value(&grid, key.v_start, &margins)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Ok(ValueFunction {
        grid,
        key,
        horizon: s[0],
        margins,
        values,
        l_values,
        snapshots: Vec::new(),
    })
}

/// `x,y,value` rows of V over the position plane at fixed heading and speed
/// node indices.
pub fn slice_csv(vf: &ValueFunction, theta_index: usize, v_index: usize) -> Result<String> {
    let g = &vf.grid;
    if theta_index >= g.theta.n || v_index >= g.v.n {
        return Err(Error::InvalidArgument(format!(
            "slice indices ({theta_index}, {v_index}) outside the grid"
        )));
    }
    let mut out = format!(
        "# theta={} v={}\nx,y,value\n",
        g.theta.coord(theta_index),
        g.v.coord(v_index)
    );
    for ix in 0..g.x.n {
        for iy in 0..g.y.n {
            let v = vf.values[g.index([ix, iy, theta_index, v_index])];
            out.push_str(&format!("{},{},{}\n", g.x.coord(ix), g.y.coord(iy), v));
        }
    }
    Ok(out)
}

/// Occupancy grid as CSV: a header line with the geometry, then one row per
/// grid row (fixed y index, increasing x) of `0`/`1` flags.
pub fn occupancy_to_csv(k: &OccupancyGrid2D) -> String {
    let mut out = format!(
        "# origin_x={} origin_y={} cell={} nx={} ny={}\n",
        k.origin[0], k.origin[1], k.cell, k.nx, k.ny
    );
    for j in 0..k.ny {
        let row: Vec<&str> = (0..k.nx).map(|i| if k.get(i, j) { "1" } else { "0" }).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn occupancy_from_csv(text: &str) -> Result<OccupancyGrid2D> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix("# "))
        .ok_or_else(|| Error::Format("occupancy CSV lacks its header line".into()))?;
    let mut fields = std::collections::HashMap::new();
    for part in header.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header field {part:?}")))?;
        fields.insert(k, v);
    }
    let num = |k: &str| -> Result<f64> {
        fields
            .get(k)
            .ok_or_else(|| Error::Format(format!("header lacks {k}")))?
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("header field {k}: {e}")))
    };
    let nx = num("nx")? as usize;
    let ny = num("ny")? as usize;
    let mut k = OccupancyGrid2D::empty([num("origin_x")?, num("origin_y")?], num("cell")?, nx, ny)?;
    for j in 0..ny {
        let row = lines
            .next()
            .ok_or_else(|| Error::Format(format!("occupancy CSV has {j} rows, expected {ny}")))?;
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != nx {
            return Err(Error::Format(format!(
                "row {j} has {} cells, expected {nx}",
                cells.len()
            )));
        }
        for (i, c) in cells.into_iter().enumerate() {
            match c.trim() {
                "1" => k.set(i, j, true),
                "0" => {}
                other => return Err(Error::Format(format!("bad cell value {other:?}"))),
            }
        }
    }
    Ok(k)
}
