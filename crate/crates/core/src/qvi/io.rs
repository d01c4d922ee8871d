//! Grid export: plot-ready CSV and a reloadable binary dump.
//!
//! Binary layout (little endian): 4-byte magic, `u32` format version,
//! `u32` header length, JSON header, then the payload as `f64` (values) or
//! `u32` triples (region, action, impulse) per entry.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::solver::{PolicyGrid, Region, SchemeOrdering, ValueGrid};
use crate::error::{Error, Result};

pub const VALUE_MAGIC: &[u8; 4] = b"IGVG";
pub const POLICY_MAGIC: &[u8; 4] = b"IGPG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    ordering: SchemeOrdering,
    level: Option<usize>,
    tol: Option<f64>,
    entries: usize,
}

/// One row per (time slice, node): `t, x_1..x_n, value, region, action_index, impulse_index`.
/// Policy columns are left empty without a policy grid; `impulse_index` is
/// empty outside the intervention region.
pub fn write_grid_csv<W: Write>(values: &ValueGrid, policy: Option<&PolicyGrid>, mut w: W) -> Result<()> {
    let grid = &values.grid;
    if let Some(p) = policy {
        if p.grid != *grid {
            return Err(Error::GridMismatch("policy and value grids differ".into()));
        }
    }
    let xs: Vec<String> = (1..=grid.dim()).map(|i| format!("x_{i}")).collect();
    writeln!(w, "t,{},value,region,action_index,impulse_index", xs.join(","))?;
    let coords: Vec<String> = (0..grid.node_count())
        .map(|k| {
            grid.coords(k)
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    for n in 0..=grid.time_steps {
        let t = grid.time(n);
        for (k, c) in coords.iter().enumerate() {
            let (region, action, impulse) = match policy {
                Some(p) => {
                    let (r, a, b) = p.at(n, k);
                    match r {
                        Region::Continuation => ("continuation", a.to_string(), String::new()),
                        Region::Intervention => ("intervention", a.to_string(), b.to_string()),
                    }
                }
                None => ("", String::new(), String::new()),
            };
            writeln!(w, "{t:?},{c},{:?},{region},{action},{impulse}", values.value(n, k))?;
        }
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], header: &Header) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Header> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Io(format!("bad magic {m:?}, expected {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Io(format!("unsupported dump version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| Error::Io(format!("corrupt header: {e}")))
}

/// Which kind of grid a dump holds, from its magic bytes.
pub fn sniff(bytes: &[u8]) -> Option<&'static str> {
    match bytes.get(..4)? {
        m if m == VALUE_MAGIC => Some("value"),
        m if m == POLICY_MAGIC => Some("policy"),
        _ => None,
    }
}

impl ValueGrid {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            grid: self.grid.clone(),
            ordering: self.ordering,
            level: self.level,
            tol: None,
            entries: self.values.len(),
        };
        write_header(&mut w, VALUE_MAGIC, &header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<ValueGrid> {
        let h = read_header(&mut r, VALUE_MAGIC)?;
        if h.entries != (h.grid.time_steps + 1) * h.grid.node_count() {
            return Err(Error::GridMismatch("entry count does not match the grid".into()));
        }
        let mut values = Vec::with_capacity(h.entries);
        let mut b = [0u8; 8];
        for _ in 0..h.entries {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        Ok(ValueGrid {
            grid: h.grid,
            ordering: h.ordering,
            level: h.level,
            values,
        })
    }
}

impl PolicyGrid {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            grid: self.grid.clone(),
            ordering: self.ordering,
            level: None,
            tol: Some(self.tol),
            entries: self.region.len(),
        };
        write_header(&mut w, POLICY_MAGIC, &header)?;
        for k in 0..self.region.len() {
            let r = u32::from(self.region[k] == Region::Intervention);
            for v in [r, self.action[k] as u32, self.impulse[k] as u32] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<PolicyGrid> {
        let h = read_header(&mut r, POLICY_MAGIC)?;
        if h.entries != (h.grid.time_steps + 1) * h.grid.node_count() {
            return Err(Error::GridMismatch("entry count does not match the grid".into()));
        }
        let mut pol = PolicyGrid {
            grid: h.grid,
            ordering: h.ordering,
            tol: h.tol.unwrap_or(0.0),
            region: Vec::with_capacity(h.entries),
            action: Vec::with_capacity(h.entries),
            impulse: Vec::with_capacity(h.entries),
        };
        for _ in 0..h.entries {
            pol.region.push(if read_u32(&mut r)? == 1 {
                Region::Intervention
            } else {
                Region::Continuation
            });
            pol.action.push(read_u32(&mut r)? as usize);
            pol.impulse.push(read_u32(&mut r)? as usize);
        }
        Ok(pol)
    }
}
