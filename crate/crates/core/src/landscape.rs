//! Map-level Interspersion and Juxtaposition Index (IJI).
//!
//! Edges are rook (4-neighbour) adjacencies between pixels of different
//! classes, one pixel side each. NODATA pixels contribute no edges.

use std::io::Write;

use crate::accuracy::fmt_opt;
use crate::error::{Error, Result};
use crate::grid::{LabelRaster, NODATA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTable {
    n_classes: usize,
    /// Number of classes with at least one pixel.
    pub m: usize,
    /// Symmetric `n_classes x n_classes` edge lengths; the diagonal is zero.
    edges: Vec<u64>,
    pub total: u64,
}

impl EdgeTable {
    pub fn edge(&self, a: usize, b: usize) -> u64 {
        self.edges[a * self.n_classes + b]
    }

    /// `(a, b, e_ab)` for every class pair `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let n = self.n_classes;
        (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b, self.edge(a, b))))
    }
}

pub fn edge_table(map: &LabelRaster) -> EdgeTable {
    let shape = map.shape();
    let (w, h, n) = (shape.width(), shape.height(), shape.n_classes());
    let v = map.values();
    let mut edges = vec![0u64; n * n];
    let mut add = |a: u8, b: u8| {
        if a != b && a != NODATA && b != NODATA {
            edges[a as usize * n + b as usize] += 1;
            edges[b as usize * n + a as usize] += 1;
        }
    };
    for r in 0..h {
        let row = &v[r * w..(r + 1) * w];
        for c in 0..w {
            if c + 1 < w {
                add(row[c], row[c + 1]);
            }
            if r + 1 < h {
                add(row[c], v[(r + 1) * w + c]);
            }
        }
    }
    let m = map.class_counts().iter().filter(|&&k| k > 0).count();
    let total = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| edges[a * n + b])
        .sum();
    EdgeTable {
        n_classes: n,
        m,
        edges,
        total,
    }
}

/// IJI from an edge table; `None` when fewer than three classes are present
/// or there are no inter-class edges.
pub fn iji_from_edges(table: &EdgeTable) -> Option<f64> {
    if table.m < 3 || table.total == 0 {
        return None;
    }
    let total = table.total as f64;
    let h: f64 = table
        .pairs()
        .filter(|&(_, _, e)| e > 0)
        .map(|(_, _, e)| {
            let s = e as f64 / total;
            -s * s.ln()
        })
        .sum();
    let m = table.m as f64;
    Some((h / (m * (m - 1.0) / 2.0).ln() * 100.0).clamp(0.0, 100.0))
}

pub fn iji(map: &LabelRaster) -> Option<f64> {
    iji_from_edges(&edge_table(map))
}

/// One row of `iji.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct IjiRecord {
    pub map_id: String,
    pub m: usize,
    pub total_edge: u64,
    pub iji: Option<f64>,
}

impl IjiRecord {
    pub fn evaluate(map_id: impl Into<String>, map: &LabelRaster) -> Self {
        let t = edge_table(map);
        Self {
            map_id: map_id.into(),
            m: t.m,
            total_edge: t.total,
            iji: iji_from_edges(&t),
        }
    }
}

/// `map_id,m,E,iji`, undefined IJI as an empty field.
pub fn write_iji_csv<W: Write>(out: W, records: &[IjiRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["map_id", "m", "E", "iji"])?;
    for r in records {
        w.write_record([
            r.map_id.clone(),
            r.m.to_string(),
            r.total_edge.to_string(),
            fmt_opt(r.iji),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
