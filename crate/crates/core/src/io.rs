//! Panel serialization.
//!
//! Two formats are supported:
//!
//! * CSV with header `t,j,u_index,value` (0-based indices). The grid is not
//!   stored and must be supplied when reading.
//! * A little-endian binary dump: magic `AFTS`, `u32 n`, `u32 p`, `u32 G`,
//!   `f64 a`, `f64 b`, followed by the `n·p·G` values in column-major order
//!   (`t` fastest, then `j`, then `k`). The grid is the uniform trapezoid
//!   grid on `[a, b]`.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! both formats reproduce the panel bit for bit.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::func::{FunctionalPanel, Grid};

pub const PANEL_MAGIC: &[u8; 4] = b"AFTS";
pub const PANEL_HEADER_LEN: usize = 32;
pub const PANEL_CSV_HEADER: [&str; 4] = ["t", "j", "u_index", "value"];

pub fn write_panel_csv<W: Write>(panel: &FunctionalPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PANEL_CSV_HEADER)?;
    let g = panel.grid().len();
    for t in 0..panel.n() {
        for j in 0..panel.p() {
            for (k, v) in panel.curve_values(t, j).iter().enumerate().take(g) {
                w.write_record(&[t.to_string(), j.to_string(), k.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel CSV. Every `(t, j, u_index)` cell must appear exactly once.
pub fn read_panel_csv<R: Read>(input: R, grid: Arc<Grid>) -> Result<FunctionalPanel> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != PANEL_CSV_HEADER {
        return Err(Error::Parse(format!("unexpected panel header {header:?}")));
    }
    let g = grid.len();
    let mut cells = Vec::new();
    let (mut n, mut p) = (0usize, 0usize);
    for rec in r.records() {
        let rec = rec?;
        let parse_idx = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse(format!("bad index in record {rec:?}")))
        };
        let (t, j, k) = (parse_idx(0)?, parse_idx(1)?, parse_idx(2)?);
        let v: f64 = rec
            .get(3)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad value in record {rec:?}")))?;
        if k >= g {
            return Err(Error::Structural(format!("u_index {k} outside grid of {g} points")));
        }
        n = n.max(t + 1);
        p = p.max(j + 1);
        cells.push((t, j, k, v));
    }
    let mut data = vec![0.0; n * p * g];
    let mut seen = vec![false; n * p * g];
    for (t, j, k, v) in cells {
        let idx = (t * p + j) * g + k;
        if seen[idx] {
            return Err(Error::Parse(format!("duplicate cell t={t} j={j} u_index={k}")));
        }
        seen[idx] = true;
        data[idx] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!(
            "missing cell t={} j={} u_index={}",
            missing / (p * g),
            (missing / g) % p,
            missing % g
        )));
    }
    FunctionalPanel::new(grid, n, p, data)
}

pub fn write_panel_binary<W: Write>(panel: &FunctionalPanel, mut out: W) -> Result<()> {
    let grid = panel.grid();
    if !grid.is_uniform() {
        return Err(Error::Structural(
            "binary panel format only stores uniform grids".into(),
        ));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Domain(format!("{what}={v} exceeds u32")))
    };
    let (n, p, g) = (panel.n(), panel.p(), grid.len());
    let mut buf = Vec::with_capacity(PANEL_HEADER_LEN + 8 * n * p * g);
    buf.extend_from_slice(PANEL_MAGIC);
    buf.extend_from_slice(&to_u32(n, "n")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(p, "p")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(g, "G")?.to_le_bytes());
    buf.extend_from_slice(&grid.start().to_le_bytes());
    buf.extend_from_slice(&grid.end().to_le_bytes());
    for k in 0..g {
        for j in 0..p {
            for t in 0..n {
                buf.extend_from_slice(&panel.curve_values(t, j)[k].to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_panel_binary<R: Read>(mut input: R) -> Result<FunctionalPanel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < PANEL_HEADER_LEN || &bytes[0..4] != PANEL_MAGIC {
        return Err(Error::Parse("missing AFTS panel header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (n, p, g) = (u32_at(4), u32_at(8), u32_at(12));
    let (a, b) = (f64_at(16), f64_at(24));
    let expected = PANEL_HEADER_LEN + 8 * n * p * g;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "panel body has {} bytes, header implies {}",
            bytes.len(),
            expected
        )));
    }
    let grid = Grid::uniform(a, b, g)?;
    let mut data = vec![0.0; n * p * g];
    let mut off = PANEL_HEADER_LEN;
    for k in 0..g {
        for j in 0..p {
            for t in 0..n {
                data[(t * p + j) * g + k] = f64_at(off);
                off += 8;
            }
        }
    }
    FunctionalPanel::new(grid, n, p, data)
}

/// Reads a panel, choosing the format from the extension (`.csv` needs a grid).
pub fn read_panel_path(path: &Path, csv_grid: Option<Arc<Grid>>) -> Result<FunctionalPanel> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let grid = csv_grid.ok_or_else(|| {
            Error::Config(format!("{} is CSV; a grid must be supplied", path.display()))
        })?;
        read_panel_csv(file, grid)
    } else {
        read_panel_binary(file)
    }
}

pub fn write_panel_path(panel: &FunctionalPanel, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        write_panel_csv(panel, file)
    } else {
        write_panel_binary(panel, file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel_from(values: Vec<f64>, n: usize, p: usize, g: usize) -> FunctionalPanel {
        FunctionalPanel::new(Grid::uniform(-1.0, 2.5, g).unwrap(), n, p, values).unwrap()
    }

    #[test]
    fn binary_header_layout() {
        let panel = panel_from(vec![1.5; 2 * 3 * 4], 2, 3, 4);
        let mut buf = Vec::new();
        write_panel_binary(&panel, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"AFTS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 2.5);
        assert_eq!(buf.len(), 32 + 8 * 24);
    }

    #[test]
    fn binary_is_column_major() {
        let g = 2;
        let values: Vec<f64> = (0..2 * 2 * g).map(|v| v as f64).collect();
        let panel = panel_from(values, 2, 2, g);
        let mut buf = Vec::new();
        write_panel_binary(&panel, &mut buf).unwrap();
        let body: Vec<f64> = buf[32..]
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // (t,j,k): t fastest.
        assert_eq!(body[0], panel.curve_values(0, 0)[0]);
        assert_eq!(body[1], panel.curve_values(1, 0)[0]);
        assert_eq!(body[2], panel.curve_values(0, 1)[0]);
        assert_eq!(body[4], panel.curve_values(0, 0)[1]);
    }

    #[test]
    fn csv_rejects_missing_and_duplicate_cells() {
        let grid = Grid::uniform(0.0, 1.0, 2).unwrap();
        let missing = "t,j,u_index,value\n0,0,0,1.0\n";
        assert!(read_panel_csv(missing.as_bytes(), grid.clone()).is_err());
        let dup = "t,j,u_index,value\n0,0,0,1.0\n0,0,0,1.0\n0,0,1,2\n";
        assert!(read_panel_csv(dup.as_bytes(), grid.clone()).is_err());
        let bad_header = "a,b,c,d\n0,0,0,1\n0,0,1,1\n";
        assert!(read_panel_csv(bad_header.as_bytes(), grid).is_err());
    }

    #[test]
    fn nonuniform_grid_cannot_be_written_binary() {
        let grid = Grid::trapezoid(vec![0.0, 0.3, 1.0]).unwrap();
        let panel = FunctionalPanel::zeros(grid, 1, 1);
        assert!(write_panel_binary(&panel, Vec::new()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn both_formats_round_trip_bit_exact(
            n in 1usize..4, p in 1usize..4, g in 2usize..6,
            seed in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 96),
        ) {
            let values: Vec<f64> = (0..n * p * g).map(|i| seed[i % seed.len()]).collect();
            let panel = panel_from(values, n, p, g);

            let mut bin = Vec::new();
            write_panel_binary(&panel, &mut bin).unwrap();
            let back = read_panel_binary(bin.as_slice()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            panel.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());

            let mut text = Vec::new();
            write_panel_csv(&panel, &mut text).unwrap();
            let back = read_panel_csv(text.as_slice(), panel.grid().clone()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            panel.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
