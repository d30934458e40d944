//! Plain-text snapshot files for fields and kernels.
//!
//! Layout, shared by both kinds:
//!
//! ```text
//! # nch-field v1            (or "# nch-kernel v1")
//! # nx=<int> ny=<int> X=<float> Y=<float> t=<float>
//! <ny lines, each nx space-separated values, row j ascending>
//! ```
//!
//! Values are written with 17 significant digits, which round-trips f64
//! exactly, so write -> read -> write is byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, PeriodicGrid};

pub const FIELD_TAG: &str = "nch-field";
pub const KERNEL_TAG: &str = "nch-kernel";

/// 17-significant-digit scientific form; parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_tagged(path: &Path, tag: &str, grid: PeriodicGrid, values: &[f64], t: f64) -> Result<()> {
    debug_assert_eq!(values.len(), grid.len());
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {tag} v1")?;
    writeln!(
        w,
        "# nx={} ny={} X={} Y={} t={}",
        grid.nx(),
        grid.ny(),
        format_f64(grid.half_width_x()),
        format_f64(grid.half_width_y()),
        format_f64(t)
    )?;
    let mut line = String::new();
    for j in 0..grid.ny() {
        line.clear();
        for i in 0..grid.nx() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format_f64(values[grid.idx(i, j)]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_kv<'a>(token: Option<&'a str>, key: &str, line_no: usize) -> Result<&'a str> {
    let token = token.ok_or_else(|| {
        Error::Format(format!("line {line_no}: missing header entry {key}=<value>"))
    })?;
    token.strip_prefix(key).and_then(|s| s.strip_prefix('=')).ok_or_else(|| {
        Error::Format(format!(
            "line {line_no}: expected {key}=<value>, found {token:?}"
        ))
    })
}

fn parse_usize(s: &str, what: &str, line_no: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line_no}: invalid integer for {what}: {s:?}")))
}

fn parse_f64(s: &str, what: &str, line_no: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line_no}: invalid float for {what}: {s:?}")))
}

fn read_tagged(path: &Path, tag: &str) -> Result<(PeriodicGrid, Vec<f64>, f64)> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty file".into()))??;
    let expected = format!("# {tag} v1");
    if header.trim_end() != expected {
        return Err(Error::Format(format!(
            "line 1: expected {expected:?}, found {header:?}"
        )));
    }

    let meta = lines
        .next()
        .ok_or_else(|| Error::Format("line 2: missing metadata header".into()))??;
    let mut tok = meta.trim_end().split(' ');
    if tok.next() != Some("#") {
        return Err(Error::Format(format!(
            "line 2: metadata must start with '# ', found {meta:?}"
        )));
    }
    let nx = parse_usize(parse_kv(tok.next(), "nx", 2)?, "nx", 2)?;
    let ny = parse_usize(parse_kv(tok.next(), "ny", 2)?, "ny", 2)?;
    let x = parse_f64(parse_kv(tok.next(), "X", 2)?, "X", 2)?;
    let y = parse_f64(parse_kv(tok.next(), "Y", 2)?, "Y", 2)?;
    let t = parse_f64(parse_kv(tok.next(), "t", 2)?, "t", 2)?;
    if let Some(extra) = tok.next() {
        return Err(Error::Format(format!(
            "line 2: unexpected trailing token {extra:?}"
        )));
    }

    let grid = PeriodicGrid::new(x, y, nx, ny)?;
    let mut values = vec![0.0; grid.len()];
    for j in 0..ny {
        let line_no = 3 + j;
        let line = lines.next().ok_or_else(|| {
            Error::Format(format!("line {line_no}: expected {ny} data rows, found {j}"))
        })??;
        let mut count = 0;
        for (i, item) in line.split_whitespace().enumerate() {
            if i >= nx {
                return Err(Error::Format(format!(
                    "line {line_no}: more than {nx} values in row"
                )));
            }
            let v = parse_f64(item, "field value", line_no)?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "line {line_no}: non-finite value {item:?}"
                )));
            }
            values[grid.idx(i, j)] = v;
            count += 1;
        }
        if count != nx {
            return Err(Error::Format(format!(
                "line {line_no}: expected {nx} values, found {count}"
            )));
        }
    }
    for line in lines {
        if !line?.trim().is_empty() {
            return Err(Error::Format("trailing non-empty lines after data rows".into()));
        }
    }
    Ok((grid, values, t))
}

/// Write a field snapshot at simulation time t.
pub fn write_field(path: &Path, f: &GridFunction, t: f64) -> Result<()> {
    write_tagged(path, FIELD_TAG, f.grid(), f.values(), t)
}

/// Read a field snapshot; returns the field and its recorded time.
pub fn read_field(path: &Path) -> Result<(GridFunction, f64)> {
    let (grid, values, t) = read_tagged(path, FIELD_TAG)?;
    Ok((GridFunction::new(grid, values)?, t))
}

/// Write raw kernel samples; t is recorded as 0.
pub fn write_kernel_values(path: &Path, grid: PeriodicGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "kernel value vector of length {} does not match {}x{} grid",
            values.len(),
            grid.nx(),
            grid.ny()
        )));
    }
    write_tagged(path, KERNEL_TAG, grid, values, 0.0)
}

/// Read raw kernel samples; validation and normalization happen in the
/// kernel module.
pub fn read_kernel_values(path: &Path) -> Result<(PeriodicGrid, Vec<f64>)> {
    let (grid, values, _t) = read_tagged(path, KERNEL_TAG)?;
    Ok((grid, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scratch_dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn format_round_trips_f64_bits() {
        for v in [
            0.0,
            -0.0,
            1.0,
            PI,
            -2.0 / 3.0,
            1.234_567_890_123_456_7e-300,
            f64::MAX,
            5e-324,
        ] {
            let back: f64 = format_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "value {v}");
        }
    }

    proptest::proptest! {
        #[test]
        fn format_round_trips_arbitrary_finite_bits(bits in proptest::prelude::any::<u64>()) {
            let v = f64::from_bits(bits);
            proptest::prop_assume!(v.is_finite());
            let back: f64 = format_f64(v).parse().unwrap();
            proptest::prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn field_snapshot_round_trip_is_byte_identical() {
        let dir = scratch_dir();
        let grid = PeriodicGrid::new(PI, PI, 8, 4).unwrap();
        let f = GridFunction::from_fn(grid, |x, y| (x.sin() + 0.3 * y.cos()) / 7.0).unwrap();
        let p1 = dir.path().join("a.dat");
        let p2 = dir.path().join("b.dat");
        write_field(&p1, &f, 0.125).unwrap();
        let (f2, t) = read_field(&p1).unwrap();
        assert_eq!(t, 0.125);
        assert_eq!(f2.values(), f.values());
        assert_eq!(f2.grid(), grid);
        write_field(&p2, &f2, t).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_wrong_tag_and_malformed_headers() {
        let dir = scratch_dir();
        let grid = PeriodicGrid::new(1.0, 1.0, 4, 4).unwrap();
        let f = GridFunction::zeros(grid);
        let p = dir.path().join("f.dat");
        write_field(&p, &f, 0.0).unwrap();
        assert!(read_kernel_values(&p).is_err());

        let text = std::fs::read_to_string(&p).unwrap();
        let broken = text.replace("ny=4", "ny=four");
        std::fs::write(&p, broken).unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_short_rows_and_row_count_mismatch() {
        let dir = scratch_dir();
        let p = dir.path().join("f.dat");
        std::fs::write(
            &p,
            "# nch-field v1\n# nx=4 ny=4 X=1.0 Y=1.0 t=0.0\n0 0 0 0\n0 0 0\n0 0 0 0\n0 0 0 0\n",
        )
        .unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format(_))));
        std::fs::write(&p, "# nch-field v1\n# nx=4 ny=4 X=1.0 Y=1.0 t=0.0\n0 0 0 0\n")
            .unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let dir = scratch_dir();
        let p = dir.path().join("f.dat");
        std::fs::write(
            &p,
            "# nch-field v1\n# nx=4 ny=4 X=1.0 Y=1.0 t=0.0\n0 0 0 0\n0 NaN 0 0\n0 0 0 0\n0 0 0 0\n",
        )
        .unwrap();
        assert!(read_field(&p).is_err());
    }

    #[test]
    fn kernel_files_round_trip() {
        let dir = scratch_dir();
        let grid = PeriodicGrid::new(PI, PI, 4, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let p = dir.path().join("k.dat");
        write_kernel_values(&p, grid, &vals).unwrap();
        let (g2, v2) = read_kernel_values(&p).unwrap();
        assert_eq!(g2, grid);
        assert_eq!(v2, vals);
    }
}
