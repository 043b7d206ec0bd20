//! Input readers: integer CSV with an optional weight column and the binary
//! `SCKZ` point format.

use std::io::{Read, Write};

use crate::encoding::{read_array, read_i64, read_u32, read_u64};
use crate::error::{Error, Result};

/// Magic bytes of the binary point format.
pub const SCKZ_MAGIC: &[u8; 4] = b"SCKZ";

/// Integer rows with weights; `d = 0` when there are no rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntRows {
    pub d: usize,
    pub rows: Vec<Vec<i64>>,
    pub weights: Vec<f64>,
}

impl IntRows {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest absolute entry, at least 1.
    pub fn max_abs(&self) -> i64 {
        self.rows.iter().flatten().map(|v| v.saturating_abs()).max().unwrap_or(1).max(1)
    }

    fn push(&mut self, row: Vec<i64>, weight: f64, line: usize) -> Result<()> {
        if self.rows.is_empty() {
            self.d = row.len();
        } else if row.len() != self.d {
            return Err(Error::Input(format!("line {line}: {} columns, expected {}", row.len(), self.d)));
        }
        if row.is_empty() {
            return Err(Error::Input(format!("line {line}: no coordinates")));
        }
        self.rows.push(row);
        self.weights.push(weight);
        Ok(())
    }
}

/// Reads one row per record; with `weighted` the last column is a positive weight.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn read_csv(r: impl Read, weighted: bool) -> Result<IntRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = IntRows::default();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let fields: Vec<&str> = rec.iter().collect();
        let (coords, weight) = if weighted {
            let (last, head) = fields.split_last().expect("nonempty record");
            let w: f64 = last.parse().map_err(|_| Error::Input(format!("line {line}: bad weight {last:?}")))?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Input(format!("line {line}: weight {w} is not positive")));
            }
            (head, w)
        } else {
            (&fields[..], 1.0)
        };
        let row = coords
            .iter()
            .map(|f| f.parse::<i64>().map_err(|_| Error::Input(format!("line {line}: bad integer {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row, weight, line)?;
    }
    Ok(out)
}

/// Writes rows as integer CSV.
pub fn write_csv(w: &mut impl Write, rows: &[Vec<i64>]) -> Result<()> {
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes real rows as CSV with shortest round-trip formatting.
pub fn write_real_csv(w: &mut impl Write, rows: &[Vec<f64>]) -> Result<()> {
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads `SCKZ`: magic, u32 `d`, u64 `n`, then `n·d` little-endian i64.
pub fn read_sckz(r: &mut impl Read) -> Result<IntRows> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != SCKZ_MAGIC {
        return Err(Error::format("missing SCKZ magic"));
    }
    let d = read_u32(r)? as usize;
    let n = read_u64(r)?;
    if d == 0 && n > 0 {
        return Err(Error::format("SCKZ rows of width zero"));
    }
    let mut out = IntRows { d, ..IntRows::default() };
    for _ in 0..n {
        let row = (0..d).map(|_| read_i64(r)).collect::<Result<Vec<_>>>()?;
        out.rows.push(row);
        out.weights.push(1.0);
    }
    Ok(out)
}

/// Writes `SCKZ`.
pub fn write_sckz(w: &mut impl Write, d: usize, rows: &[Vec<i64>]) -> Result<()> {
    w.write_all(SCKZ_MAGIC)?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        for v in r {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads `SCKZ` when the bytes start with its magic, CSV otherwise.
pub fn read_points(bytes: &[u8], weighted: bool) -> Result<IntRows> {
    if bytes.starts_with(SCKZ_MAGIC) {
        if weighted {
            return Err(Error::Input("SCKZ input carries no weights".into()));
        }
        let mut r = bytes;
        let rows = read_sckz(&mut r)?;
        if !r.is_empty() {
            return Err(Error::format("trailing bytes after SCKZ payload"));
        }
        Ok(rows)
    } else {
        read_csv(bytes, weighted)
    }
}
