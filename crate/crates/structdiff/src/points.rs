//! Point batches and their CSV representation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A batch of N points in d dimensions. Always finite, never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    data: Array2<f64>,
}

impl PointBatch {
    /// Wraps an N x d array; rejects empty batches and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "point batch must be non-empty, got {n} x {d}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("point batch".into()));
        }
        Ok(Self { data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Writes `x0,x1,...` header plus one row per point. Values use Rust's
    /// shortest round-trip float formatting, so a load restores bits exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let d = self.dim();
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "x{j}");
        }
        out.push('\n');
        for row in self.data.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Loads a CSV written by [`save_csv`](Self::save_csv). Malformed input
    /// reports the offending 1-based line.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let pstr = path.display().to_string();
        let bad = |line: usize, msg: String| Error::MalformedCsv {
            path: pstr.clone(),
            line,
            msg,
        };

        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let d = cols.len();
        for (j, c) in cols.iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(bad(1, format!("expected header column x{j}, got {c:?}")));
            }
        }

        let mut rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d {
                return Err(bad(
                    idx + 1,
                    format!("expected {d} fields, got {}", fields.len()),
                ));
            }
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| bad(idx + 1, format!("bad float {f:?}: {e}")))?;
                rows.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(bad(1, "no data rows".to_string()));
        }
        let data = Array2::from_shape_vec((n, d), rows)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data)
    }
}
