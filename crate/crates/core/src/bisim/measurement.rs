use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;

use super::ScalingConfig;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    PiBisim,
    Generalized,
    Scaled,
    Expectile,
    Learned,
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PiBisim => "pi_bisim",
            Self::Generalized => "generalized",
            Self::Scaled => "scaled",
            Self::Expectile => "expectile",
            Self::Learned => "learned",
        })
    }
}

impl FromStr for MeasurementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pi_bisim" => Self::PiBisim,
            "generalized" => Self::Generalized,
            "scaled" => Self::Scaled,
            "expectile" => Self::Expectile,
            "learned" => Self::Learned,
            _ => return Err(invalid(format!("unknown measurement kind `{s}`"))),
        })
    }
}

/// Symmetric table over state pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub g: DMatrix<f64>,
    pub kind: MeasurementKind,
    pub scaling: Option<ScalingConfig>,
}

impl Measurement {
    pub fn new(g: DMatrix<f64>, kind: MeasurementKind) -> Self {
        Self {
            g,
            kind,
            scaling: None,
        }
    }

    pub fn with_scaling(mut self, scaling: ScalingConfig) -> Self {
        self.scaling = Some(scaling);
        self
    }

    pub fn zeros(n: usize, kind: MeasurementKind) -> Self {
        Self::new(DMatrix::zeros(n, n), kind)
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn sup_distance(&self, other: &Measurement) -> f64 {
        super::sup_diff(&self.g, &other.g)
    }

    pub fn max_entry(&self) -> f64 {
        self.g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.g == self.g.transpose()
    }

    /// Largest triangle-inequality violation `g(i,k) - g(i,j) - g(j,k)`, or 0.
    pub fn triangle_violation(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max(self.g[(i, k)] - self.g[(i, j)] - self.g[(j, k)]);
                }
            }
        }
        worst
    }

    /// Dense CSV with an index header row and column, preceded by `# key=value` metadata.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::new();
        let _ = writeln!(out, "# kind={}", self.kind);
        if let Some(s) = self.scaling {
            let _ = writeln!(out, "# c_r={}", s.c_r);
            let _ = writeln!(out, "# c_k={}", s.c_k);
        }
        let header: Vec<String> = (0..n).map(|j| j.to_string()).collect();
        let _ = writeln!(out, "state,{}", header.join(","));
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| self.g[(i, j)].to_string()).collect();
            let _ = writeln!(out, "{i},{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut kind = None;
        let (mut c_r, mut c_k) = (None, None);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut n = None;
        for (k, line) in text.lines().enumerate() {
            let ln = k + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (key, val) = meta
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| perr(ln, "metadata must be key=value".into()))?;
                let num = || val.parse::<f64>().map_err(|_| perr(ln, format!("bad number `{val}`")));
                match key {
                    "kind" => kind = Some(val.parse()?),
                    "c_r" => c_r = Some(num()?),
                    "c_k" => c_k = Some(num()?),
                    _ => return Err(perr(ln, format!("unknown metadata key `{key}`"))),
                }
                continue;
            }
            let mut cells = line.split(',');
            let first = cells.next().unwrap_or_default();
            if n.is_none() {
                if first != "state" {
                    return Err(perr(ln, "expected header row".into()));
                }
                n = Some(cells.count());
                continue;
            }
            if first.parse::<usize>().ok() != Some(rows.len()) {
                return Err(perr(ln, format!("expected row index {}", rows.len())));
            }
            let row = cells
                .map(|c| c.parse::<f64>().map_err(|_| perr(ln, format!("bad number `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            if Some(row.len()) != n {
                return Err(perr(ln, "row length does not match header".into()));
            }
            rows.push(row);
        }
        let n = n.ok_or_else(|| perr(1, "missing header row".into()))?;
        if rows.len() != n {
            return Err(perr(0, format!("expected {n} rows, found {}", rows.len())));
        }
        let g = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let mut m = Self::new(g, kind.ok_or_else(|| perr(1, "missing kind".into()))?);
        if let (Some(c_r), Some(c_k)) = (c_r, c_k) {
            m.scaling = Some(ScalingConfig::new(c_r, c_k)?);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 0.1 + 0.2, 0.1 + 0.2, 1e-300]);
        let m = Measurement::new(g, MeasurementKind::Scaled).with_scaling(ScalingConfig::reward_scaled(0.99));
        let back = Measurement::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn triangle_check_spots_violations() {
        let g = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0]);
        assert_eq!(Measurement::new(g, MeasurementKind::Learned).triangle_violation(), 1.0);
    }
}
