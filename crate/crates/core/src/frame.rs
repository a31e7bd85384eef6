//! Column-named matrices and the linear design `X_t` / target `y_t` pair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};

/// A dense matrix whose columns carry unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Frame {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if values.ncols() != names.len() {
            return Err(MrfError::arg(format!(
                "{} columns but {} names",
                values.ncols(),
                names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(MrfError::arg(format!("duplicate column name `{n}`")));
            }
        }
        Ok(Frame { values, names })
    }

    /// Columns named `prefix1`, `prefix2`, ...
    pub fn with_prefix(values: DMatrix<f64>, prefix: &str) -> Self {
        let names = (1..=values.ncols()).map(|i| format!("{prefix}{i}")).collect();
        Frame { values, names }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    /// Rows `range` of the frame.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Frame {
        let values = self.values.rows(range.start, range.len()).into_owned();
        Frame {
            values,
            names: self.names.clone(),
        }
    }

    /// Horizontal concatenation; names must stay unique.
    pub fn hstack(parts: &[&Frame]) -> Result<Frame> {
        let nrows = parts.first().map_or(0, |f| f.nrows());
        if parts.iter().any(|f| f.nrows() != nrows) {
            return Err(MrfError::arg("hstack: row counts differ"));
        }
        let ncols: usize = parts.iter().map(|f| f.ncols()).sum();
        let mut values = DMatrix::zeros(nrows, ncols);
        let mut names = Vec::with_capacity(ncols);
        let mut c = 0;
        for f in parts {
            values.columns_mut(c, f.ncols()).copy_from(&f.values);
            names.extend(f.names.iter().cloned());
            c += f.ncols();
        }
        Frame::new(values, names)
    }

    /// Verifies that `self` has exactly the `expected` column names, in order.
    pub fn check_schema(&self, expected: &[String]) -> Result<()> {
        if self.names == expected {
            return Ok(());
        }
        let missing = expected
            .iter()
            .filter(|n| !self.names.contains(n))
            .cloned()
            .collect::<Vec<_>>();
        let unexpected = self
            .names
            .iter()
            .filter(|n| !expected.contains(n))
            .cloned()
            .collect::<Vec<_>>();
        Err(MrfError::Schema {
            missing,
            unexpected,
        })
    }
}

/// The time-varying linear equation: regressors `X_t` (T×K) and target `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    pub x: Frame,
    pub y: Vec<f64>,
}

impl LinearDesign {
    pub fn new(x: Frame, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(MrfError::arg(format!(
                "design has {} rows but target has {}",
                x.nrows(),
                y.len()
            )));
        }
        Ok(LinearDesign { x, y })
    }

    /// Intercept-only design (`X_t = 1`), the plain random forest restriction.
    pub fn intercept_only(y: Vec<f64>) -> Self {
        let x = Frame {
            values: DMatrix::from_element(y.len(), 1, 1.0),
            names: vec!["const".into()],
        };
        LinearDesign { x, y }
    }

    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_mismatch_lists_columns() {
        let f = Frame::new(DMatrix::zeros(2, 2), vec!["a".into(), "c".into()]).unwrap();
        let err = f.check_schema(&["a".into(), "b".into()]).unwrap_err();
        match err {
            MrfError::Schema {
                missing,
                unexpected,
            } => {
                assert_eq!(missing, vec!["b".to_string()]);
                assert_eq!(unexpected, vec!["c".to_string()]);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Frame::new(DMatrix::zeros(1, 2), vec!["a".into(), "a".into()]).is_err());
    }
}
