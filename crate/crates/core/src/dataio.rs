//! Time-series panels: CSV input/output, stationarity transforms (FRED `tcode`
//! convention), lag panels and direct-forecast targets.
//!
//! Missing values are `NaN` in memory and empty cells on disk.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Quarterly,
    Monthly,
}

impl Frequency {
    pub fn periods_per_year(self) -> u32 {
        match self {
            Frequency::Quarterly => 4,
            Frequency::Monthly => 12,
        }
    }
}

/// A calendar period parsed from a date label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Period {
    year: i32,
    /// Month of year (1..=12). Quarter labels map to the quarter's first month.
    month: u32,
    quarter_label: bool,
}

impl Period {
    fn ordinal_months(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }
}

fn parse_period(label: &str) -> Option<Period> {
    let s = label.trim();
    // 1961Q3, 1961:Q3, 1961-Q3, 1961q3
    let upper = s.to_ascii_uppercase();
    if let Some(pos) = upper.find('Q') {
        let year: i32 = upper[..pos].trim_end_matches([':', '-', ' ']).parse().ok()?;
        let q: u32 = upper[pos + 1..].parse().ok()?;
        if !(1..=4).contains(&q) {
            return None;
        }
        return Some(Period {
            year,
            month: 3 * (q - 1) + 1,
            quarter_label: true,
        });
    }
    // M/D/YYYY (FRED-QD / FRED-MD files)
    if s.contains('/') {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return None;
        }
        let month: u32 = parts[0].parse().ok()?;
        let year: i32 = parts[2].parse().ok()?;
        return valid_month(year, month);
    }
    // YYYY-MM-DD or YYYY-MM
    let parts: Vec<&str> = s.split('-').collect();
    if parts.len() == 2 || parts.len() == 3 {
        let year: i32 = parts[0].parse().ok()?;
        let month: u32 = parts[1].parse().ok()?;
        if parts.len() == 3 {
            let day: u32 = parts[2].parse().ok()?;
            if !(1..=31).contains(&day) {
                return None;
            }
        }
        return valid_month(year, month);
    }
    None
}

fn valid_month(year: i32, month: u32) -> Option<Period> {
    (1..=12).contains(&month).then_some(Period {
        year,
        month,
        quarter_label: false,
    })
}

/// Infers the sampling frequency from a sequence of date labels and checks that
/// the labels are strictly increasing and contiguous.
pub fn infer_frequency(dates: &[String]) -> Result<Frequency> {
    let periods = dates
        .iter()
        .enumerate()
        .map(|(i, d)| {
            parse_period(d).ok_or_else(|| MrfError::Parse {
                line: i + 1,
                message: format!("unrecognized date label `{d}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let freq = if periods.iter().any(|p| p.quarter_label) {
        Frequency::Quarterly
    } else if periods.len() < 2 {
        Frequency::Monthly
    } else {
        match periods[1].ordinal_months() - periods[0].ordinal_months() {
            3 => Frequency::Quarterly,
            1 => Frequency::Monthly,
            d => {
                return Err(MrfError::arg(format!(
                    "dates `{}` and `{}` are {d} months apart; expected 1 or 3",
                    dates[0], dates[1]
                )))
            }
        }
    };
    let step = 12 / freq.periods_per_year() as i64;
    for (i, w) in periods.windows(2).enumerate() {
        if w[1].ordinal_months() - w[0].ordinal_months() != step {
            return Err(MrfError::arg(format!(
                "dates not contiguous at {:?} frequency: `{}` followed by `{}`",
                freq,
                dates[i],
                dates[i + 1]
            )));
        }
    }
    Ok(freq)
}

/// Row of `dates` denoting the same period as `label`. Labels may use any
/// supported format (`2003Q1` finds `3/1/2003`).
pub fn date_index(dates: &[String], label: &str) -> Option<usize> {
    let target = parse_period(label)?;
    let quarter = |p: Period| (p.year, (p.month - 1) / 3);
    dates.iter().position(|d| {
        parse_period(d).is_some_and(|p| {
            if p.quarter_label || target.quarter_label {
                quarter(p) == quarter(target)
            } else {
                p.ordinal_months() == target.ordinal_months()
            }
        })
    })
}

/// FRED transformation code (1 level, 2 Δ, 3 Δ², 4 log, 5 Δlog, 6 Δ²log,
/// 7 Δ of the growth rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TransformCode(u8);

impl TransformCode {
    pub const LEVEL: TransformCode = TransformCode(1);
    pub const DIFF: TransformCode = TransformCode(2);
    pub const DIFF2: TransformCode = TransformCode(3);
    pub const LOG: TransformCode = TransformCode(4);
    pub const DLOG: TransformCode = TransformCode(5);
    pub const D2LOG: TransformCode = TransformCode(6);
    pub const DGROWTH: TransformCode = TransformCode(7);

    pub fn new(code: u8) -> Result<Self> {
        if (1..=7).contains(&code) {
            Ok(TransformCode(code))
        } else {
            Err(MrfError::arg(format!("transform code {code} not in 1..=7")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    fn uses_log(self) -> bool {
        matches!(self.0, 4..=6)
    }

    /// Number of leading observations consumed by the transform.
    pub fn leading_nans(self) -> usize {
        match self.0 {
            1 | 4 => 0,
            2 | 5 => 1,
            _ => 2,
        }
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = MrfError;
    fn try_from(v: u8) -> Result<Self> {
        TransformCode::new(v)
    }
}

impl From<TransformCode> for u8 {
    fn from(c: TransformCode) -> u8 {
        c.0
    }
}

fn diff(v: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; v.len()];
    for t in 1..v.len() {
        out[t] = v[t] - v[t - 1];
    }
    out
}

/// Applies a stationarity transform. Output has the input's length, with
/// leading `NaN`s where differencing consumes observations.
pub fn apply_tcode(series: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    let needs_positive = code.uses_log() || code.0 == 7;
    if needs_positive {
        if let Some(i) = series.iter().position(|v| !v.is_nan() && *v <= 0.0) {
            return Err(MrfError::Domain {
                index: i,
                message: format!(
                    "value {} is not strictly positive under transform code {}",
                    series[i], code.0
                ),
            });
        }
    }
    let logs = || series.iter().map(|v| v.ln()).collect::<Vec<_>>();
    Ok(match code.0 {
        1 => series.to_vec(),
        2 => diff(series),
        3 => diff(&diff(series)),
        4 => logs(),
        5 => diff(&logs()),
        6 => diff(&diff(&logs())),
        7 => {
            let mut growth = vec![f64::NAN; series.len()];
            for t in 1..series.len() {
                growth[t] = series[t] / series[t - 1] - 1.0;
            }
            diff(&growth)
        }
        _ => unreachable!("validated transform code"),
    })
}

/// Inverts codes 1, 2, 4 and 5 given the dropped initial level `initial`
/// (the untransformed value at index 0; ignored for codes 1 and 4).
pub fn invert_tcode(transformed: &[f64], code: TransformCode, initial: f64) -> Result<Vec<f64>> {
    let cumulate = |start: f64| {
        let mut out = Vec::with_capacity(transformed.len());
        if transformed.is_empty() {
            return out;
        }
        out.push(start);
        for t in 1..transformed.len() {
            let prev = out[t - 1];
            out.push(prev + transformed[t]);
        }
        out
    };
    match code.0 {
        1 => Ok(transformed.to_vec()),
        2 => Ok(cumulate(initial)),
        4 => Ok(transformed.iter().map(|v| v.exp()).collect()),
        5 => {
            if initial <= 0.0 {
                return Err(MrfError::Domain {
                    index: 0,
                    message: "initial level must be positive for a log transform".into(),
                });
            }
            Ok(cumulate(initial.ln()).into_iter().map(f64::exp).collect())
        }
        c => Err(MrfError::arg(format!("transform code {c} is not invertible here"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// `y_{t+h}`
    Point,
    /// mean of `y_{t+1..=t+h}`
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub horizon: usize,
    pub target_mode: TargetMode,
}

impl ForecastSpec {
    pub fn new(horizon: usize, target_mode: TargetMode) -> Result<Self> {
        if horizon == 0 {
            return Err(MrfError::arg("forecast horizon must be at least 1"));
        }
        Ok(ForecastSpec {
            horizon,
            target_mode,
        })
    }

    pub fn point(horizon: usize) -> Self {
        ForecastSpec {
            horizon: horizon.max(1),
            target_mode: TargetMode::Point,
        }
    }
}

/// Aligns the target so that row `t` holds the value predicted from
/// information available at `t`. The trailing `h` entries are `NaN`.
pub fn build_direct_target(y: &[f64], spec: ForecastSpec) -> Result<Vec<f64>> {
    let h = spec.horizon;
    if h == 0 || h >= y.len() {
        return Err(MrfError::arg(format!(
            "horizon {h} must be in 1..{} for a series of length {}",
            y.len(),
            y.len()
        )));
    }
    let t_len = y.len();
    let mut out = vec![f64::NAN; t_len];
    for t in 0..t_len - h {
        out[t] = match spec.target_mode {
            TargetMode::Point => y[t + h],
            TargetMode::Average => y[t + 1..=t + h].iter().sum::<f64>() / h as f64,
        };
    }
    Ok(out)
}

/// `T×P` matrix whose column `p-1` holds the series lagged `p` periods.
pub fn build_lag_panel(series: &[f64], p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(MrfError::arg("lag count P must be at least 1"));
    }
    Ok(DMatrix::from_fn(series.len(), p, |t, c| {
        let lag = c + 1;
        if t >= lag {
            series[t - lag]
        } else {
            f64::NAN
        }
    }))
}

/// `T×n` matrix of the series observed at `t, t-1, ..., t-n+1`: the lags
/// available at forecast origin `t`.
pub fn origin_lags(series: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(series.len(), n, |t, c| {
        if t >= c {
            series[t - c]
        } else {
            f64::NAN
        }
    })
}

/// A `T×N` panel of named series sampled at a regular frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    pub frequency: Frequency,
    pub dates: Vec<String>,
    pub tcodes: Option<Vec<TransformCode>>,
}

impl SeriesPanel {
    pub fn new(
        values: DMatrix<f64>,
        names: Vec<String>,
        dates: Vec<String>,
        tcodes: Option<Vec<TransformCode>>,
    ) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(MrfError::arg("panel needs at least one period"));
        }
        if values.ncols() != names.len() || values.nrows() != dates.len() {
            return Err(MrfError::arg("panel dimensions disagree with names/dates"));
        }
        if let Some(c) = &tcodes {
            if c.len() != names.len() {
                return Err(MrfError::arg("one transform code per column required"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(MrfError::arg(format!("duplicate series name `{dup}`")));
        }
        let frequency = infer_frequency(&dates)?;
        Ok(SeriesPanel {
            values,
            names,
            frequency,
            dates,
            tcodes,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.column(j).iter().copied().collect())
    }

    /// Applies each column's transform code (identity when codes are absent).
    pub fn transformed(&self) -> Result<SeriesPanel> {
        let Some(codes) = &self.tcodes else {
            return Ok(self.clone());
        };
        let mut values = self.values.clone();
        for (j, code) in codes.iter().enumerate() {
            let col: Vec<f64> = self.values.column(j).iter().copied().collect();
            let tr = apply_tcode(&col, *code).map_err(|e| match e {
                MrfError::Domain { index, message } => MrfError::Domain {
                    index,
                    message: format!("series `{}`: {message}", self.names[j]),
                },
                other => other,
            })?;
            for (t, v) in tr.into_iter().enumerate() {
                values[(t, j)] = v;
            }
        }
        Ok(SeriesPanel {
            values,
            names: self.names.clone(),
            frequency: self.frequency,
            dates: self.dates.clone(),
            tcodes: None,
        })
    }

    /// Keeps rows `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<SeriesPanel> {
        if range.start >= range.end || range.end > self.nrows() {
            return Err(MrfError::arg(format!(
                "row range {range:?} is empty or beyond {} rows",
                self.nrows()
            )));
        }
        Ok(SeriesPanel {
            values: self.values.rows(range.start, range.len()).into_owned(),
            names: self.names.clone(),
            frequency: self.frequency,
            dates: self.dates[range].to_vec(),
            tcodes: self.tcodes.clone(),
        })
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<SeriesPanel> {
        let idx = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| MrfError::Config(format!("column `{n}` not found in panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select_columns(&idx);
        Ok(SeriesPanel {
            values,
            names: names.to_vec(),
            frequency: self.frequency,
            dates: self.dates.clone(),
            tcodes: self.tcodes.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        })
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<SeriesPanel> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file)
    }

    /// Reads a panel: first column dates, first row names, optional rows whose
    /// first cell is `transform`/`tcode` (codes) or `factors` (ignored).
    pub fn read_csv<R: Read>(reader: R) -> Result<SeriesPanel> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| MrfError::Parse {
                line: 1,
                message: "empty file".into(),
            })??;
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let n = names.len();
        let mut tcodes = None;
        let mut dates = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for (i, rec) in rows.enumerate() {
            let rec = rec?;
            let line = i + 2;
            let first = rec.get(0).unwrap_or("").trim();
            if first.is_empty() && rec.iter().all(|c| c.trim().is_empty()) {
                continue;
            }
            let tag = first.to_ascii_lowercase();
            if tag == "factors" {
                continue;
            }
            if tag == "transform" || tag == "tcode" || tag == "tcodes" {
                let codes = (0..n)
                    .map(|j| {
                        let cell = rec.get(j + 1).unwrap_or("").trim();
                        let v: f64 = cell.parse().map_err(|_| MrfError::Parse {
                            line,
                            message: format!("bad transform code `{cell}` for `{}`", names[j]),
                        })?;
                        TransformCode::new(v as u8).map_err(|e| MrfError::Parse {
                            line,
                            message: e.to_string(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                tcodes = Some(codes);
                continue;
            }
            if rec.len() != n + 1 {
                return Err(MrfError::Parse {
                    line,
                    message: format!("expected {} cells, found {}", n + 1, rec.len()),
                });
            }
            dates.push(first.to_string());
            for j in 0..n {
                let cell = rec.get(j + 1).unwrap_or("").trim();
                let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell == "NA" {
                    f64::NAN
                } else {
                    cell.parse().map_err(|_| MrfError::Parse {
                        line,
                        message: format!("non-numeric cell `{cell}` in column `{}`", names[j]),
                    })?
                };
                data.push(v);
            }
        }
        let t = dates.len();
        let values = DMatrix::from_row_slice(t, n, &data);
        SeriesPanel::new(values, names, dates, tcodes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        let mut rows = Vec::new();
        if let Some(codes) = &self.tcodes {
            let mut r = vec!["transform".to_string()];
            r.extend(codes.iter().map(|c| c.code().to_string()));
            rows.push(r);
        }
        for t in 0..self.nrows() {
            let mut r = vec![self.dates[t].clone()];
            r.extend(self.values.row(t).iter().map(|v| fmt_f64(*v)));
            rows.push(r);
        }
        write_csv_rows(writer, &header, &rows)
    }
}

/// Formats a float for CSV output: shortest round-trip form, `NaN` as empty.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_csv_rows<W: Write>(writer: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_lookup_across_formats() {
        let dates: Vec<String> = ["12/1/2002", "3/1/2003", "6/1/2003"].map(String::from).to_vec();
        assert_eq!(date_index(&dates, "2003Q1"), Some(1));
        assert_eq!(date_index(&dates, "2003-06-01"), Some(2));
        assert_eq!(date_index(&dates, "2004Q1"), None);
        assert_eq!(date_index(&dates, "garbage"), None);
    }

    fn nan_eq(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-12)
    }

    #[test]
    fn tcode_examples() {
        assert_eq!(apply_tcode(&[5.0, 5.0, 5.0], TransformCode::LEVEL).unwrap(), vec![5.0; 3]);
        let d = apply_tcode(&[100.0, 110.0], TransformCode::DLOG).unwrap();
        assert!(d[0].is_nan());
        assert!((d[1] - 1.1f64.ln()).abs() < 1e-15);
        assert!((d[1] - 0.09531).abs() < 1e-5);
        let d = apply_tcode(&[1.0, 3.0, 6.0], TransformCode::DIFF).unwrap();
        assert!(nan_eq(&d, &[f64::NAN, 2.0, 3.0]));
    }

    #[test]
    fn tcode_leading_nans() {
        let s = [1.0, 2.0, 4.0, 7.0, 11.0];
        for c in 1..=7u8 {
            let code = TransformCode::new(c).unwrap();
            let out = apply_tcode(&s, code).unwrap();
            assert_eq!(out.len(), s.len());
            let lead = out.iter().take_while(|v| v.is_nan()).count();
            assert_eq!(lead, code.leading_nans(), "code {c}");
        }
    }

    #[test]
    fn log_code_rejects_nonpositive_with_index() {
        let err = apply_tcode(&[1.0, 2.0, 0.0], TransformCode::LOG).unwrap_err();
        assert!(matches!(err, MrfError::Domain { index: 2, .. }));
        assert!(TransformCode::new(0).is_err());
        assert!(TransformCode::new(8).is_err());
    }

    #[test]
    fn growth_rate_difference() {
        let out = apply_tcode(&[100.0, 110.0, 132.0], TransformCode::DGROWTH).unwrap();
        assert!((out[2] - (0.2 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn tcode_round_trips() {
        let s = [3.0, 4.5, 4.0, 6.25, 7.0, 6.5];
        for c in [1u8, 2, 4, 5] {
            let code = TransformCode::new(c).unwrap();
            let tr = apply_tcode(&s, code).unwrap();
            let back = invert_tcode(&tr, code, s[0]).unwrap();
            for (a, b) in back.iter().zip(&s) {
                assert!((a - b).abs() < 1e-12, "code {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn direct_target_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let t = build_direct_target(&y, ForecastSpec::point(1)).unwrap();
        assert!(nan_eq(&t, &[2.0, 3.0, 4.0, f64::NAN]));
        let t = build_direct_target(
            &y,
            ForecastSpec::new(2, TargetMode::Average).unwrap(),
        )
        .unwrap();
        assert!(nan_eq(&t, &[2.5, 3.5, f64::NAN, f64::NAN]));
        assert!(build_direct_target(&[7.0], ForecastSpec::point(1)).is_err());
        assert!(ForecastSpec::new(0, TargetMode::Point).is_err());
    }

    #[test]
    fn lag_panel_examples() {
        let p = build_lag_panel(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!(nan_eq(p.column(0).as_slice(), &[f64::NAN, 1.0, 2.0]));
        let p = build_lag_panel(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!(nan_eq(p.column(1).as_slice(), &[f64::NAN, f64::NAN, 1.0]));
        let s: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let p = build_lag_panel(&s, 8).unwrap();
        assert_eq!(p.ncols(), 8);
        for c in 0..8 {
            let lead = p.column(c).iter().take_while(|v| v.is_nan()).count();
            assert_eq!(lead, c + 1);
        }
        assert!(build_lag_panel(&s, 0).is_err());
    }

    #[test]
    fn origin_lags_include_current_value() {
        let m = origin_lags(&[1.0, 2.0, 3.0], 2);
        assert!(nan_eq(m.column(0).as_slice(), &[1.0, 2.0, 3.0]));
        assert!(nan_eq(m.column(1).as_slice(), &[f64::NAN, 1.0, 2.0]));
    }

    #[test]
    fn frequency_inference() {
        let q: Vec<String> = ["1961Q3", "1961Q4", "1962Q1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_frequency(&q).unwrap(), Frequency::Quarterly);
        let m: Vec<String> = ["2000-01-01", "2000-02-01"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_frequency(&m).unwrap(), Frequency::Monthly);
        let fred: Vec<String> = ["3/1/1959", "6/1/1959", "9/1/1959"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_frequency(&fred).unwrap(), Frequency::Quarterly);
        let gap: Vec<String> = ["1961Q3", "1962Q1"].iter().map(|s| s.to_string()).collect();
        assert!(infer_frequency(&gap).is_err());
    }

    #[test]
    fn csv_round_trip_with_tcodes_and_missing() {
        let text = "sasdate,A,B\nfactors,1,0\ntransform,1,5\n1961Q3,1.5,100\n1961Q4,,110\n";
        let p = SeriesPanel::read_csv(text.as_bytes()).unwrap();
        assert_eq!(p.names, vec!["A", "B"]);
        assert_eq!(p.frequency, Frequency::Quarterly);
        assert!(p.values[(1, 0)].is_nan());
        assert_eq!(p.tcodes.as_ref().unwrap()[1], TransformCode::DLOG);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let again = SeriesPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(again.dates, p.dates);
        assert_eq!(again.tcodes, p.tcodes);
        assert!(again.values[(1, 0)].is_nan());
        assert_eq!(again.values[(1, 1)], 110.0);
        let tr = p.transformed().unwrap();
        assert!((tr.values[(1, 1)] - 1.1f64.ln()).abs() < 1e-15);
    }
}
