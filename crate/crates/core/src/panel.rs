//! Balanced panel storage and CSV ingestion.
//!
//! Rows are stored unit-major: row `r = i * T + t` (zero-based) holds unit `i`
//! at period `t`, so each unit's `T` observations are contiguous.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Column-name mapping used by [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMapping {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub x: Vec<String>,
    pub w: Vec<String>,
    /// Subset of `x` that must be constant within each period (`z_t`-style).
    pub time_only: Vec<String>,
}

impl ColumnMapping {
    pub fn new(y: &str, x: &[&str], w: &[&str]) -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            y: y.into(),
            x: x.iter().map(|s| s.to_string()).collect(),
            w: w.iter().map(|s| s.to_string()).collect(),
            time_only: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n_units: usize,
    n_periods: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    d_x: usize,
    d_w: usize,
    y_name: String,
    x_names: Vec<String>,
    w_names: Vec<String>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    time_only: Vec<bool>,
}

/// Borrowed view of one unit's `T` rows.
#[derive(Debug, Clone, Copy)]
pub struct UnitBlock<'a> {
    pub y: &'a [f64],
    /// `T x d_x`, row-major.
    pub x: &'a [f64],
    /// `T x d_w`, row-major.
    pub w: &'a [f64],
}

impl PanelDataset {
    /// Build from unit-major arrays. `x` is `N·T x d_x` and `w` is `N·T x d_w`,
    /// both row-major. Identifiers default to `1..=N` and `1..=T`.
    pub fn new(
        n_units: usize,
        n_periods: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        d_x: usize,
        w: Vec<f64>,
        d_w: usize,
    ) -> Result<Self> {
        if n_units == 0 || n_periods == 0 {
            return Err(Error::InvalidArgument(
                "panel needs at least one unit and one period".into(),
            ));
        }
        if d_x == 0 || d_w == 0 {
            return Err(Error::InvalidArgument(
                "panel needs at least one x column and one w column".into(),
            ));
        }
        let n = n_units * n_periods;
        for (what, got, expected) in [
            ("y length", y.len(), n),
            ("x length", x.len(), n * d_x),
            ("w length", w.len(), n * d_w),
        ] {
            if got != expected {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        let ds = Self {
            n_units,
            n_periods,
            y,
            x,
            w,
            d_x,
            d_w,
            y_name: "y".into(),
            x_names: default_names("x", d_x),
            w_names: default_names("w", d_w),
            unit_ids: (1..=n_units).map(|i| i.to_string()).collect(),
            time_ids: (1..=n_periods).map(|t| t.to_string()).collect(),
            time_only: vec![false; d_x],
        };
        ds.check_finite()?;
        Ok(ds)
    }

    pub fn with_names(mut self, y: &str, x: &[&str], w: &[&str]) -> Result<Self> {
        if x.len() != self.d_x || w.len() != self.d_w {
            return Err(Error::DimensionMismatch {
                what: "column names",
                expected: self.d_x + self.d_w,
                got: x.len() + w.len(),
            });
        }
        self.y_name = y.into();
        self.x_names = x.iter().map(|s| s.to_string()).collect();
        self.w_names = w.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn with_ids(mut self, unit_ids: Vec<String>, time_ids: Vec<String>) -> Result<Self> {
        if unit_ids.len() != self.n_units || time_ids.len() != self.n_periods {
            return Err(Error::DimensionMismatch {
                what: "identifiers",
                expected: self.n_units + self.n_periods,
                got: unit_ids.len() + time_ids.len(),
            });
        }
        self.unit_ids = unit_ids;
        self.time_ids = time_ids;
        Ok(self)
    }

    /// Flag x columns as time-only-varying; each must be constant across units
    /// within every period.
    pub fn with_time_only(mut self, columns: &[usize]) -> Result<Self> {
        for &c in columns {
            if c >= self.d_x {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: self.d_x,
                });
            }
            if let Some(t) = self.first_time_variation(c) {
                return Err(Error::TimeVaryingColumnViolation {
                    column: self.x_names[c].clone(),
                    time: self.time_ids[t].clone(),
                });
            }
            self.time_only[c] = true;
        }
        Ok(self)
    }

    fn check_finite(&self) -> Result<()> {
        for r in 0..self.n_obs() {
            if !self.y[r].is_finite() {
                return Err(Error::NonFiniteValue {
                    row: r,
                    column: self.y_name.clone(),
                });
            }
            if let Some(c) = self.x_row(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: r,
                    column: self.x_names[c].clone(),
                });
            }
            if let Some(c) = self.w_row(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: r,
                    column: self.w_names[c].clone(),
                });
            }
        }
        Ok(())
    }

    /// First period at which x column `c` is not constant across units.
    fn first_time_variation(&self, c: usize) -> Option<usize> {
        (0..self.n_periods).find(|&t| {
            let first = self.x[t * self.d_x + c];
            (1..self.n_units).any(|i| self.x[self.row(i, t) * self.d_x + c] != first)
        })
    }

    /// Indices of x columns that happen to be constant within every period,
    /// whether or not they were flagged.
    pub fn detect_time_only_columns(&self) -> Vec<usize> {
        (0..self.d_x)
            .filter(|&c| self.first_time_variation(c).is_none())
            .collect()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
    pub fn n_obs(&self) -> usize {
        self.n_units * self.n_periods
    }
    pub fn d_x(&self) -> usize {
        self.d_x
    }
    pub fn d_w(&self) -> usize {
        self.d_w
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// Row-major `N·T x d_x`.
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    /// Row-major `N·T x d_w`.
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    pub fn y_name(&self) -> &str {
        &self.y_name
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }
    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }
    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }
    pub fn time_only_flags(&self) -> &[bool] {
        &self.time_only
    }

    #[inline]
    pub fn row(&self, unit: usize, period: usize) -> usize {
        unit * self.n_periods + period
    }
    #[inline]
    pub fn x_row(&self, r: usize) -> &[f64] {
        &self.x[r * self.d_x..(r + 1) * self.d_x]
    }
    #[inline]
    pub fn w_row(&self, r: usize) -> &[f64] {
        &self.w[r * self.d_w..(r + 1) * self.d_w]
    }
    pub fn x_column(&self, c: usize) -> Vec<f64> {
        self.x.iter().skip(c).step_by(self.d_x).copied().collect()
    }
    pub fn w_column(&self, c: usize) -> Vec<f64> {
        self.w.iter().skip(c).step_by(self.d_w).copied().collect()
    }

    /// Rows of unit `i` (zero-based).
    pub fn unit_block(&self, i: usize) -> Result<UnitBlock<'_>> {
        if i >= self.n_units {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n_units,
            });
        }
        let (a, b) = (i * self.n_periods, (i + 1) * self.n_periods);
        Ok(UnitBlock {
            y: &self.y[a..b],
            x: &self.x[a * self.d_x..b * self.d_x],
            w: &self.w[a * self.d_w..b * self.d_w],
        })
    }

    /// Same panel with a different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_obs() {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: self.n_obs(),
                got: y.len(),
            });
        }
        let mut ds = self.clone();
        ds.y = y;
        ds.check_finite()?;
        Ok(ds)
    }

    /// Same panel restricted to the given x columns.
    pub fn select_x(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("no x columns selected".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= self.d_x) {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: self.d_x,
            });
        }
        let mut x = Vec::with_capacity(self.n_obs() * columns.len());
        for r in 0..self.n_obs() {
            let row = self.x_row(r);
            x.extend(columns.iter().map(|&c| row[c]));
        }
        let mut ds = self.clone();
        ds.x = x;
        ds.d_x = columns.len();
        ds.x_names = columns.iter().map(|&c| self.x_names[c].clone()).collect();
        ds.time_only = columns.iter().map(|&c| self.time_only[c]).collect();
        Ok(ds)
    }

    /// Write in long format with header `unit,time,<y>,<x...>,<w...>`.
    /// Values use the shortest representation that round-trips exactly.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["unit".to_string(), "time".to_string(), self.y_name.clone()];
        header.extend(self.x_names.iter().cloned());
        header.extend(self.w_names.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n_units {
            for t in 0..self.n_periods {
                let r = self.row(i, t);
                let mut rec = vec![
                    self.unit_ids[i].clone(),
                    self.time_ids[t].clone(),
                    self.y[r].to_string(),
                ];
                rec.extend(self.x_row(r).iter().map(f64::to_string));
                rec.extend(self.w_row(r).iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Mapping that reloads a file written by [`PanelDataset::write_csv`].
    pub fn column_mapping(&self) -> ColumnMapping {
        ColumnMapping {
            unit: "unit".into(),
            time: "time".into(),
            y: self.y_name.clone(),
            x: self.x_names.clone(),
            w: self.w_names.clone(),
            time_only: self
                .x_names
                .iter()
                .zip(&self.time_only)
                .filter(|(_, f)| **f)
                .map(|(n, _)| n.clone())
                .collect(),
        }
    }
}

fn default_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|c| format!("{prefix}{c}")).collect()
    }
}

/// Identifier ordering: numeric when every identifier parses as a number,
/// lexicographic otherwise.
fn sort_ids(ids: BTreeSet<String>) -> Vec<String> {
    let mut ids: Vec<String> = ids.into_iter().collect();
    let numeric: Option<Vec<f64>> = ids.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut paired: Vec<(f64, String)> = keys.into_iter().zip(ids).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        ids = paired.into_iter().map(|(_, s)| s).collect();
    }
    ids
}

/// Load a long-format CSV into a validated balanced panel, sorted by unit and
/// then by time (ascending).
pub fn load_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    if mapping.x.is_empty() || mapping.w.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one x column and one w column are required".into(),
        ));
    }
    let unit_col = find(&mapping.unit)?;
    let time_col = find(&mapping.time)?;
    let y_col = find(&mapping.y)?;
    let x_cols = mapping.x.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let w_cols = mapping.w.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let time_only = mapping
        .time_only
        .iter()
        .map(|name| {
            mapping
                .x
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    struct Raw {
        unit: String,
        time: String,
        y: f64,
        x: Vec<f64>,
        w: Vec<f64>,
    }

    let parse = |rec: &csv::StringRecord, col: usize, row: usize| -> Result<f64> {
        let field = rec.get(col).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(Error::NonFiniteValue {
                row,
                column: headers[col].to_string(),
            }),
            Err(_) => Err(Error::Csv(format!(
                "row {row}, column `{}`: cannot parse `{field}` as a number",
                &headers[col]
            ))),
        }
    };

    let mut raws = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 1;
        raws.push(Raw {
            unit: rec.get(unit_col).unwrap_or("").to_string(),
            time: rec.get(time_col).unwrap_or("").to_string(),
            y: parse(&rec, y_col, row)?,
            x: x_cols.iter().map(|&c| parse(&rec, c, row)).collect::<Result<_>>()?,
            w: w_cols.iter().map(|&c| parse(&rec, c, row)).collect::<Result<_>>()?,
        });
    }
    if raws.is_empty() {
        return Err(Error::InvalidArgument("input has no data rows".into()));
    }

    let unit_ids = sort_ids(raws.iter().map(|r| r.unit.clone()).collect());
    let time_ids = sort_ids(raws.iter().map(|r| r.time.clone()).collect());
    let unit_pos: HashMap<&str, usize> = unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let time_pos: HashMap<&str, usize> = time_ids.iter().enumerate().map(|(t, s)| (s.as_str(), t)).collect();
    let (n, t_len) = (unit_ids.len(), time_ids.len());

    let mut slot: Vec<Option<usize>> = vec![None; n * t_len];
    for (k, raw) in raws.iter().enumerate() {
        let r = unit_pos[raw.unit.as_str()] * t_len + time_pos[raw.time.as_str()];
        if slot[r].is_some() {
            return Err(Error::DuplicateCell {
                unit: raw.unit.clone(),
                time: raw.time.clone(),
            });
        }
        slot[r] = Some(k);
    }
    let missing: Vec<(String, String)> = slot
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(r, _)| (unit_ids[r / t_len].clone(), time_ids[r % t_len].clone()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnbalancedPanel { missing });
    }

    let (d_x, d_w) = (x_cols.len(), w_cols.len());
    let mut y = Vec::with_capacity(n * t_len);
    let mut x = Vec::with_capacity(n * t_len * d_x);
    let mut w = Vec::with_capacity(n * t_len * d_w);
    for k in slot.into_iter().flatten() {
        let raw = &raws[k];
        y.push(raw.y);
        x.extend_from_slice(&raw.x);
        w.extend_from_slice(&raw.w);
    }
    let xn: Vec<&str> = mapping.x.iter().map(String::as_str).collect();
    let wn: Vec<&str> = mapping.w.iter().map(String::as_str).collect();
    PanelDataset::new(n, t_len, y, x, d_x, w, d_w)?
        .with_names(&mapping.y, &xn, &wn)?
        .with_ids(unit_ids, time_ids)?
        .with_time_only(&time_only)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const MINIMAL: &str = "unit,time,y,x,w\n\
        u2,3,6,0.6,-6\n\
        u1,1,1,0.1,-1\n\
        u1,2,2,0.2,-2\n\
        u2,1,4,0.4,-4\n\
        u1,3,3,0.3,-3\n\
        u2,2,5,0.5,-5\n";

    fn mapping() -> ColumnMapping {
        ColumnMapping::new("y", &["x"], &["w"])
    }

    #[test]
    fn loads_minimal_panel_in_unit_major_order() {
        let f = write(MINIMAL);
        let ds = load_csv(f.path(), &mapping()).unwrap();
        assert_eq!((ds.n_units(), ds.n_periods()), (2, 3));
        assert_eq!(ds.y(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(ds.x(), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(ds.unit_ids(), &["u1", "u2"]);
        assert_eq!(ds.time_ids(), &["1", "2", "3"]);
    }

    #[test]
    fn numeric_time_ids_sort_numerically() {
        let f = write("unit,time,y,x,w\n1,10,1,1,1\n1,9,2,2,2\n");
        let ds = load_csv(f.path(), &mapping()).unwrap();
        assert_eq!(ds.time_ids(), &["9", "10"]);
        assert_eq!(ds.y(), &[2.0, 1.0]);
    }

    #[test]
    fn missing_cell_is_reported() {
        let text: String = MINIMAL
            .lines()
            .filter(|l| !l.starts_with("u2,3"))
            .collect::<Vec<_>>()
            .join("\n");
        let f = write(&text);
        match load_csv(f.path(), &mapping()) {
            Err(Error::UnbalancedPanel { missing }) => {
                assert_eq!(missing, vec![("u2".to_string(), "3".to_string())])
            }
            other => panic!("expected UnbalancedPanel, got {other:?}"),
        }
    }

    #[test]
    fn nan_is_rejected_with_row() {
        let f = write("unit,time,y,x,w\n1,1,1,1,1\n1,2,NaN,2,2\n");
        assert_eq!(
            load_csv(f.path(), &mapping()),
            Err(Error::NonFiniteValue {
                row: 2,
                column: "y".into()
            })
        );
    }

    #[test]
    fn duplicate_and_missing_columns() {
        let f = write("unit,time,y,x,w\n1,1,1,1,1\n1,1,2,2,2\n");
        assert!(matches!(
            load_csv(f.path(), &mapping()),
            Err(Error::DuplicateCell { .. })
        ));
        let f = write(MINIMAL);
        let mut m = mapping();
        m.x = vec!["nope".into()];
        assert_eq!(load_csv(f.path(), &m), Err(Error::MissingColumn("nope".into())));
    }

    #[test]
    fn time_only_flag_is_validated() {
        let f = write("unit,time,y,x,z,w\n1,1,1,1,5,1\n2,1,1,2,5,3\n1,2,1,3,6,1\n2,2,1,4,7,2\n");
        let mut m = ColumnMapping::new("y", &["x", "z"], &["w"]);
        m.time_only = vec!["z".into()];
        assert_eq!(
            load_csv(f.path(), &m),
            Err(Error::TimeVaryingColumnViolation {
                column: "z".into(),
                time: "2".into()
            })
        );
        let f = write("unit,time,y,x,z,w\n1,1,1,1,5,1\n2,1,1,2,5,3\n1,2,1,3,6,1\n2,2,1,4,6,2\n");
        let ds = load_csv(f.path(), &m).unwrap();
        assert_eq!(ds.time_only_flags(), &[false, true]);
        assert_eq!(ds.detect_time_only_columns(), vec![1]);
    }

    #[test]
    fn unit_blocks_are_contiguous() {
        let f = write(MINIMAL);
        let ds = load_csv(f.path(), &mapping()).unwrap();
        assert_eq!(ds.unit_block(0).unwrap().y, &[1.0, 2.0, 3.0]);
        assert_eq!(ds.unit_block(1).unwrap().y, &[4.0, 5.0, 6.0]);
        assert_eq!(ds.unit_block(1).unwrap().w, &[-4.0, -5.0, -6.0]);
        assert_eq!(
            ds.unit_block(2).unwrap_err(),
            Error::IndexOutOfRange { index: 2, len: 2 }
        );
    }
}
