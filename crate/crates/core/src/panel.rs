//! Balanced unit-by-day outcome panels and their on-disk format.
//!
//! A panel is stored as a long CSV (`unit,date,value`) plus a JSON sidecar
//! with the same file stem carrying the treatment metadata.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const PANEL_SCHEMA_VERSION: u32 = 1;

/// Balanced `n × T` outcome matrix with the treated unit and donor-pool
/// exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub units: Vec<String>,
    pub times: Vec<NaiveDate>,
    /// Row-major, one row per unit.
    pub outcomes: Vec<Vec<f64>>,
    pub treated_unit: String,
    pub t_pre: usize,
    pub lgb_units: BTreeSet<String>,
    pub excluded_units: BTreeSet<String>,
}

impl PanelDataset {
    pub fn new(
        units: Vec<String>,
        times: Vec<NaiveDate>,
        outcomes: Vec<Vec<f64>>,
        treated_unit: impl Into<String>,
        t_pre: usize,
    ) -> Result<Self> {
        let panel = PanelDataset {
            units,
            times,
            outcomes,
            treated_unit: treated_unit.into(),
            t_pre,
            lgb_units: BTreeSet::new(),
            excluded_units: BTreeSet::new(),
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn with_lgb_units<I, S>(mut self, units: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.lgb_units = units.into_iter().map(Into::into).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn with_excluded_units<I, S>(mut self, units: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.excluded_units = units.into_iter().map(Into::into).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n_t = self.times.len();
        if self.units.is_empty() {
            return Err(invalid("panel has no units"));
        }
        if self.outcomes.len() != self.units.len() {
            return Err(invalid(format!(
                "{} outcome rows for {} units",
                self.outcomes.len(),
                self.units.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (unit, row) in self.units.iter().zip(&self.outcomes) {
            if !seen.insert(unit.as_str()) {
                return Err(invalid(format!("duplicate unit label `{unit}`")));
            }
            if row.len() != n_t {
                return Err(invalid(format!(
                    "unit `{unit}` has {} periods, expected {n_t}",
                    row.len()
                )));
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("unit `{unit}` has a non-finite value at period {k}")));
            }
        }
        if self.t_pre < 1 || self.t_pre >= n_t {
            return Err(invalid(format!(
                "t_pre = {} must satisfy 1 <= t_pre < T = {n_t}",
                self.t_pre
            )));
        }
        if !seen.contains(self.treated_unit.as_str()) {
            return Err(invalid(format!(
                "treated unit `{}` is not in the panel",
                self.treated_unit
            )));
        }
        for u in self.lgb_units.iter().chain(&self.excluded_units) {
            if !seen.contains(u.as_str()) {
                return Err(invalid(format!("flagged unit `{u}` is not in the panel")));
            }
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.times.len()
    }

    pub fn n_post(&self) -> usize {
        self.times.len() - self.t_pre
    }

    pub fn unit_index(&self, label: &str) -> Option<usize> {
        self.units.iter().position(|u| u == label)
    }

    pub fn series(&self, label: &str) -> Option<&[f64]> {
        self.unit_index(label).map(|i| self.outcomes[i].as_slice())
    }

    pub fn treated_series(&self) -> &[f64] {
        self.series(&self.treated_unit)
            .expect("validated panel contains its treated unit")
    }

    /// Units eligible for synthetic-control weight: everything except the
    /// treated unit, LGB-flagged units and explicit exclusions, in panel order.
    pub fn donor_pool(&self) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| {
                **u != self.treated_unit
                    && !self.lgb_units.contains(*u)
                    && !self.excluded_units.contains(*u)
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn donor_labels(&self) -> Vec<String> {
        self.donor_pool()
            .into_iter()
            .map(|i| self.units[i].clone())
            .collect()
    }

    /// Same data with a different pseudo-treated unit. The previous treated
    /// unit is added to the exclusions so it never enters a donor pool.
    pub fn reassign_treated(&self, label: &str) -> Result<Self> {
        if self.unit_index(label).is_none() {
            return Err(invalid(format!("unit `{label}` is not in the panel")));
        }
        let mut out = self.clone();
        if label != self.treated_unit {
            out.excluded_units.insert(self.treated_unit.clone());
            out.excluded_units.remove(label);
        }
        out.treated_unit = label.to_string();
        Ok(out)
    }

    pub fn with_t_pre(&self, t_pre: usize) -> Result<Self> {
        let mut out = self.clone();
        out.t_pre = t_pre;
        out.validate()?;
        Ok(out)
    }

    pub fn map_series<F>(&self, mut f: F) -> Self
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut out = self.clone();
        out.outcomes = self.outcomes.iter().map(|row| f(row)).collect();
        out
    }

    pub fn sidecar(&self) -> PanelSidecar {
        PanelSidecar {
            schema_version: PANEL_SCHEMA_VERSION,
            treated_unit: self.treated_unit.clone(),
            t_pre: self.t_pre,
            lgb_units: self.lgb_units.iter().cloned().collect(),
            excluded_units: self.excluded_units.iter().cloned().collect(),
        }
    }

    /// Writes `path` (long CSV) and its sidecar (`path` with `.json`).
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["unit", "date", "value"]).map_err(csv_err(path))?;
        for (unit, row) in self.units.iter().zip(&self.outcomes) {
            for (day, v) in self.times.iter().zip(row) {
                w.write_record([unit.as_str(), &day.to_string(), &format_f64(*v)])
                    .map_err(csv_err(path))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))?;
        Ok(())
    }

    /// Reads a panel CSV and its sidecar. Unit order follows first
    /// appearance in the file; days are sorted.
    pub fn read(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PanelSidecar = serde_json::from_str(&text)?;

        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers().map_err(csv_err(path))?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| invalid(format!("{}: missing column `{name}`", path.display())))
        };
        let (cu, cd, cv) = (col("unit")?, col("date")?, col("value")?);

        let mut units: Vec<String> = Vec::new();
        let mut unit_pos: HashMap<String, usize> = HashMap::new();
        let mut cells: BTreeMap<(usize, NaiveDate), f64> = BTreeMap::new();
        let mut days = BTreeSet::new();
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(csv_err(path))?;
            let unit = rec.get(cu).unwrap_or_default().to_string();
            let date = parse_date(rec.get(cd).unwrap_or_default(), row, "date")?;
            let raw = rec.get(cv).unwrap_or_default();
            let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                column: "value".into(),
                message: format!("`{raw}` is not a number"),
            })?;
            let idx = *unit_pos.entry(unit.clone()).or_insert_with(|| {
                units.push(unit.clone());
                units.len() - 1
            });
            days.insert(date);
            if cells.insert((idx, date), value).is_some() {
                return Err(invalid(format!("duplicate cell for unit `{unit}` on {date}")));
            }
        }
        let times: Vec<NaiveDate> = days.into_iter().collect();
        let mut outcomes = vec![vec![0.0; times.len()]; units.len()];
        for (i, row) in outcomes.iter_mut().enumerate() {
            for (t, day) in times.iter().enumerate() {
                row[t] = *cells.get(&(i, *day)).ok_or_else(|| {
                    invalid(format!("unbalanced panel: unit `{}` has no value on {day}", units[i]))
                })?;
            }
        }
        let panel = PanelDataset {
            units,
            times,
            outcomes,
            treated_unit: meta.treated_unit,
            t_pre: meta.t_pre,
            lgb_units: meta.lgb_units.into_iter().collect(),
            excluded_units: meta.excluded_units.into_iter().collect(),
        };
        panel.validate()?;
        Ok(panel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSidecar {
    pub schema_version: u32,
    pub treated_unit: String,
    pub t_pre: usize,
    #[serde(default)]
    pub lgb_units: Vec<String>,
    #[serde(default)]
    pub excluded_units: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn parse_date(raw: &str, row: usize, column: &str) -> Result<NaiveDate> {
    let s = raw.trim();
    // Accept full timestamps; the match belongs to the UTC day it started.
    let day = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not an ISO-8601 date"),
    })
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            row,
            column: String::new(),
            message: format!("{}: {e}", path.display()),
        }
    }
}
