//! Single-adoption-date difference-in-differences on player panels.
//!
//! Every contrast is taken against one fixed base day, the last day before
//! the event, for post-period effects and pre-period placebos alike.
//! Estimators return per-player influence contributions already divided
//! by the day's sample size, so a bootstrap draw is `Σ_i V_i ψ_i`.

mod bootstrap;
mod estimators;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Group, PlayerPanel};
use crate::error::{invalid, Result};
use crate::stats::normal_quantile;

pub use bootstrap::{multiplier_bootstrap, BootstrapConfig, BootstrapResult, WeightLaw};
pub use estimators::{att_doubly_robust, att_unconditional, DayEstimate, NuisanceConfig};

pub const COVARIATE_NAMES: [&str; 5] = ["kills", "deaths", "assists", "gold", "matches"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidPanel {
    pub players: Vec<String>,
    pub treated: Vec<bool>,
    pub covariate_names: Vec<String>,
    /// Per player, aligned with `covariate_names`.
    pub covariates: Vec<Vec<f64>>,
    pub days: Vec<NaiveDate>,
    /// `outcomes[player][day]`; `None` when the player did not play.
    pub outcomes: Vec<Vec<Option<f64>>>,
    /// Index into `days` of the last pre-treatment day.
    pub base: usize,
    /// Players dropped because they were not observed on the base day.
    pub dropped_missing_base: usize,
}

impl DidPanel {
    pub fn new(
        players: Vec<String>,
        treated: Vec<bool>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        days: Vec<NaiveDate>,
        outcomes: Vec<Vec<Option<f64>>>,
        base: usize,
    ) -> Result<Self> {
        let n = players.len();
        if treated.len() != n || covariates.len() != n || outcomes.len() != n {
            return Err(invalid("player-indexed fields have different lengths"));
        }
        if base >= days.len() || base + 1 == days.len() {
            return Err(invalid("base day must be a day before the last one"));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("days must be strictly increasing"));
        }
        if covariates.iter().any(|c| c.len() != covariate_names.len() || c.iter().any(|v| !v.is_finite())) {
            return Err(invalid("covariates must be finite and match the covariate names"));
        }
        if outcomes.iter().any(|o| o.len() != days.len()) {
            return Err(invalid("every outcome row needs one entry per day"));
        }
        let keep: Vec<bool> = outcomes.iter().map(|o| o[base].is_some()).collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        let panel = DidPanel {
            players: retain(players, &keep),
            treated: retain(treated, &keep),
            covariates: retain(covariates, &keep),
            outcomes: retain(outcomes, &keep),
            covariate_names,
            days,
            base,
            dropped_missing_base: dropped,
        };
        if !panel.treated.iter().any(|t| *t) || panel.treated.iter().all(|t| *t) {
            return Err(invalid("panel needs treated and control players observed on the base day"));
        }
        Ok(panel)
    }

    /// Builds the panel for one treatment group against the control
    /// group. Covariates are pre-period averages of the per-day kills,
    /// deaths, assists, gold and matches columns.
    pub fn from_player_panel(panel: &PlayerPanel, design: Group) -> Result<Self> {
        if matches!(design, Group::Control | Group::Excluded) {
            return Err(invalid(format!("`{}` is not a treatment group", design.as_str())));
        }
        let mut days: Vec<NaiveDate> = panel.rows.iter().map(|r| r.date).collect();
        days.sort();
        days.dedup();
        let base = days
            .iter()
            .rposition(|d| *d < panel.event_date)
            .ok_or_else(|| invalid("player panel has no pre-treatment days"))?;
        let day_index: BTreeMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();

        struct Acc {
            treated: bool,
            sums: [f64; 5],
            pre_days: usize,
            outcomes: Vec<Option<f64>>,
        }
        let mut by_player: BTreeMap<&str, Acc> = BTreeMap::new();
        for r in &panel.rows {
            let treated = match r.group {
                g if g == design => true,
                Group::Control => false,
                _ => continue,
            };
            let acc = by_player.entry(&r.player_id).or_insert_with(|| Acc {
                treated,
                sums: [0.0; 5],
                pre_days: 0,
                outcomes: vec![None; days.len()],
            });
            if acc.treated != treated {
                return Err(invalid(format!("player `{}` changes group", r.player_id)));
            }
            let d = day_index[&r.date];
            if acc.outcomes[d].is_some() {
                return Err(invalid(format!("player `{}` has two rows on {}", r.player_id, r.date)));
            }
            acc.outcomes[d] = Some(r.win_rate);
            if r.date < panel.event_date {
                acc.pre_days += 1;
                for (s, v) in acc.sums.iter_mut().zip([r.kills, r.deaths, r.assists, r.gold, r.matches as f64]) {
                    *s += v;
                }
            }
        }
        let mut players = Vec::new();
        let mut treated = Vec::new();
        let mut covariates = Vec::new();
        let mut outcomes = Vec::new();
        for (p, acc) in by_player {
            players.push(p.to_string());
            treated.push(acc.treated);
            let n = acc.pre_days.max(1) as f64;
            covariates.push(acc.sums.iter().map(|s| s / n).collect());
            outcomes.push(acc.outcomes);
        }
        DidPanel::new(
            players,
            treated,
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            covariates,
            days,
            outcomes,
            base,
        )
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn base_date(&self) -> NaiveDate {
        self.days[self.base]
    }

    pub fn is_pre(&self, day: usize) -> bool {
        day <= self.base
    }

    /// `Y_t − Y_base` per player; `None` if either day is missing.
    pub fn differences(&self, day: usize) -> Vec<Option<f64>> {
        self.outcomes
            .iter()
            .map(|o| Some(o[day]? - o[self.base]?))
            .collect()
    }

    /// Replaces every covariate by a common constant.
    pub fn with_constant_covariates(&self) -> Self {
        let mut out = self.clone();
        for c in &mut out.covariates {
            c.iter_mut().for_each(|v| *v = 1.0);
        }
        out
    }
}

fn retain<T>(v: Vec<T>, keep: &[bool]) -> Vec<T> {
    v.into_iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| x).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Unconditional,
    DoublyRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttDay {
    pub date: NaiveDate,
    pub is_pre: bool,
    pub estimable: bool,
    pub att: Option<f64>,
    pub se: Option<f64>,
    pub pointwise_ci: Option<(f64, f64)>,
    pub band: Option<(f64, f64)>,
    /// Zero bootstrap spread: both intervals collapse to the point.
    pub degenerate: bool,
    pub n_treated: usize,
    pub n_control: usize,
    /// Controls removed by propensity trimming.
    pub trimmed: usize,
    /// Why the day could not be estimated.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub n_draws: usize,
    pub weight_law: WeightLaw,
    pub seed: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttSeries {
    pub estimator: Estimator,
    pub base_date: NaiveDate,
    pub days: Vec<AttDay>,
    pub avg_att: Option<f64>,
    pub avg_se: Option<f64>,
    pub avg_ci: Option<(f64, f64)>,
    /// Sup-t critical value of the simultaneous band.
    pub critical_value: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub dropped_missing_base: usize,
    pub bootstrap: BootstrapInfo,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub estimator: Estimator,
    /// Number of pre-period placebo days before the base day; `None`
    /// uses the whole pre-period.
    pub pre_window: Option<usize>,
    pub bootstrap: BootstrapConfig,
    pub nuisance: NuisanceConfig,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            estimator: Estimator::Unconditional,
            pre_window: None,
            bootstrap: BootstrapConfig::default(),
            nuisance: NuisanceConfig::default(),
        }
    }
}

/// ATT(t) for post days and placebo ATT(t) for pre days, with bootstrap
/// standard errors, simultaneous bands and the post-period average.
pub fn att_series(panel: &DidPanel, cfg: &SeriesConfig) -> Result<AttSeries> {
    let first = match cfg.pre_window {
        Some(w) => panel.base.saturating_sub(w),
        None => 0,
    };
    let day_ids: Vec<usize> = (first..panel.days.len()).filter(|&d| d != panel.base).collect();
    let estimates: Vec<Result<DayEstimate>> = day_ids
        .par_iter()
        .map(|&d| match cfg.estimator {
            Estimator::Unconditional => att_unconditional(panel, d),
            Estimator::DoublyRobust => att_doubly_robust(panel, d, &cfg.nuisance),
        })
        .collect();

    let mut days = Vec::with_capacity(day_ids.len());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut row_of_day = Vec::with_capacity(day_ids.len());
    let mut post_rows = Vec::new();
    let mut post_atts = Vec::new();
    for (&d, est) in day_ids.iter().zip(estimates) {
        let mut day = AttDay {
            date: panel.days[d],
            is_pre: panel.is_pre(d),
            estimable: false,
            att: None,
            se: None,
            pointwise_ci: None,
            band: None,
            degenerate: false,
            n_treated: 0,
            n_control: 0,
            trimmed: 0,
            note: None,
        };
        match est {
            Ok(e) => {
                day.estimable = true;
                day.att = Some(e.att);
                day.n_treated = e.n_treated;
                day.n_control = e.n_control;
                day.trimmed = e.trimmed;
                if !day.is_pre {
                    post_rows.push(rows.len());
                    post_atts.push(e.att);
                }
                row_of_day.push(Some(rows.len()));
                rows.push(e.influence);
            }
            Err(e) if e.is_numerical() => return Err(e),
            Err(e) => {
                day.note = Some(e.to_string());
                row_of_day.push(None);
            }
        }
        days.push(day);
    }

    let mut warnings = Vec::new();
    let info = BootstrapInfo {
        n_draws: cfg.bootstrap.n_draws,
        weight_law: cfg.bootstrap.weight_law,
        seed: cfg.bootstrap.seed,
        level: cfg.bootstrap.level,
    };
    let n_treated = panel.treated.iter().filter(|t| **t).count();
    let mut series = AttSeries {
        estimator: cfg.estimator,
        base_date: panel.base_date(),
        days,
        avg_att: None,
        avg_se: None,
        avg_ci: None,
        critical_value: None,
        n_treated,
        n_control: panel.n_players() - n_treated,
        dropped_missing_base: panel.dropped_missing_base,
        bootstrap: info,
        warnings: Vec::new(),
    };
    if rows.is_empty() {
        series.warnings.push("no estimable days".into());
        return Ok(series);
    }

    // The post-period average is bootstrapped jointly with the days.
    let n_day_rows = rows.len();
    if !post_rows.is_empty() {
        let k = post_rows.len() as f64;
        let avg_row: Vec<f64> = (0..panel.n_players())
            .map(|i| post_rows.iter().map(|&r| rows[r][i]).sum::<f64>() / k)
            .collect();
        rows.push(avg_row);
    }
    let boot = bootstrap::run(&rows, n_day_rows, &cfg.bootstrap)?;
    warnings.extend(boot.warnings.iter().cloned());
    let z = normal_quantile(0.5 + cfg.bootstrap.level / 2.0);

    for (day, row) in series.days.iter_mut().zip(&row_of_day) {
        let (Some(r), Some(att)) = (*row, day.att) else { continue };
        let se = boot.se[r];
        day.se = Some(se);
        day.degenerate = boot.degenerate[r];
        day.pointwise_ci = Some((att - z * se, att + z * se));
        let c = if day.degenerate { 0.0 } else { boot.critical_value.unwrap_or(z) };
        day.band = Some((att - c * se, att + c * se));
    }
    if !post_rows.is_empty() {
        let avg = post_atts.iter().sum::<f64>() / post_atts.len() as f64;
        let se = boot.se[n_day_rows];
        series.avg_att = Some(avg);
        series.avg_se = Some(se);
        series.avg_ci = Some((avg - z * se, avg + z * se));
    } else {
        warnings.push("no estimable post-treatment days".into());
    }
    series.critical_value = boot.critical_value;
    series.warnings = warnings;
    Ok(series)
}
