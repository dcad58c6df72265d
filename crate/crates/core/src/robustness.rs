//! Robustness checks around a synthetic-control fit: placebo-in-space
//! RMSE ratios, backdating the event, and leave-one-out donor pools.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::PanelDataset;
use crate::scm::{fit_prepared, fit_with_inference, prepare, rms, FitConfig, SCFit};
use crate::stats::mean;

/// Donor weights at or below this are treated as zero by leave-one-out.
pub const LOO_WEIGHT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRatio {
    pub unit: String,
    pub is_treated: bool,
    pub pre_rmse: f64,
    pub post_rmse: f64,
    /// `None` when the pre-period fit is exact.
    pub ratio: Option<f64>,
    /// Whether the unit passes the pre-RMSE filter (always true for the
    /// treated unit).
    pub included: bool,
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRatioReport {
    pub units: Vec<UnitRatio>,
    /// 1 = largest ratio among included units.
    pub treated_rank: usize,
    pub n_considered: usize,
    pub min_pre_rmse_filter: f64,
    pub skipped: Vec<(String, String)>,
}

/// Refits with every donor as pseudo-treated and ranks the treated unit's
/// post/pre RMSE ratio among units whose pre-period RMSE reaches
/// `min_pre_rmse`.
pub fn placebo_in_space(panel: &PanelDataset, cfg: &FitConfig, min_pre_rmse: f64) -> Result<RmseRatioReport> {
    if !(min_pre_rmse >= 0.0) {
        return Err(invalid(format!("min_pre_rmse must be non-negative, got {min_pre_rmse}")));
    }
    let (prepared, raw) = prepare(panel, cfg)?;
    let donors = prepared.donor_labels();
    if donors.len() < 2 {
        return Err(invalid("placebo-in-space needs at least two donor units"));
    }
    let treated_fit = fit_prepared(&prepared, &raw)?;
    let placebo: Vec<(String, Result<SCFit>)> = donors
        .par_iter()
        .map(|label| {
            let r = prepared.reassign_treated(label).and_then(|p| fit_prepared(&p, &raw));
            (label.clone(), r)
        })
        .collect();

    let describe = |f: &SCFit, is_treated: bool| {
        let pre = f.pre_rmse;
        let post = f.post_rmse();
        let ratio = (pre > 0.0).then(|| post / pre);
        UnitRatio {
            unit: f.treated_unit.clone(),
            is_treated,
            pre_rmse: pre,
            post_rmse: post,
            ratio,
            included: ratio.is_some() && (is_treated || pre >= min_pre_rmse),
            gaps: f.gaps(),
        }
    };
    let mut units = vec![describe(&treated_fit, true)];
    let mut skipped = Vec::new();
    for (label, r) in placebo {
        match r {
            Ok(f) => units.push(describe(&f, false)),
            Err(e) => skipped.push((label, e.to_string())),
        }
    }
    let treated_ratio = units[0].ratio.ok_or_else(|| {
        Error::Numerical("treated unit fits the pre-period exactly; RMSE ratio undefined".into())
    })?;
    let included: Vec<f64> = units.iter().filter(|u| u.included).filter_map(|u| u.ratio).collect();
    let treated_rank = 1 + included.iter().filter(|&&r| r > treated_ratio).count();
    Ok(RmseRatioReport {
        n_considered: included.len(),
        treated_rank,
        units,
        min_pre_rmse_filter: min_pre_rmse,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdateReport {
    pub shift_days: usize,
    /// Fit with the event moved `shift_days` earlier; its effect series
    /// starts at the shifted date.
    pub fit: SCFit,
    /// Gaps on the true pre-period days after the shifted date.
    pub holdout_gaps: Vec<f64>,
    pub holdout_rmse: f64,
    pub holdout_mean: f64,
    /// Gaps on the true post-period days.
    pub post_effects: Vec<f64>,
    pub post_mean_effect: f64,
}

/// Moves the event `shift_days` earlier and refits. Smoothing, if any, is
/// applied once around the true event date so the shifted fit sees the
/// same series as the original one.
pub fn backdate(panel: &PanelDataset, shift_days: usize, cfg: &FitConfig) -> Result<BackdateReport> {
    if shift_days >= panel.t_pre {
        return Err(invalid(format!(
            "shift of {shift_days} days leaves no pre-treatment period (t_pre = {})",
            panel.t_pre
        )));
    }
    let (prepared, raw) = prepare(panel, cfg)?;
    let shifted = prepared.with_t_pre(panel.t_pre - shift_days)?;
    let fit = fit_with_inference(&shifted, &raw)?;
    let holdout_gaps = fit.effects[..shift_days].to_vec();
    let post_effects = fit.effects[shift_days..].to_vec();
    Ok(BackdateReport {
        shift_days,
        holdout_rmse: rms(&holdout_gaps),
        holdout_mean: if holdout_gaps.is_empty() { 0.0 } else { mean(&holdout_gaps) },
        post_mean_effect: mean(&post_effects),
        holdout_gaps,
        post_effects,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooFit {
    pub dropped: String,
    pub fit: SCFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub baseline: SCFit,
    pub fits: Vec<LooFit>,
}

/// Refits once per donor with non-negligible weight, that donor removed.
pub fn leave_one_out(panel: &PanelDataset, cfg: &FitConfig) -> Result<LooReport> {
    let (prepared, raw) = prepare(panel, cfg)?;
    let baseline = fit_prepared(&prepared, &raw)?;
    let active: Vec<String> = baseline
        .weights
        .nonzero(LOO_WEIGHT_THRESHOLD)
        .into_iter()
        .map(|(l, _)| l.to_string())
        .collect();
    if active.len() < 2 {
        return Err(invalid(format!(
            "baseline fit has {} donor(s) with weight above {LOO_WEIGHT_THRESHOLD}; nothing to leave out",
            active.len()
        )));
    }
    let fits = active
        .par_iter()
        .map(|label| {
            let mut reduced = prepared.clone();
            reduced.excluded_units.insert(label.clone());
            fit_prepared(&reduced, &raw).map(|fit| LooFit {
                dropped: label.clone(),
                fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooReport { baseline, fits })
}
