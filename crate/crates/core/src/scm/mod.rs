//! Synthetic-control estimation: donor weights, counterfactual, effect
//! path, and placebo-based variance of the average effect.

pub mod solver;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::PanelDataset;
use crate::smooth::{nw_smooth, SmoothConfig};
use crate::stats::{mean, Z_975};

pub use solver::{kkt_residual, objective, project_simplex, solve_weights, SimplexSolution, SolverOptions};

/// How the ridge parameter ζ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaChoice {
    Zero,
    /// `(T − T_pre)^{1/4} σ̂` with σ̂ the SD of pooled control first differences.
    Rule,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdKind {
    /// Divide by N.
    Population,
    /// Divide by N − 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub zeta: ZetaChoice,
    pub smoothing: Option<SmoothConfig>,
    pub solver: SolverOptions,
    pub sd_kind: SdKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            zeta: ZetaChoice::Zero,
            smoothing: None,
            solver: SolverOptions::default(),
            sd_kind: SdKind::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCWeights {
    pub donor_labels: Vec<String>,
    pub omega: Vec<f64>,
    pub zeta: f64,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl SCWeights {
    /// Donors carrying weight above `threshold`, in donor order.
    pub fn nonzero(&self, threshold: f64) -> Vec<(&str, f64)> {
        self.donor_labels
            .iter()
            .zip(&self.omega)
            .filter(|(_, w)| **w > threshold)
            .map(|(l, w)| (l.as_str(), *w))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCFit {
    pub treated_unit: String,
    pub t_pre: usize,
    pub weights: SCWeights,
    /// Treated series as analysed (after smoothing, if any).
    pub observed: Vec<f64>,
    pub counterfactual: Vec<f64>,
    /// `observed − counterfactual` for each post-treatment period.
    pub effects: Vec<f64>,
    pub avg_effect: f64,
    pub variance: Option<f64>,
    pub ci_95: Option<(f64, f64)>,
    pub pre_rmse: f64,
    pub pre_treatment_mean: f64,
    pub pct_change: f64,
    pub placebo: Option<PlaceboVariance>,
}

impl SCFit {
    pub fn post_rmse(&self) -> f64 {
        rms(&self.effects)
    }

    /// Gap series `observed − counterfactual` over all periods.
    pub fn gaps(&self) -> Vec<f64> {
        self.observed
            .iter()
            .zip(&self.counterfactual)
            .map(|(o, c)| o - c)
            .collect()
    }

    pub(crate) fn attach_variance(&mut self, placebo: PlaceboVariance) {
        let half = Z_975 * placebo.variance.sqrt();
        self.variance = Some(placebo.variance);
        self.ci_95 = Some((self.avg_effect - half, self.avg_effect + half));
        self.placebo = Some(placebo);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboVariance {
    pub variance: f64,
    /// Average placebo effect for each donor treated as pseudo-treated.
    pub placebo_effects: Vec<(String, f64)>,
    /// Donors whose placebo fit failed, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Percentage change of the average effect relative to the treated unit's
/// pre-treatment mean.
pub fn pct_change(avg_effect: f64, pre_treatment_mean: f64) -> f64 {
    100.0 * avg_effect / pre_treatment_mean
}

pub fn zeta_rule(panel: &PanelDataset, sd_kind: SdKind) -> Result<f64> {
    if panel.t_pre < 2 {
        return Err(invalid("the zeta rule needs at least two pre-treatment periods"));
    }
    let donors = panel.donor_pool();
    if donors.is_empty() {
        return Err(invalid("the zeta rule needs at least one control unit"));
    }
    let diffs: Vec<f64> = donors
        .iter()
        .flat_map(|&i| {
            let row = &panel.outcomes[i][..panel.t_pre];
            row.windows(2).map(|w| w[1] - w[0])
        })
        .collect();
    let m = mean(&diffs);
    let ss: f64 = diffs.iter().map(|d| (d - m) * (d - m)).sum();
    let denom = match sd_kind {
        SdKind::Population => diffs.len() as f64,
        SdKind::Sample => (diffs.len() as f64 - 1.0).max(1.0),
    };
    let sigma = (ss / denom).sqrt();
    Ok((panel.n_post() as f64).powf(0.25) * sigma)
}

/// Applies the configured smoothing to every unit of the panel.
pub fn smooth_panel(panel: &PanelDataset, smoothing: &SmoothConfig) -> Result<PanelDataset> {
    let rows = panel
        .outcomes
        .iter()
        .map(|row| nw_smooth(row, smoothing, panel.t_pre))
        .collect::<Result<Vec<_>>>()?;
    let mut out = panel.clone();
    out.outcomes = rows;
    Ok(out)
}

/// Smooths once so that repeated fits on the same data can skip it.
pub(crate) fn prepare(panel: &PanelDataset, cfg: &FitConfig) -> Result<(PanelDataset, FitConfig)> {
    panel.validate()?;
    let raw = FitConfig {
        smoothing: None,
        ..*cfg
    };
    match &cfg.smoothing {
        Some(s) => Ok((smooth_panel(panel, s)?, raw)),
        None => Ok((panel.clone(), raw)),
    }
}

fn resolve_zeta(panel: &PanelDataset, cfg: &FitConfig) -> Result<f64> {
    match cfg.zeta {
        ZetaChoice::Zero => Ok(0.0),
        ZetaChoice::Rule => zeta_rule(panel, cfg.sd_kind),
        ZetaChoice::Value(z) if z >= 0.0 && z.is_finite() => Ok(z),
        ZetaChoice::Value(z) => Err(invalid(format!("zeta must be non-negative, got {z}"))),
    }
}

/// Point estimate without placebo inference.
pub fn fit_point(panel: &PanelDataset, cfg: &FitConfig) -> Result<SCFit> {
    let (prepared, raw) = prepare(panel, cfg)?;
    fit_prepared(&prepared, &raw)
}

pub(crate) fn fit_prepared(panel: &PanelDataset, cfg: &FitConfig) -> Result<SCFit> {
    let donors = panel.donor_pool();
    if donors.is_empty() {
        return Err(invalid(format!(
            "no donor units left for treated unit `{}`",
            panel.treated_unit
        )));
    }
    let t_pre = panel.t_pre;
    let zeta = resolve_zeta(panel, cfg)?;
    let treated = panel.treated_series().to_vec();
    let donor_pre: Vec<Vec<f64>> = donors
        .iter()
        .map(|&i| panel.outcomes[i][..t_pre].to_vec())
        .collect();
    let sol = solve_weights(&donor_pre, &treated[..t_pre], zeta, &cfg.solver)?;

    let counterfactual: Vec<f64> = (0..panel.n_periods())
        .map(|t| {
            donors
                .iter()
                .zip(&sol.omega)
                .map(|(&i, w)| w * panel.outcomes[i][t])
                .sum()
        })
        .collect();
    let effects: Vec<f64> = (t_pre..panel.n_periods())
        .map(|t| treated[t] - counterfactual[t])
        .collect();
    let avg_effect = mean(&effects);
    let pre_gaps: Vec<f64> = (0..t_pre).map(|t| treated[t] - counterfactual[t]).collect();
    let pre_treatment_mean = mean(&treated[..t_pre]);

    Ok(SCFit {
        treated_unit: panel.treated_unit.clone(),
        t_pre,
        weights: SCWeights {
            donor_labels: donors.iter().map(|&i| panel.units[i].clone()).collect(),
            omega: sol.omega,
            zeta,
            objective_value: sol.objective,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        },
        observed: treated,
        counterfactual,
        effects,
        avg_effect,
        variance: None,
        ci_95: None,
        pre_rmse: rms(&pre_gaps),
        pre_treatment_mean,
        pct_change: pct_change(avg_effect, pre_treatment_mean),
        placebo: None,
    })
}

/// Full fit: point estimate plus placebo variance and 95% interval.
///
/// Inference is left empty when fewer than two placebo fits are possible;
/// only failures of the main weight solve are returned as errors.
pub fn fit(panel: &PanelDataset, cfg: &FitConfig) -> Result<SCFit> {
    let (prepared, raw) = prepare(panel, cfg)?;
    fit_with_inference(&prepared, &raw)
}

pub(crate) fn fit_with_inference(panel: &PanelDataset, cfg: &FitConfig) -> Result<SCFit> {
    let mut out = fit_prepared(panel, cfg)?;
    if let Ok(pv) = placebo_prepared(panel, cfg) {
        out.attach_variance(pv);
    }
    Ok(out)
}

/// Placebo variance of the average effect: every donor in turn plays the
/// treated unit, with the true treated unit kept out of all pools.
pub fn placebo_variance(panel: &PanelDataset, cfg: &FitConfig) -> Result<PlaceboVariance> {
    let (prepared, raw) = prepare(panel, cfg)?;
    placebo_prepared(&prepared, &raw)
}

pub(crate) fn placebo_prepared(panel: &PanelDataset, cfg: &FitConfig) -> Result<PlaceboVariance> {
    let donors = panel.donor_labels();
    if donors.len() < 2 {
        return Err(invalid("placebo variance needs at least two donor units"));
    }
    let results: Vec<(String, Result<f64>)> = donors
        .par_iter()
        .map(|label| {
            let r = panel
                .reassign_treated(label)
                .and_then(|p| fit_prepared(&p, cfg))
                .map(|f| f.avg_effect);
            (label.clone(), r)
        })
        .collect();

    let mut placebo_effects = Vec::new();
    let mut skipped = Vec::new();
    for (label, r) in results {
        match r {
            Ok(v) => placebo_effects.push((label, v)),
            Err(e) => skipped.push((label, e.to_string())),
        }
    }
    if placebo_effects.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} placebo fits succeeded",
            placebo_effects.len()
        )));
    }
    let taus: Vec<f64> = placebo_effects.iter().map(|(_, v)| *v).collect();
    Ok(PlaceboVariance {
        variance: placebo_moment(&taus),
        placebo_effects,
        skipped,
    })
}

/// `(1/N) Σ (τ_j − τ̄)²`.
pub fn placebo_moment(taus: &[f64]) -> f64 {
    let m = mean(taus);
    taus.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / taus.len() as f64
}

pub(crate) fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}
