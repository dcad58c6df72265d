//! Separating two simultaneous treatments with a composite unit.
//!
//! The composite averages units exposed only to the second treatment. Its
//! synthetic-control effect `γ̂` stands in for that treatment's effect on
//! the focal unit, and `τ̂ − γ̂` isolates the first one. This reading rests
//! on no interference between units and on equal effects of the second
//! treatment across units; both are reported alongside the numbers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::panel::PanelDataset;
use crate::scm::{fit, FitConfig, SCFit};
use crate::stats::mean;

pub const COMPOSITE_LABEL: &str = "composite";

/// Appends the unweighted mean of `members` as a new unit named
/// `composite` and makes it the treated unit. The original treated unit
/// and every LGB unit stay out of the donor pool.
pub fn composite_unit(panel: &PanelDataset, members: &BTreeSet<String>) -> Result<PanelDataset> {
    panel.validate()?;
    if members.is_empty() {
        return Err(invalid("composite needs at least one member"));
    }
    if let Some(m) = members.iter().find(|m| !panel.lgb_units.contains(*m)) {
        return Err(invalid(format!("composite member `{m}` is not an LGB unit")));
    }
    if panel.unit_index(COMPOSITE_LABEL).is_some() {
        return Err(invalid(format!("panel already has a unit named `{COMPOSITE_LABEL}`")));
    }
    let rows: Vec<&[f64]> = members
        .iter()
        .map(|m| panel.series(m).expect("members are panel units"))
        .collect();
    let k = rows.len() as f64;
    // Anchored at the first member so identical members give back their
    // common series bit for bit.
    let series: Vec<f64> = (0..panel.n_periods())
        .map(|t| {
            let x0 = rows[0][t];
            x0 + rows.iter().map(|r| r[t] - x0).sum::<f64>() / k
        })
        .collect();

    let mut out = panel.clone();
    out.units.push(COMPOSITE_LABEL.to_string());
    out.outcomes.push(series);
    out.excluded_units.insert(panel.treated_unit.clone());
    out.treated_unit = COMPOSITE_LABEL.to_string();
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionsNote {
    pub sutva: String,
    pub effect_homogeneity: String,
}

impl Default for AssumptionsNote {
    fn default() -> Self {
        AssumptionsNote {
            sutva: "No interference: each unit's outcome depends only on its own treatment status.".into(),
            effect_homogeneity: "The second treatment affects the focal unit as it affects the composite, \
                                 so the composite's effect can be subtracted from the focal unit's."
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompResult {
    pub members: Vec<String>,
    pub gamma_series: Vec<f64>,
    pub gamma_avg: f64,
    pub gamma_variance: Option<f64>,
    pub gamma_ci_95: Option<(f64, f64)>,
    pub tau_series: Vec<f64>,
    pub tau_avg: f64,
    pub tau_variance: Option<f64>,
    pub tau_ci_95: Option<(f64, f64)>,
    pub tau_c_series: Vec<f64>,
    /// Reported without an interval; the two marginal intervals are given
    /// instead.
    pub tau_c_avg: f64,
    pub tau_fit: SCFit,
    pub gamma_fit: SCFit,
    pub assumptions_note: AssumptionsNote,
}

pub fn decompose(panel: &PanelDataset, members: &BTreeSet<String>, cfg: &FitConfig) -> Result<DecompResult> {
    let composite = composite_unit(panel, members)?;
    let (tau_fit, gamma_fit) = rayon::join(|| fit(panel, cfg), || fit(&composite, cfg));
    let (tau_fit, gamma_fit) = (tau_fit?, gamma_fit?);
    let tau_c_series: Vec<f64> = tau_fit
        .effects
        .iter()
        .zip(&gamma_fit.effects)
        .map(|(t, g)| t - g)
        .collect();
    Ok(DecompResult {
        members: members.iter().cloned().collect(),
        gamma_series: gamma_fit.effects.clone(),
        gamma_avg: gamma_fit.avg_effect,
        gamma_variance: gamma_fit.variance,
        gamma_ci_95: gamma_fit.ci_95,
        tau_series: tau_fit.effects.clone(),
        tau_avg: tau_fit.avg_effect,
        tau_variance: tau_fit.variance,
        tau_ci_95: tau_fit.ci_95,
        tau_c_avg: mean(&tau_c_series),
        tau_c_series,
        tau_fit,
        gamma_fit,
        assumptions_note: AssumptionsNote::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::{nw_smooth, SmoothConfig};
    use chrono::{Days, NaiveDate};

    fn panel(rows: Vec<Vec<f64>>, lgb: &[&str], t_pre: usize) -> PanelDataset {
        let n = rows.len();
        let t = rows[0].len();
        let start = NaiveDate::from_ymd_opt(2022, 5, 1).unwrap();
        PanelDataset::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..t).map(|k| start + Days::new(k as u64)).collect(),
            rows,
            "u0".to_string(),
            t_pre,
        )
        .unwrap()
        .with_lgb_units(lgb.iter().copied())
        .unwrap()
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn wavy(n: usize, phase: f64, amp: f64) -> Vec<f64> {
        (0..n).map(|t| 15.0 + amp * (t as f64 * 0.5 + phase).sin()).collect()
    }

    #[test]
    fn symmetric_members_average() {
        let p = panel(vec![vec![1.0, 2.0], vec![0.0, 10.0], vec![10.0, 0.0], vec![3.0, 3.0]], &["u1", "u2"], 1);
        let c = composite_unit(&p, &set(&["u1", "u2"])).unwrap();
        assert_eq!(c.series(COMPOSITE_LABEL).unwrap(), &[5.0, 5.0]);
        assert_eq!(c.treated_unit, COMPOSITE_LABEL);
        assert_eq!(c.donor_labels(), vec!["u3"]);
    }

    #[test]
    fn four_members_elementwise_mean() {
        let rows = vec![
            vec![0.0; 3],
            vec![1.0, 2.0, 3.0],
            vec![4.0, 0.0, 8.0],
            vec![2.0, 2.0, 2.0],
            vec![5.0, 4.0, 3.0],
            vec![9.0, 9.0, 9.0],
        ];
        let p = panel(rows, &["u1", "u2", "u3", "u4"], 2);
        let c = composite_unit(&p, &set(&["u1", "u2", "u3", "u4"])).unwrap();
        assert_eq!(c.series(COMPOSITE_LABEL).unwrap(), &[3.0, 2.0, 4.0]);
    }

    #[test]
    fn identical_members_reproduce_the_series() {
        let s = wavy(7, 0.3, 2.0);
        let p = panel(vec![wavy(7, 0.0, 1.0), s.clone(), s.clone(), s.clone(), wavy(7, 1.0, 1.0)], &["u1", "u2", "u3"], 4);
        let c = composite_unit(&p, &set(&["u1", "u2", "u3"])).unwrap();
        assert_eq!(c.series(COMPOSITE_LABEL).unwrap(), s.as_slice());
    }

    #[test]
    fn bad_members_rejected() {
        let p = panel(vec![vec![1.0, 2.0], vec![0.0, 10.0], vec![3.0, 3.0]], &["u1"], 1);
        assert!(composite_unit(&p, &BTreeSet::new()).is_err());
        assert!(composite_unit(&p, &set(&["u2"])).is_err());
    }

    #[test]
    fn smoothing_commutes_with_averaging() {
        let members = [wavy(30, 0.1, 3.0), wavy(30, 1.7, 1.0), wavy(30, 2.9, 2.0)];
        let cfg = SmoothConfig::default();
        let mean_then_smooth = nw_smooth(
            &(0..30).map(|t| members.iter().map(|m| m[t]).sum::<f64>() / 3.0).collect::<Vec<_>>(),
            &cfg,
            20,
        )
        .unwrap();
        let smoothed: Vec<Vec<f64>> = members.iter().map(|m| nw_smooth(m, &cfg, 20).unwrap()).collect();
        for t in 0..30 {
            let avg = smoothed.iter().map(|s| s[t]).sum::<f64>() / 3.0;
            assert!((avg - mean_then_smooth[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_pool_exclusion() {
        let mut rows: Vec<Vec<f64>> = (0..8).map(|i| wavy(24, i as f64 * 0.8, 1.0 + 0.2 * i as f64)).collect();
        for v in &mut rows[0][18..] {
            *v -= 4.0;
        }
        let p = panel(rows, &["u1", "u2"], 18);
        let members = set(&["u1", "u2"]);
        let r = decompose(&p, &members, &FitConfig::default()).unwrap();
        for t in 0..r.tau_series.len() {
            assert!((r.tau_c_series[t] + r.gamma_series[t] - r.tau_series[t]).abs() <= 1e-12);
        }
        for l in &r.gamma_fit.weights.donor_labels {
            assert!(!members.contains(l) && l != "u0");
        }
        for l in &r.tau_fit.weights.donor_labels {
            assert!(!members.contains(l));
        }
    }

    #[test]
    fn composite_equal_to_donor_has_no_effect() {
        let mut rows: Vec<Vec<f64>> = (0..6).map(|i| wavy(20, i as f64, 1.0 + i as f64 * 0.3)).collect();
        rows[1] = rows[4].clone();
        let p = panel(rows, &["u1"], 14);
        let r = decompose(&p, &set(&["u1"]), &FitConfig::default()).unwrap();
        assert!(r.gamma_series.iter().all(|g| g.abs() < 1e-9));
        for (a, b) in r.tau_c_series.iter().zip(&r.tau_series) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reported_averages_subtract() {
        assert!((-7.156f64 - -0.149 - -7.007).abs() < 1e-12);
    }
}
