//! Per-day ATT estimators: difference of mean changes, and the
//! doubly-robust combination of a control-group outcome regression with
//! a logistic propensity score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DidPanel;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEstimate {
    pub att: f64,
    /// One entry per panel player; zero for players absent from the
    /// contrast. Already scaled by 1/n.
    pub influence: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub trimmed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Controls with a propensity score at or above this are dropped.
    pub trim_level: f64,
    pub max_newton_iter: usize,
    pub newton_tol: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            trim_level: 0.995,
            max_newton_iter: 100,
            newton_tol: 1e-10,
        }
    }
}

const PS_CEILING: f64 = 1.0 - 1e-6;

/// Players observed on both the base day and `day`: (index, ΔY, treated).
fn contrast_sample(panel: &DidPanel, day: usize) -> Result<Vec<(usize, f64, bool)>> {
    if day >= panel.days.len() {
        return Err(invalid(format!("day index {day} out of range")));
    }
    let sample: Vec<(usize, f64, bool)> = panel
        .differences(day)
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (i, d, panel.treated[i])))
        .collect();
    let n1 = sample.iter().filter(|s| s.2).count();
    if n1 == 0 || n1 == sample.len() {
        return Err(invalid(format!(
            "not estimable on {}: {} treated and {} control players observed",
            panel.days[day],
            n1,
            sample.len() - n1
        )));
    }
    Ok(sample)
}

pub fn att_unconditional(panel: &DidPanel, day: usize) -> Result<DayEstimate> {
    let sample = contrast_sample(panel, day)?;
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for &(_, d, t) in &sample {
        if t {
            s1 += d;
            n1 += 1;
        } else {
            s0 += d;
            n0 += 1;
        }
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    let mut influence = vec![0.0; panel.n_players()];
    for &(i, d, t) in &sample {
        influence[i] = if t { (d - m1) / n1 as f64 } else { -(d - m0) / n0 as f64 };
    }
    Ok(DayEstimate {
        att: m1 - m0,
        influence,
        n_treated: n1,
        n_control: n0,
        trimmed: 0,
    })
}

/// Intercept plus standardized, non-constant covariates for the sample.
/// Returns the design and the names of the retained columns.
fn design(panel: &DidPanel, rows: &[usize]) -> (DMatrix<f64>, Vec<String>) {
    let n = rows.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec!["(intercept)".to_string()];
    for (j, name) in panel.covariate_names.iter().enumerate() {
        let x: Vec<f64> = rows.iter().map(|&i| panel.covariates[i][j]).collect();
        let m = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if sd <= 1e-12 * m.abs().max(1.0) {
            continue;
        }
        cols.push(x.iter().map(|v| (v - m) / sd).collect());
        names.push(name.clone());
    }
    let k = cols.len();
    (DMatrix::from_fn(n, k, |i, j| cols[j][i]), names)
}

/// Names the first column lying in the span of the earlier ones, together
/// with the columns it depends on.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    for j in 1..x.ncols() {
        let prev = x.columns(0, j).into_owned();
        let col = x.column(j).into_owned();
        let gram = prev.transpose() * &prev;
        let Some(chol) = gram.cholesky() else { continue };
        let coef = chol.solve(&(prev.transpose() * &col));
        let resid = &col - &prev * &coef;
        if resid.norm_squared() <= 1e-10 * col.norm_squared() {
            let mut columns: Vec<String> = coef
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(k, _)| names[k].clone())
                .collect();
            columns.push(names[j].clone());
            return Err(Error::Singular { columns });
        }
    }
    Ok(())
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(x: &DMatrix<f64>, d: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(d.iter())
        .map(|(&e, &y)| {
            // log(1 + e^η) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            y * e - softplus
        })
        .sum()
}

/// Newton-Raphson with step halving for the logit of `d` on `x`.
fn fit_logit(x: &DMatrix<f64>, d: &DVector<f64>, cfg: &NuisanceConfig) -> Result<DVector<f64>> {
    let n = x.nrows() as f64;
    let k = x.ncols();
    let share = d.sum() / n;
    let mut beta = DVector::zeros(k);
    beta[0] = (share / (1.0 - share)).ln();
    let mut ll = log_likelihood(x, d, &beta);
    for _ in 0..cfg.max_newton_iter {
        let p = (x * &beta).map(logistic);
        let grad = x.transpose() * (d - &p);
        if grad.amax() / n < cfg.newton_tol {
            return Ok(beta);
        }
        let w = p.map(|v| v * (1.0 - v));
        let xw = DMatrix::from_fn(x.nrows(), k, |i, j| x[(i, j)] * w[i]);
        let hess = x.transpose() * xw;
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numerical("propensity Hessian is not positive definite".into()))?
            .solve(&grad);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(x, d, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs() || t < 1e-8 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        if (&step * t).amax() < cfg.newton_tol {
            return Ok(beta);
        }
    }
    Err(Error::Numerical(format!(
        "propensity model did not converge in {} Newton steps",
        cfg.max_newton_iter
    )))
}

/// Doubly-robust ATT(day) with the full influence function, including
/// the estimation effects of the outcome regression and the propensity
/// score.
pub fn att_doubly_robust(panel: &DidPanel, day: usize, cfg: &NuisanceConfig) -> Result<DayEstimate> {
    let sample = contrast_sample(panel, day)?;
    let rows: Vec<usize> = sample.iter().map(|s| s.0).collect();
    let n = rows.len();
    let nf = n as f64;
    let (x, names) = design(panel, &rows);
    let k = x.ncols();
    let dy = DVector::from_iterator(n, sample.iter().map(|s| s.1));
    let d = DVector::from_iterator(n, sample.iter().map(|s| if s.2 { 1.0 } else { 0.0 }));
    let n0 = sample.iter().filter(|s| !s.2).count();
    if n0 < k + 1 {
        return Err(invalid(format!(
            "doubly-robust estimate on {} needs at least {} control players, found {n0}",
            panel.days[day],
            k + 1
        )));
    }

    // Outcome regression on controls.
    let c = d.map(|v| 1.0 - v);
    let xc = DMatrix::from_fn(n, k, |i, j| x[(i, j)] * c[i]);
    let controls: Vec<usize> = (0..n).filter(|&i| c[i] > 0.0).collect();
    check_rank(&x.select_rows(controls.iter()), &names)?;
    let xtx_c = xc.transpose() * &x;
    let xtx_c_inv = xtx_c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular { columns: names.clone() })?;
    let coef = &xtx_c_inv * (xc.transpose() * &dy);
    let fitted = &x * &coef;
    let resid = &dy - &fitted;

    // Propensity score on everyone.
    let beta = fit_logit(&x, &d, cfg)?;
    let ps: Vec<f64> = (&x * &beta).iter().map(|&v| logistic(v).min(PS_CEILING)).collect();
    let mut trimmed = 0;
    let keep: Vec<f64> = (0..n)
        .map(|i| {
            if d[i] == 0.0 && ps[i] >= cfg.trim_level {
                trimmed += 1;
                0.0
            } else {
                1.0
            }
        })
        .collect();

    let w1 = d.clone();
    let w0 = DVector::from_fn(n, |i, _| keep[i] * ps[i] * (1.0 - d[i]) / (1.0 - ps[i]));
    let (mw1, mw0) = (w1.sum() / nf, w0.sum() / nf);
    if mw0 <= 0.0 {
        return Err(Error::Numerical("all control weights were trimmed".into()));
    }
    let att_t = DVector::from_fn(n, |i, _| w1[i] * resid[i]);
    let att_c = DVector::from_fn(n, |i, _| w0[i] * resid[i]);
    let eta1 = att_t.sum() / nf / mw1;
    let eta0 = att_c.sum() / nf / mw0;

    // Asymptotic linear representations of the nuisance estimators.
    let ols_bread = (xtx_c / nf)
        .try_inverse()
        .ok_or_else(|| Error::Singular { columns: names.clone() })?;
    let ols_score = DMatrix::from_fn(n, k, |i, j| c[i] * resid[i] * x[(i, j)]);
    let lin_ols = ols_score * ols_bread;
    let pw: Vec<f64> = ps.iter().map(|p| p * (1.0 - p)).collect();
    let ps_info = x.transpose() * DMatrix::from_fn(n, k, |i, j| pw[i] * x[(i, j)]) / nf;
    let ps_bread = ps_info
        .try_inverse()
        .ok_or_else(|| Error::Numerical("propensity information matrix is singular".into()))?;
    let ps_score = DMatrix::from_fn(n, k, |i, j| (d[i] - ps[i]) * x[(i, j)]);
    let lin_ps = ps_score * ps_bread;

    let col_mean = |f: &dyn Fn(usize) -> f64| -> DVector<f64> {
        DVector::from_fn(k, |j, _| (0..n).map(|i| f(i) * x[(i, j)]).sum::<f64>() / nf)
    };
    let m1 = col_mean(&|i| w1[i]);
    let m2 = col_mean(&|i| w0[i] * (resid[i] - eta0));
    let m3 = col_mean(&|i| w0[i]);

    let inf_treat = (DVector::from_fn(n, |i, _| att_t[i] - w1[i] * eta1) - &lin_ols * m1) / mw1;
    let inf_cont = (DVector::from_fn(n, |i, _| att_c[i] - w0[i] * eta0) + &lin_ps * m2 - &lin_ols * m3) / mw0;

    let mut influence = vec![0.0; panel.n_players()];
    for (r, &i) in rows.iter().enumerate() {
        influence[i] = (inf_treat[r] - inf_cont[r]) / nf;
    }
    Ok(DayEstimate {
        att: eta1 - eta0,
        influence,
        n_treated: n - n0,
        n_control: n0,
        trimmed,
    })
}
