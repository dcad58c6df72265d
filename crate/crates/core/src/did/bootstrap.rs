//! Multiplier bootstrap clustered at the player level.
//!
//! Each draw gives every player one weight and reuses it across all rows
//! of the influence matrix, which preserves within-player dependence
//! across days. Draw `b` uses its own ChaCha stream, so results do not
//! depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::{iqr_scale, normal_quantile, quantile_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Two-point law with mean 0, variance 1 and third moment 1.
    Mammen,
    /// ±1 with equal probability.
    Rademacher,
}

impl WeightLaw {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightLaw::Mammen => {
                let s5 = 5f64.sqrt();
                let p_low = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p_low {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_draws: usize,
    pub weight_law: WeightLaw,
    pub seed: u64,
    /// Confidence level of intervals and bands.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_draws: 999,
            weight_law: WeightLaw::Mammen,
            seed: 0,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// `None` when every row is degenerate.
    pub critical_value: Option<f64>,
    pub warnings: Vec<String>,
}

/// Standard errors for every row of `influence` (rows are statistics,
/// columns are players) and the sup-t critical value over all rows.
pub fn multiplier_bootstrap(influence: &[Vec<f64>], cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    run(influence, influence.len(), cfg)
}

/// As [`multiplier_bootstrap`], with only the first `band_rows` rows
/// entering the sup-t statistic.
pub(crate) fn run(influence: &[Vec<f64>], band_rows: usize, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    if influence.is_empty() {
        return Err(invalid("nothing to bootstrap"));
    }
    let n = influence[0].len();
    if influence.iter().any(|r| r.len() != n) {
        return Err(invalid("influence rows must cover the same players"));
    }
    if cfg.n_draws == 0 {
        return Err(invalid("n_draws must be positive"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(invalid(format!("confidence level must lie in (0, 1), got {}", cfg.level)));
    }
    let mut warnings = Vec::new();
    if cfg.n_draws < 100 {
        warnings.push(format!(
            "only {} bootstrap draws; standard errors and bands will be noisy",
            cfg.n_draws
        ));
    }

    // draws[b][r]
    let draws: Vec<Vec<f64>> = (0..cfg.n_draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let v: Vec<f64> = (0..n).map(|_| cfg.weight_law.draw(&mut rng)).collect();
            influence
                .iter()
                .map(|row| row.iter().zip(&v).map(|(psi, w)| psi * w).sum())
                .collect()
        })
        .collect();

    let se: Vec<f64> = (0..influence.len())
        .map(|r| iqr_scale(&draws.iter().map(|d| d[r]).collect::<Vec<_>>()))
        .collect();
    let degenerate: Vec<bool> = se.iter().map(|s| !(*s > 0.0)).collect();
    let active: Vec<usize> = (0..band_rows).filter(|&r| !degenerate[r]).collect();
    let critical_value = if active.is_empty() {
        warnings.push("all rows have zero bootstrap spread; no simultaneous band".into());
        None
    } else {
        let mut sup: Vec<f64> = draws
            .iter()
            .map(|d| active.iter().map(|&r| (d[r] / se[r]).abs()).fold(0.0, f64::max))
            .collect();
        sup.sort_by(f64::total_cmp);
        let pointwise = normal_quantile(0.5 + cfg.level / 2.0);
        Some(quantile_sorted(&sup, cfg.level).max(pointwise))
    };
    Ok(BootstrapResult {
        se,
        degenerate,
        critical_value,
        warnings,
    })
}
