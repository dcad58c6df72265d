//! Seeded synthetic panels with known ground truth.
//!
//! Unit-level panels follow a linear factor model
//! `Y_it = μ + λ_i·F_t + ε_it` with standard-normal loadings and factors.
//! Player-level panels feed the difference-in-differences estimators and
//! carry per-player covariates that can be made constant, irrelevant, or
//! confounding.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Group, PlayerDayRow, PlayerPanel};
use crate::error::{invalid, Result};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectPath {
    None,
    Constant { delta: f64 },
    /// Grows linearly from `delta / n_post` on the first post day to
    /// `delta` on the last.
    Linear { delta: f64 },
}

impl EffectPath {
    pub fn series(&self, n_periods: usize, t_pre: usize) -> Vec<f64> {
        let n_post = n_periods - t_pre;
        (0..n_periods)
            .map(|t| {
                if t < t_pre {
                    return 0.0;
                }
                match *self {
                    EffectPath::None => 0.0,
                    EffectPath::Constant { delta } => delta,
                    EffectPath::Linear { delta } => delta * (t - t_pre + 1) as f64 / n_post as f64,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub t_pre: usize,
    pub factor_rank: usize,
    pub noise_sd: f64,
    pub effect_path: EffectPath,
    pub treated_index: usize,
    pub seed: u64,
    /// Common level of every series.
    pub mu: f64,
    /// Give the treated unit the factor loadings of this unit.
    pub treated_copies: Option<usize>,
    pub start_date: NaiveDate,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_units: 40,
            n_periods: 120,
            t_pre: 90,
            factor_rank: 2,
            noise_sd: 1.0,
            effect_path: EffectPath::Constant { delta: -7.0 },
            treated_index: 0,
            seed: 0,
            mu: 20.0,
            treated_copies: None,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date"),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(invalid("simulation needs at least two units"));
        }
        if self.t_pre == 0 || self.t_pre >= self.n_periods {
            return Err(invalid(format!(
                "t_pre must lie in 1..{}, got {}",
                self.n_periods, self.t_pre
            )));
        }
        if self.factor_rank > self.n_units.min(self.t_pre) {
            return Err(invalid(format!(
                "factor rank {} exceeds min(n_units, t_pre)",
                self.factor_rank
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(invalid(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        if self.treated_index >= self.n_units {
            return Err(invalid("treated_index out of range"));
        }
        if let Some(c) = self.treated_copies {
            if c >= self.n_units || c == self.treated_index {
                return Err(invalid("treated_copies must name a different, existing unit"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub treated_unit: String,
    pub t_pre: usize,
    /// Injected effect for every period; zero before treatment.
    pub effects: Vec<f64>,
    /// Mean of the injected effect over post periods.
    pub avg_effect: f64,
}

pub fn unit_label(i: usize) -> String {
    format!("unit_{i:02}")
}

pub fn generate(cfg: &SimConfig) -> Result<(PanelDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t, r) = (cfg.n_units, cfg.n_periods, cfg.factor_rank);

    let mut loadings: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..r).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    if let Some(src) = cfg.treated_copies {
        loadings[cfg.treated_index] = loadings[src].clone();
    }
    let factors: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..r).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let effects = cfg.effect_path.series(t, cfg.t_pre);

    let outcomes = (0..n)
        .map(|i| {
            (0..t)
                .map(|s| {
                    let eps: f64 = rng.sample(StandardNormal);
                    let common: f64 = loadings[i].iter().zip(&factors[s]).map(|(l, f)| l * f).sum();
                    let effect = if i == cfg.treated_index { effects[s] } else { 0.0 };
                    cfg.mu + common + cfg.noise_sd * eps + effect
                })
                .collect()
        })
        .collect();

    let units: Vec<String> = (0..n).map(unit_label).collect();
    let times = (0..t)
        .map(|s| cfg.start_date + Days::new(s as u64))
        .collect();
    let treated = units[cfg.treated_index].clone();
    let panel = PanelDataset::new(units, times, outcomes, treated.clone(), cfg.t_pre)?;
    let post = &effects[cfg.t_pre..];
    let truth = GroundTruth {
        treated_unit: treated,
        t_pre: cfg.t_pre,
        avg_effect: post.iter().sum::<f64>() / post.len() as f64,
        effects,
    };
    Ok((panel, truth))
}

// ---------------------------------------------------------------------------
// Player panels

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDesign {
    /// Every player has the same covariate values.
    Constant,
    /// Covariates vary across players but are unrelated to treatment and
    /// outcomes.
    Independent,
    /// `kills` drives both treatment assignment (logistic, slope
    /// `propensity_slope`) and a nonlinear post-period trend
    /// `strength · (x + x² − 1)`.
    Confounded { strength: f64, propensity_slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlayerSimConfig {
    pub n_players: usize,
    pub n_days: usize,
    /// Number of pre-treatment days.
    pub t_pre: usize,
    /// Treated share when assignment is not confounded.
    pub treated_share: f64,
    /// Constant effect on treated players after the event.
    pub effect: f64,
    pub noise_sd: f64,
    /// SD of player fixed effects.
    pub player_sd: f64,
    /// Probability that a player skips a given day.
    pub absence_prob: f64,
    pub covariates: CovariateDesign,
    /// Group label given to treated players.
    pub treated_group: Group,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for PlayerSimConfig {
    fn default() -> Self {
        PlayerSimConfig {
            n_players: 600,
            n_days: 30,
            t_pre: 20,
            treated_share: 0.5,
            effect: 0.0,
            noise_sd: 4.0,
            player_sd: 5.0,
            absence_prob: 0.0,
            covariates: CovariateDesign::Independent,
            treated_group: Group::Substantial,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2022, 5, 1).expect("valid date"),
        }
    }
}

impl PlayerSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players < 2 || self.t_pre == 0 || self.t_pre >= self.n_days {
            return Err(invalid("player simulation needs ≥ 2 players and 0 < t_pre < n_days"));
        }
        if !(0.0..1.0).contains(&self.absence_prob) || !(0.0..=1.0).contains(&self.treated_share) {
            return Err(invalid("probabilities must lie in [0, 1)"));
        }
        if !(self.noise_sd >= 0.0 && self.player_sd >= 0.0) {
            return Err(invalid("standard deviations must be non-negative"));
        }
        if self.treated_group == Group::Control {
            return Err(invalid("treated players cannot carry the control label"));
        }
        Ok(())
    }

    pub fn event_date(&self) -> NaiveDate {
        self.start_date + Days::new(self.t_pre as u64)
    }
}

/// Simulated player-day panel. Outcomes are stored in the `win_rate`
/// column; covariate columns are constant within a player.
pub fn generate_players(cfg: &PlayerSimConfig) -> Result<PlayerPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| invalid(e.to_string()))?;
    let day_effects: Vec<f64> = (0..cfg.n_days).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();

    let mut rows = Vec::new();
    for p in 0..cfg.n_players {
        let alpha = cfg.player_sd * rng.sample::<f64, _>(StandardNormal);
        let (x, treated, trend) = match cfg.covariates {
            CovariateDesign::Constant => (0.0, rng.random::<f64>() < cfg.treated_share, 0.0),
            CovariateDesign::Independent => {
                (rng.sample(StandardNormal), rng.random::<f64>() < cfg.treated_share, 0.0)
            }
            CovariateDesign::Confounded { strength, propensity_slope } => {
                let x: f64 = rng.sample(StandardNormal);
                let p_treat = 1.0 / (1.0 + (-propensity_slope * x).exp());
                (x, rng.random::<f64>() < p_treat, strength * (x + x * x - 1.0))
            }
        };
        let (deaths, assists, gold, matches) = match cfg.covariates {
            CovariateDesign::Constant => (5.0, 8.0, 10_000.0, 4),
            _ => (
                5.0 + rng.random::<f64>(),
                8.0 + 2.0 * rng.random::<f64>(),
                10_000.0 + 500.0 * rng.sample::<f64, _>(StandardNormal),
                rng.random_range(2..=6u32),
            ),
        };
        let group = if treated { cfg.treated_group } else { Group::Control };
        let player_id = format!("player_{p:04}");
        for (day, day_effect) in day_effects.iter().enumerate() {
            let absent = rng.random::<f64>() < cfg.absence_prob;
            let eps = noise.sample(&mut rng);
            if absent {
                continue;
            }
            let post = day >= cfg.t_pre;
            let mut y = 50.0 + alpha + day_effect + eps;
            if post {
                y += trend + if treated { cfg.effect } else { 0.0 };
            }
            rows.push(PlayerDayRow {
                player_id: player_id.clone(),
                date: cfg.start_date + Days::new(day as u64),
                group,
                matches,
                win_rate: y,
                focal_picks: 0,
                kills: 6.0 + x,
                deaths,
                assists,
                gold,
            });
        }
    }
    Ok(PlayerPanel {
        focal: "focal".into(),
        event_date: cfg.event_date(),
        rows,
    })
}
