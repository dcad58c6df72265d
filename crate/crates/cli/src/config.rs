//! Run configuration: a TOML file with flat sections, every key optional.
//!
//! Precedence is built-in defaults, then the file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scpanel::dataio::{ClassifyOptions, Schema, WinRateFill};
use scpanel::did::{BootstrapConfig, Estimator, NuisanceConfig, WeightLaw};
use scpanel::scm::{FitConfig, SdKind, SolverOptions, ZetaChoice};
use scpanel::simgen::{EffectPath, PlayerSimConfig, SimConfig};
use scpanel::smooth::{BoundaryMode, Kernel, SmoothConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub smoothing: SmoothingSection,
    pub sc: ScSection,
    pub robustness: RobustnessSection,
    pub did: DidSection,
    pub classify: ClassifyOptions,
    pub panel: PanelSection,
    pub simulation: SimulationSection,
    pub schema: Schema,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub enabled: bool,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub boundary_mode: BoundaryMode,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        let s = SmoothConfig::default();
        SmoothingSection {
            enabled: true,
            bandwidth: s.bandwidth,
            kernel: s.kernel,
            boundary_mode: s.boundary_mode,
        }
    }
}

impl SmoothingSection {
    pub fn to_config(&self) -> Option<SmoothConfig> {
        self.enabled.then_some(SmoothConfig {
            bandwidth: self.bandwidth,
            kernel: self.kernel,
            boundary_mode: self.boundary_mode,
        })
    }
}

/// `zeta = "zero"`, `zeta = "rule"`, or a non-negative number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZetaSetting {
    Named(String),
    Value(f64),
}

impl ZetaSetting {
    pub fn parse(s: &str) -> Result<ZetaSetting, CliError> {
        match s {
            "zero" | "rule" => Ok(ZetaSetting::Named(s.to_string())),
            other => other
                .parse::<f64>()
                .map(ZetaSetting::Value)
                .map_err(|_| CliError::Usage(format!("--zeta expects `zero`, `rule` or a number, got `{other}`"))),
        }
    }

    pub fn to_choice(&self) -> Result<ZetaChoice, CliError> {
        match self {
            ZetaSetting::Named(s) if s == "zero" => Ok(ZetaChoice::Zero),
            ZetaSetting::Named(s) if s == "rule" => Ok(ZetaChoice::Rule),
            ZetaSetting::Named(s) => Err(CliError::Usage(format!("unknown zeta setting `{s}`"))),
            ZetaSetting::Value(v) => Ok(ZetaChoice::Value(*v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScSection {
    pub zeta: ZetaSetting,
    pub sd_kind: SdKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        ScSection {
            zeta: ZetaSetting::Named("zero".into()),
            sd_kind: SdKind::Population,
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub min_pre_rmse: f64,
    pub shift_days: usize,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        RobustnessSection {
            min_pre_rmse: 1.0,
            shift_days: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DidSection {
    pub design: String,
    pub estimator: Estimator,
    pub n_draws: usize,
    pub weight_law: WeightLaw,
    pub seed: u64,
    pub level: f64,
    pub pre_window: Option<usize>,
    pub trim_level: f64,
}

impl Default for DidSection {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        DidSection {
            design: "moderate".into(),
            estimator: Estimator::Unconditional,
            n_draws: b.n_draws,
            weight_law: b.weight_law,
            seed: b.seed,
            level: b.level,
            pre_window: None,
            trim_level: NuisanceConfig::default().trim_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSection {
    pub metric: scpanel::dataio::Metric,
    pub win_rate_fill: WinRateFill,
    pub regions: Option<Vec<String>>,
    pub treated: Option<String>,
    pub lgb_units: Vec<String>,
    pub excluded_units: Vec<String>,
    pub drop_units: Vec<String>,
}

impl Default for PanelSection {
    fn default() -> Self {
        PanelSection {
            metric: scpanel::dataio::Metric::PickRate,
            win_rate_fill: WinRateFill::Neutral,
            regions: None,
            treated: None,
            lgb_units: Vec::new(),
            excluded_units: Vec::new(),
            drop_units: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    Units,
    Players,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub kind: SimKind,
    pub seed: u64,
    pub n_units: usize,
    pub n_periods: usize,
    pub t_pre: usize,
    pub factor_rank: usize,
    pub noise_sd: f64,
    /// `none`, `constant` or `linear`.
    pub effect: String,
    pub delta: f64,
    pub mu: f64,
    pub n_players: usize,
    pub absence_prob: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimConfig::default();
        let p = PlayerSimConfig::default();
        SimulationSection {
            kind: SimKind::Units,
            seed: 42,
            n_units: s.n_units,
            n_periods: s.n_periods,
            t_pre: s.t_pre,
            factor_rank: s.factor_rank,
            noise_sd: s.noise_sd,
            effect: "constant".into(),
            delta: -7.0,
            mu: s.mu,
            n_players: p.n_players,
            absence_prob: p.absence_prob,
        }
    }
}

impl SimulationSection {
    pub fn effect_path(&self) -> Result<EffectPath, CliError> {
        match self.effect.as_str() {
            "none" => Ok(EffectPath::None),
            "constant" => Ok(EffectPath::Constant { delta: self.delta }),
            "linear" => Ok(EffectPath::Linear { delta: self.delta }),
            other => Err(CliError::Usage(format!(
                "simulation effect must be none, constant or linear, got `{other}`"
            ))),
        }
    }

    pub fn unit_config(&self) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            n_units: self.n_units,
            n_periods: self.n_periods,
            t_pre: self.t_pre,
            factor_rank: self.factor_rank,
            noise_sd: self.noise_sd,
            effect_path: self.effect_path()?,
            seed: self.seed,
            mu: self.mu,
            ..SimConfig::default()
        })
    }

    pub fn player_config(&self) -> PlayerSimConfig {
        PlayerSimConfig {
            n_players: self.n_players,
            n_days: self.n_periods,
            t_pre: self.t_pre,
            effect: if self.effect == "none" { 0.0 } else { self.delta },
            noise_sd: self.noise_sd,
            absence_prob: self.absence_prob,
            seed: self.seed,
            ..PlayerSimConfig::default()
        }
    }
}

impl Config {
    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        Ok(FitConfig {
            zeta: self.sc.zeta.to_choice()?,
            smoothing: self.smoothing.to_config(),
            solver: SolverOptions {
                tol: self.sc.tol,
                max_iter: self.sc.max_iter,
            },
            sd_kind: self.sc.sd_kind,
        })
    }
}
