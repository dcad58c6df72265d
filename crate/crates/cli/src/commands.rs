//! Command implementations: resolve settings, call the library, write
//! results, plot data and the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use scpanel::dataio::{
    build_character_panel, classify_players, group_daily_means, load_matches, DateWindow, Group, GroupBy, LoadReport,
    Metric, PanelOptions, PlayerLedger, PlayerOutcome, PlayerPanel, Region, WinRateFill,
};
use scpanel::decomp::decompose;
use scpanel::did::{att_series, BootstrapConfig, DidPanel, Estimator, NuisanceConfig, SeriesConfig, WeightLaw};
use scpanel::robustness::{backdate, leave_one_out, placebo_in_space};
use scpanel::scm::{fit, FitConfig};
use scpanel::simgen::{generate, generate_players};
use scpanel::smooth::{BoundaryMode, Kernel};
use scpanel::PanelDataset;

use crate::config::{Config, SimKind, ZetaSetting};
use crate::manifest::{RunManifest, SCHEMA_VERSION};
use crate::{
    Cli, CliError, Command, DidCommand, EstimatorArg, KernelArg, LawArg, MetricArg, ScArgs, ScCommand, SimKindArg,
    WindowArgs,
};

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    result: &'a T,
}

/// Collects outputs for one command and writes the manifest last.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(dir: &Path, command: &str, cfg: &Config, seed: Option<u64>) -> Result<Run, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let cfg_json = serde_json::to_string(cfg).map_err(scpanel::Error::from)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest::new(command, &cfg_json, seed),
        })
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.add_input(path)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: &self.manifest.command.clone(),
            result: value,
        };
        let text = serde_json::to_string_pretty(&env).map_err(scpanel::Error::from)? + "\n";
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let path = self.path(name);
        let to_err = |e: csv::Error| CliError::Usage(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(to_err)?;
        w.write_record(header).map_err(to_err)?;
        for r in rows {
            w.write_record(&r).map_err(to_err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    fn finish(self) -> Result<(), CliError> {
        let path = self.manifest.write(&self.dir)?;
        println!("wrote {} outputs to {} (manifest {})", self.manifest.outputs.len(), self.dir.display(), path.display());
        Ok(())
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest(a) => ingest(cli, &cfg, &a.window),
        Command::Panel(a) => {
            if let Some(t) = &a.treated {
                cfg.panel.treated = Some(t.clone());
            }
            if let Some(m) = a.metric {
                cfg.panel.metric = match m {
                    MetricArg::PickRate => Metric::PickRate,
                    MetricArg::WinRate => Metric::WinRate,
                };
            }
            if a.carry_forward {
                cfg.panel.win_rate_fill = WinRateFill::CarryForward;
            }
            for (flag, target) in [
                (&a.regions, &mut cfg.panel.regions),
            ] {
                if let Some(v) = flag {
                    *target = Some(v.clone());
                }
            }
            for (flag, target) in [
                (&a.lgb, &mut cfg.panel.lgb_units),
                (&a.exclude, &mut cfg.panel.excluded_units),
                (&a.drop, &mut cfg.panel.drop_units),
            ] {
                if let Some(v) = flag {
                    *target = v.clone();
                }
            }
            panel(cli, &cfg, &a.window, a.event)
        }
        Command::Classify(a) => {
            if let Some(t) = a.threshold {
                cfg.classify.focal_threshold_pct = t;
            }
            if let Some(m) = a.min_matches {
                cfg.classify.min_pre_matches = m;
            }
            classify(cli, &cfg, &a.window, a.event, &a.focal)
        }
        Command::Sc { command } => match command {
            ScCommand::Fit(a) => {
                apply_sc(&mut cfg, a)?;
                sc_fit(cli, &cfg, &a.panel)
            }
            ScCommand::Placebo(a) => {
                apply_sc(&mut cfg, &a.sc)?;
                if let Some(v) = a.min_pre_rmse {
                    cfg.robustness.min_pre_rmse = v;
                }
                sc_placebo(cli, &cfg, &a.sc.panel)
            }
            ScCommand::Backdate(a) => {
                apply_sc(&mut cfg, &a.sc)?;
                if let Some(v) = a.shift {
                    cfg.robustness.shift_days = v;
                }
                sc_backdate(cli, &cfg, &a.sc.panel)
            }
            ScCommand::Loo(a) => {
                apply_sc(&mut cfg, a)?;
                sc_loo(cli, &cfg, &a.panel)
            }
        },
        Command::Did {
            command: DidCommand::Att(a),
        } => {
            let d = &mut cfg.did;
            if let Some(v) = &a.design {
                d.design = v.clone();
            }
            if let Some(v) = a.estimator {
                d.estimator = match v {
                    EstimatorArg::Unc => Estimator::Unconditional,
                    EstimatorArg::Dr => Estimator::DoublyRobust,
                };
            }
            if let Some(v) = a.draws {
                d.n_draws = v;
            }
            if let Some(v) = a.seed {
                d.seed = v;
            }
            if let Some(v) = a.law {
                d.weight_law = match v {
                    LawArg::Mammen => WeightLaw::Mammen,
                    LawArg::Rademacher => WeightLaw::Rademacher,
                };
            }
            if let Some(v) = a.level {
                d.level = v;
            }
            if a.pre_window.is_some() {
                d.pre_window = a.pre_window;
            }
            did_att(cli, &cfg, &a.panel)
        }
        Command::Decompose(a) => {
            apply_sc(&mut cfg, &a.sc)?;
            decompose_cmd(cli, &cfg, &a.sc.panel, &a.members)
        }
        Command::Simulate(a) => {
            let s = &mut cfg.simulation;
            if let Some(k) = a.kind {
                s.kind = match k {
                    SimKindArg::Units => SimKind::Units,
                    SimKindArg::Players => SimKind::Players,
                };
            }
            if let Some(v) = a.seed {
                s.seed = v;
            }
            if let Some(v) = a.delta {
                s.delta = v;
            }
            simulate(cli, &cfg)
        }
    }
}

fn apply_sc(cfg: &mut Config, a: &ScArgs) -> Result<(), CliError> {
    if let Some(z) = &a.zeta {
        cfg.sc.zeta = ZetaSetting::parse(z)?;
    }
    if let Some(h) = a.bandwidth {
        cfg.smoothing.bandwidth = h;
    }
    if let Some(k) = a.kernel {
        cfg.smoothing.kernel = match k {
            KernelArg::Gaussian => Kernel::Gaussian,
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
        };
    }
    if a.whole_series {
        cfg.smoothing.boundary_mode = BoundaryMode::WholeSeries;
    }
    if a.no_smooth {
        cfg.smoothing.enabled = false;
    }
    Ok(())
}

fn window(a: &WindowArgs) -> Result<DateWindow, CliError> {
    Ok(DateWindow::new(a.start, a.end)?)
}

fn load(cfg: &Config, a: &WindowArgs) -> Result<LoadReport, CliError> {
    Ok(load_matches(&a.matches, &cfg.schema, &window(a)?)?)
}

#[derive(Serialize)]
struct IngestSummary {
    records: usize,
    dropped_outside_window: usize,
    matches: usize,
    players: usize,
    characters: usize,
    days_with_matches: usize,
    records_by_region: BTreeMap<String, usize>,
}

fn ingest(cli: &Cli, cfg: &Config, a: &WindowArgs) -> Result<(), CliError> {
    let report = load(cfg, a)?;
    let mut run = Run::start(&cli.out, "ingest", cfg, None)?;
    run.input(&a.matches)?;
    let recs = &report.records;
    let distinct = |f: &dyn Fn(&scpanel::dataio::MatchRecord) -> String| recs.iter().map(f).collect::<BTreeSet<_>>().len();
    let mut by_region = BTreeMap::new();
    for r in recs {
        *by_region.entry(r.region.to_string()).or_insert(0) += 1;
    }
    let summary = IngestSummary {
        records: recs.len(),
        dropped_outside_window: report.dropped_outside_window,
        matches: distinct(&|r| r.match_id.clone()),
        players: distinct(&|r| r.player_id.clone()),
        characters: distinct(&|r| r.character.clone()),
        days_with_matches: distinct(&|r| r.date.to_string()),
        records_by_region: by_region,
    };
    run.json("ingest.json", &summary)?;
    let rows = recs
        .iter()
        .map(|r| {
            vec![
                r.match_id.clone(),
                r.date.to_string(),
                r.region.to_string(),
                r.player_id.clone(),
                r.character.clone(),
                r.role.clone(),
                u8::from(r.win).to_string(),
                r.kills.to_string(),
                r.deaths.to_string(),
                r.assists.to_string(),
                num(r.gold),
            ]
        })
        .collect();
    run.csv(
        "matches_clean.csv",
        &["match_id", "date", "region", "player_id", "character", "role", "win", "kills", "deaths", "assists", "gold"],
        rows,
    )?;
    run.finish()
}

#[derive(Serialize)]
struct PanelSummary<'a> {
    metric: Metric,
    treated_unit: &'a str,
    units: &'a [String],
    first_day: String,
    last_day: String,
    t_pre: usize,
    n_post: usize,
    lgb_units: &'a BTreeSet<String>,
    excluded_units: &'a BTreeSet<String>,
    dropped_outside_window: usize,
}

fn panel(cli: &Cli, cfg: &Config, a: &WindowArgs, event: chrono::NaiveDate) -> Result<(), CliError> {
    let treated = cfg
        .panel
        .treated
        .clone()
        .ok_or_else(|| CliError::Usage("panel needs --treated (or [panel] treated in the config)".into()))?;
    let report = load(cfg, a)?;
    let regions = cfg
        .panel
        .regions
        .as_ref()
        .map(|v| v.iter().map(|r| r.parse::<Region>()).collect::<Result<BTreeSet<_>, _>>())
        .transpose()?;
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    let opts = PanelOptions {
        metric: cfg.panel.metric,
        window: window(a)?,
        event_date: event,
        treated_unit: treated,
        regions,
        drop_units: set(&cfg.panel.drop_units),
        lgb_units: set(&cfg.panel.lgb_units),
        excluded_units: set(&cfg.panel.excluded_units),
        win_rate_fill: cfg.panel.win_rate_fill,
    };
    let p = build_character_panel(&report.records, &opts)?;
    let mut run = Run::start(&cli.out, "panel", cfg, None)?;
    run.input(&a.matches)?;
    let csv_path = run.path("panel.csv");
    run.manifest.outputs.push("panel.json".into());
    p.write(&csv_path)?;
    let summary = PanelSummary {
        metric: cfg.panel.metric,
        treated_unit: &p.treated_unit,
        units: &p.units,
        first_day: p.times[0].to_string(),
        last_day: p.times[p.n_periods() - 1].to_string(),
        t_pre: p.t_pre,
        n_post: p.n_post(),
        lgb_units: &p.lgb_units,
        excluded_units: &p.excluded_units,
        dropped_outside_window: report.dropped_outside_window,
    };
    run.json("panel_summary.json", &summary)?;
    run.finish()
}

#[derive(Serialize)]
struct ClassifyOutput {
    focal: String,
    event_date: String,
    options: scpanel::dataio::ClassifyOptions,
    counts: scpanel::dataio::GroupCounts,
    group_means: Vec<scpanel::dataio::GroupMeansReport>,
    group_means_by_prior_use: Vec<scpanel::dataio::GroupMeansReport>,
    players: Vec<scpanel::dataio::PlayerClassification>,
}

fn classify(cli: &Cli, cfg: &Config, a: &WindowArgs, event: chrono::NaiveDate, focal: &str) -> Result<(), CliError> {
    let report = load(cfg, a)?;
    let ledger = PlayerLedger::build(&report.records, focal, event);
    let (players, counts) = classify_players(&ledger, &cfg.classify)?;
    let outcomes = [PlayerOutcome::PickRate, PlayerOutcome::Matches, PlayerOutcome::WinRate];
    let means = |by: GroupBy| -> Result<Vec<_>, CliError> {
        outcomes
            .iter()
            .map(|o| group_daily_means(&ledger, &players, *o, by).map_err(CliError::from))
            .collect()
    };
    let out = ClassifyOutput {
        focal: focal.to_string(),
        event_date: event.to_string(),
        options: cfg.classify,
        counts,
        group_means: means(GroupBy::Treatment)?,
        group_means_by_prior_use: means(GroupBy::PriorUse)?,
        players: players.clone(),
    };
    let mut run = Run::start(&cli.out, "classify", cfg, None)?;
    run.input(&a.matches)?;
    run.json("classification.json", &out)?;
    let path = run.path("players.csv");
    run.manifest.outputs.push("players.json".into());
    ledger.to_player_panel(&players).write(&path)?;
    run.finish()
}

fn read_panel(run: &mut Run, path: &Path) -> Result<PanelDataset, CliError> {
    run.input(path)?;
    Ok(PanelDataset::read(path)?)
}

fn series_rows(p: &PanelDataset, observed: &[f64], counterfactual: &[f64], t_pre: usize) -> Vec<Vec<String>> {
    p.times
        .iter()
        .enumerate()
        .map(|(t, d)| {
            vec![
                d.to_string(),
                num(observed[t]),
                num(counterfactual[t]),
                num(observed[t] - counterfactual[t]),
                (t >= t_pre).to_string(),
            ]
        })
        .collect()
}

fn sc_fit(cli: &Cli, cfg: &Config, panel: &Path) -> Result<(), CliError> {
    let fc: FitConfig = cfg.fit_config()?;
    let mut run = Run::start(&cli.out, "sc fit", cfg, None)?;
    let p = read_panel(&mut run, panel)?;
    let f = fit(&p, &fc)?;
    run.json("sc_fit.json", &f)?;
    let rows = series_rows(&p, &f.observed, &f.counterfactual, f.t_pre);
    run.csv("sc_fit_series.csv", &["date", "observed", "counterfactual", "gap", "is_post"], rows)?;
    let w = f
        .weights
        .donor_labels
        .iter()
        .zip(&f.weights.omega)
        .map(|(l, w)| vec![l.clone(), num(*w)])
        .collect();
    run.csv("sc_weights.csv", &["donor", "weight"], w)?;
    run.finish()
}

fn sc_placebo(cli: &Cli, cfg: &Config, panel: &Path) -> Result<(), CliError> {
    let fc = cfg.fit_config()?;
    let mut run = Run::start(&cli.out, "sc placebo", cfg, None)?;
    let p = read_panel(&mut run, panel)?;
    let r = placebo_in_space(&p, &fc, cfg.robustness.min_pre_rmse)?;
    run.json("sc_placebo.json", &r)?;
    let mut gaps = Vec::new();
    for u in &r.units {
        for (d, g) in p.times.iter().zip(&u.gaps) {
            gaps.push(vec![u.unit.clone(), d.to_string(), num(*g), u.is_treated.to_string(), u.included.to_string()]);
        }
    }
    run.csv("sc_placebo_gaps.csv", &["unit", "date", "gap", "is_treated", "included"], gaps)?;
    let ratios = r
        .units
        .iter()
        .map(|u| {
            vec![
                u.unit.clone(),
                num(u.pre_rmse),
                num(u.post_rmse),
                opt(u.ratio),
                u.is_treated.to_string(),
                u.included.to_string(),
            ]
        })
        .collect();
    run.csv("sc_placebo_ratios.csv", &["unit", "pre_rmse", "post_rmse", "ratio", "is_treated", "included"], ratios)?;
    run.finish()
}

fn sc_backdate(cli: &Cli, cfg: &Config, panel: &Path) -> Result<(), CliError> {
    let fc = cfg.fit_config()?;
    let mut run = Run::start(&cli.out, "sc backdate", cfg, None)?;
    let p = read_panel(&mut run, panel)?;
    let shift = cfg.robustness.shift_days;
    let r = backdate(&p, shift, &fc)?;
    run.json("sc_backdate.json", &r)?;
    let shifted = p.t_pre - shift;
    let rows = p
        .times
        .iter()
        .enumerate()
        .map(|(t, d)| {
            let period = if t < shifted {
                "pre"
            } else if t < p.t_pre {
                "holdout"
            } else {
                "post"
            };
            let (o, c) = (r.fit.observed[t], r.fit.counterfactual[t]);
            vec![d.to_string(), num(o), num(c), num(o - c), period.to_string()]
        })
        .collect();
    run.csv("sc_backdate_series.csv", &["date", "observed", "counterfactual", "gap", "period"], rows)?;
    run.finish()
}

fn sc_loo(cli: &Cli, cfg: &Config, panel: &Path) -> Result<(), CliError> {
    let fc = cfg.fit_config()?;
    let mut run = Run::start(&cli.out, "sc loo", cfg, None)?;
    let p = read_panel(&mut run, panel)?;
    let r = leave_one_out(&p, &fc)?;
    run.json("sc_loo.json", &r)?;
    let mut rows = Vec::new();
    let fits = std::iter::once(("baseline", &r.baseline)).chain(r.fits.iter().map(|f| (f.dropped.as_str(), &f.fit)));
    for (label, f) in fits {
        for (t, d) in p.times.iter().enumerate() {
            rows.push(vec![label.to_string(), d.to_string(), num(f.observed[t]), num(f.counterfactual[t])]);
        }
    }
    run.csv("sc_loo_series.csv", &["dropped", "date", "observed", "counterfactual"], rows)?;
    run.finish()
}

fn did_att(cli: &Cli, cfg: &Config, panel: &Path) -> Result<(), CliError> {
    let d = &cfg.did;
    let design: Group = d.design.parse()?;
    let sc = SeriesConfig {
        estimator: d.estimator,
        pre_window: d.pre_window,
        bootstrap: BootstrapConfig {
            n_draws: d.n_draws,
            weight_law: d.weight_law,
            seed: d.seed,
            level: d.level,
        },
        nuisance: NuisanceConfig {
            trim_level: d.trim_level,
            ..NuisanceConfig::default()
        },
    };
    let mut run = Run::start(&cli.out, "did att", cfg, Some(d.seed))?;
    run.input(panel)?;
    let players = PlayerPanel::read(panel)?;
    let dp = DidPanel::from_player_panel(&players, design)?;
    let s = att_series(&dp, &sc)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    run.json("did_att.json", &s)?;
    let rows = s
        .days
        .iter()
        .map(|day| {
            vec![
                day.date.to_string(),
                opt(day.att),
                opt(day.band.map(|b| b.0)),
                opt(day.band.map(|b| b.1)),
                day.is_pre.to_string(),
            ]
        })
        .collect();
    run.csv("did_att.csv", &["date", "att", "lo", "hi", "is_pre"], rows)?;
    run.finish()
}

fn decompose_cmd(cli: &Cli, cfg: &Config, panel: &Path, members: &[String]) -> Result<(), CliError> {
    let fc = cfg.fit_config()?;
    let mut run = Run::start(&cli.out, "decompose", cfg, None)?;
    let p = read_panel(&mut run, panel)?;
    let members: BTreeSet<String> = members.iter().map(|m| m.trim().to_string()).collect();
    let r = decompose(&p, &members, &fc)?;
    run.json("decompose.json", &r)?;
    let rows = p.times[p.t_pre..]
        .iter()
        .enumerate()
        .map(|(k, d)| vec![d.to_string(), num(r.tau_series[k]), num(r.gamma_series[k]), num(r.tau_c_series[k])])
        .collect();
    run.csv("decompose_series.csv", &["date", "tau", "gamma", "tau_c"], rows)?;
    run.finish()
}

#[derive(Serialize)]
struct PlayerTruth {
    effect: f64,
    event_date: String,
    treated_group: Group,
}

fn simulate(cli: &Cli, cfg: &Config) -> Result<(), CliError> {
    let s = &cfg.simulation;
    let mut run = Run::start(&cli.out, "simulate", cfg, Some(s.seed))?;
    match s.kind {
        SimKind::Units => {
            let (p, truth) = generate(&s.unit_config()?)?;
            let path = run.path("panel.csv");
            run.manifest.outputs.push("panel.json".into());
            p.write(&path)?;
            run.json("truth.json", &truth)?;
        }
        SimKind::Players => {
            let pc = s.player_config();
            let panel = generate_players(&pc)?;
            let path = run.path("players.csv");
            run.manifest.outputs.push("players.json".into());
            panel.write(&path)?;
            let truth = PlayerTruth {
                effect: pc.effect,
                event_date: pc.event_date().to_string(),
                treated_group: pc.treated_group,
            };
            run.json("truth.json", &truth)?;
        }
    }
    run.finish()
}
