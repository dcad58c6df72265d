//! Ingestion of exported match logs, character-level daily panels, and
//! player-level ledgers with prior-user classification.
//!
//! Pick rate on a day is the share of that day's matches in which the
//! character was selected, in percent. The denominator is matches, not
//! player slots, so with ten distinct picks per match the pick rates of a
//! day sum to 1000.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panel::{csv_err, format_f64, parse_date, PanelDataset};

pub const MAX_PLAYERS_PER_MATCH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Europe,
    Korea,
    LatinAmerica,
    NorthAmerica,
    Other,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Europe,
        Region::Korea,
        Region::LatinAmerica,
        Region::NorthAmerica,
        Region::Other,
    ];

    /// Maps canonical names and server codes (EUW, EUNE, KR, BR, LAN, LAS,
    /// NA) onto regions. Unknown servers fall into `Other`.
    pub fn from_tag(tag: &str) -> Region {
        match tag.trim().to_ascii_lowercase().as_str() {
            "europe" | "euw" | "euw1" | "eune" | "eun1" => Region::Europe,
            "korea" | "kr" => Region::Korea,
            "latin_america" | "br" | "br1" | "lan" | "la1" | "las" | "la2" => Region::LatinAmerica,
            "north_america" | "na" | "na1" => Region::NorthAmerica,
            _ => Region::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Europe => "europe",
            Region::Korea => "korea",
            Region::LatinAmerica => "latin_america",
            Region::NorthAmerica => "north_america",
            Region::Other => "other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown region `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    pub date: NaiveDate,
    pub region: Region,
    pub player_id: String,
    pub character: String,
    pub role: String,
    pub win: bool,
    pub kills: u32,
    pub deaths: u32,
    pub assists: u32,
    pub gold: f64,
}

/// Header names for each logical column; defaults to the logical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub match_id: String,
    pub date: String,
    pub region: String,
    pub player_id: String,
    pub character: String,
    pub role: String,
    pub win: String,
    pub kills: String,
    pub deaths: String,
    pub assists: String,
    pub gold: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            match_id: "match_id".into(),
            date: "date".into(),
            region: "region".into(),
            player_id: "player_id".into(),
            character: "character".into(),
            role: "role".into(),
            win: "win".into(),
            kills: "kills".into(),
            deaths: "deaths".into(),
            assists: "assists".into(),
            gold: "gold".into(),
        }
    }
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(invalid(format!("window end {end} precedes start {start}")));
        }
        Ok(DateWindow { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.start.iter_days().take_while(|d| *d <= self.end).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub records: Vec<MatchRecord>,
    pub dropped_outside_window: usize,
}

pub fn load_matches(path: &Path, schema: &Schema, window: &DateWindow) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matches(file, schema, window)
}

pub fn read_matches<R: std::io::Read>(input: R, schema: &Schema, window: &DateWindow) -> Result<LoadReport> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(csv_err(Path::new("<matches>")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| invalid(format!("missing required column `{name}`")))
    };
    let idx = [
        col(&schema.match_id)?,
        col(&schema.date)?,
        col(&schema.region)?,
        col(&schema.player_id)?,
        col(&schema.character)?,
        col(&schema.role)?,
        col(&schema.win)?,
        col(&schema.kills)?,
        col(&schema.deaths)?,
        col(&schema.assists)?,
        col(&schema.gold)?,
    ];

    let mut records = Vec::new();
    let mut dropped = 0usize;
    let mut keys: HashSet<(String, String)> = HashSet::new();
    let mut per_match: HashMap<String, (usize, HashSet<String>)> = HashMap::new();

    for (k, rec) in rdr.records().enumerate() {
        // header is line 1
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let count = |i: usize, name: &str| -> Result<u32> {
            field(i).parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: format!("`{}` is not a non-negative count", field(i)),
            })
        };

        let date = parse_date(field(1), row, &schema.date)?;
        let win = match field(6) {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.win.clone(),
                    message: format!("`{other}` is not 0 or 1"),
                })
            }
        };
        let gold: f64 = field(10).parse().map_err(|_| Error::Parse {
            row,
            column: schema.gold.clone(),
            message: format!("`{}` is not a number", field(10)),
        })?;
        if !(gold >= 0.0) || !gold.is_finite() {
            return Err(Error::Parse {
                row,
                column: schema.gold.clone(),
                message: format!("gold must be non-negative, got {gold}"),
            });
        }
        for (i, name) in [(0, &schema.match_id), (3, &schema.player_id), (4, &schema.character)] {
            if field(i).is_empty() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "empty value".into(),
                });
            }
        }
        let record = MatchRecord {
            match_id: field(0).to_string(),
            date,
            region: Region::from_tag(field(2)),
            player_id: field(3).to_string(),
            character: field(4).to_string(),
            role: field(5).to_string(),
            win,
            kills: count(7, &schema.kills)?,
            deaths: count(8, &schema.deaths)?,
            assists: count(9, &schema.assists)?,
            gold,
        };
        if !window.contains(record.date) {
            dropped += 1;
            continue;
        }
        if !keys.insert((record.match_id.clone(), record.player_id.clone())) {
            return Err(Error::DuplicateKey {
                match_id: record.match_id,
                player_id: record.player_id,
            });
        }
        let entry = per_match.entry(record.match_id.clone()).or_default();
        entry.0 += 1;
        if entry.0 > MAX_PLAYERS_PER_MATCH {
            return Err(invalid(format!(
                "match `{}` has more than {MAX_PLAYERS_PER_MATCH} player records",
                record.match_id
            )));
        }
        if !entry.1.insert(record.character.clone()) {
            return Err(invalid(format!(
                "character `{}` appears twice in match `{}`",
                record.character, record.match_id
            )));
        }
        records.push(record);
    }
    Ok(LoadReport {
        records,
        dropped_outside_window: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PickRate,
    WinRate,
}

/// Value used for win rate on unit-days without appearances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinRateFill {
    /// Neutral 50%.
    Neutral,
    /// Previous day's value (50% before the first appearance).
    CarryForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    pub metric: Metric,
    pub window: DateWindow,
    /// First post-treatment day; every earlier day in the window is pre.
    pub event_date: NaiveDate,
    pub treated_unit: String,
    /// `None` pools all regions.
    pub regions: Option<BTreeSet<Region>>,
    /// Units removed from the panel entirely (e.g. released after the event).
    pub drop_units: BTreeSet<String>,
    pub lgb_units: BTreeSet<String>,
    /// Units kept in the panel but barred from donor pools.
    pub excluded_units: BTreeSet<String>,
    pub win_rate_fill: WinRateFill,
}

/// Per-day counts behind a character panel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DailyCounts {
    pub matches: usize,
    /// character -> (matches containing it, matches it won)
    pub by_character: BTreeMap<String, (usize, usize)>,
}

pub fn daily_counts(
    records: &[MatchRecord],
    regions: Option<&BTreeSet<Region>>,
) -> BTreeMap<NaiveDate, DailyCounts> {
    let mut matches: BTreeMap<NaiveDate, BTreeSet<&str>> = BTreeMap::new();
    let mut out: BTreeMap<NaiveDate, DailyCounts> = BTreeMap::new();
    for r in records {
        if regions.is_some_and(|set| !set.contains(&r.region)) {
            continue;
        }
        matches.entry(r.date).or_default().insert(&r.match_id);
        let day = out.entry(r.date).or_default();
        let c = day.by_character.entry(r.character.clone()).or_default();
        c.0 += 1;
        c.1 += usize::from(r.win);
    }
    for (d, ids) in matches {
        out.get_mut(&d).expect("same keys").matches = ids.len();
    }
    out
}

pub fn build_character_panel(records: &[MatchRecord], opts: &PanelOptions) -> Result<PanelDataset> {
    if records.is_empty() {
        return Err(invalid("no match records"));
    }
    let w = &opts.window;
    if !(w.start < opts.event_date && opts.event_date <= w.end) {
        return Err(invalid(format!(
            "event date {} must fall strictly inside the window {}..={}",
            opts.event_date, w.start, w.end
        )));
    }
    let counts = daily_counts(records, opts.regions.as_ref());
    let times = w.days();
    let empty: Vec<String> = times
        .iter()
        .filter(|d| counts.get(d).is_none_or(|c| c.matches == 0))
        .map(|d| d.to_string())
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyDays { days: empty });
    }

    let units: Vec<String> = counts
        .values()
        .flat_map(|c| c.by_character.keys())
        .filter(|u| !opts.drop_units.contains(*u))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let outcomes = units
        .iter()
        .map(|u| {
            let mut last = 50.0;
            times
                .iter()
                .map(|d| {
                    let c = &counts[d];
                    let (app, won) = c.by_character.get(u).copied().unwrap_or((0, 0));
                    match opts.metric {
                        Metric::PickRate => 100.0 * app as f64 / c.matches as f64,
                        Metric::WinRate if app > 0 => {
                            last = 100.0 * won as f64 / app as f64;
                            last
                        }
                        Metric::WinRate => match opts.win_rate_fill {
                            WinRateFill::Neutral => 50.0,
                            WinRateFill::CarryForward => last,
                        },
                    }
                })
                .collect()
        })
        .collect();

    let t_pre = times.iter().filter(|d| **d < opts.event_date).count();
    let present = |set: &BTreeSet<String>| -> BTreeSet<String> {
        set.iter().filter(|u| units.contains(u)).cloned().collect()
    };
    let lgb = present(&opts.lgb_units);
    let excluded = present(&opts.excluded_units);
    PanelDataset::new(units, times, outcomes, opts.treated_unit.clone(), t_pre)?
        .with_lgb_units(lgb)?
        .with_excluded_units(excluded)
}

// ---------------------------------------------------------------------------
// Player-level ledger

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerDay {
    pub matches_played: u32,
    pub matches_won: u32,
    pub picks_of_focal: u32,
    pub avg_kills: f64,
    pub avg_deaths: f64,
    pub avg_assists: f64,
    pub avg_gold: f64,
}

impl PlayerDay {
    pub fn win_rate(&self) -> f64 {
        100.0 * self.matches_won as f64 / self.matches_played as f64
    }

    pub fn focal_pick_rate(&self) -> f64 {
        100.0 * self.picks_of_focal as f64 / self.matches_played as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerSummary {
    pub pre_matches: u32,
    pub post_matches: u32,
    pub pre_focal_pickrate: f64,
    /// Zero when the player has no post-treatment matches.
    pub post_focal_pickrate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerLedger {
    pub focal: String,
    pub event_date: NaiveDate,
    pub days: BTreeMap<(String, NaiveDate), PlayerDay>,
    pub players: BTreeMap<String, PlayerSummary>,
}

impl PlayerLedger {
    pub fn build(records: &[MatchRecord], focal: &str, event_date: NaiveDate) -> Self {
        let mut days: BTreeMap<(String, NaiveDate), PlayerDay> = BTreeMap::new();
        for r in records {
            let d = days.entry((r.player_id.clone(), r.date)).or_default();
            d.matches_played += 1;
            d.matches_won += u32::from(r.win);
            d.picks_of_focal += u32::from(r.character == focal);
            // running sums; converted to per-match averages below
            d.avg_kills += r.kills as f64;
            d.avg_deaths += r.deaths as f64;
            d.avg_assists += r.assists as f64;
            d.avg_gold += r.gold;
        }
        let mut totals: BTreeMap<String, [u32; 4]> = BTreeMap::new();
        for ((player, date), d) in days.iter_mut() {
            let n = d.matches_played as f64;
            d.avg_kills /= n;
            d.avg_deaths /= n;
            d.avg_assists /= n;
            d.avg_gold /= n;
            let t = totals.entry(player.clone()).or_default();
            if *date < event_date {
                t[0] += d.matches_played;
                t[1] += d.picks_of_focal;
            } else {
                t[2] += d.matches_played;
                t[3] += d.picks_of_focal;
            }
        }
        let rate = |picks: u32, n: u32| if n == 0 { 0.0 } else { 100.0 * picks as f64 / n as f64 };
        let players = totals
            .into_iter()
            .map(|(p, [pre_n, pre_k, post_n, post_k])| {
                (
                    p,
                    PlayerSummary {
                        pre_matches: pre_n,
                        post_matches: post_n,
                        pre_focal_pickrate: rate(pre_k, pre_n),
                        post_focal_pickrate: rate(post_k, post_n),
                    },
                )
            })
            .collect();
        PlayerLedger {
            focal: focal.to_string(),
            event_date,
            days,
            players,
        }
    }

    pub fn is_pre(&self, d: NaiveDate) -> bool {
        d < self.event_date
    }

    /// Exports the per-day rows with each player's group attached.
    pub fn to_player_panel(&self, classification: &[PlayerClassification]) -> PlayerPanel {
        let groups: HashMap<&str, Group> = classification
            .iter()
            .map(|c| (c.player_id.as_str(), c.group))
            .collect();
        let rows = self
            .days
            .iter()
            .map(|((player, date), d)| PlayerDayRow {
                player_id: player.clone(),
                date: *date,
                group: groups.get(player.as_str()).copied().unwrap_or(Group::Excluded),
                matches: d.matches_played,
                win_rate: d.win_rate(),
                focal_picks: d.picks_of_focal,
                kills: d.avg_kills,
                deaths: d.avg_deaths,
                assists: d.avg_assists,
                gold: d.avg_gold,
            })
            .collect();
        PlayerPanel {
            focal: self.focal.clone(),
            event_date: self.event_date,
            rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Control,
    Moderate,
    Substantial,
    Excluded,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Control, Group::Moderate, Group::Substantial, Group::Excluded];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Moderate => "moderate",
            Group::Substantial => "substantial",
            Group::Excluded => "excluded",
        }
    }
}

impl FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| invalid(format!("unknown group `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerClassification {
    pub player_id: String,
    pub prior_user: bool,
    pub reduction_pct: f64,
    pub group: Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub focal_threshold_pct: f64,
    pub min_pre_matches: u32,
    pub moderate_cut_pct: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            focal_threshold_pct: 5.0,
            min_pre_matches: 50,
            moderate_cut_pct: 75.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub prior_users: usize,
    pub control: usize,
    pub moderate: usize,
    pub substantial: usize,
    pub excluded: usize,
}

pub fn classify_players(
    ledger: &PlayerLedger,
    opts: &ClassifyOptions,
) -> Result<(Vec<PlayerClassification>, GroupCounts)> {
    if !ledger.players.values().any(|p| p.pre_matches > 0)
        || !ledger.players.values().any(|p| p.post_matches > 0)
    {
        return Err(invalid("ledger must cover both pre- and post-treatment days"));
    }
    let mut counts = GroupCounts::default();
    let mut out = Vec::with_capacity(ledger.players.len());
    for (player, s) in &ledger.players {
        let prior =
            s.pre_focal_pickrate >= opts.focal_threshold_pct && s.pre_matches >= opts.min_pre_matches;
        let reduction = if s.pre_focal_pickrate > 0.0 {
            100.0 * (s.pre_focal_pickrate - s.post_focal_pickrate) / s.pre_focal_pickrate
        } else if prior {
            return Err(Error::Numerical(format!(
                "prior user `{player}` has a zero pre-treatment pick rate"
            )));
        } else {
            0.0
        };
        let group = if !prior {
            Group::Excluded
        } else if reduction <= 0.0 {
            Group::Control
        } else if reduction <= opts.moderate_cut_pct {
            Group::Moderate
        } else {
            Group::Substantial
        };
        match group {
            Group::Control => counts.control += 1,
            Group::Moderate => counts.moderate += 1,
            Group::Substantial => counts.substantial += 1,
            Group::Excluded => counts.excluded += 1,
        }
        counts.prior_users += usize::from(prior);
        out.push(PlayerClassification {
            player_id: player.clone(),
            prior_user: prior,
            reduction_pct: reduction,
            group,
        });
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerOutcome {
    PickRate,
    Matches,
    WinRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    /// control / moderate / substantial / excluded
    Treatment,
    /// prior / non_prior
    PriorUse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: String,
    pub pre_mean: Option<f64>,
    pub post_mean: Option<f64>,
    pub n_players_pre: usize,
    pub n_players_post: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeansReport {
    pub outcome: PlayerOutcome,
    pub rows: Vec<GroupMean>,
    /// Groups with no members, omitted from `rows`.
    pub empty_groups: Vec<String>,
}

/// Mean of a per-player daily outcome by group and period. Each player's
/// days are averaged first; group means then weight players equally.
pub fn group_daily_means(
    ledger: &PlayerLedger,
    classification: &[PlayerClassification],
    outcome: PlayerOutcome,
    group_by: GroupBy,
) -> Result<GroupMeansReport> {
    if classification.is_empty() {
        return Err(invalid("classification is empty"));
    }
    let label_of = |c: &PlayerClassification| -> &'static str {
        match group_by {
            GroupBy::Treatment => c.group.as_str(),
            GroupBy::PriorUse if c.prior_user => "prior",
            GroupBy::PriorUse => "non_prior",
        }
    };
    let labels: Vec<&'static str> = match group_by {
        GroupBy::Treatment => Group::ALL.iter().map(|g| g.as_str()).collect(),
        GroupBy::PriorUse => vec!["prior", "non_prior"],
    };
    let group_of: HashMap<&str, &'static str> = classification
        .iter()
        .map(|c| (c.player_id.as_str(), label_of(c)))
        .collect();

    // player -> [sum_pre, n_pre, sum_post, n_post]
    let mut per_player: BTreeMap<&str, [f64; 4]> = BTreeMap::new();
    for ((player, date), d) in &ledger.days {
        if !group_of.contains_key(player.as_str()) || d.matches_played == 0 {
            continue;
        }
        let v = match outcome {
            PlayerOutcome::PickRate => d.focal_pick_rate(),
            PlayerOutcome::Matches => d.matches_played as f64,
            PlayerOutcome::WinRate => d.win_rate(),
        };
        let acc = per_player.entry(player.as_str()).or_default();
        let k = if ledger.is_pre(*date) { 0 } else { 2 };
        acc[k] += v;
        acc[k + 1] += 1.0;
    }

    let mut rows = Vec::new();
    let mut empty_groups = Vec::new();
    for label in labels {
        let members: Vec<&[f64; 4]> = per_player
            .iter()
            .filter(|(p, _)| group_of.get(*p) == Some(&label))
            .map(|(_, a)| a)
            .collect();
        if !classification.iter().any(|c| label_of(c) == label) {
            empty_groups.push(label.to_string());
            continue;
        }
        let period_mean = |k: usize| -> (Option<f64>, usize) {
            let means: Vec<f64> = members
                .iter()
                .filter(|a| a[k + 1] > 0.0)
                .map(|a| a[k] / a[k + 1])
                .collect();
            if means.is_empty() {
                (None, 0)
            } else {
                (Some(means.iter().sum::<f64>() / means.len() as f64), means.len())
            }
        };
        let (pre_mean, n_players_pre) = period_mean(0);
        let (post_mean, n_players_post) = period_mean(2);
        rows.push(GroupMean {
            group: label.to_string(),
            pre_mean,
            post_mean,
            n_players_pre,
            n_players_post,
        });
    }
    Ok(GroupMeansReport {
        outcome,
        rows,
        empty_groups,
    })
}

// ---------------------------------------------------------------------------
// Player panel file: one row per player-day, with the player's group.

pub const PLAYER_PANEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerDayRow {
    pub player_id: String,
    pub date: NaiveDate,
    pub group: Group,
    pub matches: u32,
    /// Percent of the day's matches won.
    pub win_rate: f64,
    pub focal_picks: u32,
    pub kills: f64,
    pub deaths: f64,
    pub assists: f64,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerPanel {
    pub focal: String,
    pub event_date: NaiveDate,
    pub rows: Vec<PlayerDayRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerPanelSidecar {
    pub schema_version: u32,
    pub focal: String,
    pub event_date: NaiveDate,
}

const PLAYER_COLUMNS: [&str; 10] = [
    "player_id",
    "date",
    "group",
    "matches",
    "win_rate",
    "focal_picks",
    "kills",
    "deaths",
    "assists",
    "gold",
];

impl PlayerPanel {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(PLAYER_COLUMNS).map_err(csv_err(path))?;
        for r in &self.rows {
            w.write_record([
                r.player_id.clone(),
                r.date.to_string(),
                r.group.as_str().to_string(),
                r.matches.to_string(),
                format_f64(r.win_rate),
                r.focal_picks.to_string(),
                format_f64(r.kills),
                format_f64(r.deaths),
                format_f64(r.assists),
                format_f64(r.gold),
            ])
            .map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = crate::panel::sidecar_path(path);
        let meta = PlayerPanelSidecar {
            schema_version: PLAYER_PANEL_SCHEMA_VERSION,
            focal: self.focal.clone(),
            event_date: self.event_date,
        };
        std::fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(side, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let side = crate::panel::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PlayerPanelSidecar = serde_json::from_str(&text)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers().map_err(csv_err(path))?.clone();
        let mut idx = [0usize; 10];
        for (k, name) in PLAYER_COLUMNS.iter().enumerate() {
            idx[k] = headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| invalid(format!("{}: missing column `{name}`", path.display())))?;
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(csv_err(path))?;
            let get = |c: usize| rec.get(idx[c]).unwrap_or("").trim();
            let num = |c: usize| -> Result<f64> {
                get(c).parse().map_err(|_| Error::Parse {
                    row,
                    column: PLAYER_COLUMNS[c].into(),
                    message: format!("`{}` is not a number", get(c)),
                })
            };
            let cnt = |c: usize| -> Result<u32> {
                get(c).parse().map_err(|_| Error::Parse {
                    row,
                    column: PLAYER_COLUMNS[c].into(),
                    message: format!("`{}` is not a count", get(c)),
                })
            };
            rows.push(PlayerDayRow {
                player_id: get(0).to_string(),
                date: parse_date(get(1), row, "date")?,
                group: get(2).parse().map_err(|e: Error| Error::Parse {
                    row,
                    column: "group".into(),
                    message: e.to_string(),
                })?,
                matches: cnt(3)?,
                win_rate: num(4)?,
                focal_picks: cnt(5)?,
                kills: num(6)?,
                deaths: num(7)?,
                assists: num(8)?,
                gold: num(9)?,
            });
        }
        Ok(PlayerPanel {
            focal: meta.focal,
            event_date: meta.event_date,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 5, day).unwrap()
    }

    const HEADER: &str = "match_id,date,region,player_id,character,role,win,kills,deaths,assists,gold\n";

    fn window() -> DateWindow {
        DateWindow::new(d(1), d(31)).unwrap()
    }

    fn load(body: &str) -> Result<LoadReport> {
        read_matches(format!("{HEADER}{body}").as_bytes(), &Schema::default(), &window())
    }

    fn rec(m: &str, day: u32, player: &str, ch: &str, win: bool) -> MatchRecord {
        MatchRecord {
            match_id: m.into(),
            date: d(day),
            region: Region::Europe,
            player_id: player.into(),
            character: ch.into(),
            role: "jungle".into(),
            win,
            kills: 1,
            deaths: 2,
            assists: 3,
            gold: 1000.0,
        }
    }

    #[test]
    fn loads_valid_rows() {
        let r = load(
            "m1,2022-05-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m1,2022-05-02,EUW,p2,Ahri,mid,0,3,4,1,9000.5\n\
             m2,2022-05-03T23:59:00Z,KR,p1,Lux,support,1,0,0,12,7000\n",
        )
        .unwrap();
        assert_eq!(r.records.len(), 3);
        assert_eq!(r.dropped_outside_window, 0);
        assert_eq!(r.records[2].region, Region::Korea);
        assert_eq!(r.records[2].date, d(3));
        assert_eq!(r.records[1].gold, 9000.5);
    }

    #[test]
    fn duplicate_key_is_named() {
        let err = load(
            "m1,2022-05-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m1,2022-05-02,EUW,p1,Ahri,mid,0,3,4,1,9000\n",
        )
        .unwrap_err();
        match err {
            Error::DuplicateKey { match_id, player_id } => {
                assert_eq!((match_id.as_str(), player_id.as_str()), ("m1", "p1"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_window_rows_are_dropped() {
        let r = load(
            "m1,2022-05-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m2,2022-06-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m3,2022-05-09,EUNE,p2,Ahri,mid,0,3,4,1,9000\n",
        )
        .unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.dropped_outside_window, 1);
    }

    #[test]
    fn malformed_rows_name_row_and_column() {
        let err = load(
            "m1,2022-05-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m2,2022-05-02,EUW,p2,Ahri,mid,yes,3,4,1,9000\n",
        )
        .unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (3, "win")),
            other => panic!("unexpected {other}"),
        }
        let err = load("m1,05/02/2022,EUW,p1,Graves,jungle,1,5,2,7,11000\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "date"));
        let err = load("m1,2022-05-02,EUW,p1,Graves,jungle,1,-5,2,7,11000\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref column, .. } if column == "kills"));
    }

    #[test]
    fn character_twice_in_a_match_is_rejected() {
        let err = load(
            "m1,2022-05-02,EUW,p1,Graves,jungle,1,5,2,7,11000\n\
             m1,2022-05-02,EUW,p2,Graves,mid,0,3,4,1,9000\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("twice"));
    }

    #[test]
    fn custom_schema_maps_headers() {
        let schema = Schema {
            character: "champion".into(),
            ..Schema::default()
        };
        let text = "match_id,date,region,player_id,champion,role,win,kills,deaths,assists,gold\n\
                    m1,2022-05-02,NA,p1,Graves,jungle,1,5,2,7,11000\n";
        let r = read_matches(text.as_bytes(), &schema, &window()).unwrap();
        assert_eq!(r.records[0].character, "Graves");
        assert!(read_matches(text.as_bytes(), &Schema::default(), &window()).is_err());
    }

    #[test]
    fn region_tags() {
        assert_eq!(Region::from_tag("EUNE"), Region::Europe);
        assert_eq!(Region::from_tag("LAS"), Region::LatinAmerica);
        assert_eq!(Region::from_tag("BR"), Region::LatinAmerica);
        assert_eq!(Region::from_tag("na"), Region::NorthAmerica);
        assert_eq!(Region::from_tag("OCE"), Region::Other);
    }

    fn opts(metric: Metric, start: u32, end: u32, event: u32) -> PanelOptions {
        PanelOptions {
            metric,
            window: DateWindow::new(d(start), d(end)).unwrap(),
            event_date: d(event),
            treated_unit: "A".into(),
            regions: None,
            drop_units: BTreeSet::new(),
            lgb_units: BTreeSet::new(),
            excluded_units: BTreeSet::new(),
            win_rate_fill: WinRateFill::Neutral,
        }
    }

    #[test]
    fn pick_rate_single_day() {
        let recs = vec![
            rec("m1", 1, "p1", "A", true),
            rec("m2", 1, "p2", "B", true),
            rec("m3", 1, "p3", "B", false),
            rec("m4", 1, "p4", "C", true),
            rec("m5", 2, "p1", "A", true),
        ];
        let p = build_character_panel(&recs, &opts(Metric::PickRate, 1, 2, 2)).unwrap();
        assert_eq!(p.series("A").unwrap()[0], 25.0);
        assert_eq!(p.series("B").unwrap()[0], 50.0);
        assert_eq!(p.series("C").unwrap(), &[25.0, 0.0]);
    }

    #[test]
    fn two_by_two_fixture() {
        // day 1: m1 {A, B}, m2 {A}; day 2: m3 {B}, m4 {B}, m5 {A, B}
        let recs = vec![
            rec("m1", 1, "p1", "A", true),
            rec("m1", 1, "p2", "B", false),
            rec("m2", 1, "p3", "A", false),
            rec("m3", 2, "p1", "B", true),
            rec("m4", 2, "p2", "B", true),
            rec("m5", 2, "p3", "A", true),
            rec("m5", 2, "p4", "B", false),
        ];
        let pick = build_character_panel(&recs, &opts(Metric::PickRate, 1, 2, 2)).unwrap();
        assert_eq!(pick.units, vec!["A", "B"]);
        assert_eq!(pick.outcomes, vec![vec![100.0, 100.0 / 3.0], vec![50.0, 100.0]]);
        assert_eq!(pick.t_pre, 1);
        let win = build_character_panel(&recs, &opts(Metric::WinRate, 1, 2, 2)).unwrap();
        assert_eq!(win.outcomes, vec![vec![50.0, 100.0], vec![0.0, 200.0 / 3.0]]);
    }

    #[test]
    fn win_rate_fills_absent_days() {
        let recs = vec![
            rec("m1", 1, "p1", "A", true),
            rec("m2", 1, "p2", "B", true),
            rec("m1", 1, "p3", "C", false),
            rec("m3", 2, "p1", "B", false),
            rec("m3", 2, "p2", "A", true),
            rec("m3", 2, "p3", "D", true),
            rec("m4", 3, "p1", "A", true),
        ];
        let mut o = opts(Metric::WinRate, 1, 3, 2);
        let p = build_character_panel(&recs, &o).unwrap();
        assert_eq!(p.series("C").unwrap(), &[0.0, 50.0, 50.0]);
        assert_eq!(p.series("D").unwrap(), &[50.0, 100.0, 50.0]);
        o.win_rate_fill = WinRateFill::CarryForward;
        let p = build_character_panel(&recs, &o).unwrap();
        assert_eq!(p.series("C").unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(p.series("D").unwrap(), &[50.0, 100.0, 100.0]);
    }

    #[test]
    fn two_wins_in_two_appearances() {
        let recs = vec![rec("m1", 1, "p1", "A", true), rec("m2", 1, "p1", "A", true), rec("m3", 2, "p1", "B", true)];
        let p = build_character_panel(&recs, &opts(Metric::WinRate, 1, 2, 2)).unwrap();
        assert_eq!(p.series("A").unwrap()[0], 100.0);
    }

    #[test]
    fn empty_day_is_an_error() {
        let recs = vec![rec("m1", 1, "p1", "A", true), rec("m2", 3, "p1", "B", true)];
        match build_character_panel(&recs, &opts(Metric::PickRate, 1, 3, 2)) {
            Err(Error::EmptyDays { days }) => assert_eq!(days, vec!["2022-05-02".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        let mut o = opts(Metric::PickRate, 1, 1, 1);
        o.event_date = d(1);
        assert!(build_character_panel(&recs, &o).is_err());
    }

    #[test]
    fn dropped_units_leave_the_panel() {
        let recs = vec![
            rec("m1", 1, "p1", "A", true),
            rec("m1", 1, "p2", "B", true),
            rec("m2", 2, "p1", "A", true),
            rec("m2", 2, "p2", "New", true),
        ];
        let mut o = opts(Metric::PickRate, 1, 2, 2);
        o.drop_units.insert("New".into());
        o.excluded_units.insert("B".into());
        let p = build_character_panel(&recs, &o).unwrap();
        assert_eq!(p.units, vec!["A", "B"]);
        assert!(p.donor_pool().is_empty());
    }

    fn ledger_with(players: &[(&str, u32, u32, u32, u32)]) -> PlayerLedger {
        // (player, pre matches, pre focal picks, post matches, post focal picks)
        let mut recs = Vec::new();
        let mut m = 0;
        for (p, pre_n, pre_k, post_n, post_k) in players {
            for i in 0..*pre_n {
                m += 1;
                let ch = if i < *pre_k { "G" } else { "X" };
                recs.push(rec(&format!("m{m}"), 1 + i % 10, p, ch, i % 2 == 0));
            }
            for i in 0..*post_n {
                m += 1;
                let ch = if i < *post_k { "G" } else { "X" };
                recs.push(rec(&format!("m{m}"), 20 + i % 10, p, ch, i % 2 == 0));
            }
        }
        PlayerLedger::build(&recs, "G", d(15))
    }

    #[test]
    fn classification_groups() {
        let ledger = ledger_with(&[
            ("below", 1000, 49, 100, 10),  // 4.9% pre -> excluded
            ("few", 40, 20, 40, 20),       // too few matches
            ("same", 100, 10, 100, 10),    // 0% reduction -> control
            ("more", 100, 10, 100, 30),    // negative reduction -> control
            ("mod", 100, 20, 100, 5),      // 75% reduction -> moderate
            ("sub", 100, 20, 100, 4),      // 80% reduction -> substantial
            ("quit", 100, 20, 100, 0),     // 100% -> substantial
        ]);
        let (cls, counts) = classify_players(&ledger, &ClassifyOptions::default()).unwrap();
        let group = |p: &str| cls.iter().find(|c| c.player_id == p).unwrap().group;
        assert_eq!(group("below"), Group::Excluded);
        assert_eq!(group("few"), Group::Excluded);
        assert_eq!(group("same"), Group::Control);
        assert_eq!(group("more"), Group::Control);
        assert_eq!(group("mod"), Group::Moderate);
        assert_eq!(group("sub"), Group::Substantial);
        assert_eq!(group("quit"), Group::Substantial);
        assert_eq!(counts.prior_users, 5);
        assert_eq!(counts.control + counts.moderate + counts.substantial, counts.prior_users);
        let reduction = cls.iter().find(|c| c.player_id == "more").unwrap().reduction_pct;
        assert!((reduction - -200.0).abs() < 1e-12);
    }

    #[test]
    fn reported_group_sizes_are_consistent() {
        // Moderate, substantial and control prior users reported for the
        // original match data.
        assert_eq!(244 + 451 + 145, 840);
    }

    #[test]
    fn group_means_constant_and_symmetric() {
        let recs = vec![
            rec("m1", 1, "p1", "X", true),
            rec("m2", 1, "p1", "X", false),
            rec("m3", 20, "p1", "X", true),
            rec("m4", 20, "p1", "X", false),
            rec("m5", 2, "p2", "X", true),
            rec("m6", 21, "p2", "X", false),
        ];
        let ledger = PlayerLedger::build(&recs, "G", d(15));
        let cls = vec![
            PlayerClassification { player_id: "p1".into(), prior_user: true, reduction_pct: 0.0, group: Group::Control },
            PlayerClassification { player_id: "p2".into(), prior_user: true, reduction_pct: 10.0, group: Group::Moderate },
        ];
        let r = group_daily_means(&ledger, &cls, PlayerOutcome::WinRate, GroupBy::Treatment).unwrap();
        let control = r.rows.iter().find(|g| g.group == "control").unwrap();
        assert_eq!((control.pre_mean, control.post_mean), (Some(50.0), Some(50.0)));
        assert!(r.empty_groups.contains(&"substantial".to_string()));
        let r = group_daily_means(&ledger, &cls, PlayerOutcome::WinRate, GroupBy::PriorUse).unwrap();
        assert_eq!(r.rows[0].pre_mean, Some((50.0 + 100.0) / 2.0));
        assert_eq!(r.empty_groups, vec!["non_prior".to_string()]);
    }

    #[test]
    fn group_means_average_players_then_groups() {
        // p1: day1 wins 1/1 (100), day2 wins 1/3 (33.3) -> player mean 66.67
        // p2: day1 0/4 (0)                              -> 0
        // p3: day2 2/2 (100)                            -> 100
        let mut recs = vec![rec("a1", 1, "p1", "X", true)];
        recs.extend([rec("a2", 2, "p1", "X", true), rec("a3", 2, "p1", "X", false), rec("a4", 2, "p1", "X", false)]);
        recs.extend((0..4).map(|i| rec(&format!("b{i}"), 1, "p2", "X", false)));
        recs.extend([rec("c1", 2, "p3", "X", true), rec("c2", 2, "p3", "X", true)]);
        let ledger = PlayerLedger::build(&recs, "G", d(15));
        let cls: Vec<_> = ["p1", "p2", "p3"]
            .iter()
            .map(|p| PlayerClassification { player_id: p.to_string(), prior_user: true, reduction_pct: 0.0, group: Group::Control })
            .collect();
        let r = group_daily_means(&ledger, &cls, PlayerOutcome::WinRate, GroupBy::Treatment).unwrap();
        let expected = ((100.0 + 100.0 / 3.0) / 2.0 + 0.0 + 100.0) / 3.0;
        assert!((r.rows[0].pre_mean.unwrap() - expected).abs() < 1e-12);
        assert_eq!(r.rows[0].post_mean, None);
        let m = group_daily_means(&ledger, &cls, PlayerOutcome::Matches, GroupBy::Treatment).unwrap();
        assert!((m.rows[0].pre_mean.unwrap() - (2.0 + 4.0 + 2.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn player_panel_round_trip() {
        let ledger = ledger_with(&[("p", 60, 10, 30, 1)]);
        let (cls, _) = classify_players(&ledger, &ClassifyOptions::default()).unwrap();
        let panel = ledger.to_player_panel(&cls);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("players.csv");
        panel.write(&path).unwrap();
        assert_eq!(PlayerPanel::read(&path).unwrap(), panel);
    }
}
