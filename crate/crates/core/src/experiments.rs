//! Experiment orchestration behind the command-line tool: configuration,
//! dataset build, forecast evaluation, simulation campaigns and fleet sweeps.
//!
//! Every command writes CSV plus aligned text tables under the output
//! directory and is reproducible byte-for-byte from (config, seed).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    aggregate, ingest_trip_log, read_calendar, read_layout, read_weather, split_by_year,
    write_layout, write_trip_log, Calendar, DataError, Dataset, Role, StationIndex, TripRecord,
};
use crate::forecast::metrics::BoxStats;
use crate::forecast::{
    feature_importance, fit, forecast_days, pct_gap, Approach, DayForecast, Family, ForecastError,
    ForecastModel, ForecastTable, HyperGrid, HyperParams, ModelSpec,
};
use crate::model::{
    validate_layout, DayType, Fleet, HalfHourIndex, Layout, Shift, StationId, SLOTS_PER_DAY,
};
use crate::relocation::{GreedyPolicy, NoOpPolicy, Policy, PolicyConfig};
use crate::rng::mix;
use crate::scenario::{replay_scenario, Scenario};
use crate::sim::{
    aggregate_kpis, gap_from_reference, improvement_over_floor, simulate_day, write_kpi_csv,
    DayKpi, GroupReport, Grouping, SimError, SimOptions,
};
use crate::synth::{SynthConfig, SynthError, SyntheticWorld};

pub const PERFECT_RUN: &str = "perfect_information";
pub const BASELINE_RUN: &str = "no_relocation";
/// One-sided 95% normal quantile.
pub const Z_95: f64 = 1.645;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("model `{model}`: {source}")]
    Forecast {
        model: String,
        source: ForecastError,
    },
    #[error("run `{run}` on {date}: {source}")]
    Sim {
        run: String,
        date: NaiveDate,
        source: SimError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// 2 for input validation failures, 1 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Data(_) | ExperimentError::Synth(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn csv_bytes(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<Vec<u8>, ExperimentError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    Ok(buf)
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub layout: PathBuf,
    pub travel_time: PathBuf,
    pub travel_distance: PathBuf,
    pub trips: PathBuf,
    pub weather: PathBuf,
    pub calendar: PathBuf,
}

impl DataPaths {
    fn all(&self) -> [&PathBuf; 6] {
        [
            &self.layout,
            &self.travel_time,
            &self.travel_distance,
            &self.trips,
            &self.weather,
            &self.calendar,
        ]
    }
}

/// One forecasting model: a fitted family, an external `forecast.csv`, or
/// realized net demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub family: Option<Family>,
    #[serde(default)]
    pub approach: Approach,
    /// Tuning grid; defaults to the family's grid.
    #[serde(default)]
    pub grid: Option<HyperGrid>,
    /// A single hyperparameter point; overrides `grid`.
    #[serde(default)]
    pub params: Option<HyperParams>,
    #[serde(default)]
    pub reference_fallback: bool,
    #[serde(default)]
    pub forecast_csv: Option<PathBuf>,
    #[serde(default)]
    pub perfect: bool,
    /// Standard deviation of Gaussian noise added to every prediction.
    #[serde(default)]
    pub noise_sd: f64,
    /// Marks the company model used for gap-from-reference figures.
    #[serde(default)]
    pub reference: bool,
}

impl ModelConfig {
    pub fn fitted(name: &str, family: Family, approach: Approach) -> Self {
        Self {
            name: name.to_string(),
            family: Some(family),
            approach,
            grid: None,
            params: None,
            reference_fallback: false,
            forecast_csv: None,
            perfect: false,
            noise_sd: 0.0,
            reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftTimes {
    pub start: String,
    pub end: String,
}

impl ShiftTimes {
    fn new(start: &str, end: &str) -> Self {
        Self {
            start: start.into(),
            end: end.into(),
        }
    }

    pub fn shift(&self) -> Result<Shift, ExperimentError> {
        let secs = |s: &str| {
            NaiveTime::parse_from_str(s, "%H:%M")
                .map(|t| t.num_seconds_from_midnight())
                .map_err(|_| ExperimentError::Config(format!("bad time `{s}`, expected HH:MM")))
        };
        let (start, end) = (secs(&self.start)?, secs(&self.end)?);
        Shift::new(start, end).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub capacity: u32,
    pub morning: ShiftTimes,
    pub afternoon: ShiftTimes,
    pub saturday: ShiftTimes,
    pub morning_vehicles: usize,
    pub afternoon_vehicles: usize,
    pub saturday_vehicles: usize,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            capacity: 14,
            morning: ShiftTimes::new("07:00", "15:00"),
            afternoon: ShiftTimes::new("11:30", "19:30"),
            saturday: ShiftTimes::new("07:00", "13:00"),
            morning_vehicles: 2,
            afternoon_vehicles: 1,
            saturday_vehicles: 1,
        }
    }
}

/// Vehicle counts per shift template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Staffing {
    pub morning: usize,
    pub afternoon: usize,
    pub saturday: usize,
}

impl Staffing {
    pub const NONE: Staffing = Staffing {
        morning: 0,
        afternoon: 0,
        saturday: 0,
    };
}

impl FleetConfig {
    pub fn configured(&self) -> Staffing {
        Staffing {
            morning: self.morning_vehicles,
            afternoon: self.afternoon_vehicles,
            saturday: self.saturday_vehicles,
        }
    }

    /// Sweep cell staffing: Saturday keeps its configured vehicles only when
    /// the morning shift is staffed.
    pub fn sweep_cell(&self, morning: usize, afternoon: usize) -> Staffing {
        Staffing {
            morning,
            afternoon,
            saturday: if morning >= 1 {
                self.saturday_vehicles
            } else {
                0
            },
        }
    }

    /// Vehicles on duty for a day type. Sundays and holidays have none.
    pub fn fleet(&self, staffing: Staffing, day_type: DayType) -> Result<Fleet, ExperimentError> {
        Ok(match day_type {
            DayType::Working => {
                Fleet::uniform(0, staffing.morning, self.capacity, self.morning.shift()?).merged(
                    Fleet::uniform(
                        0,
                        staffing.afternoon,
                        self.capacity,
                        self.afternoon.shift()?,
                    ),
                )
            }
            DayType::Saturday => {
                Fleet::uniform(0, staffing.saturday, self.capacity, self.saturday.shift()?)
            }
            DayType::Sunday => Fleet::empty(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Days simulated: every day whose year carries this role.
    pub role: Role,
    /// Keep only the first this many days.
    pub max_days: Option<usize>,
    /// Report means over days with scheduled vehicles only.
    pub relocation_days_only: bool,
    pub perfect_information: bool,
    pub baseline: bool,
    pub audit: bool,
    pub per_slot: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            role: Role::Test,
            max_days: None,
            relocation_days_only: true,
            perfect_information: true,
            baseline: true,
            audit: false,
            per_slot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Largest morning + afternoon vehicle count.
    pub max_fleet: usize,
    /// Models to sweep; empty means all.
    pub models: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            max_fleet: 4,
            models: Vec::new(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    /// Year to role, e.g. `2017 = "validation"`. Empty: last year test, the
    /// one before validation, the rest training.
    #[serde(default)]
    pub split: BTreeMap<String, Role>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// A synthetic-data config with no models.
    pub fn synthetic(synth: SynthConfig, output_dir: PathBuf) -> Self {
        Self {
            output_dir,
            seed: 0,
            data: None,
            synthetic: Some(synth),
            split: BTreeMap::new(),
            models: Vec::new(),
            fleet: FleetConfig::default(),
            policy: PolicyConfig::default(),
            simulate: SimulateConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        rebase(&mut cfg.output_dir);
        if let Some(d) = &mut cfg.data {
            rebase(&mut d.layout);
            rebase(&mut d.travel_time);
            rebase(&mut d.travel_distance);
            rebase(&mut d.trips);
            rebase(&mut d.weather);
            rebase(&mut d.calendar);
        }
        for m in &mut cfg.models {
            if let Some(p) = &mut m.forecast_csv {
                rebase(p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return bad("set either [data] or [synthetic], not both".into()),
            (None, None) => return bad("one of [data] or [synthetic] is required".into()),
            (Some(d), None) => {
                let missing: Vec<String> = d
                    .all()
                    .iter()
                    .filter(|p| !p.is_file())
                    .map(|p| p.display().to_string())
                    .collect();
                if !missing.is_empty() {
                    return bad(format!("missing input files: {}", missing.join(", ")));
                }
            }
            (None, Some(s)) => s.validate()?,
        }
        for y in self.split.keys() {
            if y.parse::<i32>().is_err() {
                return bad(format!("split key `{y}` is not a year"));
            }
        }
        if self.models.is_empty() {
            return bad("at least one [[models]] entry is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return bad(format!("invalid model name `{}`", m.name));
            }
            if m.name == PERFECT_RUN || m.name == BASELINE_RUN {
                return bad(format!("model name `{}` is reserved", m.name));
            }
            if !names.insert(&m.name) {
                return bad(format!("duplicate model name `{}`", m.name));
            }
            let sources =
                m.family.is_some() as u8 + m.forecast_csv.is_some() as u8 + m.perfect as u8;
            if sources != 1 {
                return bad(format!(
                    "model `{}` needs exactly one of family, forecast_csv, perfect",
                    m.name
                ));
            }
            if let Some(p) = &m.forecast_csv {
                if !p.is_file() {
                    return bad(format!("model `{}`: missing {}", m.name, p.display()));
                }
            }
            if !(m.noise_sd.is_finite() && m.noise_sd >= 0.0) {
                return bad(format!("model `{}`: noise_sd must be ≥ 0", m.name));
            }
            if let Some(g) = &m.grid {
                if g.points().is_empty() {
                    return bad(format!("model `{}`: empty grid", m.name));
                }
            }
        }
        if self.models.iter().filter(|m| m.reference).count() > 1 {
            return bad("at most one model may set reference = true".into());
        }
        for name in &self.sweep.models {
            if !names.contains(name) {
                return bad(format!("sweep model `{name}` is not configured"));
            }
        }
        for s in [
            &self.fleet.morning,
            &self.fleet.afternoon,
            &self.fleet.saturday,
        ] {
            s.shift()?;
        }
        if self.fleet.capacity == 0 {
            return bad("fleet capacity must be positive".into());
        }
        if self.policy.lookahead_slots == 0 {
            return bad("policy lookahead_slots must be positive".into());
        }
        Ok(())
    }

    /// Index of the company model: the flagged one, else the first
    /// reference-day model.
    pub fn reference_model(&self) -> Option<usize> {
        self.models.iter().position(|m| m.reference).or_else(|| {
            self.models
                .iter()
                .position(|m| m.family == Some(Family::ReferenceDay))
        })
    }
}

// ---------------------------------------------------------------- inputs

/// Loaded and split inputs shared by every command.
pub struct Inputs {
    pub layout: Layout,
    pub index: StationIndex,
    pub dataset: Dataset,
    pub rejected_rows: usize,
    source: Source,
}

enum Source {
    Synthetic(Box<SyntheticWorld>),
    Trips(BTreeMap<NaiveDate, Vec<TripRecord>>),
}

fn default_plan(years: &[i32]) -> BTreeMap<i32, Role> {
    let n = years.len();
    years
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let role = if i + 1 == n {
                Role::Test
            } else if i + 2 == n {
                Role::Validation
            } else {
                Role::Train
            };
            (y, role)
        })
        .collect()
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let (layout, index, dataset, rejected_rows, source) = match (&cfg.data, &cfg.synthetic) {
            (_, Some(s)) => {
                let world = SyntheticWorld::generate(s)?;
                let dataset = world.dataset()?;
                let index = StationIndex::identity(world.layout.n_stations());
                (
                    world.layout.clone(),
                    index,
                    dataset,
                    0,
                    Source::Synthetic(Box::new(world)),
                )
            }
            (Some(p), None) => {
                let (layout, index) = read_layout(&p.layout, &p.travel_time, &p.travel_distance)?;
                let violations = validate_layout(&layout);
                if !violations.is_empty() {
                    let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                    return Err(ExperimentError::Config(format!(
                        "{}: {}",
                        p.layout.display(),
                        list.join("; ")
                    )));
                }
                let log = ingest_trip_log(&p.trips, &index)?;
                let calendar =
                    Calendar::join(&read_weather(&p.weather)?, &read_calendar(&p.calendar)?)?;
                let dataset = aggregate(&log.trips, layout.n_stations(), &calendar)?;
                let mut by_date: BTreeMap<NaiveDate, Vec<TripRecord>> = BTreeMap::new();
                for t in log.trips {
                    by_date.entry(t.withdrawal_time.date()).or_default().push(t);
                }
                (
                    layout,
                    index,
                    dataset,
                    log.rejected.len(),
                    Source::Trips(by_date),
                )
            }
            (None, None) => {
                return Err(ExperimentError::Config(
                    "one of [data] or [synthetic] is required".into(),
                ))
            }
        };
        let plan = if cfg.split.is_empty() {
            default_plan(&dataset.years())
        } else {
            cfg.split
                .iter()
                .map(|(y, r)| (y.parse().expect("validated year"), *r))
                .collect()
        };
        let dataset = split_by_year(dataset, &plan)?;
        Ok(Self {
            layout,
            index,
            dataset,
            rejected_rows,
            source,
        })
    }

    /// User trips of one dataset day.
    pub fn scenario(&self, day: usize) -> Scenario {
        match &self.source {
            Source::Synthetic(w) => w.scenario(day),
            Source::Trips(by_date) => {
                let ctx = self.dataset.day(day).clone();
                let trips = by_date.get(&ctx.date).map_or(&[][..], Vec::as_slice);
                replay_scenario(trips, ctx.date, ctx)
            }
        }
    }

    pub fn days_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.dataset.n_days())
            .filter(|&d| self.dataset.role_of_day(d) == Some(role))
            .collect()
    }

    pub fn simulation_days(&self, cfg: &SimulateConfig) -> Vec<usize> {
        let mut days = self.days_with_role(cfg.role);
        if let Some(k) = cfg.max_days {
            days.truncate(k);
        }
        days
    }
}

// ---------------------------------------------------------------- models

/// A forecasting model ready to produce forecast tables.
pub enum Predictor {
    Fitted(Box<ForecastModel>),
    Table(ForecastTable),
    Perfect,
}

pub struct PreparedModel {
    pub config: ModelConfig,
    pub predictor: Predictor,
    noise_seed: u64,
}

impl PreparedModel {
    /// Forecasts for `days`; missing cells stay missing.
    pub fn table(&self, data: &Dataset, days: &[usize]) -> ForecastTable {
        let mut table = match &self.predictor {
            Predictor::Fitted(m) => forecast_days(m, data, days),
            Predictor::Perfect => ForecastTable::perfect(data, days),
            Predictor::Table(t) => {
                let mut out = ForecastTable::new(data.n_stations());
                for &d in days {
                    for s in (0..data.n_stations()).map(StationId) {
                        for k in 0..SLOTS_PER_DAY {
                            let h = HalfHourIndex::from_parts(d as u64, k);
                            if let Some(v) = t.get(s, h) {
                                out.set(s, h, v);
                            }
                        }
                    }
                }
                out
            }
        };
        if self.config.noise_sd > 0.0 {
            let normal = Normal::new(0.0, self.config.noise_sd).expect("validated noise");
            for &d in days {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.noise_seed, d as u64]));
                for s in (0..data.n_stations()).map(StationId) {
                    for k in 0..SLOTS_PER_DAY {
                        let h = HalfHourIndex::from_parts(d as u64, k);
                        let e = normal.sample(&mut rng);
                        if let Some(v) = table.get(s, h) {
                            table.set(s, h, v + e);
                        }
                    }
                }
            }
        }
        table
    }
}

/// Fits or loads every configured model. Model `i` is seeded with
/// mix(seed, 1, i); its noise stream with mix(seed, 3, i).
pub fn prepare_models(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
) -> Result<Vec<PreparedModel>, ExperimentError> {
    let data = &inputs.dataset;
    cfg.models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let predictor = if m.perfect {
                Predictor::Perfect
            } else if let Some(path) = &m.forecast_csv {
                let f = std::fs::File::open(path).map_err(io_err(path))?;
                let t = ForecastTable::read_csv(data.n_stations(), std::io::BufReader::new(f))
                    .map_err(|source| ExperimentError::Forecast {
                        model: m.name.clone(),
                        source,
                    })?;
                Predictor::Table(t)
            } else {
                let family = m.family.expect("validated model source");
                let mut spec = ModelSpec::new(&m.name, family, m.approach)
                    .with_seed(mix(&[cfg.seed, 1, i as u64]));
                spec.reference_fallback = m.reference_fallback;
                if let Some(g) = &m.grid {
                    spec.grid = g.clone();
                }
                if let Some(p) = m.params {
                    spec = spec.with_params(p);
                }
                let model = fit(&spec, &data.view(Role::Train), &data.view(Role::Validation))
                    .map_err(|source| ExperimentError::Forecast {
                        model: m.name.clone(),
                        source,
                    })?;
                Predictor::Fitted(Box::new(model))
            };
            Ok(PreparedModel {
                config: m.clone(),
                predictor,
                noise_seed: mix(&[cfg.seed, 3, i as u64]),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- tables

/// Left-aligned first column, right-aligned rest, two-space gutters.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if i > 0 {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            } else {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

// ---------------------------------------------------------------- build-dataset

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleSize {
    pub role: Role,
    pub days: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSummary {
    pub stations: usize,
    pub days: usize,
    pub rows: usize,
    pub zero_rows: usize,
    pub zero_fill_fraction: f64,
    pub rejected_rows: usize,
    pub splits: Vec<RoleSize>,
}

impl BuildSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stations            {}", self.stations);
        let _ = writeln!(s, "days                {}", self.days);
        let _ = writeln!(s, "rows                {}", self.rows);
        let _ = writeln!(s, "zero rows           {}", self.zero_rows);
        let _ = writeln!(s, "zero-fill fraction  {:.6}", self.zero_fill_fraction);
        let _ = writeln!(s, "rejected trip rows  {}", self.rejected_rows);
        s.push('\n');
        let rows: Vec<Vec<String>> = self
            .splits
            .iter()
            .map(|r| vec![r.role.to_string(), r.days.to_string(), r.rows.to_string()])
            .collect();
        s.push_str(&text_table(&["role", "days", "rows"], &rows));
        s
    }
}

pub fn summarize(inputs: &Inputs) -> BuildSummary {
    let d = &inputs.dataset;
    let n = d.n_stations();
    let zero_rows = (0..n)
        .flat_map(|s| (0..d.n_slots() as u64).map(move |h| (StationId(s), HalfHourIndex(h))))
        .filter(|&(s, h)| d.withdrawals(s, h) == 0 && d.returns(s, h) == 0)
        .count();
    let splits = [Role::Train, Role::Validation, Role::Test, Role::Unused]
        .into_iter()
        .map(|role| {
            let days = inputs.days_with_role(role).len();
            RoleSize {
                role,
                days,
                rows: days * n * SLOTS_PER_DAY,
            }
        })
        .collect();
    BuildSummary {
        stations: n,
        days: d.n_days(),
        rows: d.len(),
        zero_rows,
        zero_fill_fraction: if d.is_empty() {
            0.0
        } else {
            zero_rows as f64 / d.len() as f64
        },
        rejected_rows: inputs.rejected_rows,
        splits,
    }
}

/// Writes `dataset.csv` and `summary.txt`; synthetic runs also write the
/// generated inputs under `inputs/` in the on-disk input formats.
pub fn cmd_build_dataset(cfg: &ExperimentConfig) -> Result<BuildSummary, ExperimentError> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let out = &cfg.output_dir;
    let path = out.join("dataset.csv");
    let bytes = csv_bytes(&path, |b| inputs.dataset.write_observations(b))?;
    write_out(&path, &bytes)?;
    let summary = summarize(&inputs);
    write_out(&out.join("summary.txt"), summary.to_text().as_bytes())?;
    if let Source::Synthetic(world) = &inputs.source {
        let dir = out.join("inputs");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_layout(&inputs.layout, &inputs.index, &dir)?;
        let cal = inputs.dataset.calendar();
        let p = dir.join("weather.csv");
        write_out(&p, &csv_bytes(&p, |b| cal.write_weather(b))?)?;
        let p = dir.join("calendar.csv");
        write_out(&p, &csv_bytes(&p, |b| cal.write_calendar(b))?)?;
        let p = dir.join("trips.csv");
        let trips = world.trips();
        write_out(
            &p,
            &csv_bytes(&p, |b| write_trip_log(b, &trips, &inputs.index))?,
        )?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------- eval-forecast

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub year: i32,
    pub role: Role,
    pub mse: Option<f64>,
    /// Percentage gap from the year's best MSE.
    pub gap_pct: Option<f64>,
    pub n: usize,
    pub excluded: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Best model on the last evaluated year, whose errors are broken down.
    pub best_model: Option<String>,
}

/// Fills `gap_pct` per year. A zero best MSE makes gaps undefined except for
/// the rows attaining it, which get 0.
pub fn fill_gaps(rows: &mut [EvalRow]) {
    let mut best: BTreeMap<i32, f64> = BTreeMap::new();
    for r in rows.iter() {
        if let Some(m) = r.mse {
            let b = best.entry(r.year).or_insert(m);
            *b = b.min(m);
        }
    }
    for r in rows.iter_mut() {
        r.gap_pct = match (r.mse, best.get(&r.year)) {
            (Some(m), Some(&b)) if m == b => Some(0.0),
            (Some(m), Some(&b)) => pct_gap(m, b).ok(),
            _ => None,
        };
    }
}

fn residual_groups(
    model: &PreparedModel,
    data: &Dataset,
    days: &[usize],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let table = model.table(data, days);
    let mut by_slot = vec![Vec::new(); SLOTS_PER_DAY];
    let mut by_dow = vec![Vec::new(); 7];
    for &d in days {
        let dow = data.day(d).date.weekday().num_days_from_monday() as usize;
        for s in (0..data.n_stations()).map(StationId) {
            for (k, slot_errors) in by_slot.iter_mut().enumerate() {
                let h = HalfHourIndex::from_parts(d as u64, k);
                if let Some(p) = table.get(s, h) {
                    let e = data.net_demand(s, h) as f64 - p;
                    slot_errors.push(e);
                    by_dow[dow].push(e);
                }
            }
        }
    }
    (by_slot, by_dow)
}

fn error_distribution_csv(key: &str, labels: &[String], groups: &[Vec<f64>]) -> String {
    let mut s = format!("{key},n,mean,min,q1,median,q3,max\n");
    for (label, g) in labels.iter().zip(groups) {
        match BoxStats::of(g) {
            Some(b) => {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                let _ = writeln!(
                    s,
                    "{label},{},{mean},{},{},{},{},{}",
                    g.len(),
                    b.min,
                    b.q1,
                    b.median,
                    b.q3,
                    b.max
                );
            }
            None => {
                let _ = writeln!(s, "{label},0,NA,NA,NA,NA,NA,NA");
            }
        }
    }
    s
}

/// MSE per model and evaluation year (validation and test years), with
/// gap from the best, error distributions for the best model, fitted model
/// files and split-count importances.
pub fn cmd_eval_forecast(cfg: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let data = &inputs.dataset;
    let models = prepare_models(cfg, &inputs)?;
    let out = &cfg.output_dir;
    let plan = data.plan().cloned().unwrap_or_default();
    let eval_years: Vec<(i32, Role)> = plan
        .iter()
        .filter(|(_, r)| matches!(r, Role::Validation | Role::Test))
        .map(|(&y, &r)| (y, r))
        .filter(|(y, _)| data.years().contains(y))
        .collect();
    let days_of_year = |y: i32| -> Vec<usize> {
        (0..data.n_days())
            .filter(|&d| data.day(d).date.year() == y)
            .collect()
    };
    let mut rows = Vec::new();
    for m in &models {
        for &(year, role) in &eval_years {
            let days = days_of_year(year);
            let table = m.table(data, &days);
            let (mut sse, mut n, mut excluded) = (0.0, 0usize, 0usize);
            for &d in &days {
                for s in (0..data.n_stations()).map(StationId) {
                    for k in 0..SLOTS_PER_DAY {
                        let h = HalfHourIndex::from_parts(d as u64, k);
                        match table.get(s, h) {
                            Some(p) => {
                                let e = data.net_demand(s, h) as f64 - p;
                                sse += e * e;
                                n += 1;
                            }
                            None => excluded += 1,
                        }
                    }
                }
            }
            let mse = (n > 0).then(|| sse / n as f64);
            let status = match (n, excluded) {
                (0, _) => "no predictions (insufficient history or coverage)".to_string(),
                (_, 0) => "ok".to_string(),
                (_, e) => format!("partial: {e} cells without prediction"),
            };
            rows.push(EvalRow {
                model: m.config.name.clone(),
                year,
                role,
                mse,
                gap_pct: None,
                n,
                excluded,
                status,
            });
        }
    }
    fill_gaps(&mut rows);

    let mut csv = String::from("model,year,role,mse,gap_pct,n,excluded,status\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},\"{}\"",
            r.model,
            r.year,
            r.role,
            r.mse.map_or("NA".into(), |v| v.to_string()),
            r.gap_pct.map_or("NA".into(), |v| v.to_string()),
            r.n,
            r.excluded,
            r.status
        );
    }
    write_out(&out.join("eval.csv"), csv.as_bytes())?;
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.year.to_string(),
                r.role.to_string(),
                fmt_opt(r.mse, 4),
                fmt_opt(r.gap_pct, 2),
                r.status.clone(),
            ]
        })
        .collect();
    write_out(
        &out.join("eval.txt"),
        text_table(
            &["model", "year", "role", "mse", "gap %", "status"],
            &table_rows,
        )
        .as_bytes(),
    )?;

    let last_year = eval_years.last().map(|&(y, _)| y);
    let best_model = last_year.and_then(|y| {
        rows.iter()
            .filter(|r| r.year == y && r.mse.is_some())
            .min_by(|a, b| a.mse.unwrap().total_cmp(&b.mse.unwrap()))
            .map(|r| r.model.clone())
    });
    if let (Some(name), Some(y)) = (&best_model, last_year) {
        let m = models
            .iter()
            .find(|m| &m.config.name == name)
            .expect("best model is configured");
        let (by_slot, by_dow) = residual_groups(m, data, &days_of_year(y));
        let slots: Vec<String> = (0..SLOTS_PER_DAY).map(|k| k.to_string()).collect();
        let dows: Vec<String> = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
            .iter()
            .map(|d| d.to_string())
            .collect();
        write_out(
            &out.join("errors_by_slot.csv"),
            error_distribution_csv("slot", &slots, &by_slot).as_bytes(),
        )?;
        write_out(
            &out.join("errors_by_dow.csv"),
            error_distribution_csv("day_of_week", &dows, &by_dow).as_bytes(),
        )?;
    }

    for m in &models {
        let Predictor::Fitted(model) = &m.predictor else {
            continue;
        };
        let path = out.join("models").join(format!("{}.json", m.config.name));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        model
            .save(&path)
            .map_err(|source| ExperimentError::Forecast {
                model: m.config.name.clone(),
                source,
            })?;
        if let Ok(imp) = feature_importance(model) {
            let mut s =
                String::from("feature,count,share,station_min,station_median,station_max\n");
            for (i, f) in imp.features.iter().enumerate() {
                let dist = imp.distribution.get(i);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    f.name(),
                    imp.counts[i],
                    imp.shares[i],
                    dist.map_or("NA".into(), |b| b.min.to_string()),
                    dist.map_or("NA".into(), |b| b.median.to_string()),
                    dist.map_or("NA".into(), |b| b.max.to_string()),
                );
            }
            write_out(
                &out.join(format!("importance_{}.csv", m.config.name)),
                s.as_bytes(),
            )?;
        }
    }
    Ok(EvalReport { rows, best_model })
}

// ---------------------------------------------------------------- simulate

/// Per-day KPIs of one run over the campaign days.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub staffing: Staffing,
    pub days: Vec<DayKpi>,
}

impl RunResult {
    /// Days counted in reports.
    pub fn reported(&self, relocation_days_only: bool) -> Vec<&DayKpi> {
        self.days
            .iter()
            .filter(|d| !relocation_days_only || d.date_ctx.day_type() != DayType::Sunday)
            .collect()
    }

    pub fn mean_total_missed(&self, relocation_days_only: bool) -> f64 {
        let days = self.reported(relocation_days_only);
        days.iter()
            .map(|d| d.counters.total_missed() as f64)
            .sum::<f64>()
            / days.len().max(1) as f64
    }

    /// Daily total missed requests on reported days, in date order.
    pub fn daily_totals(&self, relocation_days_only: bool) -> Vec<f64> {
        self.reported(relocation_days_only)
            .iter()
            .map(|d| d.counters.total_missed() as f64)
            .collect()
    }
}

/// Simulates every day of `days` with the given staffing and forecasts.
/// Day `d` runs with seed mix(seed, morning, afternoon, date ordinal).
#[allow(clippy::too_many_arguments)]
pub fn run_campaign(
    name: &str,
    inputs: &Inputs,
    fleet_cfg: &FleetConfig,
    policy_cfg: &PolicyConfig,
    staffing: Staffing,
    forecasts: Option<&ForecastTable>,
    days: &[usize],
    seed: u64,
    audit: bool,
) -> Result<RunResult, ExperimentError> {
    let n = inputs.layout.n_stations();
    let kpis = days
        .par_iter()
        .map(|&d| {
            let ctx = inputs.dataset.day(d);
            let scenario = inputs.scenario(d);
            let fleet = fleet_cfg.fleet(staffing, ctx.day_type())?;
            let sim_err = |source| ExperimentError::Sim {
                run: name.to_string(),
                date: ctx.date,
                source,
            };
            let day_forecast = match forecasts {
                Some(t) => t.day(d as u64).map_err(|e| match e {
                    ForecastError::Coverage { station, slot, .. } => {
                        sim_err(SimError::Coverage { station, slot })
                    }
                    other => ExperimentError::Forecast {
                        model: name.to_string(),
                        source: other,
                    },
                })?,
                None => DayForecast::zeros(n),
            };
            let run_seed = mix(&[
                seed,
                staffing.morning as u64,
                staffing.afternoon as u64,
                ctx.date.num_days_from_ce() as u64,
            ]);
            let mut greedy = GreedyPolicy::new(*policy_cfg);
            let mut noop = NoOpPolicy;
            let policy: &mut dyn Policy = if fleet.vehicles.is_empty() {
                &mut noop
            } else {
                &mut greedy
            };
            simulate_day(
                &inputs.layout,
                &fleet,
                &scenario,
                policy,
                &day_forecast,
                run_seed,
                SimOptions { audit },
            )
            .map_err(sim_err)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunResult {
        name: name.to_string(),
        staffing,
        days: kpis,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub runs: Vec<RunResult>,
    /// Run name, all-days aggregate.
    pub summary: Vec<(String, GroupReport)>,
    pub reference: Option<String>,
}

fn group_csv(runs: &[RunResult], grouping: Grouping, reloc_only: bool) -> String {
    let mut s = String::from(
        "run,group,days,missed_withdrawals,missed_returns,total_missed,total_km,relocated_bikes,\
         total_missed_min,total_missed_q1,total_missed_median,total_missed_q3,total_missed_max\n",
    );
    for r in runs {
        for g in aggregate_kpis(&r.days, grouping, reloc_only) {
            let m = &g.means;
            let b = &g.total_missed;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                g.group,
                g.days,
                m.missed_withdrawals,
                m.missed_returns,
                m.total_missed,
                m.total_km,
                m.relocated_bikes,
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max
            );
        }
    }
    s
}

/// Runs every model with the configured fleet, plus the zero-vehicle
/// baseline and the perfect-information floor when enabled.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimReport, ExperimentError> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let models = prepare_models(cfg, &inputs)?;
    let days = inputs.simulation_days(&cfg.simulate);
    if days.is_empty() {
        return Err(ExperimentError::Config(format!(
            "no days with role {} to simulate",
            cfg.simulate.role
        )));
    }
    let sc = &cfg.simulate;
    let staffing = cfg.fleet.configured();
    let mut runs = Vec::new();
    for m in &models {
        let table = m.table(&inputs.dataset, &days);
        runs.push(run_campaign(
            &m.config.name,
            &inputs,
            &cfg.fleet,
            &cfg.policy,
            staffing,
            Some(&table),
            &days,
            cfg.seed,
            sc.audit,
        )?);
    }
    if sc.perfect_information {
        let table = ForecastTable::perfect(&inputs.dataset, &days);
        runs.push(run_campaign(
            PERFECT_RUN,
            &inputs,
            &cfg.fleet,
            &cfg.policy,
            staffing,
            Some(&table),
            &days,
            cfg.seed,
            sc.audit,
        )?);
    }
    if sc.baseline {
        runs.push(run_campaign(
            BASELINE_RUN,
            &inputs,
            &cfg.fleet,
            &cfg.policy,
            Staffing::NONE,
            None,
            &days,
            cfg.seed,
            sc.audit,
        )?);
    }

    let out = cfg.output_dir.join("simulate");
    for r in &runs {
        let p = out.join(&r.name).join("kpi.csv");
        write_out(
            &p,
            &csv_bytes(&p, |b| write_kpi_csv(b, &r.days, sc.per_slot))?,
        )?;
    }
    let reloc = sc.relocation_days_only;
    let summary: Vec<(String, GroupReport)> = runs
        .iter()
        .filter_map(|r| {
            aggregate_kpis(&r.days, Grouping::None, reloc)
                .into_iter()
                .next()
                .map(|g| (r.name.clone(), g))
        })
        .collect();
    let reference = cfg
        .reference_model()
        .map(|i| cfg.models[i].name.clone())
        .filter(|n| summary.iter().any(|(r, _)| r == n));
    let mean_of = |name: &str| {
        summary
            .iter()
            .find(|(r, _)| r == name)
            .map(|(_, g)| g.means.total_missed)
    };
    let ref_mean = reference.as_deref().and_then(mean_of);
    let floor = mean_of(PERFECT_RUN);

    let mut csv = String::from(
        "run,days,missed_withdrawals,missed_returns,total_missed,total_km,relocated_bikes,\
         gap_from_reference_pct,improvement_over_floor_pct\n",
    );
    let mut rows = Vec::new();
    for (name, g) in &summary {
        let m = &g.means;
        let gap = ref_mean
            .filter(|&r| r > 0.0)
            .map(|r| gap_from_reference(m.total_missed, r));
        let net = match (ref_mean, floor) {
            (Some(r), Some(f)) if r > f => Some(improvement_over_floor(m.total_missed, r, f)),
            _ => None,
        };
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{},{},{}",
            g.days,
            m.missed_withdrawals,
            m.missed_returns,
            m.total_missed,
            m.total_km,
            m.relocated_bikes,
            gap.map_or("NA".into(), |v| v.to_string()),
            net.map_or("NA".into(), |v| v.to_string())
        );
        rows.push(vec![
            name.clone(),
            g.days.to_string(),
            format!("{:.2}", m.missed_withdrawals),
            format!("{:.2}", m.missed_returns),
            format!("{:.2}", m.total_missed),
            format!("{:.2}", m.total_km),
            format!("{:.2}", m.relocated_bikes),
            fmt_opt(gap, 2),
            fmt_opt(net, 2),
        ]);
    }
    write_out(&out.join("summary.csv"), csv.as_bytes())?;
    let mut report = format!(
        "{} days simulated, means over {}\n",
        days.len(),
        if reloc { "relocation days" } else { "all days" }
    );
    if let Some(r) = &reference {
        let _ = writeln!(report, "reference model: {r}");
    }
    report.push('\n');
    report.push_str(&text_table(
        &[
            "run",
            "days",
            "missed w",
            "missed r",
            "total missed",
            "km",
            "relocated",
            "gap %",
            "net-of-floor %",
        ],
        &rows,
    ));
    write_out(&out.join("report.txt"), report.as_bytes())?;
    write_out(
        &out.join("breakdown_month.csv"),
        group_csv(&runs, Grouping::Month, reloc).as_bytes(),
    )?;
    write_out(
        &out.join("breakdown_dow.csv"),
        group_csv(&runs, Grouping::DayOfWeek, reloc).as_bytes(),
    )?;
    Ok(SimReport {
        runs,
        summary,
        reference,
    })
}

// ---------------------------------------------------------------- fleet-sweep

/// Mean daily total missed requests per (morning, afternoon) vehicle count.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMatrix {
    pub model: String,
    pub max_fleet: usize,
    pub cells: BTreeMap<(usize, usize), RunResult>,
    pub relocation_days_only: bool,
}

impl SweepMatrix {
    pub fn mean(&self, morning: usize, afternoon: usize) -> Option<f64> {
        self.cells
            .get(&(morning, afternoon))
            .map(|r| r.mean_total_missed(self.relocation_days_only))
    }

    pub fn means(&self) -> BTreeMap<(usize, usize), f64> {
        self.cells
            .iter()
            .map(|(&c, r)| (c, r.mean_total_missed(self.relocation_days_only)))
            .collect()
    }

    pub fn best_for_size(&self, size: usize) -> Option<(usize, usize)> {
        best_for_size(&self.means(), size)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("morning,afternoon,fleet_size,mean_total_missed,best\n");
        for &(m, a) in self.cells.keys() {
            let best = self.best_for_size(m + a) == Some((m, a));
            let _ = writeln!(
                s,
                "{m},{a},{},{},{}",
                m + a,
                self.mean(m, a).expect("cell present"),
                best as u8
            );
        }
        s
    }

    /// Lower-triangle matrix, morning rows and afternoon columns, `*` on the
    /// best cell of each fleet size.
    pub fn to_text(&self) -> String {
        let k = self.max_fleet;
        let headers: Vec<String> = std::iter::once("morning \\ afternoon".to_string())
            .chain((0..=k).map(|a| a.to_string()))
            .collect();
        let rows: Vec<Vec<String>> = (0..=k)
            .map(|m| {
                std::iter::once(m.to_string())
                    .chain((0..=k).map(|a| {
                        if m + a > k {
                            return String::new();
                        }
                        let v = self.mean(m, a).expect("cell present");
                        let star = if self.best_for_size(m + a) == Some((m, a)) {
                            "*"
                        } else {
                            " "
                        };
                        format!("{v:.2}{star}")
                    }))
                    .collect()
            })
            .collect();
        let h: Vec<&str> = headers.iter().map(String::as_str).collect();
        format!("model: {}\n{}", self.model, text_table(&h, &rows))
    }
}

/// Lowest-mean cell with `m + a = size`; ties go to fewer morning vehicles.
pub fn best_for_size(means: &BTreeMap<(usize, usize), f64>, size: usize) -> Option<(usize, usize)> {
    (0..=size)
        .filter_map(|m| means.get(&(m, size - m)).map(|&v| ((m, size - m), v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
}

/// Simulates every (m, a) with m + a ≤ max_fleet for each swept model.
pub fn cmd_fleet_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepMatrix>, ExperimentError> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let models = prepare_models(cfg, &inputs)?;
    let days = inputs.simulation_days(&cfg.simulate);
    if days.is_empty() {
        return Err(ExperimentError::Config(format!(
            "no days with role {} to simulate",
            cfg.simulate.role
        )));
    }
    let k = cfg.sweep.max_fleet;
    let mut out = Vec::new();
    for m in models
        .iter()
        .filter(|m| cfg.sweep.models.is_empty() || cfg.sweep.models.contains(&m.config.name))
    {
        let table = m.table(&inputs.dataset, &days);
        let mut cells = BTreeMap::new();
        for morning in 0..=k {
            for afternoon in 0..=k - morning {
                let staffing = cfg.fleet.sweep_cell(morning, afternoon);
                let run = run_campaign(
                    &m.config.name,
                    &inputs,
                    &cfg.fleet,
                    &cfg.policy,
                    staffing,
                    Some(&table),
                    &days,
                    cfg.seed,
                    cfg.simulate.audit,
                )?;
                cells.insert((morning, afternoon), run);
            }
        }
        let matrix = SweepMatrix {
            model: m.config.name.clone(),
            max_fleet: k,
            cells,
            relocation_days_only: cfg.simulate.relocation_days_only,
        };
        let dir = cfg.output_dir.join("sweep");
        write_out(
            &dir.join(format!("sweep_{}.csv", matrix.model)),
            matrix.to_csv().as_bytes(),
        )?;
        write_out(
            &dir.join(format!("sweep_{}.txt", matrix.model)),
            matrix.to_text().as_bytes(),
        )?;
        out.push(matrix);
    }
    Ok(out)
}

// ---------------------------------------------------------------- statistics

/// One-sided paired comparison of daily values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub std_err: f64,
    /// Lower 95% confidence bound on mean(lhs − rhs); positive means lhs is
    /// significantly worse.
    pub lower: f64,
}

impl PairedTest {
    /// `lhs` is not significantly worse than `rhs` at 95%.
    pub fn holds(&self) -> bool {
        self.lower <= 0.0
    }
}

/// Tests mean(lhs) ≤ mean(rhs) on paired observations.
pub fn paired_not_worse(lhs: &[f64], rhs: &[f64]) -> PairedTest {
    assert_eq!(lhs.len(), rhs.len(), "paired samples differ in length");
    let n = lhs.len();
    assert!(n >= 2, "paired test needs at least two pairs");
    let diffs: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let std_err = (var / n as f64).sqrt();
    PairedTest {
        n,
        mean_diff: mean,
        std_err,
        lower: mean - Z_95 * std_err,
    }
}
