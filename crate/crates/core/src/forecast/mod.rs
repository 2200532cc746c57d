//! Net-demand forecasters: 52-week lag, reference-day profile, and tree
//! models (single tree, random forest, gradient boosting) fitted globally or
//! per station.

pub mod baseline;
pub mod ensemble;
pub mod metrics;
pub mod tree;

use crate::data::{DataView, Dataset};
use crate::model::{DayContext, Feature, FeatureVector, HalfHourIndex, StationId, SLOTS_PER_DAY};
use baseline::{LagTable, ReferenceKey, ReferenceTable};
use ensemble::{BoostParams, Boosted, Forest, ForestParams};
use metrics::BoxStats;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;
use tree::{numeric_edges, GrowParams, RegressionTree, TrainMatrix, DEFAULT_MAX_BINS};

pub use metrics::{mse, pct_gap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("length mismatch: {pred} predictions vs {actual} actuals")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("best value must be positive, got {0}")]
    NonPositiveBest(f64),
    #[error("insufficient history for half-hour {}", .0 .0)]
    InsufficientHistory(HalfHourIndex),
    #[error("reference table has no entry for {0}")]
    MissingReference(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("station {0} has no observations in the training set")]
    StationAbsent(StationId),
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("model `{0}` is not a tree-family model")]
    NotTreeModel(String),
    #[error("model `{0}` is not a reference-day model")]
    NotReferenceDay(String),
    #[error("forecast missing for day {day}, station {station}, slot {slot}")]
    Coverage {
        day: u64,
        station: StationId,
        slot: usize,
    },
    #[error("{0}")]
    Io(String),
    #[error("malformed forecast file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    HistoricalShifted,
    ReferenceDay,
    Cart,
    RandomForest,
    GradientBoosting,
}

impl Family {
    pub fn is_tree(self) -> bool {
        matches!(
            self,
            Family::Cart | Family::RandomForest | Family::GradientBoosting
        )
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "historical_shifted" | "hs" => Family::HistoricalShifted,
            "reference_day" | "cm" => Family::ReferenceDay,
            "cart" => Family::Cart,
            "random_forest" | "rf" => Family::RandomForest,
            "gradient_boosting" | "gbm" => Family::GradientBoosting,
            other => return Err(format!("unknown model family `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// One model for all stations, station id as a feature.
    #[default]
    Global,
    /// One model per station.
    Local,
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub subsample_fraction: f64,
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub max_bins: usize,
}

/// Candidate values per hyperparameter. Points are enumerated with
/// `n_estimators` outermost, then `max_depth`, `min_samples_leaf`,
/// `learning_rate`, `subsample_fraction`, `feature_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub subsample_fraction: Vec<f64>,
    pub feature_fraction: Vec<f64>,
    pub bootstrap: bool,
    pub max_bins: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self::for_family(Family::GradientBoosting)
    }
}

impl HyperGrid {
    pub fn for_family(family: Family) -> Self {
        let base = Self {
            n_estimators: vec![1],
            max_depth: vec![4, 6, 8],
            min_samples_leaf: vec![1],
            learning_rate: vec![1.0],
            subsample_fraction: vec![1.0],
            feature_fraction: vec![1.0],
            bootstrap: false,
            max_bins: DEFAULT_MAX_BINS,
        };
        match family {
            Family::RandomForest => Self {
                n_estimators: vec![50, 100, 200],
                feature_fraction: vec![0.5],
                bootstrap: true,
                ..base
            },
            Family::GradientBoosting => Self {
                n_estimators: vec![50, 100, 200],
                learning_rate: vec![0.05, 0.1],
                subsample_fraction: vec![0.8, 1.0],
                feature_fraction: vec![0.8, 1.0],
                ..base
            },
            Family::Cart | Family::HistoricalShifted | Family::ReferenceDay => base,
        }
    }

    pub fn single(p: HyperParams) -> Self {
        Self {
            n_estimators: vec![p.n_estimators],
            max_depth: vec![p.max_depth],
            min_samples_leaf: vec![p.min_samples_leaf],
            learning_rate: vec![p.learning_rate],
            subsample_fraction: vec![p.subsample_fraction],
            feature_fraction: vec![p.feature_fraction],
            bootstrap: p.bootstrap,
            max_bins: p.max_bins,
        }
    }

    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                for &min_samples_leaf in &self.min_samples_leaf {
                    for &learning_rate in &self.learning_rate {
                        for &subsample_fraction in &self.subsample_fraction {
                            for &feature_fraction in &self.feature_fraction {
                                out.push(HyperParams {
                                    n_estimators,
                                    max_depth,
                                    min_samples_leaf,
                                    learning_rate,
                                    subsample_fraction,
                                    feature_fraction,
                                    bootstrap: self.bootstrap,
                                    max_bins: self.max_bins,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    /// Ignored by the lag and reference-day families.
    #[serde(default)]
    pub approach: Approach,
    pub grid: HyperGrid,
    #[serde(default)]
    pub seed: u64,
    /// Reference-day only: serve missing cells from the nearest cell of the
    /// same day type instead of failing.
    #[serde(default)]
    pub reference_fallback: bool,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, family: Family, approach: Approach) -> Self {
        Self {
            name: name.into(),
            family,
            approach,
            grid: HyperGrid::for_family(family),
            seed: 0,
            reference_fallback: false,
        }
    }

    pub fn with_params(mut self, p: HyperParams) -> Self {
        self.grid = HyperGrid::single(p);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeModel {
    Cart(RegressionTree),
    Forest(Forest),
    Boosted(Boosted),
}

impl TreeModel {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        match self {
            TreeModel::Cart(t) => t.predict(x),
            TreeModel::Forest(f) => f.predict(x),
            TreeModel::Boosted(b) => b.predict(x),
        }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        match self {
            TreeModel::Cart(t) => std::slice::from_ref(t),
            TreeModel::Forest(f) => f.trees(),
            TreeModel::Boosted(b) => b.trees(),
        }
    }

    fn fit(family: Family, m: &TrainMatrix, y: &[f64], p: &HyperParams, seed: u64) -> Self {
        let cols: Vec<usize> = (0..m.n_columns()).collect();
        match family {
            Family::Cart => {
                let mut rows: Vec<u32> = (0..m.n_rows() as u32).collect();
                TreeModel::Cart(RegressionTree::fit(
                    m,
                    y,
                    &mut rows,
                    &cols,
                    GrowParams {
                        max_depth: p.max_depth,
                        min_samples_leaf: p.min_samples_leaf,
                        features_per_node: None,
                    },
                    None,
                ))
            }
            Family::RandomForest => TreeModel::Forest(Forest::fit(
                m,
                y,
                &cols,
                ForestParams {
                    n_estimators: p.n_estimators,
                    max_depth: p.max_depth,
                    min_samples_leaf: p.min_samples_leaf,
                    feature_fraction: p.feature_fraction,
                    bootstrap: p.bootstrap,
                },
                seed,
            )),
            Family::GradientBoosting => TreeModel::Boosted(Boosted::fit(
                m,
                y,
                &cols,
                BoostParams {
                    n_estimators: p.n_estimators,
                    max_depth: p.max_depth,
                    min_samples_leaf: p.min_samples_leaf,
                    learning_rate: p.learning_rate,
                    subsample_fraction: p.subsample_fraction,
                    feature_fraction: p.feature_fraction,
                },
                seed,
            )),
            Family::HistoricalShifted | Family::ReferenceDay => {
                unreachable!("not a tree family")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    HistoricalShifted(LagTable),
    ReferenceDay(ReferenceTable),
    Global(TreeModel),
    Local(Vec<TreeModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub spec: ModelSpec,
    /// Selected grid point, for tree models.
    pub params: Option<HyperParams>,
    /// Validation MSE of the selected point, when a validation set was given.
    pub validation_mse: Option<f64>,
    pub fitted: Fitted,
}

/// Features a model sees: local models drop the station id.
pub fn model_features(approach: Approach) -> Vec<Feature> {
    Feature::ALL
        .into_iter()
        .filter(|&f| approach == Approach::Global || f != Feature::Station)
        .collect()
}

/// Numeric features are all day-level, so their bin edges come from the days alone.
fn day_level_edges(view: &DataView<'_>, features: &[Feature], max_bins: usize) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|&f| {
            if f.is_categorical() {
                Vec::new()
            } else {
                let values = view
                    .days
                    .iter()
                    .map(|&d| FeatureVector::new(view.data.day(d), 0, StationId(0)).get(f))
                    .collect();
                numeric_edges(values, max_bins)
            }
        })
        .collect()
}

fn design(
    view: &DataView<'_>,
    stations: &[StationId],
    features: &[Feature],
    edges: Vec<Vec<f64>>,
) -> (TrainMatrix, Vec<f64>) {
    let data = view.data;
    let rows = || {
        stations
            .iter()
            .flat_map(move |&s| view.half_hours().map(move |h| (s, h)))
    };
    let n = stations.len() * view.days.len() * SLOTS_PER_DAY;
    let m = TrainMatrix::from_rows_with_edges(
        rows().map(|(s, h)| data.features(s, h)),
        n,
        features,
        edges,
    );
    let y = rows().map(|(s, h)| data.net_demand(s, h) as f64).collect();
    (m, y)
}

fn station_seed(seed: u64, station: StationId) -> u64 {
    crate::rng::mix(&[seed, station.0 as u64 + 1])
}

/// Fits `spec` on `train`, choosing the grid point with the lowest MSE on
/// `valid` (first point on ties; first point when `valid` is empty).
pub fn fit(
    spec: &ModelSpec,
    train: &DataView<'_>,
    valid: &DataView<'_>,
) -> Result<ForecastModel, ForecastError> {
    if train.is_empty() {
        return Err(ForecastError::EmptyTraining);
    }
    let fitted_plain = |fitted| ForecastModel {
        spec: spec.clone(),
        params: None,
        validation_mse: None,
        fitted,
    };
    match spec.family {
        Family::HistoricalShifted => {
            return Ok(fitted_plain(Fitted::HistoricalShifted(
                LagTable::from_views(&[train, valid]),
            )))
        }
        Family::ReferenceDay => {
            return Ok(fitted_plain(Fitted::ReferenceDay(ReferenceTable::fit(
                train,
                spec.reference_fallback,
            ))))
        }
        _ => {}
    }

    let data = train.data;
    let n = data.n_stations();
    if spec.approach == Approach::Local {
        for s in (0..n).map(StationId) {
            let active = train
                .half_hours()
                .any(|h| data.withdrawals(s, h) > 0 || data.returns(s, h) > 0);
            if !active {
                return Err(ForecastError::StationAbsent(s));
            }
        }
    }

    let features = model_features(spec.approach);
    let points = spec.grid.points();
    let mut best: Option<ForecastModel> = None;
    for p in points {
        let edges = day_level_edges(train, &features, p.max_bins);
        let fitted = match spec.approach {
            Approach::Global => {
                let stations: Vec<StationId> = (0..n).map(StationId).collect();
                let (m, y) = design(train, &stations, &features, edges);
                Fitted::Global(TreeModel::fit(spec.family, &m, &y, &p, spec.seed))
            }
            Approach::Local => Fitted::Local(
                (0..n)
                    .into_par_iter()
                    .map(|s| {
                        let s = StationId(s);
                        let (m, y) = design(train, &[s], &features, edges.clone());
                        TreeModel::fit(spec.family, &m, &y, &p, station_seed(spec.seed, s))
                    })
                    .collect(),
            ),
        };
        let mut candidate = ForecastModel {
            spec: spec.clone(),
            params: Some(p),
            validation_mse: None,
            fitted,
        };
        if valid.is_empty() {
            return Ok(candidate);
        }
        candidate.validation_mse = evaluate(&candidate, valid).mse;
        let better = match (&best, candidate.validation_mse) {
            (None, _) => true,
            (Some(b), Some(m)) => b.validation_mse.is_none_or(|bm| m < bm),
            (Some(_), None) => false,
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or(ForecastError::EmptyTraining)
}

impl ForecastModel {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Real-valued net-demand forecast for one station and half-hour.
    pub fn predict(
        &self,
        x: &FeatureVector,
        station: StationId,
        h: HalfHourIndex,
    ) -> Result<f64, ForecastError> {
        match &self.fitted {
            Fitted::HistoricalShifted(lag) => lag.predict(station, h),
            Fitted::ReferenceDay(table) => {
                let key = ReferenceKey {
                    day_type: x.day_type(),
                    month: x.get(Feature::Month) as u32,
                    rainy: x.get(Feature::Rain) != 0.0,
                };
                table.predict_key(key, station, h.slot())
            }
            Fitted::Global(m) => Ok(m.predict(x)),
            Fitted::Local(ms) => ms
                .get(station.0)
                .map(|m| m.predict(x))
                .ok_or(ForecastError::UnknownStation(station)),
        }
    }

    pub fn predict_reference_day(
        &self,
        ctx: &DayContext,
        station: StationId,
        slot: usize,
    ) -> Result<f64, ForecastError> {
        match &self.fitted {
            Fitted::ReferenceDay(t) => t.predict(ctx, station, slot),
            _ => Err(ForecastError::NotReferenceDay(self.spec.name.clone())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let json = serde_json::to_vec(self).map_err(|e| ForecastError::Format(e.to_string()))?;
        std::fs::write(path, json)
            .map_err(|e| ForecastError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ForecastError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| ForecastError::Format(e.to_string()))
    }
}

/// One day's forecasts, indexed by station and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DayForecast {
    n_stations: usize,
    values: Vec<f64>,
}

impl DayForecast {
    pub fn new(n_stations: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_stations * SLOTS_PER_DAY);
        Self { n_stations, values }
    }

    pub fn zeros(n_stations: usize) -> Self {
        Self::new(n_stations, vec![0.0; n_stations * SLOTS_PER_DAY])
    }

    pub fn from_fn(n_stations: usize, mut f: impl FnMut(StationId, usize) -> f64) -> Self {
        let values = (0..n_stations)
            .flat_map(|s| (0..SLOTS_PER_DAY).map(move |k| (s, k)))
            .map(|(s, k)| f(StationId(s), k))
            .collect();
        Self::new(n_stations, values)
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn get(&self, s: StationId, slot: usize) -> f64 {
        self.values[s.0 * SLOTS_PER_DAY + slot]
    }

    /// First (station, slot) without a finite forecast.
    pub fn first_gap(&self) -> Option<(StationId, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (StationId(i / SLOTS_PER_DAY), i % SLOTS_PER_DAY))
    }

    pub fn map(&self, mut f: impl FnMut(StationId, usize, f64) -> f64) -> Self {
        Self::from_fn(self.n_stations, |s, k| f(s, k, self.get(s, k)))
    }
}

/// Forecasts for a set of days; missing cells are NaN.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastTable {
    n_stations: usize,
    days: BTreeMap<u64, Vec<f64>>,
}

impl ForecastTable {
    pub fn new(n_stations: usize) -> Self {
        Self {
            n_stations,
            days: BTreeMap::new(),
        }
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn insert_day(&mut self, day: u64, f: DayForecast) {
        assert_eq!(f.n_stations, self.n_stations);
        self.days.insert(day, f.values);
    }

    pub fn set(&mut self, s: StationId, h: HalfHourIndex, v: f64) {
        let n = self.n_stations;
        let row = self
            .days
            .entry(h.day())
            .or_insert_with(|| vec![f64::NAN; n * SLOTS_PER_DAY]);
        row[s.0 * SLOTS_PER_DAY + h.slot()] = v;
    }

    pub fn get(&self, s: StationId, h: HalfHourIndex) -> Option<f64> {
        self.days
            .get(&h.day())
            .map(|r| r[s.0 * SLOTS_PER_DAY + h.slot()])
            .filter(|v| v.is_finite())
    }

    /// Complete forecast for `day`, or the first uncovered cell.
    pub fn day(&self, day: u64) -> Result<DayForecast, ForecastError> {
        let row = self.days.get(&day).ok_or(ForecastError::Coverage {
            day,
            station: StationId(0),
            slot: 0,
        })?;
        let f = DayForecast::new(self.n_stations, row.clone());
        match f.first_gap() {
            Some((station, slot)) => Err(ForecastError::Coverage { day, station, slot }),
            None => Ok(f),
        }
    }

    pub fn days(&self) -> impl Iterator<Item = u64> + '_ {
        self.days.keys().copied()
    }

    /// Realized net demand on the given days.
    pub fn perfect(data: &Dataset, days: &[usize]) -> Self {
        let mut t = Self::new(data.n_stations());
        for &d in days {
            t.insert_day(
                d as u64,
                DayForecast::from_fn(data.n_stations(), |s, k| {
                    data.net_demand(s, HalfHourIndex::from_parts(d as u64, k)) as f64
                }),
            );
        }
        t
    }

    /// `station,hh_index,prediction`, ordered by station then half-hour;
    /// missing cells are omitted.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "station,hh_index,prediction")?;
        for s in 0..self.n_stations {
            for (&day, row) in &self.days {
                for k in 0..SLOTS_PER_DAY {
                    let v = row[s * SLOTS_PER_DAY + k];
                    if v.is_finite() {
                        writeln!(w, "{},{},{}", s, HalfHourIndex::from_parts(day, k).0, v)?;
                    }
                }
            }
        }
        w.flush()
    }

    pub fn read_csv<R: BufRead>(n_stations: usize, r: R) -> Result<Self, ForecastError> {
        let mut t = Self::new(n_stations);
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ForecastError::Io(e.to_string()))?;
            if i == 0 {
                if line.trim() != "station,hh_index,prediction" {
                    return Err(ForecastError::Format(format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = || ForecastError::Format(format!("line {}: `{line}`", i + 1));
            let mut f = line.split(',').map(str::trim);
            let s: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let h: u64 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let v: f64 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if s >= n_stations {
                return Err(ForecastError::UnknownStation(StationId(s)));
            }
            t.set(StationId(s), HalfHourIndex(h), v);
        }
        Ok(t)
    }
}

/// Predicts every station and slot of `days`. Cells the model cannot predict
/// are left missing.
pub fn forecast_days(model: &ForecastModel, data: &Dataset, days: &[usize]) -> ForecastTable {
    let n = data.n_stations();
    let rows: Vec<(u64, Vec<f64>)> = days
        .par_iter()
        .map(|&d| {
            let ctx = data.day(d);
            let row = (0..n)
                .flat_map(|s| (0..SLOTS_PER_DAY).map(move |k| (s, k)))
                .map(|(s, k)| {
                    let s = StationId(s);
                    let h = HalfHourIndex::from_parts(d as u64, k);
                    model
                        .predict(&FeatureVector::new(ctx, k, s), s, h)
                        .unwrap_or(f64::NAN)
                })
                .collect();
            (d as u64, row)
        })
        .collect();
    let mut t = ForecastTable::new(n);
    t.days.extend(rows);
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub station: StationId,
    pub h: HalfHourIndex,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `None` when no cell could be predicted.
    pub mse: Option<f64>,
    pub n: usize,
    /// Cells without a prediction (lag history before the data).
    pub excluded: usize,
}

/// Predicted cells of a view paired with realized net demand.
pub fn residuals(model: &ForecastModel, view: &DataView<'_>) -> (Vec<Residual>, usize) {
    let table = forecast_days(model, view.data, &view.days);
    let mut out = Vec::with_capacity(view.n_rows());
    let mut excluded = 0;
    for s in (0..view.data.n_stations()).map(StationId) {
        for h in view.half_hours() {
            match table.get(s, h) {
                Some(p) => out.push(Residual {
                    station: s,
                    h,
                    actual: view.data.net_demand(s, h) as f64,
                    predicted: p,
                }),
                None => excluded += 1,
            }
        }
    }
    (out, excluded)
}

pub fn evaluate(model: &ForecastModel, view: &DataView<'_>) -> Evaluation {
    let (res, excluded) = residuals(model, view);
    let pred: Vec<f64> = res.iter().map(|r| r.predicted).collect();
    let actual: Vec<f64> = res.iter().map(|r| r.actual).collect();
    Evaluation {
        mse: mse(&pred, &actual).ok(),
        n: res.len(),
        excluded,
    }
}

/// Split-count importance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub features: Vec<Feature>,
    /// Total splits per feature over all trees (and all stations).
    pub counts: Vec<u64>,
    /// `counts` normalized to sum 1 (all zero when there are no splits).
    pub shares: Vec<f64>,
    /// Local models: normalized shares per station with at least one split.
    pub per_station: Vec<(StationId, Vec<f64>)>,
    /// Local models: cross-station distribution of each feature's share.
    pub distribution: Vec<BoxStats>,
}

impl ImportanceReport {
    pub fn share(&self, f: Feature) -> f64 {
        self.features
            .iter()
            .position(|&g| g == f)
            .map_or(0.0, |i| self.shares[i])
    }
}

fn count_splits(features: &[Feature], trees: &[RegressionTree]) -> Vec<u64> {
    let mut counts = vec![0u64; features.len()];
    for t in trees {
        for f in t.split_counts() {
            if let Some(i) = features.iter().position(|&g| g == f) {
                counts[i] += 1;
            }
        }
    }
    counts
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        })
        .collect()
}

pub fn feature_importance(model: &ForecastModel) -> Result<ImportanceReport, ForecastError> {
    let features = model_features(model.spec.approach);
    match &model.fitted {
        Fitted::Global(m) => {
            let counts = count_splits(&features, m.trees());
            Ok(ImportanceReport {
                shares: normalize(&counts),
                features,
                counts,
                per_station: Vec::new(),
                distribution: Vec::new(),
            })
        }
        Fitted::Local(ms) => {
            let per: Vec<Vec<u64>> = ms
                .iter()
                .map(|m| count_splits(&features, m.trees()))
                .collect();
            let counts: Vec<u64> = (0..features.len())
                .map(|i| per.iter().map(|c| c[i]).sum())
                .collect();
            let per_station: Vec<(StationId, Vec<f64>)> = per
                .iter()
                .enumerate()
                .filter(|(_, c)| c.iter().any(|&v| v > 0))
                .map(|(s, c)| (StationId(s), normalize(c)))
                .collect();
            let distribution = (0..features.len())
                .filter_map(|i| {
                    let v: Vec<f64> = per_station.iter().map(|(_, sh)| sh[i]).collect();
                    BoxStats::of(&v)
                })
                .collect();
            Ok(ImportanceReport {
                shares: normalize(&counts),
                features,
                counts,
                per_station,
                distribution,
            })
        }
        _ => Err(ForecastError::NotTreeModel(model.spec.name.clone())),
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::HistoricalShifted => "historical_shifted",
            Family::ReferenceDay => "reference_day",
            Family::Cart => "cart",
            Family::RandomForest => "random_forest",
            Family::GradientBoosting => "gradient_boosting",
        })
    }
}
