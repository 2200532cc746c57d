//! Domain types shared across the twin: stations, the travel graph, vehicles
//! and shifts, and half-hour time indexing.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Half-hour slots in one day.
pub const SLOTS_PER_DAY: usize = 48;
/// Length of one slot in seconds.
pub const SLOT_SECONDS: u32 = 1800;
pub const DAY_SECONDS: u32 = 86_400;
/// 52 weeks expressed in half-hours (364 days, leap-day drift ignored).
pub const LAG_52_WEEKS: u64 = 364 * SLOTS_PER_DAY as u64;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("pre-epoch timestamp {timestamp} (epoch {epoch})")]
    PreEpoch {
        timestamp: NaiveDateTime,
        epoch: NaiveDate,
    },
    #[error("invalid shift [{start}, {end}): need 0 <= start < end <= 86400")]
    InvalidShift { start: u32, end: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub usize);

impl StationId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub capacity: u32,
    pub initial_stock: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub elevation_m: f64,
}

/// Pairwise travel times (seconds) and distances (meters) between stations,
/// with the depot as the last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelGraph {
    nodes: usize,
    time_s: Vec<f64>,
    distance_m: Vec<f64>,
}

impl TravelGraph {
    /// Builds a graph from row-major square matrices. The dimension is taken
    /// from the time matrix; a mismatching distance matrix is reported by
    /// [`validate_layout`].
    pub fn from_matrices(time_s: Vec<Vec<f64>>, distance_m: Vec<Vec<f64>>) -> Self {
        let nodes = time_s.len();
        Self {
            nodes,
            time_s: time_s.into_iter().flatten().collect(),
            distance_m: distance_m.into_iter().flatten().collect(),
        }
    }

    pub fn from_fn(nodes: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut time_s = Vec::with_capacity(nodes * nodes);
        let mut distance_m = Vec::with_capacity(nodes * nodes);
        for i in 0..nodes {
            for j in 0..nodes {
                let (t, d) = if i == j { (0.0, 0.0) } else { f(i, j) };
                time_s.push(t);
                distance_m.push(d);
            }
        }
        Self {
            nodes,
            time_s,
            distance_m,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn time(&self, from: usize, to: usize) -> f64 {
        self.time_s[from * self.nodes + to]
    }

    pub fn distance(&self, from: usize, to: usize) -> f64 {
        self.distance_m[from * self.nodes + to]
    }

    pub fn time_row(&self, from: usize) -> &[f64] {
        &self.time_s[from * self.nodes..(from + 1) * self.nodes]
    }

    pub fn distance_row(&self, from: usize) -> &[f64] {
        &self.distance_m[from * self.nodes..(from + 1) * self.nodes]
    }

    fn is_square(&self) -> bool {
        self.time_s.len() == self.nodes * self.nodes
            && self.distance_m.len() == self.nodes * self.nodes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub stations: Vec<Station>,
    pub graph: TravelGraph,
}

impl Layout {
    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Graph node of the depot.
    pub fn depot(&self) -> usize {
        self.stations.len()
    }

    pub fn capacity(&self, s: StationId) -> u32 {
        self.stations[s.0].capacity
    }

    pub fn total_initial_stock(&self) -> u64 {
        self.stations.iter().map(|s| s.initial_stock as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    StockExceedsCapacity {
        station: StationId,
        stock: u32,
        capacity: u32,
    },
    ZeroCapacity {
        station: StationId,
    },
    NonDenseId {
        position: usize,
        station: StationId,
    },
    GraphDimension {
        expected: usize,
        found: usize,
    },
    NegativeTravel {
        from: usize,
        to: usize,
    },
    NonZeroDiagonal {
        node: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StockExceedsCapacity {
                station,
                stock,
                capacity,
            } => write!(
                f,
                "stock exceeds capacity at station {station} ({stock} > {capacity})"
            ),
            Violation::ZeroCapacity { station } => {
                write!(f, "zero capacity at station {station}")
            }
            Violation::NonDenseId { position, station } => {
                write!(f, "station {station} stored at position {position}")
            }
            Violation::GraphDimension { expected, found } => write!(
                f,
                "graph dimension {found} does not match stations + depot = {expected}"
            ),
            Violation::NegativeTravel { from, to } => {
                write!(f, "negative travel time or distance on edge {from} -> {to}")
            }
            Violation::NonZeroDiagonal { node } => {
                write!(f, "non-zero diagonal entry at node {node}")
            }
        }
    }
}

/// Lists every violated layout invariant; an empty list means the layout is valid.
pub fn validate_layout(layout: &Layout) -> Vec<Violation> {
    let mut out = Vec::new();
    for (pos, s) in layout.stations.iter().enumerate() {
        if s.id.0 != pos {
            out.push(Violation::NonDenseId {
                position: pos,
                station: s.id,
            });
        }
        if s.capacity == 0 {
            out.push(Violation::ZeroCapacity { station: s.id });
        }
        if s.initial_stock > s.capacity {
            out.push(Violation::StockExceedsCapacity {
                station: s.id,
                stock: s.initial_stock,
                capacity: s.capacity,
            });
        }
    }
    let expected = layout.stations.len() + 1;
    let g = &layout.graph;
    if g.nodes != expected || !g.is_square() {
        out.push(Violation::GraphDimension {
            expected,
            found: g.nodes,
        });
        return out;
    }
    for i in 0..g.nodes {
        for j in 0..g.nodes {
            let (t, d) = (g.time(i, j), g.distance(i, j));
            if i == j {
                if t != 0.0 || d != 0.0 {
                    out.push(Violation::NonZeroDiagonal { node: i });
                }
            } else if !(t >= 0.0 && d >= 0.0) {
                out.push(Violation::NegativeTravel { from: i, to: j });
            }
        }
    }
    out
}

/// A working shift in seconds from midnight, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    start: u32,
    end: u32,
}

impl Shift {
    pub fn new(start: u32, end: u32) -> Result<Self, ModelError> {
        if start < end && end <= DAY_SECONDS {
            Ok(Self { start, end })
        } else {
            Err(ModelError::InvalidShift { start, end })
        }
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn end(&self) -> u32 {
        self.end
    }
}

/// Where a vehicle starts its shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StartLocation {
    #[default]
    Depot,
    Station(StationId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: usize,
    pub capacity: u32,
    pub shift: Shift,
    pub start: StartLocation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub vehicles: Vec<Vehicle>,
}

impl Fleet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `count` vehicles of equal capacity on the same shift, ids starting at `first_id`.
    pub fn uniform(first_id: usize, count: usize, capacity: u32, shift: Shift) -> Self {
        Self {
            vehicles: (0..count)
                .map(|i| Vehicle {
                    id: first_id + i,
                    capacity,
                    shift,
                    start: StartLocation::Depot,
                })
                .collect(),
        }
    }

    pub fn merged(mut self, other: Fleet) -> Self {
        self.vehicles.extend(other.vehicles);
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            v.id = i;
        }
        self
    }
}

/// Half-hours elapsed since the dataset epoch (midnight of its first day).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HalfHourIndex(pub u64);

impl HalfHourIndex {
    pub fn from_parts(day: u64, slot: usize) -> Self {
        debug_assert!(slot < SLOTS_PER_DAY);
        Self(day * SLOTS_PER_DAY as u64 + slot as u64)
    }

    pub fn day(self) -> u64 {
        self.0 / SLOTS_PER_DAY as u64
    }

    pub fn slot(self) -> usize {
        slot_of_day(self)
    }

    /// The index 52 weeks earlier, if it is not before the epoch.
    pub fn lag_52_weeks(self) -> Option<Self> {
        self.0.checked_sub(LAG_52_WEEKS).map(Self)
    }
}

pub fn hh_index(timestamp: NaiveDateTime, epoch: NaiveDate) -> Result<HalfHourIndex, ModelError> {
    let days = (timestamp.date() - epoch).num_days();
    if days < 0 {
        return Err(ModelError::PreEpoch { timestamp, epoch });
    }
    let secs = timestamp.time().num_seconds_from_midnight();
    Ok(HalfHourIndex::from_parts(
        days as u64,
        (secs / SLOT_SECONDS) as usize,
    ))
}

pub fn slot_of_day(h: HalfHourIndex) -> usize {
    (h.0 % SLOTS_PER_DAY as u64) as usize
}

/// Day-level calendar and weather attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayContext {
    pub date: NaiveDate,
    pub week_index: u32,
    pub is_public_holiday: bool,
    pub is_school_day: bool,
    pub avg_temperature: f64,
    pub avg_wind_speed: f64,
    pub fog: bool,
    pub rain: bool,
    pub snow: bool,
    pub storm: bool,
}

impl DayContext {
    /// A dry, mild working context; weather fields are meant to be overwritten.
    pub fn plain(date: NaiveDate, epoch: NaiveDate) -> Self {
        Self {
            date,
            week_index: week_index(date, epoch),
            is_public_holiday: false,
            is_school_day: true,
            avg_temperature: 15.0,
            avg_wind_speed: 5.0,
            fog: false,
            rain: false,
            snow: false,
            storm: false,
        }
    }

    pub fn day_of_week(&self) -> Weekday {
        self.date.weekday()
    }

    pub fn day_of_month(&self) -> u32 {
        self.date.day()
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }

    pub fn day_type(&self) -> DayType {
        DayType::of(self.day_of_week(), self.is_public_holiday)
    }
}

pub fn week_index(date: NaiveDate, epoch: NaiveDate) -> u32 {
    ((date - epoch).num_days().max(0) / 7) as u32
}

/// Operator day classification. Public holidays are treated as Sundays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayType {
    Working,
    Saturday,
    Sunday,
}

impl DayType {
    pub fn of(dow: Weekday, holiday: bool) -> Self {
        match (dow, holiday) {
            (_, true) | (Weekday::Sun, _) => DayType::Sunday,
            (Weekday::Sat, _) => DayType::Saturday,
            _ => DayType::Working,
        }
    }

    pub const ALL: [DayType; 3] = [DayType::Working, DayType::Saturday, DayType::Sunday];
}

/// Model inputs. Field order is fixed; categorical features hold integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    SlotOfDay,
    DayOfMonth,
    DayOfWeek,
    Month,
    WeekIndex,
    Station,
    AvgTemperature,
    AvgWindSpeed,
    PublicHoliday,
    SchoolDay,
    Fog,
    Rain,
    Snow,
    Storm,
}

pub const NUM_FEATURES: usize = 14;

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::SlotOfDay,
        Feature::DayOfMonth,
        Feature::DayOfWeek,
        Feature::Month,
        Feature::WeekIndex,
        Feature::Station,
        Feature::AvgTemperature,
        Feature::AvgWindSpeed,
        Feature::PublicHoliday,
        Feature::SchoolDay,
        Feature::Fog,
        Feature::Rain,
        Feature::Snow,
        Feature::Storm,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::SlotOfDay => "slot_of_day",
            Feature::DayOfMonth => "day_of_month",
            Feature::DayOfWeek => "day_of_week",
            Feature::Month => "month",
            Feature::WeekIndex => "week_index",
            Feature::Station => "station",
            Feature::AvgTemperature => "avg_temperature",
            Feature::AvgWindSpeed => "avg_wind_speed",
            Feature::PublicHoliday => "public_holiday",
            Feature::SchoolDay => "school_day",
            Feature::Fog => "fog",
            Feature::Rain => "rain",
            Feature::Snow => "snow",
            Feature::Storm => "storm",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            Feature::SlotOfDay
                | Feature::DayOfMonth
                | Feature::DayOfWeek
                | Feature::Month
                | Feature::Station
        )
    }
}

/// One row of model inputs, indexed by [`Feature::index`]. Day of week is
/// coded 0 = Monday .. 6 = Sunday; flags are 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn new(ctx: &DayContext, slot: usize, station: StationId) -> Self {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        Self([
            slot as f64,
            ctx.day_of_month() as f64,
            ctx.day_of_week().num_days_from_monday() as f64,
            ctx.month() as f64,
            ctx.week_index as f64,
            station.0 as f64,
            ctx.avg_temperature,
            ctx.avg_wind_speed,
            flag(ctx.is_public_holiday),
            flag(ctx.is_school_day),
            flag(ctx.fog),
            flag(ctx.rain),
            flag(ctx.snow),
            flag(ctx.storm),
        ])
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn day_type(&self) -> DayType {
        let dow = Weekday::try_from(self.get(Feature::DayOfWeek) as u8).unwrap_or(Weekday::Mon);
        DayType::of(dow, self.get(Feature::PublicHoliday) != 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveTime;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn at(date: NaiveDate, h: u32, m: u32, s: u32) -> NaiveDateTime {
        date.and_time(NaiveTime::from_hms_opt(h, m, s).unwrap())
    }

    #[test]
    fn hh_index_bins() {
        let e = d(2015, 1, 1);
        assert_eq!(hh_index(at(e, 0, 0, 0), e).unwrap(), HalfHourIndex(0));
        assert_eq!(hh_index(at(e, 0, 29, 59), e).unwrap(), HalfHourIndex(0));
        assert_eq!(hh_index(at(e, 0, 30, 0), e).unwrap(), HalfHourIndex(1));
        let later = e + chrono::Duration::days(364);
        assert_eq!(
            hh_index(at(later, 0, 0, 0), e).unwrap(),
            HalfHourIndex(17472)
        );
        assert_eq!(LAG_52_WEEKS, 17472);
    }

    #[test]
    fn hh_index_rejects_pre_epoch() {
        let e = d(2015, 1, 2);
        let err = hh_index(at(d(2015, 1, 1), 23, 59, 0), e).unwrap_err();
        assert!(err.to_string().contains("pre-epoch timestamp"));
    }

    #[test]
    fn slots() {
        assert_eq!(slot_of_day(HalfHourIndex(0)), 0);
        assert_eq!(slot_of_day(HalfHourIndex(49)), 1);
        assert_eq!(slot_of_day(HalfHourIndex(17472)), 0);
    }

    fn layout(n: usize, stock: u32, cap: u32, nodes: usize) -> Layout {
        Layout {
            stations: (0..n)
                .map(|i| Station {
                    id: StationId(i),
                    capacity: cap,
                    initial_stock: stock,
                    x_m: 0.0,
                    y_m: 0.0,
                    elevation_m: 0.0,
                })
                .collect(),
            graph: TravelGraph::from_fn(nodes, |_, _| (60.0, 100.0)),
        }
    }

    #[test]
    fn layout_validation() {
        assert!(validate_layout(&layout(3, 5, 10, 4)).is_empty());
        let v = validate_layout(&layout(1, 11, 10, 2));
        assert_eq!(v.len(), 1);
        assert_eq!(
            v[0].to_string(),
            "stock exceeds capacity at station 0 (11 > 10)"
        );
        let v = validate_layout(&layout(3, 5, 10, 3));
        assert!(matches!(
            v[0],
            Violation::GraphDimension {
                expected: 4,
                found: 3
            }
        ));
        assert!(v[0].to_string().contains("graph dimension"));

        let mut l = layout(2, 1, 2, 3);
        l.graph = TravelGraph::from_fn(3, |i, j| {
            if i == 0 && j == 2 {
                (-1.0, 5.0)
            } else {
                (1.0, 1.0)
            }
        });
        assert_eq!(
            validate_layout(&l),
            vec![Violation::NegativeTravel { from: 0, to: 2 }]
        );
    }

    #[test]
    fn shift_bounds() {
        assert!(Shift::new(0, 86400).is_ok());
        assert!(Shift::new(100, 100).is_err());
        assert!(Shift::new(0, 86401).is_err());
    }

    #[test]
    fn day_types() {
        assert_eq!(DayType::of(Weekday::Fri, false), DayType::Working);
        assert_eq!(DayType::of(Weekday::Sat, false), DayType::Saturday);
        assert_eq!(DayType::of(Weekday::Sun, false), DayType::Sunday);
        assert_eq!(DayType::of(Weekday::Wed, true), DayType::Sunday);
    }

    #[test]
    fn feature_vector_layout() {
        let e = d(2015, 1, 1);
        let mut ctx = DayContext::plain(d(2015, 1, 16), e);
        ctx.rain = true;
        let fv = FeatureVector::new(&ctx, 17, StationId(3));
        assert_eq!(fv.get(Feature::SlotOfDay), 17.0);
        assert_eq!(fv.get(Feature::DayOfMonth), 16.0);
        assert_eq!(fv.get(Feature::DayOfWeek), 4.0); // Friday
        assert_eq!(fv.get(Feature::Month), 1.0);
        assert_eq!(fv.get(Feature::WeekIndex), 2.0);
        assert_eq!(fv.get(Feature::Station), 3.0);
        assert_eq!(fv.get(Feature::Rain), 1.0);
        assert_eq!(fv.day_type(), DayType::Working);
        for (i, f) in Feature::ALL.iter().enumerate() {
            assert_eq!(f.index(), i);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_and_lag(day in 0u64..3000, secs in 0u32..86400) {
                let e = d(2015, 1, 1);
                let date = e + chrono::Duration::days(day as i64);
                let t = date.and_time(NaiveTime::from_num_seconds_from_midnight_opt(secs, 0).unwrap());
                let h = hh_index(t, e).unwrap();
                prop_assert_eq!(HalfHourIndex::from_parts(h.day(), h.slot()), h);
                prop_assert_eq!(h.day(), day);
                if day >= 364 {
                    let earlier = t - chrono::Duration::days(364);
                    prop_assert_eq!(h.0 - hh_index(earlier, e).unwrap().0, 17472);
                }
            }

            #[test]
            fn monotone(a in 0i64..10_000_000, b in 0i64..10_000_000) {
                let e = d(2015, 1, 1);
                let base = e.and_hms_opt(0, 0, 0).unwrap();
                let ta = base + chrono::Duration::seconds(a);
                let tb = base + chrono::Duration::seconds(b);
                let (ha, hb) = (hh_index(ta, e).unwrap(), hh_index(tb, e).unwrap());
                if a <= b { prop_assert!(ha <= hb); }
            }
        }
    }
}
