//! Seeded synthetic city: station layout, calendar with weather, true demand
//! rates and a gravity destination model, from which daily trip scenarios
//! are sampled.
//!
//! Stations near the centre are business districts that fill up in the
//! morning and drain in the evening; outer residential stations do the
//! opposite. That imbalance is what relocation has to correct.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{aggregate, Calendar, DataError, Dataset, Role, TripRecord};
use crate::model::{
    week_index, DayContext, DayType, Layout, Station, StationId, TravelGraph, SLOTS_PER_DAY,
};
use crate::rng::mix;
use crate::scenario::{sample_scenario, DayClass, OdEntry, OdModel, RateProfile, Scenario};

const ROAD_FACTOR: f64 = 1.35;
const VEHICLE_SPEED_MS: f64 = 20.0 / 3.6;
const BIKE_SPEED_MS: f64 = 13.0 / 3.6;
const GRAVITY_SCALE_M: f64 = 1500.0;
const MIN_SPACING_M: f64 = 400.0;
const RAIN_FACTOR: f64 = 0.55;
const HOLIDAYS: [(u32, u32); 9] = [
    (1, 1),
    (1, 6),
    (5, 1),
    (8, 15),
    (10, 12),
    (11, 1),
    (12, 6),
    (12, 8),
    (12, 25),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stations: usize,
    pub first_year: i32,
    pub years: u32,
    /// Multiplies every withdrawal rate.
    pub demand_scale: f64,
    /// Side of the square service area.
    pub area_km: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2018,
            n_stations: 20,
            first_year: 2015,
            years: 4,
            demand_scale: 1.0,
            area_km: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_stations < 2 {
            return Err(SynthError::Config("n_stations must be at least 2".into()));
        }
        if self.years == 0 {
            return Err(SynthError::Config("years must be at least 1".into()));
        }
        if !(self.demand_scale.is_finite() && self.demand_scale > 0.0) {
            return Err(SynthError::Config("demand_scale must be positive".into()));
        }
        if !(self.area_km.is_finite() && self.area_km > 0.0) {
            return Err(SynthError::Config("area_km must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum District {
    Residential,
    Business,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    pub layout: Layout,
    pub districts: Vec<District>,
    pub calendar: Calendar,
    pub rates: RateProfile,
    pub od: OdModel,
}

impl SyntheticWorld {
    pub fn generate(config: &SynthConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let (layout, districts) = build_layout(config);
        let calendar = build_calendar(config)?;
        let rates = build_rates(config, &layout, &districts);
        let od = build_od(&layout, &districts);
        Ok(Self {
            config: config.clone(),
            layout,
            districts,
            calendar,
            rates,
            od,
        })
    }

    pub fn n_days(&self) -> usize {
        self.calendar.days().len()
    }

    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let i = (date - self.calendar.epoch()).num_days();
        (0..self.n_days() as i64).contains(&i).then_some(i as usize)
    }

    /// User trips for one calendar day; identical for every call.
    pub fn scenario(&self, day: usize) -> Scenario {
        let ctx = &self.calendar.days()[day];
        let seed = mix(&[self.config.seed, 2, ctx.date.num_days_from_ce() as u64]);
        sample_scenario(&self.rates, &self.od, ctx, seed)
    }

    pub fn scenarios(&self, days: &[usize]) -> Vec<Scenario> {
        days.par_iter().map(|&d| self.scenario(d)).collect()
    }

    /// Trip log over the whole calendar, in day order.
    pub fn trips(&self) -> Vec<TripRecord> {
        (0..self.n_days())
            .into_par_iter()
            .map(|d| self.scenario(d).trips())
            .collect::<Vec<_>>()
            .concat()
    }

    pub fn dataset(&self) -> Result<Dataset, SynthError> {
        Ok(aggregate(
            &self.trips(),
            self.layout.n_stations(),
            &self.calendar,
        )?)
    }

    /// Last year is test, the one before validation, the rest training.
    pub fn default_split(&self) -> BTreeMap<i32, Role> {
        let first = self.config.first_year;
        let last = first + self.config.years as i32 - 1;
        (first..=last)
            .map(|y| {
                let role = if y == last {
                    Role::Test
                } else if y == last - 1 {
                    Role::Validation
                } else {
                    Role::Train
                };
                (y, role)
            })
            .collect()
    }
}

fn build_layout(config: &SynthConfig) -> (Layout, Vec<District>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, 0]));
    let side = config.area_km * 1000.0;
    let n = config.n_stations;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut spacing = MIN_SPACING_M;
    while points.len() < n {
        let mut placed = false;
        for _ in 0..1000 {
            let p = (rng.random_range(0.0..side), rng.random_range(0.0..side));
            if points
                .iter()
                .all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= spacing)
            {
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            spacing /= 2.0;
        }
    }
    let centre = (side / 2.0, side / 2.0);
    let mut by_distance: Vec<usize> = (0..n).collect();
    by_distance.sort_by(|&a, &b| {
        let da = (points[a].0 - centre.0).hypot(points[a].1 - centre.1);
        let db = (points[b].0 - centre.0).hypot(points[b].1 - centre.1);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let n_business = (n * 3).div_ceil(10);
    let n_residential = (n * 4).div_ceil(10);
    let mut districts = vec![District::Mixed; n];
    for (rank, &s) in by_distance.iter().enumerate() {
        if rank < n_business {
            districts[s] = District::Business;
        } else if rank >= n - n_residential {
            districts[s] = District::Residential;
        }
    }
    let stations = (0..n)
        .map(|i| {
            let capacity = rng.random_range(5..=26u32);
            Station {
                id: StationId(i),
                capacity,
                initial_stock: capacity.div_ceil(2),
                x_m: points[i].0,
                y_m: points[i].1,
                elevation_m: rng.random_range(0.0..80.0),
            }
        })
        .collect::<Vec<_>>();
    let mut nodes = points.clone();
    nodes.push(centre);
    let graph = TravelGraph::from_fn(n + 1, |a, b| {
        let d = (nodes[a].0 - nodes[b].0).hypot(nodes[a].1 - nodes[b].1) * ROAD_FACTOR;
        (d / VEHICLE_SPEED_MS, d)
    });
    (Layout { stations, graph }, districts)
}

fn is_holiday(date: NaiveDate) -> bool {
    HOLIDAYS.contains(&(date.month(), date.day()))
}

fn is_school_break(date: NaiveDate) -> bool {
    let md = (date.month(), date.day());
    ((6, 15)..=(9, 15)).contains(&md) || md >= (12, 23) || md <= (1, 7)
}

fn build_calendar(config: &SynthConfig) -> Result<Calendar, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, 1]));
    let noise = Normal::new(0.0, 2.5).expect("valid normal");
    let first = NaiveDate::from_ymd_opt(config.first_year, 1, 1)
        .ok_or_else(|| SynthError::Config(format!("bad first_year {}", config.first_year)))?;
    let end = NaiveDate::from_ymd_opt(config.first_year + config.years as i32, 1, 1)
        .ok_or_else(|| SynthError::Config("calendar end out of range".into()))?;
    let mut days = Vec::new();
    let mut date = first;
    while date < end {
        let month = date.month();
        let rain_p = match month {
            11 | 12 | 1 | 2 | 3 => 0.35,
            6..=8 => 0.10,
            _ => 0.25,
        };
        let season = (2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 110.0) / 365.0).sin();
        let temp = 15.0 + 8.0 * season + noise.sample(&mut rng);
        let rain = rng.random_bool(rain_p);
        let wind_gust: f64 = noise.sample(&mut rng);
        let fog = rng.random_bool(if rain_p > 0.2 { 0.07 } else { 0.03 });
        let snow = rain && temp < 4.0 && rng.random_bool(0.3);
        let storm = rain && rng.random_bool(0.05);
        let holiday = is_holiday(date);
        let weekday = DayType::of(date.weekday(), holiday) == DayType::Working;
        days.push(DayContext {
            date,
            week_index: week_index(date, first),
            is_public_holiday: holiday,
            is_school_day: weekday && !is_school_break(date),
            avg_temperature: (temp * 10.0).round() / 10.0,
            avg_wind_speed: ((8.0 + 1.6 * wind_gust.abs() + if rain { 5.0 } else { 0.0 }) * 10.0)
                .round()
                / 10.0,
            fog,
            rain,
            snow,
            storm,
        });
        date = date.succ_opt().expect("date in range");
    }
    Ok(Calendar::from_days(days)?)
}

fn bump(t: f64, mean: f64, sd: f64) -> f64 {
    (-0.5 * ((t - mean) / sd).powi(2)).exp()
}

/// Relative withdrawal intensity at hour `t`.
fn shape(district: District, day_type: DayType, t: f64) -> f64 {
    let floor = if (7.0..23.0).contains(&t) { 0.1 } else { 0.03 };
    let peaks = match (day_type, district) {
        (DayType::Working, District::Residential) => {
            2.2 * bump(t, 8.0, 1.0) + 0.8 * bump(t, 13.5, 1.2) + 0.9 * bump(t, 18.5, 1.8)
        }
        (DayType::Working, District::Business) => {
            0.5 * bump(t, 8.5, 1.0) + 1.2 * bump(t, 14.0, 1.0) + 2.0 * bump(t, 18.0, 1.3)
        }
        (DayType::Working, District::Mixed) => {
            bump(t, 8.5, 1.0) + bump(t, 14.0, 1.5) + 1.2 * bump(t, 18.5, 2.0)
        }
        _ => 0.3 * bump(t, 10.0, 1.5) + bump(t, 12.5, 2.0) + 0.9 * bump(t, 18.0, 2.0),
    };
    floor + peaks
}

fn day_factor(day_type: DayType) -> f64 {
    match day_type {
        DayType::Working => 1.0,
        DayType::Saturday => 0.7,
        DayType::Sunday => 0.5,
    }
}

fn month_factor(month: u32) -> f64 {
    1.0 + 0.25 * (2.0 * std::f64::consts::PI * (month as f64 - 4.0) / 12.0).sin()
}

fn build_rates(config: &SynthConfig, layout: &Layout, districts: &[District]) -> RateProfile {
    let n = layout.n_stations();
    let mut rates = RateProfile::new(n, true);
    for day_type in DayType::ALL {
        for rain in [false, true] {
            for month in 1..=12 {
                let class = DayClass {
                    day_type,
                    rain,
                    month: Some(month),
                };
                let level = config.demand_scale
                    * day_factor(day_type)
                    * month_factor(month)
                    * if rain { RAIN_FACTOR } else { 1.0 };
                for (s, station) in layout.stations.iter().enumerate() {
                    let district = districts[s];
                    let volume = 1.6
                        * station.capacity as f64
                        * match district {
                            District::Residential => 1.0,
                            District::Business => 1.1,
                            District::Mixed => 0.9,
                        };
                    let profile: Vec<f64> = (0..SLOTS_PER_DAY)
                        .map(|k| shape(district, day_type, k as f64 / 2.0 + 0.25))
                        .collect();
                    let total: f64 = profile.iter().sum();
                    for (k, p) in profile.iter().enumerate() {
                        rates.set(class, StationId(s), k, level * volume * p / total, 0.0);
                    }
                }
            }
        }
    }
    rates
}

/// Destination pull of a district in each three-hour band.
fn attraction(district: District, band: usize) -> f64 {
    const RESIDENTIAL: [f64; 8] = [1.0, 1.0, 0.3, 0.6, 1.0, 1.3, 1.8, 1.5];
    const BUSINESS: [f64; 8] = [0.3, 0.3, 2.5, 1.6, 1.0, 0.7, 0.4, 0.4];
    match district {
        District::Residential => RESIDENTIAL[band],
        District::Business => BUSINESS[band],
        District::Mixed => 1.0,
    }
}

fn build_od(layout: &Layout, districts: &[District]) -> OdModel {
    let n = layout.n_stations();
    let bands = crate::scenario::DEFAULT_SLOT_BANDS;
    let dist = |a: usize, b: usize| {
        let (sa, sb) = (&layout.stations[a], &layout.stations[b]);
        (sa.x_m - sb.x_m).hypot(sa.y_m - sb.y_m) * ROAD_FACTOR
    };
    let mut entries = Vec::with_capacity(n * bands);
    for o in 0..n {
        for band in 0..bands {
            let weights: Vec<f64> = (0..n)
                .map(|d| {
                    if d == o {
                        0.05
                    } else {
                        attraction(districts[d], band) * (-dist(o, d) / GRAVITY_SCALE_M).exp()
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let destinations: Vec<(StationId, f64)> = weights
                .iter()
                .enumerate()
                .map(|(d, w)| (StationId(d), w / total))
                .collect();
            let mean_m: f64 = destinations
                .iter()
                .map(|&(d, p)| p * if d.0 == o { 3000.0 } else { dist(o, d.0) })
                .sum();
            let base = mean_m / BIKE_SPEED_MS;
            let duration_quantiles = [0.5, 0.75, 1.0, 1.3, 2.2]
                .iter()
                .map(|f| 60.0 + base * f)
                .collect();
            entries.push(Some(OdEntry {
                destinations,
                duration_quantiles,
            }));
        }
    }
    OdModel::from_entries(n, bands, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_layout;

    fn small() -> SynthConfig {
        SynthConfig {
            years: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn layout_is_valid_and_half_full() {
        let w = SyntheticWorld::generate(&SynthConfig::default()).unwrap();
        assert!(validate_layout(&w.layout).is_empty());
        assert_eq!(w.layout.n_stations(), 20);
        for s in &w.layout.stations {
            assert!((5..=26).contains(&s.capacity));
            assert_eq!(s.initial_stock, s.capacity.div_ceil(2));
        }
        assert!(w.districts.contains(&District::Business));
        assert!(w.districts.contains(&District::Residential));
    }

    #[test]
    fn calendar_covers_whole_years() {
        let w = SyntheticWorld::generate(&SynthConfig::default()).unwrap();
        assert_eq!(w.n_days(), 365 * 3 + 366);
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let ctx = |date| w.calendar.get(date).unwrap().clone();
        assert!(ctx(d(2017, 12, 25)).is_public_holiday);
        assert!(!ctx(d(2017, 7, 12)).is_school_day);
        assert!(!ctx(d(2018, 1, 3)).is_school_day);
        assert!(ctx(d(2018, 3, 14)).is_school_day);
        assert!(!ctx(d(2018, 3, 17)).is_school_day);
    }

    #[test]
    fn scenarios_are_reproducible_and_seed_dependent() {
        let w = SyntheticWorld::generate(&small()).unwrap();
        assert_eq!(w.scenario(40), w.scenario(40));
        assert_ne!(w.scenario(40), w.scenario(41));
        let other = SyntheticWorld::generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(w.scenario(40).events(), other.scenario(40).events());
    }

    #[test]
    fn business_stations_gain_bikes_in_the_morning() {
        let w = SyntheticWorld::generate(&small()).unwrap();
        let data = w.dataset().unwrap();
        let mut net = BTreeMap::<bool, i64>::new();
        for day in 0..data.n_days() {
            if data.day(day).day_type() != DayType::Working {
                continue;
            }
            for (s, district) in w.districts.iter().enumerate() {
                if *district == District::Mixed {
                    continue;
                }
                for slot in 14..20 {
                    let h = crate::model::HalfHourIndex::from_parts(day as u64, slot);
                    *net.entry(*district == District::Business).or_default() +=
                        data.net_demand(StationId(s), h) as i64;
                }
            }
        }
        assert!(net[&true] > 0, "business morning net {}", net[&true]);
        assert!(net[&false] < 0, "residential morning net {}", net[&false]);
    }

    #[test]
    fn demand_scale_multiplies_volume() {
        let base = SyntheticWorld::generate(&small()).unwrap();
        let double = SyntheticWorld::generate(&SynthConfig {
            demand_scale: 2.0,
            ..small()
        })
        .unwrap();
        let a: usize = (0..60).map(|d| base.scenario(d).len()).sum();
        let b: usize = (0..60).map(|d| double.scenario(d).len()).sum();
        let ratio = b as f64 / a as f64;
        assert!((1.85..2.15).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn default_split_assigns_last_two_years() {
        let w = SyntheticWorld::generate(&SynthConfig::default()).unwrap();
        let plan = w.default_split();
        assert_eq!(plan[&2015], Role::Train);
        assert_eq!(plan[&2016], Role::Train);
        assert_eq!(plan[&2017], Role::Validation);
        assert_eq!(plan[&2018], Role::Test);
    }
}
