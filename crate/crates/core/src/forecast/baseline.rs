//! Non-learned forecasters: the 52-week lag and the reference-day profile.

use super::ForecastError;
use crate::data::DataView;
use crate::model::{DayContext, DayType, HalfHourIndex, StationId, SLOTS_PER_DAY};
use chrono::Datelike;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Observed net demand per day, used as the forecast 52 weeks later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagTable {
    n_stations: usize,
    /// day offset -> station * 48 + slot
    days: BTreeMap<u64, Vec<i32>>,
}

impl LagTable {
    pub fn from_views(views: &[&DataView<'_>]) -> Self {
        let n_stations = views.first().map_or(0, |v| v.data.n_stations());
        let mut days = BTreeMap::new();
        for v in views {
            for &d in &v.days {
                let mut row = vec![0i32; n_stations * SLOTS_PER_DAY];
                for s in 0..n_stations {
                    for k in 0..SLOTS_PER_DAY {
                        row[s * SLOTS_PER_DAY + k] = v
                            .data
                            .net_demand(StationId(s), HalfHourIndex::from_parts(d as u64, k));
                    }
                }
                days.insert(d as u64, row);
            }
        }
        Self { n_stations, days }
    }

    pub fn predict(&self, station: StationId, h: HalfHourIndex) -> Result<f64, ForecastError> {
        let lag = h
            .lag_52_weeks()
            .ok_or(ForecastError::InsufficientHistory(h))?;
        self.days
            .get(&lag.day())
            .filter(|_| station.0 < self.n_stations)
            .map(|row| row[station.0 * SLOTS_PER_DAY + lag.slot()] as f64)
            .ok_or(ForecastError::InsufficientHistory(h))
    }
}

/// Reference-day cell: day type, month, rainy or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReferenceKey {
    pub day_type: DayType,
    pub month: u32,
    pub rainy: bool,
}

impl ReferenceKey {
    pub fn of(ctx: &DayContext) -> Self {
        Self {
            day_type: ctx.day_type(),
            month: ctx.date.month(),
            rainy: ctx.rain,
        }
    }
}

impl std::fmt::Display for ReferenceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({:?}, month {}, {})",
            self.day_type,
            self.month,
            if self.rainy { "rainy" } else { "sunny" }
        )
    }
}

/// One designated day's net-demand profile per (day type, month, weather).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    n_stations: usize,
    /// Missing cells fall back to the nearest available cell of the same day type.
    fallback: bool,
    #[serde(with = "cell_pairs")]
    cells: BTreeMap<ReferenceKey, ReferenceCell>,
}

/// JSON object keys must be strings, so cells are stored as a list of pairs.
mod cell_pairs {
    use super::{ReferenceCell, ReferenceKey};
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        cells: &BTreeMap<ReferenceKey, ReferenceCell>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(cells.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ReferenceKey, ReferenceCell>, D::Error> {
        Ok(Vec::<(ReferenceKey, ReferenceCell)>::deserialize(d)?
            .into_iter()
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub date: chrono::NaiveDate,
    pub profile: Vec<i32>,
}

impl ReferenceTable {
    /// For each cell, picks the day whose total trip count is closest to the
    /// cell's median total (earliest date on ties).
    pub fn fit(view: &DataView<'_>, fallback: bool) -> Self {
        let data = view.data;
        let n = data.n_stations();
        let mut groups: BTreeMap<ReferenceKey, Vec<(usize, u64)>> = BTreeMap::new();
        for &d in &view.days {
            groups
                .entry(ReferenceKey::of(data.day(d)))
                .or_default()
                .push((d, data.day_total_withdrawals(d)));
        }
        let cells = groups
            .into_iter()
            .map(|(key, days)| {
                let mut totals: Vec<f64> = days.iter().map(|&(_, t)| t as f64).collect();
                totals.sort_by(f64::total_cmp);
                let m = totals.len();
                let median = if m % 2 == 1 {
                    totals[m / 2]
                } else {
                    0.5 * (totals[m / 2 - 1] + totals[m / 2])
                };
                let &(day, _) = days
                    .iter()
                    .min_by(|a, b| {
                        (a.1 as f64 - median)
                            .abs()
                            .total_cmp(&(b.1 as f64 - median).abs())
                            .then(a.0.cmp(&b.0))
                    })
                    .expect("non-empty group");
                let mut profile = vec![0; n * SLOTS_PER_DAY];
                for s in 0..n {
                    for k in 0..SLOTS_PER_DAY {
                        profile[s * SLOTS_PER_DAY + k] =
                            data.net_demand(StationId(s), HalfHourIndex::from_parts(day as u64, k));
                    }
                }
                (
                    key,
                    ReferenceCell {
                        date: data.day(day).date,
                        profile,
                    },
                )
            })
            .collect();
        Self {
            n_stations: n,
            fallback,
            cells,
        }
    }

    pub fn cells(&self) -> &BTreeMap<ReferenceKey, ReferenceCell> {
        &self.cells
    }

    fn cell(&self, key: ReferenceKey) -> Result<&ReferenceCell, ForecastError> {
        if let Some(c) = self.cells.get(&key) {
            return Ok(c);
        }
        if self.fallback {
            // same type and month with the other weather, then nearest month
            let month_dist = |m: u32| {
                let d = (m as i32 - key.month as i32).rem_euclid(12);
                d.min(12 - d)
            };
            if let Some(c) = self
                .cells
                .iter()
                .filter(|(k, _)| k.day_type == key.day_type)
                .min_by_key(|(k, _)| (month_dist(k.month), k.rainy != key.rainy, k.month))
                .map(|(_, c)| c)
            {
                return Ok(c);
            }
        }
        Err(ForecastError::MissingReference(key.to_string()))
    }

    pub fn predict(
        &self,
        ctx: &DayContext,
        station: StationId,
        slot: usize,
    ) -> Result<f64, ForecastError> {
        self.predict_key(ReferenceKey::of(ctx), station, slot)
    }

    pub fn predict_key(
        &self,
        key: ReferenceKey,
        station: StationId,
        slot: usize,
    ) -> Result<f64, ForecastError> {
        if station.0 >= self.n_stations {
            return Err(ForecastError::UnknownStation(station));
        }
        Ok(self.cell(key)?.profile[station.0 * SLOTS_PER_DAY + slot] as f64)
    }
}
