//! Daily user-demand scenarios: replayed from logs or sampled from
//! piecewise-constant Poisson withdrawal rates with an origin-destination model.

use crate::data::{DataView, TripRecord};
use crate::model::{
    DayContext, DayType, HalfHourIndex, StationId, DAY_SECONDS, SLOTS_PER_DAY, SLOT_SECONDS,
};
use chrono::{NaiveDate, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripEvent {
    pub request_time: u32,
    pub origin: StationId,
    pub destination: StationId,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ctx: DayContext,
    events: Vec<TripEvent>,
}

impl Scenario {
    /// Sorts events by request time, then origin, then destination.
    pub fn new(ctx: DayContext, mut events: Vec<TripEvent>) -> Self {
        events.sort_by_key(|e| (e.request_time, e.origin, e.destination, e.duration));
        Self { ctx, events }
    }

    pub fn events(&self) -> &[TripEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The trips implied by the scenario, dated on its day.
    pub fn trips(&self) -> Vec<TripRecord> {
        let base = self.ctx.date.and_time(NaiveTime::MIN);
        self.events
            .iter()
            .map(|e| {
                let wt = base + chrono::Duration::seconds(e.request_time as i64);
                TripRecord {
                    withdrawal_time: wt,
                    origin: e.origin,
                    return_time: wt + chrono::Duration::seconds(e.duration as i64),
                    destination: e.destination,
                }
            })
            .collect()
    }

    /// `request_time_s,origin,destination,duration_s`
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "request_time_s,origin,destination,duration_s")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{}",
                e.request_time, e.origin, e.destination, e.duration
            )?;
        }
        w.flush()
    }

    /// Single-row sidecar with the day context.
    pub fn write_context_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        let c = &self.ctx;
        writeln!(
            w,
            "date,week_index,public_holiday,school_day,avg_temp_c,avg_wind_kmh,fog,rain,snow,storm"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            c.date,
            c.week_index,
            c.is_public_holiday as u8,
            c.is_school_day as u8,
            c.avg_temperature,
            c.avg_wind_speed,
            c.fog as u8,
            c.rain as u8,
            c.snow as u8,
            c.storm as u8
        )?;
        w.flush()
    }

    pub fn read_csv<R: BufRead>(ctx: DayContext, r: R) -> Result<Self, String> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if i == 0 {
                if line.trim() != "request_time_s,origin,destination,duration_s" {
                    return Err(format!("unexpected scenario header `{line}`"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |k: usize| -> Result<u64, String> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| format!("line {}: bad field {k}", i + 1))
            };
            events.push(TripEvent {
                request_time: parse(0)? as u32,
                origin: StationId(parse(1)? as usize),
                destination: StationId(parse(2)? as usize),
                duration: parse(3)? as u32,
            });
        }
        Ok(Self::new(ctx, events))
    }
}

/// Replays the logged trips withdrawn on `date`. Trips crossing midnight keep
/// their full duration.
pub fn replay_scenario(trips: &[TripRecord], date: NaiveDate, ctx: DayContext) -> Scenario {
    let events = trips
        .iter()
        .filter(|t| t.withdrawal_time.date() == date)
        .map(|t| TripEvent {
            request_time: t.withdrawal_time.time().num_seconds_from_midnight(),
            origin: t.origin,
            destination: t.destination,
            duration: ((t.return_time - t.withdrawal_time).num_seconds().max(1)) as u32,
        })
        .collect();
    Scenario::new(ctx, events)
}

/// Rate-fitting day class: day type × rain, optionally refined by month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayClass {
    pub day_type: DayType,
    pub rain: bool,
    pub month: Option<u32>,
}

impl DayClass {
    pub fn of(ctx: &DayContext, by_month: bool) -> Self {
        Self {
            day_type: ctx.day_type(),
            rain: ctx.rain,
            month: by_month.then(|| chrono::Datelike::month(&ctx.date)),
        }
    }
}

/// Per (station, slot, day class) withdrawal and return rates, in events per half-hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    n_stations: usize,
    by_month: bool,
    // class -> station * 48 + slot -> (withdrawal, return)
    rates: BTreeMap<DayClass, Vec<(f64, f64)>>,
}

impl RateProfile {
    pub fn new(n_stations: usize, by_month: bool) -> Self {
        Self {
            n_stations,
            by_month,
            rates: BTreeMap::new(),
        }
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn by_month(&self) -> bool {
        self.by_month
    }

    pub fn set(
        &mut self,
        class: DayClass,
        station: StationId,
        slot: usize,
        withdrawal: f64,
        ret: f64,
    ) {
        assert!(
            withdrawal >= 0.0 && ret >= 0.0,
            "rates must be non-negative"
        );
        let n = self.n_stations * SLOTS_PER_DAY;
        let table = self
            .rates
            .entry(class)
            .or_insert_with(|| vec![(0.0, 0.0); n]);
        table[station.0 * SLOTS_PER_DAY + slot] = (withdrawal, ret);
    }

    /// Withdrawal rate; classes never observed have rate 0.
    pub fn withdrawal(&self, class: &DayClass, station: StationId, slot: usize) -> f64 {
        self.rates
            .get(class)
            .map_or(0.0, |t| t[station.0 * SLOTS_PER_DAY + slot].0)
    }

    pub fn returns(&self, class: &DayClass, station: StationId, slot: usize) -> f64 {
        self.rates
            .get(class)
            .map_or(0.0, |t| t[station.0 * SLOTS_PER_DAY + slot].1)
    }
}

/// Mean withdrawals and returns per (station, slot) over all days of each class.
pub fn fit_rates(view: &DataView<'_>, by_month: bool) -> RateProfile {
    let data = view.data;
    let n = data.n_stations();
    let mut sums: BTreeMap<DayClass, (usize, Vec<(f64, f64)>)> = BTreeMap::new();
    for &day in &view.days {
        let class = DayClass::of(data.day(day), by_month);
        let entry = sums
            .entry(class)
            .or_insert_with(|| (0, vec![(0.0, 0.0); n * SLOTS_PER_DAY]));
        entry.0 += 1;
        for s in 0..n {
            for k in 0..SLOTS_PER_DAY {
                let h = HalfHourIndex::from_parts(day as u64, k);
                let cell = &mut entry.1[s * SLOTS_PER_DAY + k];
                cell.0 += data.withdrawals(StationId(s), h) as f64;
                cell.1 += data.returns(StationId(s), h) as f64;
            }
        }
    }
    let rates = sums
        .into_iter()
        .map(|(class, (days, mut table))| {
            for cell in &mut table {
                cell.0 /= days as f64;
                cell.1 /= days as f64;
            }
            (class, table)
        })
        .collect();
    RateProfile {
        n_stations: n,
        by_month,
        rates,
    }
}

/// Destination choice and trip-duration distribution for one origin and slot band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdEntry {
    /// (destination, probability), positive probabilities only, id order.
    pub destinations: Vec<(StationId, f64)>,
    /// Empirical duration quantiles in seconds at evenly spaced levels 0..=1.
    pub duration_quantiles: Vec<f64>,
}

impl OdEntry {
    fn sample(&self, rng: &mut impl Rng) -> (StationId, u32) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut dest = self.destinations.last().expect("non-empty OD entry").0;
        for &(d, p) in &self.destinations {
            acc += p;
            if u < acc {
                dest = d;
                break;
            }
        }
        let q = &self.duration_quantiles;
        let v: f64 = rng.random();
        let duration = if q.len() == 1 {
            q[0]
        } else {
            let pos = v * (q.len() - 1) as f64;
            let i = (pos.floor() as usize).min(q.len() - 2);
            q[i] + (q[i + 1] - q[i]) * (pos - i as f64)
        };
        (dest, duration.round().max(1.0) as u32)
    }
}

pub const DEFAULT_SLOT_BANDS: usize = 8;
const DURATION_QUANTILES: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdModel {
    n_stations: usize,
    bands: usize,
    entries: Vec<Option<OdEntry>>,
}

impl OdModel {
    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn band_of_slot(&self, slot: usize) -> usize {
        slot * self.bands / SLOTS_PER_DAY
    }

    /// Builds from explicit per (origin, band) entries; each must have
    /// positive total probability, which is normalized to 1.
    pub fn from_entries(n_stations: usize, bands: usize, entries: Vec<Option<OdEntry>>) -> Self {
        assert_eq!(entries.len(), n_stations * bands);
        let entries = entries
            .into_iter()
            .map(|e| {
                e.map(|mut e| {
                    e.destinations.retain(|&(_, p)| p > 0.0);
                    e.destinations.sort_by_key(|&(d, _)| d);
                    let total: f64 = e.destinations.iter().map(|&(_, p)| p).sum();
                    assert!(total > 0.0 && !e.duration_quantiles.is_empty());
                    for d in &mut e.destinations {
                        d.1 /= total;
                    }
                    e
                })
            })
            .collect();
        Self {
            n_stations,
            bands,
            entries,
        }
    }

    /// Entry for (origin, band), falling back to the origin's pooled entry
    /// from the nearest band that has data.
    pub fn entry(&self, origin: StationId, band: usize) -> Option<&OdEntry> {
        let row = &self.entries[origin.0 * self.bands..(origin.0 + 1) * self.bands];
        (0..self.bands)
            .flat_map(|off| [band.checked_sub(off), band.checked_add(off)])
            .flatten()
            .filter(|&b| b < self.bands)
            .find_map(|b| row[b].as_ref())
    }

    /// Empirical OD frequencies and duration quantiles per (origin, slot band).
    pub fn fit(trips: &[TripRecord], n_stations: usize, bands: usize) -> Self {
        let mut counts = vec![BTreeMap::<StationId, f64>::new(); n_stations * bands];
        let mut durations = vec![Vec::<f64>::new(); n_stations * bands];
        for t in trips {
            let slot =
                (t.withdrawal_time.time().num_seconds_from_midnight() / SLOT_SECONDS) as usize;
            let band = slot * bands / SLOTS_PER_DAY;
            let i = t.origin.0 * bands + band;
            *counts[i].entry(t.destination).or_default() += 1.0;
            durations[i].push((t.return_time - t.withdrawal_time).num_seconds().max(1) as f64);
        }
        let entries = counts
            .into_iter()
            .zip(durations)
            .map(|(c, mut d)| {
                if c.is_empty() {
                    return None;
                }
                d.sort_by(f64::total_cmp);
                let quantiles = (0..DURATION_QUANTILES)
                    .map(|k| {
                        let pos = k as f64 / (DURATION_QUANTILES - 1) as f64 * (d.len() - 1) as f64;
                        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                        d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
                    })
                    .collect();
                Some(OdEntry {
                    destinations: c.into_iter().collect(),
                    duration_quantiles: quantiles,
                })
            })
            .collect();
        Self::from_entries(n_stations, bands, entries)
    }
}

/// Samples one day of withdrawal requests. Per station and slot the count is
/// Poisson with the class rate and request times are uniform within the slot;
/// destination and duration come from the OD model. Stations without any OD
/// data generate no requests.
pub fn sample_scenario(rates: &RateProfile, od: &OdModel, ctx: &DayContext, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class = DayClass::of(ctx, rates.by_month());
    let mut events = Vec::new();
    for s in 0..rates.n_stations() {
        let origin = StationId(s);
        for slot in 0..SLOTS_PER_DAY {
            let lambda = rates.withdrawal(&class, origin, slot);
            if lambda <= 0.0 {
                continue;
            }
            let Some(entry) = od.entry(origin, od.band_of_slot(slot)) else {
                continue;
            };
            let count = Poisson::new(lambda)
                .expect("finite positive rate")
                .sample(&mut rng) as u64;
            let start = slot as u32 * SLOT_SECONDS;
            for _ in 0..count {
                let request_time = start + rng.random_range(0..SLOT_SECONDS);
                let (destination, duration) = entry.sample(&mut rng);
                debug_assert!(request_time < DAY_SECONDS);
                events.push(TripEvent {
                    request_time,
                    origin,
                    destination,
                    duration,
                });
            }
        }
    }
    Scenario::new(ctx.clone(), events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{aggregate, Calendar};
    use chrono::NaiveDateTime;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn ts(d: NaiveDate, h: u32, m: u32) -> NaiveDateTime {
        d.and_hms_opt(h, m, 0).unwrap()
    }

    fn trip(o: usize, wt: NaiveDateTime, d: usize, rt: NaiveDateTime) -> TripRecord {
        TripRecord {
            withdrawal_time: wt,
            origin: StationId(o),
            return_time: rt,
            destination: StationId(d),
        }
    }

    fn single_od(n: usize) -> OdModel {
        let entries = (0..n * DEFAULT_SLOT_BANDS)
            .map(|_| {
                Some(OdEntry {
                    destinations: vec![(StationId(0), 1.0)],
                    duration_quantiles: vec![600.0, 900.0],
                })
            })
            .collect();
        OdModel::from_entries(n, DEFAULT_SLOT_BANDS, entries)
    }

    #[test]
    fn replay_orders_and_filters() {
        let e = date(2018, 3, 1);
        let ctx = DayContext::plain(e, e);
        let trips = vec![
            trip(1, ts(e, 9, 0), 0, ts(e, 9, 20)),
            trip(0, ts(e, 8, 0), 1, ts(e, 8, 10)),
            trip(
                0,
                ts(date(2018, 3, 2), 8, 0),
                1,
                ts(date(2018, 3, 2), 8, 10),
            ),
        ];
        let s = replay_scenario(&trips, e, ctx.clone());
        assert_eq!(s.len(), 2);
        assert_eq!(s.events()[0].request_time, 8 * 3600);
        assert_eq!(s.events()[1].origin, StationId(1));
        assert!(replay_scenario(&trips, date(2018, 3, 5), ctx).is_empty());
    }

    #[test]
    fn replay_keeps_overnight_duration() {
        let e = date(2018, 3, 1);
        let t = trip(0, ts(e, 23, 50), 1, ts(date(2018, 3, 2), 0, 20));
        let s = replay_scenario(&[t], e, DayContext::plain(e, e));
        assert_eq!(s.events()[0].request_time, 23 * 3600 + 50 * 60);
        assert_eq!(s.events()[0].duration, 1800);
    }

    #[test]
    fn rate_fitting_means() {
        let e = date(2018, 3, 5); // Monday
        let mut days: Vec<DayContext> = (0..2)
            .map(|i| DayContext::plain(e + chrono::Duration::days(i), e))
            .collect();
        for d in &mut days {
            d.rain = true;
        }
        let cal = Calendar::from_days(days).unwrap();
        let mut trips = vec![];
        for _ in 0..2 {
            trips.push(trip(0, ts(e, 8, 5), 0, ts(e, 9, 5)));
        }
        let tue = date(2018, 3, 6);
        for _ in 0..4 {
            trips.push(trip(0, ts(tue, 8, 5), 0, ts(tue, 9, 5)));
        }
        let d = aggregate(&trips, 1, &cal).unwrap();
        let r = fit_rates(&d.view_all(), false);
        let wet = DayClass {
            day_type: DayType::Working,
            rain: true,
            month: None,
        };
        assert_eq!(r.withdrawal(&wet, StationId(0), 16), 3.0);
        assert_eq!(r.returns(&wet, StationId(0), 18), 3.0);
        let dry = DayClass { rain: false, ..wet };
        assert_eq!(r.withdrawal(&dry, StationId(0), 16), 0.0);

        let zero = aggregate(&[], 1, &cal).unwrap();
        let r = fit_rates(&zero.view_all(), false);
        assert!((0..48).all(|k| r.withdrawal(&wet, StationId(0), k) == 0.0));
    }

    #[test]
    fn zero_rates_give_empty_scenario() {
        let e = date(2018, 3, 5);
        let r = RateProfile::new(3, false);
        assert!(sample_scenario(&r, &single_od(3), &DayContext::plain(e, e), 1).is_empty());
    }

    #[test]
    fn sampling_is_deterministic() {
        let e = date(2018, 3, 5);
        let ctx = DayContext::plain(e, e);
        let mut r = RateProfile::new(2, false);
        let class = DayClass::of(&ctx, false);
        for k in 0..48 {
            r.set(class, StationId(0), k, 1.5, 0.0);
            r.set(class, StationId(1), k, 0.7, 0.0);
        }
        let od = single_od(2);
        let a = sample_scenario(&r, &od, &ctx, 42);
        let b = sample_scenario(&r, &od, &ctx, 42);
        assert_eq!(a, b);
        assert_ne!(a, sample_scenario(&r, &od, &ctx, 43));
        for ev in a.events() {
            assert!(ev.request_time < DAY_SECONDS);
            assert!((600..=900).contains(&ev.duration));
        }
        assert!(a
            .events()
            .windows(2)
            .all(|w| w[0].request_time <= w[1].request_time));
    }

    #[test]
    fn poisson_mean_matches_rate() {
        // Oracle: N ~ Poisson(4 * 48) so mean 192, sd sqrt(192); over 200
        // seeds the sample mean has standard error sqrt(192 / 200).
        let e = date(2018, 3, 5);
        let ctx = DayContext::plain(e, e);
        let mut r = RateProfile::new(1, false);
        let class = DayClass::of(&ctx, false);
        for k in 0..48 {
            r.set(class, StationId(0), k, 4.0, 0.0);
        }
        let od = single_od(1);
        let counts: Vec<f64> = (0..200)
            .map(|seed| sample_scenario(&r, &od, &ctx, seed).len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / 200.0;
        let se = (192.0f64 / 200.0).sqrt();
        assert!((mean - 192.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn per_slot_counts_chi_square() {
        // Rates vary by slot; summed over seeds each slot's count is Poisson
        // with mean seeds * rate. Pearson statistic with 48 dof; the 0.999
        // quantile of chi2(48) is about 84.
        let e = date(2018, 3, 5);
        let ctx = DayContext::plain(e, e);
        let mut r = RateProfile::new(1, false);
        let class = DayClass::of(&ctx, false);
        let rate = |k: usize| 0.5 + (k % 7) as f64;
        for k in 0..48 {
            r.set(class, StationId(0), k, rate(k), 0.0);
        }
        let od = single_od(1);
        let seeds = 100;
        let mut observed = [0f64; 48];
        for seed in 0..seeds {
            for ev in sample_scenario(&r, &od, &ctx, seed).events() {
                observed[(ev.request_time / SLOT_SECONDS) as usize] += 1.0;
            }
        }
        let chi2: f64 = (0..48)
            .map(|k| {
                let exp = seeds as f64 * rate(k);
                (observed[k] - exp).powi(2) / exp
            })
            .sum();
        assert!(chi2 < 84.0, "chi2 {chi2}");
    }

    #[test]
    fn od_fit_and_fallback() {
        let e = date(2018, 3, 5);
        let trips = vec![
            trip(0, ts(e, 8, 0), 1, ts(e, 8, 10)),
            trip(0, ts(e, 8, 5), 1, ts(e, 8, 25)),
            trip(0, ts(e, 8, 10), 2, ts(e, 8, 40)),
        ];
        let od = OdModel::fit(&trips, 3, DEFAULT_SLOT_BANDS);
        let band = od.band_of_slot(16);
        let entry = od.entry(StationId(0), band).unwrap();
        assert_eq!(entry.destinations.len(), 2);
        assert!((entry.destinations[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(entry.duration_quantiles[0], 600.0);
        assert_eq!(*entry.duration_quantiles.last().unwrap(), 1800.0);
        // another band falls back to the nearest populated band
        assert_eq!(od.entry(StationId(0), 0), Some(entry));
        assert!(od.entry(StationId(1), 0).is_none());
    }

    #[test]
    fn replay_aggregate_round_trip() {
        let e = date(2018, 3, 5);
        let cal = Calendar::from_days(vec![DayContext::plain(e, e)]).unwrap();
        let trips = vec![
            trip(0, ts(e, 8, 0), 1, ts(e, 8, 10)),
            trip(1, ts(e, 12, 0), 2, ts(e, 12, 50)),
            trip(2, ts(e, 17, 29), 0, ts(e, 17, 31)),
        ];
        let original = aggregate(&trips, 3, &cal).unwrap();
        let s = replay_scenario(&trips, e, cal.days()[0].clone());
        let again = aggregate(&s.trips(), 3, &cal).unwrap();
        assert_eq!(original, again);
    }

    #[test]
    fn scenario_csv_round_trip() {
        let e = date(2018, 3, 5);
        let ctx = DayContext::plain(e, e);
        let s = Scenario::new(
            ctx.clone(),
            vec![TripEvent {
                request_time: 100,
                origin: StationId(1),
                destination: StationId(0),
                duration: 300,
            }],
        );
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(Scenario::read_csv(ctx, &buf[..]).unwrap(), s);
    }
}
