//! Ingestion of trip logs, layout, weather and calendar files, and aggregation
//! into dense per-station half-hour net-demand observations.

use crate::model::{
    hh_index, week_index, DayContext, FeatureVector, HalfHourIndex, Layout, Station, StationId,
    TravelGraph, SLOTS_PER_DAY,
};
use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: unknown station id {id}")]
    UnknownStation { path: String, line: u64, id: i64 },
    #[error("missing day context for {0}")]
    MissingDay(NaiveDate),
    #[error("year {0} absent from split plan")]
    YearNotInPlan(i32),
    #[error("empty calendar")]
    EmptyCalendar,
    #[error("station {station} out of range for a layout of {n} stations")]
    StationOutOfRange { station: StationId, n: usize },
}

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .ok()
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Maps external station ids onto the dense range `[0, N)` in layout order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationIndex {
    external: Vec<i64>,
    lookup: HashMap<i64, StationId>,
}

impl StationIndex {
    pub fn new(external: Vec<i64>) -> Self {
        let lookup = external
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, StationId(i)))
            .collect();
        Self { external, lookup }
    }

    /// Identity mapping for `n` stations.
    pub fn identity(n: usize) -> Self {
        Self::new((0..n as i64).collect())
    }

    pub fn get(&self, external: i64) -> Option<StationId> {
        self.lookup.get(&external).copied()
    }

    pub fn external(&self, s: StationId) -> i64 {
        self.external[s.0]
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    path: &str,
    expected: &[&str],
) -> Result<(), DataError> {
    let headers = rdr.headers().map_err(|source| DataError::Csv {
        path: path.to_string(),
        source,
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

/// Reads `layout.csv` plus the travel-time and distance matrices (depot last).
pub fn read_layout(
    layout_path: &Path,
    time_path: &Path,
    distance_path: &Path,
) -> Result<(Layout, StationIndex), DataError> {
    let p = layout_path.display().to_string();
    let mut rdr = csv_reader(open(layout_path)?);
    check_header(
        &mut rdr,
        &p,
        &[
            "id",
            "capacity",
            "initial_stock",
            "x_m",
            "y_m",
            "elevation_m",
        ],
    )?;
    let mut stations = Vec::new();
    let mut external = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|source| DataError::Csv {
            path: p.clone(),
            source,
        })?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let id: i64 = field(0)
            .parse()
            .map_err(|_| parse_err(&p, line, "bad station id"))?;
        let num = |k: usize, what: &str| -> Result<f64, DataError> {
            field(k)
                .parse::<f64>()
                .map_err(|_| parse_err(&p, line, format!("bad {what}")))
        };
        let int = |k: usize, what: &str| -> Result<u32, DataError> {
            field(k)
                .parse::<u32>()
                .map_err(|_| parse_err(&p, line, format!("bad {what}")))
        };
        if external.contains(&id) {
            return Err(parse_err(&p, line, format!("duplicate station id {id}")));
        }
        stations.push(Station {
            id: StationId(stations.len()),
            capacity: int(1, "capacity")?,
            initial_stock: int(2, "initial_stock")?,
            x_m: num(3, "x_m")?,
            y_m: num(4, "y_m")?,
            elevation_m: num(5, "elevation_m")?,
        });
        external.push(id);
    }
    let time_s = read_matrix(time_path)?;
    let distance_m = read_matrix(distance_path)?;
    Ok((
        Layout {
            stations,
            graph: TravelGraph::from_matrices(time_s, distance_m),
        },
        StationIndex::new(external),
    ))
}

/// Header-less row-major square matrix of reals.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| DataError::Csv {
            path: p.clone(),
            source,
        })?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err(&p, i as u64 + 1, "non-numeric matrix entry"))?;
        rows.push(row);
    }
    let n = rows.len();
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(parse_err(
            &p,
            i as u64 + 1,
            format!("matrix is not {n}x{n}"),
        ));
    }
    Ok(rows)
}

pub fn write_layout(layout: &Layout, index: &StationIndex, dir: &Path) -> Result<(), DataError> {
    let mut out = String::from("id,capacity,initial_stock,x_m,y_m,elevation_m\n");
    for s in &layout.stations {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            index.external(s.id),
            s.capacity,
            s.initial_stock,
            s.x_m,
            s.y_m,
            s.elevation_m
        ));
    }
    write_file(&dir.join("layout.csv"), out.as_bytes())?;
    let n = layout.graph.nodes();
    let matrix = |row: &dyn Fn(usize) -> Vec<f64>| {
        let mut m = String::new();
        for i in 0..n {
            let cells: Vec<String> = row(i).iter().map(|v| v.to_string()).collect();
            m.push_str(&cells.join(","));
            m.push('\n');
        }
        m
    };
    let g = &layout.graph;
    write_file(
        &dir.join("graph_time.csv"),
        matrix(&|i| g.time_row(i).to_vec()).as_bytes(),
    )?;
    write_file(
        &dir.join("graph_distance.csv"),
        matrix(&|i| g.distance_row(i).to_vec()).as_bytes(),
    )
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub withdrawal_time: NaiveDateTime,
    pub origin: StationId,
    pub return_time: NaiveDateTime,
    pub destination: StationId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct TripLog {
    pub trips: Vec<TripRecord>,
    pub rejected: Vec<RejectedRow>,
}

pub fn ingest_trip_log(path: &Path, index: &StationIndex) -> Result<TripLog, DataError> {
    parse_trip_log(open(path)?, &path.display().to_string(), index)
}

/// Parses a `trips.csv` stream. Unknown station ids abort ingestion; malformed
/// rows and rows returning before they were withdrawn are rejected and listed.
pub fn parse_trip_log<R: Read>(
    reader: R,
    path: &str,
    index: &StationIndex,
) -> Result<TripLog, DataError> {
    let mut rdr = csv_reader(reader);
    let mut log = TripLog::default();
    // An empty file has no header at all.
    if rdr.headers().map(|h| h.is_empty()).unwrap_or(true) {
        return Ok(log);
    }
    check_header(
        &mut rdr,
        path,
        &["withdrawal_time", "origin", "return_time", "destination"],
    )?;
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                log.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |k: usize| rec.get(k).unwrap_or("");
        let (Some(wt), Some(rt)) = (parse_timestamp(field(0)), parse_timestamp(field(2))) else {
            log.rejected.push(RejectedRow {
                line,
                reason: "unparseable timestamp".into(),
            });
            continue;
        };
        let (Ok(o), Ok(d)) = (field(1).parse::<i64>(), field(3).parse::<i64>()) else {
            log.rejected.push(RejectedRow {
                line,
                reason: "unparseable station id".into(),
            });
            continue;
        };
        let station = |id: i64| {
            index.get(id).ok_or(DataError::UnknownStation {
                path: path.to_string(),
                line,
                id,
            })
        };
        let (origin, destination) = (station(o)?, station(d)?);
        if rt < wt {
            log.rejected.push(RejectedRow {
                line,
                reason: "return before withdrawal".into(),
            });
            continue;
        }
        log.trips.push(TripRecord {
            withdrawal_time: wt,
            origin,
            return_time: rt,
            destination,
        });
    }
    Ok(log)
}

pub fn write_trip_log<W: Write>(
    w: W,
    trips: &[TripRecord],
    index: &StationIndex,
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "withdrawal_time,origin,return_time,destination")?;
    for t in trips {
        writeln!(
            w,
            "{},{},{},{}",
            format_timestamp(t.withdrawal_time),
            index.external(t.origin),
            format_timestamp(t.return_time),
            index.external(t.destination)
        )?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherDay {
    pub avg_temp_c: f64,
    pub avg_wind_kmh: f64,
    pub fog: bool,
    pub rain: bool,
    pub snow: bool,
    pub storm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarDay {
    pub public_holiday: bool,
    pub school_day: bool,
}

fn read_dated<T>(
    path: &Path,
    header: &[&str],
    mut row: impl FnMut(&csv::StringRecord) -> Option<T>,
) -> Result<BTreeMap<NaiveDate, T>, DataError> {
    let p = path.display().to_string();
    let mut rdr = csv_reader(open(path)?);
    check_header(&mut rdr, &p, header)?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|source| DataError::Csv {
            path: p.clone(),
            source,
        })?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d")
            .map_err(|_| parse_err(&p, line, "bad date"))?;
        let v = row(&rec).ok_or_else(|| parse_err(&p, line, "malformed row"))?;
        out.insert(date, v);
    }
    Ok(out)
}

pub fn read_weather(path: &Path) -> Result<BTreeMap<NaiveDate, WeatherDay>, DataError> {
    read_dated(
        path,
        &[
            "date",
            "avg_temp_c",
            "avg_wind_kmh",
            "fog",
            "rain",
            "snow",
            "storm",
        ],
        |r| {
            Some(WeatherDay {
                avg_temp_c: r.get(1)?.parse().ok()?,
                avg_wind_kmh: r.get(2)?.parse().ok()?,
                fog: parse_flag(r.get(3)?)?,
                rain: parse_flag(r.get(4)?)?,
                snow: parse_flag(r.get(5)?)?,
                storm: parse_flag(r.get(6)?)?,
            })
        },
    )
}

pub fn read_calendar(path: &Path) -> Result<BTreeMap<NaiveDate, CalendarDay>, DataError> {
    read_dated(path, &["date", "public_holiday", "school_day"], |r| {
        Some(CalendarDay {
            public_holiday: parse_flag(r.get(1)?)?,
            school_day: parse_flag(r.get(2)?)?,
        })
    })
}

/// Contiguous run of day contexts, one per calendar date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    days: Vec<DayContext>,
}

impl Calendar {
    /// Requires one context per date from the first to the last date given.
    pub fn from_days(mut days: Vec<DayContext>) -> Result<Self, DataError> {
        days.sort_by_key(|d| d.date);
        let first = days.first().ok_or(DataError::EmptyCalendar)?.date;
        for (i, d) in days.iter().enumerate() {
            let expected = first + chrono::Duration::days(i as i64);
            if d.date != expected {
                return Err(DataError::MissingDay(expected));
            }
        }
        Ok(Self { days })
    }

    /// Joins weather and calendar files over the date span of the weather file.
    pub fn join(
        weather: &BTreeMap<NaiveDate, WeatherDay>,
        calendar: &BTreeMap<NaiveDate, CalendarDay>,
    ) -> Result<Self, DataError> {
        let (Some(&first), Some(&last)) = (weather.keys().next(), weather.keys().next_back())
        else {
            return Err(DataError::EmptyCalendar);
        };
        let mut days = Vec::new();
        let mut date = first;
        while date <= last {
            let w = weather.get(&date).ok_or(DataError::MissingDay(date))?;
            let c = calendar.get(&date).ok_or(DataError::MissingDay(date))?;
            days.push(DayContext {
                date,
                week_index: week_index(date, first),
                is_public_holiday: c.public_holiday,
                is_school_day: c.school_day,
                avg_temperature: w.avg_temp_c,
                avg_wind_speed: w.avg_wind_kmh,
                fog: w.fog,
                rain: w.rain,
                snow: w.snow,
                storm: w.storm,
            });
            date = date.succ_opt().expect("date overflow");
        }
        Ok(Self { days })
    }

    pub fn epoch(&self) -> NaiveDate {
        self.days[0].date
    }

    pub fn days(&self) -> &[DayContext] {
        &self.days
    }

    pub fn get(&self, date: NaiveDate) -> Option<&DayContext> {
        let off = (date - self.epoch()).num_days();
        usize::try_from(off).ok().and_then(|i| self.days.get(i))
    }

    pub fn write_weather<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "date,avg_temp_c,avg_wind_kmh,fog,rain,snow,storm")?;
        for d in &self.days {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                d.date,
                d.avg_temperature,
                d.avg_wind_speed,
                d.fog as u8,
                d.rain as u8,
                d.snow as u8,
                d.storm as u8
            )?;
        }
        w.flush()
    }

    pub fn write_calendar<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "date,public_holiday,school_day")?;
        for d in &self.days {
            writeln!(
                w,
                "{},{},{}",
                d.date, d.is_public_holiday as u8, d.is_school_day as u8
            )?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
    Unused,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
            Role::Unused => "unused",
        })
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Role::Train),
            "validation" => Ok(Role::Validation),
            "test" => Ok(Role::Test),
            "unused" => Ok(Role::Unused),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub station: StationId,
    pub h: HalfHourIndex,
    pub features: FeatureVector,
    pub withdrawals: u32,
    pub returns: u32,
    pub net_demand: i32,
}

/// Dense station × half-hour counts over a contiguous date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_stations: usize,
    calendar: Calendar,
    // station-major: station * n_slots + h
    withdrawals: Vec<u32>,
    returns: Vec<u32>,
    plan: Option<BTreeMap<i32, Role>>,
}

impl Dataset {
    /// Builds a dataset directly from count tables (station-major).
    pub fn from_counts(
        n_stations: usize,
        calendar: Calendar,
        withdrawals: Vec<u32>,
        returns: Vec<u32>,
    ) -> Self {
        let n = n_stations * calendar.days().len() * SLOTS_PER_DAY;
        assert_eq!(withdrawals.len(), n);
        assert_eq!(returns.len(), n);
        Self {
            n_stations,
            calendar,
            withdrawals,
            returns,
            plan: None,
        }
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn n_days(&self) -> usize {
        self.calendar.days().len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_days() * SLOTS_PER_DAY
    }

    pub fn len(&self) -> usize {
        self.n_stations * self.n_slots()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn epoch(&self) -> NaiveDate {
        self.calendar.epoch()
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn day(&self, day: usize) -> &DayContext {
        &self.calendar.days()[day]
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.epoch()).num_days();
        usize::try_from(off).ok().filter(|&d| d < self.n_days())
    }

    fn at(&self, s: StationId, h: HalfHourIndex) -> usize {
        s.0 * self.n_slots() + h.0 as usize
    }

    pub fn contains(&self, h: HalfHourIndex) -> bool {
        (h.0 as usize) < self.n_slots()
    }

    pub fn withdrawals(&self, s: StationId, h: HalfHourIndex) -> u32 {
        self.withdrawals[self.at(s, h)]
    }

    pub fn returns(&self, s: StationId, h: HalfHourIndex) -> u32 {
        self.returns[self.at(s, h)]
    }

    /// Returns minus withdrawals.
    pub fn net_demand(&self, s: StationId, h: HalfHourIndex) -> i32 {
        let i = self.at(s, h);
        self.returns[i] as i32 - self.withdrawals[i] as i32
    }

    pub fn features(&self, s: StationId, h: HalfHourIndex) -> FeatureVector {
        FeatureVector::new(self.day(h.day() as usize), h.slot(), s)
    }

    pub fn observation(&self, s: StationId, h: HalfHourIndex) -> Observation {
        Observation {
            station: s,
            h,
            features: self.features(s, h),
            withdrawals: self.withdrawals(s, h),
            returns: self.returns(s, h),
            net_demand: self.net_demand(s, h),
        }
    }

    /// Trips (withdrawals) started on a day, summed over stations.
    pub fn day_total_withdrawals(&self, day: usize) -> u64 {
        (0..self.n_stations)
            .flat_map(|s| {
                (0..SLOTS_PER_DAY).map(move |k| (s, HalfHourIndex::from_parts(day as u64, k)))
            })
            .map(|(s, h)| self.withdrawals(StationId(s), h) as u64)
            .sum()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut ys: Vec<i32> = self.calendar.days().iter().map(|d| d.date.year()).collect();
        ys.dedup();
        ys
    }

    pub fn plan(&self) -> Option<&BTreeMap<i32, Role>> {
        self.plan.as_ref()
    }

    pub fn role_of_day(&self, day: usize) -> Option<Role> {
        let y = self.day(day).date.year();
        self.plan.as_ref().and_then(|p| p.get(&y).copied())
    }

    pub fn view(&self, role: Role) -> DataView<'_> {
        let days = (0..self.n_days())
            .filter(|&d| self.role_of_day(d) == Some(role))
            .collect();
        DataView { data: self, days }
    }

    pub fn view_year(&self, year: i32) -> DataView<'_> {
        let days = (0..self.n_days())
            .filter(|&d| self.day(d).date.year() == year)
            .collect();
        DataView { data: self, days }
    }

    pub fn view_days(&self, days: Vec<usize>) -> DataView<'_> {
        DataView { data: self, days }
    }

    pub fn view_all(&self) -> DataView<'_> {
        self.view_days((0..self.n_days()).collect())
    }

    /// `station,hh_index,date,slot,withdrawals,returns,net_demand,role`
    pub fn write_observations<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(
            w,
            "station,hh_index,date,slot,withdrawals,returns,net_demand,role"
        )?;
        for s in 0..self.n_stations {
            for h in 0..self.n_slots() as u64 {
                let (s, h) = (StationId(s), HalfHourIndex(h));
                let day = h.day() as usize;
                let role = self
                    .role_of_day(day)
                    .map(|r| r.to_string())
                    .unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    s,
                    h.0,
                    self.day(day).date,
                    h.slot(),
                    self.withdrawals(s, h),
                    self.returns(s, h),
                    self.net_demand(s, h),
                    role
                )?;
            }
        }
        w.flush()
    }
}

/// A subset of a dataset's days.
#[derive(Debug, Clone)]
pub struct DataView<'a> {
    pub data: &'a Dataset,
    pub days: Vec<usize>,
}

impl<'a> DataView<'a> {
    pub fn is_empty(&self) -> bool {
        self.days.is_empty() || self.data.n_stations() == 0
    }

    pub fn n_rows(&self) -> usize {
        self.days.len() * SLOTS_PER_DAY * self.data.n_stations()
    }

    /// Half-hours covered by the view, in day order.
    pub fn half_hours(&self) -> impl Iterator<Item = HalfHourIndex> + '_ {
        self.days
            .iter()
            .flat_map(|&d| (0..SLOTS_PER_DAY).map(move |k| HalfHourIndex::from_parts(d as u64, k)))
    }
}

/// Counts withdrawals and returns per station and half-hour over the
/// calendar's date range. Trips returning after the range contribute only
/// their withdrawal.
pub fn aggregate(
    trips: &[TripRecord],
    n_stations: usize,
    calendar: &Calendar,
) -> Result<Dataset, DataError> {
    let epoch = calendar.epoch();
    let n_slots = calendar.days().len() * SLOTS_PER_DAY;
    let mut withdrawals = vec![0u32; n_stations * n_slots];
    let mut returns = vec![0u32; n_stations * n_slots];
    for t in trips {
        for s in [t.origin, t.destination] {
            if s.0 >= n_stations {
                return Err(DataError::StationOutOfRange {
                    station: s,
                    n: n_stations,
                });
            }
        }
        let day = t.withdrawal_time.date();
        let h = hh_index(t.withdrawal_time, epoch).map_err(|_| DataError::MissingDay(day))?;
        if h.0 as usize >= n_slots {
            return Err(DataError::MissingDay(day));
        }
        withdrawals[t.origin.0 * n_slots + h.0 as usize] += 1;
        let r = hh_index(t.return_time, epoch).expect("return after withdrawal");
        if (r.0 as usize) < n_slots {
            returns[t.destination.0 * n_slots + r.0 as usize] += 1;
        }
    }
    Ok(Dataset::from_counts(
        n_stations,
        calendar.clone(),
        withdrawals,
        returns,
    ))
}

/// Tags every day with the role assigned to its year.
pub fn split_by_year(mut d: Dataset, plan: &BTreeMap<i32, Role>) -> Result<Dataset, DataError> {
    for y in d.years() {
        if !plan.contains_key(&y) {
            return Err(DataError::YearNotInPlan(y));
        }
    }
    d.plan = Some(plan.clone());
    Ok(d)
}
