//! Discrete-event simulation of one day of user trips and vehicle relocation.

use crate::forecast::metrics::BoxStats;
use crate::forecast::DayForecast;
use crate::model::{
    validate_layout, DayContext, DayType, Fleet, Layout, StartLocation, StationId, Violation,
    DAY_SECONDS, SLOTS_PER_DAY, SLOT_SECONDS,
};
use crate::relocation::{Action, Policy, SimSnapshot, Trigger, VehicleSnapshot, VehicleTask};
use crate::scenario::Scenario;
use chrono::Datelike;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid layout: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Layout(Vec<Violation>),
    #[error("forecast covers {got} stations, layout has {expected}")]
    ForecastShape { expected: usize, got: usize },
    #[error("forecast missing for station {station}, slot {slot}")]
    Coverage { station: StationId, slot: usize },
    #[error("trip references station {0} outside the layout")]
    UnknownStation(StationId),
    #[error("vehicle {0} starts at a station outside the layout")]
    VehicleStart(usize),
    #[error("audit failed at t={time}: {message}")]
    Audit { time: f64, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KpiCounters {
    pub missed_withdrawals: u64,
    pub missed_returns: u64,
    pub total_km: f64,
    pub relocated_bikes: u64,
}

impl KpiCounters {
    pub fn total_missed(&self) -> u64 {
        self.missed_withdrawals + self.missed_returns
    }

    fn add(&mut self, o: &KpiCounters) {
        self.missed_withdrawals += o.missed_withdrawals;
        self.missed_returns += o.missed_returns;
        self.total_km += o.total_km;
        self.relocated_bikes += o.relocated_bikes;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayKpi {
    pub date_ctx: DayContext,
    /// Sums of `per_slot`.
    pub counters: KpiCounters,
    pub per_slot: Vec<KpiCounters>,
    pub final_stock: Vec<u32>,
    /// Bikes unloaded at the depot at shift end.
    pub depot_bikes: u64,
    /// Returns still waiting for a free dock at end of day.
    pub held_bikes: u64,
    /// User trips still riding at end of day.
    pub in_transit: u64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    /// Check conservation and bounds after every event.
    pub audit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    ReturnArrival,
    WithdrawalRequest,
    VehicleArrival,
    VehicleServiceDone,
    ShiftStart,
    ShiftEnd,
    SlotBoundary,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
    /// Station for user events, vehicle for vehicle events, slot for boundaries.
    entity: usize,
    seq: u64,
    /// Trip index for withdrawals.
    trip: usize,
}

impl Event {
    fn key_cmp(&self, o: &Self) -> Ordering {
        self.time
            .total_cmp(&o.time)
            .then(self.kind.cmp(&o.kind))
            .then(self.entity.cmp(&o.entity))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.key_cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, o: &Self) -> Ordering {
        o.key_cmp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    OffShift,
    Idle,
    Traveling,
    Servicing,
    Finished,
}

#[derive(Debug, Clone)]
struct VState {
    node: usize,
    load: u32,
    capacity: u32,
    phase: Phase,
    /// Shift ended while busy: go home after the current task.
    ending: bool,
    task: Option<VehicleTask>,
    clipped: bool,
}

struct Sim<'a> {
    layout: &'a Layout,
    scenario: &'a Scenario,
    forecasts: &'a DayForecast,
    policy: &'a mut dyn Policy,
    audit: bool,
    queue: BinaryHeap<Event>,
    seq: u64,
    stock: Vec<u32>,
    vehicles: Vec<VState>,
    in_transit: u64,
    held: Vec<usize>,
    depot: u64,
    total_bikes: u64,
    per_slot: Vec<KpiCounters>,
    time: f64,
    events: u64,
}

fn slot_of(t: f64) -> usize {
    ((t / SLOT_SECONDS as f64) as usize).min(SLOTS_PER_DAY - 1)
}

impl Sim<'_> {
    fn push(&mut self, time: f64, kind: Kind, entity: usize, trip: usize) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            kind,
            entity,
            seq: self.seq,
            trip,
        });
    }

    fn slot_kpi(&mut self) -> &mut KpiCounters {
        let k = slot_of(self.time);
        &mut self.per_slot[k]
    }

    fn withdrawal(&mut self, station: usize, trip: usize) {
        if self.stock[station] > 0 {
            self.stock[station] -= 1;
            self.in_transit += 1;
            let e = self.scenario.events()[trip];
            self.push(
                self.time + e.duration as f64,
                Kind::ReturnArrival,
                e.destination.0,
                0,
            );
        } else {
            self.slot_kpi().missed_withdrawals += 1;
        }
    }

    fn ret(&mut self, station: usize) {
        if self.stock[station] < self.layout.stations[station].capacity {
            self.stock[station] += 1;
            self.in_transit -= 1;
            return;
        }
        self.slot_kpi().missed_returns += 1;
        let g = &self.layout.graph;
        let target = (0..self.stock.len())
            .filter(|&s| s != station && self.stock[s] < self.layout.stations[s].capacity)
            .min_by(|&a, &b| {
                g.time(station, a)
                    .total_cmp(&g.time(station, b))
                    .then(a.cmp(&b))
            });
        match target {
            Some(s) => {
                let t = self.time + g.time(station, s);
                self.push(t, Kind::ReturnArrival, s, 0);
            }
            None => {
                self.in_transit -= 1;
                self.held.push(station);
            }
        }
    }

    fn snapshot_vehicles(&self) -> Vec<VehicleSnapshot> {
        self.vehicles
            .iter()
            .map(|v| VehicleSnapshot {
                node: v.node,
                load: v.load,
                capacity: v.capacity,
                idle: v.phase == Phase::Idle,
                task_station: v.task.map(|t| t.station),
            })
            .collect()
    }

    fn replan(&mut self, trigger: Trigger) {
        let vehicles = self.snapshot_vehicles();
        let snap = SimSnapshot {
            time: self.time,
            slot: slot_of(self.time),
            stock: &self.stock,
            layout: self.layout,
            forecasts: self.forecasts,
            vehicles: &vehicles,
        };
        let tasks = self.policy.on_event(&snap, trigger);
        for task in tasks {
            self.dispatch(task);
        }
    }

    fn dispatch(&mut self, task: VehicleTask) {
        let n = self.stock.len();
        let valid = task.vehicle < self.vehicles.len()
            && task.station.0 < n
            && task.action.quantity() > 0
            && self.vehicles[task.vehicle].phase == Phase::Idle
            && !self
                .vehicles
                .iter()
                .any(|v| v.task.is_some_and(|t| t.station == task.station));
        if !valid {
            return;
        }
        let from = self.vehicles[task.vehicle].node;
        self.travel(task.vehicle, from, task.station.0);
        let v = &mut self.vehicles[task.vehicle];
        v.task = Some(task);
    }

    fn travel(&mut self, vehicle: usize, from: usize, to: usize) {
        let g = &self.layout.graph;
        let (km, dt) = (g.distance(from, to) / 1000.0, g.time(from, to));
        self.slot_kpi().total_km += km;
        self.vehicles[vehicle].phase = Phase::Traveling;
        self.vehicles[vehicle].node = to;
        self.push(self.time + dt, Kind::VehicleArrival, vehicle, 0);
    }

    fn go_home(&mut self, vehicle: usize) {
        let depot = self.layout.depot();
        let v = &self.vehicles[vehicle];
        if v.load > 0 && v.node != depot {
            let from = v.node;
            self.travel(vehicle, from, depot);
        } else {
            let v = &mut self.vehicles[vehicle];
            self.depot += v.load as u64;
            v.load = 0;
            v.phase = Phase::Finished;
        }
    }

    fn arrival(&mut self, vehicle: usize) {
        let Some(task) = self.vehicles[vehicle].task else {
            // trip home
            let v = &mut self.vehicles[vehicle];
            self.depot += v.load as u64;
            v.load = 0;
            v.phase = Phase::Finished;
            return;
        };
        let s = task.station.0;
        let cap = self.layout.stations[s].capacity;
        let v = &mut self.vehicles[vehicle];
        let moved = match task.action {
            Action::Pickup(q) => {
                let m = q.min(self.stock[s]).min(v.capacity - v.load);
                self.stock[s] -= m;
                v.load += m;
                m
            }
            Action::Drop(q) => {
                let m = q.min(v.load).min(cap - self.stock[s]);
                self.stock[s] += m;
                v.load -= m;
                m
            }
        };
        v.phase = Phase::Servicing;
        v.clipped = moved == 0;
        let done = self.time + self.policy.per_bike_service_s() * moved as f64;
        self.slot_kpi().relocated_bikes += moved as u64;
        self.push(done, Kind::VehicleServiceDone, vehicle, 0);
    }

    fn service_done(&mut self, vehicle: usize) {
        let v = &mut self.vehicles[vehicle];
        let station = v.task.take().map(|t| t.station);
        if v.ending {
            self.go_home(vehicle);
            return;
        }
        v.phase = Phase::Idle;
        let trigger = match (v.clipped, station) {
            (true, Some(station)) => Trigger::ServiceClipped { vehicle, station },
            _ => Trigger::ServiceDone(vehicle),
        };
        self.replan(trigger);
    }

    fn check(&self) -> Result<(), SimError> {
        let fail = |message: String| SimError::Audit {
            time: self.time,
            message,
        };
        for (s, (&stock, st)) in self.stock.iter().zip(&self.layout.stations).enumerate() {
            if stock > st.capacity {
                return Err(fail(format!(
                    "station {s} holds {stock} > capacity {}",
                    st.capacity
                )));
            }
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.load > v.capacity {
                return Err(fail(format!(
                    "vehicle {i} load {} > capacity {}",
                    v.load, v.capacity
                )));
            }
        }
        let total = self.stock.iter().map(|&s| s as u64).sum::<u64>()
            + self.vehicles.iter().map(|v| v.load as u64).sum::<u64>()
            + self.in_transit
            + self.held.len() as u64
            + self.depot;
        if total != self.total_bikes {
            return Err(fail(format!(
                "{total} bikes accounted, expected {}",
                self.total_bikes
            )));
        }
        Ok(())
    }
}

/// Simulates one day. The built-in policies are deterministic, so `seed`
/// only reaches policies that draw random numbers of their own.
pub fn simulate_day(
    layout: &Layout,
    fleet: &Fleet,
    scenario: &Scenario,
    policy: &mut dyn Policy,
    forecasts: &DayForecast,
    _seed: u64,
    opts: SimOptions,
) -> Result<DayKpi, SimError> {
    let violations = validate_layout(layout);
    if !violations.is_empty() {
        return Err(SimError::Layout(violations));
    }
    let n = layout.n_stations();
    if forecasts.n_stations() != n {
        return Err(SimError::ForecastShape {
            expected: n,
            got: forecasts.n_stations(),
        });
    }
    if let Some((station, slot)) = forecasts.first_gap() {
        return Err(SimError::Coverage { station, slot });
    }
    for e in scenario.events() {
        for s in [e.origin, e.destination] {
            if s.0 >= n {
                return Err(SimError::UnknownStation(s));
            }
        }
    }
    let vehicles = fleet
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let node = match v.start {
                StartLocation::Depot => layout.depot(),
                StartLocation::Station(s) if s.0 < n => s.0,
                StartLocation::Station(_) => return Err(SimError::VehicleStart(i)),
            };
            Ok(VState {
                node,
                load: 0,
                capacity: v.capacity,
                phase: Phase::OffShift,
                ending: false,
                task: None,
                clipped: false,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut sim = Sim {
        layout,
        scenario,
        forecasts,
        policy,
        audit: opts.audit,
        queue: BinaryHeap::new(),
        seq: 0,
        stock: layout.stations.iter().map(|s| s.initial_stock).collect(),
        vehicles,
        in_transit: 0,
        held: Vec::new(),
        depot: 0,
        total_bikes: layout.total_initial_stock(),
        per_slot: vec![KpiCounters::default(); SLOTS_PER_DAY],
        time: 0.0,
        events: 0,
    };
    for (i, e) in scenario.events().iter().enumerate() {
        sim.push(
            e.request_time as f64,
            Kind::WithdrawalRequest,
            e.origin.0,
            i,
        );
    }
    for (i, v) in fleet.vehicles.iter().enumerate() {
        sim.push(v.shift.start() as f64, Kind::ShiftStart, i, 0);
        sim.push(v.shift.end() as f64, Kind::ShiftEnd, i, 0);
    }
    for k in 0..SLOTS_PER_DAY {
        sim.push((k * SLOT_SECONDS as usize) as f64, Kind::SlotBoundary, k, 0);
    }

    while let Some(e) = sim.queue.pop() {
        if e.time >= DAY_SECONDS as f64 {
            sim.queue.push(e);
            break;
        }
        sim.time = e.time;
        sim.events += 1;
        match e.kind {
            Kind::WithdrawalRequest => sim.withdrawal(e.entity, e.trip),
            Kind::ReturnArrival => sim.ret(e.entity),
            Kind::VehicleArrival => sim.arrival(e.entity),
            Kind::VehicleServiceDone => sim.service_done(e.entity),
            Kind::ShiftStart => {
                let v = &mut sim.vehicles[e.entity];
                if v.phase == Phase::OffShift {
                    v.phase = Phase::Idle;
                    sim.replan(Trigger::ShiftStart(e.entity));
                }
            }
            Kind::ShiftEnd => match sim.vehicles[e.entity].phase {
                Phase::Idle => sim.go_home(e.entity),
                Phase::Traveling | Phase::Servicing => sim.vehicles[e.entity].ending = true,
                Phase::OffShift => sim.vehicles[e.entity].phase = Phase::Finished,
                Phase::Finished => {}
            },
            Kind::SlotBoundary => {
                for station in std::mem::take(&mut sim.held) {
                    sim.in_transit += 1;
                    sim.push(sim.time, Kind::ReturnArrival, station, 0);
                }
                sim.replan(Trigger::SlotBoundary);
            }
        }
        if sim.audit {
            sim.check()?;
        }
    }
    // returns due after midnight stay in transit

    let mut counters = KpiCounters::default();
    for k in &sim.per_slot {
        counters.add(k);
    }
    Ok(DayKpi {
        date_ctx: scenario.ctx.clone(),
        counters,
        per_slot: sim.per_slot,
        depot_bikes: sim.depot,
        held_bikes: sim.held.len() as u64,
        in_transit: sim.in_transit,
        final_stock: sim.stock,
        events: sim.events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Month,
    DayOfWeek,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiMeans {
    pub missed_withdrawals: f64,
    pub missed_returns: f64,
    pub total_missed: f64,
    pub total_km: f64,
    pub relocated_bikes: f64,
}

impl KpiMeans {
    pub fn of(days: &[&DayKpi]) -> Self {
        let n = days.len().max(1) as f64;
        let mean = |f: &dyn Fn(&DayKpi) -> f64| days.iter().map(|d| f(d)).sum::<f64>() / n;
        Self {
            missed_withdrawals: mean(&|d| d.counters.missed_withdrawals as f64),
            missed_returns: mean(&|d| d.counters.missed_returns as f64),
            total_missed: mean(&|d| d.counters.total_missed() as f64),
            total_km: mean(&|d| d.counters.total_km),
            relocated_bikes: mean(&|d| d.counters.relocated_bikes as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    /// Month number, weekday name, or `all`.
    pub group: String,
    pub days: usize,
    pub means: KpiMeans,
    pub total_missed: BoxStats,
}

/// Means and box statistics of daily KPIs per group. With
/// `relocation_days_only`, Sundays and public holidays are dropped.
pub fn aggregate_kpis(
    days: &[DayKpi],
    grouping: Grouping,
    relocation_days_only: bool,
) -> Vec<GroupReport> {
    let mut groups: BTreeMap<(u32, String), Vec<&DayKpi>> = BTreeMap::new();
    for d in days {
        if relocation_days_only && d.date_ctx.day_type() == DayType::Sunday {
            continue;
        }
        let key = match grouping {
            Grouping::Month => (d.date_ctx.month(), d.date_ctx.month().to_string()),
            Grouping::DayOfWeek => {
                let w = d.date_ctx.date.weekday();
                (w.num_days_from_monday(), w.to_string())
            }
            Grouping::None => (0, "all".to_string()),
        };
        groups.entry(key).or_default().push(d);
    }
    groups
        .into_iter()
        .map(|((_, group), ds)| {
            let totals: Vec<f64> = ds
                .iter()
                .map(|d| d.counters.total_missed() as f64)
                .collect();
            GroupReport {
                group,
                days: ds.len(),
                means: KpiMeans::of(&ds),
                total_missed: BoxStats::of(&totals).expect("groups are non-empty"),
            }
        })
        .collect()
}

/// Percentage change of `value` relative to the company-model reference.
pub fn gap_from_reference(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Share of the reducible gap closed: improvement measured above `floor`.
pub fn improvement_over_floor(value: f64, reference: f64, floor: f64) -> f64 {
    100.0 * ((reference - floor) - (value - floor)) / (reference - floor)
}

/// `date,missed_withdrawals,missed_returns,total_missed,total_km,relocated_bikes`,
/// plus `missed_sNN` per-slot totals when `per_slot` is set.
pub fn write_kpi_csv<W: Write>(w: W, days: &[DayKpi], per_slot: bool) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(w);
    write!(
        w,
        "date,missed_withdrawals,missed_returns,total_missed,total_km,relocated_bikes"
    )?;
    if per_slot {
        for k in 0..SLOTS_PER_DAY {
            write!(w, ",missed_s{k:02}")?;
        }
    }
    writeln!(w)?;
    for d in days {
        let c = &d.counters;
        write!(
            w,
            "{},{},{},{},{:.3},{}",
            d.date_ctx.date,
            c.missed_withdrawals,
            c.missed_returns,
            c.total_missed(),
            c.total_km,
            c.relocated_bikes
        )?;
        if per_slot {
            for k in &d.per_slot {
                write!(w, ",{}", k.total_missed())?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests;
