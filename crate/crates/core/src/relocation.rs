//! Forecast-driven relocation: per-station target inventories over a
//! look-ahead window, and a greedy urgency-per-time dispatcher that replans
//! on vehicle and slot events.

use crate::forecast::DayForecast;
use crate::model::{Layout, StationId, SLOTS_PER_DAY};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub lookahead_slots: usize,
    pub deadband_bikes: u32,
    pub per_bike_service_s: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            lookahead_slots: 4,
            deadband_bikes: 2,
            per_bike_service_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("forecast missing for station {station}, slot {slot}")]
pub struct CoverageGap {
    pub station: StationId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationTarget {
    pub target: u32,
    /// Stock range keeping the projection inside `[0, capacity]`; empty when
    /// `band.0 > band.1`.
    pub band: (f64, f64),
    /// Worst projected violation at the stock used for the computation.
    pub urgency: f64,
    /// Cumulative forecast net demand after each slot of the window.
    cumulative: Vec<f64>,
}

impl StationTarget {
    /// Worst projected shortfall plus overflow starting from `stock`.
    pub fn urgency_at(&self, stock: u32, capacity: u32) -> f64 {
        urgency(&self.cumulative, stock, capacity)
    }
}

fn urgency(cumulative: &[f64], stock: u32, capacity: u32) -> f64 {
    cumulative
        .iter()
        .map(|c| {
            let p = stock as f64 + c;
            (-p).max(0.0) + (p - capacity as f64).max(0.0)
        })
        .fold(0.0, f64::max)
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetInventory {
    /// Slot the window starts at.
    pub slot: usize,
    pub window: usize,
    pub stations: Vec<StationTarget>,
}

impl TargetInventory {
    pub fn get(&self, s: StationId) -> &StationTarget {
        &self.stations[s.0]
    }
}

/// Targets for every station from the forecasts of slots `slot ..
/// slot + window - 1`, truncated at the end of the day.
pub fn compute_targets(
    stock: &[u32],
    capacity: &[u32],
    forecasts: &DayForecast,
    slot: usize,
    window: usize,
) -> Result<TargetInventory, CoverageGap> {
    let end = (slot + window).min(SLOTS_PER_DAY);
    let mut stations = Vec::with_capacity(stock.len());
    for (s, (&stock, &cap)) in stock.iter().zip(capacity).enumerate() {
        let station = StationId(s);
        let mut cumulative = Vec::with_capacity(end.saturating_sub(slot));
        let mut c = 0.0;
        for k in slot..end {
            if s >= forecasts.n_stations() {
                return Err(CoverageGap { station, slot: k });
            }
            let f = forecasts.get(station, k);
            if !f.is_finite() {
                return Err(CoverageGap { station, slot: k });
            }
            c += f;
            cumulative.push(c);
        }
        let (m, big_m) = if cumulative.is_empty() {
            (0.0, 0.0)
        } else {
            (
                cumulative.iter().copied().fold(f64::INFINITY, f64::min),
                cumulative.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let cap_f = cap as f64;
        let (lo, hi) = ((-m).max(0.0), cap_f.min(cap_f - big_m));
        let mid = if lo <= hi {
            0.5 * (lo + hi)
        } else {
            // equalizes projected shortfall and overflow
            0.5 * (-m + cap_f - big_m)
        };
        let target = round_half_up(mid).clamp(0.0, cap_f) as u32;
        stations.push(StationTarget {
            target,
            band: (lo, hi),
            urgency: urgency(&cumulative, stock, cap),
            cumulative,
        });
    }
    Ok(TargetInventory {
        slot,
        window,
        stations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Pickup(u32),
    Drop(u32),
}

impl Action {
    pub fn quantity(self) -> u32 {
        match self {
            Action::Pickup(q) | Action::Drop(q) => q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleTask {
    /// Index into the fleet.
    pub vehicle: usize,
    pub station: StationId,
    pub action: Action,
    pub departure: f64,
}

/// Vehicle as seen by the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSnapshot {
    /// Current graph node (stations, then the depot).
    pub node: usize,
    pub load: u32,
    pub capacity: u32,
    /// In shift with no task.
    pub idle: bool,
    /// Station of the task in progress.
    pub task_station: Option<StationId>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimSnapshot<'a> {
    pub time: f64,
    pub slot: usize,
    pub stock: &'a [u32],
    pub layout: &'a Layout,
    pub forecasts: &'a DayForecast,
    pub vehicles: &'a [VehicleSnapshot],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    SlotBoundary,
    ShiftStart(usize),
    ServiceDone(usize),
    /// The vehicle's service moved no bikes.
    ServiceClipped {
        vehicle: usize,
        station: StationId,
    },
}

/// Relocation decision maker driven by the simulator's event loop.
pub trait Policy {
    fn on_event(&mut self, snap: &SimSnapshot<'_>, trigger: Trigger) -> Vec<VehicleTask>;

    fn per_bike_service_s(&self) -> f64 {
        PolicyConfig::default().per_bike_service_s
    }
}

/// Never issues a task.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpPolicy;

impl Policy for NoOpPolicy {
    fn on_event(&mut self, _: &SimSnapshot<'_>, _: Trigger) -> Vec<VehicleTask> {
        Vec::new()
    }
}

/// Inputs for planning one vehicle.
#[derive(Debug, Clone, Copy)]
pub struct PlanInput<'a> {
    pub time: f64,
    pub vehicle: usize,
    pub state: VehicleSnapshot,
    pub stock: &'a [u32],
    pub layout: &'a Layout,
    /// Stations this vehicle may not target.
    pub blocked: &'a [bool],
}

/// Best next task for an idle vehicle, or `None` to stay idle.
///
/// Only stations with a projected violation are candidates. An empty vehicle
/// facing only deficits fetches from the largest surplus first.
pub fn plan_next_task(
    input: &PlanInput<'_>,
    targets: &TargetInventory,
    cfg: &PolicyConfig,
) -> Option<VehicleTask> {
    let v = input.state;
    let free = v.capacity.saturating_sub(v.load);
    let graph = &input.layout.graph;
    let deadband = cfg.deadband_bikes.max(1) as i64;
    let mut best: Option<(f64, f64, usize, Action)> = None;
    let mut urgent_deficit = false;
    for (s, t) in targets.stations.iter().enumerate() {
        if input.blocked[s] {
            continue;
        }
        let stock = input.stock[s];
        let cap = input.layout.stations[s].capacity;
        let u = t.urgency_at(stock, cap);
        if u <= 0.0 {
            continue;
        }
        let diff = stock as i64 - t.target as i64;
        let action = if diff >= deadband && free > 0 {
            Action::Pickup((diff as u32).min(free))
        } else if -diff >= deadband {
            urgent_deficit = true;
            if v.load == 0 {
                continue;
            }
            Action::Drop(((-diff) as u32).min(v.load).min(cap - stock))
        } else {
            continue;
        };
        if action.quantity() == 0 {
            continue;
        }
        let travel = graph.time(v.node, s);
        let score = u / (travel + cfg.per_bike_service_s * action.quantity() as f64).max(1.0);
        let better = match best {
            None => true,
            Some((bs, bt, _, _)) => score > bs || (score == bs && travel < bt),
        };
        if better {
            best = Some((score, travel, s, action));
        }
    }
    if best.is_none() && urgent_deficit && v.load == 0 && free > 0 {
        for (s, t) in targets.stations.iter().enumerate() {
            let surplus = input.stock[s] as i64 - t.target as i64;
            if input.blocked[s] || surplus < 1 {
                continue;
            }
            let travel = graph.time(v.node, s);
            let key = surplus as f64;
            let better = match best {
                None => true,
                Some((bs, bt, _, _)) => key > bs || (key == bs && travel < bt),
            };
            if better {
                best = Some((key, travel, s, Action::Pickup((surplus as u32).min(free))));
            }
        }
    }
    best.map(|(_, _, s, action)| VehicleTask {
        vehicle: input.vehicle,
        station: StationId(s),
        action,
        departure: input.time,
    })
}

/// Greedy dispatcher: targets are refreshed each slot, urgencies use the
/// live stock at planning time.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    cfg: PolicyConfig,
    targets: Option<TargetInventory>,
    /// (vehicle, station) pairs barred until the next slot.
    excluded: Vec<(usize, StationId)>,
}

impl GreedyPolicy {
    pub fn new(cfg: PolicyConfig) -> Self {
        Self {
            cfg,
            targets: None,
            excluded: Vec::new(),
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn targets(&self) -> Option<&TargetInventory> {
        self.targets.as_ref()
    }
}

impl Policy for GreedyPolicy {
    fn on_event(&mut self, snap: &SimSnapshot<'_>, trigger: Trigger) -> Vec<VehicleTask> {
        on_event_replan(self, snap, trigger)
    }

    fn per_bike_service_s(&self) -> f64 {
        self.cfg.per_bike_service_s
    }
}

/// Refreshes targets when the slot rolls and plans the vehicles the trigger
/// concerns. Busy vehicles are never reassigned.
pub fn on_event_replan(
    p: &mut GreedyPolicy,
    snap: &SimSnapshot<'_>,
    trigger: Trigger,
) -> Vec<VehicleTask> {
    let capacity: Vec<u32> = snap.layout.stations.iter().map(|s| s.capacity).collect();
    if p.targets.as_ref().is_none_or(|t| t.slot != snap.slot) {
        p.excluded.clear();
        match compute_targets(
            snap.stock,
            &capacity,
            snap.forecasts,
            snap.slot,
            p.cfg.lookahead_slots,
        ) {
            Ok(t) => p.targets = Some(t),
            Err(_) => {
                p.targets = None;
                return Vec::new();
            }
        }
    }
    let to_plan: Vec<usize> = match trigger {
        Trigger::SlotBoundary => (0..snap.vehicles.len()).collect(),
        Trigger::ShiftStart(v) | Trigger::ServiceDone(v) => vec![v],
        Trigger::ServiceClipped { vehicle, station } => {
            p.excluded.push((vehicle, station));
            vec![vehicle]
        }
    };
    let targets = p.targets.as_ref().expect("targets computed above");
    let n = snap.stock.len();
    let mut reserved = vec![false; n];
    for v in snap.vehicles {
        if let Some(s) = v.task_station {
            reserved[s.0] = true;
        }
    }
    let mut tasks = Vec::new();
    for v in to_plan {
        let state = snap.vehicles[v];
        if !state.idle {
            continue;
        }
        let mut blocked = reserved.clone();
        for &(ev, s) in &p.excluded {
            if ev == v {
                blocked[s.0] = true;
            }
        }
        let input = PlanInput {
            time: snap.time,
            vehicle: v,
            state,
            stock: snap.stock,
            layout: snap.layout,
            blocked: &blocked,
        };
        if let Some(task) = plan_next_task(&input, targets, &p.cfg) {
            reserved[task.station.0] = true;
            tasks.push(task);
        }
    }
    tasks
}
