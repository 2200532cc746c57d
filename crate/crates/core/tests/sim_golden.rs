//! Two-station, one-vehicle day checked against a hand-enumerated trace.

use bss_twin::forecast::DayForecast;
use bss_twin::model::{DayContext, Fleet, Layout, Shift, Station, StationId, TravelGraph};
use bss_twin::relocation::{GreedyPolicy, PolicyConfig};
use bss_twin::scenario::{Scenario, TripEvent};
use bss_twin::sim::{simulate_day, DayKpi, SimOptions};
use chrono::NaiveDate;

const GOLDEN: &str = include_str!("golden/two_station_trace.txt");

pub fn golden_day() -> DayKpi {
    let station = |i: usize, capacity, initial_stock| Station {
        id: StationId(i),
        capacity,
        initial_stock,
        x_m: 0.0,
        y_m: 0.0,
        elevation_m: 0.0,
    };
    let time = [
        [0.0, 600.0, 300.0],
        [600.0, 0.0, 300.0],
        [300.0, 300.0, 0.0],
    ];
    let dist = [
        [0.0, 2000.0, 1000.0],
        [2000.0, 0.0, 1500.0],
        [1000.0, 1500.0, 0.0],
    ];
    let layout = Layout {
        stations: vec![station(0, 4, 4), station(1, 4, 1)],
        graph: TravelGraph::from_fn(3, |a, b| (time[a][b], dist[a][b])),
    };
    let fleet = Fleet::uniform(0, 1, 10, Shift::new(25_200, 32_400).unwrap());
    let trip = |t, o, d, duration| TripEvent {
        request_time: t,
        origin: StationId(o),
        destination: StationId(d),
        duration,
    };
    let date = NaiveDate::from_ymd_opt(2018, 5, 8).unwrap();
    let scenario = Scenario::new(
        DayContext::plain(date, date),
        vec![
            trip(1000, 0, 1, 1200),
            trip(1500, 1, 0, 300),
            trip(1700, 1, 0, 400),
            trip(2300, 1, 0, 200),
            trip(25_550, 0, 1, 1000),
            trip(26_000, 1, 0, 500),
        ],
    );
    let forecasts = DayForecast::from_fn(2, |s, _| if s.0 == 0 { 1.0 } else { -2.0 });
    let mut policy = GreedyPolicy::new(PolicyConfig::default());
    simulate_day(
        &layout,
        &fleet,
        &scenario,
        &mut policy,
        &forecasts,
        0,
        SimOptions { audit: true },
    )
    .unwrap()
}

/// Renders a day in the golden file's line format.
pub fn render(k: &DayKpi) -> Vec<String> {
    let c = &k.counters;
    let mut out = vec![
        format!("missed_withdrawals {}", c.missed_withdrawals),
        format!("missed_returns {}", c.missed_returns),
        format!("relocated_bikes {}", c.relocated_bikes),
        format!("total_km {}", c.total_km),
        format!(
            "final_stock {}",
            k.final_stock
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        ),
        format!("depot_bikes {}", k.depot_bikes),
    ];
    for (slot, s) in k.per_slot.iter().enumerate() {
        if s.missed_withdrawals > 0 {
            out.push(format!(
                "slot {slot} missed_withdrawals {}",
                s.missed_withdrawals
            ));
        }
        if s.missed_returns > 0 {
            out.push(format!("slot {slot} missed_returns {}", s.missed_returns));
        }
        if s.relocated_bikes > 0 {
            out.push(format!("slot {slot} relocated_bikes {}", s.relocated_bikes));
        }
        if s.total_km > 0.0 {
            out.push(format!("slot {slot} total_km {:.1}", s.total_km));
        }
    }
    out
}

pub fn expected() -> Vec<String> {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

#[test]
fn golden_trace() {
    assert_eq!(render(&golden_day()), expected());
}
