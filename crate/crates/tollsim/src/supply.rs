//! Mesoscopic network loading: a deterministic point-queue model with
//! capacity-limited discharge and storage spillback.
//!
//! A vehicle entering link `a` at time `t` becomes eligible to exit at
//! `t + free_flow_time(a)`. Each link discharges at most its capacity per
//! one-second step, tracked as credit in units of 3600 per vehicle so that
//! integer-valued capacities stay exact. Entry to a full downstream link
//! blocks the queue head (FIFO spillback).

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand_chacha::ChaCha8Rng;

use crate::demand::{TripRecord, VehicleId};
use crate::error::{Error, Result};
use crate::guidance::GuidanceTable;
use crate::network::Network;
use crate::route_choice::{
    choice_probabilities, path_utility, sample_choice, utilities, ChoiceCoefficients,
    PathSetCatalog,
};
use crate::rng;
use crate::tolls::TollSchedule;

/// Credit units representing one vehicle; credit accrues `capacity` units
/// per second, so a capacity of c veh/h discharges c vehicles per hour.
const VEHICLE_CREDIT: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VehicleState {
    pub trip: TripRecord,
    /// Chosen path as link indices; may be revised en route.
    pub path: Vec<usize>,
    /// Position on the path (index of the current link once entered).
    pub leg: usize,
    pub entered_link_at: f64,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct LinkState {
    /// FIFO of (vehicle, earliest exit time).
    queue: VecDeque<(VehicleId, f64)>,
    /// Discharge credit; 3600 units buy one vehicle's exit.
    credit: f64,
    /// Vehicles waiting to start their trip on this link.
    entry_queue: VecDeque<VehicleId>,
}

/// Full dynamic state of one simulation. Confined to a single evaluation
/// at a time; clones are fully independent.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Integer-second clock.
    pub clock: u64,
    links: Vec<LinkState>,
    vehicles: HashMap<VehicleId, VehicleState>,
    /// Departures not yet admitted: (entry step, vehicle id).
    pending: BTreeSet<(u64, VehicleId)>,
}

impl NetworkState {
    pub fn new(network: &Network, clock: u64) -> Self {
        let links = network
            .links
            .iter()
            .map(|l| LinkState {
                queue: VecDeque::new(),
                credit: VEHICLE_CREDIT.max(l.capacity),
                entry_queue: VecDeque::new(),
            })
            .collect();
        NetworkState {
            clock,
            links,
            vehicles: HashMap::new(),
            pending: BTreeSet::new(),
        }
    }

    /// Number of vehicles currently tracked (queued, waiting or pending).
    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    /// Vehicles physically on each link.
    pub fn link_occupancy(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.queue.len()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Accrued travel time of every unfinished vehicle at `now`, sorted by
    /// vehicle id.
    pub fn accrued(&self, now: f64) -> Vec<(VehicleId, f64)> {
        let mut out: Vec<(VehicleId, f64)> = self
            .vehicles
            .values()
            .map(|v| (v.trip.vehicle, (now - v.trip.departure_time).max(0.0)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Drop the most recently entered vehicle from a link (observation
    /// noise support for state estimation).
    pub(crate) fn drop_last_on_link(&mut self, link_idx: usize) {
        if let Some((id, _)) = self.links[link_idx].queue.pop_back() {
            self.vehicles.remove(&id);
        }
    }

    /// Duplicate the most recently entered vehicle on a link under a fresh
    /// id (observation noise support for state estimation).
    pub(crate) fn duplicate_last_on_link(&mut self, link_idx: usize, new_id: VehicleId) {
        if let Some(&(id, exit)) = self.links[link_idx].queue.back() {
            let mut ghost = self.vehicles[&id].clone();
            ghost.trip.vehicle = new_id;
            self.links[link_idx].queue.push_back((new_id, exit));
            self.vehicles.insert(new_id, ghost);
        }
    }
}

/// Deep, independent copy of a state; mutating the clone never affects the
/// original.
pub fn clone_state(state: &NetworkState) -> NetworkState {
    state.clone()
}

/// Immutable inputs shared by one simulation run.
pub struct SimInputs<'a> {
    pub network: &'a Network,
    pub catalog: &'a PathSetCatalog,
    pub coeffs: ChoiceCoefficients,
    /// Informed vehicles re-evaluate the remaining route at every node.
    pub en_route: bool,
    pub guidance: &'a GuidanceTable,
    pub historical: &'a GuidanceTable,
    pub tolls: &'a TollSchedule,
}

impl<'a> SimInputs<'a> {
    fn times_for(&self, informed: bool) -> &GuidanceTable {
        if informed {
            self.guidance
        } else {
            self.historical
        }
    }
}

/// Per-(link, interval) flow statistics and completed trips over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecorder {
    pub start: f64,
    pub delta: f64,
    pub n_intervals: usize,
    n_links: usize,
    /// Vehicles entering each link, keyed by entry interval.
    counts: Vec<u64>,
    /// Sum and count of experienced link times, keyed by entry interval.
    time_sums: Vec<f64>,
    time_samples: Vec<u64>,
    pub completed: Vec<TripRecord>,
    /// Vehicles that departed (entered the system) within the window.
    pub entered: u64,
}

impl FlowRecorder {
    pub fn new(start: f64, delta: f64, n_intervals: usize, n_links: usize) -> Self {
        assert!(delta > 0.0 && n_intervals > 0);
        FlowRecorder {
            start,
            delta,
            n_intervals,
            n_links,
            counts: vec![0; n_links * n_intervals],
            time_sums: vec![0.0; n_links * n_intervals],
            time_samples: vec![0; n_links * n_intervals],
            completed: Vec::new(),
            entered: 0,
        }
    }

    fn cell(&self, link: usize, time: f64) -> usize {
        let h = ((time - self.start) / self.delta).floor().max(0.0) as usize;
        link * self.n_intervals + h.min(self.n_intervals - 1)
    }

    fn record_entry(&mut self, link: usize, time: f64) {
        let cell = self.cell(link, time);
        self.counts[cell] += 1;
    }

    fn record_link_time(&mut self, link: usize, entered_at: f64, exited_at: f64) {
        let cell = self.cell(link, entered_at);
        self.time_sums[cell] += exited_at - entered_at;
        self.time_samples[cell] += 1;
    }

    /// Entered minus exited per link, clamped at zero (used by state
    /// estimation diagnostics).
    pub fn entering_totals(&self) -> Vec<u64> {
        (0..self.n_links)
            .map(|l| (0..self.n_intervals).map(|h| self.entering_count(l, h)).sum())
            .collect()
    }

    pub fn entering_count(&self, link: usize, h: usize) -> u64 {
        self.counts[link * self.n_intervals + h]
    }

    pub fn has_samples(&self, link: usize, h: usize) -> bool {
        self.time_samples[link * self.n_intervals + h] > 0
    }

    /// Mean experienced time of vehicles entering in the interval, with the
    /// link's free-flow time for cells without measurements.
    pub fn mean_time(&self, network: &Network, link: usize, h: usize) -> f64 {
        let cell = link * self.n_intervals + h;
        if self.time_samples[cell] > 0 {
            self.time_sums[cell] / self.time_samples[cell] as f64
        } else {
            network.link(link).free_flow_time
        }
    }

    pub fn link_times(&self, network: &Network) -> GuidanceTable {
        let mut table = GuidanceTable::new(
            self.start,
            self.delta,
            self.n_links,
            self.n_intervals,
            0.0,
        );
        for link in 0..self.n_links {
            for h in 0..self.n_intervals {
                table.set(link, h, self.mean_time(network, link, h));
            }
        }
        table
    }
}

/// Outcome of one simulation window.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Completed trips with experienced travel times.
    pub trips: Vec<TripRecord>,
    /// Mean experienced travel time per (link, interval); free-flow time
    /// where no vehicle was measured.
    pub link_times: GuidanceTable,
    /// Vehicles entering per (link, interval).
    pub link_counts: Vec<Vec<u64>>,
    /// True where at least one measured link time backs the cell.
    pub link_measured: Vec<Vec<bool>>,
    /// Unfinished vehicles and their accrued times at the window end.
    pub in_network: Vec<(VehicleId, f64)>,
    /// Vehicles that departed within the window.
    pub entered: u64,
}

impl SimulationResult {
    pub fn from_recorder(
        recorder: &FlowRecorder,
        network: &Network,
        state: &NetworkState,
        window_end: f64,
    ) -> Self {
        let n = recorder.n_intervals;
        let link_counts = (0..recorder.n_links)
            .map(|l| (0..n).map(|h| recorder.entering_count(l, h)).collect())
            .collect();
        let link_measured = (0..recorder.n_links)
            .map(|l| (0..n).map(|h| recorder.has_samples(l, h)).collect())
            .collect();
        SimulationResult {
            trips: recorder.completed.clone(),
            link_times: recorder.link_times(network),
            link_counts,
            link_measured,
            in_network: state.accrued(window_end),
            entered: recorder.entered,
        }
    }

    /// Total experienced time of completed trips plus accrued time of
    /// vehicles still in the network.
    pub fn total_travel_time(&self) -> f64 {
        let done: f64 = self.trips.iter().filter_map(|t| t.experienced_tt).sum();
        let accrued: f64 = self.in_network.iter().map(|(_, a)| a).sum();
        done + accrued
    }
}

/// Advance a state to `until`, admitting `new_trips` and accumulating flow
/// statistics into `recorder`. Mutates nothing outside `state` and
/// `recorder`; deterministic for a fixed seed.
pub fn advance(
    state: &mut NetworkState,
    inputs: &SimInputs,
    new_trips: &[TripRecord],
    until: f64,
    seed: u64,
    recorder: &mut FlowRecorder,
) -> Result<()> {
    let start = state.clock as f64;
    if !inputs.guidance.covers(start, until) {
        return Err(Error::CoverageGap(format!(
            "guidance covers [{}, {}), simulation needs [{}, {})",
            inputs.guidance.start,
            inputs.guidance.end(),
            start,
            until
        )));
    }
    if !inputs.tolls.covers(start, until) {
        return Err(Error::CoverageGap(format!(
            "tolls cover [{}, {}), simulation needs [{}, {})",
            inputs.tolls.start,
            inputs.tolls.end(),
            start,
            until
        )));
    }
    for trip in new_trips {
        if trip.departure_time >= until {
            return Err(Error::InvalidArgument(format!(
                "trip {} departs at {} beyond window end {}",
                trip.vehicle.0, trip.departure_time, until
            )));
        }
        let entry_step = (trip.departure_time.ceil() as u64).max(state.clock);
        state.pending.insert((entry_step, trip.vehicle));
        state.vehicles.insert(
            trip.vehicle,
            VehicleState {
                trip: trip.clone(),
                path: Vec::new(),
                leg: 0,
                entered_link_at: 0.0,
                rng: rng::chacha(seed, &[trip.vehicle.0]),
            },
        );
    }

    let end_step = until.ceil() as u64;
    while state.clock < end_step {
        let t = state.clock;
        step(state, inputs, t, recorder)?;
        state.clock = t + 1;
    }
    Ok(())
}

fn step(
    state: &mut NetworkState,
    inputs: &SimInputs,
    t: u64,
    recorder: &mut FlowRecorder,
) -> Result<()> {
    let network = inputs.network;
    let now = t as f64;

    for (idx, link) in state.links.iter_mut().enumerate() {
        let capacity = network.link(idx).capacity;
        link.credit = (link.credit + capacity).min(VEHICLE_CREDIT.max(capacity));
    }

    // Departures due this step: pre-trip choice, then join the origin
    // link's entry queue.
    while let Some(&(step_due, id)) = state.pending.first() {
        if step_due > t {
            break;
        }
        state.pending.pop_first();
        let vehicle = state.vehicles.get_mut(&id).expect("pending vehicle exists");
        let set = inputs
            .catalog
            .get(vehicle.trip.origin, vehicle.trip.destination)?;
        let times = inputs.times_for(vehicle.trip.informed);
        let choice = if set.len() == 1 {
            0
        } else {
            let u = utilities(
                set,
                network,
                inputs.tolls,
                times,
                &inputs.coeffs,
                vehicle.trip.departure_time,
            );
            sample_choice(&choice_probabilities(&u), &mut vehicle.rng)
        };
        vehicle.trip.chosen_path = Some(choice);
        vehicle.path = set.paths[choice].clone();
        recorder.entered += 1;
        let first_link = vehicle.path[0];
        state.links[first_link].entry_queue.push_back(id);
    }

    // Admit waiting departures where storage allows.
    for idx in 0..state.links.len() {
        let storage = network.link(idx).storage as usize;
        let free_flow = network.link(idx).free_flow_time;
        while state.links[idx].queue.len() < storage {
            let Some(&id) = state.links[idx].entry_queue.front() else {
                break;
            };
            state.links[idx].entry_queue.pop_front();
            state.links[idx].queue.push_back((id, now + free_flow));
            let vehicle = state.vehicles.get_mut(&id).expect("admitted vehicle");
            vehicle.entered_link_at = now;
            recorder.record_entry(idx, now);
        }
    }

    // Discharge pass in link order; the queue head blocks followers.
    for idx in 0..state.links.len() {
        loop {
            if state.links[idx].credit + 1e-6 < VEHICLE_CREDIT {
                break;
            }
            let Some(&(id, earliest_exit)) = state.links[idx].queue.front() else {
                break;
            };
            if earliest_exit > now {
                break;
            }
            let vehicle = &state.vehicles[&id];
            let at_destination = vehicle.leg + 1 == vehicle.path.len();
            if at_destination {
                state.links[idx].queue.pop_front();
                state.links[idx].credit -= VEHICLE_CREDIT;
                let mut vehicle = state.vehicles.remove(&id).expect("vehicle exists");
                recorder.record_link_time(idx, vehicle.entered_link_at, now);
                vehicle.trip.experienced_tt = Some(now - vehicle.trip.departure_time);
                recorder.completed.push(vehicle.trip);
                continue;
            }

            if inputs.en_route && vehicle.trip.informed {
                reconsider_route(state, inputs, id, now)?;
            }
            let vehicle = &state.vehicles[&id];
            let next = vehicle.path[vehicle.leg + 1];
            let next_storage = network.link(next).storage as usize;
            if state.links[next].queue.len() >= next_storage {
                break; // spillback: head blocked, FIFO preserved
            }
            state.links[idx].queue.pop_front();
            state.links[idx].credit -= VEHICLE_CREDIT;
            let next_free_flow = network.link(next).free_flow_time;
            state.links[next].queue.push_back((id, now + next_free_flow));
            let vehicle = state.vehicles.get_mut(&id).expect("vehicle exists");
            recorder.record_link_time(idx, vehicle.entered_link_at, now);
            vehicle.leg += 1;
            vehicle.entered_link_at = now;
            recorder.record_entry(next, now);
        }
    }
    Ok(())
}

/// En-route re-evaluation at a node: among the choice-set paths sharing the
/// vehicle's traversed prefix, re-sample the continuation with the same
/// utility structure used pre-trip.
fn reconsider_route(
    state: &mut NetworkState,
    inputs: &SimInputs,
    id: VehicleId,
    now: f64,
) -> Result<()> {
    let vehicle = &state.vehicles[&id];
    let set = inputs
        .catalog
        .get(vehicle.trip.origin, vehicle.trip.destination)?;
    let prefix_len = vehicle.leg + 1;
    let prefix = &vehicle.path[..prefix_len];
    let candidates: Vec<usize> = (0..set.len())
        .filter(|&k| set.paths[k].len() > prefix_len && set.paths[k][..prefix_len] == *prefix)
        .collect();
    if candidates.len() < 2 {
        return Ok(());
    }
    let remainder_utils: Vec<f64> = candidates
        .iter()
        .map(|&k| {
            path_utility(
                inputs.network,
                &set.paths[k][prefix_len..],
                set.path_sizes[k],
                set.composite_utils[k],
                inputs.tolls,
                inputs.guidance,
                &inputs.coeffs,
                now,
            )
        })
        .collect();
    let probabilities = choice_probabilities(&remainder_utils);
    let vehicle = state.vehicles.get_mut(&id).expect("vehicle exists");
    let pick = candidates[sample_choice(&probabilities, &mut vehicle.rng)];
    if vehicle.path != set.paths[pick] {
        vehicle.path = set.paths[pick].clone();
        vehicle.trip.chosen_path = Some(pick);
    }
    Ok(())
}

/// Run a self-contained simulation window of `horizon` seconds on `state`
/// and summarize it. The window is split into `delta`-wide reporting
/// intervals.
pub fn simulate(
    state: &mut NetworkState,
    inputs: &SimInputs,
    trips: &[TripRecord],
    horizon: f64,
    delta: f64,
    seed: u64,
) -> Result<SimulationResult> {
    let start = state.clock as f64;
    let n_intervals = (horizon / delta).ceil().max(1.0) as usize;
    let mut recorder = FlowRecorder::new(start, delta, n_intervals, inputs.network.num_links());
    advance(state, inputs, trips, start + horizon, seed, &mut recorder)?;
    Ok(SimulationResult::from_recorder(
        &recorder,
        inputs.network,
        state,
        start + horizon,
    ))
}
