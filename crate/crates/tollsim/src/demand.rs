//! Time-dependent OD demand, day-to-day perturbation, and vehicle
//! departure generation.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::network::NodeId;
use crate::rng;

/// Vehicle identifier, unique within one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleId(pub u64);

/// Expected departures per (OD pair, interval). Intervals are contiguous
/// and uniform; rates are real-valued expected vehicle counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ODDemand {
    pub start: f64,
    pub delta: f64,
    pub n_intervals: usize,
    pub pairs: Vec<(NodeId, NodeId)>,
    /// `rates[pair][interval]`.
    pub rates: Vec<Vec<f64>>,
    pair_index: HashMap<(NodeId, NodeId), usize>,
}

impl ODDemand {
    pub fn new(start: f64, delta: f64, n_intervals: usize) -> Self {
        assert!(delta > 0.0 && n_intervals > 0);
        ODDemand {
            start,
            delta,
            n_intervals,
            pairs: Vec::new(),
            rates: Vec::new(),
            pair_index: HashMap::new(),
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.delta * self.n_intervals as f64
    }

    pub fn add(&mut self, origin: NodeId, destination: NodeId, interval: usize, rate: f64) {
        assert!(interval < self.n_intervals);
        assert!(rate >= 0.0);
        let idx = *self
            .pair_index
            .entry((origin, destination))
            .or_insert_with(|| {
                self.pairs.push((origin, destination));
                self.rates.push(vec![0.0; self.n_intervals]);
                self.pairs.len() - 1
            });
        self.rates[idx][interval] += rate;
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().flatten().sum()
    }

    /// Scale every rate by a demand-level multiplier.
    pub fn scale(&self, factor: f64) -> ODDemand {
        let mut out = self.clone();
        for row in &mut out.rates {
            for cell in row {
                *cell *= factor;
            }
        }
        out
    }

    /// Demand restricted to whole intervals overlapping `[start, end)`.
    pub fn restrict(&self, start: f64, end: f64) -> ODDemand {
        let first = (((start - self.start) / self.delta).floor().max(0.0)) as usize;
        let last = ((end - self.start) / self.delta).ceil().max(0.0) as usize;
        let first = first.min(self.n_intervals);
        let last = last.min(self.n_intervals).max(first);
        let n = last - first;
        let mut out = ODDemand::new(self.start + first as f64 * self.delta, self.delta, n.max(1));
        if n == 0 {
            return out;
        }
        for (p, pair) in self.pairs.iter().enumerate() {
            for h in first..last {
                let rate = self.rates[p][h];
                if rate > 0.0 {
                    out.add(pair.0, pair.1, h - first, rate);
                }
            }
        }
        out
    }
}

/// One vehicle's trip, from generation through simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub vehicle: VehicleId,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Seconds.
    pub departure_time: f64,
    /// Has access to disseminated guidance; uninformed vehicles fall back
    /// to historical travel times.
    pub informed: bool,
    /// Index into the OD pair's path set, assigned at departure.
    pub chosen_path: Option<usize>,
    /// Seconds, set on trip completion.
    pub experienced_tt: Option<f64>,
}

/// Draw each cell from Normal(mean, cov*mean) truncated at zero.
/// Deterministic for a fixed seed; `cov = 0` returns the input unchanged.
pub fn perturb(demand: &ODDemand, cov: f64, seed: u64) -> ODDemand {
    assert!(cov >= 0.0, "coefficient of variation must be non-negative");
    if cov == 0.0 {
        return demand.clone();
    }
    let mut rng = rng::chacha(seed, &[rng::stream::PERTURB]);
    let mut out = demand.clone();
    for row in &mut out.rates {
        for cell in row {
            if *cell > 0.0 {
                let normal = Normal::new(*cell, cov * *cell).expect("valid sd");
                *cell = normal.sample(&mut rng).max(0.0);
            }
        }
    }
    out
}

/// Realize demand into vehicles: per cell, Poisson(rate) departures at
/// uniform times within the interval; each vehicle is informed with
/// probability `informed_fraction`. Vehicle ids start at `id_base` and
/// follow (pair, interval) order; the returned list is sorted by
/// departure time.
pub fn generate_trips_with_base(
    demand: &ODDemand,
    informed_fraction: f64,
    seed: u64,
    id_base: u64,
) -> Vec<TripRecord> {
    assert!((0.0..=1.0).contains(&informed_fraction));
    let mut rng = rng::chacha(seed, &[rng::stream::WORLD_TRIPS]);
    let mut trips = Vec::new();
    let mut next_id = id_base;
    for (p, pair) in demand.pairs.iter().enumerate() {
        for h in 0..demand.n_intervals {
            let rate = demand.rates[p][h];
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64;
            let interval_start = demand.start + h as f64 * demand.delta;
            for _ in 0..count {
                let departure_time = interval_start + rng.gen::<f64>() * demand.delta;
                let informed = rng.gen::<f64>() < informed_fraction;
                trips.push(TripRecord {
                    vehicle: VehicleId(next_id),
                    origin: pair.0,
                    destination: pair.1,
                    departure_time,
                    informed,
                    chosen_path: None,
                    experienced_tt: None,
                });
                next_id += 1;
            }
        }
    }
    trips.sort_by(|a, b| {
        a.departure_time
            .total_cmp(&b.departure_time)
            .then(a.vehicle.0.cmp(&b.vehicle.0))
    });
    trips
}

pub fn generate_trips(demand: &ODDemand, informed_fraction: f64, seed: u64) -> Vec<TripRecord> {
    generate_trips_with_base(demand, informed_fraction, seed, 0)
}

/// Parse demand rows `origin,destination,interval,rate` onto a window.
pub fn parse_demand(
    text: &str,
    file: &str,
    start: f64,
    delta: f64,
    n_intervals: usize,
) -> Result<ODDemand> {
    let mut demand = ODDemand::new(start, delta, n_intervals);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                file,
                lineno,
                "expected origin,destination,interval,rate",
            ));
        }
        let origin: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("invalid origin {:?}", fields[0])))?;
        let destination: u64 = fields[1].parse().map_err(|_| {
            Error::parse(file, lineno, format!("invalid destination {:?}", fields[1]))
        })?;
        let interval: usize = fields[2].parse().map_err(|_| {
            Error::parse(file, lineno, format!("invalid interval {:?}", fields[2]))
        })?;
        if interval >= n_intervals {
            return Err(Error::parse(
                file,
                lineno,
                format!("interval {interval} out of range (have {n_intervals})"),
            ));
        }
        let rate: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("invalid rate {:?}", fields[3])))?;
        if rate < 0.0 {
            return Err(Error::parse(file, lineno, "negative rate"));
        }
        demand.add(NodeId(origin), NodeId(destination), interval, rate);
    }
    Ok(demand)
}

pub fn load_demand(
    path: impl AsRef<Path>,
    start: f64,
    delta: f64,
    n_intervals: usize,
) -> Result<ODDemand> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_demand(&text, &path.display().to_string(), start, delta, n_intervals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(rate: f64) -> ODDemand {
        let mut d = ODDemand::new(0.0, 300.0, 1);
        d.add(NodeId(1), NodeId(2), 0, rate);
        d
    }

    #[test]
    fn zero_cov_is_identity() {
        let d = one_cell(100.0);
        assert_eq!(perturb(&d, 0.0, 7), d);
    }

    #[test]
    fn zero_mean_stays_zero() {
        let d = one_cell(0.0);
        for seed in 0..20 {
            assert_eq!(perturb(&d, 0.2, seed).rates[0][0], 0.0);
        }
    }

    #[test]
    fn perturbation_matches_stated_distribution() {
        // cov=0.2 around mean 100: sample mean within 100±2, sd within 20±2.
        let d = one_cell(100.0);
        let n = 10_000;
        let values: Vec<f64> = (0..n).map(|s| perturb(&d, 0.2, s).rates[0][0]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 100.0).abs() < 2.0, "mean {mean}");
        assert!((var.sqrt() - 20.0).abs() < 2.0, "sd {}", var.sqrt());
    }

    #[test]
    fn perturb_is_deterministic() {
        let d = one_cell(100.0);
        assert_eq!(perturb(&d, 0.2, 42), perturb(&d, 0.2, 42));
        assert_ne!(
            perturb(&d, 0.2, 42).rates[0][0],
            perturb(&d, 0.2, 43).rates[0][0]
        );
    }

    #[test]
    fn zero_rates_generate_no_trips() {
        let d = one_cell(0.0);
        assert!(generate_trips(&d, 1.0, 1).is_empty());
    }

    #[test]
    fn poisson_mean_matches_rate() {
        // rate 50, 1000 replications: mean count within 50±1.5.
        let d = one_cell(50.0);
        let reps = 1000;
        let total: usize = (0..reps).map(|s| generate_trips(&d, 1.0, s).len()).sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - 50.0).abs() < 1.5, "mean {mean}");
    }

    #[test]
    fn informed_fraction_one_marks_everyone() {
        let d = one_cell(40.0);
        let trips = generate_trips(&d, 1.0, 3);
        assert!(!trips.is_empty());
        assert!(trips.iter().all(|t| t.informed));
        let trips = generate_trips(&d, 0.0, 3);
        assert!(trips.iter().all(|t| !t.informed));
    }

    #[test]
    fn generation_is_deterministic_and_in_window() {
        let mut d = ODDemand::new(600.0, 300.0, 2);
        d.add(NodeId(1), NodeId(2), 0, 20.0);
        d.add(NodeId(1), NodeId(2), 1, 10.0);
        let a = generate_trips(&d, 0.5, 9);
        let b = generate_trips(&d, 0.5, 9);
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|t| t.departure_time >= 600.0 && t.departure_time < 1200.0));
        assert!(a.windows(2).all(|w| w[0].departure_time <= w[1].departure_time));
    }

    #[test]
    fn law_of_large_numbers_over_replications() {
        // Sum of generated trips over many seeds approaches the total rate
        // within 2%.
        let mut d = ODDemand::new(0.0, 300.0, 2);
        d.add(NodeId(1), NodeId(2), 0, 12.0);
        d.add(NodeId(1), NodeId(3), 1, 30.0);
        d.add(NodeId(2), NodeId(3), 0, 5.5);
        let reps = 1500;
        let total: usize = (0..reps).map(|s| generate_trips(&d, 1.0, s).len()).sum();
        let mean = total as f64 / reps as f64;
        let expected = d.total();
        assert!(
            (mean - expected).abs() / expected < 0.02,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn restrict_selects_overlapping_intervals() {
        let mut d = ODDemand::new(0.0, 300.0, 4);
        d.add(NodeId(1), NodeId(2), 0, 1.0);
        d.add(NodeId(1), NodeId(2), 1, 2.0);
        d.add(NodeId(1), NodeId(2), 2, 3.0);
        d.add(NodeId(1), NodeId(2), 3, 4.0);
        let r = d.restrict(300.0, 900.0);
        assert_eq!(r.start, 300.0);
        assert_eq!(r.n_intervals, 2);
        assert_eq!(r.rates[0], vec![2.0, 3.0]);
    }

    #[test]
    fn demand_file_round_trip() {
        let text = "1,4,0,100.5\n1,4,1,50\n2,4,0,10\n";
        let d = parse_demand(text, "demand", 0.0, 300.0, 2).unwrap();
        assert_eq!(d.pairs.len(), 2);
        assert_eq!(d.total(), 160.5);
        assert!(parse_demand("1,4,9,5\n", "demand", 0.0, 300.0, 2).is_err());
        assert!(parse_demand("1,4,0\n", "demand", 0.0, 300.0, 2).is_err());
    }
}
