//! Guidance-consistent state prediction: repeatedly simulate under the
//! current guidance and average the predicted link times back into it
//! until the two agree within a tolerance.

use crate::demand::TripRecord;
use crate::error::{Error, Result};
use crate::guidance::GuidanceTable;
use crate::network::Network;
use crate::route_choice::{ChoiceCoefficients, PathSetCatalog};
use crate::supply::{clone_state, simulate, NetworkState, SimInputs, SimulationResult};
use crate::tolls::TollSchedule;

/// Outcome of one consistency loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// Simulation passes performed.
    pub iterations: usize,
    /// Max relative deviation between guidance and predicted times over
    /// cells with measured traffic.
    pub gap: f64,
    pub converged: bool,
    /// Gap after each simulation pass.
    pub gaps: Vec<f64>,
}

/// Tolerance and iteration cap of the consistency loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSettings {
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        PredictionSettings {
            eps: 0.05,
            max_iter: 5,
        }
    }
}

/// Prediction context shared across evaluations: the network, choice sets
/// and coefficients, plus the historical times used by uninformed
/// travelers.
pub struct Predictor<'a> {
    pub network: &'a Network,
    pub catalog: &'a PathSetCatalog,
    pub coeffs: ChoiceCoefficients,
    pub en_route: bool,
    pub historical: &'a GuidanceTable,
    pub settings: PredictionSettings,
}

/// MSA step: `g + (predicted - g) / (n + 1)` element-wise, clipped below at
/// each link's free-flow time. `n` is the 1-based update counter.
pub fn msa_update(
    guidance: &GuidanceTable,
    predicted: &GuidanceTable,
    n: usize,
    network: &Network,
) -> Result<GuidanceTable> {
    assert!(n >= 1);
    if guidance.n_links != predicted.n_links
        || guidance.n_intervals != predicted.n_intervals
        || guidance.start != predicted.start
        || guidance.delta != predicted.delta
    {
        return Err(Error::ShapeMismatch(format!(
            "guidance {}x{} @{} vs predicted {}x{} @{}",
            guidance.n_links,
            guidance.n_intervals,
            guidance.start,
            predicted.n_links,
            predicted.n_intervals,
            predicted.start
        )));
    }
    let step = 1.0 / (n as f64 + 1.0);
    let mut out = guidance.clone();
    for link in 0..guidance.n_links {
        let floor = network.link(link).free_flow_time;
        for h in 0..guidance.n_intervals {
            let g = guidance.get(link, h);
            let p = predicted.get(link, h);
            out.set(link, h, (g + step * (p - g)).max(floor));
        }
    }
    Ok(out)
}

/// Max over measured (link, interval) cells of `|g - p| / max(p, 60s)`.
/// Cells that carried no measured traffic are ignored; an empty set gives
/// a gap of zero.
pub fn consistency_gap(guidance: &GuidanceTable, result: &SimulationResult) -> f64 {
    let mut gap: f64 = 0.0;
    for link in 0..guidance.n_links {
        for h in 0..guidance.n_intervals {
            if !result.link_measured[link][h] {
                continue;
            }
            let g = guidance.get(link, h);
            let p = result.link_times.get(link, h);
            gap = gap.max((g - p).abs() / p.max(60.0));
        }
    }
    gap
}

/// Total predicted travel time: completed trips plus the accrued time of
/// vehicles still in the network at the horizon end.
pub fn objective(result: &SimulationResult) -> f64 {
    result.total_travel_time()
}

impl<'a> Predictor<'a> {
    pub fn inputs<'b>(
        &'b self,
        guidance: &'b GuidanceTable,
        tolls: &'b TollSchedule,
    ) -> SimInputs<'b> {
        SimInputs {
            network: self.network,
            catalog: self.catalog,
            coeffs: self.coeffs,
            en_route: self.en_route,
            guidance,
            historical: self.historical,
            tolls,
        }
    }

    /// Run the consistency loop from `init_guidance` on a clone of the
    /// estimated state. Returns the guidance that produced the last
    /// simulation, that simulation, and a report; non-convergence within
    /// `max_iter` is reported, not an error.
    ///
    /// The prediction window is the toll schedule's window; `init_guidance`
    /// must cover it.
    pub fn predict_consistent(
        &self,
        estimated: &NetworkState,
        trips: &[TripRecord],
        tolls: &TollSchedule,
        init_guidance: &GuidanceTable,
        seed: u64,
    ) -> Result<(GuidanceTable, SimulationResult, ConsistencyReport)> {
        let start = estimated.clock as f64;
        let horizon = tolls.end() - start;
        if horizon <= 0.0 {
            return Err(Error::CoverageGap(format!(
                "toll schedule ends at {} but the state clock is {start}",
                tolls.end()
            )));
        }
        let settings = self.settings;
        assert!(settings.eps > 0.0 && settings.max_iter >= 1);

        let mut guidance = init_guidance.clone();
        let mut gaps = Vec::new();
        let mut n = 0;
        loop {
            n += 1;
            let mut state = clone_state(estimated);
            let result = simulate(
                &mut state,
                &self.inputs(&guidance, tolls),
                trips,
                horizon,
                tolls.delta,
                seed,
            )?;
            let gap = consistency_gap(&guidance, &result);
            gaps.push(gap);
            if gap <= settings.eps || n >= settings.max_iter {
                let report = ConsistencyReport {
                    iterations: n,
                    gap,
                    converged: gap <= settings.eps,
                    gaps,
                };
                return Ok((guidance, result, report));
            }
            guidance = msa_update(&guidance, &result.link_times, n, self.network)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::VehicleId;
    use crate::network::{parse_network, NodeId};
    use crate::supply::NetworkState;

    fn trip(id: u64, origin: u64, destination: u64, departure: f64) -> TripRecord {
        TripRecord {
            vehicle: VehicleId(id),
            origin: NodeId(origin),
            destination: NodeId(destination),
            departure_time: departure,
            informed: true,
            chosen_path: None,
            experienced_tt: None,
        }
    }

    fn two_route_network() -> Network {
        // Short low-capacity route vs long high-capacity route.
        parse_network(
            "NODES\n1\n2\nLINKS\n\
             10,1,2,1000,60,600,100\n\
             11,1,2,3000,240,3600,200\n\
             GANTRIES\n10\n",
            "two_route",
        )
        .unwrap()
    }

    #[test]
    fn msa_arithmetic() {
        let net = parse_network("NODES\n1\n2\nLINKS\n10,1,2,1000,60,600,50\nGANTRIES\n", "m")
            .unwrap();
        let mut g = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        let mut p = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        g.set(0, 0, 600.0);
        p.set(0, 0, 900.0);
        let out = msa_update(&g, &p, 1, &net).unwrap();
        assert_eq!(out.get(0, 0), 750.0);

        // Fixed point: predicted == guidance leaves it unchanged.
        let out = msa_update(&g, &g, 3, &net).unwrap();
        assert_eq!(out.get(0, 0), 600.0);

        g.set(0, 0, 100.0);
        p.set(0, 0, 200.0);
        let out = msa_update(&g, &p, 9, &net).unwrap();
        assert!((out.get(0, 0) - 110.0).abs() < 1e-12);
    }

    #[test]
    fn msa_floors_at_free_flow() {
        let net = parse_network("NODES\n1\n2\nLINKS\n10,1,2,1000,60,600,50\nGANTRIES\n", "m")
            .unwrap();
        let g = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        let mut p = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        p.set(0, 0, 1.0);
        let out = msa_update(&g, &p, 1, &net).unwrap();
        assert_eq!(out.get(0, 0), 60.0);
    }

    #[test]
    fn msa_shape_mismatch_is_an_error() {
        let net = parse_network("NODES\n1\n2\nLINKS\n10,1,2,1000,60,600,50\nGANTRIES\n", "m")
            .unwrap();
        let g = GuidanceTable::free_flow(&net, 0.0, 300.0, 2);
        let p = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        assert!(matches!(
            msa_update(&g, &p, 1, &net),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn msa_step_sizes_decay_but_sum_diverges() {
        let step = |n: usize| 1.0 / (n as f64 + 1.0);
        // Decreasing and vanishing.
        for n in 1..1000 {
            assert!(step(n + 1) < step(n));
        }
        assert!(step(1_000_000) < 1e-5);
        // Partial sums keep growing (divergence surrogate)…
        let sum: f64 = (1..100_000).map(step).sum();
        assert!(sum > 10.0);
        // …while the squared series stays bounded by ζ(2).
        let sq: f64 = (1..100_000).map(|n| step(n).powi(2)).sum();
        assert!(sq < 0.65);
    }

    #[test]
    fn repeated_msa_against_constant_prediction_contracts_monotonically() {
        let net = parse_network("NODES\n1\n2\nLINKS\n10,1,2,1000,60,600,50\nGANTRIES\n", "m")
            .unwrap();
        let mut g = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        g.set(0, 0, 1000.0);
        let mut p = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        p.set(0, 0, 200.0);
        let mut prev_err = (g.get(0, 0) - 200.0f64).abs();
        for n in 1..50 {
            g = msa_update(&g, &p, n, &net).unwrap();
            let err = (g.get(0, 0) - 200.0f64).abs();
            assert!(err <= prev_err, "error grew at n={n}");
            prev_err = err;
        }
        assert!(prev_err < 20.0);
    }

    #[test]
    fn objective_sums_completed_and_accrued() {
        let net = parse_network("NODES\n1\n2\nLINKS\n10,1,2,1000,60,600,50\nGANTRIES\n", "m")
            .unwrap();
        let empty = GuidanceTable::free_flow(&net, 0.0, 300.0, 1);
        let mut result = SimulationResult {
            trips: Vec::new(),
            link_times: empty,
            link_counts: vec![vec![0]],
            link_measured: vec![vec![false]],
            in_network: Vec::new(),
            entered: 0,
        };
        assert_eq!(objective(&result), 0.0);

        for (i, tt) in [100.0, 200.0, 300.0].iter().enumerate() {
            let mut t = trip(i as u64, 1, 2, 0.0);
            t.experienced_tt = Some(*tt);
            result.trips.push(t);
        }
        assert_eq!(objective(&result), 600.0);

        result.trips.truncate(1);
        result.in_network.push((VehicleId(9), 50.0));
        assert_eq!(objective(&result), 150.0);
    }

    fn predictor<'a>(
        network: &'a Network,
        catalog: &'a PathSetCatalog,
        historical: &'a GuidanceTable,
    ) -> Predictor<'a> {
        Predictor {
            network,
            catalog,
            coeffs: ChoiceCoefficients::new(-0.4, -0.01).unwrap(),
            en_route: false,
            historical,
            settings: PredictionSettings::default(),
        }
    }

    #[test]
    fn empty_network_converges_immediately_to_free_flow() {
        let net = two_route_network();
        let catalog = PathSetCatalog::build(&net, [(NodeId(1), NodeId(2))], 4).unwrap();
        let historical = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        let p = predictor(&net, &catalog, &historical);
        let state = NetworkState::new(&net, 0);
        let tolls = TollSchedule::zero(0.0, 300.0, 3, 1);
        let (guidance, result, report) = p
            .predict_consistent(&state, &[], &tolls, &historical, 5)
            .unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.gap, 0.0);
        assert_eq!(guidance, historical);
        assert!(result.trips.is_empty());
    }

    #[test]
    fn fixed_point_guidance_is_detected_in_one_iteration() {
        let net = two_route_network();
        let catalog = PathSetCatalog::build(&net, [(NodeId(1), NodeId(2))], 4).unwrap();
        let historical = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        let mut p = predictor(&net, &catalog, &historical);
        p.settings.max_iter = 10;
        let state = NetworkState::new(&net, 0);
        let tolls = TollSchedule::zero(0.0, 300.0, 3, 1);
        let trips: Vec<TripRecord> = (0..120).map(|i| trip(i, 1, 2, (i * 5) as f64)).collect();

        // First find the loop's own answer, then feed it back in.
        let (fixed, _, first) = p
            .predict_consistent(&state, &trips, &tolls, &historical, 5)
            .unwrap();
        assert!(first.converged, "gap {}", first.gap);
        let (_, _, report) = p
            .predict_consistent(&state, &trips, &tolls, &fixed, 5)
            .unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
    }

    #[test]
    fn congested_two_route_converges_and_is_self_consistent() {
        let net = two_route_network();
        let catalog = PathSetCatalog::build(&net, [(NodeId(1), NodeId(2))], 4).unwrap();
        let historical = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        let mut p = predictor(&net, &catalog, &historical);
        p.settings.max_iter = 10;
        let state = NetworkState::new(&net, 0);
        let tolls = TollSchedule::zero(0.0, 300.0, 3, 1);
        // Demand moderately above the short route's capacity.
        let trips: Vec<TripRecord> = (0..225).map(|i| trip(i, 1, 2, (i * 4) as f64)).collect();

        let (guidance, result, report) = p
            .predict_consistent(&state, &trips, &tolls, &historical, 11)
            .unwrap();
        assert!(report.converged, "gap {}", report.gap);
        assert!(report.gap <= 0.05);

        // Self-consistency oracle: re-simulating under the returned
        // guidance reproduces the returned link times within 5%.
        let mut again = clone_state(&state);
        let replay = simulate(
            &mut again,
            &p.inputs(&guidance, &tolls),
            &trips,
            900.0,
            300.0,
            11,
        )
        .unwrap();
        for link in 0..net.num_links() {
            for h in 0..3 {
                if result.link_measured[link][h] {
                    let a = result.link_times.get(link, h);
                    let b = replay.link_times.get(link, h);
                    assert!(
                        (a - b).abs() / b.max(60.0) <= 0.05,
                        "link {link} h {h}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn non_convergence_is_reported_not_an_error() {
        let net = two_route_network();
        let catalog = PathSetCatalog::build(&net, [(NodeId(1), NodeId(2))], 4).unwrap();
        let historical = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        let mut p = predictor(&net, &catalog, &historical);
        p.settings = PredictionSettings {
            eps: 1e-9,
            max_iter: 2,
        };
        let state = NetworkState::new(&net, 0);
        let tolls = TollSchedule::zero(0.0, 300.0, 3, 1);
        let trips: Vec<TripRecord> = (0..300).map(|i| trip(i, 1, 2, (i * 3) as f64)).collect();
        let (_, _, report) = p
            .predict_consistent(&state, &trips, &tolls, &historical, 11)
            .unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
        assert!(report.gap > 1e-9);
    }
}
