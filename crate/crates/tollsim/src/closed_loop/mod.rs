//! Rolling-horizon closed loop: a stochastic "world" simulation advances
//! cycle by cycle while a predictor-side optimizer (or a fixed-toll
//! baseline) produces the tolls it charges and the guidance it
//! disseminates.
//!
//! Within one cycle anchored at t0 the harness (1) estimates the world
//! state at t0, (2) optimizes tolls over the prediction horizon
//! [t0, t0+HΔ) with the first interval pinned to the committed vector λ,
//! (3) advances the world over [t0, t0+Δ) charging λ under the guidance
//! disseminated by the previous cycle, and (4) disseminates the fresh
//! consistent guidance. The optimized second-interval vector becomes the
//! next cycle's λ. Estimation and optimization run before the advance
//! because in deployment they happen concurrently with it and must not see
//! the interval they are computing for.

pub mod config;
pub mod metrics;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{ScenarioConfig, ScenarioKind};
pub use metrics::{
    avg_travel_time_by_departure, improvement_pct, rmsn, two_sided_t_test, TTestResult,
};

use rand_distr::{Distribution, Normal};

use crate::demand::{
    generate_trips, generate_trips_with_base, load_demand, perturb, ODDemand, TripRecord,
    VehicleId,
};
use crate::error::{Error, Result};
use crate::guidance::{load_times, GuidanceTable};
use crate::network::{load_network, Network};
use crate::optimizer::{
    optimize, EvalStats, Evaluator, FeasibleRegion, ScheduleShape, TraceRow,
};
use crate::prediction::Predictor;
use crate::route_choice::{load_path_sets, ChoiceCoefficients, PathSetCatalog};
use crate::rng::{self, stream};
use crate::supply::{advance, clone_state, FlowRecorder, NetworkState, SimInputs};
use crate::tolls::TollSchedule;

/// Id namespaces keeping world vehicles, per-cycle predictor vehicles and
/// estimation ghosts disjoint.
const PREDICTOR_ID_BASE: u64 = 1 << 40;
const PREDICTOR_CYCLE_STRIDE: u64 = 1 << 20;
const GHOST_ID_BASE: u64 = 1 << 50;

/// One cycle's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub start: f64,
    /// Toll vector λ actually charged over this cycle's interval.
    pub applied: Vec<f64>,
    /// Toll vector committed for the next interval (τ²* when this cycle
    /// optimized).
    pub decided_next: Vec<f64>,
    /// Best DTOP objective, when this cycle ran the optimizer.
    pub best_objective: Option<f64>,
    pub optimizer_trace: Vec<TraceRow>,
    pub eval_stats: EvalStats,
    /// Guidance disseminated at the end of this cycle.
    pub disseminated: GuidanceTable,
    pub wall_clock: f64,
    pub optimizer_failed: bool,
}

/// One replication of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: usize,
    /// Mean travel time and trip count per departure interval.
    pub series: Vec<Option<(f64, usize)>>,
    pub cycles: Vec<CycleRecord>,
    pub trips: Vec<TripRecord>,
    pub entered: u64,
    /// Set when a cycle failed; the series covers only completed cycles.
    pub failed: Option<String>,
}

/// A scenario × demand-level result across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub kind: ScenarioKind,
    pub demand_level: f64,
    pub period_start: f64,
    pub delta: f64,
    pub n_intervals: usize,
    pub tolling_window: (f64, f64),
    pub peak_window: Option<(f64, f64)>,
    pub replications: Vec<ReplicationOutcome>,
    /// Unweighted mean of replication means per interval.
    pub aggregate: Vec<Option<f64>>,
}

impl PerformanceReport {
    /// Mean of the aggregate series over `[from, to)`, with the interval
    /// values that exist.
    pub fn window_values(&self, from: f64, to: f64) -> Vec<f64> {
        let mut values = Vec::new();
        for h in 0..self.n_intervals {
            let t = self.period_start + h as f64 * self.delta;
            if t >= from && t < to {
                if let Some(v) = self.aggregate[h] {
                    values.push(v);
                }
            }
        }
        values
    }

    pub fn window_mean(&self, from: f64, to: f64) -> Option<f64> {
        let values = self.window_values(from, to);
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

/// Optimized static toll vector and its design objective.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticTolls {
    pub tolls: Vec<f64>,
    pub design_objective: f64,
    pub trace: Vec<TraceRow>,
}

/// Everything one optimizing cycle feeds to its strategy evaluations.
#[derive(Debug, Clone)]
pub struct EvaluationContext {
    pub cycle: usize,
    pub t0: f64,
    pub estimated: NetworkState,
    pub pred_trips: Vec<TripRecord>,
    pub init_guidance: GuidanceTable,
    pub lambda: Vec<f64>,
    pub eval_seed: u64,
}

/// A fully loaded experiment: inputs parsed, choice sets built, bounds
/// expanded. Immutable while scenarios run.
pub struct Experiment {
    pub config: ScenarioConfig,
    pub network: Network,
    pub base_demand: ODDemand,
    /// Historical link times over the whole period.
    pub historical: GuidanceTable,
    pub catalog: PathSetCatalog,
    pub coeffs: ChoiceCoefficients,
    lower: Vec<f64>,
    upper: Vec<f64>,
    delta_max: Vec<f64>,
}

impl Experiment {
    pub fn load(config: ScenarioConfig) -> Result<Self> {
        let network = load_network(config.resolve(&config.files.network))?;
        let violations = network.validate();
        if !violations.is_empty() {
            let mut msg = String::from("network is invalid: ");
            for (i, v) in violations.iter().enumerate() {
                if i > 0 {
                    msg.push_str("; ");
                }
                msg.push_str(&v.to_string());
            }
            return Err(Error::Network(msg));
        }
        let period = &config.period;
        let base_demand = load_demand(
            config.resolve(&config.files.demand),
            period.start,
            period.delta,
            period.n_intervals(),
        )?;
        let historical = match &config.files.historical_times {
            Some(path) => load_times(
                config.resolve(path),
                &network,
                period.start,
                period.delta,
                period.n_intervals(),
            )?,
            None => GuidanceTable::free_flow(&network, period.start, period.delta, period.n_intervals()),
        };
        let mut catalog = match &config.files.path_sets {
            Some(path) => load_path_sets(config.resolve(path), &network)?,
            None => PathSetCatalog::default(),
        };
        // Enumerate choice sets for demand ODs the file did not cover.
        let missing: Vec<_> = base_demand
            .pairs
            .iter()
            .filter(|(o, d)| catalog.get(*o, *d).is_err())
            .copied()
            .collect();
        for (o, d) in missing {
            catalog.insert(crate::route_choice::enumerate_paths(
                &network,
                o,
                d,
                config.choice.k_max,
            )?);
        }
        let coeffs = ChoiceCoefficients::new(config.choice.beta_cost, config.choice.beta_time)?;
        let m = network.num_gantries();
        let lower = config.tolls.lower.expand(m, "tolls.lower")?;
        let upper = config.tolls.upper.expand(m, "tolls.upper")?;
        let delta_max = config.tolls.delta_max.expand(m, "tolls.delta_max")?;
        for g in 0..m {
            if lower[g] > upper[g] || delta_max[g] < 0.0 {
                return Err(Error::Config(format!(
                    "gantry {g}: bad toll bounds [{}, {}] / delta {}",
                    lower[g], upper[g], delta_max[g]
                )));
            }
        }
        Ok(Experiment {
            config,
            network,
            base_demand,
            historical,
            catalog,
            coeffs,
            lower,
            upper,
            delta_max,
        })
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            network: &self.network,
            catalog: &self.catalog,
            coeffs: self.coeffs,
            en_route: self.config.choice.en_route,
            historical: &self.historical,
            settings: self.config.prediction_settings(),
        }
    }

    fn num_gantries(&self) -> usize {
        self.network.num_gantries()
    }

    fn in_tolling_window(&self, t: f64) -> bool {
        let (from, to) = self.config.period.tolling_window();
        t >= from && t < to
    }

    /// Toll vector charged for the interval starting at `t0`.
    fn toll_vector_for(
        &self,
        kind: ScenarioKind,
        static_tolls: Option<&[f64]>,
        lambda: &[f64],
        t0: f64,
    ) -> Vec<f64> {
        let m = self.num_gantries();
        match kind {
            ScenarioKind::NoToll => vec![0.0; m],
            ScenarioKind::Static => {
                if self.in_tolling_window(t0) {
                    static_tolls.expect("static tolls provided").to_vec()
                } else {
                    vec![0.0; m]
                }
            }
            ScenarioKind::Predictive => lambda.to_vec(),
        }
    }

    /// The known toll schedule over a prediction horizon for scenarios that
    /// do not optimize (and for non-optimizing predictive cycles, where
    /// upcoming intervals are toll-free).
    fn fixed_horizon_schedule(
        &self,
        kind: ScenarioKind,
        static_tolls: Option<&[f64]>,
        lambda: &[f64],
        t0: f64,
    ) -> TollSchedule {
        let period = &self.config.period;
        let h = period.horizon;
        let m = self.num_gantries();
        let mut rows = Vec::with_capacity(h);
        for i in 0..h {
            let t = t0 + i as f64 * period.delta;
            let row = match kind {
                ScenarioKind::NoToll => vec![0.0; m],
                ScenarioKind::Static => {
                    if self.in_tolling_window(t) {
                        static_tolls.expect("static tolls provided").to_vec()
                    } else {
                        vec![0.0; m]
                    }
                }
                // A non-optimizing predictive cycle still charges λ now;
                // subsequent intervals are outside the tolling window.
                ScenarioKind::Predictive => {
                    if i == 0 {
                        lambda.to_vec()
                    } else {
                        vec![0.0; m]
                    }
                }
            };
            rows.push(row);
        }
        TollSchedule::new(t0, period.delta, rows)
    }

    /// Clone of the world as the DTA's estimated state, optionally degraded
    /// by per-link count noise (vehicles dropped or duplicated).
    pub fn estimate_state(&self, world: &NetworkState, seed: u64) -> NetworkState {
        let mut estimated = clone_state(world);
        let sd = self.config.estimation.count_noise_sd;
        if sd <= 0.0 {
            return estimated;
        }
        let mut noise_rng = rng::chacha(seed, &[stream::ESTIMATION]);
        let normal = Normal::new(0.0, sd).expect("valid sd");
        let mut ghost = GHOST_ID_BASE + seed % PREDICTOR_CYCLE_STRIDE * 1024;
        let occupancy = estimated.link_occupancy();
        for (link_idx, &count) in occupancy.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let noisy = (count as f64 + normal.sample(&mut noise_rng)).round().max(0.0) as usize;
            if noisy < count {
                for _ in 0..count - noisy {
                    estimated.drop_last_on_link(link_idx);
                }
            } else {
                for _ in 0..noisy - count {
                    estimated.duplicate_last_on_link(link_idx, VehicleId(ghost));
                    ghost += 1;
                }
            }
        }
        estimated
    }

    /// Compute the static baseline: one toll vector for the whole tolling
    /// window, optimized open-loop on the predictor against the design
    /// demand (historical scaled by `static_design_multiplier`).
    pub fn compute_static_tolls(&self) -> Result<StaticTolls> {
        let period = &self.config.period;
        let seed = self.config.world.seed;
        let design = self
            .base_demand
            .scale(self.config.run.static_design_multiplier);
        let trips = generate_trips(
            &design,
            self.config.choice.informed_fraction,
            rng::derive(seed, &[stream::STATIC_GA]),
        );
        let state = NetworkState::new(&self.network, period.start as u64);
        let predictor = self.predictor();
        let shape = ScheduleShape::StaticWindow {
            period_start: period.start,
            delta: period.delta,
            n_intervals: period.n_intervals(),
            tolling_start: period.warmup_end,
            tolling_end: period.tolling_end,
        };
        let region = FeasibleRegion {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            delta: None,
            lambda: vec![0.0; self.num_gantries()],
            rows: 1,
        };
        let evaluator = Evaluator {
            predictor: &predictor,
            estimated: &state,
            trips: &trips,
            init_guidance: &self.historical,
            shape,
            seed: rng::derive(seed, &[stream::STATIC_GA, stream::EVALUATION]),
        };
        let params = self
            .config
            .ga_params(rng::derive(seed, &[stream::STATIC_GA, stream::GA]));
        let outcome = optimize(&region, &params, &evaluator)?;
        Ok(StaticTolls {
            tolls: outcome.genes,
            design_objective: outcome.best_objective,
            trace: outcome.trace,
        })
    }

    /// Run every cycle of one scenario replication. Cycle failures are
    /// recorded, not propagated; the outcome then covers the completed
    /// prefix.
    fn run_replication(
        &self,
        kind: ScenarioKind,
        demand_level: f64,
        static_tolls: Option<&[f64]>,
        replication: usize,
    ) -> ReplicationOutcome {
        let period = &self.config.period;
        let seed = self.config.world.seed;
        let rep = replication as u64;
        let world_demand = perturb(
            &self.base_demand.scale(demand_level),
            self.config.world.cov,
            rng::derive(seed, &[rep]),
        );
        let trips_all = generate_trips(
            &world_demand,
            self.config.choice.informed_fraction,
            rng::derive(seed, &[rep]),
        );
        let mut world = NetworkState::new(&self.network, period.start as u64);
        let mut recorder = FlowRecorder::new(
            period.start,
            period.delta,
            period.n_intervals(),
            self.network.num_links(),
        );
        let mut disseminated = self.historical.clone();
        let mut lambda = vec![0.0; self.num_gantries()];
        let mut cycles = Vec::with_capacity(period.n_cycles());
        let mut failed = None;

        for cycle in 0..period.n_cycles() {
            let t0 = period.start + cycle as f64 * period.delta;
            match self.run_cycle(
                kind,
                static_tolls,
                &mut world,
                &mut recorder,
                &trips_all,
                &mut disseminated,
                &mut lambda,
                cycle,
                t0,
                rep,
            ) {
                Ok(record) => cycles.push(record),
                Err(e) => {
                    failed = Some(format!("cycle {cycle}: {e}"));
                    break;
                }
            }
        }

        let series = avg_travel_time_by_departure(
            &recorder.completed,
            period.start,
            period.delta,
            period.n_intervals(),
        );
        ReplicationOutcome {
            replication,
            series,
            cycles,
            trips: recorder.completed.clone(),
            entered: recorder.entered,
            failed,
        }
    }

    /// One execution cycle: estimate, optimize (predictive, inside the
    /// tolling window), advance the world charging λ, disseminate.
    #[allow(clippy::too_many_arguments)]
    fn run_cycle(
        &self,
        kind: ScenarioKind,
        static_tolls: Option<&[f64]>,
        world: &mut NetworkState,
        recorder: &mut FlowRecorder,
        trips_all: &[TripRecord],
        disseminated: &mut GuidanceTable,
        lambda: &mut Vec<f64>,
        cycle: usize,
        t0: f64,
        rep: u64,
    ) -> Result<CycleRecord> {
        let period = &self.config.period;
        let delta = period.delta;
        let h = period.horizon;
        let seed = self.config.world.seed;
        let wall = Instant::now();
        let cycle_u = cycle as u64;

        let applied = self.toll_vector_for(kind, static_tolls, lambda, t0);

        // Estimation happens on the state at t0, before the world moves.
        let estimated = self.estimate_state(
            world,
            rng::derive(seed, &[rep, cycle_u, stream::ESTIMATION]),
        );
        let pred_demand = self.base_demand.restrict(t0, t0 + h as f64 * delta);
        let pred_trips = generate_trips_with_base(
            &pred_demand,
            self.config.choice.informed_fraction,
            rng::derive(seed, &[rep, cycle_u, stream::PREDICTOR_TRIPS]),
            PREDICTOR_ID_BASE + cycle_u * PREDICTOR_CYCLE_STRIDE,
        );
        let init_guidance = disseminated.rebase(&self.network, t0, h);
        let eval_seed = rng::derive(seed, &[rep, cycle_u, stream::EVALUATION]);
        let predictor = self.predictor();

        // Optimize only when both the current and the next interval lie in
        // the tolling window: the first tolling interval's λ stays zero and
        // post-tolling intervals are toll-free.
        let optimizing = kind == ScenarioKind::Predictive
            && self.in_tolling_window(t0)
            && self.in_tolling_window(t0 + delta);

        let mut optimizer_failed = false;
        let (new_guidance, decided_next, best_objective, trace, stats) = if optimizing {
            let region = FeasibleRegion {
                lower: self.lower.clone(),
                upper: self.upper.clone(),
                delta: Some(self.delta_max.clone()),
                lambda: applied.clone(),
                rows: if self.config.tolls.reduced { 1 } else { h - 1 },
            };
            let shape = ScheduleShape::RollingHorizon {
                start: t0,
                delta,
                horizon: h,
                lambda: applied.clone(),
                reduced: self.config.tolls.reduced,
            };
            let evaluator = Evaluator {
                predictor: &predictor,
                estimated: &estimated,
                trips: &pred_trips,
                init_guidance: &init_guidance,
                shape,
                seed: eval_seed,
            };
            let params = self
                .config
                .ga_params(rng::derive(seed, &[rep, cycle_u, stream::GA]));
            match optimize(&region, &params, &evaluator) {
                Ok(outcome) => {
                    let next = outcome.schedule.rows[1].clone();
                    (
                        outcome.guidance,
                        next,
                        Some(outcome.best_objective),
                        outcome.trace,
                        outcome.stats,
                    )
                }
                Err(e) => {
                    // Carry λ forward and keep the previous guidance; the
                    // cycle still completes.
                    log::warn!("replication {rep} cycle {cycle}: optimizer failed: {e}");
                    optimizer_failed = true;
                    (
                        init_guidance.clone(),
                        applied.clone(),
                        None,
                        Vec::new(),
                        EvalStats::default(),
                    )
                }
            }
        } else {
            let schedule = self.fixed_horizon_schedule(kind, static_tolls, &applied, t0);
            let (g, _, r) = predictor.predict_consistent(
                &estimated,
                &pred_trips,
                &schedule,
                &init_guidance,
                eval_seed,
            )?;
            let next = schedule.rows[1].clone();
            let stats = EvalStats {
                evaluations: 1,
                converged: r.converged as usize,
            };
            (g, next, None, Vec::new(), stats)
        };

        // Advance the world over [t0, t0+Δ) charging λ under the guidance
        // disseminated at the end of the previous cycle.
        let cycle_tolls = TollSchedule::uniform(t0, delta, 1, applied.clone());
        let due: Vec<TripRecord> = trips_all
            .iter()
            .filter(|t| t.departure_time >= t0 && t.departure_time < t0 + delta)
            .cloned()
            .collect();
        let inputs = SimInputs {
            network: &self.network,
            catalog: &self.catalog,
            coeffs: self.coeffs,
            en_route: self.config.choice.en_route,
            guidance: disseminated,
            historical: &self.historical,
            tolls: &cycle_tolls,
        };
        advance(
            world,
            &inputs,
            &due,
            t0 + delta,
            rng::derive(seed, &[rep, cycle_u, stream::WORLD_SIM]),
            recorder,
        )?;

        *disseminated = new_guidance.clone();
        *lambda = decided_next.clone();

        Ok(CycleRecord {
            cycle,
            start: t0,
            applied,
            decided_next,
            best_objective,
            optimizer_trace: trace,
            eval_stats: stats,
            disseminated: new_guidance,
            wall_clock: wall.elapsed().as_secs_f64(),
            optimizer_failed,
        })
    }

    /// Rebuild the exact evaluation context the GA sees at the first
    /// optimizing cycle of a predictive replication. Every cycle before it
    /// charges zero tolls, so replaying the no-toll loop up to that point
    /// reproduces the world bit for bit. Used to pit the GA against
    /// exhaustive grid enumeration on identical footing.
    pub fn first_optimizing_context(
        &self,
        demand_level: f64,
        replication: usize,
    ) -> Result<EvaluationContext> {
        let period = &self.config.period;
        let seed = self.config.world.seed;
        let rep = replication as u64;
        let h = period.horizon;
        let target = (0..period.n_cycles())
            .map(|c| (c, period.start + c as f64 * period.delta))
            .find(|(_, t0)| {
                self.in_tolling_window(*t0) && self.in_tolling_window(*t0 + period.delta)
            })
            .ok_or_else(|| {
                Error::Config("tolling window too short for an optimizing cycle".into())
            })?;
        let (target_cycle, t0) = target;

        let world_demand = perturb(
            &self.base_demand.scale(demand_level),
            self.config.world.cov,
            rng::derive(seed, &[rep]),
        );
        let trips_all = generate_trips(
            &world_demand,
            self.config.choice.informed_fraction,
            rng::derive(seed, &[rep]),
        );
        let mut world = NetworkState::new(&self.network, period.start as u64);
        let mut recorder = FlowRecorder::new(
            period.start,
            period.delta,
            period.n_intervals(),
            self.network.num_links(),
        );
        let mut disseminated = self.historical.clone();
        let mut lambda = vec![0.0; self.num_gantries()];
        for cycle in 0..target_cycle {
            let t = period.start + cycle as f64 * period.delta;
            self.run_cycle(
                ScenarioKind::NoToll,
                None,
                &mut world,
                &mut recorder,
                &trips_all,
                &mut disseminated,
                &mut lambda,
                cycle,
                t,
                rep,
            )?;
        }

        let cycle_u = target_cycle as u64;
        let estimated = self.estimate_state(
            &world,
            rng::derive(seed, &[rep, cycle_u, stream::ESTIMATION]),
        );
        let pred_demand = self.base_demand.restrict(t0, t0 + h as f64 * period.delta);
        let pred_trips = generate_trips_with_base(
            &pred_demand,
            self.config.choice.informed_fraction,
            rng::derive(seed, &[rep, cycle_u, stream::PREDICTOR_TRIPS]),
            PREDICTOR_ID_BASE + cycle_u * PREDICTOR_CYCLE_STRIDE,
        );
        let init_guidance = disseminated.rebase(&self.network, t0, h);
        Ok(EvaluationContext {
            cycle: target_cycle,
            t0,
            estimated,
            pred_trips,
            init_guidance,
            lambda: vec![0.0; self.num_gantries()],
            eval_seed: rng::derive(seed, &[rep, cycle_u, stream::EVALUATION]),
        })
    }

    /// Feasible region and schedule shape for one optimizing cycle, shared
    /// by the GA and the grid oracle.
    pub fn cycle_region_and_shape(
        &self,
        context: &EvaluationContext,
    ) -> (FeasibleRegion, ScheduleShape) {
        let period = &self.config.period;
        let region = FeasibleRegion {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            delta: Some(self.delta_max.clone()),
            lambda: context.lambda.clone(),
            rows: if self.config.tolls.reduced {
                1
            } else {
                period.horizon - 1
            },
        };
        let shape = ScheduleShape::RollingHorizon {
            start: context.t0,
            delta: period.delta,
            horizon: period.horizon,
            lambda: context.lambda.clone(),
            reduced: self.config.tolls.reduced,
        };
        (region, shape)
    }

    /// Run all replications of one scenario at one demand level.
    /// Replications are independent and run concurrently.
    pub fn run_scenario(
        &self,
        kind: ScenarioKind,
        demand_level: f64,
        static_tolls: Option<&[f64]>,
    ) -> Result<PerformanceReport> {
        if kind == ScenarioKind::Static && static_tolls.is_none() {
            return Err(Error::Config(
                "static scenario needs the optimized static toll vector".into(),
            ));
        }
        let period = &self.config.period;
        let replications: Vec<ReplicationOutcome> = (0..self.config.world.replications)
            .into_par_iter()
            .map(|r| self.run_replication(kind, demand_level, static_tolls, r))
            .collect();

        let n = period.n_intervals();
        let aggregate = (0..n)
            .map(|hh| {
                let values: Vec<f64> = replications
                    .iter()
                    .filter_map(|rep| rep.series[hh].map(|(mean, _)| mean))
                    .collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            })
            .collect();

        Ok(PerformanceReport {
            kind,
            demand_level,
            period_start: period.start,
            delta: period.delta,
            n_intervals: n,
            tolling_window: period.tolling_window(),
            peak_window: period.peak_window(),
            replications,
            aggregate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const TWO_ROUTE_NETWORK: &str = "NODES\n1\n2\nLINKS\n\
         10,1,2,1000,60,600,100\n\
         11,1,2,3000,240,3600,200\n\
         GANTRIES\n10\n";

    fn demand_text() -> String {
        // Ramp up, hold, ramp down over 12 intervals.
        let rates = [10, 20, 50, 70, 70, 70, 70, 50, 30, 20, 10, 5];
        rates
            .iter()
            .enumerate()
            .map(|(h, r)| format!("1,2,{h},{r}\n"))
            .collect()
    }

    fn experiment(overrides: &[String]) -> Experiment {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("network.txt"), TWO_ROUTE_NETWORK).unwrap();
        std::fs::write(dir.path().join("demand.txt"), demand_text()).unwrap();
        let config = ScenarioConfig::parse_with_overrides(
            config::EXAMPLE_CONFIG,
            dir.path(),
            overrides,
        )
        .unwrap();
        let exp = Experiment::load(config).unwrap();
        // Keep the tempdir alive for the test's duration by leaking it;
        // inputs are already read into memory anyway.
        std::mem::forget(dir);
        exp
    }

    #[test]
    fn load_validates_and_builds_choice_sets() {
        let exp = experiment(&[]);
        assert_eq!(exp.network.num_gantries(), 1);
        assert!(exp
            .catalog
            .get(crate::network::NodeId(1), crate::network::NodeId(2))
            .is_ok());
    }

    #[test]
    fn estimate_without_noise_is_the_world() {
        let exp = experiment(&[]);
        let mut world = NetworkState::new(&exp.network, 0);
        let mut trips = generate_trips(&exp.base_demand, 1.0, 3);
        trips.retain(|t| t.departure_time < 900.0);
        let mut recorder = FlowRecorder::new(0.0, 300.0, 12, exp.network.num_links());
        let schedule = TollSchedule::zero(0.0, 300.0, 12, 1);
        let inputs = SimInputs {
            network: &exp.network,
            catalog: &exp.catalog,
            coeffs: exp.coeffs,
            en_route: false,
            guidance: &exp.historical,
            historical: &exp.historical,
            tolls: &schedule,
        };
        advance(&mut world, &inputs, &trips, 900.0, 5, &mut recorder).unwrap();
        let estimated = exp.estimate_state(&world, 17);
        assert_eq!(estimated, world);
    }

    #[test]
    fn estimation_noise_perturbs_counts() {
        let mut exp = experiment(&[]);
        exp.config.estimation.count_noise_sd = 2.0;
        let mut world = NetworkState::new(&exp.network, 0);
        let mut trips = generate_trips(&exp.base_demand, 1.0, 3);
        trips.retain(|t| t.departure_time < 900.0);
        let mut recorder = FlowRecorder::new(0.0, 300.0, 12, exp.network.num_links());
        let schedule = TollSchedule::zero(0.0, 300.0, 12, 1);
        let inputs = SimInputs {
            network: &exp.network,
            catalog: &exp.catalog,
            coeffs: exp.coeffs,
            en_route: false,
            guidance: &exp.historical,
            historical: &exp.historical,
            tolls: &schedule,
        };
        advance(&mut world, &inputs, &trips, 900.0, 5, &mut recorder).unwrap();
        assert!(world.vehicle_count() > 0, "world should hold traffic");

        let estimated = exp.estimate_state(&world, 17);
        let world_counts: Vec<f64> = world.link_occupancy().iter().map(|&c| c as f64).collect();
        let est_counts: Vec<f64> = estimated
            .link_occupancy()
            .iter()
            .map(|&c| c as f64)
            .collect();
        assert_ne!(world_counts, est_counts);
        let fit = rmsn(&est_counts, &world_counts).unwrap();
        assert!(fit > 0.0);

        // Empty world stays empty regardless of noise.
        let empty = NetworkState::new(&exp.network, 0);
        assert!(exp.estimate_state(&empty, 17).is_empty());
    }

    #[test]
    fn no_toll_scenario_charges_nothing_everywhere() {
        let exp = experiment(&["world.replications=1".into()]);
        let report = exp
            .run_scenario(ScenarioKind::NoToll, 1.0, None)
            .unwrap();
        let rep = &report.replications[0];
        assert!(rep.failed.is_none(), "{:?}", rep.failed);
        assert_eq!(rep.cycles.len(), 12);
        for c in &rep.cycles {
            assert_eq!(c.applied, vec![0.0]);
        }
        assert!(rep.trips.len() > 300, "only {} trips", rep.trips.len());
    }

    #[test]
    fn warmup_and_post_tolling_are_toll_free_and_lambda_chains() {
        let exp = experiment(&["world.replications=1".into(), "ga.max_generations=2".into()]);
        let report = exp
            .run_scenario(ScenarioKind::Predictive, 1.0, None)
            .unwrap();
        let rep = &report.replications[0];
        assert!(rep.failed.is_none(), "{:?}", rep.failed);
        let period = &exp.config.period;
        for c in &rep.cycles {
            let in_window = c.start >= period.warmup_end && c.start < period.tolling_end;
            if !in_window {
                assert_eq!(c.applied, vec![0.0], "cycle {} tolled outside window", c.cycle);
            }
        }
        // First tolling cycle applies the zero vector.
        let first_tolling = rep
            .cycles
            .iter()
            .find(|c| c.start == period.warmup_end)
            .unwrap();
        assert_eq!(first_tolling.applied, vec![0.0]);
        // Rolling-horizon chaining: every cycle's applied λ is the previous
        // cycle's committed next vector.
        for w in rep.cycles.windows(2) {
            assert_eq!(
                w[1].applied, w[0].decided_next,
                "λ chain broken between cycles {} and {}",
                w[0].cycle, w[1].cycle
            );
        }
        // At least one optimizing cycle actually ran the GA.
        assert!(rep.cycles.iter().any(|c| c.best_objective.is_some()));
    }

    #[test]
    fn reports_are_reproducible() {
        let exp = experiment(&["world.replications=2".into(), "ga.max_generations=2".into()]);
        let a = exp.run_scenario(ScenarioKind::Predictive, 1.0, None).unwrap();
        let b = exp.run_scenario(ScenarioKind::Predictive, 1.0, None).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
        for (ra, rb) in a.replications.iter().zip(&b.replications) {
            assert_eq!(ra.series, rb.series);
            assert_eq!(ra.trips, rb.trips);
            for (ca, cb) in ra.cycles.iter().zip(&rb.cycles) {
                assert_eq!(ca.applied, cb.applied);
                assert_eq!(ca.decided_next, cb.decided_next);
                assert_eq!(ca.best_objective, cb.best_objective);
                assert_eq!(ca.disseminated, cb.disseminated);
            }
        }
    }

    #[test]
    fn zero_effect_predictive_equals_no_toll_bitwise() {
        // Collapse the toll space to {0}: the predictive scenario must
        // reproduce the no-toll world exactly.
        let overrides = vec![
            "world.replications=1".into(),
            "ga.max_generations=2".into(),
            "tolls.upper=0.0".into(),
            "tolls.delta_max=0.0".into(),
        ];
        let exp = experiment(&overrides);
        let no_toll = exp.run_scenario(ScenarioKind::NoToll, 1.0, None).unwrap();
        let predictive = exp
            .run_scenario(ScenarioKind::Predictive, 1.0, None)
            .unwrap();
        assert_eq!(no_toll.aggregate, predictive.aggregate);
        assert_eq!(
            no_toll.replications[0].trips,
            predictive.replications[0].trips
        );
        assert_eq!(
            no_toll.replications[0].series,
            predictive.replications[0].series
        );
    }

    #[test]
    fn static_scenario_requires_tolls() {
        let exp = experiment(&["world.replications=1".into()]);
        assert!(exp.run_scenario(ScenarioKind::Static, 1.0, None).is_err());
        let report = exp
            .run_scenario(ScenarioKind::Static, 1.0, Some(&[1.5]))
            .unwrap();
        let rep = &report.replications[0];
        let period = &exp.config.period;
        for c in &rep.cycles {
            let in_window = c.start >= period.warmup_end && c.start < period.tolling_end;
            let expected = if in_window { vec![1.5] } else { vec![0.0] };
            assert_eq!(c.applied, expected, "cycle {}", c.cycle);
        }
    }

    #[test]
    fn empty_tolling_window_makes_predictive_match_no_toll() {
        let overrides = vec![
            "world.replications=1".into(),
            "period.warmup_end=2400.0".into(), // tolling window collapses
        ];
        let exp = experiment(&overrides);
        let no_toll = exp.run_scenario(ScenarioKind::NoToll, 1.0, None).unwrap();
        let predictive = exp
            .run_scenario(ScenarioKind::Predictive, 1.0, None)
            .unwrap();
        assert_eq!(no_toll.aggregate, predictive.aggregate);
        assert_eq!(
            no_toll.replications[0].trips,
            predictive.replications[0].trips
        );
        assert!(predictive.replications[0]
            .cycles
            .iter()
            .all(|c| c.best_objective.is_none()));
    }

    #[test]
    fn window_means_cover_the_requested_range() {
        let exp = experiment(&["world.replications=1".into()]);
        let report = exp.run_scenario(ScenarioKind::NoToll, 1.0, None).unwrap();
        let (from, to) = report.tolling_window;
        let values = report.window_values(from, to);
        assert_eq!(values.len(), 6); // 6 tolling intervals in the example config
        assert!(report.window_mean(from, to).is_some());
    }

    #[test]
    fn config_example_is_self_contained() {
        // The embedded example config parses against a real directory too.
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("network.txt"), TWO_ROUTE_NETWORK).unwrap();
        std::fs::write(dir.path().join("demand.txt"), demand_text()).unwrap();
        let config =
            ScenarioConfig::parse(config::EXAMPLE_CONFIG, Path::new(dir.path())).unwrap();
        assert!(Experiment::load(config).is_ok());
    }
}
