//! Real-coded genetic algorithm over toll schedules with batch-parallel
//! evaluation through the state predictor.
//!
//! Decision vectors cover the optimization horizon (one interval less than
//! the prediction horizon); the first interval's tolls are pinned to the
//! previous cycle's decision. Constraints are hard: box bounds per gantry
//! and a tube limiting interval-to-interval change, enforced by projection.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::demand::TripRecord;
use crate::error::{Error, Result};
use crate::guidance::GuidanceTable;
use crate::prediction::{objective, Predictor};
use crate::rng;
use crate::supply::NetworkState;
use crate::tolls::TollSchedule;

/// Search parameters of the genetic algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct GAParams {
    /// Population size N; even and at least 2.
    pub population: usize,
    pub crossover_probability: f64,
    pub mutation_probability: f64,
    pub sbx_eta: f64,
    pub mutation_eta: f64,
    /// Generation cap G_max.
    pub max_generations: usize,
    /// Wall-clock budget T_max in seconds; no generation starts after it.
    pub time_budget: f64,
    /// Evaluations run concurrently in batches of this size.
    pub batch_size: usize,
    pub seed: u64,
}

impl GAParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::Config(format!(
                "population must be even and >= 2, got {}",
                self.population
            )));
        }
        for (p, name) in [
            (self.crossover_probability, "crossover probability"),
            (self.mutation_probability, "mutation probability"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.max_generations < 1 || self.time_budget <= 0.0 {
            return Err(Error::Config("budgets must be positive".into()));
        }
        if self.batch_size < 1 || self.batch_size > self.population {
            return Err(Error::Config(format!(
                "batch size {} outside 1..={}",
                self.batch_size, self.population
            )));
        }
        Ok(())
    }
}

/// One candidate strategy: the flattened decision vector plus evaluation
/// results.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<f64>,
    pub objective: Option<f64>,
    pub rank: Option<usize>,
    /// Consistent guidance from this strategy's evaluation.
    pub guidance: Option<GuidanceTable>,
}

impl Individual {
    pub fn new(genes: Vec<f64>) -> Self {
        Individual {
            genes,
            objective: None,
            rank: None,
            guidance: None,
        }
    }
}

/// The feasible set: per-gantry box bounds intersected with a change tube.
/// `rows = 1` covers both the reduced variant (one vector repeated over the
/// horizon) and the static baseline (`delta = None`, box only); the full
/// variant chains the tube row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Max change against the previous interval; `None` disables the tube.
    pub delta: Option<Vec<f64>>,
    /// Anchor toll vector (the committed first-interval tolls).
    pub lambda: Vec<f64>,
    /// Decision rows: 1 when reduced, H-1 for the full variant.
    pub rows: usize,
}

impl FeasibleRegion {
    pub fn num_gantries(&self) -> usize {
        self.lower.len()
    }

    pub fn dims(&self) -> usize {
        self.rows * self.num_gantries()
    }

    fn interval(&self, gantry: usize, previous: f64) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (self.lower[gantry], self.upper[gantry]);
        if let Some(delta) = &self.delta {
            lo = lo.max(previous - delta[gantry]);
            hi = hi.min(previous + delta[gantry]);
        }
        if lo > hi {
            return Err(Error::InfeasibleConstraints(format!(
                "gantry {gantry}: empty interval [{lo}, {hi}] around {previous}"
            )));
        }
        Ok((lo, hi))
    }

    /// Project a decision vector onto the feasible set, row by row: each
    /// row is clamped into the tube around the repaired previous row
    /// intersected with the box. Idempotent on feasible input.
    pub fn clamp(&self, genes: &mut [f64]) -> Result<()> {
        let m = self.num_gantries();
        assert_eq!(genes.len(), self.dims());
        for row in 0..self.rows {
            for gantry in 0..m {
                let previous = if row == 0 {
                    self.lambda[gantry]
                } else {
                    genes[(row - 1) * m + gantry]
                };
                let (lo, hi) = self.interval(gantry, previous)?;
                let cell = &mut genes[row * m + gantry];
                *cell = cell.clamp(lo, hi);
            }
        }
        Ok(())
    }

    /// Exact feasibility check along the same chained intervals used by
    /// [`FeasibleRegion::clamp`].
    pub fn contains(&self, genes: &[f64]) -> bool {
        let m = self.num_gantries();
        if genes.len() != self.dims() {
            return false;
        }
        for row in 0..self.rows {
            for gantry in 0..m {
                let previous = if row == 0 {
                    self.lambda[gantry]
                } else {
                    genes[(row - 1) * m + gantry]
                };
                let Ok((lo, hi)) = self.interval(gantry, previous) else {
                    return false;
                };
                let v = genes[row * m + gantry];
                if v < lo || v > hi {
                    return false;
                }
            }
        }
        true
    }

    /// Uniform sample: row 0 in the tube around λ, later rows chained on
    /// the previously sampled row.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let m = self.num_gantries();
        let mut genes = vec![0.0; self.dims()];
        for row in 0..self.rows {
            for gantry in 0..m {
                let previous = if row == 0 {
                    self.lambda[gantry]
                } else {
                    genes[(row - 1) * m + gantry]
                };
                let (lo, hi) = self.interval(gantry, previous)?;
                genes[row * m + gantry] = if lo == hi {
                    lo
                } else {
                    lo + rng.gen::<f64>() * (hi - lo)
                };
            }
        }
        Ok(genes)
    }
}

/// How a decision vector becomes a toll schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleShape {
    /// Rows 2..H of a prediction horizon; row 1 is the committed λ.
    /// When `reduced`, the single decision row repeats across the horizon.
    RollingHorizon {
        start: f64,
        delta: f64,
        horizon: usize,
        lambda: Vec<f64>,
        reduced: bool,
    },
    /// One vector applied over the tolling window of a full period; other
    /// intervals are toll-free.
    StaticWindow {
        period_start: f64,
        delta: f64,
        n_intervals: usize,
        tolling_start: f64,
        tolling_end: f64,
    },
}

impl ScheduleShape {
    pub fn build(&self, genes: &[f64]) -> TollSchedule {
        match self {
            ScheduleShape::RollingHorizon {
                start,
                delta,
                horizon,
                lambda,
                reduced,
            } => {
                let m = lambda.len();
                let mut rows = Vec::with_capacity(*horizon);
                rows.push(lambda.clone());
                if *reduced {
                    for _ in 1..*horizon {
                        rows.push(genes.to_vec());
                    }
                } else {
                    assert_eq!(genes.len(), m * (*horizon - 1));
                    for chunk in genes.chunks(m) {
                        rows.push(chunk.to_vec());
                    }
                }
                let mut schedule = TollSchedule::new(*start, *delta, rows);
                schedule.reduced = *reduced;
                schedule
            }
            ScheduleShape::StaticWindow {
                period_start,
                delta,
                n_intervals,
                tolling_start,
                tolling_end,
            } => {
                let mut rows = Vec::with_capacity(*n_intervals);
                for h in 0..*n_intervals {
                    let t = period_start + *delta * h as f64;
                    if t >= *tolling_start && t < *tolling_end {
                        rows.push(genes.to_vec());
                    } else {
                        rows.push(vec![0.0; genes.len()]);
                    }
                }
                TollSchedule::new(*period_start, *delta, rows)
            }
        }
    }
}

/// Simulated binary crossover with distribution index `eta`. With
/// probability `1 - crossover_probability` the children are plain copies.
/// Children are repaired onto the feasible region.
pub fn sbx_crossover(
    parent1: &Individual,
    parent2: &Individual,
    eta: f64,
    crossover_probability: f64,
    region: &FeasibleRegion,
    rng: &mut impl Rng,
) -> Result<(Individual, Individual)> {
    let mut c1 = parent1.genes.clone();
    let mut c2 = parent2.genes.clone();
    if rng.gen::<f64>() < crossover_probability {
        for i in 0..c1.len() {
            let (v1, v2) = (parent1.genes[i], parent2.genes[i]);
            if (v1 - v2).abs() < 1e-14 {
                continue; // equal genes are a fixed point of the operator
            }
            let u: f64 = rng.gen();
            let beta = if u <= 0.5 {
                (2.0 * u).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
            };
            c1[i] = 0.5 * ((1.0 + beta) * v1 + (1.0 - beta) * v2);
            c2[i] = 0.5 * ((1.0 - beta) * v1 + (1.0 + beta) * v2);
        }
    }
    region.clamp(&mut c1)?;
    region.clamp(&mut c2)?;
    Ok((Individual::new(c1), Individual::new(c2)))
}

/// Bounded polynomial mutation: each gene mutates with probability `p_m`
/// inside its box bounds; the result is repaired onto the tube. A gene
/// sitting on a bound can only move inward.
pub fn polynomial_mutation(
    individual: &Individual,
    eta: f64,
    p_m: f64,
    region: &FeasibleRegion,
    rng: &mut impl Rng,
) -> Result<Individual> {
    let m = region.num_gantries();
    let mut genes = individual.genes.clone();
    for (i, gene) in genes.iter_mut().enumerate() {
        if rng.gen::<f64>() >= p_m {
            continue;
        }
        let (yl, yu) = (region.lower[i % m], region.upper[i % m]);
        let span = yu - yl;
        if span <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        let mut_pow = 1.0 / (eta + 1.0);
        let delta_q = if u <= 0.5 {
            let d1 = (*gene - yl) / span;
            let val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            val.powf(mut_pow) - 1.0
        } else {
            let d2 = (yu - *gene) / span;
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - val.powf(mut_pow)
        };
        *gene = (*gene + delta_q * span).clamp(yl, yu);
    }
    region.clamp(&mut genes)?;
    Ok(Individual::new(genes))
}

/// Binary tournament on rank: draw two indices with replacement, the
/// better rank wins, ties go to the lower index.
pub fn tournament_select(population: &[Individual], rng: &mut impl Rng) -> usize {
    assert!(!population.is_empty());
    let a = rng.gen_range(0..population.len());
    let b = rng.gen_range(0..population.len());
    let rank = |i: usize| population[i].rank.expect("population must be ranked");
    match rank(a).cmp(&rank(b)) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => a.min(b),
    }
}

/// Keep the best `n` of a merged population: stable ascending sort on the
/// objective (minimization), ranks reassigned 1..=n.
pub fn rank_and_truncate(mut mixed: Vec<Individual>, n: usize) -> Result<Vec<Individual>> {
    for (i, ind) in mixed.iter().enumerate() {
        if ind.objective.is_none() {
            return Err(Error::Unevaluated(i));
        }
    }
    mixed.sort_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap()));
    mixed.truncate(n);
    for (i, ind) in mixed.iter_mut().enumerate() {
        ind.rank = Some(i + 1);
    }
    Ok(mixed)
}

/// Everything needed to score one strategy: the predictor, the estimated
/// state shared by all clones, the demand realization, the warm-start
/// guidance, and the schedule shape. All evaluations of one cycle share a
/// seed (common random numbers), so equal decision vectors score equally
/// and results are independent of batching and order.
pub struct Evaluator<'a> {
    pub predictor: &'a Predictor<'a>,
    pub estimated: &'a NetworkState,
    pub trips: &'a [TripRecord],
    pub init_guidance: &'a GuidanceTable,
    pub shape: ScheduleShape,
    pub seed: u64,
}

/// Aggregate consistency statistics across evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub evaluations: usize,
    pub converged: usize,
}

impl<'a> Evaluator<'a> {
    pub fn evaluate(&self, genes: &[f64]) -> Result<(f64, GuidanceTable, bool)> {
        let schedule = self.shape.build(genes);
        let (guidance, result, report) = self.predictor.predict_consistent(
            self.estimated,
            self.trips,
            &schedule,
            self.init_guidance,
            self.seed,
        )?;
        Ok((objective(&result), guidance, report.converged))
    }
}

/// Evaluate strategies in batches of `batch_size`; within a batch the
/// evaluations run concurrently on independent state clones. Results are
/// written back index-aligned and are identical to sequential evaluation.
/// Every strategy is checked against the feasible region before running.
pub fn evaluate_batch(
    individuals: &mut [Individual],
    evaluator: &Evaluator,
    region: &FeasibleRegion,
    batch_size: usize,
    stats: &mut EvalStats,
) -> Result<()> {
    assert!(batch_size >= 1);
    for (i, ind) in individuals.iter().enumerate() {
        assert!(
            region.contains(&ind.genes),
            "strategy {i} violates toll constraints: {:?}",
            ind.genes
        );
    }
    let mut offset = 0;
    for batch in individuals.chunks_mut(batch_size) {
        let results: Vec<Result<(f64, GuidanceTable, bool)>> = batch
            .par_iter()
            .map(|ind| evaluator.evaluate(&ind.genes))
            .collect();
        for (i, (ind, result)) in batch.iter_mut().zip(results).enumerate() {
            let (obj, guidance, converged) = result.map_err(|e| Error::Evaluation {
                index: offset + i,
                source: Box::new(e),
            })?;
            ind.objective = Some(obj);
            ind.guidance = Some(guidance);
            stats.evaluations += 1;
            if converged {
                stats.converged += 1;
            }
        }
        offset += batch.len();
    }
    Ok(())
}

/// Uniformly sampled feasible population of size `n`.
pub fn init_population(
    n: usize,
    region: &FeasibleRegion,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Individual>> {
    (0..n)
        .map(|_| Ok(Individual::new(region.sample(rng)?)))
        .collect()
}

/// One generation's progress line.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub best_objective: f64,
    pub mean_objective: f64,
    /// Seconds elapsed when the generation started.
    pub started_at: f64,
    /// Seconds elapsed when its evaluations finished.
    pub elapsed: f64,
}

/// Result of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    /// Best schedule found, with the committed λ prepended as interval 1
    /// (rolling-horizon shape) or expanded over the tolling window
    /// (static shape).
    pub schedule: TollSchedule,
    /// The best strategy's decision vector.
    pub genes: Vec<f64>,
    /// Consistent guidance from the best strategy's evaluation.
    pub guidance: GuidanceTable,
    pub best_objective: f64,
    pub trace: Vec<TraceRow>,
    pub stats: EvalStats,
}

fn trace_row(generation: usize, population: &[Individual], start: Instant, started_at: f64) -> TraceRow {
    let objectives: Vec<f64> = population
        .iter()
        .map(|i| i.objective.expect("ranked population"))
        .collect();
    TraceRow {
        generation,
        best_objective: objectives.iter().copied().fold(f64::INFINITY, f64::min),
        mean_objective: objectives.iter().sum::<f64>() / objectives.len() as f64,
        started_at,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

/// Run the generational loop: initialize, evaluate in parallel batches,
/// then select → crossover → mutate → evaluate → elitist 2N→N merge until
/// the generation cap or the time budget stops it.
pub fn optimize(
    region: &FeasibleRegion,
    params: &GAParams,
    evaluator: &Evaluator,
) -> Result<OptimizeOutcome> {
    params.validate()?;
    let start = Instant::now();
    let mut ga_rng = rng::chacha(params.seed, &[rng::stream::GA]);
    let mut stats = EvalStats::default();

    let mut population = init_population(params.population, region, &mut ga_rng)?;
    evaluate_batch(
        &mut population,
        evaluator,
        region,
        params.batch_size,
        &mut stats,
    )?;
    let mut population = rank_and_truncate(population, params.population)?;
    let mut trace = vec![trace_row(1, &population, start, 0.0)];

    for generation in 2..=params.max_generations {
        let started_at = start.elapsed().as_secs_f64();
        if started_at > params.time_budget {
            break;
        }
        let mut children = Vec::with_capacity(params.population);
        while children.len() < params.population {
            let p1 = tournament_select(&population, &mut ga_rng);
            let p2 = tournament_select(&population, &mut ga_rng);
            let (c1, c2) = sbx_crossover(
                &population[p1],
                &population[p2],
                params.sbx_eta,
                params.crossover_probability,
                region,
                &mut ga_rng,
            )?;
            for child in [c1, c2] {
                if children.len() < params.population {
                    children.push(polynomial_mutation(
                        &child,
                        params.mutation_eta,
                        params.mutation_probability,
                        region,
                        &mut ga_rng,
                    )?);
                }
            }
        }
        evaluate_batch(
            &mut children,
            evaluator,
            region,
            params.batch_size,
            &mut stats,
        )?;
        let mut merged = population;
        merged.extend(children);
        population = rank_and_truncate(merged, params.population)?;
        trace.push(trace_row(generation, &population, start, started_at));
    }

    let best = &population[0];
    Ok(OptimizeOutcome {
        schedule: evaluator.shape.build(&best.genes),
        genes: best.genes.clone(),
        guidance: best.guidance.clone().expect("best is evaluated"),
        best_objective: best.objective.expect("best is evaluated"),
        trace,
        stats,
    })
}

/// All grid points of a single-row region discretized at `levels` values
/// per gantry, capped at 10,000 combinations.
pub fn grid_candidates(region: &FeasibleRegion, levels: usize) -> Result<Vec<Vec<f64>>> {
    if region.rows != 1 {
        return Err(Error::InvalidArgument(
            "grid enumeration needs a single-row (reduced or static) region".into(),
        ));
    }
    if levels < 1 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let m = region.num_gantries();
    let total = (levels as u64).checked_pow(m as u32).unwrap_or(u64::MAX);
    if total > 10_000 {
        return Err(Error::InvalidArgument(format!(
            "grid of {total} points exceeds the 10,000 evaluation guard"
        )));
    }
    let mut axes = Vec::with_capacity(m);
    for gantry in 0..m {
        let (lo, hi) = region.interval(gantry, region.lambda[gantry])?;
        let axis: Vec<f64> = if levels == 1 {
            vec![lo]
        } else {
            (0..levels)
                .map(|i| lo + (hi - lo) * i as f64 / (levels - 1) as f64)
                .collect()
        };
        axes.push(axis);
    }
    let mut grid = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(grid.len() * axis.len());
        for prefix in &grid {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        grid = next;
    }
    Ok(grid)
}

/// Exhaustively evaluate every grid point; returns (genes, objective) rows
/// in grid order plus the argmin index.
pub fn grid_oracle(
    region: &FeasibleRegion,
    levels: usize,
    evaluator: &Evaluator,
) -> Result<(Vec<(Vec<f64>, f64)>, usize)> {
    let candidates = grid_candidates(region, levels)?;
    let results: Vec<Result<(f64, GuidanceTable, bool)>> = candidates
        .par_iter()
        .map(|genes| evaluator.evaluate(genes))
        .collect();
    let mut table = Vec::with_capacity(candidates.len());
    for (genes, result) in candidates.into_iter().zip(results) {
        let (obj, _, _) = result?;
        table.push((genes, obj));
    }
    let argmin = table
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok((table, argmin))
}
