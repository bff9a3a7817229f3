//! Report serialization: plot-ready CSV files with deterministic
//! formatting, plus cross-scenario comparison in the improvement-table
//! layout.

use std::collections::BTreeMap;
use std::path::Path;

use crate::closed_loop::metrics::{improvement_pct, two_sided_t_test, TTestResult};
use crate::closed_loop::{PerformanceReport, ScenarioKind};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::route_choice::PathSetCatalog;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(";")
}

/// The travel-time series of one report, as written to and read from a
/// series CSV. Metadata lines (`# key=value`) carry the window layout so
/// comparisons can be made from the file alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub metadata: BTreeMap<String, String>,
    /// Interval starts.
    pub starts: Vec<f64>,
    pub delta: f64,
    /// Aggregate mean per interval.
    pub aggregate: Vec<Option<f64>>,
    /// Per-replication means.
    pub rep_means: Vec<Vec<Option<f64>>>,
}

impl SeriesData {
    pub fn from_report(report: &PerformanceReport) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("scenario".into(), report.kind.to_string());
        metadata.insert("demand_level".into(), fmt(report.demand_level));
        metadata.insert("period_start".into(), fmt(report.period_start));
        metadata.insert("delta".into(), fmt(report.delta));
        metadata.insert("tolling_start".into(), fmt(report.tolling_window.0));
        metadata.insert("tolling_end".into(), fmt(report.tolling_window.1));
        if let Some((a, b)) = report.peak_window {
            metadata.insert("peak_start".into(), fmt(a));
            metadata.insert("peak_end".into(), fmt(b));
        }
        let starts = (0..report.n_intervals)
            .map(|h| report.period_start + h as f64 * report.delta)
            .collect();
        let rep_means = report
            .replications
            .iter()
            .map(|r| r.series.iter().map(|c| c.map(|(m, _)| m)).collect())
            .collect();
        SeriesData {
            metadata,
            starts,
            delta: report.delta,
            aggregate: report.aggregate.clone(),
            rep_means,
        }
    }

    pub fn window(&self, key: &str) -> Option<(f64, f64)> {
        let a = self.metadata.get(&format!("{key}_start"))?.parse().ok()?;
        let b = self.metadata.get(&format!("{key}_end"))?.parse().ok()?;
        Some((a, b))
    }

    /// Aggregate values inside `[from, to)`, keeping interval alignment.
    fn window_values(&self, from: f64, to: f64) -> Vec<Option<f64>> {
        self.starts
            .iter()
            .zip(&self.aggregate)
            .filter(|(t, _)| **t >= from && **t < to)
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("interval_start,interval_end,aggregate_mean");
        for r in 0..self.rep_means.len() {
            out.push_str(&format!(",rep{r}"));
        }
        out.push('\n');
        for (h, start) in self.starts.iter().enumerate() {
            out.push_str(&fmt(*start));
            out.push(',');
            out.push_str(&fmt(start + self.delta));
            out.push(',');
            if let Some(v) = self.aggregate[h] {
                out.push_str(&fmt(v));
            }
            for rep in &self.rep_means {
                out.push(',');
                if let Some(v) = rep[h] {
                    out.push_str(&fmt(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut starts = Vec::new();
        let mut aggregate = Vec::new();
        let mut rep_columns = 0usize;
        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        let mut delta = 0.0;
        let mut saw_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !saw_header {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 3 || fields[0] != "interval_start" {
                    return Err(Error::parse(file, lineno, "bad series header"));
                }
                rep_columns = fields.len() - 3;
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + rep_columns {
                return Err(Error::parse(file, lineno, "ragged series row"));
            }
            let start: f64 = fields[0]
                .parse()
                .map_err(|_| Error::parse(file, lineno, "bad interval start"))?;
            let end: f64 = fields[1]
                .parse()
                .map_err(|_| Error::parse(file, lineno, "bad interval end"))?;
            delta = end - start;
            starts.push(start);
            let cell = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::parse(file, lineno, "bad mean value"))
                }
            };
            aggregate.push(cell(fields[2])?);
            rows.push(
                fields[3..]
                    .iter()
                    .map(|s| cell(s))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if !saw_header {
            return Err(Error::parse(file, 1, "empty series file"));
        }
        let rep_means = (0..rep_columns)
            .map(|r| rows.iter().map(|row| row[r]).collect())
            .collect();
        Ok(SeriesData {
            metadata,
            starts,
            delta,
            aggregate,
            rep_means,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// One comparison row: baseline vs treatment over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub window: String,
    pub baseline_mean: f64,
    pub treatment_mean: f64,
    pub improvement_pct: f64,
    pub t_test: TTestResult,
    pub intervals: usize,
}

/// Compare two series over `[from, to)`: the first argument is the
/// baseline. Interval grids must match exactly.
pub fn compare_window(
    baseline: &SeriesData,
    treatment: &SeriesData,
    window: &str,
    from: f64,
    to: f64,
) -> Result<ComparisonRow> {
    if baseline.starts != treatment.starts {
        return Err(Error::ShapeMismatch(
            "series cover different intervals".into(),
        ));
    }
    let a = baseline.window_values(from, to);
    let b = treatment.window_values(from, to);
    let paired: Vec<(f64, f64)> = a
        .iter()
        .zip(&b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    if paired.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "window [{from}, {to}) holds {} populated intervals, need at least 2",
            paired.len()
        )));
    }
    let xs: Vec<f64> = paired.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = paired.iter().map(|(_, y)| *y).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (ma, mb) = (mean(&xs), mean(&ys));
    Ok(ComparisonRow {
        window: window.to_string(),
        baseline_mean: ma,
        treatment_mean: mb,
        improvement_pct: improvement_pct(ma, mb)?,
        t_test: two_sided_t_test(&xs, &ys, 0.95)?,
        intervals: paired.len(),
    })
}

/// Compare two series over the tolling window and a peak window, mirroring
/// the improvement-table columns. The peak window defaults to the one in
/// the baseline's metadata.
pub fn compare(
    baseline: &SeriesData,
    treatment: &SeriesData,
    peak: Option<(f64, f64)>,
) -> Result<Vec<ComparisonRow>> {
    let tolling = baseline
        .window("tolling")
        .ok_or_else(|| Error::Config("series lacks tolling window metadata".into()))?;
    let mut rows = vec![compare_window(
        baseline, treatment, "tolling", tolling.0, tolling.1,
    )?];
    if let Some((a, b)) = peak.or_else(|| baseline.window("peak")) {
        rows.push(compare_window(baseline, treatment, "peak", a, b)?);
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "window,baseline_mean,treatment_mean,improvement_pct,t_stat,p_value,significant,intervals\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.window,
            fmt(r.baseline_mean),
            fmt(r.treatment_mean),
            fmt(r.improvement_pct),
            fmt(r.t_test.t),
            fmt(r.t_test.p),
            r.t_test.significant,
            r.intervals
        ));
    }
    out
}

/// Per-replication trip table: one row per completed trip with its path.
pub fn trips_csv(
    report: &PerformanceReport,
    replication: usize,
    network: &Network,
    catalog: &PathSetCatalog,
) -> Result<String> {
    let rep = &report.replications[replication];
    let mut out = String::from("vehicle,origin,destination,departure,path,travel_time\n");
    for trip in &rep.trips {
        let set = catalog.get(trip.origin, trip.destination)?;
        let path = trip
            .chosen_path
            .and_then(|k| set.paths.get(k))
            .map(|links| {
                links
                    .iter()
                    .map(|&l| network.link(l).id.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            trip.vehicle.0,
            trip.origin,
            trip.destination,
            fmt(trip.departure_time),
            path,
            fmt(trip.experienced_tt.unwrap_or(f64::NAN)),
        ));
    }
    Ok(out)
}

/// Per-replication cycle log. Wall-clock seconds vary across runs; every
/// other column is deterministic.
pub fn cycles_csv(report: &PerformanceReport, replication: usize) -> String {
    let rep = &report.replications[replication];
    let mut out = String::from(
        "cycle,start,applied,decided_next,best_objective,generations,evaluations,converged,optimizer_failed,wall_clock\n",
    );
    for c in &rep.cycles {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.cycle,
            fmt(c.start),
            fmt_vec(&c.applied),
            fmt_vec(&c.decided_next),
            c.best_objective.map(fmt).unwrap_or_default(),
            c.optimizer_trace.len(),
            c.eval_stats.evaluations,
            c.eval_stats.converged,
            c.optimizer_failed,
            fmt(c.wall_clock),
        ));
    }
    out
}

/// Per-replication optimizer trace rows across cycles.
pub fn trace_csv(report: &PerformanceReport, replication: usize) -> String {
    let rep = &report.replications[replication];
    let mut out = String::from("cycle,generation,best_objective,mean_objective,elapsed\n");
    for c in &rep.cycles {
        for row in &c.optimizer_trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.cycle,
                row.generation,
                fmt(row.best_objective),
                fmt(row.mean_objective),
                fmt(row.elapsed),
            ));
        }
    }
    out
}

/// Disseminated guidance per cycle, flattened to rows.
pub fn guidance_csv(report: &PerformanceReport, replication: usize, network: &Network) -> String {
    let rep = &report.replications[replication];
    let mut out = String::from("cycle,link,interval,seconds\n");
    for c in &rep.cycles {
        for (idx, link) in network.links.iter().enumerate() {
            for h in 0..c.disseminated.n_intervals {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    c.cycle,
                    link.id,
                    h,
                    fmt(c.disseminated.get(idx, h))
                ));
            }
        }
    }
    out
}

/// Improvement-table rows: for each demand level, predictive vs each
/// baseline over the tolling and peak windows.
pub fn improvement_table(reports: &[PerformanceReport]) -> Result<String> {
    let mut out = String::from(
        "demand_level,window,baseline,improvement_pct,t_stat,p_value,significant,total_drivers\n",
    );
    let mut levels: Vec<f64> = reports.iter().map(|r| r.demand_level).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for level in levels {
        let find = |kind: ScenarioKind| {
            reports
                .iter()
                .find(|r| r.kind == kind && r.demand_level == level)
        };
        let Some(predictive) = find(ScenarioKind::Predictive) else {
            continue;
        };
        let total: u64 = predictive.replications.iter().map(|r| r.entered).sum();
        let treatment = SeriesData::from_report(predictive);
        for baseline_kind in [ScenarioKind::NoToll, ScenarioKind::Static] {
            let Some(baseline) = find(baseline_kind) else {
                continue;
            };
            let baseline_series = SeriesData::from_report(baseline);
            for row in compare(&baseline_series, &treatment, None)? {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    fmt(level),
                    row.window,
                    baseline_kind,
                    fmt(row.improvement_pct),
                    fmt(row.t_test.t),
                    fmt(row.t_test.p),
                    row.t_test.significant,
                    total,
                ));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_report(kind: ScenarioKind, means: &[f64]) -> PerformanceReport {
        let series: Vec<Option<(f64, usize)>> = means.iter().map(|m| Some((*m, 10))).collect();
        PerformanceReport {
            kind,
            demand_level: 1.0,
            period_start: 0.0,
            delta: 300.0,
            n_intervals: means.len(),
            tolling_window: (300.0, 300.0 * (means.len() as f64 - 1.0)),
            peak_window: Some((600.0, 1200.0)),
            replications: vec![crate::closed_loop::ReplicationOutcome {
                replication: 0,
                series: series.clone(),
                cycles: Vec::new(),
                trips: Vec::new(),
                entered: 100,
                failed: None,
            }],
            aggregate: means.iter().map(|m| Some(*m)).collect(),
        }
    }

    #[test]
    fn series_round_trips_through_csv() {
        let report = synthetic_report(ScenarioKind::NoToll, &[100.0, 110.0, 120.0, 115.0, 105.0]);
        let series = SeriesData::from_report(&report);
        let text = series.serialize();
        let parsed = SeriesData::parse(&text, "series").unwrap();
        assert_eq!(series, parsed);
        assert_eq!(parsed.window("tolling"), Some((300.0, 1200.0)));
        assert_eq!(parsed.window("peak"), Some((600.0, 1200.0)));
    }

    #[test]
    fn self_comparison_is_zero_and_insignificant() {
        let report = synthetic_report(ScenarioKind::NoToll, &[100.0, 110.0, 120.0, 115.0, 105.0]);
        let series = SeriesData::from_report(&report);
        let rows = compare(&series, &series, None).unwrap();
        for row in rows {
            assert_eq!(row.improvement_pct, 0.0);
            assert!(!row.t_test.significant);
        }
    }

    #[test]
    fn nine_percent_improvement_is_reported() {
        let a = synthetic_report(ScenarioKind::NoToll, &[100.0; 6]);
        let b = synthetic_report(ScenarioKind::Predictive, &[91.0; 6]);
        let rows = compare(
            &SeriesData::from_report(&a),
            &SeriesData::from_report(&b),
            None,
        )
        .unwrap();
        assert!((rows[0].improvement_pct - 9.0).abs() < 1e-12);
    }

    #[test]
    fn swapped_comparison_flips_the_sign() {
        let a = synthetic_report(ScenarioKind::NoToll, &[100.0, 102.0, 98.0, 101.0, 99.0, 100.0]);
        let b = synthetic_report(ScenarioKind::Predictive, &[91.0, 93.0, 89.0, 92.0, 90.0, 91.0]);
        let sa = SeriesData::from_report(&a);
        let sb = SeriesData::from_report(&b);
        let ab = compare(&sa, &sb, None).unwrap();
        let ba = compare(&sb, &sa, None).unwrap();
        assert!(ab[0].improvement_pct > 0.0);
        assert!(ba[0].improvement_pct < 0.0);
    }

    #[test]
    fn interval_mismatch_is_an_error() {
        let a = synthetic_report(ScenarioKind::NoToll, &[100.0; 6]);
        let b = synthetic_report(ScenarioKind::Predictive, &[91.0; 5]);
        let err = compare(
            &SeriesData::from_report(&a),
            &SeriesData::from_report(&b),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn improvement_table_lists_both_baselines() {
        let reports = vec![
            synthetic_report(ScenarioKind::NoToll, &[100.0; 6]),
            synthetic_report(ScenarioKind::Static, &[95.0; 6]),
            synthetic_report(ScenarioKind::Predictive, &[91.0; 6]),
        ];
        let table = improvement_table(&reports).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        // Header + (tolling, peak) × (no_toll, static).
        assert_eq!(lines.len(), 5, "{table}");
        assert!(table.contains("no_toll"));
        assert!(table.contains("static"));
    }
}
