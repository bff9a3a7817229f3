//! Performance metrics: departure-interval travel time series, RMSN fit,
//! Welch's t-test, and improvement percentages.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::demand::TripRecord;
use crate::error::{Error, Result};

/// Mean experienced travel time per departure interval; `None` where no
/// trip departed. Each entry carries (mean seconds, trip count).
pub fn avg_travel_time_by_departure(
    trips: &[TripRecord],
    period_start: f64,
    delta: f64,
    n_intervals: usize,
) -> Vec<Option<(f64, usize)>> {
    let mut sums = vec![0.0; n_intervals];
    let mut counts = vec![0usize; n_intervals];
    for trip in trips {
        let Some(tt) = trip.experienced_tt else {
            continue;
        };
        let h = ((trip.departure_time - period_start) / delta).floor();
        if h < 0.0 {
            continue;
        }
        let h = h as usize;
        if h >= n_intervals {
            continue;
        }
        sums[h] += tt;
        counts[h] += 1;
    }
    (0..n_intervals)
        .map(|h| {
            if counts[h] > 0 {
                Some((sums[h] / counts[h] as f64, counts[h]))
            } else {
                None
            }
        })
        .collect()
}

/// Normalized root mean square error: `sqrt(n · Σ(sim-obs)²) / Σ obs`.
pub fn rmsn(simulated: &[f64], observed: &[f64]) -> Result<f64> {
    if simulated.len() != observed.len() {
        return Err(Error::ShapeMismatch(format!(
            "rmsn inputs of length {} vs {}",
            simulated.len(),
            observed.len()
        )));
    }
    let total: f64 = observed.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "rmsn needs a positive observed total".into(),
        ));
    }
    let n = simulated.len() as f64;
    let sq: f64 = simulated
        .iter()
        .zip(observed)
        .map(|(s, o)| (s - o).powi(2))
        .sum();
    Ok((n * sq).sqrt() / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

/// Welch's two-sided t-test at confidence level `alpha` (0.95 flags
/// significance when p < 0.05). Identical zero-variance samples are not
/// significant; zero-variance samples with different means are.
pub fn two_sided_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least two observations per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {alpha} outside (0, 1)"
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], m: f64| s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (sea, seb) = (va / na, vb / nb);
    let se2 = sea + seb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTestResult {
                t: 0.0,
                p: 1.0,
                significant: false,
            }
        } else {
            TTestResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                significant: true,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / (sea.powi(2) / (na - 1.0) + seb.powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        t,
        p,
        significant: p < 1.0 - alpha,
    })
}

/// `100 · (baseline - treatment) / baseline`; positive when the treatment
/// is faster.
pub fn improvement_pct(baseline_mean: f64, treatment_mean: f64) -> Result<f64> {
    if baseline_mean <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "baseline mean {baseline_mean} must be positive"
        )));
    }
    Ok(100.0 * (baseline_mean - treatment_mean) / baseline_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::VehicleId;
    use crate::network::NodeId;

    fn trip(departure: f64, tt: f64) -> TripRecord {
        TripRecord {
            vehicle: VehicleId(0),
            origin: NodeId(1),
            destination: NodeId(2),
            departure_time: departure,
            informed: true,
            chosen_path: None,
            experienced_tt: Some(tt),
        }
    }

    #[test]
    fn series_groups_by_departure_interval() {
        let trips = vec![trip(10.0, 100.0), trip(20.0, 200.0), trip(310.0, 400.0)];
        let series = avg_travel_time_by_departure(&trips, 0.0, 300.0, 3);
        assert_eq!(series[0], Some((150.0, 2)));
        assert_eq!(series[1], Some((400.0, 1)));
        assert_eq!(series[2], None);
    }

    #[test]
    fn empty_trip_list_gives_empty_series() {
        let series = avg_travel_time_by_departure(&[], 0.0, 300.0, 2);
        assert_eq!(series, vec![None, None]);
    }

    #[test]
    fn one_trip_per_interval_reproduces_times() {
        let trips = vec![trip(0.0, 111.0), trip(300.0, 222.0)];
        let series = avg_travel_time_by_departure(&trips, 0.0, 300.0, 2);
        assert_eq!(series, vec![Some((111.0, 1)), Some((222.0, 1))]);
    }

    #[test]
    fn rmsn_arithmetic() {
        assert_eq!(rmsn(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // obs (10, 10), sim (11, 9): sqrt(2·2)/20 = 0.1.
        let v = rmsn(&[11.0, 9.0], &[10.0, 10.0]).unwrap();
        assert!((v - 0.1).abs() < 1e-12, "{v}");
        // sim = 2·obs with obs (5, 5): sqrt(2·50)/10 = 1.
        let v = rmsn(&[10.0, 10.0], &[5.0, 5.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rmsn_rejects_bad_inputs() {
        assert!(rmsn(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmsn(&[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn t_test_identical_samples_not_significant() {
        let a = [1.0, 2.0, 3.0];
        let r = two_sided_t_test(&a, &a, 0.95).unwrap();
        assert!(!r.significant);
    }

    #[test]
    fn t_test_textbook_case() {
        let a: Vec<f64> = [1.0, 1.1, 0.9, 1.0, 1.05].iter().map(|v| v * 100.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 50.0).collect();
        let r = two_sided_t_test(&a, &b, 0.95).unwrap();
        assert!(r.significant, "{r:?}");
        // t = -50 / sqrt(2·55/5) = -10.66…
        assert!((r.t + 50.0 / (22.0f64).sqrt()).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn t_test_needs_two_observations() {
        assert!(two_sided_t_test(&[1.0], &[1.0, 2.0], 0.95).is_err());
    }

    #[test]
    fn t_test_zero_variance_distinct_means_is_significant() {
        let r = two_sided_t_test(&[1.0, 1.0], &[2.0, 2.0], 0.95).unwrap();
        assert!(r.significant);
    }

    #[test]
    fn improvement_conventions() {
        assert_eq!(improvement_pct(100.0, 91.0).unwrap(), 9.0);
        assert_eq!(improvement_pct(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(improvement_pct(100.0, 110.0).unwrap(), -10.0);
        assert!(improvement_pct(0.0, 1.0).is_err());
    }
}
