//! Toll schedules: one toll value per (prediction interval, gantry).

/// Matrix of toll values over a window of uniform intervals, one column per
/// gantry in network order. Lookups clamp to the window edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TollSchedule {
    /// Window start, seconds.
    pub start: f64,
    /// Tolling interval width, seconds.
    pub delta: f64,
    /// `rows[h][gantry]`, h = 0..H.
    pub rows: Vec<Vec<f64>>,
    /// True when rows 1..H repeat a single optimized vector.
    pub reduced: bool,
}

impl TollSchedule {
    pub fn new(start: f64, delta: f64, rows: Vec<Vec<f64>>) -> Self {
        assert!(!rows.is_empty());
        TollSchedule {
            start,
            delta,
            rows,
            reduced: false,
        }
    }

    /// All-zero schedule over `h` intervals for `m` gantries.
    pub fn zero(start: f64, delta: f64, h: usize, m: usize) -> Self {
        Self::new(start, delta, vec![vec![0.0; m]; h])
    }

    /// Schedule repeating one toll vector over `h` intervals.
    pub fn uniform(start: f64, delta: f64, h: usize, tolls: Vec<f64>) -> Self {
        Self::new(start, delta, vec![tolls; h])
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn num_gantries(&self) -> usize {
        self.rows[0].len()
    }

    pub fn end(&self) -> f64 {
        self.start + self.delta * self.rows.len() as f64
    }

    pub fn covers(&self, start: f64, end: f64) -> bool {
        self.start <= start && self.end() >= end
    }

    /// Toll charged at a gantry for a vehicle entering its link at `time`.
    pub fn toll_at(&self, gantry_idx: usize, time: f64) -> f64 {
        let h = ((time - self.start) / self.delta).floor();
        let h = (h.max(0.0) as usize).min(self.rows.len() - 1);
        self.rows[h][gantry_idx]
    }

    /// First-interval toll vector (the λ actually charged).
    pub fn first_row(&self) -> &[f64] {
        &self.rows[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toll_lookup_clamps() {
        let s = TollSchedule::new(300.0, 300.0, vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(s.toll_at(0, 0.0), 1.0);
        assert_eq!(s.toll_at(0, 300.0), 1.0);
        assert_eq!(s.toll_at(0, 650.0), 2.0);
        assert_eq!(s.toll_at(0, 5000.0), 3.0);
        assert_eq!(s.end(), 1200.0);
        assert!(s.covers(300.0, 1200.0));
        assert!(!s.covers(0.0, 1200.0));
    }
}
