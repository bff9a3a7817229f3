//! Time-dependent link travel-time tables: predictive guidance disseminated
//! to travelers, and historical times used by uninformed ones.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;

/// Travel time per (link, interval) over a window of uniform intervals.
/// Lookups outside the window clamp to the nearest covered interval, so a
/// table never answers "unknown" once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTable {
    /// Window start, seconds.
    pub start: f64,
    /// Interval width, seconds.
    pub delta: f64,
    pub n_links: usize,
    pub n_intervals: usize,
    /// Flat link-major matrix: `times[link * n_intervals + interval]`.
    times: Vec<f64>,
}

impl GuidanceTable {
    pub fn new(start: f64, delta: f64, n_links: usize, n_intervals: usize, fill: f64) -> Self {
        assert!(delta > 0.0 && n_intervals > 0);
        GuidanceTable {
            start,
            delta,
            n_links,
            n_intervals,
            times: vec![fill; n_links * n_intervals],
        }
    }

    /// Table holding each link's free-flow time in every interval.
    pub fn free_flow(network: &Network, start: f64, delta: f64, n_intervals: usize) -> Self {
        let mut table = Self::new(start, delta, network.num_links(), n_intervals, 0.0);
        for (idx, link) in network.links.iter().enumerate() {
            for h in 0..n_intervals {
                table.set(idx, h, link.free_flow_time);
            }
        }
        table
    }

    pub fn end(&self) -> f64 {
        self.start + self.delta * self.n_intervals as f64
    }

    /// True when the table's window spans `[start, end)`.
    pub fn covers(&self, start: f64, end: f64) -> bool {
        self.start <= start && self.end() >= end
    }

    fn interval_of(&self, time: f64) -> usize {
        let h = ((time - self.start) / self.delta).floor();
        (h.max(0.0) as usize).min(self.n_intervals - 1)
    }

    pub fn get(&self, link_idx: usize, h: usize) -> f64 {
        self.times[link_idx * self.n_intervals + h.min(self.n_intervals - 1)]
    }

    pub fn set(&mut self, link_idx: usize, h: usize, value: f64) {
        self.times[link_idx * self.n_intervals + h] = value;
    }

    /// Travel time of a link for a vehicle entering at `time`.
    pub fn time_at(&self, link_idx: usize, time: f64) -> f64 {
        self.get(link_idx, self.interval_of(time))
    }

    /// Resample this table onto a new window, clamping at the edges and
    /// flooring every cell at the link's free-flow time.
    pub fn rebase(&self, network: &Network, start: f64, n_intervals: usize) -> GuidanceTable {
        let mut out = GuidanceTable::new(start, self.delta, self.n_links, n_intervals, 0.0);
        for (idx, link) in network.links.iter().enumerate() {
            for h in 0..n_intervals {
                let t = start + (h as f64 + 0.5) * self.delta;
                out.set(idx, h, self.time_at(idx, t).max(link.free_flow_time));
            }
        }
        out
    }

    /// Serialize as `link_id,interval,seconds` rows (one per cell).
    pub fn serialize(&self, network: &Network) -> String {
        let mut out = String::new();
        for (idx, link) in network.links.iter().enumerate() {
            for h in 0..self.n_intervals {
                out.push_str(&format!("{},{},{:.6}\n", link.id, h, self.get(idx, h)));
            }
        }
        out
    }
}

/// Parse `link_id,interval,seconds` rows onto a window anchored at `start`.
/// Cells absent from the file keep the link's free-flow time.
pub fn parse_times(
    text: &str,
    file: &str,
    network: &Network,
    start: f64,
    delta: f64,
    n_intervals: usize,
) -> Result<GuidanceTable> {
    let mut table = GuidanceTable::free_flow(network, start, delta, n_intervals);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(file, lineno, "expected link,interval,seconds"));
        }
        let link_id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("invalid link id {:?}", fields[0])))?;
        let link_idx = network
            .link_index(crate::network::LinkId(link_id))
            .ok_or_else(|| Error::parse(file, lineno, format!("unknown link {link_id}")))?;
        let h: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("invalid interval {:?}", fields[1])))?;
        if h >= n_intervals {
            return Err(Error::parse(
                file,
                lineno,
                format!("interval {h} out of range (have {n_intervals})"),
            ));
        }
        let seconds: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(file, lineno, format!("invalid seconds {:?}", fields[2])))?;
        if seconds <= 0.0 {
            return Err(Error::parse(file, lineno, "non-positive travel time"));
        }
        table.set(link_idx, h, seconds);
    }
    Ok(table)
}

/// Load a historical travel-time file onto the given window.
pub fn load_times(
    path: impl AsRef<Path>,
    network: &Network,
    start: f64,
    delta: f64,
    n_intervals: usize,
) -> Result<GuidanceTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_times(
        &text,
        &path.display().to_string(),
        network,
        start,
        delta,
        n_intervals,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    fn two_link_net() -> Network {
        parse_network(
            "NODES\n1\n2\n3\nLINKS\n10,1,2,1000,60,1800,50\n11,2,3,2000,120,1800,50\nGANTRIES\n",
            "test",
        )
        .unwrap()
    }

    #[test]
    fn lookups_clamp_outside_the_window() {
        let net = two_link_net();
        let mut g = GuidanceTable::free_flow(&net, 300.0, 300.0, 2);
        g.set(0, 0, 100.0);
        g.set(0, 1, 200.0);
        assert_eq!(g.time_at(0, 0.0), 100.0); // before window
        assert_eq!(g.time_at(0, 450.0), 100.0);
        assert_eq!(g.time_at(0, 600.0), 200.0);
        assert_eq!(g.time_at(0, 1e9), 200.0); // after window
    }

    #[test]
    fn rebase_shifts_and_floors() {
        let net = two_link_net();
        let mut g = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        g.set(0, 1, 90.0);
        g.set(0, 2, 30.0); // below free-flow, must floor on rebase
        let shifted = g.rebase(&net, 300.0, 3);
        assert_eq!(shifted.get(0, 0), 90.0);
        assert_eq!(shifted.get(0, 1), 60.0); // floored at free-flow
        assert_eq!(shifted.get(0, 2), 60.0); // clamped past the source window
    }

    #[test]
    fn serialize_parse_round_trip() {
        let net = two_link_net();
        let mut g = GuidanceTable::free_flow(&net, 0.0, 300.0, 2);
        g.set(1, 1, 150.25);
        let text = g.serialize(&net);
        let back = parse_times(&text, "rt", &net, 0.0, 300.0, 2).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn coverage_check() {
        let net = two_link_net();
        let g = GuidanceTable::free_flow(&net, 0.0, 300.0, 3);
        assert!(g.covers(0.0, 900.0));
        assert!(g.covers(300.0, 600.0));
        assert!(!g.covers(0.0, 901.0));
    }
}
