//! Choice-set generation and the path-size logit route choice model used
//! for both pre-trip and en-route decisions.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path as FsPath;

use rand::Rng;

use crate::error::{Error, Result};
use crate::guidance::GuidanceTable;
use crate::network::{Network, NodeId};
use crate::tolls::TollSchedule;

/// Cost and travel time coefficients of the systematic utility. Both are
/// disutilities and must be strictly negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiceCoefficients {
    /// Per currency unit.
    pub beta_cost: f64,
    /// Per second.
    pub beta_time: f64,
}

impl ChoiceCoefficients {
    pub fn new(beta_cost: f64, beta_time: f64) -> Result<Self> {
        if beta_cost >= 0.0 || beta_time >= 0.0 {
            return Err(Error::InvalidArgument(
                "choice coefficients must be negative".into(),
            ));
        }
        Ok(ChoiceCoefficients {
            beta_cost,
            beta_time,
        })
    }
}

/// A path as an ordered list of link indices into the network.
pub type Path = Vec<usize>;

/// Alternative routes for one OD pair with their path-size corrections and
/// fixed composite utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub origin: NodeId,
    pub destination: NodeId,
    pub paths: Vec<Path>,
    /// PS_k per path, in (0, 1].
    pub path_sizes: Vec<f64>,
    /// Fixed per-path composite utility constant.
    pub composite_utils: Vec<f64>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Length-weighted path-size correction:
/// `PS_k = Σ_{a∈k} (l_a / L_k) · (1 / N_a)` where `N_a` counts set paths
/// using link `a`.
pub fn path_size(paths: &[Path], network: &Network) -> Vec<f64> {
    assert!(!paths.is_empty(), "path size of an empty set");
    let mut usage: HashMap<usize, usize> = HashMap::new();
    for path in paths {
        for &link in path {
            *usage.entry(link).or_insert(0) += 1;
        }
    }
    paths
        .iter()
        .map(|path| {
            let total: f64 = path.iter().map(|&l| network.link(l).length).sum();
            path.iter()
                .map(|&l| (network.link(l).length / total) * (1.0 / usage[&l] as f64))
                .sum()
        })
        .collect()
}

/// Dijkstra on free-flow times with optional banned links/nodes.
/// Returns (cost, links). Deterministic: ties keep the first-found path,
/// and neighbors are expanded in stored link order.
fn shortest_path(
    network: &Network,
    origin: NodeId,
    destination: NodeId,
    banned_links: &HashSet<usize>,
    banned_nodes: &HashSet<NodeId>,
) -> Option<(f64, Path)> {
    #[derive(PartialEq)]
    struct Entry(f64, NodeId);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // Min-heap on cost, then node id for determinism.
            other
                .0
                .total_cmp(&self.0)
                .then_with(|| other.1 .0.cmp(&self.1 .0))
        }
    }

    let mut dist: HashMap<NodeId, f64> = HashMap::new();
    let mut pred: HashMap<NodeId, usize> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(origin, 0.0);
    heap.push(Entry(0.0, origin));

    while let Some(Entry(cost, node)) = heap.pop() {
        if node == destination {
            let mut links = Vec::new();
            let mut current = destination;
            while current != origin {
                let link_idx = pred[&current];
                links.push(link_idx);
                current = network.link(link_idx).from;
            }
            links.reverse();
            return Some((cost, links));
        }
        if cost > dist[&node] {
            continue;
        }
        for &link_idx in network.out_links(node) {
            if banned_links.contains(&link_idx) {
                continue;
            }
            let link = network.link(link_idx);
            if banned_nodes.contains(&link.to) {
                continue;
            }
            let next_cost = cost + link.free_flow_time;
            if dist.get(&link.to).map_or(true, |&d| next_cost < d) {
                dist.insert(link.to, next_cost);
                pred.insert(link.to, link_idx);
                heap.push(Entry(next_cost, link.to));
            }
        }
    }
    None
}

fn path_cost(network: &Network, path: &[usize]) -> f64 {
    path.iter().map(|&l| network.link(l).free_flow_time).sum()
}

fn path_nodes(network: &Network, origin: NodeId, path: &[usize]) -> Vec<NodeId> {
    let mut nodes = vec![origin];
    for &l in path {
        nodes.push(network.link(l).to);
    }
    nodes
}

/// Enumerate up to `k_max` loop-free paths by Yen's algorithm (repeated
/// shortest path with link elimination at each spur node) on free-flow
/// times. Deterministic; errors when the OD pair is disconnected.
pub fn enumerate_paths(
    network: &Network,
    origin: NodeId,
    destination: NodeId,
    k_max: usize,
) -> Result<PathSet> {
    assert!(k_max >= 1);
    let empty_links = HashSet::new();
    let empty_nodes = HashSet::new();
    let first = shortest_path(network, origin, destination, &empty_links, &empty_nodes)
        .ok_or(Error::Disconnected {
            origin: origin.0,
            destination: destination.0,
        })?;

    let mut accepted: Vec<(f64, Path)> = vec![first];
    let mut candidates: Vec<(f64, Path)> = Vec::new();

    while accepted.len() < k_max {
        let (_, prev) = accepted.last().unwrap();
        let prev = prev.clone();
        let prev_nodes = path_nodes(network, origin, &prev);
        for i in 0..prev.len() {
            let spur_node = prev_nodes[i];
            let root: &[usize] = &prev[..i];
            let mut banned_links = HashSet::new();
            for (_, p) in &accepted {
                if p.len() > i && p[..i] == *root {
                    banned_links.insert(p[i]);
                }
            }
            // Loop-free: the spur path may not revisit root nodes.
            let banned_nodes: HashSet<NodeId> = prev_nodes[..i].iter().copied().collect();
            if let Some((spur_cost, spur)) =
                shortest_path(network, spur_node, destination, &banned_links, &banned_nodes)
            {
                let mut full = root.to_vec();
                full.extend(spur);
                let cost = path_cost(network, root) + spur_cost;
                if !accepted.iter().any(|(_, p)| *p == full)
                    && !candidates.iter().any(|(_, p)| *p == full)
                {
                    candidates.push((cost, full));
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        // Deterministic pick: lowest cost, link sequence as tie-break.
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        accepted.push(candidates.remove(0));
    }

    let paths: Vec<Path> = accepted.into_iter().map(|(_, p)| p).collect();
    let path_sizes = path_size(&paths, network);
    let composite_utils = vec![0.0; paths.len()];
    Ok(PathSet {
        origin,
        destination,
        paths,
        path_sizes,
        composite_utils,
    })
}

/// Systematic utility of traversing `links` starting at `departure`:
/// `β_c·τ̃ + β_t·t̄t + ln(PS) + C`. Link entry times accumulate along the
/// path from the departure instant; each gantry charges the toll of the
/// interval containing its estimated entry time.
pub fn path_utility(
    network: &Network,
    links: &[usize],
    ps: f64,
    composite: f64,
    tolls: &TollSchedule,
    times: &GuidanceTable,
    coeffs: &ChoiceCoefficients,
    departure: f64,
) -> f64 {
    let mut clock = departure;
    let mut toll_sum = 0.0;
    let mut time_sum = 0.0;
    for &link_idx in links {
        let link = network.link(link_idx);
        if let Some(g) = network.gantry_index(link.id) {
            toll_sum += tolls.toll_at(g, clock);
        }
        let tt = times.time_at(link_idx, clock);
        time_sum += tt;
        clock += tt;
    }
    coeffs.beta_cost * toll_sum + coeffs.beta_time * time_sum + ps.ln() + composite
}

/// Per-path systematic utilities for a full path set. Informed travelers
/// pass the disseminated guidance as `times`; uninformed ones pass the
/// historical table.
pub fn utilities(
    path_set: &PathSet,
    network: &Network,
    tolls: &TollSchedule,
    times: &GuidanceTable,
    coeffs: &ChoiceCoefficients,
    departure: f64,
) -> Vec<f64> {
    path_set
        .paths
        .iter()
        .enumerate()
        .map(|(k, path)| {
            path_utility(
                network,
                path,
                path_set.path_sizes[k],
                path_set.composite_utils[k],
                tolls,
                times,
                coeffs,
                departure,
            )
        })
        .collect()
}

/// Logit probabilities with max-shift for numerical stability.
pub fn choice_probabilities(utilities: &[f64]) -> Vec<f64> {
    assert!(!utilities.is_empty());
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draw a path index from the categorical distribution.
pub fn sample_choice(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Choice sets for every OD pair in play.
#[derive(Debug, Clone, Default)]
pub struct PathSetCatalog {
    sets: HashMap<(NodeId, NodeId), PathSet>,
}

impl PathSetCatalog {
    pub fn get(&self, origin: NodeId, destination: NodeId) -> Result<&PathSet> {
        self.sets
            .get(&(origin, destination))
            .ok_or(Error::MissingPathSet(origin.0, destination.0))
    }

    pub fn insert(&mut self, set: PathSet) {
        self.sets.insert((set.origin, set.destination), set);
    }

    pub fn ods(&self) -> impl Iterator<Item = &(NodeId, NodeId)> {
        self.sets.keys()
    }

    /// Enumerate choice sets for the given OD pairs.
    pub fn build(
        network: &Network,
        ods: impl IntoIterator<Item = (NodeId, NodeId)>,
        k_max: usize,
    ) -> Result<Self> {
        let mut catalog = PathSetCatalog::default();
        for (o, d) in ods {
            if !catalog.sets.contains_key(&(o, d)) {
                catalog.insert(enumerate_paths(network, o, d, k_max)?);
            }
        }
        Ok(catalog)
    }
}

/// Parse a pre-computed path-set file with rows
/// `origin,destination,path_id,link ids separated by spaces,composite`.
/// Paths of one OD pair are ordered by `path_id`; path sizes are computed
/// from the listed links.
pub fn parse_path_sets(text: &str, file: &str, network: &Network) -> Result<PathSetCatalog> {
    type Row = (u64, Vec<usize>, f64);
    let mut rows: HashMap<(NodeId, NodeId), Vec<Row>> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                file,
                lineno,
                "expected origin,destination,path_id,links,composite",
            ));
        }
        let origin: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(file, lineno, "invalid origin"))?;
        let destination: u64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(file, lineno, "invalid destination"))?;
        let path_id: u64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(file, lineno, "invalid path id"))?;
        let mut links = Vec::new();
        for tok in fields[3].split_whitespace() {
            let id: u64 = tok
                .parse()
                .map_err(|_| Error::parse(file, lineno, format!("invalid link id {tok:?}")))?;
            let idx = network
                .link_index(crate::network::LinkId(id))
                .ok_or_else(|| Error::parse(file, lineno, format!("unknown link {id}")))?;
            links.push(idx);
        }
        if links.is_empty() {
            return Err(Error::parse(file, lineno, "empty link list"));
        }
        let composite: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(file, lineno, "invalid composite utility"))?;
        // Contiguity check while we still know the line number.
        let o = NodeId(origin);
        let d = NodeId(destination);
        if network.link(links[0]).from != o
            || network.link(*links.last().unwrap()).to != d
            || links
                .windows(2)
                .any(|w| network.link(w[0]).to != network.link(w[1]).from)
        {
            return Err(Error::parse(file, lineno, "path does not connect the OD pair"));
        }
        rows.entry((o, d)).or_default().push((path_id, links, composite));
    }

    let mut catalog = PathSetCatalog::default();
    for ((origin, destination), mut entries) in rows {
        entries.sort_by_key(|(id, _, _)| *id);
        let paths: Vec<Path> = entries.iter().map(|(_, p, _)| p.clone()).collect();
        for w in paths.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Config(format!(
                    "duplicate path for OD ({origin}, {destination})"
                )));
            }
        }
        let composite_utils = entries.iter().map(|(_, _, c)| *c).collect();
        let path_sizes = path_size(&paths, network);
        catalog.insert(PathSet {
            origin,
            destination,
            paths,
            path_sizes,
            composite_utils,
        });
    }
    Ok(catalog)
}

pub fn load_path_sets(path: impl AsRef<FsPath>, network: &Network) -> Result<PathSetCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_path_sets(&text, &path.display().to_string(), network)
}
