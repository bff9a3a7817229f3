//! Directed road graph with per-link supply attributes and the ordered
//! subset of tolled links (gantries).

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Node identifier as written in network files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u64);

/// Link identifier as written in network files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
    /// Seconds.
    pub free_flow_time: f64,
    /// Vehicles per hour discharged at the link exit.
    pub capacity: f64,
    /// Maximum number of vehicles the link can hold.
    pub storage: u64,
}

/// The road graph. Immutable after load; shared by reference across
/// concurrent evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    /// Ordered gantry list; position defines the toll-vector component index.
    pub tolled_links: Vec<LinkId>,
    link_index: HashMap<LinkId, usize>,
    /// Outgoing link indices per node, in file order.
    out_links: HashMap<NodeId, Vec<usize>>,
}

/// Invariant violations reported by [`Network::validate`]. Violations are
/// data, not errors: a constructed network can be inspected for them.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DanglingNode { link: LinkId, node: NodeId },
    DuplicateLink(LinkId),
    DuplicateNode(NodeId),
    DuplicateGantry(LinkId),
    UnknownGantry(LinkId),
    NonPositiveLength(LinkId),
    NonPositiveFreeFlowTime(LinkId),
    NonPositiveCapacity(LinkId),
    ZeroStorage(LinkId),
    Disconnected { nodes: Vec<NodeId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingNode { link, node } => {
                write!(f, "link {link} references missing node {node}")
            }
            Violation::DuplicateLink(id) => write!(f, "duplicate link id {id}"),
            Violation::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            Violation::DuplicateGantry(id) => write!(f, "duplicate gantry on link {id}"),
            Violation::UnknownGantry(id) => write!(f, "gantry references unknown link {id}"),
            Violation::NonPositiveLength(id) => write!(f, "link {id} has non-positive length"),
            Violation::NonPositiveFreeFlowTime(id) => {
                write!(f, "link {id} has non-positive free-flow time")
            }
            Violation::NonPositiveCapacity(id) => {
                write!(f, "link {id} has non-positive capacity")
            }
            Violation::ZeroStorage(id) => write!(f, "link {id} has zero storage"),
            Violation::Disconnected { nodes } => {
                write!(f, "nodes not weakly connected to the rest: ")?;
                for (i, n) in nodes.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{n}")?;
                }
                Ok(())
            }
        }
    }
}

impl Network {
    /// Assemble a network from parts, rebuilding the lookup tables. Hard
    /// invariants (unique ids, resolvable references) are enforced here;
    /// softer ones are left to [`Network::validate`].
    pub fn new(nodes: Vec<NodeId>, links: Vec<Link>, tolled_links: Vec<LinkId>) -> Result<Self> {
        let mut node_set = HashSet::new();
        for n in &nodes {
            if !node_set.insert(*n) {
                return Err(Error::Network(format!("duplicate node id {n}")));
            }
        }
        let mut link_index = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            if link_index.insert(link.id, i).is_some() {
                return Err(Error::Network(format!("duplicate link id {}", link.id)));
            }
            for node in [link.from, link.to] {
                if !node_set.contains(&node) {
                    return Err(Error::Network(format!(
                        "link {} references missing node {node}",
                        link.id
                    )));
                }
            }
        }
        let mut seen = HashSet::new();
        for g in &tolled_links {
            if !link_index.contains_key(g) {
                return Err(Error::Network(format!("gantry references unknown link {g}")));
            }
            if !seen.insert(*g) {
                return Err(Error::Network(format!("duplicate gantry on link {g}")));
            }
        }
        let mut out_links: HashMap<NodeId, Vec<usize>> = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            out_links.entry(link.from).or_default().push(i);
        }
        Ok(Network {
            nodes,
            links,
            tolled_links,
            link_index,
            out_links,
        })
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_gantries(&self) -> usize {
        self.tolled_links.len()
    }

    pub fn link_index(&self, id: LinkId) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    /// Toll-vector component index of a link, if it carries a gantry.
    pub fn gantry_index(&self, id: LinkId) -> Option<usize> {
        self.tolled_links.iter().position(|g| *g == id)
    }

    pub fn out_links(&self, node: NodeId) -> &[usize] {
        self.out_links.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Check every structural invariant; empty iff the network is sound.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let node_set: HashSet<NodeId> = self.nodes.iter().copied().collect();
        let mut seen_nodes = HashSet::new();
        for n in &self.nodes {
            if !seen_nodes.insert(*n) {
                violations.push(Violation::DuplicateNode(*n));
            }
        }
        let mut seen_links = HashSet::new();
        for link in &self.links {
            if !seen_links.insert(link.id) {
                violations.push(Violation::DuplicateLink(link.id));
            }
            for node in [link.from, link.to] {
                if !node_set.contains(&node) {
                    violations.push(Violation::DanglingNode {
                        link: link.id,
                        node,
                    });
                }
            }
            if link.length <= 0.0 {
                violations.push(Violation::NonPositiveLength(link.id));
            }
            if link.free_flow_time <= 0.0 {
                violations.push(Violation::NonPositiveFreeFlowTime(link.id));
            }
            if link.capacity <= 0.0 {
                violations.push(Violation::NonPositiveCapacity(link.id));
            }
            if link.storage == 0 {
                violations.push(Violation::ZeroStorage(link.id));
            }
        }
        let mut seen_gantries = HashSet::new();
        for g in &self.tolled_links {
            if !seen_links.contains(g) {
                violations.push(Violation::UnknownGantry(*g));
            }
            if !seen_gantries.insert(*g) {
                violations.push(Violation::DuplicateGantry(*g));
            }
        }
        if let Some(nodes) = self.disconnected_nodes() {
            violations.push(Violation::Disconnected { nodes });
        }
        violations
    }

    /// Weak-connectivity check over nodes that touch at least one link.
    /// Isolated declared nodes carry no traffic and are allowed.
    fn disconnected_nodes(&self) -> Option<Vec<NodeId>> {
        let mut adjacent: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut active: HashSet<NodeId> = HashSet::new();
        for link in &self.links {
            adjacent.entry(link.from).or_default().push(link.to);
            adjacent.entry(link.to).or_default().push(link.from);
            active.insert(link.from);
            active.insert(link.to);
        }
        let start = *active.iter().min()?;
        let mut visited = HashSet::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(n) = queue.pop_front() {
            for next in adjacent.get(&n).into_iter().flatten() {
                if visited.insert(*next) {
                    queue.push_back(*next);
                }
            }
        }
        let mut missing: Vec<NodeId> = active.difference(&visited).copied().collect();
        if missing.is_empty() {
            None
        } else {
            missing.sort();
            Some(missing)
        }
    }

    /// Render the network in the same sectioned text format accepted by
    /// [`parse_network`]; parsing the output reproduces the value exactly.
    pub fn serialize(&self) -> String {
        let mut out = String::from("NODES\n");
        for n in &self.nodes {
            out.push_str(&format!("{n}\n"));
        }
        out.push_str("LINKS\n");
        for l in &self.links {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l.id, l.from, l.to, l.length, l.free_flow_time, l.capacity, l.storage
            ));
        }
        out.push_str("GANTRIES\n");
        for g in &self.tolled_links {
            out.push_str(&format!("{g}\n"));
        }
        out
    }
}

/// Parse the sectioned network description format:
///
/// ```text
/// NODES
/// <id>
/// LINKS
/// <id>,<from>,<to>,<length m>,<fftime s>,<capacity veh/h>,<storage veh>
/// GANTRIES
/// <link id>
/// ```
///
/// `#` starts a comment; blank lines are ignored. Gantry order in the file
/// defines the toll-vector component order.
pub fn parse_network(text: &str, file: &str) -> Result<Network> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Nodes,
        Links,
        Gantries,
    }
    let mut section = Section::None;
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    let mut gantries = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        match line {
            "NODES" => section = Section::Nodes,
            "LINKS" => section = Section::Links,
            "GANTRIES" => section = Section::Gantries,
            _ => match section {
                Section::None => {
                    return Err(Error::parse(file, lineno, "data before section header"))
                }
                Section::Nodes => nodes.push(NodeId(parse_u64(line, file, lineno, "node id")?)),
                Section::Links => {
                    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                    if fields.len() != 7 {
                        return Err(Error::parse(
                            file,
                            lineno,
                            format!("expected 7 link fields, got {}", fields.len()),
                        ));
                    }
                    let link = Link {
                        id: LinkId(parse_u64(fields[0], file, lineno, "link id")?),
                        from: NodeId(parse_u64(fields[1], file, lineno, "from node")?),
                        to: NodeId(parse_u64(fields[2], file, lineno, "to node")?),
                        length: parse_f64(fields[3], file, lineno, "length")?,
                        free_flow_time: parse_f64(fields[4], file, lineno, "free-flow time")?,
                        capacity: parse_f64(fields[5], file, lineno, "capacity")?,
                        storage: parse_u64(fields[6], file, lineno, "storage")?,
                    };
                    for (value, what) in [
                        (link.length, "length"),
                        (link.free_flow_time, "free-flow time"),
                        (link.capacity, "capacity"),
                    ] {
                        if value <= 0.0 {
                            return Err(Error::parse(
                                file,
                                lineno,
                                format!("non-positive {what} on link {}", link.id),
                            ));
                        }
                    }
                    if link.storage == 0 {
                        return Err(Error::parse(
                            file,
                            lineno,
                            format!("zero storage on link {}", link.id),
                        ));
                    }
                    links.push(link);
                }
                Section::Gantries => {
                    gantries.push(LinkId(parse_u64(line, file, lineno, "gantry link id")?))
                }
            },
        }
    }
    Network::new(nodes, links, gantries)
}

/// Load and parse a network description file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Network(format!("cannot read {}: {e}", path.display())))?;
    parse_network(&text, &path.display().to_string())
}

fn parse_u64(s: &str, file: &str, line: usize, what: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::parse(file, line, format!("invalid {what}: {s:?}")))
}

fn parse_f64(s: &str, file: &str, line: usize, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(file, line, format!("invalid {what}: {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> Network {
        // 4 nodes, 4 links, two routes from 1 to 4.
        parse_network(
            "NODES\n1\n2\n3\n4\nLINKS\n\
             10,1,2,1000,60,1800,50\n\
             11,1,3,1500,90,1800,50\n\
             12,2,4,1000,60,1800,50\n\
             13,3,4,1500,90,1800,50\n\
             GANTRIES\n10\n",
            "diamond",
        )
        .unwrap()
    }

    #[test]
    fn minimal_graph_loads() {
        let net = parse_network("NODES\n1\n2\nLINKS\n5,1,2,100,10,3600,10\nGANTRIES\n", "mini")
            .unwrap();
        assert_eq!(net.num_links(), 1);
        assert_eq!(net.num_gantries(), 0);
    }

    #[test]
    fn gantry_order_is_preserved() {
        let net = parse_network(
            "NODES\n1\n2\nLINKS\n45,1,2,100,10,3600,10\n83,2,1,100,10,3600,10\nGANTRIES\n45\n83\n",
            "order",
        )
        .unwrap();
        assert_eq!(net.tolled_links, vec![LinkId(45), LinkId(83)]);
        assert_eq!(net.gantry_index(LinkId(45)), Some(0));
        assert_eq!(net.gantry_index(LinkId(83)), Some(1));

        let swapped = parse_network(
            "NODES\n1\n2\nLINKS\n45,1,2,100,10,3600,10\n83,2,1,100,10,3600,10\nGANTRIES\n83\n45\n",
            "order",
        )
        .unwrap();
        assert_eq!(swapped.tolled_links, vec![LinkId(83), LinkId(45)]);
    }

    #[test]
    fn dangling_node_is_rejected() {
        let err = parse_network("NODES\n1\nLINKS\n5,1,99,100,10,3600,10\nGANTRIES\n", "bad")
            .unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn non_positive_attribute_is_rejected() {
        for bad in [
            "5,1,2,0,10,3600,10",
            "5,1,2,100,0,3600,10",
            "5,1,2,100,10,0,10",
            "5,1,2,100,10,3600,0",
        ] {
            let text = format!("NODES\n1\n2\nLINKS\n{bad}\nGANTRIES\n");
            assert!(parse_network(&text, "bad").is_err(), "accepted {bad}");
        }
    }

    #[test]
    fn duplicate_link_id_is_rejected() {
        let err = parse_network(
            "NODES\n1\n2\nLINKS\n5,1,2,100,10,3600,10\n5,2,1,100,10,3600,10\nGANTRIES\n",
            "dup",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn valid_diamond_has_no_violations() {
        assert_eq!(diamond().validate(), Vec::new());
    }

    #[test]
    fn validate_reports_duplicate_gantry_and_zero_capacity() {
        let mut net = diamond();
        net.tolled_links.push(LinkId(10));
        net.links[1].capacity = 0.0;
        let violations = net.validate();
        assert!(violations.contains(&Violation::DuplicateGantry(LinkId(10))));
        assert!(violations.contains(&Violation::NonPositiveCapacity(LinkId(11))));
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn validate_reports_disconnected_component() {
        let net = parse_network(
            "NODES\n1\n2\n3\n4\nLINKS\n5,1,2,100,10,3600,10\n6,3,4,100,10,3600,10\nGANTRIES\n",
            "split",
        )
        .unwrap();
        let violations = net.validate();
        assert_eq!(violations.len(), 1);
        assert!(matches!(violations[0], Violation::Disconnected { .. }));
    }

    #[test]
    fn serialize_round_trips() {
        let net = diamond();
        let text = net.serialize();
        let reparsed = parse_network(&text, "roundtrip").unwrap();
        assert_eq!(net, reparsed);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let net = parse_network(
            "# header\nNODES\n1\n\n2 # trailing\nLINKS\n5,1,2,100,10,3600,10\nGANTRIES\n",
            "comments",
        )
        .unwrap();
        assert_eq!(net.nodes.len(), 2);
    }
}
