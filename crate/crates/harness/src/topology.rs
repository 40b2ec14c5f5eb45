//! Network topologies used by the experiments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cec_core::Network;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyName {
    ConnectedEr,
    BalancedTree,
    Fog,
    Abilene,
    Lhc,
    Geant,
    SmallWorld,
}

impl TopologyName {
    pub const ALL: [TopologyName; 7] = [
        TopologyName::ConnectedEr,
        TopologyName::BalancedTree,
        TopologyName::Fog,
        TopologyName::Abilene,
        TopologyName::Lhc,
        TopologyName::Geant,
        TopologyName::SmallWorld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyName::ConnectedEr => "connected-er",
            TopologyName::BalancedTree => "balanced-tree",
            TopologyName::Fog => "fog",
            TopologyName::Abilene => "abilene",
            TopologyName::Lhc => "lhc",
            TopologyName::Geant => "geant",
            TopologyName::SmallWorld => "small-world",
        }
    }

    /// Static topologies come from embedded data files and ignore size
    /// parameters.
    pub fn is_static(self) -> bool {
        matches!(self, TopologyName::Abilene | TopologyName::Lhc | TopologyName::Geant)
    }
}

impl std::str::FromStr for TopologyName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        TopologyName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown topology {s:?}")))
    }
}

impl std::fmt::Display for TopologyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub name: TopologyName,
    /// Node count for generated topologies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    /// Extra-link probability for connected-er.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// Undirected edge list with node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Every undirected edge becomes a pair of opposite directed links.
    pub fn network(&self) -> Result<Network> {
        Ok(Network::from_undirected(self.labels.len(), &self.edges)?)
    }

    fn numbered(n: usize, edges: Vec<(usize, usize)>) -> Self {
        Topology { labels: (0..n).map(|i| i.to_string()).collect(), edges }
    }
}

const ABILENE: &str = include_str!("../data/abilene.txt");
const LHC: &str = include_str!("../data/lhc.txt");
const GEANT: &str = include_str!("../data/geant.txt");

/// Parses `a b` lines (comments start with `#`) and checks the counts.
pub fn parse_edge_list(text: &str, nodes: usize, edges: usize) -> Result<Topology> {
    let mut labels: Vec<String> = Vec::new();
    let mut list = Vec::new();
    let id = |name: &str, labels: &mut Vec<String>| -> usize {
        labels.iter().position(|l| l == name).unwrap_or_else(|| {
            labels.push(name.to_string());
            labels.len() - 1
        })
    };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(HarnessError::Config(format!("malformed edge line {line:?}")));
        };
        let u = id(a, &mut labels);
        let v = id(b, &mut labels);
        list.push((u, v));
    }
    if labels.len() != nodes || list.len() != edges {
        return Err(HarnessError::Config(format!(
            "edge list has {} nodes and {} edges, expected {nodes} and {edges}",
            labels.len(),
            list.len()
        )));
    }
    Ok(Topology { labels, edges: list })
}

pub fn connected_er(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Topology> {
    if n < 2 || !(0.0..=1.0).contains(&p) {
        return Err(HarnessError::Config(format!("connected-er needs n >= 2 and p in [0,1], got {n}, {p}")));
    }
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Ok(Topology::numbered(n, edges))
}

pub fn balanced_tree(n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(HarnessError::Config(format!("balanced-tree needs n >= 2, got {n}")));
    }
    Ok(Topology::numbered(n, (1..n).map(|i| ((i - 1) / 2, i)).collect()))
}

/// Binary tree whose nodes on each layer are also chained left to right.
pub fn fog(n: usize) -> Result<Topology> {
    let mut t = balanced_tree(n)?;
    let mut start = 1;
    let mut width = 2;
    while start < n {
        let end = (start + width).min(n);
        for i in start..end - 1 {
            t.edges.push((i, i + 1));
        }
        start = end;
        width *= 2;
    }
    Ok(t)
}

/// Ring plus chords to the second neighbor, plus `round(1.2 n)` long-range
/// edges whose endpoints are chosen with probability inversely proportional
/// to their ring distance.
pub fn small_world(n: usize, rng: &mut ChaCha8Rng) -> Result<Topology> {
    if n < 5 {
        return Err(HarnessError::Config(format!("small-world needs n >= 5, got {n}")));
    }
    let mut set = std::collections::BTreeSet::new();
    let key = |u: usize, v: usize| (u.min(v), u.max(v));
    for i in 0..n {
        set.insert(key(i, (i + 1) % n));
        set.insert(key(i, (i + 2) % n));
    }
    let ring = |u: usize, v: usize| {
        let d = u.abs_diff(v);
        d.min(n - d)
    };
    let weights: Vec<f64> = (1..=n / 2).map(|d| 1.0 / d as f64).collect();
    let total: f64 = weights.iter().sum();
    let target = set.len() + (1.2 * n as f64).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let mut guard = 0;
    while set.len() < target.min(max_edges) && guard < 1_000_000 {
        guard += 1;
        let u = rng.random_range(0..n);
        let mut x = rng.random::<f64>() * total;
        let mut d = 1;
        for (idx, w) in weights.iter().enumerate() {
            if x < *w {
                d = idx + 1;
                break;
            }
            x -= w;
        }
        let v = if rng.random_bool(0.5) { (u + d) % n } else { (u + n - d) % n };
        if u != v && ring(u, v) == d {
            set.insert(key(u, v));
        }
    }
    Ok(Topology::numbered(n, set.into_iter().collect()))
}

/// Builds the named topology. Generated topologies default to the sizes of
/// the reference scenarios.
pub fn gen_topology(spec: &TopologySpec, rng: &mut ChaCha8Rng) -> Result<Topology> {
    let n = spec.nodes;
    match spec.name {
        TopologyName::ConnectedEr => connected_er(n.unwrap_or(20), spec.p.unwrap_or(0.1), rng),
        TopologyName::BalancedTree => balanced_tree(n.unwrap_or(15)),
        TopologyName::Fog => fog(n.unwrap_or(19)),
        TopologyName::SmallWorld => small_world(n.unwrap_or(100), rng),
        TopologyName::Abilene => parse_edge_list(ABILENE, 11, 14),
        TopologyName::Lhc => parse_edge_list(LHC, 16, 31),
        TopologyName::Geant => parse_edge_list(GEANT, 22, 33),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn static_counts() {
        for (name, n, e) in [
            (TopologyName::Abilene, 11, 14),
            (TopologyName::Lhc, 16, 31),
            (TopologyName::Geant, 22, 33),
        ] {
            let t = gen_topology(&TopologySpec { name, nodes: None, p: None }, &mut rng()).unwrap();
            assert_eq!((t.labels.len(), t.edges.len()), (n, e), "{name}");
            let net = t.network().unwrap();
            assert!(net.is_strongly_connected());
            assert_eq!(net.num_links(), 2 * e);
        }
    }

    #[test]
    fn balanced_tree_15() {
        let t = balanced_tree(15).unwrap();
        assert_eq!(t.edges.len(), 14);
        assert_eq!(t.network().unwrap().num_links(), 28);
    }

    #[test]
    fn generated_topologies_are_strongly_connected() {
        let mut r = rng();
        for t in [
            connected_er(20, 0.1, &mut r).unwrap(),
            fog(19).unwrap(),
            small_world(100, &mut r).unwrap(),
        ] {
            assert!(t.network().unwrap().is_strongly_connected());
        }
    }

    #[test]
    fn small_world_edge_count() {
        let t = small_world(100, &mut rng()).unwrap();
        assert_eq!(t.edges.len(), 320);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = connected_er(20, 0.1, &mut rng()).unwrap();
        let b = connected_er(20, 0.1, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!("mesh".parse::<TopologyName>().is_err());
        assert_eq!("fog".parse::<TopologyName>().unwrap(), TopologyName::Fog);
    }
}
