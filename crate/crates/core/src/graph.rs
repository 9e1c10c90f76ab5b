//! Hierarchical graph models.
//!
//! A comet graph is a finite head (a trap such as a clique) whose exit node
//! owns one edge into a unidirectional tail. The walker's step at `h_exit`
//! picks the tail edge with the same uniform rule as any head edge; that
//! entry hop belongs to the head distance `d_H` and is never killed. Each of
//! the `L` subsequent tail hops survives with probability `μ`, and the target
//! sits `L` hops past the tail entry node, so `d = d_H + L`.
//!
//! The leaky loop is the one-node comet whose head carries a self-loop of
//! weight `s`. The Bethe lattice is described only by its coordination
//! number and the source–target distance; walkers on it are handled through
//! the distance-to-target chain.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where one step from a head node leads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepTarget {
    Node(usize),
    Tail,
}

/// Finite head subgraph with start node `g₀` and exit node `h_exit`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGraph {
    neighbors: Vec<Vec<usize>>,
    self_loops: Vec<f64>,
    start: usize,
    exit: usize,
    steps: Vec<Vec<(StepTarget, f64)>>,
    exit_distance: Vec<Option<usize>>,
}

impl HeadGraph {
    /// Builds a head from an undirected edge list and explicit self-loop
    /// weights.
    ///
    /// A node with self-loop weight `w` stays put with probability `w` and
    /// otherwise picks uniformly among its incident edges, the tail edge
    /// included at the exit node.
    pub fn new(
        node_count: usize,
        edges: &[(usize, usize)],
        self_loops: &[(usize, f64)],
        start: usize,
        exit: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidHead("head needs at least one node".into()));
        }
        for (name, id) in [("start", start), ("exit", exit)] {
            if id >= node_count {
                return Err(Error::InvalidHead(format!(
                    "{name} node {id} out of range for {node_count} nodes"
                )));
            }
        }

        let mut adjacency = vec![BTreeSet::new(); node_count];
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::InvalidHead(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                return Err(Error::InvalidHead(format!(
                    "self-loop at node {u} must be given as an explicit weight"
                )));
            }
            adjacency[u].insert(v);
            adjacency[v].insert(u);
        }
        let neighbors: Vec<Vec<usize>> = adjacency
            .into_iter()
            .map(|set| set.into_iter().collect())
            .collect();

        let mut loops = vec![0.0; node_count];
        for &(node, weight) in self_loops {
            if node >= node_count {
                return Err(Error::InvalidHead(format!(
                    "self-loop node {node} out of range"
                )));
            }
            if !(0.0..1.0).contains(&weight) {
                return Err(Error::InvalidHead(format!(
                    "self-loop weight {weight} at node {node} outside [0, 1)"
                )));
            }
            loops[node] = weight;
        }

        let mut steps = Vec::with_capacity(node_count);
        for (u, nbrs) in neighbors.iter().enumerate() {
            let degree = nbrs.len() + usize::from(u == exit);
            if degree == 0 {
                return Err(Error::InvalidHead(format!("node {u} has no incident edge")));
            }
            let stay = loops[u];
            let share = (1.0 - stay) / degree as f64;
            let mut row = Vec::with_capacity(degree + 1);
            if stay > 0.0 {
                row.push((StepTarget::Node(u), stay));
            }
            row.extend(nbrs.iter().map(|&v| (StepTarget::Node(v), share)));
            if u == exit {
                row.push((StepTarget::Tail, share));
            }
            steps.push(row);
        }

        let exit_distance = bfs_distances(&neighbors, exit);
        if exit_distance[start].is_none() {
            return Err(Error::InvalidHead(format!(
                "exit node {exit} is not reachable from start node {start}"
            )));
        }

        Ok(Self {
            neighbors,
            self_loops: loops,
            start,
            exit,
            steps,
            exit_distance,
        })
    }

    /// One-node head with a self-loop of weight `stay` and a tail edge of
    /// weight `1 - stay`.
    pub fn single_node(stay: f64) -> Result<Self> {
        Self::new(1, &[], &[(0, stay)], 0, 0)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn exit(&self) -> usize {
        self.exit
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn self_loop(&self, node: usize) -> f64 {
        self.self_loops[node]
    }

    /// Number of incident edges, the tail edge counted at `h_exit`.
    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len() + usize::from(node == self.exit)
    }

    /// Step distribution of `node`; probabilities sum to one.
    pub fn steps(&self, node: usize) -> &[(StepTarget, f64)] {
        &self.steps[node]
    }

    /// Head hops from `node` to `h_exit`, `None` if disconnected.
    pub fn exit_distance(&self, node: usize) -> Option<usize> {
        self.exit_distance[node]
    }

    /// `d_H`: fewest steps from `g₀` up to and including the tail entry hop.
    pub fn shortest_exit_steps(&self) -> usize {
        self.exit_distance[self.start].expect("checked at construction") + 1
    }
}

fn bfs_distances(neighbors: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; neighbors.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].map(|d| d + 1);
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// All-to-all head on `m` nodes with the tail edge at `exit`.
pub fn build_clique_head(m: usize, start: usize, exit: usize) -> Result<HeadGraph> {
    if m < 2 {
        return Err(Error::InvalidHead(format!(
            "a clique head needs at least 2 nodes, got {m}"
        )));
    }
    let edges: Vec<(usize, usize)> = (0..m)
        .flat_map(|u| (u + 1..m).map(move |v| (u, v)))
        .collect();
    HeadGraph::new(m, &edges, &[], start, exit)
}

/// A structural invariant a model fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    SurvivalOutOfRange { value: f64 },
    StayOutOfRange { value: f64 },
    DistanceBelowOne { value: usize },
    CoordinationBelowThree { value: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SurvivalOutOfRange { value } => {
                write!(f, "survival probability {value} out of range (0, 1]")
            }
            Self::StayOutOfRange { value } => {
                write!(f, "stay probability {value} out of range [0, 1)")
            }
            Self::DistanceBelowOne { value } => write!(f, "distance {value} below 1"),
            Self::CoordinationBelowThree { value } => {
                write!(f, "coordination number {value} below 3")
            }
        }
    }
}

fn check_survival(mu: f64, out: &mut Vec<Violation>) {
    if !(mu > 0.0 && mu <= 1.0) {
        out.push(Violation::SurvivalOutOfRange { value: mu });
    }
}

/// Head plus ballistic tail.
#[derive(Debug, Clone, PartialEq)]
pub struct CometSpec {
    pub head: HeadGraph,
    /// `L`: killed-or-survive hops after the tail entry hop.
    pub tail_hops: usize,
    /// `μ`: per-hop survival on the tail.
    pub survival: f64,
}

impl CometSpec {
    pub fn new(head: HeadGraph, tail_hops: usize, survival: f64) -> Result<Self> {
        let spec = Self {
            head,
            tail_hops,
            survival,
        };
        spec.ensure_valid()?;
        Ok(spec)
    }

    pub fn head_distance(&self) -> usize {
        self.head.shortest_exit_steps()
    }

    /// `d = d_H + L`.
    pub fn distance(&self) -> usize {
        self.head_distance() + self.tail_hops
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_survival(self.survival, &mut out);
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        into_result(self.validate())
    }
}

/// One-node head with self-loop probability `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakyLoopSpec {
    pub stay: f64,
    pub survival: f64,
    pub distance: usize,
}

impl LeakyLoopSpec {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.stay) {
            out.push(Violation::StayOutOfRange { value: self.stay });
        }
        check_survival(self.survival, &mut out);
        if self.distance < 1 {
            out.push(Violation::DistanceBelowOne {
                value: self.distance,
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        into_result(self.validate())
    }

    /// Equivalent comet: `d_H = 1`, `L = d - 1`.
    pub fn to_comet(&self) -> Result<CometSpec> {
        self.ensure_valid()?;
        CometSpec::new(
            HeadGraph::single_node(self.stay)?,
            self.distance - 1,
            self.survival,
        )
    }
}

pub fn build_leaky_loop(stay: f64, survival: f64, distance: usize) -> Result<LeakyLoopSpec> {
    let spec = LeakyLoopSpec {
        stay,
        survival,
        distance,
    };
    spec.ensure_valid()?;
    Ok(spec)
}

/// Infinite regular tree with coordination number `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetheSpec {
    pub coordination: usize,
    pub distance: usize,
}

impl BetheSpec {
    pub fn new(coordination: usize, distance: usize) -> Result<Self> {
        let spec = Self {
            coordination,
            distance,
        };
        spec.ensure_valid()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.coordination < 3 {
            out.push(Violation::CoordinationBelowThree {
                value: self.coordination,
            });
        }
        if self.distance < 1 {
            out.push(Violation::DistanceBelowOne {
                value: self.distance,
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        into_result(self.validate())
    }
}

fn into_result(violations: Vec<Violation>) -> Result<()> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(violations))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Comet(CometSpec),
    LeakyLoop(LeakyLoopSpec),
    Bethe(BetheSpec),
}

impl Model {
    /// Graph distance `d` between source and target.
    pub fn distance(&self) -> usize {
        match self {
            Model::Comet(c) => c.distance(),
            Model::LeakyLoop(l) => l.distance,
            Model::Bethe(b) => b.distance,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Comet(_) => "comet",
            Model::LeakyLoop(_) => "leaky-loop",
            Model::Bethe(_) => "bethe",
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

/// Lists every violated structural invariant; empty when the model is valid.
pub fn validate(model: &Model) -> Vec<Violation> {
    match model {
        Model::Comet(c) => c.validate(),
        Model::LeakyLoop(l) => l.validate(),
        Model::Bethe(b) => b.validate(),
    }
}

/// Serialized head description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HeadConfig {
    Clique {
        m: usize,
        start: usize,
        exit: usize,
    },
    Explicit {
        nodes: usize,
        edges: Vec<(usize, usize)>,
        #[serde(default)]
        self_loops: Vec<(usize, f64)>,
        start: usize,
        exit: usize,
    },
}

impl HeadConfig {
    pub fn build(&self) -> Result<HeadGraph> {
        match self {
            HeadConfig::Clique { m, start, exit } => build_clique_head(*m, *start, *exit),
            HeadConfig::Explicit {
                nodes,
                edges,
                self_loops,
                start,
                exit,
            } => HeadGraph::new(*nodes, edges, self_loops, *start, *exit),
        }
    }
}

/// JSON model block: `{"model": "comet" | "leaky-loop" | "bethe", ...}`.
///
/// A comet carries exactly one `head`; lists of heads are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Comet {
        head: HeadConfig,
        tail_hops: usize,
        mu: f64,
    },
    LeakyLoop {
        s: f64,
        mu: f64,
        d: usize,
    },
    Bethe {
        z: usize,
        d: usize,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model> {
        match self {
            ModelConfig::Comet {
                head,
                tail_hops,
                mu,
            } => Ok(Model::Comet(CometSpec::new(
                head.build()?,
                *tail_hops,
                *mu,
            )?)),
            ModelConfig::LeakyLoop { s, mu, d } => {
                Ok(Model::LeakyLoop(build_leaky_loop(*s, *mu, *d)?))
            }
            ModelConfig::Bethe { z, d } => Ok(Model::Bethe(BetheSpec::new(*z, *d)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_sum(head: &HeadGraph, u: usize) -> f64 {
        head.steps(u).iter().map(|(_, p)| p).sum()
    }

    #[test]
    fn clique_of_four_degrees() {
        let head = build_clique_head(4, 0, 3).unwrap();
        let degrees: Vec<usize> = (0..4).map(|u| head.degree(u)).collect();
        assert_eq!(degrees, vec![3, 3, 3, 4]);
        assert_eq!(head.shortest_exit_steps(), 2);
        for u in 0..4 {
            assert!((row_sum(&head, u) - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn clique_of_two() {
        let head = build_clique_head(2, 0, 1).unwrap();
        assert_eq!(head.steps(0), &[(StepTarget::Node(1), 1.0)]);
        assert_eq!(
            head.steps(1),
            &[(StepTarget::Node(0), 0.5), (StepTarget::Tail, 0.5)]
        );
    }

    #[test]
    fn clique_errors() {
        assert!(build_clique_head(1, 0, 0).is_err());
        assert!(build_clique_head(0, 0, 0).is_err());
        assert!(build_clique_head(3, 3, 0).is_err());
        assert!(build_clique_head(3, 0, 5).is_err());
        // start == exit is allowed: the walker may leave on its first step
        assert_eq!(build_clique_head(3, 1, 1).unwrap().shortest_exit_steps(), 1);
    }

    #[test]
    fn head_rejects_unreachable_exit_and_isolated_nodes() {
        assert!(HeadGraph::new(3, &[(0, 1)], &[], 0, 2).is_err());
        assert!(HeadGraph::new(2, &[], &[], 0, 0).is_err());
        assert!(HeadGraph::new(2, &[(0, 0)], &[], 0, 1).is_err());
        assert!(HeadGraph::new(2, &[(0, 1)], &[(0, 1.0)], 0, 1).is_err());
    }

    #[test]
    fn leaky_loop_examples() {
        let spec = build_leaky_loop(0.5, 0.9, 50).unwrap();
        let comet = spec.to_comet().unwrap();
        assert_eq!(comet.tail_hops, 49);
        assert_eq!(comet.head_distance(), 1);
        assert_eq!(comet.distance(), 50);

        let trivial = build_leaky_loop(0.0, 1.0, 1).unwrap().to_comet().unwrap();
        assert_eq!(trivial.tail_hops, 0);
        assert_eq!(trivial.head.steps(0), &[(StepTarget::Tail, 1.0)]);

        assert!(build_leaky_loop(1.0, 0.9, 5).is_err());
        assert!(build_leaky_loop(-0.1, 0.9, 5).is_err());
        assert!(build_leaky_loop(0.5, 0.0, 5).is_err());
        assert!(build_leaky_loop(0.5, 0.9, 0).is_err());
    }

    #[test]
    fn leaky_loop_matches_manual_one_node_comet() {
        let s = 0.37;
        let via_builder = build_leaky_loop(s, 0.8, 6).unwrap().to_comet().unwrap();
        let manual =
            CometSpec::new(HeadGraph::new(1, &[], &[(0, s)], 0, 0).unwrap(), 5, 0.8).unwrap();
        assert_eq!(via_builder, manual);
        assert_eq!(
            manual.head.steps(0),
            &[(StepTarget::Node(0), s), (StepTarget::Tail, 1.0 - s)]
        );
    }

    #[test]
    fn validate_reports_violations() {
        let head = build_clique_head(4, 0, 3).unwrap();
        let good = Model::Comet(CometSpec::new(head.clone(), 3, 0.9).unwrap());
        assert!(validate(&good).is_empty());

        let bad = Model::Comet(CometSpec {
            head,
            tail_hops: 3,
            survival: 1.2,
        });
        assert_eq!(
            validate(&bad),
            vec![Violation::SurvivalOutOfRange { value: 1.2 }]
        );

        let chain = Model::Bethe(BetheSpec {
            coordination: 2,
            distance: 4,
        });
        assert_eq!(
            validate(&chain),
            vec![Violation::CoordinationBelowThree { value: 2 }]
        );
        assert!(BetheSpec::new(2, 4).is_err());
        assert!(BetheSpec::new(3, 0).is_err());
    }

    #[test]
    fn model_config_parses_and_rejects_multiple_heads() {
        let json = r#"{"model": "comet", "head": {"kind": "clique", "m": 4, "start": 0, "exit": 3},
                       "tail_hops": 5, "mu": 0.9}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.build().unwrap().distance(), 7);

        let multi = r#"{"model": "comet", "heads": [], "head": {"kind": "clique", "m": 4, "start": 0, "exit": 3},
                        "tail_hops": 5, "mu": 0.9}"#;
        assert!(serde_json::from_str::<ModelConfig>(multi).is_err());

        let leaky: ModelConfig =
            serde_json::from_str(r#"{"model": "leaky-loop", "s": 0.5, "mu": 0.9, "d": 50}"#)
                .unwrap();
        assert_eq!(leaky.build().unwrap().kind(), "leaky-loop");

        let bethe: ModelConfig =
            serde_json::from_str(r#"{"model": "bethe", "z": 2, "d": 4}"#).unwrap();
        assert!(matches!(bethe.build(), Err(Error::InvalidModel(_))));
    }
}
