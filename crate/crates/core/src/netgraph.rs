//! Architecture graphs and the path machinery the gradient-flow equations are
//! written in.
//!
//! A graph is a DAG whose nodes carry a layer width. Input nodes are the nodes
//! without incoming edges, output nodes the nodes without outgoing edges. Every
//! input→output path is enumerated once, ordered lexicographically by its
//! edge-id sequence, and indexed both by the edges it traverses and by the
//! node it terminates at.
//!
//! Graphs load from TOML:
//!
//! ```toml
//! [[nodes]]
//! name = "in"
//! width = 2
//!
//! [[nodes]]
//! name = "out"
//! width = 1
//!
//! [[edges]]
//! source = "in"
//! target = "out"
//! ```
//!
//! Edge ids are positions in the `edges` list; node ids are positions in the
//! `nodes` list.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PATH_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub source: String,
    pub target: String,
}

/// Unvalidated graph description, as read from a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

impl GraphSpec {
    pub fn node(&mut self, name: impl Into<String>, width: usize) -> &mut Self {
        self.nodes.push(NodeSpec {
            name: name.into(),
            width,
        });
        self
    }

    pub fn edge(&mut self, source: impl Into<String>, target: impl Into<String>) -> &mut Self {
        self.edges.push(EdgeSpec {
            source: source.into(),
            target: target.into(),
        });
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("graph spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub width: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub id: EdgeId,
    pub source: NodeId,
    pub target: NodeId,
}

/// A validated architecture graph. Construction goes through
/// [`validate_graph`], so every instance is a DAG with derived node kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    incoming: Vec<Vec<EdgeId>>,
    outgoing: Vec<Vec<EdgeId>>,
    topo: Vec<NodeId>,
}

pub fn validate_graph(spec: &GraphSpec) -> Result<ArchitectureGraph> {
    let mut index = HashMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.width == 0 {
            return Err(Error::ZeroWidth(n.name.clone()));
        }
        if index.insert(n.name.as_str(), NodeId(i)).is_some() {
            return Err(Error::DuplicateNode(n.name.clone()));
        }
    }
    let mut edges = Vec::with_capacity(spec.edges.len());
    for (i, e) in spec.edges.iter().enumerate() {
        let lookup = |name: &str| {
            index.get(name).copied().ok_or_else(|| Error::DanglingEdge {
                edge: i,
                node: name.to_string(),
            })
        };
        let source = lookup(&e.source)?;
        let target = lookup(&e.target)?;
        if source == target {
            return Err(Error::CycleDetected(e.source.clone()));
        }
        edges.push(Edge {
            id: EdgeId(i),
            source,
            target,
        });
    }
    let n = spec.nodes.len();
    let mut incoming = vec![Vec::new(); n];
    let mut outgoing = vec![Vec::new(); n];
    for e in &edges {
        incoming[e.target.0].push(e.id);
        outgoing[e.source.0].push(e.id);
    }

    // Kahn's algorithm; leftover nodes sit on a cycle.
    let mut indeg: Vec<usize> = incoming.iter().map(Vec::len).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).rev().collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        topo.push(NodeId(v));
        for eid in &outgoing[v] {
            let t = edges[eid.0].target.0;
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(t);
            }
        }
    }
    if topo.len() < n {
        let stuck = (0..n).find(|&v| indeg[v] > 0).unwrap_or(0);
        return Err(Error::CycleDetected(spec.nodes[stuck].name.clone()));
    }

    let nodes: Vec<Node> = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, s)| Node {
            id: NodeId(i),
            name: s.name.clone(),
            width: s.width,
            kind: if incoming[i].is_empty() {
                NodeKind::Input
            } else if outgoing[i].is_empty() {
                NodeKind::Output
            } else {
                NodeKind::Hidden
            },
        })
        .collect();

    let has_input = (0..n).any(|v| incoming[v].is_empty() && !outgoing[v].is_empty());
    let has_output = (0..n).any(|v| outgoing[v].is_empty() && !incoming[v].is_empty());
    if !has_input || !has_output {
        return Err(Error::NoInputOrOutput);
    }

    // A node lies on an input→output path iff it is reachable from an input
    // and can reach an output. Isolated nodes fail both.
    let mut from_input = vec![false; n];
    for v in &topo {
        from_input[v.0] = !outgoing[v.0].is_empty() && incoming[v.0].is_empty()
            || incoming[v.0].iter().any(|e| from_input[edges[e.0].source.0]);
    }
    let mut to_output = vec![false; n];
    for v in topo.iter().rev() {
        to_output[v.0] = !incoming[v.0].is_empty() && outgoing[v.0].is_empty()
            || outgoing[v.0].iter().any(|e| to_output[edges[e.0].target.0]);
    }
    if let Some(v) = (0..n).find(|&v| !(from_input[v] && to_output[v])) {
        return Err(Error::UnreachableNode(spec.nodes[v].name.clone()));
    }

    Ok(ArchitectureGraph {
        nodes,
        edges,
        incoming,
        outgoing,
        topo,
    })
}

impl ArchitectureGraph {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        validate_graph(&GraphSpec::from_toml_str(s)?)
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    name: n.name.clone(),
                    width: n.width,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    source: self.nodes[e.source.0].name.clone(),
                    target: self.nodes[e.target.0].name.clone(),
                })
                .collect(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn width(&self, id: NodeId) -> usize {
        self.nodes[id.0].width
    }

    pub fn incoming(&self, id: NodeId) -> &[EdgeId] {
        &self.incoming[id.0]
    }

    pub fn outgoing(&self, id: NodeId) -> &[EdgeId] {
        &self.outgoing[id.0]
    }

    /// Nodes in a topological order (inputs first).
    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn input_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Input)
            .map(|n| n.id)
    }

    pub fn output_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Output)
            .map(|n| n.id)
    }

    /// Shape `(rows, cols)` of the weight matrix on an edge.
    pub fn edge_shape(&self, id: EdgeId) -> (usize, usize) {
        let e = self.edges[id.0];
        (self.width(e.target), self.width(e.source))
    }

    pub fn edge_label(&self, id: EdgeId) -> String {
        let e = self.edges[id.0];
        format!("{}->{}", self.nodes[e.source.0].name, self.nodes[e.target.0].name)
    }

    pub fn min_width(&self) -> usize {
        self.nodes.iter().map(|n| n.width).min().unwrap_or(0)
    }
}

/// An input→output path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub edges: Vec<EdgeId>,
    pub source_node: NodeId,
    pub target_node: NodeId,
}

/// A possibly empty piece of a path, anchored at its start and end nodes. An
/// empty sub-path has `start == end` and acts as the identity on that node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubPath {
    pub edges: Vec<EdgeId>,
    pub start: NodeId,
    pub end: NodeId,
}

impl SubPath {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl From<&Path> for SubPath {
    fn from(p: &Path) -> Self {
        SubPath {
            edges: p.edges.clone(),
            start: p.source_node,
            end: p.target_node,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathTables {
    pub all_paths: Vec<Path>,
    /// 𝒫(e): indices of paths through each edge, ascending.
    pub through_edge: Vec<Vec<usize>>,
    /// 𝒯(v): indices of paths terminating at each node, ascending.
    pub terminating_at: Vec<Vec<usize>>,
}

impl PathTables {
    pub fn len(&self) -> usize {
        self.all_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all_paths.is_empty()
    }

    pub fn path(&self, index: usize) -> &Path {
        &self.all_paths[index]
    }

    /// Index of the path with exactly this edge sequence.
    pub fn find(&self, edges: &[EdgeId]) -> Option<usize> {
        self.all_paths
            .binary_search_by(|p| p.edges.as_slice().cmp(edges))
            .ok()
    }
}

pub fn enumerate_paths(graph: &ArchitectureGraph) -> Result<PathTables> {
    enumerate_paths_capped(graph, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_capped(graph: &ArchitectureGraph, cap: usize) -> Result<PathTables> {
    let mut all = Vec::new();
    let mut stack: Vec<EdgeId> = Vec::new();

    fn walk(
        graph: &ArchitectureGraph,
        start: NodeId,
        at: NodeId,
        stack: &mut Vec<EdgeId>,
        out: &mut Vec<Path>,
        cap: usize,
    ) -> Result<()> {
        if graph.outgoing(at).is_empty() {
            if out.len() >= cap {
                return Err(Error::PathExplosion { cap });
            }
            out.push(Path {
                edges: stack.clone(),
                source_node: start,
                target_node: at,
            });
            return Ok(());
        }
        for &e in graph.outgoing(at) {
            stack.push(e);
            walk(graph, start, graph.edge(e).target, stack, out, cap)?;
            stack.pop();
        }
        Ok(())
    }

    for input in graph.input_nodes() {
        walk(graph, input, input, &mut stack, &mut all, cap)?;
    }
    all.sort_by(|a, b| a.edges.cmp(&b.edges));

    let mut through_edge = vec![Vec::new(); graph.edges().len()];
    let mut terminating_at = vec![Vec::new(); graph.nodes().len()];
    for (i, p) in all.iter().enumerate() {
        for e in &p.edges {
            through_edge[e.0].push(i);
        }
        terminating_at[p.target_node.0].push(i);
    }
    Ok(PathTables {
        all_paths: all,
        through_edge,
        terminating_at,
    })
}

/// Split `path` around edge `e` into the part before it (ending at s(e)) and
/// the part after it (starting at t(e)).
pub fn split_path(
    graph: &ArchitectureGraph,
    path: &Path,
    e: EdgeId,
) -> Result<(SubPath, SubPath)> {
    let k = path
        .edges
        .iter()
        .position(|&x| x == e)
        .ok_or(Error::EdgeNotOnPath(e.0))?;
    let edge = graph.edge(e);
    let before = SubPath {
        edges: path.edges[..k].to_vec(),
        start: path.source_node,
        end: edge.source,
    };
    let after = SubPath {
        edges: path.edges[k + 1..].to_vec(),
        start: edge.target,
        end: path.target_node,
    };
    Ok((before, after))
}

/// Ordered product of the weights along a (sub-)path, target side leftmost.
/// An empty sub-path yields the identity at its anchor node.
pub fn path_weight_product(
    graph: &ArchitectureGraph,
    edges: &[EdgeId],
    anchor: NodeId,
    weights: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let Some((&first, rest)) = edges.split_first() else {
        let n = graph.width(anchor);
        return Ok(DMatrix::identity(n, n));
    };
    let mut acc = weights
        .get(first.0)
        .ok_or_else(|| Error::DimensionMismatch(format!("no weight for edge {first}")))?
        .clone();
    let mut at = graph.edge(first).target;
    for &e in rest {
        let edge = graph.edge(e);
        if edge.source != at {
            return Err(Error::DimensionMismatch(format!(
                "edge {e} does not continue the path at node {at}"
            )));
        }
        let w = weights
            .get(e.0)
            .ok_or_else(|| Error::DimensionMismatch(format!("no weight for edge {e}")))?;
        if w.ncols() != acc.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "edge {e} has {} columns, product has {} rows",
                w.ncols(),
                acc.nrows()
            )));
        }
        acc = w * acc;
        at = edge.target;
    }
    Ok(acc)
}

/// Count of paths through each edge keyed by label; handy for reports.
pub fn path_counts(graph: &ArchitectureGraph, tables: &PathTables) -> BTreeMap<String, usize> {
    graph
        .edges()
        .iter()
        .map(|e| (graph.edge_label(e.id), tables.through_edge[e.id.0].len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(widths: &[usize]) -> GraphSpec {
        let mut g = GraphSpec::default();
        for (i, w) in widths.iter().enumerate() {
            g.node(format!("v{i}"), *w);
        }
        for i in 1..widths.len() {
            g.edge(format!("v{}", i - 1), format!("v{i}"));
        }
        g
    }

    fn routing_spec(m: usize) -> GraphSpec {
        let mut g = GraphSpec::default();
        for i in 0..m {
            g.node(format!("in{i}"), 2);
        }
        g.node("h1", 3).node("h2", 3);
        for j in 0..m {
            g.node(format!("out{j}"), 2);
        }
        for i in 0..m {
            g.edge(format!("in{i}"), "h1");
        }
        g.edge("h1", "h2");
        for j in 0..m {
            g.edge("h2", format!("out{j}"));
        }
        g
    }

    #[test]
    fn smallest_chain_is_valid() {
        let g = validate_graph(&chain(&[2, 3, 1])).unwrap();
        let kinds: Vec<_> = g.nodes().iter().map(|n| n.kind).collect();
        assert_eq!(kinds, vec![NodeKind::Input, NodeKind::Hidden, NodeKind::Output]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut s = chain(&[2, 2]);
        s.edge("v1", "v1");
        assert!(matches!(validate_graph(&s), Err(Error::CycleDetected(_))));
    }

    #[test]
    fn longer_cycle_detected() {
        let mut s = chain(&[1, 1, 1, 1]);
        s.edge("v2", "v1");
        assert!(matches!(validate_graph(&s), Err(Error::CycleDetected(_))));
    }

    #[test]
    fn dangling_and_degenerate_graphs_rejected() {
        let mut s = chain(&[1, 1]);
        s.edge("v1", "nowhere");
        assert!(matches!(validate_graph(&s), Err(Error::DanglingEdge { .. })));

        let mut s = GraphSpec::default();
        s.node("lonely", 3);
        assert!(matches!(validate_graph(&s), Err(Error::NoInputOrOutput)));

        let mut s = chain(&[1, 1]);
        s.node("island", 2);
        assert!(matches!(validate_graph(&s), Err(Error::UnreachableNode(n)) if n == "island"));

        assert!(matches!(validate_graph(&chain(&[1, 0, 1])), Err(Error::ZeroWidth(_))));
    }

    #[test]
    fn routing_topology_m7_is_valid() {
        let g = validate_graph(&routing_spec(7)).unwrap();
        assert_eq!(g.input_nodes().count(), 7);
        assert_eq!(g.output_nodes().count(), 7);
        let tables = enumerate_paths(&g).unwrap();
        assert_eq!(tables.len(), 49);
    }

    #[test]
    fn chain_has_one_path() {
        let g = validate_graph(&chain(&[1, 2, 2, 1])).unwrap();
        let t = enumerate_paths(&g).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.all_paths[0].edges, vec![EdgeId(0), EdgeId(1), EdgeId(2)]);
    }

    #[test]
    fn routing_m2_path_table() {
        let g = validate_graph(&routing_spec(2)).unwrap();
        let t = enumerate_paths(&g).unwrap();
        assert_eq!(t.len(), 4);
        // edges: in0->h1, in1->h1, h1->h2, h2->out0, h2->out1
        assert_eq!(t.through_edge[2].len(), 4);
        assert_eq!(t.through_edge[0].len(), 2);
        assert_eq!(t.through_edge[1].len(), 2);
        assert_eq!(t.through_edge[3].len(), 2);
        let out0 = g.node_by_name("out0").unwrap();
        assert_eq!(t.terminating_at[out0.0].len(), 2);
    }

    #[test]
    fn path_cap_enforced() {
        let g = validate_graph(&routing_spec(4)).unwrap();
        assert!(matches!(
            enumerate_paths_capped(&g, 15),
            Err(Error::PathExplosion { cap: 15 })
        ));
        assert_eq!(enumerate_paths_capped(&g, 16).unwrap().len(), 16);
    }

    #[test]
    fn split_at_each_position() {
        let g = validate_graph(&chain(&[1, 2, 2, 1])).unwrap();
        let t = enumerate_paths(&g).unwrap();
        let p = &t.all_paths[0];
        let (s, u) = split_path(&g, p, EdgeId(1)).unwrap();
        assert_eq!(s.edges, vec![EdgeId(0)]);
        assert_eq!(u.edges, vec![EdgeId(2)]);
        let (s, u) = split_path(&g, p, EdgeId(0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.start, NodeId(0));
        assert_eq!(u.edges, vec![EdgeId(1), EdgeId(2)]);
        let (s, u) = split_path(&g, p, EdgeId(2)).unwrap();
        assert_eq!(s.edges, vec![EdgeId(0), EdgeId(1)]);
        assert!(u.is_empty());
        assert_eq!(u.start, NodeId(3));

        let g2 = validate_graph(&routing_spec(2)).unwrap();
        let t2 = enumerate_paths(&g2).unwrap();
        assert!(matches!(
            split_path(&g2, &t2.all_paths[0], EdgeId(1)),
            Err(Error::EdgeNotOnPath(1))
        ));
    }

    #[test]
    fn products() {
        let g = validate_graph(&chain(&[3, 3, 3])).unwrap();
        let w = vec![
            DMatrix::identity(3, 3) * 2.0,
            DMatrix::identity(3, 3) * 3.0,
        ];
        let id = path_weight_product(&g, &[], NodeId(1), &w).unwrap();
        assert_eq!(id, DMatrix::identity(3, 3));
        let p = path_weight_product(&g, &[EdgeId(0), EdgeId(1)], NodeId(0), &w).unwrap();
        assert_eq!(p, DMatrix::identity(3, 3) * 6.0);

        let g = validate_graph(&chain(&[2, 4, 3, 5])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<_> = g
            .edges()
            .iter()
            .map(|e| {
                let (r, c) = g.edge_shape(e.id);
                gaussian_matrix(&mut rng, r, c)
            })
            .collect();
        let direct = &w[2] * &w[1] * &w[0];
        let prod = path_weight_product(&g, &[EdgeId(0), EdgeId(1), EdgeId(2)], NodeId(0), &w).unwrap();
        assert!(crate::linalg::max_abs(&(prod - direct)) < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let spec = routing_spec(3);
        let text = spec.to_toml_string();
        let g = ArchitectureGraph::from_toml_str(&text).unwrap();
        assert_eq!(g.to_spec(), spec);
    }

    fn layered_dag(widths: Vec<Vec<usize>>, keep: Vec<bool>) -> GraphSpec {
        // Fully connect consecutive layers, dropping edges where `keep` says so
        // (but always keeping the first edge of each target, so the graph stays
        // connected).
        let mut g = GraphSpec::default();
        for (l, layer) in widths.iter().enumerate() {
            for (i, w) in layer.iter().enumerate() {
                g.node(format!("l{l}n{i}"), *w);
            }
        }
        let mut k = 0;
        for l in 1..widths.len() {
            for t in 0..widths[l].len() {
                for s in 0..widths[l - 1].len() {
                    let take = s == t % widths[l - 1].len() || keep[k % keep.len()];
                    k += 1;
                    if take {
                        g.edge(format!("l{}n{s}", l - 1), format!("l{l}n{t}"));
                    }
                }
            }
        }
        g
    }

    proptest! {
        #[test]
        fn split_product_identity(
            widths in prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 2..4),
            keep in prop::collection::vec(any::<bool>(), 1..12),
            seed in 0u64..1000,
        ) {
            let spec = layered_dag(widths, keep);
            let Ok(g) = validate_graph(&spec) else { return Ok(()); };
            let t = enumerate_paths(&g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<_> = g.edges().iter().map(|e| {
                let (r, c) = g.edge_shape(e.id);
                gaussian_matrix(&mut rng, r, c)
            }).collect();

            // double counting
            let lhs: usize = t.through_edge.iter().map(Vec::len).sum();
            let rhs: usize = t.all_paths.iter().map(|p| p.edges.len()).sum();
            prop_assert_eq!(lhs, rhs);

            for e in g.edges() {
                for &pi in &t.through_edge[e.id.0] {
                    let p = &t.all_paths[pi];
                    let (s, u) = split_path(&g, p, e.id).unwrap();
                    let ws = path_weight_product(&g, &s.edges, s.start, &w).unwrap();
                    let wt = path_weight_product(&g, &u.edges, u.start, &w).unwrap();
                    let full = path_weight_product(&g, &p.edges, p.source_node, &w).unwrap();
                    let split = wt * &w[e.id.0] * ws;
                    prop_assert!(crate::linalg::max_abs(&(split - full)) < 1e-10);
                }
            }
            // deterministic
            let t2 = enumerate_paths(&g).unwrap();
            prop_assert_eq!(t.all_paths, t2.all_paths);
        }
    }
}
