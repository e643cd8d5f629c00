//! Full-network simulation: forward pass, loss, pathway gradients, weight
//! initialization and gradient-flow integration.

mod gradient;
mod integrate;
mod relu;
mod train;

pub use gradient::{analytic_gradient, finite_difference_gradient, max_relative_error, GradientEngine};
pub use integrate::{integrate_step, FlowState, Integrator};
pub use relu::{relu_reference_train, scalar_task, ReluConfig, ReluNet, ReluOutcome};
pub use train::{node_balance, train, train_on_correlations, Trajectory, TrainOutcome};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{GatedDataset, GatedExample};
use crate::error::{Error, Result};
use crate::linalg::{diag_matrix, gaussian_matrix, random_orthonormal};
use crate::netgraph::{ArchitectureGraph, EdgeId, NodeId, NodeKind};
use crate::reduction::NodeBases;

/// One weight matrix per edge, indexed by edge id, shaped
/// `width(target) × width(source)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub weights: Vec<DMatrix<f64>>,
    pub time: f64,
}

impl WeightState {
    pub fn zeros(graph: &ArchitectureGraph) -> Self {
        WeightState {
            weights: graph
                .edges()
                .iter()
                .map(|e| {
                    let (r, c) = graph.edge_shape(e.id);
                    DMatrix::zeros(r, c)
                })
                .collect(),
            time: 0.0,
        }
    }

    pub fn get(&self, e: EdgeId) -> &DMatrix<f64> {
        &self.weights[e.0]
    }

    pub fn check_shapes(&self, graph: &ArchitectureGraph) -> Result<()> {
        if self.weights.len() != graph.edges().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrices for {} edges",
                self.weights.len(),
                graph.edges().len()
            )));
        }
        for e in graph.edges() {
            let want = graph.edge_shape(e.id);
            let got = self.weights[e.id.0].shape();
            if want != got {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {got:?}, expected {want:?}",
                    graph.edge_label(e.id)
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Plain-text snapshot: a `time` line, then per edge a header
    /// `edge <id> <label> <rows> <cols>` followed by one line per row.
    pub fn to_text(&self, graph: &ArchitectureGraph) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "time {}", self.time);
        for (i, w) in self.weights.iter().enumerate() {
            let _ = writeln!(s, "edge {i} {} {} {}", graph.edge_label(EdgeId(i)), w.nrows(), w.ncols());
            for r in 0..w.nrows() {
                let row: Vec<String> = (0..w.ncols()).map(|c| w[(r, c)].to_string()).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("weight snapshot: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let time = lines
            .next()
            .and_then(|l| l.strip_prefix("time "))
            .ok_or_else(|| bad("missing time line"))?
            .trim()
            .parse::<f64>()
            .map_err(|_| bad("bad time"))?;
        let mut weights = Vec::new();
        while let Some(h) = lines.next() {
            let parts: Vec<&str> = h.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "edge" {
                return Err(bad(&format!("bad header `{h}`")));
            }
            let rows: usize = parts[3].parse().map_err(|_| bad("rows"))?;
            let cols: usize = parts[4].parse().map_err(|_| bad("cols"))?;
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| bad("truncated matrix"))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|_| bad("bad entry")))
                    .collect::<Result<_>>()?;
                if vals.len() != cols {
                    return Err(bad("row length"));
                }
                for (c, v) in vals.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            weights.push(m);
        }
        Ok(WeightState { weights, time })
    }
}

impl FlowState for WeightState {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (w, d) in self.weights.iter_mut().zip(&other.weights) {
            *w += d * a;
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitScheme {
    /// Gaussian entries with std `scale·sqrt(2/(fan_in+fan_out))`.
    SmallRandom { scale: f64 },
    /// `sigma0 · U Vᵀ` with Haar-random orthonormal U, V: every singular
    /// value equals `sigma0`.
    FixedSingular { sigma0: f64 },
    /// `W_e = R_t diag(b0[e]) R_sᵀ` in the given node bases.
    Decoupled { b0: Vec<Vec<f64>>, bases: NodeBases },
}

impl InitScheme {
    /// Decoupled init with the same value on every mode of every edge.
    pub fn decoupled_uniform(graph: &ArchitectureGraph, bases: NodeBases, b0: f64) -> Self {
        let r = bases.modes();
        InitScheme::Decoupled {
            b0: vec![vec![b0; r]; graph.edges().len()],
            bases,
        }
    }
}

pub fn init_weights(graph: &ArchitectureGraph, scheme: &InitScheme, seed: u64) -> Result<WeightState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = graph
        .edges()
        .iter()
        .map(|e| {
            let (rows, cols) = graph.edge_shape(e.id);
            match scheme {
                InitScheme::SmallRandom { scale } => {
                    let std = scale * (2.0 / (rows + cols) as f64).sqrt();
                    Ok(gaussian_matrix(&mut rng, rows, cols) * std)
                }
                InitScheme::FixedSingular { sigma0 } => {
                    if *sigma0 <= 0.0 {
                        return Err(Error::InvalidConfig(format!("sigma0 must be positive, got {sigma0}")));
                    }
                    let k = rows.min(cols);
                    let u = random_orthonormal(&mut rng, rows, k);
                    let v = random_orthonormal(&mut rng, cols, k);
                    Ok(u * v.transpose() * *sigma0)
                }
                InitScheme::Decoupled { b0, bases } => {
                    let b = b0.get(e.id.0).ok_or_else(|| {
                        Error::DimensionMismatch(format!("no initial modes for {}", graph.edge_label(e.id)))
                    })?;
                    if b.len() != bases.modes() {
                        return Err(Error::DimensionMismatch(format!(
                            "{} initial modes, bases carry {}",
                            b.len(),
                            bases.modes()
                        )));
                    }
                    let rt = bases.get(e.target);
                    let rs = bases.get(e.source);
                    Ok(rt * diag_matrix(b.len(), b.len(), b) * rs.transpose())
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightState { weights, time: 0.0 })
}

/// Activations of every node. Input nodes are clamped to the example (zero
/// if absent); other nodes follow `h_v = g_v Σ_q g_q W_q h_{s(q)}`.
pub fn forward(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    example: &GatedExample,
) -> Result<BTreeMap<NodeId, DVector<f64>>> {
    let mut h: Vec<DVector<f64>> = graph.nodes().iter().map(|n| DVector::zeros(n.width)).collect();
    for &v in graph.topological_order() {
        let node = graph.node(v);
        if node.kind == NodeKind::Input {
            if let Some(x) = example.inputs.get(&v) {
                if x.len() != node.width {
                    return Err(Error::DimensionMismatch(format!(
                        "input on `{}` has length {}, width {}",
                        node.name,
                        x.len(),
                        node.width
                    )));
                }
                h[v.0] = x.clone();
            }
            continue;
        }
        let gv = example.gates.node_gates[v.0];
        if gv == 0.0 {
            continue;
        }
        let mut acc = DVector::zeros(node.width);
        for &q in graph.incoming(v) {
            let gq = example.gates.edge_gates[q.0];
            if gq == 0.0 {
                continue;
            }
            let w = weights.get(q);
            let src = &h[graph.edge(q).source.0];
            if w.ncols() != src.len() || w.nrows() != node.width {
                return Err(Error::DimensionMismatch(format!("weight on {} has shape {:?}", graph.edge_label(q), w.shape())));
            }
            acc.gemv(gv * gq, w, src, 1.0);
        }
        h[v.0] = acc;
    }
    Ok(h.into_iter().enumerate().map(|(i, x)| (NodeId(i), x)).collect())
}

/// ½ Σ_{v output} ‖y_v − h_v‖² for one example; a missing target is zero.
pub fn example_loss(graph: &ArchitectureGraph, weights: &WeightState, example: &GatedExample) -> Result<f64> {
    let h = forward(graph, weights, example)?;
    let mut l = 0.0;
    for v in graph.output_nodes() {
        let out = &h[&v];
        l += match example.targets.get(&v) {
            Some(y) => (y - out).norm_squared(),
            None => out.norm_squared(),
        };
    }
    Ok(0.5 * l)
}

/// Probability-weighted average of [`example_loss`] over the dataset.
pub fn dataset_loss(graph: &ArchitectureGraph, weights: &WeightState, dataset: &GatedDataset) -> Result<f64> {
    dataset
        .examples
        .iter()
        .map(|ex| Ok(ex.weight * example_loss(graph, weights, ex)?))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Time constant τ.
    pub tau: f64,
    /// Step size η; each Euler update adds `(η/τ)·τ dW/dt`.
    #[serde(alias = "lambda", alias = "lr", alias = "eta")]
    pub step: f64,
    pub steps: usize,
    /// Record loss (and the other series) every this many steps.
    pub record_every: usize,
    /// Number of leading singular values kept per edge, 0 disables.
    pub top_k: usize,
    pub integrator: Integrator,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tau: 1.0,
            step: 1e-2,
            steps: 1000,
            record_every: 10,
            top_k: 4,
            integrator: Integrator::Euler,
            divergence_factor: 10.0,
        }
    }
}

/// Above this ratio η/τ plain Euler is likely to overshoot on the built-in
/// tasks.
pub const STEP_RATIO_WARN: f64 = 0.5;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau and step must be positive (tau={}, step={})",
                self.tau, self.step
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_ratio(&self) -> f64 {
        self.step / self.tau
    }

    pub fn step_ratio_warning(&self) -> Option<String> {
        (self.step_ratio() > STEP_RATIO_WARN).then(|| {
            format!(
                "step/tau = {} exceeds {STEP_RATIO_WARN}; Euler integration may be unstable",
                self.step_ratio()
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{
        make_contextual_dataset, make_routing_dataset, make_xor_dataset, ContextScheme, GateAssignment,
        RoutingConfig, XorScheme, XorSign,
    };
    use crate::linalg::singular_values;
    use crate::netgraph::{validate_graph, GraphSpec};

    fn chain() -> ArchitectureGraph {
        let mut s = GraphSpec::default();
        s.node("in", 3).node("h", 3).node("out", 3).edge("in", "h").edge("h", "out");
        validate_graph(&s).unwrap()
    }

    #[test]
    fn identity_chain_passes_input_through() {
        let g = chain();
        let w = WeightState {
            weights: vec![DMatrix::identity(3, 3); 2],
            time: 0.0,
        };
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let ex = GatedExample {
            inputs: BTreeMap::from([(NodeId(0), x.clone())]),
            targets: BTreeMap::new(),
            gates: GateAssignment::all_on(&g),
            weight: 1.0,
        };
        let h = forward(&g, &w, &ex).unwrap();
        assert_eq!(h[&NodeId(2)], x);
        let mut off = ex.clone();
        off.gates.set_node(NodeId(1), 0.0);
        let h = forward(&g, &w, &off).unwrap();
        assert_eq!(h[&NodeId(1)], DVector::zeros(3));
        assert_eq!(h[&NodeId(2)], DVector::zeros(3));
    }

    #[test]
    fn routing_forward_composes_active_route() {
        let task = make_routing_dataset(&RoutingConfig { m: 2, k: 2, hidden: 3, ..RoutingConfig::default() }).unwrap();
        let g = &task.dataset.graph;
        let w = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, 3).unwrap();
        let ex = &task.route_examples(1, 0)[2];
        let h = forward(g, &w, ex).unwrap();
        let l = task.layout;
        let x = &ex.inputs[&l.input_node(1)];
        let expect = w.get(l.output_edge(0)) * w.get(l.hidden_edge()) * w.get(l.input_edge(1)) * x;
        assert!((&h[&l.output_node(0)] - expect).amax() < 1e-14);
        assert_eq!(h[&l.output_node(1)], DVector::zeros(7));
    }

    #[test]
    fn zero_weight_loss_is_half_target_energy() {
        let t = make_xor_dataset(XorScheme::FourPathway, XorSign::NegativeOnAgreement);
        let w = WeightState::zeros(&t.dataset.graph);
        assert_eq!(dataset_loss(&t.dataset.graph, &w, &t.dataset).unwrap(), 0.5);
    }

    #[test]
    fn perfect_contextual_weights_have_zero_loss() {
        let task = make_contextual_dataset(50, 1, ContextScheme::PerContext).unwrap();
        let g = &task.dataset.graph;
        let mut w = WeightState::zeros(g);
        // pathway c: in_c -> h_c picks coordinate c, h_c -> out copies it
        w.weights[0] = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        w.weights[1] = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        w.weights[2] = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        w.weights[3] = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(dataset_loss(g, &w, &task.dataset).unwrap() < 1e-30);
    }

    #[test]
    fn loss_ignores_example_order() {
        let task = make_contextual_dataset(30, 2, ContextScheme::AlwaysOn).unwrap();
        let g = task.dataset.graph.clone();
        let w = init_weights(&g, &InitScheme::SmallRandom { scale: 1.0 }, 0).unwrap();
        let mut rev = task.dataset.clone();
        rev.examples.reverse();
        let a = dataset_loss(&g, &w, &task.dataset).unwrap();
        let b = dataset_loss(&g, &w, &rev).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn init_schemes() {
        let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 6, ..RoutingConfig::default() }).unwrap();
        let g = &task.dataset.graph;
        let w = init_weights(g, &InitScheme::FixedSingular { sigma0: 0.2 }, 5).unwrap();
        for m in &w.weights {
            for s in singular_values(m) {
                assert!((s - 0.2).abs() < 1e-12);
            }
        }
        let a = init_weights(g, &InitScheme::SmallRandom { scale: 0.2 }, 9).unwrap();
        let b = init_weights(g, &InitScheme::SmallRandom { scale: 0.2 }, 9).unwrap();
        assert_eq!(a, b);
        let c = init_weights(g, &InitScheme::SmallRandom { scale: 0.2 }, 10).unwrap();
        assert_ne!(a, c);
        let bases = NodeBases::random(g, 4, 0);
        let z = init_weights(g, &InitScheme::decoupled_uniform(g, bases, 0.0), 0).unwrap();
        assert!(z.weights.iter().all(|m| m.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn snapshot_text_round_trip() {
        let g = chain();
        let mut w = init_weights(&g, &InitScheme::SmallRandom { scale: 1.0 }, 1).unwrap();
        w.time = 2.5;
        let back = WeightState::from_text(&w.to_text(&g)).unwrap();
        assert_eq!(back, w);
    }
}
