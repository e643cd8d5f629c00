//! Built-in tasks and gating schemes: XoR, contextual classification, the
//! hierarchical item set, the routing task, pathway-race gatings and the
//! composed-transformation benchmark.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GateAssignment, GatedDataset, GatedExample, PathwayCorrelations, RouteMask};
use crate::error::{Error, Result};
use crate::linalg::random_orthonormal;
use crate::netgraph::{validate_graph, ArchitectureGraph, EdgeId, GraphSpec, NodeId, PathTables};

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

// ---------------------------------------------------------------------------
// XoR

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XorScheme {
    /// One pathway per example, each gated on for exactly that example.
    FourPathway,
    /// A single always-on pathway (a plain deep linear network).
    SinglePathway,
}

/// Global sign of the XoR targets. The task is fixed up to this sign and the
/// loss dynamics do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XorSign {
    /// y = +1 when exactly one input bit is +1 (the truth table).
    NegativeOnAgreement,
    /// y = +1 when both bits agree.
    PositiveOnAgreement,
}

pub const XOR_INPUTS: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];

pub fn xor_target(x: [f64; 2], sign: XorSign) -> f64 {
    let agree = x[0] * x[1] > 0.0;
    match (sign, agree) {
        (XorSign::NegativeOnAgreement, true) | (XorSign::PositiveOnAgreement, false) => -1.0,
        _ => 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct XorTask {
    pub dataset: GatedDataset,
    pub scheme: XorScheme,
    pub sign: XorSign,
}

pub fn make_xor_dataset(scheme: XorScheme, sign: XorSign) -> XorTask {
    make_xor_dataset_with_width(scheme, sign, 1)
}

/// In the four-pathway scheme every pathway gets its own copy of the input
/// layer (`in0..in3`, all clamped to the same x) feeding hidden node `h_k`;
/// the pathways merge at the single output node. Pathway k is gated on
/// through node `h_k` for example k only.
pub fn make_xor_dataset_with_width(scheme: XorScheme, sign: XorSign, hidden: usize) -> XorTask {
    let mut spec = GraphSpec::default();
    let pathways = match scheme {
        XorScheme::FourPathway => 4,
        XorScheme::SinglePathway => 1,
    };
    for k in 0..pathways {
        spec.node(format!("in{k}"), 2);
    }
    for k in 0..pathways {
        spec.node(format!("h{k}"), hidden);
    }
    spec.node("out", 1);
    for k in 0..pathways {
        spec.edge(format!("in{k}"), format!("h{k}"));
    }
    for k in 0..pathways {
        spec.edge(format!("h{k}"), "out");
    }
    let graph = Arc::new(validate_graph(&spec).expect("xor graph is valid"));
    let out = graph.node_by_name("out").unwrap();
    let examples = XOR_INPUTS
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let mut gates = GateAssignment::all_on(&graph);
            if scheme == XorScheme::FourPathway {
                for other in 0..4 {
                    let h = graph.node_by_name(&format!("h{other}")).unwrap();
                    gates.set_node(h, if other == k { 1.0 } else { 0.0 });
                }
            }
            let inputs = (0..pathways)
                .map(|p| (graph.node_by_name(&format!("in{p}")).unwrap(), vector(&x)))
                .collect();
            GatedExample {
                inputs,
                targets: BTreeMap::from([(out, vector(&[xor_target(x, sign)]))]),
                gates,
                weight: 0.25,
            }
        })
        .collect();
    XorTask {
        dataset: GatedDataset {
            graph,
            examples,
            route_mask: None,
        },
        scheme,
        sign,
    }
}

// ---------------------------------------------------------------------------
// Contextual classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextScheme {
    AlwaysOn,
    PerContext,
}

#[derive(Debug, Clone)]
pub struct ContextualTask {
    pub dataset: GatedDataset,
    pub scheme: ContextScheme,
    /// Context (0 or 1) of each example.
    pub contexts: Vec<usize>,
}

pub fn contextual_graph(scheme: ContextScheme, hidden: usize) -> ArchitectureGraph {
    let mut spec = GraphSpec::default();
    let n = match scheme {
        ContextScheme::AlwaysOn => 1,
        ContextScheme::PerContext => 2,
    };
    for c in 0..n {
        spec.node(format!("in{c}"), 2);
    }
    for c in 0..n {
        spec.node(format!("h{c}"), hidden);
    }
    spec.node("out", 1);
    for c in 0..n {
        spec.edge(format!("in{c}"), format!("h{c}"));
    }
    for c in 0..n {
        spec.edge(format!("h{c}"), "out");
    }
    validate_graph(&spec).expect("contextual graph is valid")
}

/// `n_samples` draws of x ~ U[-1,1]², context c uniform on {0,1}, target
/// y = x_c. Under `PerContext`, pathway c is gated on in context c.
pub fn make_contextual_dataset(n_samples: usize, seed: u64, scheme: ContextScheme) -> Result<ContextualTask> {
    make_contextual_dataset_with_width(n_samples, seed, scheme, 2)
}

pub fn make_contextual_dataset_with_width(
    n_samples: usize,
    seed: u64,
    scheme: ContextScheme,
    hidden: usize,
) -> Result<ContextualTask> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("contextual task needs at least one sample".into()));
    }
    let graph = Arc::new(contextual_graph(scheme, hidden));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = graph.node_by_name("out").unwrap();
    let mut examples = Vec::with_capacity(n_samples);
    let mut contexts = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let c = rng.random_range(0..2usize);
        let mut gates = GateAssignment::all_on(&graph);
        let mut inputs = BTreeMap::new();
        match scheme {
            ContextScheme::AlwaysOn => {
                inputs.insert(graph.node_by_name("in0").unwrap(), vector(&x));
            }
            ContextScheme::PerContext => {
                for k in 0..2 {
                    inputs.insert(graph.node_by_name(&format!("in{k}")).unwrap(), vector(&x));
                    let h = graph.node_by_name(&format!("h{k}")).unwrap();
                    gates.set_node(h, if k == c { 1.0 } else { 0.0 });
                }
            }
        }
        examples.push(GatedExample {
            inputs,
            targets: BTreeMap::from([(out, vector(&[x[c]]))]),
            gates,
            weight: 1.0 / n_samples as f64,
        });
        contexts.push(c);
    }
    Ok(ContextualTask {
        dataset: GatedDataset {
            graph,
            examples,
            route_mask: None,
        },
        scheme,
        contexts,
    })
}

/// Exact population statistics of the contextual task (the n → ∞ limit of
/// [`make_contextual_dataset`]) for the graph from [`contextual_graph`].
pub fn contextual_population_correlations(
    scheme: ContextScheme,
    tables: &PathTables,
) -> Result<PathwayCorrelations> {
    let third = 1.0 / 3.0;
    let sixth = 1.0 / 6.0;
    let (yx, xx) = match scheme {
        ContextScheme::AlwaysOn => (
            vec![Some(DMatrix::from_row_slice(1, 2, &[sixth, sixth]))],
            BTreeMap::from([((0, 0), DMatrix::identity(2, 2) * third)]),
        ),
        ContextScheme::PerContext => (
            vec![
                Some(DMatrix::from_row_slice(1, 2, &[sixth, 0.0])),
                Some(DMatrix::from_row_slice(1, 2, &[0.0, sixth])),
            ],
            BTreeMap::from([
                ((0, 0), DMatrix::identity(2, 2) * sixth),
                ((1, 1), DMatrix::identity(2, 2) * sixth),
            ]),
        ),
    };
    PathwayCorrelations::new(tables, yx, xx, third)
}

// ---------------------------------------------------------------------------
// Hierarchical items

/// Targets of the four hierarchical items, one column per item: feature 0 is
/// the root (shared by all items), features 1–2 the two branches, features
/// 3–6 the leaves.
pub fn hierarchy_targets() -> DMatrix<f64> {
    DMatrix::from_column_slice(
        7,
        4,
        &[
            1., 1., 0., 1., 0., 0., 0., //
            1., 1., 0., 0., 1., 0., 0., //
            1., 0., 1., 0., 0., 1., 0., //
            1., 0., 1., 0., 0., 0., 1., //
        ],
    )
}

#[derive(Debug, Clone)]
pub struct HierarchyData {
    /// `input_dim × 4`, orthonormal columns.
    pub x: DMatrix<f64>,
    /// `7 × 4` tree targets.
    pub y: DMatrix<f64>,
}

impl HierarchyData {
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim < 4 {
            return Err(Error::InvalidConfig(format!(
                "hierarchy inputs need dimension >= 4, got {input_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(HierarchyData {
            x: random_orthonormal(&mut rng, input_dim, 4),
            y: hierarchy_targets(),
        })
    }

    pub fn items(&self) -> usize {
        self.x.ncols()
    }

    /// ⟨y xᵀ⟩ over the uniformly weighted items.
    pub fn sigma_yx(&self) -> DMatrix<f64> {
        &self.y * self.x.transpose() / self.items() as f64
    }

    pub fn sigma_x(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose() / self.items() as f64
    }

    /// ⟨‖y‖²⟩.
    pub fn target_energy(&self) -> f64 {
        self.y.norm_squared() / self.items() as f64
    }
}

pub fn make_hierarchy_dataset() -> HierarchyData {
    HierarchyData::new(4, 0).expect("default dimension is valid")
}

// ---------------------------------------------------------------------------
// Routing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteRule {
    /// Route (i, j) is trained iff j ∈ {i, …, i+K−1} mod M.
    CyclicBand,
    /// The cyclic band with rows and columns shuffled by the seed; still K
    /// trained routes per input and per output domain.
    RandomBalanced,
}

pub fn route_mask(m: usize, k: usize, rule: RouteRule, seed: u64) -> Result<RouteMask> {
    if k == 0 || k > m {
        return Err(Error::InvalidK { m, k });
    }
    let band: Vec<Vec<bool>> = (0..m)
        .map(|i| (0..m).map(|j| (j + m - i) % m < k).collect())
        .collect();
    Ok(match rule {
        RouteRule::CyclicBand => RouteMask(band),
        RouteRule::RandomBalanced => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_b0a7d);
            let mut rows: Vec<usize> = (0..m).collect();
            let mut cols: Vec<usize> = (0..m).collect();
            rows.shuffle(&mut rng);
            cols.shuffle(&mut rng);
            RouteMask(
                (0..m)
                    .map(|i| (0..m).map(|j| band[rows[i]][cols[j]]).collect())
                    .collect(),
            )
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub m: usize,
    pub k: usize,
    /// Width of each of the two hidden layers.
    pub hidden: usize,
    pub input_dim: usize,
    pub rule: RouteRule,
    pub seed: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            m: 7,
            k: 4,
            hidden: 64,
            input_dim: 4,
            rule: RouteRule::CyclicBand,
            seed: 0,
        }
    }
}

/// Encoder/shared/decoder routing graph: `in{i} → h1 → h2 → out{j}`. Edge
/// ids: `0..m` input edges, `m` the hidden edge, `m+1+j` the output edges,
/// so path (i, j) has index `i·m + j`.
pub fn routing_graph(m: usize, input_dim: usize, hidden: usize, output_dim: usize) -> ArchitectureGraph {
    let mut spec = GraphSpec::default();
    for i in 0..m {
        spec.node(format!("in{i}"), input_dim);
    }
    spec.node("h1", hidden).node("h2", hidden);
    for j in 0..m {
        spec.node(format!("out{j}"), output_dim);
    }
    for i in 0..m {
        spec.edge(format!("in{i}"), "h1");
    }
    spec.edge("h1", "h2");
    for j in 0..m {
        spec.edge("h2", format!("out{j}"));
    }
    validate_graph(&spec).expect("routing graph is valid")
}

/// Node and edge lookups shared by the routing-shaped graphs.
#[derive(Debug, Clone, Copy)]
pub struct RoutingLayout {
    pub m: usize,
}

impl RoutingLayout {
    pub fn input_node(&self, i: usize) -> NodeId {
        NodeId(i)
    }
    pub fn h1(&self) -> NodeId {
        NodeId(self.m)
    }
    pub fn h2(&self) -> NodeId {
        NodeId(self.m + 1)
    }
    pub fn output_node(&self, j: usize) -> NodeId {
        NodeId(self.m + 2 + j)
    }
    pub fn input_edge(&self, i: usize) -> EdgeId {
        EdgeId(i)
    }
    pub fn hidden_edge(&self) -> EdgeId {
        EdgeId(self.m)
    }
    pub fn output_edge(&self, j: usize) -> EdgeId {
        EdgeId(self.m + 1 + j)
    }
    pub fn path_index(&self, i: usize, j: usize) -> usize {
        i * self.m + j
    }

    /// Gates for route (i, j): one input edge and one output edge on, hidden
    /// edge always on.
    pub fn route_gates(&self, graph: &ArchitectureGraph, i: usize, j: usize) -> GateAssignment {
        let mut g = GateAssignment::all_on(graph);
        for d in 0..self.m {
            g.set_edge(self.input_edge(d), if d == i { 1.0 } else { 0.0 });
            g.set_edge(self.output_edge(d), if d == j { 1.0 } else { 0.0 });
        }
        g
    }

    pub fn route_example(
        &self,
        graph: &ArchitectureGraph,
        i: usize,
        j: usize,
        x: DVector<f64>,
        y: DVector<f64>,
        weight: f64,
    ) -> GatedExample {
        GatedExample {
            inputs: BTreeMap::from([(self.input_node(i), x)]),
            targets: BTreeMap::from([(self.output_node(j), y)]),
            gates: self.route_gates(graph, i, j),
            weight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoutingTask {
    pub dataset: GatedDataset,
    pub base: HierarchyData,
    pub config: RoutingConfig,
    pub layout: RoutingLayout,
}

pub fn make_routing_dataset(config: &RoutingConfig) -> Result<RoutingTask> {
    let mask = route_mask(config.m, config.k, config.rule, config.seed)?;
    let base = HierarchyData::new(config.input_dim, config.seed)?;
    let graph = Arc::new(routing_graph(config.m, config.input_dim, config.hidden, base.y.nrows()));
    let layout = RoutingLayout { m: config.m };
    let w = 1.0 / (mask.count_trained() * base.items()) as f64;
    let mut examples = Vec::new();
    for (i, j) in mask.trained_routes() {
        for a in 0..base.items() {
            examples.push(layout.route_example(
                &graph,
                i,
                j,
                base.x.column(a).into_owned(),
                base.y.column(a).into_owned(),
                w,
            ));
        }
    }
    Ok(RoutingTask {
        dataset: GatedDataset {
            graph,
            examples,
            route_mask: Some(mask),
        },
        base,
        config: config.clone(),
        layout,
    })
}

impl RoutingTask {
    pub fn path_index(&self, i: usize, j: usize) -> usize {
        self.layout.path_index(i, j)
    }

    /// Every base item presented on route (i, j), uniformly weighted.
    pub fn route_examples(&self, i: usize, j: usize) -> Vec<GatedExample> {
        let n = self.base.items();
        (0..n)
            .map(|a| {
                self.layout.route_example(
                    &self.dataset.graph,
                    i,
                    j,
                    self.base.x.column(a).into_owned(),
                    self.base.y.column(a).into_owned(),
                    1.0 / n as f64,
                )
            })
            .collect()
    }

    /// Each item on each input domain, labelled (domain, item). Output gates
    /// are left on so probes can read any layer.
    pub fn probe_set(&self) -> Vec<((usize, usize), GatedExample)> {
        let g = &self.dataset.graph;
        let mut probes = Vec::new();
        for i in 0..self.config.m {
            for a in 0..self.base.items() {
                let mut gates = GateAssignment::all_on(g);
                for d in 0..self.config.m {
                    gates.set_edge(self.layout.input_edge(d), if d == i { 1.0 } else { 0.0 });
                }
                probes.push((
                    (i, a),
                    GatedExample {
                        inputs: BTreeMap::from([(self.layout.input_node(i), self.base.x.column(a).into_owned())]),
                        targets: BTreeMap::new(),
                        gates,
                        weight: 1.0,
                    },
                ));
            }
        }
        probes
    }
}

// ---------------------------------------------------------------------------
// Pathway race gatings

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaceConfig {
    pub m: usize,
    /// Routes per hidden block; must be g² with g dividing m.
    pub p: usize,
    pub block_width: usize,
    pub input_dim: usize,
    pub seed: u64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        RaceConfig {
            m: 10,
            p: 4,
            block_width: 4,
            input_dim: 4,
            seed: 0,
        }
    }
}

/// Side length g of the domain groups sharing a block, if P is admissible.
pub fn race_group_size(m: usize, p: usize) -> Result<usize> {
    let g = (p as f64).sqrt().round() as usize;
    if g == 0 || g * g != p || !m.is_multiple_of(g) {
        return Err(Error::InvalidP { m, p });
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct RaceTask {
    pub dataset: GatedDataset,
    pub base: HierarchyData,
    pub config: RaceConfig,
    pub group: usize,
    /// `blocks_per_side²` hidden blocks; block (a, c) serves input group a and
    /// output group c.
    pub blocks_per_side: usize,
}

impl RaceTask {
    pub fn block_of_route(&self, i: usize, j: usize) -> usize {
        (i / self.group) * self.blocks_per_side + j / self.group
    }

    pub fn hidden_edge(&self, block: usize) -> EdgeId {
        EdgeId(self.config.m * self.blocks_per_side + block)
    }

    pub fn input_edge(&self, i: usize, block: usize) -> EdgeId {
        EdgeId(i * self.blocks_per_side + block % self.blocks_per_side)
    }
}

/// Routing task (all M² routes trained) under a gating that partitions the
/// hidden layers into blocks, each block gated on for exactly P routes: the
/// routes between a group of g = √P input domains and a group of g output
/// domains. P = 1 gives every route a dedicated block, P = M² a single
/// shared block.
pub fn make_race_gating(config: &RaceConfig) -> Result<RaceTask> {
    let m = config.m;
    let g = race_group_size(m, config.p)?;
    let side = m / g;
    let nblocks = side * side;
    let base = HierarchyData::new(config.input_dim, config.seed)?;
    let out_dim = base.y.nrows();

    let mut spec = GraphSpec::default();
    for i in 0..m {
        spec.node(format!("in{i}"), config.input_dim);
    }
    for b in 0..nblocks {
        spec.node(format!("h1_{b}"), config.block_width);
    }
    for b in 0..nblocks {
        spec.node(format!("h2_{b}"), config.block_width);
    }
    for j in 0..m {
        spec.node(format!("out{j}"), out_dim);
    }
    // input i connects to the blocks of its input group, one per output group
    for i in 0..m {
        for c in 0..side {
            spec.edge(format!("in{i}"), format!("h1_{}", (i / g) * side + c));
        }
    }
    for b in 0..nblocks {
        spec.edge(format!("h1_{b}"), format!("h2_{b}"));
    }
    for b in 0..nblocks {
        let c = b % side;
        for j in c * g..(c + 1) * g {
            spec.edge(format!("h2_{b}"), format!("out{j}"));
        }
    }
    let graph = Arc::new(validate_graph(&spec)?);

    let mut task = RaceTask {
        dataset: GatedDataset {
            graph: graph.clone(),
            examples: Vec::new(),
            route_mask: Some(RouteMask(vec![vec![true; m]; m])),
        },
        base,
        config: config.clone(),
        group: g,
        blocks_per_side: side,
    };
    let w = 1.0 / (m * m * task.base.items()) as f64;
    let out_edge_base = m * side + nblocks;
    let mut examples = Vec::with_capacity(m * m * task.base.items());
    for i in 0..m {
        for j in 0..m {
            let b = task.block_of_route(i, j);
            let mut gates = GateAssignment::all_on(&graph);
            for e in 0..m * side {
                gates.set_edge(EdgeId(e), 0.0);
            }
            for e in out_edge_base..graph.edges().len() {
                gates.set_edge(EdgeId(e), 0.0);
            }
            gates.set_edge(task.input_edge(i, b), 1.0);
            gates.set_edge(EdgeId(out_edge_base + b * g + j % g), 1.0);
            for a in 0..task.base.items() {
                examples.push(GatedExample {
                    inputs: BTreeMap::from([(NodeId(i), task.base.x.column(a).into_owned())]),
                    targets: BTreeMap::from([(NodeId(m + 2 * nblocks + j), task.base.y.column(a).into_owned())]),
                    gates: gates.clone(),
                    weight: w,
                });
            }
        }
    }
    task.dataset.examples = examples;
    Ok(task)
}

// ---------------------------------------------------------------------------
// Composed-transformation benchmark

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    PermuteInput,
    RotateInput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformConfig {
    pub m: usize,
    pub k: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub kind: TransformKind,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub rule: RouteRule,
    pub seed: u64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            m: 10,
            k: 4,
            n_classes: 10,
            input_dim: 16,
            hidden: 32,
            kind: TransformKind::PermuteInput,
            samples_per_class: 64,
            test_per_class: 16,
            noise: 0.1,
            rule: RouteRule::CyclicBand,
            seed: 0,
        }
    }
}

/// A labelled classification set: `inputs` columns with class `labels`.
#[derive(Debug, Clone)]
pub struct BaseSplit {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TransformTask {
    pub dataset: GatedDataset,
    pub config: TransformConfig,
    pub layout: RoutingLayout,
    pub prototypes: DMatrix<f64>,
    pub train: BaseSplit,
    pub test: BaseSplit,
    /// Input transformation matrices, index 0 the identity.
    pub input_maps: Vec<DMatrix<f64>>,
    /// Label permutations, index 0 the identity.
    pub label_maps: Vec<Vec<usize>>,
}

pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, &p) in perm.iter().enumerate() {
        m[(p, i)] = 1.0;
    }
    m
}

/// Rotation by `angle` in each of the disjoint coordinate planes (0,1),
/// (2,3), …; an odd trailing coordinate is left fixed.
pub fn plane_rotation(dim: usize, angle: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(dim, dim);
    let (s, c) = angle.sin_cos();
    for k in 0..dim / 2 {
        let (a, b) = (2 * k, 2 * k + 1);
        r[(a, a)] = c;
        r[(a, b)] = -s;
        r[(b, a)] = s;
        r[(b, b)] = c;
    }
    r
}

fn sample_split<R: Rng>(rng: &mut R, prototypes: &DMatrix<f64>, per_class: usize, noise: f64) -> BaseSplit {
    let (dim, classes) = prototypes.shape();
    let mut inputs = DMatrix::zeros(dim, classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for s in 0..per_class {
            let col = c * per_class + s;
            for r in 0..dim {
                inputs[(r, col)] = prototypes[(r, c)] + noise * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }
    BaseSplit { inputs, labels }
}

pub fn make_transform_bench(config: &TransformConfig) -> Result<TransformTask> {
    let &TransformConfig {
        m,
        k,
        n_classes,
        input_dim,
        ..
    } = config;
    if m < 2 || n_classes < 2 {
        return Err(Error::InvalidConfig("transform bench needs M >= 2 and n_classes >= 2".into()));
    }
    if input_dim < n_classes {
        return Err(Error::InvalidConfig(format!(
            "input_dim {input_dim} cannot hold {n_classes} orthogonal prototypes"
        )));
    }
    let mask = route_mask(m, k, config.rule, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes = random_orthonormal(&mut rng, input_dim, n_classes);
    let train = sample_split(&mut rng, &prototypes, config.samples_per_class, config.noise);
    let test = sample_split(&mut rng, &prototypes, config.test_per_class, config.noise);

    let mut input_maps = vec![DMatrix::identity(input_dim, input_dim)];
    for i in 1..m {
        input_maps.push(match config.kind {
            TransformKind::PermuteInput => {
                let mut perm: Vec<usize> = (0..input_dim).collect();
                perm.shuffle(&mut rng);
                permutation_matrix(&perm)
            }
            TransformKind::RotateInput => {
                plane_rotation(input_dim, std::f64::consts::PI * i as f64 / m as f64)
            }
        });
    }
    let mut label_maps = vec![(0..n_classes).collect::<Vec<_>>()];
    for _ in 1..m {
        let mut perm: Vec<usize> = (0..n_classes).collect();
        perm.shuffle(&mut rng);
        label_maps.push(perm);
    }

    let graph = Arc::new(routing_graph(m, input_dim, config.hidden, n_classes));
    let layout = RoutingLayout { m };
    let mut task = TransformTask {
        dataset: GatedDataset {
            graph,
            examples: Vec::new(),
            route_mask: Some(mask.clone()),
        },
        config: config.clone(),
        layout,
        prototypes,
        train,
        test,
        input_maps,
        label_maps,
    };
    let n = task.train.labels.len();
    let w = 1.0 / (mask.count_trained() * n) as f64;
    let mut examples = Vec::with_capacity(mask.count_trained() * n);
    for (i, j) in mask.trained_routes() {
        examples.extend(task.split_examples(&task.train, i, j, w));
    }
    task.dataset.examples = examples;
    Ok(task)
}

impl TransformTask {
    pub fn one_hot(&self, class: usize) -> DVector<f64> {
        let mut y = DVector::zeros(self.config.n_classes);
        y[class] = 1.0;
        y
    }

    /// Input transformation i applied to x.
    pub fn transform_input(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.input_maps[i] * x
    }

    pub fn transform_label(&self, j: usize, class: usize) -> usize {
        self.label_maps[j][class]
    }

    fn split_examples(&self, split: &BaseSplit, i: usize, j: usize, weight: f64) -> Vec<GatedExample> {
        split
            .labels
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                let x = self.transform_input(i, &split.inputs.column(s).into_owned());
                let y = self.one_hot(self.transform_label(j, c));
                self.layout.route_example(&self.dataset.graph, i, j, x, y, weight)
            })
            .collect()
    }

    /// Held-out examples of dataset D_{i,j}, uniformly weighted.
    pub fn route_test_examples(&self, i: usize, j: usize) -> Vec<GatedExample> {
        let n = self.test.labels.len();
        self.split_examples(&self.test, i, j, 1.0 / n as f64)
    }

    /// Training examples of D_{i,j}, uniformly weighted.
    pub fn route_train_examples(&self, i: usize, j: usize) -> Vec<GatedExample> {
        let n = self.train.labels.len();
        self.split_examples(&self.train, i, j, 1.0 / n as f64)
    }

    pub fn probe_set(&self) -> Vec<((usize, usize), GatedExample)> {
        let g = &self.dataset.graph;
        let mut probes = Vec::new();
        for i in 0..self.config.m {
            for c in 0..self.config.n_classes {
                let x = self.transform_input(i, &self.prototypes.column(c).into_owned());
                let mut gates = GateAssignment::all_on(g);
                for d in 0..self.config.m {
                    gates.set_edge(self.layout.input_edge(d), if d == i { 1.0 } else { 0.0 });
                }
                probes.push((
                    (i, c),
                    GatedExample {
                        inputs: BTreeMap::from([(self.layout.input_node(i), x)]),
                        targets: BTreeMap::new(),
                        gates,
                        weight: 1.0,
                    },
                ));
            }
        }
        probes
    }
}
