//! Representational similarity, spectra and generalization across routes.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::datasets::{GatedExample, RouteMask, RoutingTask, TransformTask};
use crate::dynamics::{forward, WeightState};
use crate::error::{Error, Result};
use crate::linalg::{argmax, singular_values};
use crate::netgraph::{ArchitectureGraph, NodeId};

/// Dot products between hidden activations, rows labelled (domain, item).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub labels: Vec<(usize, usize)>,
}

impl KernelMatrix {
    pub fn to_csv(&self) -> String {
        let names: Vec<String> = self.labels.iter().map(|(d, i)| format!("d{d}:i{i}")).collect();
        let mut s = format!("label,{}\n", names.join(","));
        for (r, name) in names.iter().enumerate() {
            let row: Vec<String> = (0..self.entries.ncols()).map(|c| self.entries[(r, c)].to_string()).collect();
            let _ = writeln!(s, "{name},{}", row.join(","));
        }
        s
    }

    fn index(&self, label: (usize, usize)) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// `K[(i,a),(j,b)] = h_layer(item a on domain i) · h_layer(item b on domain j)`.
pub fn hidden_rsm(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    probes: &[((usize, usize), GatedExample)],
    layer: NodeId,
) -> Result<KernelMatrix> {
    if layer.0 >= graph.nodes().len() {
        return Err(Error::InvalidConfig(format!("no node {layer}")));
    }
    let mut acts = DMatrix::zeros(graph.width(layer), probes.len());
    for (c, (_, ex)) in probes.iter().enumerate() {
        let h = forward(graph, weights, ex)?;
        acts.set_column(c, &h[&layer]);
    }
    Ok(KernelMatrix {
        entries: acts.transpose() * &acts,
        labels: probes.iter().map(|(l, _)| *l).collect(),
    })
}

/// Descending singular values of every edge.
pub fn edge_singular_values(weights: &WeightState) -> Vec<Vec<f64>> {
    weights.weights.iter().map(singular_values).collect()
}

/// Mean cosine similarity between the representations of the same item on
/// different domains: 1 for fully shared, about 0 for unrelated.
pub fn sharing_index(kernel: &KernelMatrix) -> Result<f64> {
    let mut domains: Vec<usize> = kernel.labels.iter().map(|l| l.0).collect();
    domains.sort_unstable();
    domains.dedup();
    if domains.len() < 2 {
        return Err(Error::InvalidConfig("sharing index needs at least two domains".into()));
    }
    let mut items: Vec<usize> = kernel.labels.iter().map(|l| l.1).collect();
    items.sort_unstable();
    items.dedup();
    let k = &kernel.entries;
    let (mut total, mut count) = (0.0, 0usize);
    for &a in &items {
        for (x, &di) in domains.iter().enumerate() {
            for &dj in &domains[x + 1..] {
                let (Some(p), Some(q)) = (kernel.index((di, a)), kernel.index((dj, a))) else {
                    continue;
                };
                let norm = (k[(p, p)] * k[(q, q)]).sqrt();
                total += if norm > 0.0 { k[(p, q)] / norm } else { 0.0 };
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidConfig("no item appears on two domains".into()));
    }
    Ok(total / count as f64)
}

/// Evaluation examples for every route, trained or not.
pub trait RouteFactory {
    fn domains(&self) -> usize;
    fn route_examples(&self, i: usize, j: usize) -> Vec<GatedExample>;
    fn output_node(&self, j: usize) -> NodeId;
    /// Whether targets are one-hot class labels.
    fn is_classification(&self) -> bool;
}

impl RouteFactory for RoutingTask {
    fn domains(&self) -> usize {
        self.config.m
    }
    fn route_examples(&self, i: usize, j: usize) -> Vec<GatedExample> {
        RoutingTask::route_examples(self, i, j)
    }
    fn output_node(&self, j: usize) -> NodeId {
        self.layout.output_node(j)
    }
    fn is_classification(&self) -> bool {
        false
    }
}

impl RouteFactory for TransformTask {
    fn domains(&self) -> usize {
        self.config.m
    }
    fn route_examples(&self, i: usize, j: usize) -> Vec<GatedExample> {
        self.route_test_examples(i, j)
    }
    fn output_node(&self, j: usize) -> NodeId {
        self.layout.output_node(j)
    }
    fn is_classification(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    pub trained_error: f64,
    /// `None` when every route is trained.
    pub untrained_error: Option<f64>,
    /// Mean loss ½‖y − h‖² over each route's examples.
    pub per_route: DMatrix<f64>,
    pub trained_accuracy: Option<f64>,
    pub untrained_accuracy: Option<f64>,
    pub per_route_accuracy: Option<DMatrix<f64>>,
    pub n_trained: usize,
    pub n_untrained: usize,
}

impl GeneralizationReport {
    pub fn per_route_csv(&self) -> String {
        matrix_csv(&self.per_route, "in", "out")
    }
}

/// Labelled-header CSV of a square route matrix.
pub fn matrix_csv(m: &DMatrix<f64>, row_prefix: &str, col_prefix: &str) -> String {
    let cols: Vec<String> = (0..m.ncols()).map(|j| format!("{col_prefix}{j}")).collect();
    let mut s = format!("route,{}\n", cols.join(","));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        let _ = writeln!(s, "{row_prefix}{i},{}", row.join(","));
    }
    s
}

pub fn route_error_report(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    factory: &dyn RouteFactory,
    mask: &RouteMask,
) -> Result<GeneralizationReport> {
    let m = factory.domains();
    if mask.domains() != m {
        return Err(Error::DimensionMismatch(format!("mask has {} domains, task {m}", mask.domains())));
    }
    let cls = factory.is_classification();
    let mut per_route = DMatrix::zeros(m, m);
    let mut per_acc = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let exs = factory.route_examples(i, j);
            let out = factory.output_node(j);
            let (mut loss, mut correct) = (0.0, 0usize);
            for ex in &exs {
                let h = forward(graph, weights, ex)?;
                for v in graph.output_nodes() {
                    loss += 0.5
                        * match ex.targets.get(&v) {
                            Some(y) => (y - &h[&v]).norm_squared(),
                            None => h[&v].norm_squared(),
                        };
                }
                if cls {
                    if let Some(y) = ex.targets.get(&out) {
                        correct += usize::from(argmax(&h[&out]) == argmax(y));
                    }
                }
            }
            let n = exs.len().max(1) as f64;
            per_route[(i, j)] = loss / n;
            per_acc[(i, j)] = correct as f64 / n;
        }
    }
    let mean_over = |mat: &DMatrix<f64>, trained: bool| {
        let vals: Vec<f64> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| mask.trained(i, j) == trained)
            .map(|(i, j)| mat[(i, j)])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let trained_error = mean_over(&per_route, true)
        .ok_or_else(|| Error::InvalidConfig("route mask has no trained routes".into()))?;
    Ok(GeneralizationReport {
        trained_error,
        untrained_error: mean_over(&per_route, false),
        trained_accuracy: cls.then(|| mean_over(&per_acc, true)).flatten(),
        untrained_accuracy: cls.then(|| mean_over(&per_acc, false)).flatten(),
        per_route_accuracy: cls.then_some(per_acc),
        per_route,
        n_trained: mask.count_trained(),
        n_untrained: mask.count_untrained(),
    })
}

/// First time a series reaches `level` (linear interpolation between
/// records), searching upward if `rising`, downward otherwise.
pub fn crossing_time(times: &[f64], values: &[f64], level: f64, rising: bool) -> Option<f64> {
    let hit = |v: f64| if rising { v >= level } else { v <= level };
    for k in 0..values.len() {
        if hit(values[k]) {
            if k == 0 {
                return Some(times[0]);
            }
            let (v0, v1) = (values[k - 1], values[k]);
            let f = if v1 != v0 { (level - v0) / (v1 - v0) } else { 1.0 };
            return Some(times[k - 1] + f * (times[k] - times[k - 1]));
        }
    }
    None
}
