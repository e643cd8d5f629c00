//! Gated datasets and the pathway correlation statistics that drive learning.
//!
//! Gates are part of the data: every example carries one value per node and
//! one per edge. The gate of a path is the product of its edge gates and the
//! node gates of every node it enters (input nodes are clamped to the data, so
//! their node gate does not enter the forward pass and does not enter `g_p`).

mod io;
mod tasks;

pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use tasks::*;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netgraph::{ArchitectureGraph, EdgeId, NodeId, NodeKind, Path, PathTables};

#[derive(Debug, Clone, PartialEq)]
pub struct GateAssignment {
    pub node_gates: Vec<f64>,
    pub edge_gates: Vec<f64>,
}

impl GateAssignment {
    pub fn all_on(graph: &ArchitectureGraph) -> Self {
        GateAssignment {
            node_gates: vec![1.0; graph.nodes().len()],
            edge_gates: vec![1.0; graph.edges().len()],
        }
    }

    pub fn set_edge(&mut self, e: EdgeId, g: f64) -> &mut Self {
        self.edge_gates[e.0] = g;
        self
    }

    pub fn set_node(&mut self, v: NodeId, g: f64) -> &mut Self {
        self.node_gates[v.0] = g;
        self
    }

    pub fn path_gate(&self, graph: &ArchitectureGraph, path: &Path) -> f64 {
        path.edges.iter().fold(1.0, |acc, &e| {
            acc * self.edge_gates[e.0] * self.node_gates[graph.edge(e).target.0]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedExample {
    /// Values clamped on input nodes. A missing input node reads as zeros.
    pub inputs: BTreeMap<NodeId, DVector<f64>>,
    /// Targets on output nodes. A missing output node has a zero target.
    pub targets: BTreeMap<NodeId, DVector<f64>>,
    pub gates: GateAssignment,
    /// Probability mass of this example within its dataset.
    pub weight: f64,
}

/// Which input/output domain pairs are trained, `mask[i][j]` for input
/// domain `i` and output domain `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteMask(pub Vec<Vec<bool>>);

impl RouteMask {
    pub fn domains(&self) -> usize {
        self.0.len()
    }

    pub fn trained(&self, i: usize, j: usize) -> bool {
        self.0[i][j]
    }

    pub fn count_trained(&self) -> usize {
        self.0.iter().flatten().filter(|&&b| b).count()
    }

    pub fn count_untrained(&self) -> usize {
        self.0.iter().flatten().filter(|&&b| !b).count()
    }

    pub fn trained_routes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(j, _)| (i, j))
        })
    }
}

#[derive(Debug, Clone)]
pub struct GatedDataset {
    pub graph: Arc<ArchitectureGraph>,
    pub examples: Vec<GatedExample>,
    pub route_mask: Option<RouteMask>,
}

impl GatedDataset {
    /// Check widths, weights and that the weights form a distribution.
    pub fn validate(&self) -> Result<()> {
        let g = &self.graph;
        let mut total = 0.0;
        for (k, ex) in self.examples.iter().enumerate() {
            if !(ex.weight > 0.0) {
                return Err(Error::InvalidDataset(format!("example {k} has weight {}", ex.weight)));
            }
            total += ex.weight;
            if ex.gates.node_gates.len() != g.nodes().len()
                || ex.gates.edge_gates.len() != g.edges().len()
            {
                return Err(Error::InvalidDataset(format!("example {k}: gate vector sizes")));
            }
            if ex
                .gates
                .node_gates
                .iter()
                .chain(&ex.gates.edge_gates)
                .any(|x| !(0.0..=1.0).contains(x))
            {
                return Err(Error::InvalidDataset(format!("example {k}: gate outside [0,1]")));
            }
            for (v, x) in &ex.inputs {
                if v.0 >= g.nodes().len() || g.node(*v).kind != NodeKind::Input {
                    return Err(Error::InvalidDataset(format!("example {k}: {v} is not an input node")));
                }
                if x.len() != g.width(*v) {
                    return Err(Error::DimensionMismatch(format!(
                        "example {k}: input on {v} has length {}, node width {}",
                        x.len(),
                        g.width(*v)
                    )));
                }
            }
            for (v, y) in &ex.targets {
                if v.0 >= g.nodes().len() || g.node(*v).kind != NodeKind::Output {
                    return Err(Error::InvalidDataset(format!("example {k}: {v} is not an output node")));
                }
                if y.len() != g.width(*v) {
                    return Err(Error::DimensionMismatch(format!(
                        "example {k}: target on {v} has length {}, node width {}",
                        y.len(),
                        g.width(*v)
                    )));
                }
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDataset(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Σ^{yx}(p) per path and Σ^x(j,p) per co-terminating path pair, plus
/// ⟨Σ_v ‖y_v‖²⟩ so the loss can be evaluated from statistics alone.
///
/// Only pairs with `t(j) = t(p)` are stored: pairs ending at different output
/// nodes never enter the loss or its gradient. Entries that are exactly zero
/// are omitted.
#[derive(Debug, Clone)]
pub struct PathwayCorrelations {
    pub sigma_yx: Vec<Option<DMatrix<f64>>>,
    pub sigma_x: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub target_energy: f64,
    partners: Vec<Vec<usize>>,
}

impl PathwayCorrelations {
    pub fn new(
        tables: &PathTables,
        sigma_yx: Vec<Option<DMatrix<f64>>>,
        sigma_x: BTreeMap<(usize, usize), DMatrix<f64>>,
        target_energy: f64,
    ) -> Result<Self> {
        if sigma_yx.len() != tables.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} Σyx entries for {} paths",
                sigma_yx.len(),
                tables.len()
            )));
        }
        let mut partners = vec![Vec::new(); tables.len()];
        for &(j, p) in sigma_x.keys() {
            if tables.path(j).target_node != tables.path(p).target_node {
                return Err(Error::InvalidDataset(format!(
                    "Σx({j},{p}) pairs paths ending at different nodes"
                )));
            }
            partners[p].push(j);
        }
        Ok(PathwayCorrelations {
            sigma_yx,
            sigma_x,
            target_energy,
            partners,
        })
    }

    /// Paths `j` with a stored Σ^x(j,p), ascending.
    pub fn partners(&self, p: usize) -> &[usize] {
        &self.partners[p]
    }

    pub fn sigma_x(&self, j: usize, p: usize) -> Option<&DMatrix<f64>> {
        self.sigma_x.get(&(j, p))
    }

    /// A path contributes to learning iff it has any nonzero statistic.
    pub fn is_active(&self, p: usize) -> bool {
        self.sigma_yx[p].is_some() || !self.partners[p].is_empty()
    }

    pub fn num_paths(&self) -> usize {
        self.sigma_yx.len()
    }
}

pub fn compute_pathway_correlations(
    dataset: &GatedDataset,
    tables: &PathTables,
) -> Result<PathwayCorrelations> {
    let g = &*dataset.graph;
    let n = tables.len();
    let mut yx: Vec<Option<DMatrix<f64>>> = vec![None; n];
    let mut xx: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    let mut energy = 0.0;
    let mut active: Vec<(usize, f64)> = Vec::new();

    for ex in &dataset.examples {
        energy += ex.weight * ex.targets.values().map(|y| y.norm_squared()).sum::<f64>();
        active.clear();
        for (i, p) in tables.all_paths.iter().enumerate() {
            let gp = ex.gates.path_gate(g, p);
            if gp != 0.0 && ex.inputs.contains_key(&p.source_node) {
                active.push((i, gp));
            }
        }
        for &(p, gp) in &active {
            let path = tables.path(p);
            let x = &ex.inputs[&path.source_node];
            if x.len() != g.width(path.source_node) {
                return Err(Error::DimensionMismatch(format!(
                    "input on {} has length {}",
                    path.source_node,
                    x.len()
                )));
            }
            if let Some(y) = ex.targets.get(&path.target_node) {
                if y.len() != g.width(path.target_node) {
                    return Err(Error::DimensionMismatch(format!(
                        "target on {} has length {}",
                        path.target_node,
                        y.len()
                    )));
                }
                let entry = yx[p].get_or_insert_with(|| DMatrix::zeros(y.len(), x.len()));
                entry.ger(ex.weight * gp, y, x, 1.0);
            }
            for &(j, gj) in &active {
                let pj = tables.path(j);
                if pj.target_node != path.target_node {
                    continue;
                }
                let xj = &ex.inputs[&pj.source_node];
                let entry = xx
                    .entry((j, p))
                    .or_insert_with(|| DMatrix::zeros(xj.len(), x.len()));
                entry.ger(ex.weight * gj * gp, xj, x, 1.0);
            }
        }
    }
    for m in yx.iter_mut() {
        if m.as_ref().is_some_and(|m| m.iter().all(|&v| v == 0.0)) {
            *m = None;
        }
    }
    xx.retain(|_, m| m.iter().any(|&v| v != 0.0));
    PathwayCorrelations::new(tables, yx, xx, energy)
}
