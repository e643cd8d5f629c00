//! Pathway gradients.
//!
//! `τ dW_e/dt = Σ_{p∋e} W_{t̄(p,e)}ᵀ E_p W_{s̄(p,e)}ᵀ` with the path error
//! `E_p = Σ^{yx}(p) − Σ_{j} W_j Σ^x(j,p)`. Sub-path products are shared
//! between paths: every distinct prefix and suffix is multiplied out once per
//! evaluation, and terms of an edge with a common prefix are summed before
//! the prefix is applied.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{dataset_loss, WeightState};
use crate::datasets::{GatedDataset, PathwayCorrelations};
use crate::error::{Error, Result};
use crate::netgraph::{ArchitectureGraph, EdgeId, PathTables};

/// Product `W_edge · W_parent` (prefixes) or `W_parent · W_edge` (suffixes).
#[derive(Debug, Clone)]
struct Chain {
    edge: EdgeId,
    parent: Option<usize>,
}

#[derive(Debug, Clone)]
struct Group {
    prefix: Option<usize>,
    /// (active path slot, suffix id)
    members: Vec<(usize, Option<usize>)>,
}

/// Gradient and loss evaluator for a fixed graph and fixed statistics.
#[derive(Debug, Clone)]
pub struct GradientEngine {
    shapes: Vec<(usize, usize)>,
    prefixes: Vec<Chain>,
    suffixes: Vec<Chain>,
    /// Global path index and full-path prefix id per active path slot.
    active: Vec<(usize, usize)>,
    yx: Vec<Option<DMatrix<f64>>>,
    /// Per slot p: (slot j, Σ^x(j,p)).
    xx: Vec<Vec<(usize, DMatrix<f64>)>>,
    groups: Vec<Vec<Group>>,
    target_energy: f64,
}

fn intern(map: &mut HashMap<Vec<EdgeId>, usize>, chains: &mut Vec<Chain>, key: &[EdgeId], edge: EdgeId, parent: Option<usize>) -> usize {
    if let Some(&id) = map.get(key) {
        return id;
    }
    chains.push(Chain { edge, parent });
    map.insert(key.to_vec(), chains.len() - 1);
    chains.len() - 1
}

impl GradientEngine {
    pub fn new(graph: &ArchitectureGraph, tables: &PathTables, corr: &PathwayCorrelations) -> Result<Self> {
        if corr.num_paths() != tables.len() {
            return Err(Error::DimensionMismatch(format!(
                "statistics for {} paths, graph has {}",
                corr.num_paths(),
                tables.len()
            )));
        }
        let mut prefix_ids = HashMap::new();
        let mut suffix_ids = HashMap::new();
        let mut prefixes = Vec::new();
        let mut suffixes = Vec::new();
        let mut slot_of = vec![usize::MAX; tables.len()];
        let mut active = Vec::new();
        // (edge, prefix) -> group index
        let mut group_index: HashMap<(usize, Option<usize>), usize> = HashMap::new();
        let mut groups: Vec<Vec<Group>> = vec![Vec::new(); graph.edges().len()];

        for (pi, path) in tables.all_paths.iter().enumerate() {
            if !corr.is_active(pi) {
                continue;
            }
            let edges = &path.edges;
            let n = edges.len();
            // pre[k] = id of prefix edges[..k], None for k = 0
            let mut pre: Vec<Option<usize>> = vec![None; n + 1];
            for k in 1..=n {
                pre[k] = Some(intern(&mut prefix_ids, &mut prefixes, &edges[..k], edges[k - 1], pre[k - 1]));
            }
            // suf[k] = id of suffix edges[k..], None for k = n
            let mut suf: Vec<Option<usize>> = vec![None; n + 1];
            for k in (0..n).rev() {
                suf[k] = Some(intern(&mut suffix_ids, &mut suffixes, &edges[k..], edges[k], suf[k + 1]));
            }
            let slot = active.len();
            slot_of[pi] = slot;
            active.push((pi, pre[n].unwrap()));
            for (k, &e) in edges.iter().enumerate() {
                let key = (e.0, pre[k]);
                let gi = *group_index.entry(key).or_insert_with(|| {
                    groups[e.0].push(Group { prefix: pre[k], members: Vec::new() });
                    groups[e.0].len() - 1
                });
                groups[e.0][gi].members.push((slot, suf[k + 1]));
            }
        }

        let mut yx = Vec::with_capacity(active.len());
        let mut xx = vec![Vec::new(); active.len()];
        for (slot, &(pi, _)) in active.iter().enumerate() {
            let path = tables.path(pi);
            let (rows, cols) = (graph.width(path.target_node), graph.width(path.source_node));
            if let Some(m) = &corr.sigma_yx[pi] {
                if m.shape() != (rows, cols) {
                    return Err(Error::DimensionMismatch(format!("Σyx({pi}) is {:?}, expected {:?}", m.shape(), (rows, cols))));
                }
            }
            yx.push(corr.sigma_yx[pi].clone());
            for &j in corr.partners(pi) {
                let m = corr.sigma_x(j, pi).unwrap();
                let want = (graph.width(tables.path(j).source_node), cols);
                if m.shape() != want {
                    return Err(Error::DimensionMismatch(format!("Σx({j},{pi}) is {:?}, expected {want:?}", m.shape())));
                }
                if slot_of[j] == usize::MAX {
                    return Err(Error::InvalidDataset(format!("Σx({j},{pi}) stored but path {j} is inactive")));
                }
                xx[slot].push((slot_of[j], m.clone()));
            }
        }

        Ok(GradientEngine {
            shapes: graph.edges().iter().map(|e| graph.edge_shape(e.id)).collect(),
            prefixes,
            suffixes,
            active,
            yx,
            xx,
            groups,
            target_energy: corr.target_energy,
        })
    }

    pub fn target_energy(&self) -> f64 {
        self.target_energy
    }

    fn prefix_products(&self, w: &WeightState) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.prefixes.len());
        for c in &self.prefixes {
            let m = match c.parent {
                Some(p) => w.get(c.edge) * &out[p],
                None => w.get(c.edge).clone(),
            };
            out.push(m);
        }
        out
    }

    fn suffix_products(&self, w: &WeightState) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.suffixes.len());
        for c in &self.suffixes {
            let m = match c.parent {
                Some(p) => &out[p] * w.get(c.edge),
                None => w.get(c.edge).clone(),
            };
            out.push(m);
        }
        out
    }

    /// Path errors E_p per active slot, plus the loss.
    fn errors(&self, pre: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, f64) {
        let mut loss = 0.5 * self.target_energy;
        let errs = self
            .active
            .iter()
            .enumerate()
            .map(|(slot, &(_, full))| {
                let wp = &pre[full];
                let mut q = DMatrix::zeros(wp.nrows(), wp.ncols());
                for (j, sx) in &self.xx[slot] {
                    q.gemm(1.0, &pre[self.active[*j].1], sx, 1.0);
                }
                loss += 0.5 * wp.dot(&q);
                let mut e = -q;
                if let Some(yx) = &self.yx[slot] {
                    loss -= wp.dot(yx);
                    e += yx;
                }
                e
            })
            .collect();
        (errs, loss)
    }

    /// Loss evaluated from the statistics.
    pub fn loss(&self, w: &WeightState) -> f64 {
        self.errors(&self.prefix_products(w)).1
    }

    /// Loss and `τ dW/dt = −∂L/∂W` per edge.
    pub fn evaluate(&self, w: &WeightState) -> (f64, Vec<DMatrix<f64>>) {
        let pre = self.prefix_products(w);
        let suf = self.suffix_products(w);
        let (errs, loss) = self.errors(&pre);
        let grads = self
            .groups
            .iter()
            .enumerate()
            .map(|(e, groups)| {
                let (rows, cols) = self.shapes[e];
                let mut g = DMatrix::zeros(rows, cols);
                for grp in groups {
                    let first = &errs[grp.members[0].0];
                    let mut a = DMatrix::zeros(rows, first.ncols());
                    for &(slot, s) in &grp.members {
                        match s {
                            Some(s) => a.gemm_tr(1.0, &suf[s], &errs[slot], 1.0),
                            None => a += &errs[slot],
                        }
                    }
                    match grp.prefix {
                        Some(p) => g.gemm(1.0, &a, &pre[p].transpose(), 1.0),
                        None => g += a,
                    }
                }
                g
            })
            .collect();
        (loss, grads)
    }

    /// Velocity in the same layout as the weights.
    pub fn velocity(&self, w: &WeightState) -> WeightState {
        WeightState {
            weights: self.evaluate(w).1,
            time: w.time,
        }
    }
}

/// `τ dW_e/dt` for every edge, i.e. the negative loss gradient.
pub fn analytic_gradient(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    correlations: &PathwayCorrelations,
    tables: &PathTables,
) -> Result<Vec<DMatrix<f64>>> {
    weights.check_shapes(graph)?;
    Ok(GradientEngine::new(graph, tables, correlations)?.evaluate(weights).1)
}

/// Central differences of [`dataset_loss`], negated to match
/// [`analytic_gradient`].
pub fn finite_difference_gradient(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    dataset: &GatedDataset,
    epsilon: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    weights.check_shapes(graph)?;
    let mut w = weights.clone();
    let mut out = Vec::with_capacity(w.weights.len());
    for e in 0..w.weights.len() {
        let (rows, cols) = w.weights[e].shape();
        let mut g = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                let orig = w.weights[e][(r, c)];
                w.weights[e][(r, c)] = orig + epsilon;
                let lp = dataset_loss(graph, &w, dataset)?;
                w.weights[e][(r, c)] = orig - epsilon;
                let lm = dataset_loss(graph, &w, dataset)?;
                w.weights[e][(r, c)] = orig;
                g[(r, c)] = -(lp - lm) / (2.0 * epsilon);
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest elementwise `|a−b| / max(|a|,|b|,floor)` over all edges.
pub fn max_relative_error(a: &[DMatrix<f64>], b: &[DMatrix<f64>], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{
        compute_pathway_correlations, make_contextual_dataset, make_routing_dataset, make_xor_dataset,
        ContextScheme, GateAssignment, GatedExample, RoutingConfig, XorScheme, XorSign,
    };
    use crate::dynamics::{init_weights, InitScheme};
    use crate::netgraph::{enumerate_paths, validate_graph, GraphSpec, NodeId};
    use nalgebra::DVector;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn check(dataset: &GatedDataset, seeds: std::ops::Range<u64>) {
        let g = &dataset.graph;
        let t = enumerate_paths(g).unwrap();
        let c = compute_pathway_correlations(dataset, &t).unwrap();
        for seed in seeds {
            let w = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, seed).unwrap();
            let a = analytic_gradient(g, &w, &c, &t).unwrap();
            let f = finite_difference_gradient(g, &w, dataset, 1e-5).unwrap();
            let err = max_relative_error(&a, &f, 1e-4);
            assert!(err <= 1e-6, "seed {seed}: relative error {err:e}");
            let engine = GradientEngine::new(g, &t, &c).unwrap();
            let l = dataset_loss(g, &w, dataset).unwrap();
            assert!((engine.loss(&w) - l).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_finite_differences_on_builtin_tasks() {
        check(&make_xor_dataset(XorScheme::FourPathway, XorSign::NegativeOnAgreement).dataset, 0..3);
        check(&make_xor_dataset(XorScheme::SinglePathway, XorSign::NegativeOnAgreement).dataset, 0..3);
        check(&make_contextual_dataset(40, 1, ContextScheme::PerContext).unwrap().dataset, 0..3);
        let r = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 3, ..RoutingConfig::default() }).unwrap();
        check(&r.dataset, 0..2);
    }

    #[test]
    fn matches_finite_differences_with_shared_output_and_real_gates() {
        // two input nodes merging into one hidden node, skip edge to output,
        // fractional gates
        let mut s = GraphSpec::default();
        s.node("a", 2).node("b", 3).node("h", 2).node("o", 2);
        s.edge("a", "h").edge("b", "h").edge("h", "o").edge("a", "o");
        let g = Arc::new(validate_graph(&s).unwrap());
        let mut examples = Vec::new();
        for k in 0..5 {
            let f = k as f64;
            let mut gates = GateAssignment::all_on(&g);
            gates.set_edge(EdgeId(k % 4), 0.3 + 0.1 * f);
            gates.set_node(NodeId(2), 0.5 + 0.1 * f);
            examples.push(GatedExample {
                inputs: BTreeMap::from([
                    (NodeId(0), DVector::from_vec(vec![f.sin(), f.cos()])),
                    (NodeId(1), DVector::from_vec(vec![1.0, -f, 0.5])),
                ]),
                targets: BTreeMap::from([(NodeId(3), DVector::from_vec(vec![0.2 * f, -1.0]))]),
                gates,
                weight: 0.2,
            });
        }
        check(&GatedDataset { graph: g, examples, route_mask: None }, 0..3);
    }

    #[test]
    fn zero_weights_deep_graph_have_zero_gradient() {
        let t = make_xor_dataset(XorScheme::FourPathway, XorSign::NegativeOnAgreement);
        let g = &t.dataset.graph;
        let tables = enumerate_paths(g).unwrap();
        let c = compute_pathway_correlations(&t.dataset, &tables).unwrap();
        let grads = analytic_gradient(g, &WeightState::zeros(g), &c, &tables).unwrap();
        assert!(grads.iter().all(|m| m.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_edge_is_linear_regression_flow() {
        let mut s = GraphSpec::default();
        s.node("x", 2).node("y", 1).edge("x", "y");
        let g = Arc::new(validate_graph(&s).unwrap());
        let ex = |x: [f64; 2], y: f64| GatedExample {
            inputs: BTreeMap::from([(NodeId(0), DVector::from_vec(x.to_vec()))]),
            targets: BTreeMap::from([(NodeId(1), DVector::from_vec(vec![y]))]),
            gates: GateAssignment::all_on(&g),
            weight: 0.5,
        };
        let d = GatedDataset { graph: g.clone(), examples: vec![ex([1.0, 0.0], 2.0), ex([1.0, 1.0], -1.0)], route_mask: None };
        let t = enumerate_paths(&g).unwrap();
        let c = compute_pathway_correlations(&d, &t).unwrap();
        let w = WeightState { weights: vec![DMatrix::from_row_slice(1, 2, &[0.3, -0.7])], time: 0.0 };
        let grad = analytic_gradient(&g, &w, &c, &t).unwrap();
        let syx = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        let sx = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]);
        let expect = syx - &w.weights[0] * sx;
        assert!((&grad[0] - expect).amax() < 1e-15);
        // at the least-squares solution both gradients vanish
        let opt = WeightState { weights: vec![DMatrix::from_row_slice(1, 2, &[2.0, -3.0])], time: 0.0 };
        let a = analytic_gradient(&g, &opt, &c, &t).unwrap();
        let f = finite_difference_gradient(&g, &opt, &d, 1e-5).unwrap();
        assert!(a[0].amax() < 1e-14 && f[0].amax() < 1e-9);
    }
}
