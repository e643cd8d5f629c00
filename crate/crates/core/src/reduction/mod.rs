//! Singular-value reduction of the gradient flow.
//!
//! When every Σ^{yx}(p) and Σ^x(j,p) is diagonal in shared node bases
//! (U at output nodes, V at input nodes), weights of the form
//! `W_e = R_{t(e)} diag(B_e) R_{s(e)}ᵀ` stay of that form, and the flow
//! reduces to one scalar equation per mode and edge:
//! `τ dB_e/dt = Σ_{p∋e} B_{p∖e} ⊙ [S(p) − Σ_j B_j ⊙ D(j,p)]`.

mod routing;
mod xor;

pub use routing::{
    conserved_quantity, race_reduced_train, routing_reduced_train, routing_spectrum, scalar_routing_ode,
    steady_state_ratio, ConservedReport, RoutingSpectrum,
};
pub use xor::{xor_analytic, xor_analytic_loss, xor_effective_a0, XOR_D, XOR_S};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::PathwayCorrelations;
use crate::dynamics::{integrate_step, FlowState, SimConfig, Trajectory, WeightState};
use crate::error::{Error, Result};
use crate::linalg::{diag_matrix, max_abs, random_orthonormal, svd};
use crate::netgraph::{ArchitectureGraph, NodeId, NodeKind, PathTables};

/// Default residual tolerance for exact diagonalization.
pub const EXACT_TOLERANCE: f64 = 1e-8;

/// Per-node `n_v × r` matrices with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBases {
    bases: Vec<DMatrix<f64>>,
    modes: usize,
}

impl NodeBases {
    pub fn new(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        let modes = bases.first().map_or(0, |b| b.ncols());
        for b in &bases {
            if b.ncols() != modes {
                return Err(Error::DimensionMismatch("bases carry different mode counts".into()));
            }
            if crate::linalg::orthonormality_error(b) > 1e-10 {
                return Err(Error::InvalidConfig("basis columns are not orthonormal".into()));
            }
        }
        Ok(NodeBases { bases, modes })
    }

    /// Haar-random bases on every node.
    pub fn random(graph: &ArchitectureGraph, modes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NodeBases {
            bases: graph
                .nodes()
                .iter()
                .map(|n| random_orthonormal(&mut rng, n.width, modes))
                .collect(),
            modes,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn get(&self, v: NodeId) -> &DMatrix<f64> {
        &self.bases[v.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiagMode {
    /// Fail with `NotDiagonalizable` above the tolerance.
    Exact { tolerance: f64 },
    /// Always succeed; the residual is reported.
    Approximate,
}

impl Default for DiagMode {
    fn default() -> Self {
        DiagMode::Exact { tolerance: EXACT_TOLERANCE }
    }
}

#[derive(Debug, Clone)]
pub struct DiagOptions {
    pub mode: DiagMode,
    /// Number of modes r; defaults to the smallest node width.
    pub modes: Option<usize>,
    /// Seed of the random hidden-node bases.
    pub seed: u64,
}

impl Default for DiagOptions {
    fn default() -> Self {
        DiagOptions {
            mode: DiagMode::default(),
            modes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalizedStats {
    /// Bases of every node: U at outputs, V at inputs, random at hidden nodes.
    pub bases: NodeBases,
    pub s: Vec<Option<Vec<f64>>>,
    pub d: BTreeMap<(usize, usize), Vec<f64>>,
    pub target_energy: f64,
    /// Largest violation of the diagonal form over all statistics.
    pub residual: f64,
    partners: Vec<Vec<usize>>,
}

impl DiagonalizedStats {
    pub fn modes(&self) -> usize {
        self.bases.modes()
    }

    pub fn u(&self, v: NodeId) -> &DMatrix<f64> {
        self.bases.get(v)
    }

    pub fn v(&self, v: NodeId) -> &DMatrix<f64> {
        self.bases.get(v)
    }

    pub fn partners(&self, p: usize) -> &[usize] {
        &self.partners[p]
    }

    pub fn is_active(&self, p: usize) -> bool {
        self.s[p].is_some() || !self.partners[p].is_empty()
    }
}

fn diag_of(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    (0..r).map(|i| m[(i, i)]).collect()
}

/// Fix node bases from the SVDs of the Σ^{yx}(p) (in path order) and read
/// off the mode strengths S(p) and D(j,p). The residual measures how far
/// each statistic is from acting diagonally between the chosen subspaces:
/// `max(|U_rᵀΣ − S V_rᵀ|, |Σ V_r − U_r S|)` and likewise for Σ^x.
pub fn diagonalize_stats(
    corr: &PathwayCorrelations,
    graph: &ArchitectureGraph,
    tables: &PathTables,
    options: &DiagOptions,
) -> Result<DiagonalizedStats> {
    let r = options.modes.unwrap_or_else(|| graph.min_width());
    if r == 0 || r > graph.min_width() {
        return Err(Error::InvalidConfig(format!(
            "mode count {r} must be between 1 and the smallest width {}",
            graph.min_width()
        )));
    }
    let n = graph.nodes().len();
    let mut chosen: Vec<Option<DMatrix<f64>>> = vec![None; n];

    for (pi, path) in tables.all_paths.iter().enumerate() {
        let Some(m) = &corr.sigma_yx[pi] else { continue };
        let (tv, sv) = (path.target_node, path.source_node);
        if chosen[tv.0].is_some() && chosen[sv.0].is_some() {
            continue;
        }
        let d = svd(m);
        let mut u = d.u.columns(0, r).into_owned();
        let mut v = d.v.columns(0, r).into_owned();
        let flips: Vec<bool> = if let Some(set) = &chosen[sv.0] {
            (0..r).map(|k| set.column(k).dot(&v.column(k)) < 0.0).collect()
        } else if let Some(set) = &chosen[tv.0] {
            (0..r).map(|k| set.column(k).dot(&u.column(k)) < 0.0).collect()
        } else {
            vec![false; r]
        };
        for (k, flip) in flips.into_iter().enumerate() {
            if flip {
                u.column_mut(k).neg_mut();
                v.column_mut(k).neg_mut();
            }
        }
        chosen[tv.0].get_or_insert(u);
        chosen[sv.0].get_or_insert(v);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let bases: Vec<DMatrix<f64>> = graph
        .nodes()
        .iter()
        .map(|node| match (node.kind, chosen[node.id.0].take()) {
            (NodeKind::Hidden, _) => random_orthonormal(&mut rng, node.width, r),
            (_, Some(b)) => b,
            (_, None) => DMatrix::identity(node.width, r),
        })
        .collect();
    let bases = NodeBases { bases, modes: r };

    let mut residual: f64 = 0.0;
    let mut s = vec![None; tables.len()];
    for (pi, path) in tables.all_paths.iter().enumerate() {
        let Some(m) = &corr.sigma_yx[pi] else { continue };
        let u = bases.get(path.target_node);
        let v = bases.get(path.source_node);
        let sv = diag_of(&(u.transpose() * m * v), r);
        let sd = diag_matrix(r, r, &sv);
        residual = residual
            .max(max_abs(&(u.transpose() * m - &sd * v.transpose())))
            .max(max_abs(&(m * v - u * &sd)));
        s[pi] = Some(sv);
    }
    let mut d = BTreeMap::new();
    let mut partners = vec![Vec::new(); tables.len()];
    for (&(j, p), m) in &corr.sigma_x {
        let vj = bases.get(tables.path(j).source_node);
        let vp = bases.get(tables.path(p).source_node);
        let dv = diag_of(&(vj.transpose() * m * vp), r);
        let dd = diag_matrix(r, r, &dv);
        residual = residual
            .max(max_abs(&(vj.transpose() * m - &dd * vp.transpose())))
            .max(max_abs(&(m * vp - vj * &dd)));
        d.insert((j, p), dv);
        partners[p].push(j);
    }
    if let DiagMode::Exact { tolerance } = options.mode {
        if !(residual <= tolerance) {
            return Err(Error::NotDiagonalizable { residual, tolerance });
        }
    }
    Ok(DiagonalizedStats {
        bases,
        s,
        d,
        target_energy: corr.target_energy,
        residual,
        partners,
    })
}

/// Mode strengths `B_e` per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub b: Vec<Vec<f64>>,
    pub time: f64,
}

impl FlowState for ReducedState {
    fn axpy(&mut self, a: f64, other: &Self) {
        self.b.axpy(a, &other.b);
    }
}

/// Project weights onto the decoupled manifold. Returns the state and the
/// leakage `max |W_e − R_t diag(B_e) R_sᵀ|`.
pub fn restrict(
    graph: &ArchitectureGraph,
    weights: &WeightState,
    bases: &NodeBases,
    tolerance: f64,
) -> Result<(ReducedState, f64)> {
    weights.check_shapes(graph)?;
    let r = bases.modes();
    let mut leakage: f64 = 0.0;
    let b = graph
        .edges()
        .iter()
        .map(|e| {
            let rt = bases.get(e.target);
            let rs = bases.get(e.source);
            let w = weights.get(e.id);
            let bv = diag_of(&(rt.transpose() * w * rs), r);
            let back = rt * diag_matrix(r, r, &bv) * rs.transpose();
            leakage = leakage.max(max_abs(&(w - back)));
            bv
        })
        .collect();
    if !(leakage <= tolerance) {
        return Err(Error::OffManifold { leakage, tolerance });
    }
    Ok((ReducedState { b, time: weights.time }, leakage))
}

pub fn lift(graph: &ArchitectureGraph, reduced: &ReducedState, bases: &NodeBases) -> WeightState {
    let r = bases.modes();
    WeightState {
        weights: graph
            .edges()
            .iter()
            .map(|e| bases.get(e.target) * diag_matrix(r, r, &reduced.b[e.id.0]) * bases.get(e.source).transpose())
            .collect(),
        time: reduced.time,
    }
}

/// Precomputed structure of the reduced flow.
struct ReducedPlan {
    /// (path index, edges) of active paths
    paths: Vec<(usize, Vec<usize>)>,
    slot_of: Vec<usize>,
}

impl ReducedPlan {
    fn new(stats: &DiagonalizedStats, tables: &PathTables) -> Self {
        let mut slot_of = vec![usize::MAX; tables.len()];
        let mut paths = Vec::new();
        for (pi, p) in tables.all_paths.iter().enumerate() {
            if stats.is_active(pi) {
                slot_of[pi] = paths.len();
                paths.push((pi, p.edges.iter().map(|e| e.0).collect()));
            }
        }
        ReducedPlan { paths, slot_of }
    }

    fn path_products(&self, b: &[Vec<f64>], r: usize) -> Vec<Vec<f64>> {
        self.paths
            .iter()
            .map(|(_, edges)| {
                (0..r).map(|i| edges.iter().map(|&e| b[e][i]).product()).collect()
            })
            .collect()
    }

    /// Loss and velocity.
    fn evaluate(&self, stats: &DiagonalizedStats, state: &ReducedState) -> (f64, ReducedState) {
        let r = stats.modes();
        let bp = self.path_products(&state.b, r);
        let mut loss = 0.5 * stats.target_energy;
        let mut vel = vec![vec![0.0; r]; state.b.len()];
        for (slot, (pi, edges)) in self.paths.iter().enumerate() {
            let mut err = match &stats.s[*pi] {
                Some(s) => s.clone(),
                None => vec![0.0; r],
            };
            for i in 0..r {
                loss -= err[i] * bp[slot][i];
            }
            for &j in stats.partners(*pi) {
                let dj = &stats.d[&(j, *pi)];
                let bj = &bp[self.slot_of[j]];
                for i in 0..r {
                    let q = bj[i] * dj[i];
                    loss += 0.5 * q * bp[slot][i];
                    err[i] -= q;
                }
            }
            for (k, &e) in edges.iter().enumerate() {
                for i in 0..r {
                    let others: f64 = edges
                        .iter()
                        .enumerate()
                        .filter(|&(kk, _)| kk != k)
                        .map(|(_, &f)| state.b[f][i])
                        .product();
                    vel[e][i] += others * err[i];
                }
            }
        }
        (loss, ReducedState { b: vel, time: state.time })
    }
}

/// Loss of a reduced state, from the mode strengths alone.
pub fn reduced_loss(stats: &DiagonalizedStats, tables: &PathTables, state: &ReducedState) -> f64 {
    ReducedPlan::new(stats, tables).evaluate(stats, state).0
}

/// Node-balance values `Σ_in ‖B‖² − Σ_out ‖B‖²` per hidden node; equal to
/// the full-network node balance of the lifted weights.
fn reduced_balance(graph: &ArchitectureGraph, b: &[Vec<f64>]) -> Vec<f64> {
    let sq = |e: &crate::netgraph::EdgeId| b[e.0].iter().map(|x| x * x).sum::<f64>();
    graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Hidden)
        .map(|n| graph.incoming(n.id).iter().map(sq).sum::<f64>() - graph.outgoing(n.id).iter().map(sq).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReducedOutcome {
    pub trajectory: Trajectory,
    pub state: ReducedState,
}

/// Integrate the decoupled mode dynamics. Records loss, the mode values of
/// every edge (in the singular-value columns) and the node balances.
pub fn reduced_train(
    graph: &ArchitectureGraph,
    stats: &DiagonalizedStats,
    tables: &PathTables,
    b_init: ReducedState,
    config: &SimConfig,
) -> Result<ReducedOutcome> {
    config.validate()?;
    let r = stats.modes();
    if b_init.b.len() != graph.edges().len() || b_init.b.iter().any(|b| b.len() != r) {
        return Err(Error::DimensionMismatch(format!("initial modes must be {} edges × {r}", graph.edges().len())));
    }
    let plan = ReducedPlan::new(stats, tables);
    let h = config.step_ratio();
    let mut traj = Trajectory {
        edge_labels: graph.edges().iter().map(|e| graph.edge_label(e.id)).collect(),
        conserved_labels: graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Hidden)
            .map(|n| format!("balance:{}", n.name))
            .collect(),
        ..Trajectory::default()
    };
    let mut state = b_init;
    let mut initial = f64::NAN;
    for step in 0..=config.steps {
        let (loss, vel) = plan.evaluate(stats, &state);
        if step == 0 {
            initial = loss;
        }
        if !loss.is_finite() || loss > config.divergence_factor * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss, initial });
        }
        if step % config.record_every == 0 || step == config.steps {
            traj.times.push(state.time);
            traj.losses.push(loss);
            traj.singular_values.push(state.b.clone());
            traj.conserved.push(reduced_balance(graph, &state.b));
        }
        if step == config.steps {
            break;
        }
        let t = state.time;
        let mut first = Some(vel);
        state = integrate_step(config.integrator, &state, h, |s| match first.take() {
            Some(v) => v,
            None => plan.evaluate(stats, s).1,
        });
        state.time = t + config.step;
    }
    Ok(ReducedOutcome { trajectory: traj, state })
}
