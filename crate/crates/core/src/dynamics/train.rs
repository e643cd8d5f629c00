use std::fmt::Write as _;

use super::{init_weights, integrate_step, GradientEngine, InitScheme, SimConfig, WeightState};
use crate::datasets::{compute_pathway_correlations, GatedDataset, PathwayCorrelations};
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::netgraph::{enumerate_paths, ArchitectureGraph, NodeKind, PathTables};

/// Recorded series of a run. `singular_values[r][e]` holds the leading
/// singular values of edge `e` at record `r` (for reduced runs: the mode
/// values `B_e`). `conserved[r][q]` holds quantity `q`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub edge_labels: Vec<String>,
    pub singular_values: Vec<Vec<Vec<f64>>>,
    pub conserved_labels: Vec<String>,
    pub conserved: Vec<Vec<f64>>,
    pub snapshots: Vec<WeightState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap_or(&f64::NAN)
    }

    /// Values of edge `e`, mode `k` over time.
    pub fn series(&self, e: usize, k: usize) -> Vec<f64> {
        self.singular_values.iter().map(|r| r[e].get(k).copied().unwrap_or(0.0)).collect()
    }

    pub fn max_loss_gap(&self, other: &Trajectory) -> f64 {
        self.losses
            .iter()
            .zip(&other.losses)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `time,loss,sv:<edge>:<k>…,cq:<name>…`
    pub fn to_csv(&self) -> String {
        let mut cols = vec!["time".to_string(), "loss".to_string()];
        let widths: Vec<usize> = self
            .singular_values
            .first()
            .map(|r| r.iter().map(Vec::len).collect())
            .unwrap_or_default();
        for (label, &w) in self.edge_labels.iter().zip(&widths) {
            cols.extend((0..w).map(|k| format!("sv:{label}:{k}")));
        }
        cols.extend(self.conserved_labels.iter().map(|l| format!("cq:{l}")));
        let mut s = cols.join(",");
        s.push('\n');
        for r in 0..self.len() {
            let _ = write!(s, "{},{}", self.times[r], self.losses[r]);
            if let Some(svs) = self.singular_values.get(r) {
                for v in svs.iter().flatten() {
                    let _ = write!(s, ",{v}");
                }
            }
            if let Some(cq) = self.conserved.get(r) {
                for v in cq {
                    let _ = write!(s, ",{v}");
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trajectory: Trajectory,
    pub weights: WeightState,
}

/// Per hidden node v: Σ_{in} ‖W‖² − Σ_{out} ‖W‖², invariant under gradient
/// flow because rescaling h_v by an invertible map (compensated on the
/// outgoing edges) leaves every path product unchanged.
pub fn node_balance(graph: &ArchitectureGraph, w: &WeightState) -> Vec<f64> {
    graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Hidden)
        .map(|n| {
            let i: f64 = graph.incoming(n.id).iter().map(|e| w.get(*e).norm_squared()).sum();
            let o: f64 = graph.outgoing(n.id).iter().map(|e| w.get(*e).norm_squared()).sum();
            i - o
        })
        .collect()
}

fn record(traj: &mut Trajectory, graph: &ArchitectureGraph, w: &WeightState, loss: f64, top_k: usize) {
    traj.times.push(w.time);
    traj.losses.push(loss);
    if top_k > 0 {
        traj.singular_values.push(
            w.weights
                .iter()
                .map(|m| singular_values(m).into_iter().take(top_k).collect())
                .collect(),
        );
    }
    traj.conserved.push(node_balance(graph, w));
}

/// Integrate the gradient flow from `init` using precomputed statistics.
/// Weight snapshots are kept at the listed step numbers.
pub fn train_on_correlations(
    graph: &ArchitectureGraph,
    tables: &PathTables,
    corr: &PathwayCorrelations,
    init: WeightState,
    config: &SimConfig,
    snapshot_steps: &[usize],
) -> Result<TrainOutcome> {
    config.validate()?;
    init.check_shapes(graph)?;
    let engine = GradientEngine::new(graph, tables, corr)?;
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
    let mut w = init;
    let mut initial = f64::NAN;
    for step in 0..=config.steps {
        let (loss, grad) = engine.evaluate(&w);
        if step == 0 {
            initial = loss;
        }
        if !loss.is_finite() || loss > config.divergence_factor * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss, initial });
        }
        if step % config.record_every == 0 || step == config.steps {
            record(&mut traj, graph, &w, loss, config.top_k);
        }
        if snapshot_steps.contains(&step) {
            traj.snapshots.push(w.clone());
        }
        if step == config.steps {
            break;
        }
        let t = w.time;
        let first = WeightState { weights: grad, time: t };
        let mut used_first = false;
        w = integrate_step(config.integrator, &w, h, |s| {
            if !used_first {
                used_first = true;
                first.clone()
            } else {
                engine.velocity(s)
            }
        });
        w.time = t + config.step;
    }
    Ok(TrainOutcome { trajectory: traj, weights: w })
}

/// Initialize with `scheme` and train on the dataset's pathway statistics.
pub fn train(dataset: &GatedDataset, scheme: &InitScheme, seed: u64, config: &SimConfig) -> Result<TrainOutcome> {
    dataset.validate()?;
    let g = &*dataset.graph;
    let tables = enumerate_paths(g)?;
    let corr = compute_pathway_correlations(dataset, &tables)?;
    let init = init_weights(g, scheme, seed)?;
    train_on_correlations(g, &tables, &corr, init, config, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_routing_dataset, make_xor_dataset, RoutingConfig, XorScheme, XorSign};
    use crate::dynamics::{dataset_loss, Integrator};

    #[test]
    fn xor_small_random_converges() {
        let t = make_xor_dataset(XorScheme::FourPathway, XorSign::NegativeOnAgreement);
        let cfg = SimConfig { step: 0.05, steps: 4000, record_every: 100, ..SimConfig::default() };
        let out = train(&t.dataset, &InitScheme::SmallRandom { scale: 0.2 }, 1, &cfg).unwrap();
        assert!(out.trajectory.final_loss() <= 1e-4, "{}", out.trajectory.final_loss());
        for w in out.trajectory.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let direct = dataset_loss(&t.dataset.graph, &out.weights, &t.dataset).unwrap();
        assert!((direct - out.trajectory.final_loss()).abs() < 1e-12);
    }

    #[test]
    fn small_step_changes_loss_by_gradient_norm() {
        let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 5, ..RoutingConfig::default() }).unwrap();
        let g = &task.dataset.graph;
        let tables = enumerate_paths(g).unwrap();
        let corr = compute_pathway_correlations(&task.dataset, &tables).unwrap();
        let w0 = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, 2).unwrap();
        let engine = GradientEngine::new(g, &tables, &corr).unwrap();
        let (l0, grad) = engine.evaluate(&w0);
        let norm2: f64 = grad.iter().map(|m| m.norm_squared()).sum();
        for eta in [1e-3, 1e-4] {
            let cfg = SimConfig { step: eta, steps: 1, record_every: 1, ..SimConfig::default() };
            let out = train_on_correlations(g, &tables, &corr, w0.clone(), &cfg, &[]).unwrap();
            let dl = out.trajectory.final_loss() - l0;
            // second-order remainder
            assert!((dl + eta * norm2).abs() < 50.0 * eta * eta * norm2.max(1.0), "eta {eta}: {dl} vs {}", -eta * norm2);
        }
    }

    #[test]
    fn divergence_guard_and_determinism() {
        let t = make_xor_dataset(XorScheme::SinglePathway, XorSign::NegativeOnAgreement);
        let cfg = SimConfig { step: 50.0, steps: 50, ..SimConfig::default() };
        let r = train(&t.dataset, &InitScheme::SmallRandom { scale: 3.0 }, 0, &cfg);
        assert!(matches!(r, Err(Error::Diverged { .. })));
        let cfg = SimConfig { step: 0.1, steps: 30, record_every: 3, integrator: Integrator::Rk4, ..SimConfig::default() };
        let a = train(&t.dataset, &InitScheme::SmallRandom { scale: 0.5 }, 4, &cfg).unwrap();
        let b = train(&t.dataset, &InitScheme::SmallRandom { scale: 0.5 }, 4, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv());
        assert_eq!(a.trajectory.len(), 11);
    }

    #[test]
    fn node_balance_is_nearly_conserved() {
        let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 6, ..RoutingConfig::default() }).unwrap();
        let cfg = SimConfig { step: 1e-3, steps: 2000, record_every: 500, integrator: Integrator::Rk4, ..SimConfig::default() };
        let out = train(&task.dataset, &InitScheme::SmallRandom { scale: 1.0 }, 0, &cfg).unwrap();
        let c = &out.trajectory.conserved;
        for q in 0..c[0].len() {
            assert!((c.last().unwrap()[q] - c[0][q]).abs() < 1e-9);
        }
        assert!(out.trajectory.final_loss() < out.trajectory.losses[0]);
    }
}
