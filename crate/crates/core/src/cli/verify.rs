//! Oracle and invariant suite behind the `verify` subcommand. Prints one JSON
//! object per check and a final summary line.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analysis::{hidden_rsm, sharing_index};
use crate::datasets::{
    compute_pathway_correlations, contextual_graph, contextual_population_correlations, load_dataset,
    make_contextual_dataset, make_hierarchy_dataset, make_routing_dataset, make_xor_dataset,
    make_xor_dataset_with_width, route_mask, save_dataset, ContextScheme, DatasetManifest, GatedDataset, RouteRule,
    RoutingConfig, XorScheme, XorSign,
};
use crate::dynamics::{
    analytic_gradient, dataset_loss, finite_difference_gradient, init_weights, max_relative_error, node_balance,
    relu_reference_train, scalar_task, train, train_on_correlations, GradientEngine, InitScheme, Integrator,
    ReluConfig, SimConfig,
};
use crate::error::{Error, Result};
use crate::netgraph::{enumerate_paths, validate_graph, GraphSpec};
use crate::reduction::{
    conserved_quantity, diagonalize_stats, lift, race_reduced_train, reduced_train, restrict, routing_reduced_train,
    routing_spectrum, xor_analytic, xor_analytic_loss, xor_effective_a0, DiagOptions, XOR_D, XOR_S,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Fewer random settings and seeds.
    pub quick: bool,
    /// Perturb the analytic gradient before comparing it with finite
    /// differences; the gradient check must then fail.
    pub inject_gradient_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub criterion: Option<u32>,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.check.clone()).collect()
    }
}

struct Outcome {
    pass: bool,
    value: f64,
    threshold: f64,
    detail: String,
}

fn below(value: f64, threshold: f64, detail: impl Into<String>) -> Outcome {
    Outcome { pass: value <= threshold, value, threshold, detail: detail.into() }
}

/// Run every check, writing one JSON line each to `out`. Fails with
/// [`Error::VerificationFailed`] naming the failed checks.
pub fn cmd_verify(opts: VerifyOptions, out: &mut dyn Write) -> Result<VerifyReport> {
    type Check = (&'static str, Option<u32>, fn(&VerifyOptions) -> Result<Outcome>);
    let checks: [Check; 16] = [
        ("reduction_exactness", Some(1), reduction_exactness),
        ("gradient_oracle", Some(2), gradient_oracle),
        ("conservation", Some(3), conservation),
        ("routing_sv_ratio", Some(4), routing_sv_ratio),
        ("race_sv_ratio", Some(4), race_sv_ratio),
        ("xor_closed_form", Some(5), xor_closed_form),
        ("xor_relu_reference", Some(5), xor_relu_reference),
        ("contextual_always_on", Some(6), contextual_always_on),
        ("contextual_per_context", Some(6), contextual_per_context),
        ("netgraph_invariants", None, netgraph_invariants),
        ("dataset_round_trip", None, dataset_round_trip),
        ("route_mask_balance", None, route_mask_balance),
        ("loss_from_correlations", None, loss_from_correlations),
        ("node_balance_conserved", None, node_balance_conserved),
        ("restrict_lift_round_trip", None, restrict_lift_round_trip),
        ("kernel_invariants", None, kernel_invariants),
    ];
    let mut report = VerifyReport { checks: Vec::new() };
    for (name, criterion, f) in checks {
        let t0 = Instant::now();
        let res = match f(&opts) {
            Ok(o) => CheckResult {
                check: name.into(),
                criterion,
                pass: o.pass,
                value: o.value,
                threshold: o.threshold,
                detail: o.detail,
                seconds: 0.0,
            },
            Err(e) => CheckResult {
                check: name.into(),
                criterion,
                pass: false,
                value: f64::NAN,
                threshold: f64::NAN,
                detail: format!("error: {e}"),
                seconds: 0.0,
            },
        };
        let res = CheckResult { seconds: t0.elapsed().as_secs_f64(), ..res };
        writeln!(out, "{}", serde_json::to_string(&res).map_err(|e| Error::Parse(e.to_string()))?)?;
        report.checks.push(res);
    }
    let failed = report.failed();
    writeln!(
        out,
        "{}",
        serde_json::json!({"summary": {"passed": report.checks.len() - failed.len(), "failed": failed.len()}})
    )?;
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(Error::VerificationFailed(failed))
    }
}

fn reduction_exactness(o: &VerifyOptions) -> Result<Outcome> {
    let task = make_routing_dataset(&RoutingConfig::default())?;
    let g = &task.dataset.graph;
    let tables = enumerate_paths(g)?;
    let c = compute_pathway_correlations(&task.dataset, &tables)?;
    let st = diagonalize_stats(&c, g, &tables, &DiagOptions::default())?;
    let w0 = init_weights(g, &InitScheme::decoupled_uniform(g, st.bases.clone(), 0.2), 0)?;
    let (b0, _) = restrict(g, &w0, &st.bases, 1e-12)?;
    let steps = if o.quick { 2000 } else { 10_000 };
    let cfg = SimConfig { step: 1e-2, steps, record_every: 10, top_k: 0, ..SimConfig::default() };
    let full = train_on_correlations(g, &tables, &c, w0, &cfg, &[])?;
    let red = reduced_train(g, &st, &tables, b0, &cfg)?;
    Ok(below(full.trajectory.max_loss_gap(&red.trajectory), 1e-8, format!("M=7 K=4 B0=0.2, {steps} Euler steps")))
}

fn gradient_oracle(o: &VerifyOptions) -> Result<Outcome> {
    let settings = if o.quick { 5 } else { 20 };
    let datasets: Vec<(&str, GatedDataset)> = vec![
        ("xor", make_xor_dataset(XorScheme::FourPathway, XorSign::NegativeOnAgreement).dataset),
        ("contextual", make_contextual_dataset(40, 1, ContextScheme::PerContext)?.dataset),
        ("routing", make_routing_dataset(&RoutingConfig { m: 4, k: 2, hidden: 5, ..RoutingConfig::default() })?.dataset),
    ];
    let mut worst: f64 = 0.0;
    for (_, ds) in &datasets {
        let g = &ds.graph;
        let t = enumerate_paths(g)?;
        let c = compute_pathway_correlations(ds, &t)?;
        for seed in 0..settings {
            let w = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, 1000 + seed)?;
            let mut a = analytic_gradient(g, &w, &c, &t)?;
            if o.inject_gradient_fault {
                a[0] *= 1.0 + 1e-3;
            }
            let f = finite_difference_gradient(g, &w, ds, 1e-5)?;
            worst = worst.max(max_relative_error(&a, &f, 1e-4));
        }
    }
    Ok(below(worst, 1e-6, format!("{settings} settings each on xor, contextual, routing; eps=1e-5")))
}

fn conservation(_: &VerifyOptions) -> Result<Outcome> {
    let sp = routing_spectrum(&make_hierarchy_dataset());
    let b = vec![0.2; sp.modes()];
    let cfg = SimConfig { step: 1e-3, steps: 10_000, record_every: 100, integrator: Integrator::Rk4, ..SimConfig::default() };
    let t = routing_reduced_train(&sp, 7, 4, [b.clone(), b.clone(), b], &cfg, true)?;
    Ok(below(conserved_quantity(&t, 7).max_relative_drift, 1e-6, "relative drift of M*B1^2-B2^2, RK4"))
}

fn routing_sv_ratio(_: &VerifyOptions) -> Result<Outcome> {
    let task = make_routing_dataset(&RoutingConfig::default())?;
    let cfg = SimConfig { step: 0.02, steps: 20_000, record_every: 20_000, top_k: 1, ..SimConfig::default() };
    let out = train(&task.dataset, &InitScheme::SmallRandom { scale: 0.2 }, 1, &cfg)?;
    let last = out.trajectory.singular_values.last().expect("recorded");
    let l = task.layout;
    let input = (0..7).map(|i| last[l.input_edge(i).0][0]).sum::<f64>() / 7.0;
    let q = last[l.hidden_edge().0][0] / input / 7f64.sqrt();
    Ok(Outcome {
        pass: (0.9..=1.1).contains(&q),
        value: q,
        threshold: 0.1,
        detail: "hidden/input top singular value over sqrt(M), M=7".into(),
    })
}

fn race_sv_ratio(_: &VerifyOptions) -> Result<Outcome> {
    let sp = routing_spectrum(&make_hierarchy_dataset());
    let r = sp.modes();
    let mut worst: f64 = 0.0;
    for p in [1usize, 4, 16, 100] {
        let cfg = SimConfig {
            step: 0.5 * 100.0 / p as f64,
            steps: 20_000,
            record_every: 20_000,
            integrator: Integrator::Rk4,
            ..SimConfig::default()
        };
        let t = race_reduced_train(&sp, 10, p, [vec![0.2; r], vec![0.2; r]], &cfg)?;
        let last = t.singular_values.last().expect("recorded");
        worst = worst.max((last[1][0] / last[0][0] / (p as f64).powf(0.25) - 1.0).abs());
    }
    Ok(below(worst, 0.05, "max |ratio/P^(1/4) - 1| over P in {1,4,16,100}, M=10"))
}

fn xor_closed_form(_: &VerifyOptions) -> Result<Outcome> {
    let t = make_xor_dataset_with_width(XorScheme::FourPathway, XorSign::NegativeOnAgreement, 8);
    let g = &t.dataset.graph;
    let tables = enumerate_paths(g)?;
    let c = compute_pathway_correlations(&t.dataset, &tables)?;
    let st = diagonalize_stats(&c, g, &tables, &DiagOptions::default())?;
    let b0 = 1e-3;
    let w0 = init_weights(g, &InitScheme::decoupled_uniform(g, st.bases.clone(), b0), 0)?;
    let cfg = SimConfig { tau: 2.5, step: 0.05, steps: 4000, record_every: 10, top_k: 0, integrator: Integrator::Rk4, ..SimConfig::default() };
    let sim = train_on_correlations(g, &tables, &c, w0, &cfg, &[])?;
    let (_, l) = xor_analytic(xor_effective_a0(b0), cfg.tau, &sim.trajectory.times)?;
    let gap = sim.trajectory.losses.iter().zip(&l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if xor_analytic_loss(XOR_S / XOR_D) != 0.0 {
        return Ok(Outcome { pass: false, value: gap, threshold: 1e-6, detail: "asymptotic loss is not zero".into() });
    }
    Ok(below(gap, 1e-6, "decoupled network vs closed form, max loss gap"))
}

fn xor_relu_reference(o: &VerifyOptions) -> Result<Outcome> {
    let t = make_xor_dataset(XorScheme::SinglePathway, XorSign::NegativeOnAgreement);
    let (xs, ys, _) = scalar_task(&t.dataset)?;
    let seeds = if o.quick { 3 } else { 10 };
    let mut worst_loss: f64 = 0.0;
    let mut worst_dilation: f64 = 1.0;
    for seed in 0..seeds {
        let cfg = ReluConfig { seed, ..ReluConfig::default() };
        let out = relu_reference_train(&t.dataset, &cfg)?;
        let tr = &out.trajectory;
        let (_, la) = xor_analytic(out.initial.effective_a0(&xs, &ys), cfg.tau, &tr.times)?;
        let th = crate::analysis::crossing_time(&tr.times, &tr.losses, tr.losses[0] / 2.0, false);
        let ta = crate::analysis::crossing_time(&tr.times, &la, la[0] / 2.0, false);
        let (Some(th), Some(ta)) = (th, ta) else {
            return Ok(Outcome { pass: false, value: f64::NAN, threshold: 1.25, detail: format!("seed {seed}: no loss drop") });
        };
        worst_loss = worst_loss.max(tr.final_loss());
        worst_dilation = worst_dilation.max(th / ta).max(ta / th);
    }
    Ok(Outcome {
        pass: worst_loss <= 1e-3 && worst_dilation <= 1.25,
        value: worst_dilation,
        threshold: 1.25,
        detail: format!("{seeds} seeds, N_h=128, sigma0=2e-4; worst final loss {worst_loss:e}"),
    })
}

fn contextual_run(scheme: ContextScheme) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let g = contextual_graph(scheme, 2);
    let tables = enumerate_paths(&g)?;
    let c = contextual_population_correlations(scheme, &tables)?;
    let w0 = init_weights(&g, &InitScheme::SmallRandom { scale: 0.01 }, 3)?;
    let cfg = SimConfig { step: 0.1, steps: 4000, record_every: 4000, top_k: 0, ..SimConfig::default() };
    let out = train_on_correlations(&g, &tables, &c, w0, &cfg, &[])?;
    let n = g.edges().len() / 2;
    let maps = (0..n).map(|p| out.weights.weights[n + p].clone() * &out.weights.weights[p]).collect();
    Ok((maps, out.trajectory.final_loss()))
}

fn contextual_always_on(_: &VerifyOptions) -> Result<Outcome> {
    let (maps, _) = contextual_run(ContextScheme::AlwaysOn)?;
    let err = (&maps[0] - DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).amax();
    Ok(below(err, 1e-3, "always-on pathway map vs [1/2, 1/2]"))
}

fn contextual_per_context(_: &VerifyOptions) -> Result<Outcome> {
    let (maps, loss) = contextual_run(ContextScheme::PerContext)?;
    let e0 = (&maps[0] - DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).amax();
    let e1 = (&maps[1] - DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).amax();
    let err = e0.max(e1);
    Ok(Outcome {
        pass: err <= 1e-3 && loss <= 1e-6,
        value: err,
        threshold: 1e-3,
        detail: format!("gated pathway maps vs [1,0] and [0,1]; final loss {loss:e}"),
    })
}

fn netgraph_invariants(_: &VerifyOptions) -> Result<Outcome> {
    let mut cyc = GraphSpec::default();
    cyc.node("i", 1).node("a", 1).node("b", 1).node("o", 1);
    cyc.edge("i", "a").edge("a", "b").edge("b", "a").edge("b", "o");
    let cycle_rejected = matches!(validate_graph(&cyc), Err(Error::CycleDetected(_)));
    let mut dang = GraphSpec::default();
    dang.node("i", 1).node("o", 1).edge("i", "x");
    let dangling_rejected = matches!(validate_graph(&dang), Err(Error::DanglingEdge { .. }));
    let task = make_routing_dataset(&RoutingConfig { m: 5, k: 2, hidden: 3, ..RoutingConfig::default() })?;
    let paths = enumerate_paths(&task.dataset.graph)?.len();
    let ok = cycle_rejected && dangling_rejected && paths == 25;
    Ok(Outcome {
        pass: ok,
        value: paths as f64,
        threshold: 25.0,
        detail: format!("cycle rejected {cycle_rejected}, dangling rejected {dangling_rejected}, routing M=5 paths {paths}"),
    })
}

fn dataset_round_trip(_: &VerifyOptions) -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("gdln-verify-{}", std::process::id()));
    let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 4, ..RoutingConfig::default() })?;
    let res = (|| {
        save_dataset(&task.dataset, &dir, &DatasetManifest::new("routing", Some(0), serde_json::Value::Null))?;
        load_dataset(&dir)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    let (back, _) = res?;
    let same = back.examples == task.dataset.examples && back.route_mask == task.dataset.route_mask;
    Ok(Outcome { pass: same, value: f64::from(u8::from(same)), threshold: 1.0, detail: "save/load is lossless".into() })
}

fn route_mask_balance(_: &VerifyOptions) -> Result<Outcome> {
    let mut bad = 0usize;
    for rule in [RouteRule::CyclicBand, RouteRule::RandomBalanced] {
        for k in 1..=10 {
            let mask = route_mask(10, k, rule, 7)?;
            for i in 0..10 {
                bad += usize::from((0..10).filter(|&j| mask.trained(i, j)).count() != k);
                bad += usize::from((0..10).filter(|&j| mask.trained(j, i)).count() != k);
            }
        }
    }
    Ok(below(bad as f64, 0.0, "K trained routes per input and output domain, both rules"))
}

fn loss_from_correlations(_: &VerifyOptions) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let sets = [
        make_xor_dataset(XorScheme::FourPathway, XorSign::PositiveOnAgreement).dataset,
        make_contextual_dataset(30, 2, ContextScheme::AlwaysOn)?.dataset,
        make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 4, ..RoutingConfig::default() })?.dataset,
    ];
    for ds in &sets {
        let g = &ds.graph;
        let t = enumerate_paths(g)?;
        let c = compute_pathway_correlations(ds, &t)?;
        let engine = GradientEngine::new(g, &t, &c)?;
        for seed in 0..3 {
            let w = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, seed)?;
            worst = worst.max((engine.loss(&w) - dataset_loss(g, &w, ds)?).abs());
        }
    }
    Ok(below(worst, 1e-12, "loss from pathway correlations vs direct forward pass"))
}

fn node_balance_conserved(_: &VerifyOptions) -> Result<Outcome> {
    let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 5, ..RoutingConfig::default() })?;
    let g = &task.dataset.graph;
    let cfg = SimConfig { step: 1e-3, steps: 2000, record_every: 100, top_k: 0, integrator: Integrator::Rk4, ..SimConfig::default() };
    let out = train(&task.dataset, &InitScheme::SmallRandom { scale: 0.5 }, 4, &cfg)?;
    let first = node_balance(g, &init_weights(g, &InitScheme::SmallRandom { scale: 0.5 }, 4)?);
    let last = node_balance(g, &out.weights);
    let drift = first.iter().zip(&last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(below(drift, 1e-9, "per hidden node, sum in ||W||^2 - sum out ||W||^2"))
}

fn restrict_lift_round_trip(_: &VerifyOptions) -> Result<Outcome> {
    let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 6, ..RoutingConfig::default() })?;
    let g = &task.dataset.graph;
    let t = enumerate_paths(g)?;
    let c = compute_pathway_correlations(&task.dataset, &t)?;
    let st = diagonalize_stats(&c, g, &t, &DiagOptions::default())?;
    let b0: Vec<Vec<f64>> = (0..g.edges().len()).map(|e| (0..st.modes()).map(|i| 0.1 + 0.01 * (e + i) as f64).collect()).collect();
    let w = init_weights(g, &InitScheme::Decoupled { b0: b0.clone(), bases: st.bases.clone() }, 0)?;
    let (red, leak) = restrict(g, &w, &st.bases, 1e-10)?;
    let back = lift(g, &red, &st.bases);
    let err = w.weights.iter().zip(&back.weights).map(|(a, b)| (a - b).amax()).fold(leak, f64::max);
    Ok(below(err, 1e-12, "lift(restrict(W)) = W on the decoupled manifold"))
}

fn kernel_invariants(_: &VerifyOptions) -> Result<Outcome> {
    let task = make_routing_dataset(&RoutingConfig { m: 3, k: 2, hidden: 5, ..RoutingConfig::default() })?;
    let g = &task.dataset.graph;
    let w = init_weights(g, &InitScheme::SmallRandom { scale: 1.0 }, 5)?;
    let k = hidden_rsm(g, &w, &task.probe_set(), task.layout.h1())?;
    let asym = (&k.entries - k.entries.transpose()).amax();
    let min_eig = k.entries.clone().symmetric_eigenvalues().min();
    // identical input maps give fully shared representations
    let mut shared = w.clone();
    for i in 1..3 {
        shared.weights[task.layout.input_edge(i).0] = w.weights[task.layout.input_edge(0).0].clone();
    }
    let s = sharing_index(&hidden_rsm(g, &shared, &task.probe_set(), task.layout.h1())?)?;
    let err = asym.max((-min_eig).max(0.0)).max((s - 1.0).abs());
    Ok(below(err, 1e-10, "kernel symmetric PSD; identical encoders share fully"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass_and_fault_is_caught() {
        let o = VerifyOptions { quick: true, inject_gradient_fault: false };
        for f in [conservation, netgraph_invariants, route_mask_balance, loss_from_correlations, restrict_lift_round_trip, kernel_invariants, dataset_round_trip] {
            let r = f(&o).unwrap();
            assert!(r.pass, "{} {}", r.value, r.detail);
        }
        assert!(gradient_oracle(&o).unwrap().pass);
        let bad = VerifyOptions { quick: true, inject_gradient_fault: true };
        assert!(!gradient_oracle(&bad).unwrap().pass);
    }
}
