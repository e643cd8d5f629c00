//! Experiment subcommands. Each writes CSV series, labelled-header CSV
//! matrices, a `summary.json` and a `manifest.json` into the output
//! directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{ExperimentConfig, RunManifest, RunRecord};
use crate::analysis::{crossing_time, hidden_rsm, matrix_csv, route_error_report, sharing_index};
use crate::datasets::{
    compute_pathway_correlations, make_race_gating, make_routing_dataset, make_transform_bench,
    make_xor_dataset_with_width, race_group_size, RaceConfig, RouteRule, RoutingConfig, TransformConfig,
    TransformKind, XorScheme, XorSign,
};
use crate::dynamics::{
    init_weights, relu_reference_train, scalar_task, train, train_on_correlations, InitScheme, Integrator,
    ReluConfig, SimConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::netgraph::enumerate_paths;
use crate::reduction::{
    diagonalize_stats, race_reduced_train, reduced_train, restrict, routing_reduced_train, routing_spectrum,
    scalar_routing_ode, xor_analytic, xor_effective_a0, DiagOptions,
};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads for sweep points.
    pub parallel: usize,
    /// Reduced grids and step counts.
    pub quick: bool,
    /// Overrides the configured seeds.
    pub seeds: Option<Vec<u64>>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), parallel: 1, quick: false, seeds: None }
    }
}

/// Clear the files of a previous run in `dir`; refuse to mix with foreign
/// files.
fn prepare_out(dir: &Path) -> Result<()> {
    if dir.exists() {
        let manifest = dir.join("manifest.json");
        if manifest.exists() {
            let old = RunManifest::load(&manifest)?;
            for f in &old.files {
                let _ = std::fs::remove_file(dir.join(f));
            }
            std::fs::remove_file(&manifest)?;
        }
        let mut leftover = Vec::new();
        for entry in walk(dir)? {
            if entry.is_file() {
                leftover.push(entry);
            }
        }
        if !leftover.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "output directory {} holds files not written by a previous run",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Every path under `dir`, recursively.
pub fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn write_out(dir: &Path, rel: &str, content: &str) -> Result<String> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(rel.to_string())
}

fn write_json<T: Serialize>(dir: &Path, rel: &str, value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_out(dir, rel, &(text + "\n"))
}

fn par_map<T, R, F>(parallel: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}

fn record<F>(name: impl Into<String>, seed: Option<u64>, f: F) -> Result<RunRecord>
where
    F: FnOnce() -> Result<Vec<String>>,
{
    let t0 = Instant::now();
    let files = f()?;
    Ok(RunRecord {
        name: name.into(),
        seed,
        status: "ok".into(),
        files,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

fn finish(
    experiment: &str,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    runs: Vec<RunRecord>,
    start: Instant,
) -> Result<RunManifest> {
    let files: BTreeSet<String> = runs.iter().flat_map(|r| r.files.iter().cloned()).collect();
    let mut config = cfg.clone();
    config.experiment = experiment.to_string();
    if let Some(s) = &opts.seeds {
        config.seeds = s.clone();
    }
    let manifest = RunManifest {
        experiment: experiment.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        quick: opts.quick,
        config,
        runs,
        files: files.into_iter().collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&opts.out, "manifest.json", &manifest)?;
    Ok(manifest)
}

fn seeds(cfg: &ExperimentConfig, opts: &RunOptions, n: u64) -> Vec<u64> {
    opts.seeds.clone().unwrap_or_else(|| cfg.seeds_or(n))
}

/// Scale sweeps shrink the step as `scale⁻⁴`, the growth of the largest
/// curvature of a three-layer network with the init scale.
pub fn sweep_step(scale: f64, cap: f64, stiffness: f64) -> f64 {
    cap.min(stiffness / scale.powi(4))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",") + "\n";
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

fn opt_num(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------

/// XoR: closed form, decoupled and small-random gated networks and the ReLU
/// reference, one loss trajectory file each.
pub fn cmd_xor(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    prepare_out(&opts.out)?;
    let dir = &opts.out;
    let t = &cfg.task;
    let hidden = t.hidden.unwrap_or(128);
    let relu_init = t.relu_init.unwrap_or(2e-4);
    // entry std of the first layer equal to the ReLU reference's
    let init_scale = t.init_scale.unwrap_or(relu_init / (2.0 / (2 + hidden) as f64).sqrt());
    let b0 = t.b0.unwrap_or(1e-3);
    let sim = cfg.sim.apply(SimConfig {
        tau: 2.5,
        step: 0.05,
        steps: if opts.quick { 2000 } else { 4000 },
        record_every: 10,
        top_k: 1,
        integrator: Integrator::Rk4,
        ..SimConfig::default()
    });
    let seed_list = seeds(cfg, opts, 10);
    let four = make_xor_dataset_with_width(XorScheme::FourPathway, XorSign::NegativeOnAgreement, hidden);
    let single = make_xor_dataset_with_width(XorScheme::SinglePathway, XorSign::NegativeOnAgreement, hidden);
    let g = &four.dataset.graph;
    let tables = enumerate_paths(g)?;
    let corr = compute_pathway_correlations(&four.dataset, &tables)?;
    let stats = diagonalize_stats(&corr, g, &tables, &DiagOptions::default())?;

    let mut runs = Vec::new();
    let mut gap = f64::NAN;
    runs.push(record("gdln_decoupled", None, || {
        let w0 = init_weights(g, &InitScheme::decoupled_uniform(g, stats.bases.clone(), b0), 0)?;
        let out = train_on_correlations(g, &tables, &corr, w0, &sim, &[])?;
        let tr = out.trajectory;
        let (a, l) = xor_analytic(xor_effective_a0(b0), sim.tau, &tr.times)?;
        gap = tr.losses.iter().zip(&l).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let analytic = Trajectory {
            times: tr.times.clone(),
            losses: l,
            edge_labels: vec!["a".into()],
            singular_values: a.iter().map(|&x| vec![vec![x]]).collect(),
            ..Trajectory::default()
        };
        Ok(vec![
            write_out(dir, "trajectories/analytic.csv", &analytic.to_csv())?,
            write_out(dir, "trajectories/gdln_decoupled.csv", &tr.to_csv())?,
        ])
    })?);

    let gdln = par_map(opts.parallel, seed_list.clone(), |seed| {
        let mut fin = 0.0;
        let rec = record("gdln_random", Some(seed), || {
            let out = train(&four.dataset, &InitScheme::SmallRandom { scale: init_scale }, seed, &sim)?;
            fin = out.trajectory.final_loss();
            Ok(vec![write_out(dir, &format!("trajectories/gdln_seed{seed}.csv"), &out.trajectory.to_csv())?])
        })?;
        Ok((rec, json!({"seed": seed, "final_loss": fin})))
    })?;
    let (xs, ys, _) = scalar_task(&single.dataset)?;
    let relu = par_map(opts.parallel, seed_list, |seed| {
        let rc = ReluConfig {
            hidden,
            sigma0: relu_init,
            tau: sim.tau,
            step: sim.step,
            steps: sim.steps,
            record_every: sim.record_every,
            seed,
        };
        let mut info = json!(null);
        let rec = record("relu", Some(seed), || {
            let out = relu_reference_train(&single.dataset, &rc)?;
            let tr = &out.trajectory;
            let a0 = out.initial.effective_a0(&xs, &ys);
            let (_, la) = xor_analytic(a0, rc.tau, &tr.times)?;
            let half = tr.losses[0] / 2.0;
            info = json!({
                "seed": seed,
                "effective_a0": a0,
                "final_loss": tr.final_loss(),
                "t_half": crossing_time(&tr.times, &tr.losses, half, false),
                "t_half_analytic": crossing_time(&tr.times, &la, la[0] / 2.0, false),
                "diagonal_alignment": out.net.diagonal_alignment(0.2),
            });
            Ok(vec![write_out(dir, &format!("trajectories/relu_seed{seed}.csv"), &tr.to_csv())?])
        })?;
        Ok((rec, info))
    })?;
    let summary = json!({
        "hidden": hidden,
        "tau": sim.tau,
        "b0": b0,
        "analytic_vs_decoupled_max_gap": gap,
        "gdln_random": gdln.iter().map(|x| &x.1).collect::<Vec<_>>(),
        "relu": relu.iter().map(|x| &x.1).collect::<Vec<_>>(),
    });
    runs.extend(gdln.into_iter().map(|x| x.0));
    runs.extend(relu.into_iter().map(|x| x.0));
    runs.push(record("summary", None, || Ok(vec![write_json(dir, "summary.json", &summary)?]))?);
    finish("xor", cfg, opts, runs, start)
}

// ---------------------------------------------------------------------------

fn routing_config(cfg: &ExperimentConfig, m: usize, k: usize) -> RoutingConfig {
    let t = &cfg.task;
    RoutingConfig {
        m: t.m.unwrap_or(m),
        k: t.k.unwrap_or(k),
        hidden: t.hidden.unwrap_or(64),
        input_dim: t.input_dim.unwrap_or(4),
        rule: t.rule.unwrap_or(RouteRule::CyclicBand),
        seed: t.data_seed.unwrap_or(0),
    }
}

/// Routing network: full simulations from random and decoupled starts, the
/// exact mode reduction, the three-variable and scalar ODEs, kernels and
/// per-route errors.
pub fn cmd_routing(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    prepare_out(&opts.out)?;
    let dir = &opts.out;
    let rc = routing_config(cfg, 7, 4);
    let scale = cfg.task.init_scale.unwrap_or(0.2);
    let b0 = cfg.task.b0.unwrap_or(0.2);
    let sim = cfg.sim.apply(SimConfig {
        step: 0.02,
        steps: if opts.quick { 5000 } else { 20000 },
        record_every: 100,
        top_k: 4,
        ..SimConfig::default()
    });
    let task = make_routing_dataset(&rc)?;
    let g = &task.dataset.graph;
    let tables = enumerate_paths(g)?;
    let corr = compute_pathway_correlations(&task.dataset, &tables)?;
    let stats = diagonalize_stats(&corr, g, &tables, &DiagOptions::default())?;
    let spec = routing_spectrum(&task.base);
    let m = rc.m;
    let r = spec.modes();
    let mut runs = Vec::new();
    let mut gap = f64::NAN;
    runs.push(record("decoupled_vs_reduced", None, || {
        let w0 = init_weights(g, &InitScheme::decoupled_uniform(g, stats.bases.clone(), b0), 0)?;
        let (bred, _) = restrict(g, &w0, &stats.bases, 1e-10)?;
        let full = train_on_correlations(g, &tables, &corr, w0, &sim, &[])?;
        let red = reduced_train(g, &stats, &tables, bred, &sim)?;
        gap = full.trajectory.max_loss_gap(&red.trajectory);
        Ok(vec![
            write_out(dir, "trajectories/full_decoupled.csv", &full.trajectory.to_csv())?,
            write_out(dir, "trajectories/reduced.csv", &red.trajectory.to_csv())?,
        ])
    })?);
    runs.push(record("routing_odes", None, || {
        let b = vec![b0; r];
        let three = routing_reduced_train(&spec, m, rc.k, [b.clone(), b.clone(), b.clone()], &sim, true)?;
        let c: Vec<f64> = (0..r).map(|_| m as f64 * b0 * b0 - b0 * b0).collect();
        let scalar = scalar_routing_ode(&spec, m, &c, &b, &sim)?;
        Ok(vec![
            write_out(dir, "trajectories/routing_ode.csv", &three.to_csv())?,
            write_out(dir, "trajectories/scalar_ode.csv", &scalar.to_csv())?,
        ])
    })?);
    let layout = task.layout;
    let per_seed = par_map(opts.parallel, seeds(cfg, opts, 1), |seed| {
        let mut info = json!(null);
        let rec = record("full_random", Some(seed), || {
            let out = train(&task.dataset, &InitScheme::SmallRandom { scale }, seed, &sim)?;
            let tr = &out.trajectory;
            let last = tr.singular_values.last().expect("recorded");
            let input_sv = (0..m).map(|i| last[layout.input_edge(i).0][0]).sum::<f64>() / m as f64;
            let hidden_sv = last[layout.hidden_edge().0][0];
            let mask = task.dataset.route_mask.clone().expect("routing mask");
            let rep = route_error_report(g, &out.weights, &task, &mask)?;
            let probes = task.probe_set();
            let k1 = hidden_rsm(g, &out.weights, &probes, layout.h1())?;
            let k2 = hidden_rsm(g, &out.weights, &probes, layout.h2())?;
            info = json!({
                "seed": seed,
                "final_loss": tr.final_loss(),
                "hidden_over_input_sv": hidden_sv / input_sv,
                "ratio_over_sqrt_m": hidden_sv / input_sv / (m as f64).sqrt(),
                "trained_error": rep.trained_error,
                "untrained_error": rep.untrained_error,
                "sharing_index_h1": sharing_index(&k1)?,
            });
            Ok(vec![
                write_out(dir, &format!("trajectories/full_random_seed{seed}.csv"), &tr.to_csv())?,
                write_out(dir, &format!("rsm_h1_seed{seed}.csv"), &k1.to_csv())?,
                write_out(dir, &format!("rsm_h2_seed{seed}.csv"), &k2.to_csv())?,
                write_out(dir, &format!("route_error_seed{seed}.csv"), &rep.per_route_csv())?,
            ])
        })?;
        Ok((rec, info))
    })?;
    let summary = json!({
        "m": m,
        "k": rc.k,
        "decoupled_vs_reduced_max_gap": gap,
        "random": per_seed.iter().map(|x| &x.1).collect::<Vec<_>>(),
    });
    runs.extend(per_seed.into_iter().map(|x| x.0));
    runs.push(record("summary", None, || Ok(vec![write_json(dir, "summary.json", &summary)?]))?);
    finish("routing", cfg, opts, runs, start)
}

// ---------------------------------------------------------------------------

/// Pathway race: reduced race for each P (and the block-gated network where
/// P is admissible), then the K/M sweep of trained and untrained error.
pub fn cmd_race(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    prepare_out(&opts.out)?;
    let dir = &opts.out;
    let t = &cfg.task;
    let m = t.m.unwrap_or(10);
    let scale = t.init_scale.unwrap_or(0.2);
    let b0 = t.b0.unwrap_or(0.2);
    let p_grid = t.p_grid.clone().unwrap_or_else(|| vec![1, 4, 16, 25, m * m]);
    let k_grid = t.k_grid.clone().unwrap_or_else(|| if opts.quick { vec![1, 5, m] } else { (1..=m).collect() });
    let sim = cfg.sim.apply(SimConfig {
        step: 0.02,
        steps: if opts.quick { 5000 } else { 20000 },
        record_every: 100,
        top_k: 1,
        ..SimConfig::default()
    });
    let seed = seeds(cfg, opts, 1)[0];
    let base = make_routing_dataset(&RoutingConfig { m, k: 1, ..routing_config(cfg, m, 1) })?.base;
    let spec = routing_spectrum(&base);
    let r = spec.modes();

    // the race rate scales with P/M², so the step is scaled to match
    let reduced = par_map(opts.parallel, p_grid.clone(), |p| {
        let mut info = json!(null);
        let rec = record("race_reduced", None, || {
            let rsim = SimConfig {
                step: 0.5 * (m * m) as f64 / p as f64,
                steps: if opts.quick { 5000 } else { 20000 },
                record_every: 100,
                integrator: Integrator::Rk4,
                ..sim
            };
            let tr = race_reduced_train(&spec, m, p, [vec![b0; r], vec![b0; r]], &rsim)?;
            let last = tr.singular_values.last().expect("recorded");
            let ratio = last[1][0] / last[0][0];
            info = json!({"p": p, "ratio": ratio, "ratio_over_p_quarter": ratio / (p as f64).powf(0.25)});
            Ok(vec![write_out(dir, &format!("race/reduced_p{p}.csv"), &tr.to_csv())?])
        })?;
        Ok((rec, info))
    })?;
    let admissible: Vec<usize> = if opts.quick {
        Vec::new()
    } else {
        p_grid.iter().copied().filter(|&p| race_group_size(m, p).is_ok()).collect()
    };
    let full = par_map(opts.parallel, admissible, |p| {
        record("race_network", Some(seed), || {
            let task = make_race_gating(&RaceConfig { m, p, ..RaceConfig::default() })?;
            let out = train(&task.dataset, &InitScheme::SmallRandom { scale }, seed, &sim)?;
            Ok(vec![write_out(dir, &format!("race/network_p{p}.csv"), &out.trajectory.to_csv())?])
        })
    })?;
    let sweep = par_map(opts.parallel, k_grid, |k| {
        let mut row = Vec::new();
        let rec = record("k_sweep", Some(seed), || {
            let task = make_routing_dataset(&routing_config(cfg, m, k).with_mk(m, k))?;
            let out = train(&task.dataset, &InitScheme::SmallRandom { scale }, seed, &sim)?;
            let mask = task.dataset.route_mask.clone().expect("routing mask");
            let rep = route_error_report(&task.dataset.graph, &out.weights, &task, &mask)?;
            row = vec![k as f64, k as f64 / m as f64, rep.trained_error, opt_num(rep.untrained_error)];
            Ok(vec![
                write_out(dir, &format!("k_sweep/loss_k{k}.csv"), &out.trajectory.to_csv())?,
                write_out(dir, &format!("k_sweep/route_error_k{k}.csv"), &rep.per_route_csv())?,
            ])
        })?;
        Ok((rec, row))
    })?;
    let rows: Vec<Vec<f64>> = sweep.iter().map(|x| x.1.clone()).collect();
    let summary = json!({
        "m": m,
        "race": reduced.iter().map(|x| &x.1).collect::<Vec<_>>(),
        "k_sweep": rows.iter().map(|r| json!({"k": r[0], "trained_error": r[2], "untrained_error": r[3]})).collect::<Vec<_>>(),
    });
    let mut runs: Vec<RunRecord> = reduced.into_iter().map(|x| x.0).collect();
    runs.extend(full);
    runs.extend(sweep.into_iter().map(|x| x.0));
    runs.push(record("summary", None, || {
        Ok(vec![
            write_out(dir, "k_sweep.csv", &table_csv(&["k", "k_over_m", "trained_error", "untrained_error"], &rows))?,
            write_json(dir, "summary.json", &summary)?,
        ])
    })?);
    finish("race", cfg, opts, runs, start)
}

impl RoutingConfig {
    fn with_mk(mut self, m: usize, k: usize) -> Self {
        self.m = m;
        self.k = k;
        self
    }
}

// ---------------------------------------------------------------------------

/// Routing network trained from a log-spaced range of init scales.
pub fn cmd_init_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    prepare_out(&opts.out)?;
    let dir = &opts.out;
    let rc = routing_config(cfg, 10, 4);
    let t = &cfg.task;
    let grid = t.scale_grid.clone().unwrap_or_else(|| log_grid(0.01, 10f64.sqrt(), 6));
    let cap = t.step_cap.unwrap_or(0.2);
    let stiffness = t.step_stiffness.unwrap_or(0.05);
    let base = cfg.sim.apply(SimConfig {
        steps: if opts.quick { 5000 } else { 20000 },
        record_every: 100,
        top_k: 1,
        ..SimConfig::default()
    });
    let seed = seeds(cfg, opts, 1)[0];
    let task = make_routing_dataset(&rc)?;
    let g = &task.dataset.graph;
    let n = grid.len();
    let rsm_at: BTreeSet<usize> = [0, n / 2, n - 1].into_iter().collect();
    let points = par_map(opts.parallel, grid.into_iter().enumerate().collect(), |(i, scale)| {
        let mut row = Vec::new();
        let rec = record("scale", Some(seed), || {
            let step = cfg.sim.step.unwrap_or_else(|| sweep_step(scale, cap, stiffness));
            let sim = SimConfig { step, ..base };
            let out = train(&task.dataset, &InitScheme::SmallRandom { scale }, seed, &sim)?;
            let mask = task.dataset.route_mask.clone().expect("routing mask");
            let rep = route_error_report(g, &out.weights, &task, &mask)?;
            let kern = hidden_rsm(g, &out.weights, &task.probe_set(), task.layout.h1())?;
            row = vec![scale, step, rep.trained_error, opt_num(rep.untrained_error), sharing_index(&kern)?];
            let mut files = vec![
                write_out(dir, &format!("loss/scale{i}.csv"), &out.trajectory.to_csv())?,
                write_out(dir, &format!("route_error/scale{i}.csv"), &rep.per_route_csv())?,
            ];
            if rsm_at.contains(&i) {
                files.push(write_out(dir, &format!("rsm/scale{i}.csv"), &kern.to_csv())?);
            }
            Ok(files)
        })?;
        Ok((rec, row))
    })?;
    let rows: Vec<Vec<f64>> = points.iter().map(|x| x.1.clone()).collect();
    let mut runs: Vec<RunRecord> = points.into_iter().map(|x| x.0).collect();
    runs.push(record("summary", None, || {
        Ok(vec![write_out(
            dir,
            "errors.csv",
            &table_csv(&["scale", "step", "trained_error", "untrained_error", "sharing_index"], &rows),
        )?])
    })?);
    finish("init-sweep", cfg, opts, runs, start)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub k: usize,
    pub scale: f64,
    pub step: f64,
    pub trained_accuracy: f64,
    pub untrained_accuracy: Option<f64>,
    pub trained_error: f64,
    pub untrained_error: Option<f64>,
}

/// Train the transform bench at one (K, scale) point.
pub fn transform_bench_point(
    base: &TransformConfig,
    k: usize,
    scale: f64,
    sim: &SimConfig,
    seed: u64,
) -> Result<(BenchPoint, String, Trajectory)> {
    let task = make_transform_bench(&TransformConfig { k, ..base.clone() })?;
    let out = train(&task.dataset, &InitScheme::SmallRandom { scale }, seed, sim)?;
    let mask = task.dataset.route_mask.clone().expect("bench mask");
    let rep = route_error_report(&task.dataset.graph, &out.weights, &task, &mask)?;
    let acc_csv = matrix_csv(rep.per_route_accuracy.as_ref().expect("classification"), "in", "out");
    Ok((
        BenchPoint {
            k,
            scale,
            step: sim.step,
            trained_accuracy: rep.trained_accuracy.expect("classification"),
            untrained_accuracy: rep.untrained_accuracy,
            trained_error: rep.trained_error,
            untrained_error: rep.untrained_error,
        },
        acc_csv,
        out.trajectory,
    ))
}

/// Composed-transformation bench: K/M sweep at small init, then an init
/// scale sweep at the configured K.
pub fn cmd_transform_bench(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    prepare_out(&opts.out)?;
    let dir = &opts.out;
    let t = &cfg.task;
    let def = TransformConfig::default();
    let bench = TransformConfig {
        m: t.m.unwrap_or(def.m),
        k: t.k.unwrap_or(def.k),
        n_classes: t.n_classes.unwrap_or(def.n_classes),
        input_dim: t.input_dim.unwrap_or(def.input_dim),
        hidden: t.hidden.unwrap_or(def.hidden),
        kind: t.kind.unwrap_or(TransformKind::PermuteInput),
        rule: t.rule.unwrap_or(def.rule),
        seed: t.data_seed.unwrap_or(0),
        ..def
    };
    let m = bench.m;
    let small = t.init_scale.unwrap_or(0.1);
    let cap = t.step_cap.unwrap_or(0.3);
    let stiffness = t.step_stiffness.unwrap_or(0.05);
    let k_grid = t.k_grid.clone().unwrap_or_else(|| if opts.quick { vec![1, 4, m] } else { (1..=m).collect() });
    let scale_grid = t.scale_grid.clone().unwrap_or_else(|| if opts.quick { vec![0.1, 2.0] } else { vec![0.1, 0.5, 1.0, 2.0] });
    let base = cfg.sim.apply(SimConfig {
        steps: if opts.quick { 5000 } else { 20000 },
        record_every: 100,
        top_k: 0,
        ..SimConfig::default()
    });
    let scale_steps = t.scale_steps.unwrap_or(if opts.quick { 10000 } else { 60000 });
    let seed = seeds(cfg, opts, 1)[0];
    let step_for = |scale: f64| cfg.sim.step.unwrap_or_else(|| sweep_step(scale, cap, stiffness));

    let mut jobs: Vec<(String, usize, f64, usize)> = k_grid.iter().map(|&k| (format!("k{k}"), k, small, base.steps)).collect();
    jobs.extend(scale_grid.iter().enumerate().map(|(i, &s)| (format!("scale{i}"), bench.k, s, scale_steps)));
    let points = par_map(opts.parallel, jobs, |(name, k, scale, steps)| {
        let mut point = None;
        let rec = record(name.clone(), Some(seed), || {
            let sim = SimConfig { step: step_for(scale), steps, record_every: (steps / 100).max(1), ..base };
            let (p, acc, tr) = transform_bench_point(&bench, k, scale, &sim, seed)?;
            point = Some(p);
            Ok(vec![
                write_out(dir, &format!("loss/{name}.csv"), &tr.to_csv())?,
                write_out(dir, &format!("route_accuracy/{name}.csv"), &acc)?,
            ])
        })?;
        Ok((rec, name, point.expect("set by run")))
    })?;
    let row = |p: &BenchPoint| {
        vec![
            p.k as f64,
            p.scale,
            p.step,
            p.trained_accuracy,
            opt_num(p.untrained_accuracy),
            p.trained_error,
            opt_num(p.untrained_error),
        ]
    };
    let header = ["k", "scale", "step", "trained_accuracy", "untrained_accuracy", "trained_error", "untrained_error"];
    let k_rows: Vec<Vec<f64>> = points.iter().filter(|x| x.1.starts_with('k')).map(|x| row(&x.2)).collect();
    let s_rows: Vec<Vec<f64>> = points.iter().filter(|x| x.1.starts_with("scale")).map(|x| row(&x.2)).collect();
    let summary = json!({
        "m": m,
        "kind": bench.kind,
        "points": points.iter().map(|x| &x.2).collect::<Vec<_>>(),
    });
    let mut runs: Vec<RunRecord> = points.into_iter().map(|x| x.0).collect();
    runs.push(record("summary", None, || {
        Ok(vec![
            write_out(dir, "k_sweep.csv", &table_csv(&header, &k_rows))?,
            write_out(dir, "scale_sweep.csv", &table_csv(&header, &s_rows))?,
            write_json(dir, "summary.json", &summary)?,
        ])
    })?);
    finish("transform-bench", cfg, opts, runs, start)
}
