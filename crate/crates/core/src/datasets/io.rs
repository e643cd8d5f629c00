//! Columnar text format for gated datasets.
//!
//! A dataset directory holds:
//!
//! * `graph.toml`: the architecture (see [`GraphSpec`]).
//! * `examples.tsv`: one row per example. Columns are `weight`, then one
//!   column per input coordinate named `x:<node>:<k>`, then one per output
//!   coordinate named `y:<node>:<k>`. A node absent from an example is
//!   written as `-` in all of its columns.
//! * `gates.tsv`: one row per example, `node:<name>` columns then
//!   `edge:<source>-><target>` columns.
//! * `routes.tsv`: present only when the dataset has a route mask; an M×M
//!   grid of `0`/`1`, rows are input domains.
//! * `manifest.json`: generator name, seed and parameters.
//!
//! Numbers are written in shortest round-trip form, so save/load is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{GateAssignment, GatedDataset, GatedExample, RouteMask};
use crate::error::{Error, Result};
use crate::netgraph::{validate_graph, ArchitectureGraph, GraphSpec, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub n_examples: usize,
    #[serde(default)]
    pub files: Vec<String>,
}

impl DatasetManifest {
    pub fn new(generator: impl Into<String>, seed: Option<u64>, params: serde_json::Value) -> Self {
        DatasetManifest {
            generator: generator.into(),
            seed,
            params,
            n_examples: 0,
            files: Vec::new(),
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: cannot parse `{s}` as a number")))
}

fn node_columns(graph: &ArchitectureGraph, nodes: &[NodeId], prefix: &str) -> Vec<String> {
    nodes
        .iter()
        .flat_map(|&v| {
            let name = &graph.node(v).name;
            (0..graph.width(v)).map(move |k| format!("{prefix}:{name}:{k}"))
        })
        .collect()
}

fn push_values(row: &mut Vec<String>, graph: &ArchitectureGraph, v: NodeId, value: Option<&DVector<f64>>) {
    match value {
        Some(x) => row.extend(x.iter().map(|a| a.to_string())),
        None => row.extend(std::iter::repeat_n("-".to_string(), graph.width(v))),
    }
}

/// Write `dataset` into `dir` (created if needed). Returns the written files.
pub fn save_dataset(dataset: &GatedDataset, dir: &Path, manifest: &DatasetManifest) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let g = &*dataset.graph;
    let inputs: Vec<NodeId> = g.input_nodes().collect();
    let outputs: Vec<NodeId> = g.output_nodes().collect();
    let mut files = Vec::new();

    let graph_path = dir.join("graph.toml");
    fs::write(&graph_path, g.to_spec().to_toml_string())?;
    files.push(graph_path);

    let mut header = vec!["weight".to_string()];
    header.extend(node_columns(g, &inputs, "x"));
    header.extend(node_columns(g, &outputs, "y"));
    let mut text = header.join("\t");
    text.push('\n');
    for ex in &dataset.examples {
        let mut row = vec![ex.weight.to_string()];
        for &v in &inputs {
            push_values(&mut row, g, v, ex.inputs.get(&v));
        }
        for &v in &outputs {
            push_values(&mut row, g, v, ex.targets.get(&v));
        }
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    let examples_path = dir.join("examples.tsv");
    fs::write(&examples_path, text)?;
    files.push(examples_path);

    let mut header: Vec<String> = g.nodes().iter().map(|n| format!("node:{}", n.name)).collect();
    header.extend(g.edges().iter().map(|e| format!("edge:{}", g.edge_label(e.id))));
    let mut text = header.join("\t");
    text.push('\n');
    for ex in &dataset.examples {
        let row: Vec<String> = ex
            .gates
            .node_gates
            .iter()
            .chain(&ex.gates.edge_gates)
            .map(|x| x.to_string())
            .collect();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    let gates_path = dir.join("gates.tsv");
    fs::write(&gates_path, text)?;
    files.push(gates_path);

    if let Some(mask) = &dataset.route_mask {
        let mut text = String::new();
        for row in &mask.0 {
            let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            text.push_str(&cells.join("\t"));
            text.push('\n');
        }
        let routes_path = dir.join("routes.tsv");
        fs::write(&routes_path, text)?;
        files.push(routes_path);
    }

    let mut manifest = manifest.clone();
    manifest.n_examples = dataset.len();
    let manifest_path = dir.join("manifest.json");
    manifest.files = files
        .iter()
        .chain(std::iter::once(&manifest_path))
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    files.push(manifest_path);
    Ok(files)
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?
        .split('\t')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .map(|l| l.split('\t').map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(Error::Parse(format!(
                "{} row {}: {} cells, header has {}",
                path.display(),
                i + 1,
                r.len(),
                header.len()
            )));
        }
    }
    Ok((header, rows))
}

fn read_node_block(
    graph: &ArchitectureGraph,
    nodes: &[NodeId],
    prefix: &str,
    header: &[String],
    row: &[String],
    start: &mut usize,
) -> Result<BTreeMap<NodeId, DVector<f64>>> {
    let mut out = BTreeMap::new();
    for &v in nodes {
        let w = graph.width(v);
        let expected = format!("{prefix}:{}:0", graph.node(v).name);
        if header.get(*start) != Some(&expected) {
            return Err(Error::Parse(format!("expected column `{expected}`")));
        }
        let cells = &row[*start..*start + w];
        *start += w;
        if cells.iter().all(|c| c == "-") {
            continue;
        }
        let vals = cells
            .iter()
            .map(|c| parse_f64(c, &expected))
            .collect::<Result<Vec<_>>>()?;
        out.insert(v, DVector::from_vec(vals));
    }
    Ok(out)
}

/// Read a dataset written by [`save_dataset`] and validate it.
pub fn load_dataset(dir: &Path) -> Result<(GatedDataset, DatasetManifest)> {
    let spec = GraphSpec::from_toml_str(&fs::read_to_string(dir.join("graph.toml"))?)?;
    let graph = Arc::new(validate_graph(&spec)?);
    let g = &*graph;
    let inputs: Vec<NodeId> = g.input_nodes().collect();
    let outputs: Vec<NodeId> = g.output_nodes().collect();

    let (header, rows) = read_rows(&dir.join("examples.tsv"))?;
    let (gate_header, gate_rows) = read_rows(&dir.join("gates.tsv"))?;
    let n_gates = g.nodes().len() + g.edges().len();
    if gate_header.len() != n_gates {
        return Err(Error::Parse(format!("gates.tsv has {} columns, graph needs {n_gates}", gate_header.len())));
    }
    if gate_rows.len() != rows.len() {
        return Err(Error::Parse("examples.tsv and gates.tsv disagree on example count".into()));
    }
    if header.first().map(String::as_str) != Some("weight") {
        return Err(Error::Parse("examples.tsv must start with a `weight` column".into()));
    }

    let mut examples = Vec::with_capacity(rows.len());
    for (row, grow) in rows.iter().zip(&gate_rows) {
        let weight = parse_f64(&row[0], "weight")?;
        let mut col = 1;
        let x = read_node_block(g, &inputs, "x", &header, row, &mut col)?;
        let y = read_node_block(g, &outputs, "y", &header, row, &mut col)?;
        let vals = grow
            .iter()
            .map(|c| parse_f64(c, "gate"))
            .collect::<Result<Vec<_>>>()?;
        let (nodes, edges) = vals.split_at(g.nodes().len());
        examples.push(GatedExample {
            inputs: x,
            targets: y,
            gates: GateAssignment {
                node_gates: nodes.to_vec(),
                edge_gates: edges.to_vec(),
            },
            weight,
        });
    }

    let routes_path = dir.join("routes.tsv");
    let route_mask = if routes_path.exists() {
        let text = fs::read_to_string(&routes_path)?;
        let grid = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split('\t')
                    .map(|c| match c {
                        "1" => Ok(true),
                        "0" => Ok(false),
                        other => Err(Error::Parse(format!("routes.tsv: bad cell `{other}`"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if grid.iter().any(|r| r.len() != grid.len()) {
            return Err(Error::Parse("routes.tsv is not square".into()));
        }
        Some(RouteMask(grid))
    } else {
        None
    };

    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| Error::Parse(format!("manifest.json: {e}")))?;
    let dataset = GatedDataset {
        graph,
        examples,
        route_mask,
    };
    dataset.validate()?;
    Ok((dataset, manifest))
}
