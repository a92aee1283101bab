//! Panel loading and adjacency construction from the resolved file
//! choices. These are the only places the CLI touches input data.

use std::collections::BTreeMap;
use std::path::Path;

use graphfill::dataio::{load_panel, outlier_filter, Panel};
use graphfill::graph::{read_edge_list, Graph, GraphKind};
use graphfill::mat::Mat;
use graphfill::{Error, Result};

use crate::config::{DataChoice, GraphChoice};

/// Load the panel and apply the optional outlier filter.
pub fn load_data(choice: &DataChoice) -> Result<Panel> {
    let panel = load_panel(choice.features.as_deref(), &choice.targets)?;
    Ok(if choice.outlier_filter { outlier_filter(&panel) } else { panel })
}

/// One adjacency construction recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyKind {
    Binary,
    Distance,
    Similarity,
    Custom,
}

impl AdjacencyKind {
    pub fn parse(s: &str) -> Result<AdjacencyKind> {
        match s {
            "binary" => Ok(AdjacencyKind::Binary),
            "distance" => Ok(AdjacencyKind::Distance),
            "similarity" => Ok(AdjacencyKind::Similarity),
            "custom" => Ok(AdjacencyKind::Custom),
            other => Err(Error::Config(format!(
                "unknown adjacency `{other}` (expected binary, distance, similarity, or custom)"
            ))),
        }
    }
}

/// Parse an adjacency spec: one kind, or `dual:<a>+<b>` for a
/// two-stack model.
pub fn parse_adjacency(spec: &str) -> Result<Vec<AdjacencyKind>> {
    if let Some(rest) = spec.strip_prefix("dual:") {
        let parts: Vec<&str> = rest.split('+').collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!(
                "dual adjacency must name exactly two kinds like dual:binary+similarity, got `{spec}`"
            )));
        }
        Ok(vec![AdjacencyKind::parse(parts[0])?, AdjacencyKind::parse(parts[1])?])
    } else {
        Ok(vec![AdjacencyKind::parse(spec)?])
    }
}

/// Read a `node_id,x,y` coordinates CSV (header required).
fn read_coords(path: &Path) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let parse = |field: Option<&str>, what: &str| -> Result<f64> {
            field
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    location: format!("{}:{}", path.display(), i + 2),
                    reason: format!("bad {what} in coordinates row"),
                })
        };
        let id = rec.get(0).unwrap_or("").trim();
        if id.is_empty() {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), i + 2),
                reason: "empty node_id".into(),
            });
        }
        out.insert(id.to_string(), (parse(rec.get(1), "x")?, parse(rec.get(2), "y")?));
    }
    Ok(out)
}

/// Read a wide per-node CSV (`node_id,f_1,...,f_k`, header required).
fn read_node_features(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let width = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .len();
    if width < 2 {
        return Err(Error::Ingestion(format!(
            "{}: per-node feature file needs node_id plus at least one column",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let mut row = Vec::with_capacity(width - 1);
        for j in 1..width {
            let v = rec.get(j).and_then(|f| f.trim().parse::<f64>().ok()).ok_or_else(|| {
                Error::Parse {
                    location: format!("{}:{}", path.display(), i + 2),
                    reason: format!("bad value in column {j}"),
                }
            })?;
            row.push(v);
        }
        out.insert(id, row);
    }
    Ok(out)
}

fn require<'a>(
    path: &'a Option<std::path::PathBuf>,
    flag: &str,
    kind: &str,
) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::Config(format!("adjacency `{kind}` needs {flag}, but none was given"))
    })
}

/// Build one graph of the given kind over exactly `node_ids`.
pub fn build_graph(
    kind: AdjacencyKind,
    node_ids: Vec<String>,
    choice: &GraphChoice,
) -> Result<Graph> {
    match kind {
        AdjacencyKind::Binary => {
            let path = require(&choice.edges, "--edges", "binary")?;
            let edges: Vec<(String, String)> = read_edge_list(path)?
                .into_iter()
                .map(|(a, b, _)| (a, b))
                .collect();
            Graph::build_binary(node_ids, &edges)
        }
        AdjacencyKind::Distance => {
            let path = require(&choice.coords, "--coords", "distance")?;
            let coords = read_coords(path)?;
            let n = node_ids.len();
            let mut pts = Vec::with_capacity(n);
            for id in &node_ids {
                let &(x, y) = coords
                    .get(id)
                    .ok_or_else(|| Error::UnknownNode { id: id.clone() })?;
                pts.push((x, y));
            }
            let mut dist = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                    dist.set(i, j, (dx * dx + dy * dy).sqrt());
                }
            }
            Graph::build_distance(node_ids, &dist, choice.sigma)
        }
        AdjacencyKind::Similarity => {
            let path = require(&choice.infra, "--infra", "similarity")?;
            let feats = read_node_features(path)?;
            let k = feats.values().next().map(Vec::len).unwrap_or(0);
            let mut infra = Mat::zeros(node_ids.len(), k.max(1));
            for (i, id) in node_ids.iter().enumerate() {
                let row = feats
                    .get(id)
                    .ok_or_else(|| Error::UnknownNode { id: id.clone() })?;
                for (j, v) in row.iter().enumerate() {
                    infra.set(i, j, *v);
                }
            }
            let (graph, dropped) = Graph::build_similarity(node_ids, &infra)?;
            if !dropped.is_empty() {
                log::warn!(
                    "similarity adjacency: {} node(s) with zero-norm features are isolated",
                    dropped.len()
                );
            }
            Ok(graph)
        }
        AdjacencyKind::Custom => {
            let path = require(&choice.graph, "--graph", "custom")?;
            let n = node_ids.len();
            let index: BTreeMap<&str, usize> =
                node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let mut w = Mat::zeros(n, n);
            for (a, b, weight) in read_edge_list(path)? {
                let weight = weight.ok_or_else(|| Error::Parse {
                    location: path.display().to_string(),
                    reason: format!("custom adjacency needs a weight on every edge ({a},{b})"),
                })?;
                let ia = *index.get(a.as_str()).ok_or(Error::UnknownNode { id: a })?;
                let ib = *index.get(b.as_str()).ok_or(Error::UnknownNode { id: b })?;
                w.set(ia, ib, weight);
            }
            Graph::from_weights(node_ids, w, GraphKind::Custom)
        }
    }
}

/// Build the full stack named by the adjacency spec over the panel's
/// node set.
pub fn build_graphs(panel: &Panel, choice: &GraphChoice) -> Result<Vec<Graph>> {
    parse_adjacency(&choice.adjacency)?
        .into_iter()
        .map(|kind| build_graph(kind, panel.node_ids().to_vec(), choice))
        .collect()
}

/// Node set for standalone graph building: an explicit one-per-line
/// file, or the sorted union of ids present in the kind's input file.
pub fn standalone_node_ids(
    kind: AdjacencyKind,
    nodes_file: Option<&Path>,
    choice: &GraphChoice,
) -> Result<Vec<String>> {
    if let Some(path) = nodes_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let ids: Vec<String> =
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        if ids.is_empty() {
            return Err(Error::Config(format!("{}: empty node list", path.display())));
        }
        return Ok(ids);
    }
    let mut ids: Vec<String> = match kind {
        AdjacencyKind::Binary => {
            let path = require(&choice.edges, "--edges", "binary")?;
            read_edge_list(path)?.into_iter().flat_map(|(a, b, _)| [a, b]).collect()
        }
        AdjacencyKind::Custom => {
            let path = require(&choice.graph, "--graph", "custom")?;
            read_edge_list(path)?.into_iter().flat_map(|(a, b, _)| [a, b]).collect()
        }
        AdjacencyKind::Distance => {
            let path = require(&choice.coords, "--coords", "distance")?;
            read_coords(path)?.into_keys().collect()
        }
        AdjacencyKind::Similarity => {
            let path = require(&choice.infra, "--infra", "similarity")?;
            read_node_features(path)?.into_keys().collect()
        }
    };
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Config("graph input names no nodes".into()));
    }
    Ok(ids)
}
