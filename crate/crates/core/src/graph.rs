//! Street-network graphs: adjacency construction, row-stochastic
//! transition matrices, Chebyshev polynomial application, and classic
//! connectivity measures.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::par;

/// How a graph's weights were constructed; fixes the diagonal policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// 0/1 intersection adjacency; zero diagonal.
    Binary,
    /// Gaussian-kernel distance weights in (0,1]; unit diagonal.
    Distance,
    /// Clamped cosine similarity of infrastructure features; unit diagonal.
    Similarity,
    /// Anything loaded from an external weighted edge list.
    Custom,
}

/// A weighted graph over an ordered, stable node set.
#[derive(Debug, Clone)]
pub struct Graph {
    node_ids: Vec<String>,
    w: Mat,
    kind: GraphKind,
    directed: bool,
}

/// Row-stochastic forward/backward transition matrices derived from one
/// adjacency matrix.
#[derive(Debug, Clone)]
pub struct TransitionPair {
    pub wf: Mat,
    pub wb: Mat,
}

/// Column order of the matrix returned by [`Graph::connectivity`].
pub const CONNECTIVITY_COLUMNS: [&str; 4] =
    ["degree", "betweenness", "closeness", "clustering"];

fn index_nodes(node_ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(node_ids.len());
    for (i, id) in node_ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::Ingestion(format!("duplicate node id `{id}`")));
        }
    }
    Ok(index)
}

impl Graph {
    /// Binary intersection adjacency: `w_ij = 1` iff the pair appears in
    /// the edge list (either orientation). Symmetric, zero diagonal,
    /// duplicate edges are idempotent.
    pub fn build_binary(node_ids: Vec<String>, edges: &[(String, String)]) -> Result<Graph> {
        let index = index_nodes(&node_ids)?;
        let n = node_ids.len();
        let mut w = Mat::zeros(n, n);
        for (a, b) in edges {
            let ia = *index
                .get(a)
                .ok_or_else(|| Error::UnknownNode { id: a.clone() })?;
            let ib = *index
                .get(b)
                .ok_or_else(|| Error::UnknownNode { id: b.clone() })?;
            if ia == ib {
                continue; // self-edges carry no intersection information
            }
            w.set(ia, ib, 1.0);
            w.set(ib, ia, 1.0);
        }
        Ok(Graph { node_ids, w, kind: GraphKind::Binary, directed: false })
    }

    /// Gaussian distance weights `w_ij = exp(−(d_ij/σ)²)`, unit diagonal.
    ///
    /// `sigma` defaults to the standard deviation of all off-diagonal
    /// pairwise distances.
    pub fn build_distance(node_ids: Vec<String>, dist: &Mat, sigma: Option<f64>) -> Result<Graph> {
        index_nodes(&node_ids)?;
        let n = node_ids.len();
        if dist.shape() != (n, n) {
            return Err(Error::Dimension {
                op: "build_distance",
                left: format!("{n}x{n}"),
                right: dist.shape_str(),
            });
        }
        if let Some(i) = dist.as_slice().iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NumericDomain {
                op: "build_distance",
                index: i,
                value: dist.as_slice()[i],
            });
        }
        let sigma = match sigma {
            Some(s) if s > 0.0 => s,
            Some(s) => {
                return Err(Error::Parameter {
                    name: "sigma",
                    reason: format!("must be positive, got {s}"),
                })
            }
            None => {
                let mut offdiag = Vec::with_capacity(n * n - n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            offdiag.push(dist.get(i, j));
                        }
                    }
                }
                let s = population_std(&offdiag);
                if !(s > 0.0) {
                    return Err(Error::Parameter {
                        name: "sigma",
                        reason: "cannot be inferred: pairwise distances have zero spread"
                            .into(),
                    });
                }
                s
            }
        };
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    1.0
                } else {
                    let r = dist.get(i, j) / sigma;
                    (-(r * r)).exp()
                };
                w.set(i, j, v);
            }
        }
        let directed = !is_symmetric(&w);
        Ok(Graph { node_ids, w, kind: GraphKind::Distance, directed })
    }

    /// Cosine similarity of per-node infrastructure feature rows, clamped
    /// to [0,1]; unit diagonal. Rows with zero norm get all similarities
    /// (including the diagonal) set to 0 and are reported back.
    pub fn build_similarity(node_ids: Vec<String>, infra: &Mat) -> Result<(Graph, Vec<usize>)> {
        index_nodes(&node_ids)?;
        let n = node_ids.len();
        if infra.rows() != n {
            return Err(Error::Dimension {
                op: "build_similarity",
                left: format!("{n} nodes"),
                right: format!("{} feature rows", infra.rows()),
            });
        }
        let norms: Vec<f64> = (0..n)
            .map(|i| infra.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let zero_rows: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
        for &i in &zero_rows {
            log::warn!(
                "similarity graph: node `{}` has a zero-norm feature row; its edges are dropped",
                node_ids[i]
            );
        }
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            if norms[i] == 0.0 {
                continue;
            }
            w.set(i, i, 1.0);
            for j in (i + 1)..n {
                if norms[j] == 0.0 {
                    continue;
                }
                let dot: f64 = infra.row(i).iter().zip(infra.row(j)).map(|(a, b)| a * b).sum();
                let cos = (dot / (norms[i] * norms[j])).clamp(0.0, 1.0);
                w.set(i, j, cos);
                w.set(j, i, cos);
            }
        }
        Ok((
            Graph { node_ids, w, kind: GraphKind::Similarity, directed: false },
            zero_rows,
        ))
    }

    /// A graph from an explicit weight matrix (external weighted edge
    /// lists, deserialized graphs).
    pub fn from_weights(node_ids: Vec<String>, w: Mat, kind: GraphKind) -> Result<Graph> {
        index_nodes(&node_ids)?;
        let n = node_ids.len();
        if w.shape() != (n, n) {
            return Err(Error::Dimension {
                op: "from_weights",
                left: format!("{n}x{n}"),
                right: w.shape_str(),
            });
        }
        if let Some(i) = w.as_slice().iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NumericDomain {
                op: "from_weights",
                index: i,
                value: w.as_slice()[i],
            });
        }
        let directed = !is_symmetric(&w);
        Ok(Graph { node_ids, w, kind, directed })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn weights(&self) -> &Mat {
        &self.w
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.node_ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownNode { id: id.to_string() })
    }

    /// Row/column slice in the given order. Node ids must be known and
    /// unique.
    pub fn subgraph(&self, ids: &[String]) -> Result<Graph> {
        let idx: Vec<usize> = ids.iter().map(|id| self.index_of(id)).collect::<Result<_>>()?;
        index_nodes(ids)?;
        Ok(Graph {
            node_ids: ids.to_vec(),
            w: slice_square(&self.w, &idx),
            kind: self.kind,
            directed: self.directed,
        })
    }

    /// Row/column slice by position, used on the sampling hot path.
    pub fn subgraph_by_index(&self, idx: &[usize]) -> Graph {
        debug_assert!(idx.iter().all(|&i| i < self.n()));
        Graph {
            node_ids: idx.iter().map(|&i| self.node_ids[i].clone()).collect(),
            w: slice_square(&self.w, idx),
            kind: self.kind,
            directed: self.directed,
        }
    }

    /// Forward / backward row-stochastic transitions. Rows with zero
    /// out-degree become unit self-loops, so every row sums to exactly 1.
    pub fn transitions(&self) -> TransitionPair {
        TransitionPair {
            wf: row_normalize(&self.w),
            wb: row_normalize(&self.w.transpose()),
        }
    }

    /// Per-node connectivity features as an n×4 matrix with columns
    /// [`CONNECTIVITY_COLUMNS`]. Weighted input is binarized at `w > 0`
    /// and treated as undirected.
    pub fn connectivity(&self) -> Mat {
        let n = self.n();
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && (self.w.get(i, j) > 0.0 || self.w.get(j, i) > 0.0))
                    .collect()
            })
            .collect();
        let betweenness = betweenness_all(&adj);

        let mut out = Mat::zeros(n, 4);
        for i in 0..n {
            let deg = adj[i].len();
            out.set(i, 0, deg as f64);
            out.set(i, 1, betweenness[i]);

            // Closeness: (n−1) / Σ shortest-path distances (reachable only).
            let dist = bfs_distances(&adj, i);
            let total: u64 = dist.iter().filter_map(|&d| d).map(|d| d as u64).sum();
            out.set(i, 2, if total > 0 { (n as f64 - 1.0) / total as f64 } else { 0.0 });

            // Clustering: share of neighbor pairs that are themselves linked.
            let clustering = if deg < 2 {
                0.0
            } else {
                let mut triangles = 0usize;
                for (a, &u) in adj[i].iter().enumerate() {
                    for &v in &adj[i][a + 1..] {
                        if adj[u].contains(&v) {
                            triangles += 1;
                        }
                    }
                }
                2.0 * triangles as f64 / (deg as f64 * (deg as f64 - 1.0))
            };
            out.set(i, 3, clustering);
        }
        out
    }
}

fn is_symmetric(w: &Mat) -> bool {
    let n = w.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if w.get(i, j) != w.get(j, i) {
                return false;
            }
        }
    }
    true
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn slice_square(w: &Mat, idx: &[usize]) -> Mat {
    let m = idx.len();
    let mut out = Mat::zeros(m, m);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out.set(r, c, w.get(i, j));
        }
    }
    out
}

/// Row-normalize a non-negative matrix; zero rows become unit self-loops.
pub fn row_normalize(w: &Mat) -> Mat {
    let n = w.rows();
    let mut out = w.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            row.fill(0.0);
            row[i] = 1.0;
        } else {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    out
}

/// Apply Chebyshev polynomials of `m` to `h`: returns `[T_1(M)·H …
/// T_K(M)·H]` via the recurrence `T_1 = M·H`, `T_k = 2M·T_{k−1} − T_{k−2}`
/// (with `T_0 = H`), differentiable with respect to `h`.
pub fn chebyshev_apply(m: &Tensor, h: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    if k < 1 {
        return Err(Error::Parameter {
            name: "chebyshev order K",
            reason: "must be at least 1".into(),
        });
    }
    let mut terms = Vec::with_capacity(k);
    terms.push(m.matmul(h)?); // T_1
    if k >= 2 {
        let t2 = m.matmul(&terms[0])?.mul_scalar(2.0).sub(h)?;
        terms.push(t2);
    }
    for i in 2..k {
        let next = m
            .matmul(&terms[i - 1])?
            .mul_scalar(2.0)
            .sub(&terms[i - 2])?;
        terms.push(next);
    }
    Ok(terms)
}

/// Unweighted BFS distances from `src`; `None` marks unreachable nodes
/// (and the source itself is `Some(0)` but excluded by callers via d=0).
fn bfs_distances(adj: &[Vec<usize>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(v) = queue.pop_front() {
        let dv = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(dv + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Exact betweenness centrality over unordered pairs (unnormalized),
/// by Brandes' dependency accumulation, one BFS per source. Sources are
/// independent, so the accumulation is distributed and then reduced in
/// fixed source order.
fn betweenness_all(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let per_source: Vec<Vec<f64>> = par::map_indexed(n, |s| {
        let mut order = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist: Vec<i64> = vec![-1; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; n];
        let mut contrib = vec![0.0f64; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                contrib[w] += delta[w];
            }
        }
        contrib
    });
    let mut bc = vec![0.0f64; n];
    for contrib in &per_source {
        for (b, &c) in bc.iter_mut().zip(contrib) {
            *b += c;
        }
    }
    // Each unordered pair was counted from both endpoints.
    for b in &mut bc {
        *b /= 2.0;
    }
    bc
}

// ---------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------

/// Read an edge list: one `src,dst[,weight]` record per line, header
/// optional (recognized by the usual column names).
pub fn read_edge_list(path: &Path) -> Result<Vec<(String, String, Option<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && looks_like_edge_header(&fields) {
            continue;
        }
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                reason: format!("expected `src,dst[,weight]`, got {} fields", fields.len()),
            });
        }
        let weight = match fields.get(2) {
            Some(f) => Some(f.parse::<f64>().map_err(|_| Error::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                reason: format!("non-numeric weight `{f}`"),
            })?),
            None => None,
        };
        edges.push((fields[0].to_string(), fields[1].to_string(), weight));
    }
    Ok(edges)
}

fn looks_like_edge_header(fields: &[&str]) -> bool {
    const NAMES: [&str; 7] = ["src", "source", "dst", "dest", "dst_id", "target", "weight"];
    fields.len() >= 2
        && fields
            .iter()
            .all(|f| NAMES.contains(&f.to_ascii_lowercase().as_str()))
}

/// Write a graph as an edge list (`src,dst,weight` with header). For
/// undirected graphs each edge is emitted once.
pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::from("src,dst,weight\n");
    let n = g.n();
    for i in 0..n {
        let j0 = if g.directed { 0 } else { i + 1 };
        for j in j0..n {
            let w = g.w.get(i, j);
            if j != i && w > 0.0 {
                out.push_str(&format!("{},{},{}\n", g.node_ids[i], g.node_ids[j], w));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a square matrix CSV with a node id in the first column; optional
/// header. Column order must follow row order.
pub fn read_node_matrix_csv(path: &Path) -> Result<(Vec<String>, Mat)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields[1..].iter().any(|f| f.parse::<f64>().is_err()) {
            continue; // header row
        }
        let mut row = Vec::with_capacity(fields.len() - 1);
        for f in &fields[1..] {
            row.push(f.parse::<f64>().map_err(|_| Error::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                reason: format!("non-numeric cell `{f}`"),
            })?);
        }
        ids.push(fields[0].to_string());
        rows.push(row);
    }
    let mat = Mat::from_rows(&rows)?;
    Ok((ids, mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use approx::assert_abs_diff_eq;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    fn path3() -> Graph {
        Graph::build_binary(ids(&["A", "B", "C"]), &[edge("A", "B"), edge("B", "C")]).unwrap()
    }

    #[test]
    fn binary_path_graph() {
        let g = path3();
        let w = g.weights();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        assert_eq!(w.get(1, 2), 1.0);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(0, 0), 0.0);
    }

    #[test]
    fn binary_duplicate_edges_idempotent() {
        let g = Graph::build_binary(
            ids(&["A", "B"]),
            &[edge("A", "B"), edge("B", "A"), edge("A", "B")],
        )
        .unwrap();
        assert_eq!(g.weights().get(0, 1), 1.0);
        assert_eq!(g.weights().get(1, 0), 1.0);
    }

    #[test]
    fn binary_unknown_endpoint_errors() {
        let err = Graph::build_binary(ids(&["A"]), &[edge("A", "Z")]).unwrap_err();
        assert!(matches!(err, Error::UnknownNode { id } if id == "Z"));
    }

    #[test]
    fn distance_weights_known_values() {
        let d = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let g = Graph::build_distance(ids(&["A", "B"]), &d, Some(2.0)).unwrap();
        assert_abs_diff_eq!(g.weights().get(0, 1), (-1.0_f64).exp(), epsilon = 1e-15);
        assert_eq!(g.weights().get(0, 0), 1.0);
    }

    #[test]
    fn distance_monotone_in_distance() {
        let d = Mat::from_rows(&[
            vec![0.0, 1.0, 4.0],
            vec![1.0, 0.0, 2.0],
            vec![4.0, 2.0, 0.0],
        ])
        .unwrap();
        let g = Graph::build_distance(ids(&["A", "B", "C"]), &d, Some(1.5)).unwrap();
        let w = g.weights();
        assert!(w.get(0, 1) > w.get(1, 2));
        assert!(w.get(1, 2) > w.get(0, 2));
    }

    #[test]
    fn distance_rejects_nonpositive_sigma() {
        let d = Mat::zeros(2, 2);
        let err = Graph::build_distance(ids(&["A", "B"]), &d, Some(0.0)).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "sigma", .. }));
    }

    #[test]
    fn distance_default_sigma_is_pairwise_std() {
        let d = Mat::from_rows(&[vec![0.0, 1.0], vec![3.0, 0.0]]).unwrap();
        // Off-diagonal distances {1,3}: mean 2, population std 1.
        let g = Graph::build_distance(ids(&["A", "B"]), &d, None).unwrap();
        assert_abs_diff_eq!(g.weights().get(0, 1), (-1.0_f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(g.weights().get(1, 0), (-9.0_f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn similarity_known_cosines() {
        let infra = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (g, flagged) = Graph::build_similarity(ids(&["A", "B", "C"]), &infra).unwrap();
        assert!(flagged.is_empty());
        assert_eq!(g.weights().get(0, 1), 0.0); // orthogonal
        assert_abs_diff_eq!(g.weights().get(0, 2), 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_eq!(g.weights().get(0, 0), 1.0);
    }

    #[test]
    fn similarity_zero_norm_row_flagged_and_zeroed() {
        let infra = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let (g, flagged) = Graph::build_similarity(ids(&["A", "B"]), &infra).unwrap();
        assert_eq!(flagged, vec![1]);
        assert_eq!(g.weights().get(1, 0), 0.0);
        assert_eq!(g.weights().get(0, 1), 0.0);
        assert_eq!(g.weights().get(1, 1), 0.0);
    }

    #[test]
    fn similarity_clamps_negative_cosine_to_zero() {
        let infra = Mat::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let (g, _) = Graph::build_similarity(ids(&["A", "B"]), &infra).unwrap();
        assert_eq!(g.weights().get(0, 1), 0.0);
    }

    #[test]
    fn transitions_rows_sum_to_one_even_after_slicing() {
        let g = path3();
        for sub in [vec!["A", "B", "C"], vec!["A", "C"], vec!["B"]] {
            let sliced = g.subgraph(&ids(&sub)).unwrap();
            let t = sliced.transitions();
            for m in [&t.wf, &t.wb] {
                for i in 0..m.rows() {
                    let s: f64 = m.row(i).iter().sum();
                    assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn transitions_symmetric_graph_has_wf_equal_wb() {
        let g = path3();
        let t = g.transitions();
        assert_eq!(t.wf, t.wb);
    }

    #[test]
    fn transitions_isolated_node_gets_self_loop() {
        let g = Graph::build_binary(ids(&["A", "B", "C"]), &[edge("A", "B")]).unwrap();
        let t = g.transitions();
        assert_eq!(t.wf.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn subgraph_is_order_respecting_slice() {
        let g = path3();
        let full = g.subgraph(&ids(&["A", "B", "C"])).unwrap();
        assert_eq!(full.weights(), g.weights());

        let ac = g.subgraph(&ids(&["A", "C"])).unwrap();
        assert_eq!(ac.weights().as_slice(), &[0.0, 0.0, 0.0, 0.0]);

        let rev = g.subgraph(&ids(&["C", "B"])).unwrap();
        assert_eq!(rev.node_ids(), &["C".to_string(), "B".to_string()]);
        assert_eq!(rev.weights().get(0, 1), 1.0);
    }

    #[test]
    fn subgraph_composes() {
        let g = path3();
        let once = g.subgraph(&ids(&["C", "B", "A"])).unwrap();
        let twice = once.subgraph(&ids(&["C", "A"])).unwrap();
        let direct = g.subgraph(&ids(&["C", "A"])).unwrap();
        assert_eq!(twice.weights(), direct.weights());
    }

    #[test]
    fn chebyshev_k1_is_plain_product() {
        let tape = Tape::new();
        let m = tape.constant(Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let h = tape.leaf(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let terms = chebyshev_apply(&m, &h, 1).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].value().as_slice(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn chebyshev_identity_matrix_fixes_h() {
        let tape = Tape::new();
        let m = tape.constant(Mat::eye(3));
        let h = tape.leaf(Mat::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]).unwrap());
        let terms = chebyshev_apply(&m, &h, 3).unwrap();
        for t in terms {
            assert_eq!(t.value().as_slice(), h.value().as_slice());
        }
    }

    #[test]
    fn chebyshev_rejects_zero_order() {
        let tape = Tape::new();
        let m = tape.constant(Mat::eye(2));
        let h = tape.leaf(Mat::zeros(2, 1));
        assert!(chebyshev_apply(&m, &h, 0).is_err());
    }

    /// Brute-force oracle: explicit polynomial matrices P_k(M) via the
    /// same recurrence on matrices, over every undirected binary graph
    /// with n ≤ 5 and K ≤ 4.
    #[test]
    fn chebyshev_matches_direct_polynomial_on_all_small_graphs() {
        for n in 1..=5usize {
            let pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
            for mask in 0..(1u32 << pairs.len()) {
                let mut w = Mat::zeros(n, n);
                for (b, &(i, j)) in pairs.iter().enumerate() {
                    if mask & (1 << b) != 0 {
                        w.set(i, j, 1.0);
                        w.set(j, i, 1.0);
                    }
                }
                let m = row_normalize(&w);
                let h = Mat::from_vec(
                    n,
                    2,
                    (0..2 * n).map(|i| (i as f64 * 0.37) - 1.1).collect(),
                )
                .unwrap();

                let tape = Tape::new();
                let mt = tape.constant(m.clone());
                let ht = tape.leaf(h.clone());
                let terms = chebyshev_apply(&mt, &ht, 4).unwrap();

                // Direct construction: P_0 = I, P_1 = M, P_k = 2M·P_{k−1} − P_{k−2}.
                let mut p_prev = Mat::eye(n);
                let mut p_cur = m.clone();
                for term in terms.iter() {
                    let expect = p_cur.matmul(&h).unwrap();
                    let got = term.value();
                    for (a, b) in got.as_slice().iter().zip(expect.as_slice()) {
                        assert!((a - b).abs() <= 1e-10, "n={n} mask={mask}: {a} vs {b}");
                    }
                    let mut next = m.matmul(&p_cur).unwrap().map(|v| 2.0 * v);
                    for (o, &b) in next.as_mut_slice().iter_mut().zip(p_prev.as_slice()) {
                        *o -= b;
                    }
                    p_prev = p_cur;
                    p_cur = next;
                }
            }
        }
    }

    #[test]
    fn connectivity_path3_hand_values() {
        let g = path3();
        let c = g.connectivity();
        // B: degree 2, betweenness 1 (pair A–C), closeness (3−1)/(1+1)=1.
        assert_eq!(c.get(1, 0), 2.0);
        assert_abs_diff_eq!(c.get(1, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(1, 2), 1.0, epsilon = 1e-12);
        assert_eq!(c.get(1, 3), 0.0);
        // A: degree 1, betweenness 0, closeness 2/3.
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_abs_diff_eq!(c.get(0, 2), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn connectivity_triangle_hand_values() {
        let g = Graph::build_binary(
            ids(&["A", "B", "C"]),
            &[edge("A", "B"), edge("B", "C"), edge("C", "A")],
        )
        .unwrap();
        let c = g.connectivity();
        for i in 0..3 {
            assert_eq!(c.get(i, 0), 2.0);
            assert_eq!(c.get(i, 1), 0.0);
            assert_abs_diff_eq!(c.get(i, 2), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c.get(i, 3), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn connectivity_k4_hand_values() {
        let nodes = ids(&["A", "B", "C", "D"]);
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                edges.push((nodes[i].clone(), nodes[j].clone()));
            }
        }
        let g = Graph::build_binary(nodes, &edges).unwrap();
        let c = g.connectivity();
        for i in 0..4 {
            assert_eq!(c.get(i, 0), 3.0);
            assert_eq!(c.get(i, 1), 0.0);
            assert_abs_diff_eq!(c.get(i, 3), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn connectivity_isolated_node_zeroes() {
        let g = Graph::build_binary(ids(&["A", "B", "C"]), &[edge("A", "B")]).unwrap();
        let c = g.connectivity();
        assert_eq!(c.row(2), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        let g = path3();
        write_edge_list(&g, &path).unwrap();
        let edges = read_edge_list(&path).unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!(edges[0].0, "A");
        assert_eq!(edges[0].2, Some(1.0));
    }

    #[test]
    fn edge_list_rejects_bad_weight() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        std::fs::write(&path, "A,B,notanumber\n").unwrap();
        let err = read_edge_list(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
