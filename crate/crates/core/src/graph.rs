//! KNN affinity graph over feature vectors and patch restriction.
//!
//! Edges carry the cosine similarity of their endpoints. Each vertex selects
//! its `K` most similar vertices (ties to the lower index) and the directed
//! selection is symmetrized by union, so a vertex ends up with between `K`
//! and `2K` neighbors. Self-loops are never stored.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major sample features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "feature matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::Dimension(format!(
                "expected {} feature values, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.dim,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Text format: `N d` header, then one whitespace-separated row per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.dim)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty feature file".into()))??;
        let (rows, dim) = parse_pair(&header, 1)?;
        let mut values = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("feature file ends before row {i}")))??;
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| {
                    Error::Data(format!("line {}: bad number {tok:?}: {e}", i + 2))
                })?);
            }
            if values.len() - before != dim {
                return Err(Error::Data(format!(
                    "line {}: expected {dim} values, got {}",
                    i + 2,
                    values.len() - before
                )));
            }
        }
        Self::new(rows, dim, values)
    }
}

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(Error::Data(format!(
            "line {lineno}: expected two counts, got {line:?}"
        )));
    }
    let a = toks[0]
        .parse()
        .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
    let b = toks[1]
        .parse()
        .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
    Ok((a, b))
}

/// Cosine similarity between two raw rows.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Sparse symmetric affinity graph. Adjacency lists are sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl AffinityGraph {
    /// Builds a graph from an undirected edge list; duplicates keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {n} vertices"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-edge at vertex {i}")));
            }
            if !w.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite weight on ({i}, {j})")));
            }
            maps[i].insert(j, w);
            maps[j].insert(i, w);
        }
        let adjacency = maps
            .into_iter()
            .map(|m| {
                let mut v: Vec<(usize, f64)> = m.into_iter().collect();
                v.sort_by_key(|&(j, _)| j);
                v
            })
            .collect();
        Ok(Self { adjacency })
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Edge weight, zero when the edge is absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let adj = &self.adjacency[i];
        adj.binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| adj[pos].1)
            .unwrap_or(0.0)
    }

    /// Undirected edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, adj)| {
            adj.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    /// Text format: `N E` header, then `i j w` per edge with `i < j`.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.num_vertices(), self.num_edges())?;
        for (i, j, wt) in self.edges() {
            writeln!(w, "{i} {j} {wt:.8e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty graph file".into()))??;
        let (n, e) = parse_pair(&header, 1)?;
        let mut edges = Vec::with_capacity(e);
        for k in 0..e {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("graph file ends before edge {k}")))??;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::Data(format!("line {}: expected `i j w`", k + 2)));
            }
            let bad = |e: &dyn std::fmt::Display| Error::Data(format!("line {}: {e}", k + 2));
            let i: usize = toks[0].parse().map_err(|e| bad(&e))?;
            let j: usize = toks[1].parse().map_err(|e| bad(&e))?;
            let w: f64 = toks[2].parse().map_err(|e| bad(&e))?;
            edges.push((i, j, w));
        }
        Self::from_edges(n, &edges)
    }
}

/// Exact brute-force KNN graph with cosine weights, symmetrized by union.
pub fn build_knn_graph(features: &FeatureMatrix, k: usize) -> Result<AffinityGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| features.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let zero: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroNormRows { rows: zero });
    }
    let dim = features.dim();
    let norms = &norms;
    let unit: Vec<f64> = (0..n)
        .flat_map(|i| features.row(i).iter().map(move |x| x / norms[i]))
        .collect();
    let unit_row = |i: usize| &unit[i * dim..(i + 1) * dim];

    let selected: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = unit_row(i);
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(xi, unit_row(j))))
                .collect();
            let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
                b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
            };
            sims.select_nth_unstable_by(k - 1, by_rank);
            sims.truncate(k);
            sims.sort_by(by_rank);
            sims
        })
        .collect();

    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in selected.iter().enumerate() {
        for &(j, w) in row {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }
    for adj in &mut adjacency {
        adj.sort_by_key(|&(j, _)| j);
        adj.dedup_by_key(|&mut (j, _)| j);
    }
    Ok(AffinityGraph { adjacency })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Vertex subset with the adjacency restricted to it, in local indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPatch {
    vertex_ids: Vec<usize>,
    start_vertex: usize,
    local: Vec<Vec<(usize, f64)>>,
}

impl GraphPatch {
    pub fn vertex_ids(&self) -> &[usize] {
        &self.vertex_ids
    }

    pub fn start_vertex(&self) -> usize {
        self.start_vertex
    }

    pub fn len(&self) -> usize {
        self.vertex_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_ids.is_empty()
    }

    /// Restricted neighbors of local vertex `i` as `(local index, weight)`.
    pub fn local_neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.local[i]
    }

    pub fn local_weight(&self, i: usize, j: usize) -> f64 {
        self.local[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn num_internal_edges(&self) -> usize {
        self.local.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn contains(&self, v: usize) -> bool {
        self.vertex_ids.contains(&v)
    }
}

/// Restricts `graph` to `vertex_ids`, keeping their order as the local order.
pub fn restrict(graph: &AffinityGraph, vertex_ids: &[usize], start: usize) -> Result<GraphPatch> {
    let n = graph.num_vertices();
    let mut position = HashMap::with_capacity(vertex_ids.len());
    for (local, &v) in vertex_ids.iter().enumerate() {
        if v >= n {
            return Err(Error::InvalidInput(format!(
                "vertex {v} out of range for {n} vertices"
            )));
        }
        if position.insert(v, local).is_some() {
            return Err(Error::InvalidInput(format!("duplicate vertex {v} in patch")));
        }
    }
    if !position.contains_key(&start) {
        return Err(Error::InvalidInput(format!(
            "start vertex {start} is not in the patch"
        )));
    }
    let local = vertex_ids
        .iter()
        .map(|&v| {
            let mut row: Vec<(usize, f64)> = graph
                .neighbors(v)
                .iter()
                .filter_map(|&(u, w)| position.get(&u).map(|&lu| (lu, w)))
                .collect();
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect();
    Ok(GraphPatch {
        vertex_ids: vertex_ids.to_vec(),
        start_vertex: start,
        local,
    })
}
