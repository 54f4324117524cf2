//! Variable networks and their Laplacians.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SidaError};

/// Undirected weighted edge between two distinct 0-based vertices, stored with
/// `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGraph {
    p: usize,
    edges: Vec<Edge>,
}

impl ViewGraph {
    /// Validates and normalizes an edge list (0-based vertices). An edge listed in
    /// both directions with the same weight is kept once; conflicting duplicates
    /// are an error.
    pub fn new(p: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in edges {
            if e.u >= p || e.v >= p {
                return Err(SidaError::Validation(format!(
                    "edge ({}, {}) outside a graph of {} vertices",
                    e.u + 1,
                    e.v + 1,
                    p
                )));
            }
            if e.u == e.v {
                return Err(SidaError::Validation(format!(
                    "self-loop on vertex {}",
                    e.u + 1
                )));
            }
            if !(e.w.is_finite() && e.w >= 0.0) {
                return Err(SidaError::Validation(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.u + 1,
                    e.v + 1,
                    e.w
                )));
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if let Some(&w) = map.get(&key) {
                if w != e.w {
                    return Err(SidaError::Validation(format!(
                        "edge ({}, {}) listed with conflicting weights {} and {}",
                        key.0 + 1,
                        key.1 + 1,
                        w,
                        e.w
                    )));
                }
            }
            map.insert(key, e.w);
        }
        let edges = map
            .into_iter()
            .map(|((u, v), w)| Edge { u, v, w })
            .collect();
        Ok(Self { p, edges })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: Vec::new(),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weighted degree `r_v = Σ_u w(u, v)`.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.p];
        for e in &self.edges {
            deg[e.u] += e.w;
            deg[e.v] += e.w;
        }
        deg
    }

    /// Star graph on consecutive vertices starting at `hub`, unit weights.
    pub fn add_star(&mut self, hub: usize, spokes: usize) -> Result<()> {
        let mut edges = self.edges.clone();
        edges.extend((1..=spokes).map(|k| Edge {
            u: hub,
            v: hub + k,
            w: 1.0,
        }));
        *self = Self::new(self.p, edges)?;
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# u\tv\tw\n");
        for e in &self.edges {
            out.push_str(&format!("{}\t{}\t{:?}\n", e.u + 1, e.v + 1, e.w));
        }
        out
    }
}

/// Parses a tab-separated edge list `u v w` with 1-based vertices. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_edge_list(text: &str, p: usize) -> Result<ViewGraph> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(SidaError::Parse {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let vertex = |s: &str, column: usize| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(SidaError::NonNumeric {
                    line,
                    column,
                    value: s.to_string(),
                }),
            }
        };
        let u = vertex(fields[0], 1)?;
        let v = vertex(fields[1], 2)?;
        let w = fields[2]
            .parse::<f64>()
            .map_err(|_| SidaError::NonNumeric {
                line,
                column: 3,
                value: fields[2].to_string(),
            })?;
        edges.push(Edge { u, v, w });
    }
    ViewGraph::new(p, edges).map_err(|e| match e {
        SidaError::Validation(m) => SidaError::Validation(format!("edge list: {m}")),
        other => other,
    })
}

pub fn load_edge_list(path: impl AsRef<Path>, p: usize) -> Result<ViewGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    #[default]
    Normalized,
    /// `L = R - W`; makes connected variables share effect sizes.
    Unnormalized,
}

/// Sparse symmetric p x p matrix in triplet form, sorted by (row, col).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianMatrix {
    p: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl LaplacianMatrix {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&(_, _, v)| v == 0.0)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.p, self.p));
        for &(i, j, v) in &self.entries {
            out[[i, j]] += v;
        }
        out
    }

    /// `L G` for a dense p x r matrix.
    pub fn mul(&self, g: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(g.dim());
        for &(i, j, v) in &self.entries {
            let src = g.row(j);
            let mut dst = out.row_mut(i);
            dst.scaled_add(v, &src);
        }
        out
    }

    /// Connected blocks of the sparsity pattern (vertex lists, ascending). Isolated
    /// vertices form singleton blocks.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.p).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j, v) in &self.entries {
            if i != j && v != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.p {
            let root = find(&mut parent, v);
            groups.entry(root).or_default().push(v);
        }
        groups.into_values().collect()
    }
}

pub fn build_laplacian(g: &ViewGraph, kind: LaplacianKind) -> LaplacianMatrix {
    match kind {
        LaplacianKind::Normalized => build_normalized_laplacian(g),
        LaplacianKind::Unnormalized => build_unnormalized_laplacian(g),
    }
}

/// Normalized Laplacian: 1 on the diagonal of vertices with nonzero degree,
/// `-w(u,v) / sqrt(r_u r_v)` between adjacent vertices, 0 elsewhere.
pub fn build_normalized_laplacian(g: &ViewGraph) -> LaplacianMatrix {
    let deg = g.degrees();
    let mut entries = Vec::with_capacity(g.p + 2 * g.edges.len());
    for (v, &r) in deg.iter().enumerate() {
        if r != 0.0 {
            entries.push((v, v, 1.0));
        }
    }
    for e in &g.edges {
        if e.w == 0.0 {
            continue;
        }
        let val = -e.w / (deg[e.u] * deg[e.v]).sqrt();
        entries.push((e.u, e.v, val));
        entries.push((e.v, e.u, val));
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    LaplacianMatrix { p: g.p, entries }
}

pub fn build_unnormalized_laplacian(g: &ViewGraph) -> LaplacianMatrix {
    let deg = g.degrees();
    let mut entries = Vec::with_capacity(g.p + 2 * g.edges.len());
    for (v, &r) in deg.iter().enumerate() {
        if r != 0.0 {
            entries.push((v, v, r));
        }
    }
    for e in &g.edges {
        if e.w != 0.0 {
            entries.push((e.u, e.v, -e.w));
            entries.push((e.v, e.u, -e.w));
        }
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    LaplacianMatrix { p: g.p, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn star(p: usize) -> ViewGraph {
        let mut g = ViewGraph::empty(p);
        g.add_star(0, p - 1).unwrap();
        g
    }

    #[test]
    fn empty_graph_gives_zero() {
        let l = build_normalized_laplacian(&ViewGraph::empty(3));
        assert_eq!(l.to_dense(), Array2::<f64>::zeros((3, 3)));
        assert!(l.is_zero());
    }

    #[test]
    fn single_edge() {
        let g = ViewGraph::new(2, [Edge { u: 0, v: 1, w: 1.0 }]).unwrap();
        let l = build_normalized_laplacian(&g).to_dense();
        assert_eq!(l, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn star_entries() {
        let l = build_normalized_laplacian(&star(4)).to_dense();
        for i in 0..4 {
            assert_eq!(l[[i, i]], 1.0);
        }
        for s in 1..4 {
            assert_abs_diff_eq!(l[[0, s]], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
            assert_abs_diff_eq!(l[[s, 0]], -0.5774, epsilon = 1e-4);
        }
        assert_eq!(l[[1, 2]], 0.0);
    }

    #[test]
    fn unnormalized_variant() {
        let l = build_laplacian(&star(3), LaplacianKind::Unnormalized).to_dense();
        assert_eq!(l, array![[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(ViewGraph::new(3, [Edge { u: 1, v: 1, w: 1.0 }]).is_err());
        assert!(ViewGraph::new(3, [Edge { u: 0, v: 3, w: 1.0 }]).is_err());
        assert!(ViewGraph::new(3, [Edge { u: 0, v: 1, w: -1.0 }]).is_err());
        assert!(ViewGraph::new(
            3,
            [Edge { u: 0, v: 1, w: 1.0 }, Edge { u: 1, v: 0, w: 2.0 }]
        )
        .is_err());
        let g = ViewGraph::new(3, [Edge { u: 0, v: 1, w: 1.0 }, Edge { u: 1, v: 0, w: 1.0 }]).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn parses_edge_list() {
        let g = parse_edge_list("# header\n1\t2\t0.5\n\n2\t3\t1\n", 3).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0], Edge { u: 0, v: 1, w: 0.5 });
        assert!(parse_edge_list("1\t2\n", 3).is_err());
        assert!(parse_edge_list("0\t2\t1\n", 3).is_err());
        assert!(parse_edge_list("1\t1\t1\n", 3).is_err());
        let back = parse_edge_list(&g.to_tsv(), 3).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn sparse_product_matches_dense() {
        let l = build_normalized_laplacian(&star(5));
        let g = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 - 3.0);
        let a = l.mul(g.view());
        let b = l.to_dense().dot(&g);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn components_split_isolated_vertices() {
        let g = ViewGraph::new(5, [Edge { u: 0, v: 2, w: 1.0 }, Edge { u: 3, v: 2, w: 1.0 }]).unwrap();
        let comps = build_normalized_laplacian(&g).components();
        assert_eq!(comps, vec![vec![0, 2, 3], vec![1], vec![4]]);
    }

    #[test]
    fn spectrum_in_unit_interval_for_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.gen_range(1..=30);
            let mut edges = Vec::new();
            for u in 0..p {
                for v in (u + 1)..p {
                    if rng.gen_bool(0.2) {
                        edges.push(Edge { u, v, w: rng.gen_range(0.0..3.0) });
                    }
                }
            }
            let l = build_normalized_laplacian(&ViewGraph::new(p, edges).unwrap()).to_dense();
            let e = sym_eigen(l.view()).unwrap();
            for &ev in e.values.iter() {
                assert!((-1e-9..=2.0 + 1e-9).contains(&ev), "eigenvalue {ev}");
            }
            for i in 0..p {
                let d = l[[i, i]];
                assert!(d == 0.0 || (d > 0.0 && d <= 1.0));
            }
        }
    }
}
