//! Completely positive matrices from graphs.
//!
//! For a graph with incidence matrix `E` (one row per edge, ones at the two
//! endpoints) the Gram matrix `EᵀE` is completely positive. When the graph
//! has no triangle, any nonnegative factorization `BᵀB = EᵀE` has rows
//! supported on at most two vertices, which forces at least one row per
//! edge: the CP-rank equals the number of edges.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::linalg::{is_psd, numerical_rank, Matrix, DEFAULT_TOL};
use crate::network::{Activation, NetworkParams};
use crate::{Error, Result};

/// Simple undirected graph on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for (v, w) in edges {
            if v >= n || w >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({v}, {w}) out of range for {n} vertices"
                )));
            }
            if v == w {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {v}")));
            }
            let e = (v.min(w), v.max(w));
            if !seen.insert(e) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({v}, {w})")));
            }
            norm.push(e);
        }
        Ok(Graph { n, edges: norm })
    }

    /// `K_{m,m}`: vertices `0..m` on one side, `m..2m` on the other.
    pub fn complete_bipartite(m: usize) -> Self {
        let edges = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, m + j)))
            .collect();
        Graph { n: 2 * m, edges }
    }

    pub fn cycle(n: usize) -> Result<Self> {
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)).collect())
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; self.n]; self.n];
        for &(v, w) in &self.edges {
            adj[v][w] = true;
            adj[w][v] = true;
        }
        adj
    }

    /// Parses the edge-list format: a header line `N k` followed by `k`
    /// lines `v w` with 0-based vertex indices. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let nums = parse_pair(header)?;
        let (n, k) = nums;
        let mut edges = Vec::with_capacity(k);
        for line in lines {
            edges.push(parse_pair(line)?);
        }
        if edges.len() != k {
            return Err(Error::Parse(format!(
                "header announces {k} edges, found {}",
                edges.len()
            )));
        }
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.edges.len());
        for (v, w) in &self.edges {
            let _ = writeln!(s, "{v} {w}");
        }
        s
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(|t| {
        t.parse::<usize>()
            .map_err(|_| Error::Parse(format!("expected an integer, got {t:?}")))
    });
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a?, b?)),
        _ => Err(Error::Parse(format!("expected two integers, got {line:?}"))),
    }
}

/// `k × N` edge-vertex incidence matrix.
pub fn incidence_matrix(g: &Graph) -> Matrix {
    let mut e = Matrix::zeros(g.num_edges(), g.num_vertices());
    for (row, &(v, w)) in g.edges().iter().enumerate() {
        e[(row, v)] = 1.0;
        e[(row, w)] = 1.0;
    }
    e
}

/// `EᵀE`: degrees on the diagonal, adjacency off the diagonal.
pub fn graph_gram(g: &Graph) -> Matrix {
    let e = incidence_matrix(g);
    e.transpose() * e
}

/// True iff no three vertices are mutually adjacent. Any clique of three or
/// more vertices contains a triangle.
pub fn is_triangle_free(g: &Graph) -> bool {
    let adj = g.adjacency();
    let n = g.num_vertices();
    for a in 0..n {
        for b in (a + 1)..n {
            if !adj[a][b] {
                continue;
            }
            for c in (b + 1)..n {
                if adj[a][c] && adj[b][c] {
                    return false;
                }
            }
        }
    }
    true
}

/// Recovers the graph `G` with `EᵀE = a` when `a` has that structure:
/// symmetric, off-diagonal entries in `{0, 1}` and diagonal equal to the
/// degree. Entries are compared with absolute tolerance `tol·(1 + max|a|)`.
pub fn graph_from_gram(a: &Matrix, tol: f64) -> Option<Graph> {
    if !a.is_square() || a.nrows() == 0 {
        return None;
    }
    let n = a.nrows();
    let scale = tol * (1.0 + a.amax());
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a[(i, j)];
            if (v - a[(j, i)]).abs() > scale {
                return None;
            }
            if (v - 1.0).abs() <= scale {
                edges.push((i, j));
            } else if v.abs() > scale {
                return None;
            }
        }
    }
    let g = Graph::new(n, edges).ok()?;
    (0..n)
        .all(|v| (a[(v, v)] - g.degree(v) as f64).abs() <= scale)
        .then_some(g)
}

/// Lower bound on the CP-rank of `a`.
///
/// With a triangle-free graph `g` and `a = EᵀE` the bound is exact and
/// equals the number of edges. Otherwise the ordinary rank is returned,
/// which never exceeds the CP-rank.
pub fn cp_rank_lower_bound(a: &Matrix, g: Option<&Graph>) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::Shape("CP-rank needs a square matrix".into()));
    }
    let scale = 1.0 + a.amax();
    if (a - a.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    if a.iter().any(|&v| v < -1e-9 * scale) {
        return Err(Error::InvalidInput("matrix has negative entries".into()));
    }
    if !is_psd(a, 1e-8) {
        return Err(Error::InvalidInput("matrix is not PSD".into()));
    }
    if let Some(g) = g {
        if g.num_vertices() != a.nrows() {
            return Err(Error::Shape(format!(
                "graph has {} vertices, matrix is {}x{}",
                g.num_vertices(),
                a.nrows(),
                a.ncols()
            )));
        }
        let dev = (a - graph_gram(g)).amax();
        if dev > 1e-9 * scale {
            return Err(Error::GraphMismatch(dev));
        }
        if is_triangle_free(g) {
            return Ok(g.num_edges());
        }
    }
    Ok(numerical_rank(a, DEFAULT_TOL))
}

/// `B_N = ((N/2)I, 1; 1, (N/2)I)`, the Gram matrix of `K_{N/2,N/2}`.
pub fn bipartite_matrix(n: usize) -> Result<Matrix> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "bipartite matrix needs an even N >= 2, got {n}"
        )));
    }
    let h = n / 2;
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            h as f64
        } else if (i < h) != (j < h) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Width-`N` ReLU network mapping `X = I_N` to `B_N` with
/// `W₁ = √(N/2)·I` and `W₂ = √(2/N)·EᵀE`; its squared norm is `N² + N`,
/// exactly `N` above the representation cost.
pub fn near_optimal_network(n: usize) -> Result<NetworkParams> {
    let b = bipartite_matrix(n)?;
    let s = (n as f64 / 2.0).sqrt();
    let mut w1 = Matrix::zeros(n, n + 1);
    for i in 0..n {
        w1[(i, i)] = s;
    }
    let mut w2 = Matrix::zeros(n, n + 1);
    w2.columns_mut(0, n).copy_from(&(b / s));
    NetworkParams::new(vec![w1, w2], 0.0, Activation::Relu)
}

/// True when every row of `b` has at most two entries above `tol`.
pub fn rows_have_two_supports(b: &Matrix, tol: f64) -> bool {
    b.row_iter()
        .all(|r| r.iter().filter(|v| v.abs() > tol).count() <= 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incidence_examples() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        assert_eq!(
            incidence_matrix(&g),
            Matrix::from_row_slice(1, 2, &[1.0, 1.0])
        );

        let path = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        assert_eq!(
            incidence_matrix(&path),
            Matrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0])
        );

        let k22 = Graph::complete_bipartite(2);
        let e = incidence_matrix(&k22);
        assert_eq!(e.shape(), (4, 4));
        assert!(e.row_iter().all(|r| r.sum() == 2.0));
        assert_eq!(e.transpose() * e, bipartite_matrix(4).unwrap());
    }

    #[test]
    fn invalid_graphs() {
        assert!(Graph::new(2, vec![(0, 2)]).is_err());
        assert!(Graph::new(2, vec![(1, 1)]).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn triangle_detection() {
        for m in 1..5 {
            assert!(is_triangle_free(&Graph::complete_bipartite(m)));
        }
        let tri = Graph::cycle(3).unwrap();
        assert!(!is_triangle_free(&tri));
        assert!(is_triangle_free(&Graph::cycle(5).unwrap()));
    }

    #[test]
    fn five_cycle_by_triple_enumeration() {
        let g = Graph::cycle(5).unwrap();
        let adj = |a: usize, b: usize| g.edges().contains(&(a.min(b), a.max(b)));
        let mut found = false;
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..5 {
                    if a != b && b != c && a != c && adj(a, b) && adj(b, c) && adj(a, c) {
                        found = true;
                    }
                }
            }
        }
        assert!(!found);
        assert_eq!(is_triangle_free(&g), !found);
    }

    #[test]
    fn bipartite_matrix_examples() {
        assert_eq!(
            bipartite_matrix(2).unwrap(),
            Matrix::from_element(2, 2, 1.0)
        );
        let b4 = Matrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0, 0.0, 2.0,
            ],
        );
        assert_eq!(bipartite_matrix(4).unwrap(), b4);
        for n in [2usize, 4, 6, 8, 10] {
            let b = bipartite_matrix(n).unwrap();
            assert_eq!(b.trace(), (n * n) as f64 / 2.0);
            assert_eq!(b, graph_gram(&Graph::complete_bipartite(n / 2)));
        }
        assert!(bipartite_matrix(5).is_err());
        assert!(bipartite_matrix(0).is_err());
    }

    #[test]
    fn cp_rank_of_bipartite_matrices() {
        for n in [2usize, 4, 6, 8] {
            let g = Graph::complete_bipartite(n / 2);
            let b = bipartite_matrix(n).unwrap();
            assert_eq!(cp_rank_lower_bound(&b, Some(&g)).unwrap(), n * n / 4);
        }
    }

    #[test]
    fn cp_rank_generic_path() {
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0, 3.0]));
        assert_eq!(cp_rank_lower_bound(&d, None).unwrap(), 2);
    }

    #[test]
    fn cp_rank_mismatch() {
        let g = Graph::complete_bipartite(2);
        let wrong = Matrix::identity(4, 4);
        assert!(matches!(
            cp_rank_lower_bound(&wrong, Some(&g)),
            Err(Error::GraphMismatch(_))
        ));
    }

    #[test]
    fn gram_structure_on_random_triangle_free_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.random_range(2..=12);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random_bool(0.3) {
                        edges.push((a, b));
                    }
                }
            }
            let g = Graph::new(n, edges).unwrap();
            if !is_triangle_free(&g) {
                continue;
            }
            checked += 1;
            let a = graph_gram(&g);
            let adj = g.adjacency();
            for v in 0..n {
                assert_eq!(a[(v, v)], g.degree(v) as f64);
                for w in 0..n {
                    if v != w {
                        assert_eq!(a[(v, w)], if adj[v][w] { 1.0 } else { 0.0 });
                    }
                }
            }
            assert_eq!(graph_from_gram(&a, 1e-9), Some(g.clone()));
            assert_eq!(cp_rank_lower_bound(&a, Some(&g)).unwrap(), g.num_edges());
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::complete_bipartite(3);
        let text = g.to_edge_list();
        assert!(text.starts_with("6 9\n"));
        assert_eq!(Graph::parse_edge_list(&text).unwrap(), g);
        assert!(Graph::parse_edge_list("3 2\n0 1\n").is_err());
        assert!(Graph::parse_edge_list("3 1\n0 x\n").is_err());
    }

    #[test]
    fn near_optimal_network_for_small_n() {
        for n in [2usize, 4, 6, 8] {
            let net = near_optimal_network(n).unwrap();
            let nn = (n * n + n) as f64;
            assert!((net.norm_sq() - nn).abs() < 1e-12 * nn);
            let out = net.forward(&Matrix::identity(n, n)).unwrap();
            assert!((out.output() - bipartite_matrix(n).unwrap()).amax() < 1e-12);
        }
        assert!((near_optimal_network(4).unwrap().norm_sq() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn incidence_rows_have_two_supports() {
        let e = incidence_matrix(&Graph::complete_bipartite(3));
        assert!(rows_have_two_supports(&e, 1e-12));
        assert!(!rows_have_two_supports(
            &Matrix::from_element(1, 3, 1.0),
            1e-12
        ));
    }
}
