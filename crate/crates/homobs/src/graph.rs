//! Communication topology of the observer network.
//!
//! Nodes exchange state estimates over a weighted directed graph. An edge
//! carries the estimate of `sender` to `receiver`; the consensus term at a
//! node weighs the difference to each in-neighbor by the edge weight. All
//! stability machinery assumes the digraph is strongly connected, which
//! guarantees a unique positive left null vector of the Laplacian and makes
//! the consensus-complement reduction below well defined.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge references node {node} but the graph has {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("duplicate edge from sender {sender} to receiver {receiver}")]
    DuplicateEdge { receiver: usize, sender: usize },
    #[error("edge weights must be finite and positive, got {0}")]
    BadWeight(f64),
    #[error("the communication graph is not strongly connected")]
    NotStronglyConnected,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One directed communication link: `receiver` hears `sender`'s estimate
/// and weighs the disagreement by `weight`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
    pub weight: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    nodes: usize,
    edges: Vec<Edge>,
}

/// Validated directed communication graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct Topology {
    nodes: usize,
    edges: Vec<Edge>,
}

impl TryFrom<RawTopology> for Topology {
    type Error = GraphError;

    fn try_from(raw: RawTopology) -> Result<Self, Self::Error> {
        Topology::new(raw.nodes, raw.edges)
    }
}

impl From<Topology> for RawTopology {
    fn from(t: Topology) -> Self {
        RawTopology {
            nodes: t.nodes,
            edges: t.edges,
        }
    }
}

impl Topology {
    pub fn new(nodes: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            for node in [e.receiver, e.sender] {
                if node >= nodes {
                    return Err(GraphError::NodeOutOfRange { node, nodes });
                }
            }
            if e.receiver == e.sender {
                return Err(GraphError::SelfLoop(e.receiver));
            }
            if !e.weight.is_finite() || e.weight <= 0.0 {
                return Err(GraphError::BadWeight(e.weight));
            }
            if !seen.insert((e.receiver, e.sender)) {
                return Err(GraphError::DuplicateEdge {
                    receiver: e.receiver,
                    sender: e.sender,
                });
            }
        }
        Ok(Topology { nodes, edges })
    }

    /// Unit-weight directed ring where node `i` receives from node
    /// `(i + 1) mod n`.
    pub fn ring(nodes: usize) -> Result<Self, GraphError> {
        if nodes == 0 {
            return Err(GraphError::Empty);
        }
        if nodes == 1 {
            return Topology::new(1, vec![]);
        }
        let edges = (0..nodes)
            .map(|i| Edge {
                receiver: i,
                sender: (i + 1) % nodes,
                weight: 1.0,
            })
            .collect();
        Topology::new(nodes, edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Incoming edges of `receiver`, in insertion order.
    pub fn in_edges(&self, receiver: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.receiver == receiver)
    }

    /// Graph Laplacian: `L[i][i]` is the total in-weight of node `i` and
    /// `L[i][j] = -w` when `i` receives from `j` with weight `w`. Row sums
    /// vanish, so the all-ones vector is always a right null vector.
    pub fn laplacian(&self) -> Matrix {
        let mut l = Matrix::zeros(self.nodes, self.nodes);
        for e in &self.edges {
            l[(e.receiver, e.receiver)] += e.weight;
            l[(e.receiver, e.sender)] -= e.weight;
        }
        l
    }

    /// Strong connectivity via forward and backward reachability from node
    /// zero (a digraph is strongly connected exactly when one vertex reaches
    /// all others in both orientations).
    pub fn is_strongly_connected(&self) -> bool {
        if self.nodes == 1 {
            return true;
        }
        let mut forward = vec![Vec::new(); self.nodes];
        let mut backward = vec![Vec::new(); self.nodes];
        for e in &self.edges {
            forward[e.sender].push(e.receiver);
            backward[e.receiver].push(e.sender);
        }
        let reaches_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; self.nodes];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        stack.push(w);
                    }
                }
            }
            count == self.nodes
        };
        reaches_all(&forward) && reaches_all(&backward)
    }

    /// The unique positive left null vector of the Laplacian normalized to
    /// unit sum. Exists and is positive exactly on strongly connected
    /// graphs.
    pub fn left_null_vector(&self) -> Result<Vec<f64>, GraphError> {
        if !self.is_strongly_connected() {
            return Err(GraphError::NotStronglyConnected);
        }
        let n = self.nodes;
        let l = self.laplacian();
        // Solve the stacked system [L^T; 1^T] z = [0; 1] in the
        // least-squares sense; on a strongly connected graph the solution
        // is exact and unique.
        let mut stacked = Matrix::zeros(n + 1, n);
        stacked.set_block(0, 0, &l.transpose());
        for j in 0..n {
            stacked[(n, j)] = 1.0;
        }
        let mut rhs = Matrix::zeros(n + 1, 1);
        rhs[(n, 0)] = 1.0;
        let sol = linalg::solve_least_squares(&stacked, &rhs)?;
        let mut zeta: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let residual = l
            .transpose()
            .mul_vec(&zeta)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = l.frobenius_norm().max(1.0);
        if residual > 1e-9 * scale || zeta.iter().any(|&z| z <= 0.0) {
            return Err(GraphError::NotStronglyConnected);
        }
        let sum: f64 = zeta.iter().sum();
        for z in &mut zeta {
            *z /= sum;
        }
        Ok(zeta)
    }
}

/// Reduction of the Laplacian onto the consensus complement.
///
/// `y1` spans the subspace orthogonal to the left null vector, `y2` is its
/// dual basis with `y2^T y1 = I` and `1^T y2 = 0`, and
/// `delta = y2^T L y1` carries the Laplacian action on that subspace:
/// `L y1 = y1 delta`. For a single-node network the complement is empty, so
/// the matrix fields are `None`.
#[derive(Clone, Debug)]
pub struct LaplacianDecomposition {
    pub zeta: Vec<f64>,
    pub y1: Option<Matrix>,
    pub y2: Option<Matrix>,
    pub delta: Option<Matrix>,
}

/// Orthonormal basis of the hyperplane orthogonal to `v`, built by
/// Gram-Schmidt over the standard basis in index order (deterministic).
fn orthonormal_complement(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|x| x / vnorm).collect()];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        // Two projection passes keep the basis orthogonal to machine
        // precision even when e_k is nearly parallel to the span.
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = b.iter().zip(&e).map(|(a, c)| a * c).sum();
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= dot * bi;
                }
            }
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(e.iter().map(|x| x / norm).collect());
        }
    }
    basis.remove(0);
    basis
}

/// Computes the consensus-complement decomposition of the graph Laplacian.
pub fn decompose(topology: &Topology) -> Result<LaplacianDecomposition, GraphError> {
    let zeta = topology.left_null_vector()?;
    let n = topology.node_count();
    if n == 1 {
        return Ok(LaplacianDecomposition {
            zeta,
            y1: None,
            y2: None,
            delta: None,
        });
    }
    let l = topology.laplacian();
    let q1 = Matrix::from_cols(&orthonormal_complement(&zeta))?;
    let ones = vec![1.0; n];
    let q2 = Matrix::from_cols(&orthonormal_complement(&ones))?;
    // S = Q2^T Q1 is invertible on strongly connected graphs: a vector in
    // both span(1) and the complement of zeta must be zero because
    // zeta^T 1 = 1.
    let s = q2.transpose().matmul(&q1);
    let s_inv = linalg::inverse(&s)?;
    let y2 = q2.matmul(&s_inv.transpose());
    let delta = y2.transpose().matmul(&l).matmul(&q1);
    Ok(LaplacianDecomposition {
        zeta,
        y1: Some(q1),
        y2: Some(y2),
        delta: Some(delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring3() -> Topology {
        Topology::ring(3).unwrap()
    }

    #[test]
    fn construction_validates_edges() {
        assert!(Topology::new(0, vec![]).is_err());
        let bad_node = Edge { receiver: 0, sender: 3, weight: 1.0 };
        assert!(Topology::new(3, vec![bad_node]).is_err());
        let self_loop = Edge { receiver: 1, sender: 1, weight: 1.0 };
        assert!(Topology::new(3, vec![self_loop]).is_err());
        let bad_weight = Edge { receiver: 0, sender: 1, weight: -1.0 };
        assert!(Topology::new(3, vec![bad_weight]).is_err());
        let e = Edge { receiver: 0, sender: 1, weight: 1.0 };
        assert!(matches!(
            Topology::new(3, vec![e, e]),
            Err(GraphError::DuplicateEdge { .. })
        ));
    }

    #[test]
    fn ring_laplacian_matches_hand_result() {
        let l = ring3().laplacian();
        let expected = Matrix::from_rows(vec![
            vec![1.0, -1.0, 0.0],
            vec![0.0, 1.0, -1.0],
            vec![-1.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(l, expected);
        // Row sums vanish.
        for i in 0..3 {
            let s: f64 = l.row_slice(i).iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn strong_connectivity_basic_cases() {
        assert!(ring3().is_strongly_connected());
        assert!(Topology::new(1, vec![]).unwrap().is_strongly_connected());
        // A chain has no way back.
        let chain = Topology::new(
            3,
            vec![
                Edge { receiver: 0, sender: 1, weight: 1.0 },
                Edge { receiver: 1, sender: 2, weight: 1.0 },
            ],
        )
        .unwrap();
        assert!(!chain.is_strongly_connected());
        assert!(chain.left_null_vector().is_err());
    }

    #[test]
    fn strong_connectivity_matches_floyd_warshall_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _case in 0..200 {
            let n = rng.gen_range(2..6);
            let mut edges = Vec::new();
            for r in 0..n {
                for s in 0..n {
                    if r != s && rng.gen_bool(0.35) {
                        edges.push(Edge {
                            receiver: r,
                            sender: s,
                            weight: rng.gen_range(0.1..2.0),
                        });
                    }
                }
            }
            let topo = Topology::new(n, edges.clone()).unwrap();
            // Floyd-Warshall transitive closure over sender -> receiver arcs.
            let mut reach = vec![vec![false; n]; n];
            for i in 0..n {
                reach[i][i] = true;
            }
            for e in &edges {
                reach[e.sender][e.receiver] = true;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if reach[i][k] && reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
            let oracle = (0..n).all(|i| (0..n).all(|j| reach[i][j]));
            assert_eq!(topo.is_strongly_connected(), oracle);
        }
    }

    #[test]
    fn ring_null_vector_is_uniform() {
        let zeta = ring3().left_null_vector().unwrap();
        for z in &zeta {
            assert!((z - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_graph_null_vector() {
        // Node 0 hears 1 and 2, node 1 hears 2, node 2 hears 0. Solving
        // zeta^T L = 0 with unit sum by hand gives (1/4, 1/4, 1/2).
        let topo = Topology::new(
            3,
            vec![
                Edge { receiver: 0, sender: 1, weight: 1.0 },
                Edge { receiver: 1, sender: 2, weight: 1.0 },
                Edge { receiver: 2, sender: 0, weight: 1.0 },
                Edge { receiver: 0, sender: 2, weight: 1.0 },
            ],
        )
        .unwrap();
        let zeta = topo.left_null_vector().unwrap();
        assert!((zeta[0] - 0.25).abs() < 1e-12);
        assert!((zeta[1] - 0.25).abs() < 1e-12);
        assert!((zeta[2] - 0.50).abs() < 1e-12);
    }

    #[test]
    fn decomposition_invariants_on_ring() {
        let topo = ring3();
        let dec = decompose(&topo).unwrap();
        let l = topo.laplacian();
        let y1 = dec.y1.unwrap();
        let y2 = dec.y2.unwrap();
        let delta = dec.delta.unwrap();
        let n = 3;
        // Dual bases: y2^T y1 = I, zeta^T y1 = 0, 1^T y2 = 0.
        assert!(y2.transpose().matmul(&y1).max_abs_diff(&Matrix::identity(n - 1)) < 1e-10);
        for j in 0..n - 1 {
            let zy: f64 = (0..n).map(|i| dec.zeta[i] * y1[(i, j)]).sum();
            assert!(zy.abs() < 1e-12);
            let oy: f64 = (0..n).map(|i| y2[(i, j)]).sum();
            assert!(oy.abs() < 1e-12);
        }
        // Projector identity: 1 zeta^T + y1 y2^T = I.
        let mut proj = y1.matmul(&y2.transpose());
        for i in 0..n {
            for j in 0..n {
                proj[(i, j)] += dec.zeta[j];
            }
        }
        assert!(proj.max_abs_diff(&Matrix::identity(n)) < 1e-8);
        // Invariance: L y1 = y1 delta.
        let lhs = l.matmul(&y1);
        let rhs = y1.matmul(&delta);
        assert!(lhs.max_abs_diff(&rhs) < 1e-8);
        // Spectral data of the reduced map is basis independent: for the
        // unit ring, trace 3, determinant 3, and delta + delta^T = 3 I.
        assert!((delta.trace() - 3.0).abs() < 1e-9);
        assert!((crate::linalg::determinant(&delta).unwrap() - 3.0).abs() < 1e-9);
        let sym = delta.add(&delta.transpose());
        let eigs = crate::linalg::sym_eig(&sym).unwrap().values;
        for e in eigs {
            assert!((e - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_node_decomposition_is_degenerate() {
        let topo = Topology::new(1, vec![]).unwrap();
        let dec = decompose(&topo).unwrap();
        assert_eq!(dec.zeta, vec![1.0]);
        assert!(dec.delta.is_none());
        assert!(dec.y1.is_none());
    }

    #[test]
    fn topology_serde_round_trip() {
        let topo = ring3();
        let json = serde_json::to_string(&topo).unwrap();
        let back: Topology = serde_json::from_str(&json).unwrap();
        assert_eq!(topo, back);
        // Deserialization revalidates: a self-loop is rejected.
        let bad = r#"{"nodes":2,"edges":[{"receiver":0,"sender":0,"weight":1.0}]}"#;
        assert!(serde_json::from_str::<Topology>(bad).is_err());
    }
}
