//! Order graph container: symmetric CSR adjacency plus node features and
//! optional ground-truth labels.

mod io;

pub(crate) use io::{ensure_dir, ensure_parent};
pub use io::{
    load_graph, read_edge_file, read_feature_file, read_label_file, write_edge_file,
    write_feature_file, write_label_file, GraphPaths, LabelMap,
};

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::nn::Dense;
use crate::rng::{fnv1a, RngStream};

/// Undirected, unweighted order graph.
///
/// Neighbor slices are sorted, deduplicated and never contain the node itself.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Dense,
    labels: Option<Vec<u8>>,
}

impl OrderGraph {
    /// Builds a graph from an edge list. Edges are symmetrized and
    /// deduplicated, self-loops are dropped.
    pub fn build(edges: &[(usize, usize)], features: Dense, labels: Option<Vec<u8>>) -> Result<Self> {
        let n = features.rows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::RowMismatch {
                    what: "labels",
                    got: l.len(),
                    expected: n,
                });
            }
            if let Some(bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidArgument(format!("label {bad} not in {{0,1}}")));
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for node in [u, v] {
                if node >= n {
                    return Err(Error::EndpointOutOfRange { node, n_nodes: n });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            features,
            labels,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Dense {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn csr(&self) -> (&[usize], &[usize]) {
        (&self.offsets, &self.neighbors)
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n_nodes() {
            return Err(Error::NodeOutOfRange {
                node: i,
                n_nodes: self.n_nodes(),
            });
        }
        Ok(())
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.check(i)?;
        Ok(&self.neighbors[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        self.check(i)?;
        Ok(self.offsets[i + 1] - self.offsets[i])
    }

    pub(crate) fn neighbors_unchecked(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |u| {
            self.neighbors_unchecked(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// Up to `eta` distinct neighbors of `i`, uniformly without replacement,
    /// returned in ascending order. All neighbors when `eta >= degree`.
    pub fn sample_neighbors(&self, i: usize, eta: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        let nb = self.neighbors(i)?;
        if eta >= nb.len() {
            return Ok(nb.to_vec());
        }
        let mut picked: Vec<usize> = index::sample(rng, nb.len(), eta)
            .into_iter()
            .map(|k| nb[k])
            .collect();
        picked.sort_unstable();
        Ok(picked)
    }

    /// Same topology, feature rows shuffled by a uniformly random permutation.
    pub fn corrupt(&self, rng: &mut RngStream) -> Result<OrderGraph> {
        let n = self.n_nodes();
        if n < 2 {
            return Err(Error::Degenerate(format!(
                "corruption needs at least 2 nodes, graph has {n}"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        self.corrupt_with(&perm)
    }

    /// Row `k` of the result's features is row `perm[k]` of the input.
    pub fn corrupt_with(&self, perm: &[usize]) -> Result<OrderGraph> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the node set".into()));
        }
        Ok(OrderGraph {
            offsets: self.offsets.clone(),
            neighbors: self.neighbors.clone(),
            features: self.features.select_rows(perm),
            labels: self.labels.clone(),
        })
    }

    /// Same topology and labels with a replacement feature matrix.
    pub fn with_features(&self, features: Dense) -> Result<OrderGraph> {
        if features.rows() != self.n_nodes() {
            return Err(Error::RowMismatch {
                what: "features",
                got: features.rows(),
                expected: self.n_nodes(),
            });
        }
        Ok(OrderGraph {
            features,
            ..self.clone()
        })
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<OrderGraph> {
        if let Some(l) = &labels {
            if l.len() != self.n_nodes() {
                return Err(Error::RowMismatch {
                    what: "labels",
                    got: l.len(),
                    expected: self.n_nodes(),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Verifies every structural invariant; used by loaders and tests.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.features.rows() != n {
            return Err(Error::RowMismatch {
                what: "features",
                got: self.features.rows(),
                expected: n,
            });
        }
        if self.offsets[0] != 0 || *self.offsets.last().unwrap() != self.neighbors.len() {
            return Err(Error::Degenerate("offsets do not span the neighbor array".into()));
        }
        for u in 0..n {
            if self.offsets[u] > self.offsets[u + 1] {
                return Err(Error::Degenerate(format!("offsets decrease at node {u}")));
            }
            let nb = self.neighbors_unchecked(u);
            for w in nb.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Degenerate(format!("neighbors of {u} unsorted or duplicated")));
                }
            }
            for &v in nb {
                if v >= n {
                    return Err(Error::EndpointOutOfRange { node: v, n_nodes: n });
                }
                if v == u {
                    return Err(Error::Degenerate(format!("self-loop at {u}")));
                }
                if self.neighbors_unchecked(v).binary_search(&u).is_err() {
                    return Err(Error::Degenerate(format!("edge ({u},{v}) not symmetric")));
                }
            }
        }
        Ok(())
    }

    /// Stable hash of adjacency and features.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (self.offsets.len() + self.neighbors.len()) + 16);
        for v in self.offsets.iter().chain(&self.neighbors) {
            bytes.extend_from_slice(&(*v as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&(self.features.cols() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

/// Free-function form of [`OrderGraph::build`].
pub fn build_graph(edges: &[(usize, usize)], features: Dense, labels: Option<Vec<u8>>) -> Result<OrderGraph> {
    OrderGraph::build(edges, features, labels)
}
