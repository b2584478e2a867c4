use std::sync::Arc;

use super::dense::Dense;
use super::glorot_uniform;
use crate::error::{shape_err, Result};
use crate::graph::OrderGraph;
use crate::rng::RngStream;

/// Encoder weights `w1` (f×d), `w2` (d×d) and readout weight `wr` (d×d).
/// The inner-product head has no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w1: Dense,
    pub w2: Dense,
    pub wr: Dense,
}

impl ModelParams {
    pub fn init(feature_width: usize, hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            w1: glorot_uniform(feature_width, hidden, rng),
            w2: glorot_uniform(hidden, hidden, rng),
            wr: glorot_uniform(hidden, hidden, rng),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden();
        if d == 0 || self.w2.shape() != (d, d) || self.wr.shape() != (d, d) {
            return Err(shape_err(
                "ModelParams",
                format!(
                    "w1 {:?}, w2 {:?}, wr {:?}",
                    self.w1.shape(),
                    self.w2.shape(),
                    self.wr.shape()
                ),
            ));
        }
        if !(self.w1.is_finite() && self.w2.is_finite() && self.wr.is_finite()) {
            return Err(crate::Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

/// Symmetric-normalized adjacency with self-loops, `D̃^{-1/2}(A+I)D̃^{-1/2}`,
/// stored as CSR.
#[derive(Clone, Debug)]
pub struct Propagator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Propagator {
    pub fn new(g: &OrderGraph) -> Self {
        let n = g.n_nodes();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / ((g.neighbors_unchecked(i).len() + 1) as f64).sqrt())
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(2 * g.n_edges() + n);
        let mut vals = Vec::with_capacity(cols.capacity());
        offsets.push(0);
        for i in 0..n {
            let nb = g.neighbors_unchecked(i);
            let split = nb.partition_point(|&j| j < i);
            let ordered = nb[..split].iter().chain(std::iter::once(&i)).chain(&nb[split..]);
            for &j in ordered {
                cols.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, vals }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `Â · m`. Â is symmetric, so this is also `Âᵀ · m`.
    pub fn apply(&self, m: &Dense) -> Dense {
        assert_eq!(m.rows(), self.n_nodes(), "propagator row count");
        let mut out = Dense::zeros(m.rows(), m.cols());
        for i in 0..self.n_nodes() {
            let orow = out.row_mut(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                let w = self.vals[k];
                for (o, &v) in orow.iter_mut().zip(m.row(self.cols[k])) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Forward pass `H = Â·ReLU(Â·X·W1)·W2`.
    pub fn forward(self: &Arc<Self>, params: &ModelParams, x: &Dense) -> Result<(Dense, EncoderCache)> {
        if x.rows() != self.n_nodes() || x.cols() != params.w1.rows() {
            return Err(shape_err(
                "gnn_forward",
                format!(
                    "features {:?} for {} nodes and w1 {:?}",
                    x.shape(),
                    self.n_nodes(),
                    params.w1.shape()
                ),
            ));
        }
        if params.w2.shape() != (params.hidden(), params.hidden()) {
            return Err(shape_err("gnn_forward", format!("w2 {:?}", params.w2.shape())));
        }
        let ax = self.apply(x);
        let pre = ax.matmul(&params.w1);
        let act = pre.map(|v| v.max(0.0));
        let agg = self.apply(&act);
        let h = agg.matmul(&params.w2);
        let cache = EncoderCache {
            prop: Arc::clone(self),
            ax,
            pre,
            agg,
            w2: params.w2.clone(),
        };
        Ok((h, cache))
    }
}

/// Intermediates retained by the forward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    prop: Arc<Propagator>,
    ax: Dense,
    pre: Dense,
    agg: Dense,
    w2: Dense,
}

impl EncoderCache {
    pub fn n_nodes(&self) -> usize {
        self.ax.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w2.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub w1: Dense,
    pub w2: Dense,
}

pub fn gnn_forward(params: &ModelParams, g: &OrderGraph, x: &Dense) -> Result<(Dense, EncoderCache)> {
    Arc::new(Propagator::new(g)).forward(params, x)
}

/// Gradients of the encoder weights given `dH`.
pub fn gnn_backward(cache: &EncoderCache, dh: &Dense) -> Result<EncoderGrads> {
    if dh.shape() != (cache.n_nodes(), cache.hidden()) {
        return Err(shape_err(
            "gnn_backward",
            format!(
                "dH {:?} does not match cached forward ({} x {})",
                dh.shape(),
                cache.n_nodes(),
                cache.hidden()
            ),
        ));
    }
    let dw2 = cache.agg.t_matmul(dh);
    let dagg = dh.matmul_t(&cache.w2);
    let mut dpre = cache.prop.apply(&dagg);
    for (d, &p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    let dw1 = cache.ax.t_matmul(&dpre);
    Ok(EncoderGrads { w1: dw1, w2: dw2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_grad, max_relative_error};

    fn params(w1: Dense, w2: Dense) -> ModelParams {
        let d = w2.rows();
        ModelParams {
            w1,
            w2,
            wr: Dense::identity(d),
        }
    }

    #[test]
    fn isolated_node_hand_trace() {
        let x = Dense::from_rows(&[[1.0, -1.0]]).unwrap();
        let g = OrderGraph::build(&[], x.clone(), None).unwrap();
        let p = params(Dense::identity(2), Dense::identity(2));
        let (h, _) = gnn_forward(&p, &g, &x).unwrap();
        assert_eq!(h.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn symmetric_pair_gives_equal_rows() {
        let x = Dense::from_rows(&[[0.3, 0.7, -0.2], [0.3, 0.7, -0.2]]).unwrap();
        let g = OrderGraph::build(&[(0, 1)], x.clone(), None).unwrap();
        let p = ModelParams::init(3, 4, &mut RngStream::new(3));
        let (h, _) = gnn_forward(&p, &g, &x).unwrap();
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn zero_first_layer_gives_zero_output() {
        let x = Dense::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let g = OrderGraph::build(&[(0, 1)], x.clone(), None).unwrap();
        let mut p = ModelParams::init(2, 3, &mut RngStream::new(0));
        p.w1 = Dense::zeros(2, 3);
        let (h, _) = gnn_forward(&p, &g, &x).unwrap();
        assert_eq!(h, Dense::zeros(2, 3));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Dense::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = OrderGraph::build(&[], x, None).unwrap();
        let p = ModelParams::init(3, 2, &mut RngStream::new(0));
        assert!(gnn_forward(&p, &g, &Dense::zeros(1, 2)).is_err());
        let p = ModelParams::init(2, 2, &mut RngStream::new(0));
        let (_, cache) = gnn_forward(&p, &g, g.features()).unwrap();
        assert!(gnn_backward(&cache, &Dense::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Dense::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let g = OrderGraph::build(&[(0, 1)], x.clone(), None).unwrap();
        let p = ModelParams::init(2, 3, &mut RngStream::new(0));
        let (_, cache) = gnn_forward(&p, &g, &x).unwrap();
        let grads = gnn_backward(&cache, &Dense::zeros(2, 3)).unwrap();
        assert_eq!(grads.w1, Dense::zeros(2, 3));
        assert_eq!(grads.w2, Dense::zeros(3, 3));
    }

    #[test]
    fn scalar_chain_rule() {
        let (x, w1, w2, dh) = (1.5, 0.8, -1.2, 0.7);
        let xs = Dense::from_vec(1, 1, vec![x]).unwrap();
        let g = OrderGraph::build(&[], xs.clone(), None).unwrap();
        let p = params(
            Dense::from_vec(1, 1, vec![w1]).unwrap(),
            Dense::from_vec(1, 1, vec![w2]).unwrap(),
        );
        let (_, cache) = gnn_forward(&p, &g, &xs).unwrap();
        let grads = gnn_backward(&cache, &Dense::from_vec(1, 1, vec![dh]).unwrap()).unwrap();
        assert!((grads.w1.get(0, 0) - x * w2 * dh).abs() < 1e-15);
        assert!((grads.w2.get(0, 0) - (x * w1).max(0.0) * dh).abs() < 1e-15);
    }

    fn random_graph(n: usize, f: usize, rng: &mut RngStream) -> OrderGraph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.chance(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let x = crate::nn::glorot_uniform(n, f, rng).scaled(3.0);
        OrderGraph::build(&edges, x, None).unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(11);
        let g = random_graph(8, 4, &mut rng);
        let p = ModelParams::init(4, 3, &mut rng);
        let upstream = crate::nn::glorot_uniform(8, 3, &mut rng);
        // scalar objective L = <H, upstream>
        let objective = |p: &ModelParams| {
            let (h, _) = gnn_forward(p, &g, g.features()).unwrap();
            crate::nn::dot(h.as_slice(), upstream.as_slice())
        };
        let (_, cache) = gnn_forward(&p, &g, g.features()).unwrap();
        let grads = gnn_backward(&cache, &upstream).unwrap();
        let fd1 = finite_diff_grad(
            |w| objective(&ModelParams { w1: w.clone(), ..p.clone() }),
            &p.w1,
            1e-4,
        );
        let fd2 = finite_diff_grad(
            |w| objective(&ModelParams { w2: w.clone(), ..p.clone() }),
            &p.w2,
            1e-4,
        );
        assert!(max_relative_error(&grads.w1, &fd1) < 1e-4);
        assert!(max_relative_error(&grads.w2, &fd2) < 1e-4);
    }

    #[test]
    fn equivariant_under_node_permutation() {
        let mut rng = RngStream::new(5);
        let g = random_graph(7, 3, &mut rng);
        let p = ModelParams::init(3, 4, &mut rng);
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let mut inv = [0usize; 7];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges: Vec<_> = g.edges().map(|(u, v)| (inv[u], inv[v])).collect();
        let gp = OrderGraph::build(&edges, g.features().select_rows(&perm), None).unwrap();
        let (h, _) = gnn_forward(&p, &g, g.features()).unwrap();
        let (hp, _) = gnn_forward(&p, &gp, gp.features()).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for (a, b) in hp.row(new).iter().zip(h.row(old)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
