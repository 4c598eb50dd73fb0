//! Per-timestep cosine-similarity graphs and the two-layer graph
//! convolution that turns them into spatio-temporal correlation (STC)
//! embeddings.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

/// Added to every degree before the inverse square root.
pub const DEGREE_EPS: f64 = 1e-8;

/// Fully connected sensor graph for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGraph<T> {
    /// Symmetric `N × N` weights in `[0, 1]` with unit diagonal.
    pub weights: Matrix<T>,
    pub t_index: usize,
}

/// Builds the graph for time `t_j` from the `lookback` rows ending at `t_j`
/// of a `T × N` value matrix. Near the start of the panel the window is
/// truncated to the available history, which must hold at least two rows.
pub fn build_window_graph<T: Scalar>(
    values: &Matrix<T>,
    t_j: usize,
    lookback: usize,
) -> Result<WindowGraph<T>> {
    let (len, n) = values.shape();
    if n < 2 {
        return Err(Error::contract(format!("window graphs need at least 2 sensors, got {n}")));
    }
    if lookback < 2 {
        return Err(Error::contract("similarity lookback must be at least 2"));
    }
    if t_j >= len {
        return Err(Error::Bounds {
            index: t_j as i64,
            detail: format!("panel has {len} time steps"),
        });
    }
    let start = (t_j + 1).saturating_sub(lookback);
    if t_j + 1 - start < 2 {
        return Err(Error::Bounds {
            index: t_j as i64,
            detail: "similarity window needs at least 2 time steps of history".into(),
        });
    }
    let mut dots = Matrix::<T>::zeros(n, n);
    for t in start..=t_j {
        let row = values.row(t);
        for u in 0..n {
            let xu = row[u];
            for v in u..n {
                dots[(u, v)] += xu * row[v];
            }
        }
    }
    let norms: Vec<T> = (0..n).map(|u| dots.get(u, u).sqrt()).collect();
    let mut weights = Matrix::identity(n);
    for u in 0..n {
        for v in u + 1..n {
            let denom = norms[u] * norms[v];
            let w = if denom > T::zero() {
                (dots.get(u, v) / denom).max(T::zero()).min(T::one())
            } else {
                T::zero()
            };
            weights[(u, v)] = w;
            weights[(v, u)] = w;
        }
    }
    Ok(WindowGraph { weights, t_index: t_j })
}

/// `D^{-1/2} A D^{-1/2}` with `D_ii = Σ_q A_iq + 1e-8`.
pub fn normalize_adjacency<T: Scalar>(g: &WindowGraph<T>) -> Matrix<T> {
    let a = &g.weights;
    let n = a.rows();
    let eps = T::lit(DEGREE_EPS);
    let inv_sqrt: Vec<T> = (0..n)
        .map(|i| T::one() / (a.row(i).iter().fold(T::zero(), |s, &v| s + v) + eps).sqrt())
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = inv_sqrt[i] * a.get(i, j) * inv_sqrt[j];
        }
    }
    out
}

/// Writes `u,v,weight` rows for every ordered pair, self-loops included.
pub fn write_edge_list<T: Scalar, W: Write>(mut out: W, g: &WindowGraph<T>) -> Result<()> {
    let io = |e| Error::io("edge list", e);
    writeln!(out, "u,v,weight").map_err(io)?;
    let n = g.weights.rows();
    for u in 0..n {
        for v in 0..n {
            writeln!(out, "{u},{v},{}", g.weights.get(u, v)).map_err(io)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// `ρ(Ã · H · W)`.
pub fn gcn_layer<T: Scalar>(
    g: &mut Graph<T>,
    adj: NodeId,
    h: NodeId,
    w: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let (n, m) = g.shape(adj);
    if n != m || g.shape(h).0 != n {
        return Err(Error::Dimension {
            op: "gcn_layer",
            left: (n, m),
            right: g.shape(h),
        });
    }
    let ah = g.matmul(adj, h)?;
    let out = g.matmul(ah, w)?;
    Ok(match activation {
        Activation::Identity => out,
        Activation::Relu => g.relu(out),
    })
}

/// Learnable weights of the two stacked graph convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams<T> {
    /// `(1 + K) × h`
    pub w0: Matrix<T>,
    /// `h × 1`
    pub w1: Matrix<T>,
}

/// Graph nodes holding [`GcnParams`] inside one forward graph.
#[derive(Debug, Clone, Copy)]
pub struct GcnNodes {
    pub w0: NodeId,
    pub w1: NodeId,
}

/// STC embedding: for each of the τ steps, a ReLU layer `(1+K) → h` then a
/// linear layer `h → 1`, both sharing weights across steps; the per-step
/// `N × 1` outputs are concatenated in time order into `N × τ`.
///
/// `adjacency[j]` is the normalized `N × N` matrix and `features[j]` the
/// `N × (1+K)` node features of step `j`.
pub fn stc_embed<T: Scalar>(
    g: &mut Graph<T>,
    adjacency: &[Matrix<T>],
    features: &[Matrix<T>],
    params: GcnNodes,
) -> Result<NodeId> {
    if adjacency.is_empty() || adjacency.len() != features.len() {
        return Err(Error::contract(format!(
            "stc_embed needs one adjacency per feature step ({} vs {})",
            adjacency.len(),
            features.len()
        )));
    }
    let n = features[0].rows();
    let f = features[0].cols();
    if g.shape(params.w0).0 != f {
        return Err(Error::Dimension {
            op: "stc_embed",
            left: features[0].shape(),
            right: g.shape(params.w0),
        });
    }
    let mut columns = Vec::with_capacity(features.len());
    for (a, p) in adjacency.iter().zip(features) {
        if p.shape() != (n, f) || a.shape() != (n, n) {
            return Err(Error::contract(format!(
                "inconsistent step shapes: features {:?}, adjacency {:?}, expected N={n}, 1+K={f}",
                p.shape(),
                a.shape()
            )));
        }
        let a_node = g.constant(a.clone());
        let p_node = g.constant(p.clone());
        let hidden = gcn_layer(g, a_node, p_node, params.w0, Activation::Relu)?;
        columns.push(gcn_layer(g, a_node, hidden, params.w1, Activation::Identity)?);
    }
    g.concat_cols(&columns)
}
