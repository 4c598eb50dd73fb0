use crate::error::{Error, Result};
use crate::graphs::{normalize_adjacency, stc_embed, WindowGraph};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;
use crate::seqmodels::{attention_weights, conv_head, lstm_forward};

use super::params::{ModelMeta, ModelNodes, ModelParams, Variant};

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<T> {
    /// Index of the last observed step `t`.
    pub origin: usize,
    /// Index of the target step `t + Δ`.
    pub target_index: usize,
    /// `τ × N` raw (standardized) values for steps `t−τ+1 ..= t`.
    pub raw_window: Matrix<T>,
    /// One `N × K` IMF feature matrix per window step.
    pub imf_window: Vec<Matrix<T>>,
    pub graphs: Vec<WindowGraph<T>>,
    /// Normalized adjacency of each entry of `graphs`.
    pub adjacency: Vec<Matrix<T>>,
    /// Length-N target vector.
    pub target: Vec<T>,
}

impl<T: Scalar> WindowSample<T> {
    /// Assembles a sample, normalizing each graph.
    pub fn new(
        origin: usize,
        target_index: usize,
        raw_window: Matrix<T>,
        imf_window: Vec<Matrix<T>>,
        graphs: Vec<WindowGraph<T>>,
        target: Vec<T>,
    ) -> Self {
        let adjacency = graphs.iter().map(normalize_adjacency).collect();
        Self {
            origin,
            target_index,
            raw_window,
            imf_window,
            graphs,
            adjacency,
            target,
        }
    }

    /// Checks every shape against `meta`.
    pub fn check(&self, meta: &ModelMeta) -> Result<()> {
        let (tau, n, k) = (meta.tau, meta.n_sensors, meta.k);
        let bad = |what: String| Err(Error::contract(format!("sample at origin {}: {what}", self.origin)));
        if self.raw_window.shape() != (tau, n) {
            return bad(format!("raw window {:?}, expected ({tau}, {n})", self.raw_window.shape()));
        }
        if self.imf_window.len() != tau || self.imf_window.iter().any(|m| m.shape() != (n, k)) {
            return bad(format!("IMF window must hold {tau} matrices of shape ({n}, {k})"));
        }
        if self.adjacency.len() != tau || self.adjacency.iter().any(|m| m.shape() != (n, n)) {
            return bad(format!("expected {tau} adjacency matrices of shape ({n}, {n})"));
        }
        if self.target.len() != n {
            return bad(format!("target has length {}, expected {n}", self.target.len()));
        }
        if self.target_index <= self.origin {
            return bad(format!("target index {} does not follow the window", self.target_index));
        }
        Ok(())
    }

    /// `P^{t_j} = [X^{t_j}, IMF^{t_j}]`, with IMF channels zeroed for `no-imf`.
    pub fn node_features(&self, variant: Variant) -> Vec<Matrix<T>> {
        let n = self.raw_window.cols();
        self.imf_window
            .iter()
            .enumerate()
            .map(|(j, imf)| {
                let k = imf.cols();
                let mut p = Matrix::zeros(n, 1 + k);
                for i in 0..n {
                    p[(i, 0)] = self.raw_window.get(j, i);
                    if variant == Variant::Full {
                        p.row_mut(i)[1..].copy_from_slice(imf.row(i));
                    }
                }
                p
            })
            .collect()
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub stc: NodeId,
    pub r_hat: NodeId,
    pub c_hat: NodeId,
    pub ens: NodeId,
    pub attention: NodeId,
    pub prediction: NodeId,
}

/// Builds the forward pass of `sample` into `g`.
pub fn forward_nodes<T: Scalar>(
    g: &mut Graph<T>,
    meta: &ModelMeta,
    nodes: &ModelNodes,
    sample: &WindowSample<T>,
) -> Result<ForwardNodes> {
    sample.check(meta)?;
    let features = sample.node_features(meta.variant);
    let stc = stc_embed(g, &sample.adjacency, &features, nodes.gcn)?;
    let c_hat = conv_head(g, stc, nodes.conv_filters, nodes.conv_bias)?;
    let r_hat = lstm_forward(g, &sample.raw_window, meta.tau, &nodes.lstm)?;
    let sum = g.add(r_hat, c_hat)?;
    let ens = g.scale(sum, T::lit(0.5));
    let attention = attention_weights(
        g,
        &sample.raw_window,
        meta.tau,
        nodes.attention_weights,
        nodes.attention_bias,
    )?;
    let prediction = g.mul(attention, ens)?;
    Ok(ForwardNodes {
        stc,
        r_hat,
        c_hat,
        ens,
        attention,
        prediction,
    })
}

/// Prediction plus every intermediate, all length N.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub prediction: Vec<T>,
    pub r_hat: Vec<T>,
    pub c_hat: Vec<T>,
    pub ens: Vec<T>,
    pub attention: Vec<T>,
}

/// Runs the model on one sample.
pub fn forward<T: Scalar>(sample: &WindowSample<T>, params: &ModelParams<T>) -> Result<ForwardOutput<T>> {
    let mut g = Graph::new();
    let nodes = params.register(&mut g);
    let f = forward_nodes(&mut g, &params.meta, &nodes, sample)?;
    let col = |id: NodeId| g.value(id).as_slice().to_vec();
    Ok(ForwardOutput {
        prediction: col(f.prediction),
        r_hat: col(f.r_hat),
        c_hat: col(f.c_hat),
        ens: col(f.ens),
        attention: col(f.attention),
    })
}
