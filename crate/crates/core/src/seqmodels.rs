//! Raw-prediction heads (LSTM over raw values, per-sensor 1-D convolution
//! over STC embeddings) and the per-sensor attention weights.

use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// Gate weights, each `hidden × (N + hidden)`, acting on `[x; h]`.
    pub w_i: Matrix<T>,
    pub w_f: Matrix<T>,
    pub w_o: Matrix<T>,
    pub w_g: Matrix<T>,
    /// Gate biases, each `hidden × 1`.
    pub b_i: Matrix<T>,
    pub b_f: Matrix<T>,
    pub b_o: Matrix<T>,
    pub b_g: Matrix<T>,
    /// Output head `N × hidden` and bias `N × 1`.
    pub w_out: Matrix<T>,
    pub b_out: Matrix<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn inputs(&self) -> usize {
        self.w_out.rows()
    }

    pub fn register(&self, g: &mut Graph<T>) -> LstmNodes {
        LstmNodes {
            w_i: g.param(self.w_i.clone()),
            w_f: g.param(self.w_f.clone()),
            w_o: g.param(self.w_o.clone()),
            w_g: g.param(self.w_g.clone()),
            b_i: g.param(self.b_i.clone()),
            b_f: g.param(self.b_f.clone()),
            b_o: g.param(self.b_o.clone()),
            b_g: g.param(self.b_g.clone()),
            w_out: g.param(self.w_out.clone()),
            b_out: g.param(self.b_out.clone()),
        }
    }

    /// Evaluates [`lstm_forward`] on a throwaway graph.
    pub fn predict(&self, window: &Matrix<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g);
        let out = lstm_forward(&mut g, window, window.rows(), &nodes)?;
        Ok(g.value(out).as_slice().to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w_i: NodeId,
    pub w_f: NodeId,
    pub w_o: NodeId,
    pub w_g: NodeId,
    pub b_i: NodeId,
    pub b_f: NodeId,
    pub b_o: NodeId,
    pub b_g: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

/// Runs the LSTM over the `tau` rows of `window` (`τ × N`) from a zero
/// state and maps the final hidden state to an `N × 1` raw prediction.
pub fn lstm_forward<T: Scalar>(
    g: &mut Graph<T>,
    window: &Matrix<T>,
    tau: usize,
    p: &LstmNodes,
) -> Result<NodeId> {
    if window.rows() != tau {
        return Err(Error::contract(format!(
            "lstm window has {} rows, expected tau = {tau}",
            window.rows()
        )));
    }
    let hidden = g.shape(p.w_i).0;
    let n = window.cols();
    if g.shape(p.w_i).1 != n + hidden {
        return Err(Error::Dimension {
            op: "lstm_forward",
            left: window.shape(),
            right: g.shape(p.w_i),
        });
    }
    let mut h = g.constant(Matrix::zeros(hidden, 1));
    let mut c = g.constant(Matrix::zeros(hidden, 1));
    for step in 0..tau {
        let x = g.constant(Matrix::column(window.row(step)));
        let z = g.concat_rows(&[x, h])?;
        let gate = |g: &mut Graph<T>, w: NodeId, b: NodeId| -> Result<NodeId> {
            let wz = g.matmul(w, z)?;
            g.add(wz, b)
        };
        let i_pre = gate(g, p.w_i, p.b_i)?;
        let f_pre = gate(g, p.w_f, p.b_f)?;
        let o_pre = gate(g, p.w_o, p.b_o)?;
        let g_pre = gate(g, p.w_g, p.b_g)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let o = g.sigmoid(o_pre);
        let cand = g.tanh(g_pre);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        h = g.mul(o, squashed)?;
    }
    let out = g.matmul(p.w_out, h)?;
    g.add(out, p.b_out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvHeadParams<T> {
    /// `N × λ` (one filter per sensor) or `1 × λ` (shared filter).
    pub filters: Matrix<T>,
    /// `N × 1`
    pub bias: Matrix<T>,
}

impl<T: Scalar> ConvHeadParams<T> {
    pub fn width(&self) -> usize {
        self.filters.cols()
    }

    /// Evaluates [`conv_head`] on a throwaway graph.
    pub fn predict(&self, stc: &Matrix<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let h = g.constant(stc.clone());
        let f = g.param(self.filters.clone());
        let b = g.param(self.bias.clone());
        let out = conv_head(&mut g, h, f, b)?;
        Ok(g.value(out).as_slice().to_vec())
    }
}

/// Per-sensor valid 1-D convolution over the `N × τ` STC embedding,
/// followed by ReLU and average pooling to an `N × 1` raw prediction.
pub fn conv_head<T: Scalar>(
    g: &mut Graph<T>,
    stc: NodeId,
    filters: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let (n, tau) = g.shape(stc);
    let (f_rows, width) = g.shape(filters);
    if width > tau {
        return Err(Error::contract(format!(
            "filter width {width} exceeds window length {tau}"
        )));
    }
    if g.shape(bias) != (n, 1) {
        return Err(Error::Dimension {
            op: "conv_head bias",
            left: (n, 1),
            right: g.shape(bias),
        });
    }
    let filters = match f_rows {
        r if r == n => filters,
        1 => g.tile_rows(filters, n)?,
        _ => {
            return Err(Error::Dimension {
                op: "conv_head filters",
                left: (n, width),
                right: (f_rows, width),
            })
        }
    };
    let conv = g.row_conv(stc, filters)?;
    let out_len = tau - width + 1;
    let b = g.tile_cols(bias, out_len)?;
    let pre = g.add(conv, b)?;
    let act = g.relu(pre);
    g.mean_rows(act)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// `N × τ` (per-sensor) or `1 × τ` (shared).
    pub weights: Matrix<T>,
    /// `N × 1`
    pub bias: Matrix<T>,
}

impl<T: Scalar> AttentionParams<T> {
    /// Evaluates [`attention_weights`] on a throwaway graph.
    pub fn predict(&self, window: &Matrix<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let w = g.param(self.weights.clone());
        let b = g.param(self.bias.clone());
        let out = attention_weights(&mut g, window, window.rows(), w, b)?;
        Ok(g.value(out).as_slice().to_vec())
    }
}

/// `a_i = σ(Σ_j W[i][j] · window[j][i] + b_i)`: each sensor's weight
/// depends only on its own τ-step history.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    window: &Matrix<T>,
    tau: usize,
    weights: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    if window.rows() != tau {
        return Err(Error::contract(format!(
            "attention window has {} rows, expected tau = {tau}",
            window.rows()
        )));
    }
    let n = window.cols();
    let (w_rows, w_cols) = g.shape(weights);
    if w_cols != tau || (w_rows != n && w_rows != 1) {
        return Err(Error::Dimension {
            op: "attention_weights",
            left: (n, tau),
            right: (w_rows, w_cols),
        });
    }
    let weights = if w_rows == n {
        weights
    } else {
        g.tile_rows(weights, n)?
    };
    let history = g.constant(window.transpose());
    let prod = g.mul(weights, history)?;
    let score = g.sum_rows(prod);
    let pre = g.add(score, bias)?;
    Ok(g.sigmoid(pre))
}
