use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graphs::{GcnNodes, GcnParams};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;
use crate::seqmodels::{AttentionParams, ConvHeadParams, LstmNodes, LstmParams};

/// Model variant: the full model, or the ablation that ignores IMF features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoImf,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoImf => "no-imf",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-imf" => Ok(Variant::NoImf),
            other => Err(Error::Config {
                key: "variant".into(),
                msg: format!("expected `full` or `no-imf`, got `{other}`"),
            }),
        }
    }
}

/// Architecture and data dimensions a parameter set was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelMeta {
    pub n_sensors: usize,
    pub tau: usize,
    /// IMF feature channels per sensor, residual channel included.
    pub k: usize,
    pub horizon: usize,
    pub variant: Variant,
    pub gcn_hidden: usize,
    pub lstm_hidden: usize,
    pub conv_width: usize,
    pub conv_shared: bool,
    pub attention_shared: bool,
}

impl ModelMeta {
    pub fn new(n_sensors: usize, tau: usize, k: usize, horizon: usize, variant: Variant) -> Self {
        Self {
            n_sensors,
            tau,
            k,
            horizon,
            variant,
            gcn_hidden: 8,
            lstm_hidden: 64,
            conv_width: 3,
            conv_shared: false,
            attention_shared: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_sensors", self.n_sensors),
            ("tau", self.tau),
            ("k", self.k),
            ("horizon", self.horizon),
            ("gcn_hidden", self.gcn_hidden),
            ("lstm_hidden", self.lstm_hidden),
            ("conv_width", self.conv_width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("model dimension `{name}` must be positive")));
        }
        if self.conv_width > self.tau {
            return Err(Error::contract(format!(
                "conv width {} exceeds tau {}",
                self.conv_width, self.tau
            )));
        }
        Ok(())
    }

    /// Expected `(name, rows, cols)` for every tensor, in manifest order.
    pub fn shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (n, h, hl) = (self.n_sensors, self.gcn_hidden, self.lstm_hidden);
        let filter_rows = if self.conv_shared { 1 } else { n };
        let att_rows = if self.attention_shared { 1 } else { n };
        vec![
            ("gcn.w0", 1 + self.k, h),
            ("gcn.w1", h, 1),
            ("lstm.w_i", hl, n + hl),
            ("lstm.w_f", hl, n + hl),
            ("lstm.w_o", hl, n + hl),
            ("lstm.w_g", hl, n + hl),
            ("lstm.b_i", hl, 1),
            ("lstm.b_f", hl, 1),
            ("lstm.b_o", hl, 1),
            ("lstm.b_g", hl, 1),
            ("lstm.w_out", n, hl),
            ("lstm.b_out", n, 1),
            ("conv.filters", filter_rows, self.conv_width),
            ("conv.bias", n, 1),
            ("attention.weights", att_rows, self.tau),
            ("attention.bias", n, 1),
        ]
    }
}

/// Every trainable array of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub meta: ModelMeta,
    pub gcn: GcnParams<T>,
    pub lstm: LstmParams<T>,
    pub conv: ConvHeadParams<T>,
    pub attention: AttentionParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Tensors in manifest order.
    pub fn tensors(&self) -> [&Matrix<T>; 16] {
        [
            &self.gcn.w0,
            &self.gcn.w1,
            &self.lstm.w_i,
            &self.lstm.w_f,
            &self.lstm.w_o,
            &self.lstm.w_g,
            &self.lstm.b_i,
            &self.lstm.b_f,
            &self.lstm.b_o,
            &self.lstm.b_g,
            &self.lstm.w_out,
            &self.lstm.b_out,
            &self.conv.filters,
            &self.conv.bias,
            &self.attention.weights,
            &self.attention.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 16] {
        [
            &mut self.gcn.w0,
            &mut self.gcn.w1,
            &mut self.lstm.w_i,
            &mut self.lstm.w_f,
            &mut self.lstm.w_o,
            &mut self.lstm.w_g,
            &mut self.lstm.b_i,
            &mut self.lstm.b_f,
            &mut self.lstm.b_o,
            &mut self.lstm.b_g,
            &mut self.lstm.w_out,
            &mut self.lstm.b_out,
            &mut self.conv.filters,
            &mut self.conv.bias,
            &mut self.attention.weights,
            &mut self.attention.bias,
        ]
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.meta.shapes().into_iter().map(|(n, _, _)| n).collect()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let tensors = self.tensors().iter().map(|m| m.cast()).collect();
        ModelParams::from_tensors(self.meta, tensors).expect("shapes unchanged by cast")
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Reassembles parameters from tensors in manifest order, checking shapes.
    pub fn from_tensors(meta: ModelMeta, tensors: Vec<Matrix<T>>) -> Result<Self> {
        meta.validate()?;
        let shapes = meta.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), m) in shapes.iter().zip(&tensors) {
            if m.shape() != (*r, *c) {
                return Err(Error::contract(format!(
                    "tensor `{name}` has shape {:?}, expected ({r}, {c})",
                    m.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        Ok(Self {
            meta,
            gcn: GcnParams { w0: next(), w1: next() },
            lstm: LstmParams {
                w_i: next(),
                w_f: next(),
                w_o: next(),
                w_g: next(),
                b_i: next(),
                b_f: next(),
                b_o: next(),
                b_g: next(),
                w_out: next(),
                b_out: next(),
            },
            conv: ConvHeadParams { filters: next(), bias: next() },
            attention: AttentionParams { weights: next(), bias: next() },
        })
    }

    /// Registers every tensor as a trainable leaf, in manifest order.
    pub fn register(&self, g: &mut Graph<T>) -> ModelNodes {
        let ids: Vec<NodeId> = self.tensors().iter().map(|m| g.param((*m).clone())).collect();
        ModelNodes::from_ids(&ids)
    }
}

/// Leaf handles of a registered [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct ModelNodes {
    pub gcn: GcnNodes,
    pub lstm: LstmNodes,
    pub conv_filters: NodeId,
    pub conv_bias: NodeId,
    pub attention_weights: NodeId,
    pub attention_bias: NodeId,
}

impl ModelNodes {
    /// Interprets 16 node ids given in manifest order.
    pub fn from_ids(ids: &[NodeId]) -> Self {
        assert_eq!(ids.len(), 16, "model has 16 parameter tensors");
        Self {
            gcn: GcnNodes { w0: ids[0], w1: ids[1] },
            lstm: LstmNodes {
                w_i: ids[2],
                w_f: ids[3],
                w_o: ids[4],
                w_g: ids[5],
                b_i: ids[6],
                b_f: ids[7],
                b_o: ids[8],
                b_g: ids[9],
                w_out: ids[10],
                b_out: ids[11],
            },
            conv_filters: ids[12],
            conv_bias: ids[13],
            attention_weights: ids[14],
            attention_bias: ids[15],
        }
    }

    pub fn ids(&self) -> [NodeId; 16] {
        [
            self.gcn.w0,
            self.gcn.w1,
            self.lstm.w_i,
            self.lstm.w_f,
            self.lstm.w_o,
            self.lstm.w_g,
            self.lstm.b_i,
            self.lstm.b_f,
            self.lstm.b_o,
            self.lstm.b_g,
            self.lstm.w_out,
            self.lstm.b_out,
            self.conv_filters,
            self.conv_bias,
            self.attention_weights,
            self.attention_bias,
        ]
    }
}

/// Glorot/Xavier uniform bound `√(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix<T> {
    let b = xavier_bound(fan_in, fan_out);
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-b..=b)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// Xavier-uniform weights, zero biases, LSTM forget-gate bias 1.0.
pub fn init_params<T: Scalar>(meta: ModelMeta, seed: u64) -> Result<ModelParams<T>> {
    meta.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, hl) = (meta.n_sensors, meta.lstm_hidden);
    let mut tensors = Vec::with_capacity(16);
    for (name, rows, cols) in meta.shapes() {
        let m = match name {
            "gcn.w0" | "gcn.w1" => xavier(&mut rng, rows, cols, rows, cols),
            "lstm.w_i" | "lstm.w_f" | "lstm.w_o" | "lstm.w_g" => {
                xavier(&mut rng, rows, cols, n + hl, hl)
            }
            "lstm.w_out" => xavier(&mut rng, rows, cols, hl, n),
            "conv.filters" => xavier(&mut rng, rows, cols, meta.conv_width, 1),
            "attention.weights" => xavier(&mut rng, rows, cols, meta.tau, 1),
            "lstm.b_f" => Matrix::ones(rows, cols),
            _ => Matrix::zeros(rows, cols),
        };
        tensors.push(m);
    }
    ModelParams::from_tensors(meta, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> ModelMeta {
        ModelMeta::new(3, 6, 8, 1, Variant::Full)
    }

    #[test]
    fn same_seed_same_params() {
        let a: ModelParams<f64> = init_params(meta(), 5).unwrap();
        let b: ModelParams<f64> = init_params(meta(), 5).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f64> = init_params(meta(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bounds_respected() {
        // W0 is (1 + K) × h = 9 × 8 here
        let bound = xavier_bound(9, 8);
        assert!((bound - (6.0f64 / 17.0).sqrt()).abs() < 1e-15);
        assert!((bound - 0.594).abs() < 1e-3);
        let p: ModelParams<f64> = init_params(meta(), 1).unwrap();
        assert_eq!(p.gcn.w0.shape(), (9, 8));
        assert!(p.gcn.w0.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(p.lstm.b_f.as_slice().iter().all(|&v| v == 1.0));
        assert!(p.lstm.b_i.as_slice().iter().all(|&v| v == 0.0));
        assert!(p.conv.bias.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonpositive_dims_rejected() {
        let mut m = meta();
        m.tau = 0;
        assert_eq!(init_params::<f64>(m, 0).unwrap_err().class(), "ContractError");
        let mut m = meta();
        m.conv_width = 7;
        assert!(init_params::<f64>(m, 0).is_err());
    }

    #[test]
    fn shared_switches_shrink_params() {
        let mut m = meta();
        m.conv_shared = true;
        m.attention_shared = true;
        let p: ModelParams<f64> = init_params(m, 0).unwrap();
        assert_eq!(p.conv.filters.shape(), (1, 3));
        assert_eq!(p.attention.weights.shape(), (1, 6));
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p: ModelParams<f64> = init_params(meta(), 2).unwrap();
        let mut ts: Vec<Matrix<f64>> = p.tensors().iter().map(|m| (*m).clone()).collect();
        assert_eq!(ModelParams::from_tensors(meta(), ts.clone()).unwrap(), p);
        ts[3] = Matrix::zeros(1, 1);
        assert!(ModelParams::from_tensors(meta(), ts).is_err());
    }
}
