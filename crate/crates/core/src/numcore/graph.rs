//! Define-by-run reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! creation order, which is always a topological order, so the backward
//! sweep simply walks the node list in reverse.

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Entrywise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Multiply,
    Sigmoid,
    Tanh,
    Relu,
}

/// Reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    MeanAll,
    MeanRows,
    SumAll,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf { trainable: bool },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    SumRows(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    TileCols(NodeId),
    TileRows(NodeId),
    RowConv(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    grad: Option<Matrix<T>>,
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    entries: Vec<(NodeId, Matrix<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.entries
            .binary_search_by_key(&id, |(k, _)| *k)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Moves the gradient for `id` out, leaving an empty matrix behind.
    pub fn take(&mut self, id: NodeId) -> Option<Matrix<T>> {
        let i = self.entries.binary_search_by_key(&id, |(k, _)| *k).ok()?;
        Some(std::mem::replace(&mut self.entries[i].1, Matrix::zeros(0, 0)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Matrix<T>)> {
        self.entries.iter().map(|(k, m)| (*k, m))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// Non-trainable leaf (data).
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Leaf { trainable: false })
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Accumulated gradient from the most recent [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Hadamard (entrywise) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "multiply")?;
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    /// Tagged entrywise operation; binary tags take exactly two operands.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[NodeId]) -> Result<NodeId> {
        let arity = match op {
            Elementwise::Add | Elementwise::Multiply => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Multiply => self.mul(operands[0], operands[1]),
            Elementwise::Sigmoid => Ok(self.sigmoid(operands[0])),
            Elementwise::Tanh => Ok(self.tanh(operands[0])),
            Elementwise::Relu => Ok(self.relu(operands[0])),
        }
    }

    pub fn reduce(&mut self, op: Reduce, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::Domain(format!("{op:?} of an empty matrix")));
        }
        Ok(match op {
            Reduce::SumAll => {
                let v = Matrix::scalar(self.value(a).sum());
                self.push(v, Op::SumAll(a))
            }
            Reduce::MeanAll => {
                let v = Matrix::scalar(self.value(a).mean()?);
                self.push(v, Op::MeanAll(a))
            }
            Reduce::MeanRows => {
                let v = self.value(a).mean_rows()?;
                self.push(v, Op::MeanRows(a))
            }
        })
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(Reduce::SumAll, a)
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(Reduce::MeanAll, a)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(Reduce::MeanRows, a)
    }

    /// Row sums as an `rows × 1` column.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_rows();
        self.push(v, Op::SumRows(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Vertical stack; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract("concat_rows of zero parts"));
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Horizontal stack; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract("concat_cols of zero parts"));
        };
        let rows = self.shape(first).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: s,
                });
            }
            total += s.1;
        }
        let mut v = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            for r in 0..rows {
                v.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Repeats an `r × 1` column `n` times into `r × n`.
    pub fn tile_cols(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let m = self.value(a);
        if m.cols() != 1 {
            return Err(Error::Dimension {
                op: "tile_cols",
                left: m.shape(),
                right: (m.rows(), 1),
            });
        }
        let mut v = Matrix::zeros(m.rows(), n);
        for r in 0..m.rows() {
            let x = m.get(r, 0);
            v.row_mut(r).fill(x);
        }
        Ok(self.push(v, Op::TileCols(a)))
    }

    /// Repeats a `1 × c` row `n` times into `n × c`.
    pub fn tile_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() != 1 {
            return Err(Error::Dimension {
                op: "tile_rows",
                left: m.shape(),
                right: (1, m.cols()),
            });
        }
        let mut v = Matrix::zeros(n, m.cols());
        for r in 0..n {
            v.row_mut(r).copy_from_slice(m.as_slice());
        }
        Ok(self.push(v, Op::TileRows(a)))
    }

    /// Valid cross-correlation of each row of `input` (`r × L`) with the
    /// matching row of `filters` (`r × w`), giving `r × (L − w + 1)`.
    pub fn row_conv(&mut self, input: NodeId, filters: NodeId) -> Result<NodeId> {
        let (x, f) = (self.value(input), self.value(filters));
        if x.rows() != f.rows() || f.cols() == 0 || f.cols() > x.cols() {
            return Err(Error::Dimension {
                op: "row_conv",
                left: x.shape(),
                right: f.shape(),
            });
        }
        let out_len = x.cols() - f.cols() + 1;
        let mut v = Matrix::zeros(x.rows(), out_len);
        for r in 0..x.rows() {
            let (xr, fr) = (x.row(r), f.row(r));
            for s in 0..out_len {
                let mut acc = T::zero();
                for (l, &w) in fr.iter().enumerate() {
                    acc += xr[s + l] * w;
                }
                v.set(r, s, acc);
            }
        }
        Ok(self.push(v, Op::RowConv(input, filters)))
    }

    /// Reverse sweep from a 1×1 `loss`. Accumulators are reset first, so
    /// repeated calls give identical results.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::ones(1, 1));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (target, delta) in contributions {
                match &mut self.nodes[target.0].grad {
                    Some(acc) => acc.add_assign(&delta)?,
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        let entries = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { trainable: true }))
            .map(|(i, n)| {
                let g = n
                    .grad
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()));
                (NodeId(i), g)
            })
            .collect();
        Ok(Gradients { entries })
    }

    fn local_grads(&self, i: usize, g: &Matrix<T>) -> Result<Vec<(NodeId, Matrix<T>)>> {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        Ok(match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_t(val(*b))?),
                (*b, val(*a).t_matmul(g)?),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![
                (*a, g.hadamard(val(*b))?),
                (*b, g.hadamard(val(*a))?),
            ],
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::Sigmoid(a) => {
                let d = node.value.zip_map(g, |y, gy| gy * y * (T::one() - y))?;
                vec![(*a, d)]
            }
            Op::Tanh(a) => {
                let d = node.value.zip_map(g, |y, gy| gy * (T::one() - y * y))?;
                vec![(*a, d)]
            }
            Op::Relu(a) => {
                let d = val(*a).zip_map(g, |x, gy| if x > T::zero() { gy } else { T::zero() })?;
                vec![(*a, d)]
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Matrix::filled(r, c, g.get(0, 0)))]
            }
            Op::MeanAll(a) => {
                let (r, c) = val(*a).shape();
                let n = T::from_usize_lossy(r * c);
                vec![(*a, Matrix::filled(r, c, g.get(0, 0) / n))]
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let n = T::from_usize_lossy(c);
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row).fill(g.get(row, 0) / n);
                }
                vec![(*a, d)]
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row).fill(g.get(row, 0));
                }
                vec![(*a, d)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::ConcatRows(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    out.push((p, g.slice_rows(offset, rows)?));
                    offset += rows;
                }
                out
            }
            Op::ConcatCols(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    out.push((p, g.slice_cols(offset, cols)?));
                    offset += cols;
                }
                out
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row)[*start..*start + g.cols()].copy_from_slice(g.row(row));
                }
                vec![(*a, d)]
            }
            Op::TileCols(a) => vec![(*a, g.sum_rows())],
            Op::TileRows(a) => {
                let c = g.cols();
                let mut d = Matrix::zeros(1, c);
                for row in 0..g.rows() {
                    for (acc, &x) in d.as_mut_slice().iter_mut().zip(g.row(row)) {
                        *acc += x;
                    }
                }
                vec![(*a, d)]
            }
            Op::RowConv(input, filters) => {
                let (x, f) = (val(*input), val(*filters));
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                let mut df = Matrix::zeros(f.rows(), f.cols());
                for r in 0..x.rows() {
                    for s in 0..g.cols() {
                        let gs = g.get(r, s);
                        for l in 0..f.cols() {
                            dx[(r, s + l)] += gs * f.get(r, l);
                            df[(r, l)] += gs * x.get(r, s + l);
                        }
                    }
                }
                vec![(*input, dx), (*filters, df)]
            }
        })
    }
}

/// Logistic function, kept strictly inside (0, 1) for every finite input.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    y.max(T::min_positive_value()).min(one - T::epsilon())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::row_vector(&[-1.0, 0.0, 2.0]));
        let y = g.elementwise(Elementwise::Relu, &[x]).unwrap();
        assert_eq!(g.value(y).as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_point() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(800.0f64) < 1.0);
        assert!(sigmoid(-800.0f64) > 0.0);
    }

    #[test]
    fn hadamard_definition() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Matrix::row_vector(&[2.0, 3.0]));
        let b = g.constant(Matrix::row_vector(&[4.0, 5.0]));
        let c = g.elementwise(Elementwise::Multiply, &[a, b]).unwrap();
        assert_eq!(g.value(c).as_slice(), &[8.0, 15.0]);
    }

    #[test]
    fn binary_shape_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Matrix::zeros(2, 2));
        let b = g.constant(Matrix::zeros(2, 3));
        assert_eq!(g.add(a, b).unwrap_err().class(), "DimensionError");
        assert!(g.elementwise(Elementwise::Relu, &[a, b]).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let s = g.sum_all(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Matrix::ones(2, 2));
    }

    #[test]
    fn mean_rows_and_mean_all() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap());
        let r = g.mean_rows(m).unwrap();
        assert_eq!(g.value(r).as_slice(), &[2.0, 5.0]);
        let c = g.constant(Matrix::filled(3, 4, 2.5));
        let mean = g.mean_all(c).unwrap();
        assert_eq!(g.value(mean).item().unwrap(), 2.5);
        let empty = g.constant(Matrix::zeros(0, 0));
        assert_eq!(g.mean_all(empty).unwrap_err().class(), "DomainError");
    }

    #[test]
    fn least_squares_gradient_matches_analytic() {
        // loss = mean((W x − y)²) ⇒ dW = 2/n · (W x − y) xᵀ
        let w0 = Matrix::<f64>::from_rows(&[[0.3, -1.2], [0.7, 0.4]]).unwrap();
        let x = Matrix::column(&[1.5, -0.5]);
        let y = Matrix::column(&[0.2, 1.0]);
        let mut g = Graph::new();
        let w = g.param(w0.clone());
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let wx = g.matmul(w, xn).unwrap();
        let d = g.sub(wx, yn).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.mean_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        let resid = w0.matmul(&x).unwrap().sub(&y).unwrap();
        let expected = resid.matmul_t(&x).unwrap().scale(2.0 / 2.0);
        let got = grads.get(w).unwrap();
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Matrix::from_rows(&[[0.5, -0.25]]).unwrap());
        let t = g.tanh(w);
        let s = g.mul(t, w).unwrap();
        let loss = g.sum_all(s).unwrap();
        let first = g.backward(loss).unwrap();
        let second = g.backward(loss).unwrap();
        assert_eq!(first.get(w), second.get(w));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Matrix::zeros(2, 1));
        assert_eq!(g.backward(w).unwrap_err().class(), "ContractError");
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Matrix::ones(1, 1));
        let b = g.param(Matrix::ones(2, 2));
        let loss = g.scale(a, 3.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().item().unwrap(), 3.0);
        assert_eq!(grads.get(b).unwrap(), &Matrix::zeros(2, 2));
    }
}
