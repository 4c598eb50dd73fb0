use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct NaturalSpline<T> {
    xs: Vec<T>,
    ys: Vec<T>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<T>,
}

impl<T: Scalar> NaturalSpline<T> {
    pub fn new(xs: &[T], ys: &[T]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::Dimension {
                op: "spline",
                left: (n, 1),
                right: (ys.len(), 1),
            });
        }
        if n < 2 {
            return Err(Error::EnvelopeUndefined { found: n });
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![T::zero(); n];
        if n > 2 {
            // Thomas algorithm on the interior system.
            let k = n - 2;
            let two = T::lit(2.0);
            let six = T::lit(6.0);
            let mut diag = vec![T::zero(); k];
            let mut upper = vec![T::zero(); k];
            let mut rhs = vec![T::zero(); k];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                diag[i - 1] = two * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = six * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] = rhs[i] - w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    /// Evaluates the spline; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: T) -> T {
        let n = self.xs.len();
        let seg = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        self.eval_segment(seg, x)
    }

    fn eval_segment(&self, i: usize, x: T) -> T {
        let six = T::lit(6.0);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / six
    }

    /// Evaluates at the integer grid `0..len`, walking segments in order.
    pub fn eval_grid(&self, len: usize) -> Vec<T> {
        let n = self.xs.len();
        let mut seg = 0;
        (0..len)
            .map(|t| {
                let x = T::from_usize_lossy(t);
                while seg + 2 < n && x > self.xs[seg + 1] {
                    seg += 1;
                }
                self.eval_segment(seg, x)
            })
            .collect()
    }
}
