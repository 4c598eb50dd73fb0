//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

/// Worst deviation found for one parameter array.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_deviation: f64,
    /// Flat index of the worst entry.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose relative deviation exceeds the tolerance.
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures.is_empty())
    }

    pub fn max_rel_deviation(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_deviation)
            .fold(0.0, f64::max)
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of `f` against central differences.
///
/// `f` receives a fresh graph plus one trainable node per entry of `params`
/// and must return a 1×1 loss node.
pub fn grad_check<T, F>(f: F, params: &[Matrix<T>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |ps: &[Matrix<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let v = g.value(loss).item()?.as_f64();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("objective returned {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    if !g.value(loss).item()?.is_finite() {
        return Err(Error::Evaluation("objective is not finite".into()));
    }
    let grads = g.backward(loss)?;

    let mut work: Vec<Matrix<T>> = params.to_vec();
    let h = T::lit(step);
    let mut report = Vec::with_capacity(params.len());
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .expect("every param node is a trainable leaf");
        let mut check = ParamCheck {
            index: pi,
            max_rel_deviation: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            failures: Vec::new(),
        };
        for e in 0..params[pi].len() {
            let orig = work[pi].as_slice()[e];
            work[pi].as_mut_slice()[e] = orig + h;
            let up = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig - h;
            let down = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.as_slice()[e].as_f64();
            let dev = relative_deviation(a, numeric);
            if dev > check.max_rel_deviation || e == 0 {
                check.max_rel_deviation = dev;
                check.worst_entry = e;
                check.analytic = a;
                check.numeric = numeric;
            }
            if dev > tolerance {
                check.failures.push(e);
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
