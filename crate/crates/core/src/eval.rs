//! Error and ranking metrics, split-level evaluation, and reference
//! baselines.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, WindowSample};
use crate::scalar::Scalar;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "metric needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `(1/N) Σ |pred_i − truth_i|`
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `√((1/N) Σ (pred_i − truth_i)²)`
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(mean_squared_error(pred, truth)?.sqrt())
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Indices sorted by descending value, ties broken by lower index.
/// Signed zeros tie.
pub fn ranking(values: &[f64]) -> Vec<usize> {
    let key = |i: usize| if values[i] == 0.0 { 0.0 } else { values[i] };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx
}

/// Fraction of the true top-k sensors found in the predicted top-k.
pub fn precision_at_k(pred: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    if k == 0 || pred.len() < k {
        return Err(Error::contract(format!(
            "precision@k needs 1 <= k <= N, got k = {k}, N = {}",
            pred.len()
        )));
    }
    let top_pred = &ranking(pred)[..k];
    let top_true = &ranking(truth)[..k];
    let hits = top_pred.iter().filter(|i| top_true.contains(i)).count();
    Ok(hits as f64 / k as f64)
}

/// Normalized DCG of the predicted order with gains equal to the truth
/// values (shifted to start at zero when any is negative) and discount
/// `1 / log2(rank + 1)`. An ideal DCG of zero yields 1.
pub fn ndcg(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let min = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let gain = |i: usize| truth[i] + shift;
    let dcg = |order: &[usize]| -> f64 {
        order
            .iter()
            .enumerate()
            .map(|(r, &i)| gain(i) / ((r + 2) as f64).log2())
            .sum()
    };
    let ideal = dcg(&ranking(truth));
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok((dcg(&ranking(pred)) / ideal).min(1.0))
}

/// Metrics of one sample, in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub origin: usize,
    pub mae: f64,
    pub mse: f64,
    pub p_at_k: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    /// Mean of per-sample MAE.
    pub mae: f64,
    /// Root of the pooled mean squared error.
    pub rmse: f64,
    pub p_at_k: f64,
    pub ndcg: f64,
    pub k: usize,
    pub horizon: usize,
    pub samples: Vec<SampleMetrics>,
}

/// Forecasts of one split in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitForecast {
    pub origins: Vec<usize>,
    pub predictions: Vec<Vec<f64>>,
    pub truths: Vec<Vec<f64>>,
}

/// Runs `predict` (standardized in, standardized out) on every sample of
/// `split` and maps both forecasts and targets back to data units.
pub fn forecast_split<T, F>(dataset: &WindowedDataset<T>, split: Split, predict: F) -> Result<SplitForecast>
where
    T: Scalar,
    F: Fn(&WindowSample<T>) -> Result<Vec<T>> + Sync,
{
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::contract(format!("split `{}` is empty", split.as_str())));
    }
    let to_f64 = |v: Vec<T>| v.into_iter().map(Scalar::as_f64).collect::<Vec<f64>>();
    let predictions = samples
        .par_iter()
        .map(|s| {
            let p = predict(s)?;
            if p.len() != dataset.sensors() {
                return Err(Error::contract(format!(
                    "predictor returned {} values for {} sensors",
                    p.len(),
                    dataset.sensors()
                )));
            }
            Ok(to_f64(dataset.scaler.destandardize_vec(&p)))
        })
        .collect::<Result<Vec<_>>>()?;
    let truths = samples
        .iter()
        .map(|s| to_f64(dataset.scaler.destandardize_vec(&s.target)))
        .collect();
    Ok(SplitForecast {
        origins: samples.iter().map(|s| s.origin).collect(),
        predictions,
        truths,
    })
}

/// Split-level metrics of a set of forecasts. Ranking gains are shifted by
/// the split's minimum truth value when it is negative.
pub fn score(name: &str, fc: &SplitForecast, k: usize, horizon: usize) -> Result<EvalReport> {
    if fc.predictions.is_empty() {
        return Err(Error::contract("cannot score an empty forecast"));
    }
    let floor = fc
        .truths
        .iter()
        .flatten()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let shift = if floor < 0.0 { -floor } else { 0.0 };
    let mut samples = Vec::with_capacity(fc.predictions.len());
    for ((p, t), &origin) in fc.predictions.iter().zip(&fc.truths).zip(&fc.origins) {
        let shifted: Vec<f64> = t.iter().map(|v| v + shift).collect();
        samples.push(SampleMetrics {
            origin,
            mae: mae(p, t)?,
            mse: mean_squared_error(p, t)?,
            p_at_k: precision_at_k(p, t, k)?,
            ndcg: ndcg(p, &shifted)?,
        });
    }
    let count = samples.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / count;
    Ok(EvalReport {
        name: name.to_string(),
        mae: mean(|s| s.mae),
        rmse: mean(|s| s.mse).sqrt(),
        p_at_k: mean(|s| s.p_at_k),
        ndcg: mean(|s| s.ndcg),
        k,
        horizon,
        samples,
    })
}

/// Evaluates an arbitrary predictor; the hook used for oracle injection.
pub fn evaluate_with<T, F>(
    name: &str,
    dataset: &WindowedDataset<T>,
    split: Split,
    k: usize,
    predict: F,
) -> Result<EvalReport>
where
    T: Scalar,
    F: Fn(&WindowSample<T>) -> Result<Vec<T>> + Sync,
{
    let fc = forecast_split(dataset, split, predict)?;
    score(name, &fc, k, dataset.horizon)
}

pub fn evaluate<T: Scalar>(params: &ModelParams<T>, dataset: &WindowedDataset<T>, split: Split, k: usize) -> Result<EvalReport> {
    evaluate_with("agstn", dataset, split, k, |s| Ok(forward(s, params)?.prediction))
}

/// Per-sensor `x_{t+Δ} ≈ a + b · x_t`, fitted on standardized training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1 {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
}

impl Ar1 {
    pub fn fit<T: Scalar>(dataset: &WindowedDataset<T>) -> Result<Self> {
        let train = dataset.split(Split::Train);
        if train.is_empty() {
            return Err(Error::contract("AR(1) needs a non-empty training split"));
        }
        let n = dataset.sensors();
        let tau = dataset.tau;
        let (mut intercept, mut slope) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let xs: Vec<f64> = train.iter().map(|s| s.raw_window.get(tau - 1, i).as_f64()).collect();
            let ys: Vec<f64> = train.iter().map(|s| s.target[i].as_f64()).collect();
            let m = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let b = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
            slope.push(b);
            intercept.push(my - b * mx);
        }
        Ok(Self { intercept, slope })
    }

    pub fn predict<T: Scalar>(&self, sample: &WindowSample<T>) -> Vec<T> {
        let last = sample.raw_window.row(sample.raw_window.rows() - 1);
        last.iter()
            .enumerate()
            .map(|(i, &x)| T::lit(self.intercept[i] + self.slope[i] * x.as_f64()))
            .collect()
    }
}

/// Persistence (`X^t` for `X^{t+Δ}`) and AR(1) reference reports.
pub fn baselines<T: Scalar>(dataset: &WindowedDataset<T>, split: Split, k: usize) -> Result<Vec<EvalReport>> {
    let persistence = evaluate_with("persistence", dataset, split, k, |s| {
        Ok(s.raw_window.row(s.raw_window.rows() - 1).to_vec())
    })?;
    let ar = Ar1::fit(dataset)?;
    let ar1 = evaluate_with("ar1", dataset, split, k, |s| Ok(ar.predict(s)))?;
    Ok(vec![persistence, ar1])
}

/// `metric,value` rows, one block per report, names prefixed by the report.
pub fn write_reports_csv<W: Write>(mut out: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(out, "metric,value")?;
    for r in reports {
        writeln!(out, "{}.mae,{}", r.name, r.mae)?;
        writeln!(out, "{}.rmse,{}", r.name, r.rmse)?;
        writeln!(out, "{}.p_at_{},{}", r.name, r.k, r.p_at_k)?;
        writeln!(out, "{}.ndcg,{}", r.name, r.ndcg)?;
    }
    Ok(())
}

/// Per-sample top-k sensor lists: `origin,rank,predicted_sensor,true_sensor`.
pub fn write_rankings<W: Write>(mut out: W, fc: &SplitForecast, sensor_ids: &[String], k: usize) -> std::io::Result<()> {
    writeln!(out, "origin,rank,predicted_sensor,true_sensor")?;
    for ((p, t), origin) in fc.predictions.iter().zip(&fc.truths).zip(&fc.origins) {
        let (rp, rt) = (ranking(p), ranking(t));
        for r in 0..k.min(p.len()) {
            writeln!(out, "{origin},{},{},{}", r + 1, sensor_ids[rp[r]], sensor_ids[rt[r]])?;
        }
    }
    Ok(())
}
