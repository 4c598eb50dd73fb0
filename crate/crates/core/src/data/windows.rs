use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphs::{build_window_graph, normalize_adjacency, WindowGraph};
use crate::model::WindowSample;
use crate::numcore::Matrix;
use crate::scalar::Scalar;
use crate::signal::{align_imf_count, eemd, median_imf_count, EemdConfig, ImfBlock, ImfSet};

use super::panel::Panel;

/// Where the IMF channels of a window come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImfMode {
    /// Training windows slice one decomposition of the whole training
    /// range; every other window decomposes only the history up to its end.
    TrainHistory,
    /// Every window decomposes only the history up to its end.
    Causal,
    /// All IMF channels are zero; nothing is decomposed.
    Off,
}

impl ImfMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ImfMode::TrainHistory => "train-history",
            ImfMode::Causal => "causal",
            ImfMode::Off => "off",
        }
    }
}

impl std::str::FromStr for ImfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-history" => Ok(ImfMode::TrainHistory),
            "causal" => Ok(ImfMode::Causal),
            "off" => Ok(ImfMode::Off),
            other => Err(Error::Config {
                key: "imf.mode".into(),
                msg: format!("expected `train-history`, `causal` or `off`, got `{other}`"),
            }),
        }
    }
}

/// Settings that turn a panel into window samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub tau: usize,
    pub horizon: usize,
    /// Rows ending at `t_j` over which sensor similarity is measured.
    pub graph_lookback: usize,
    pub eemd: EemdConfig,
    /// IMFs kept per sensor; the median sensor count when unset.
    pub k_target: Option<usize>,
    pub imf_mode: ImfMode,
    /// Trailing rows decomposed for a per-window decomposition; 0 keeps
    /// the whole history.
    pub imf_history: usize,
}

impl FeatureConfig {
    pub fn new(tau: usize, horizon: usize) -> Self {
        Self {
            tau,
            horizon,
            graph_lookback: tau,
            eemd: EemdConfig::default(),
            k_target: None,
            imf_mode: ImfMode::TrainHistory,
            imf_history: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 2 {
            return Err(Error::contract(format!("tau must be at least 2, got {}", self.tau)));
        }
        if self.horizon == 0 {
            return Err(Error::contract("horizon must be at least 1"));
        }
        if self.graph_lookback < 2 {
            return Err(Error::contract("graph lookback must be at least 2"));
        }
        if self.k_target == Some(0) {
            return Err(Error::contract("k_target must be at least 1"));
        }
        if self.imf_history != 0 && self.imf_history < self.tau.max(4) {
            return Err(Error::contract(format!(
                "imf history {} is shorter than the window",
                self.imf_history
            )));
        }
        self.eemd.validate()
    }

    /// Smallest panel length that leaves at least one sample per split.
    pub fn min_len(&self) -> usize {
        self.tau + self.horizon + 9
    }
}

/// Per-sensor z-scoring statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Scaler<T> {
    /// Population mean and standard deviation over `rows`; a zero spread
    /// is replaced by 1.
    pub fn fit(values: &Matrix<T>, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > values.rows() {
            return Err(Error::contract(format!("cannot fit scaler on rows {rows:?}")));
        }
        let count = T::from_usize_lossy(rows.len());
        let n = values.cols();
        let mut mean = vec![T::zero(); n];
        for t in rows.clone() {
            for (m, &v) in mean.iter_mut().zip(values.row(t)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![T::zero(); n];
        for t in rows {
            for ((s, &v), &m) in var.iter_mut().zip(values.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > T::zero() && sd.is_finite() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn sensors(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, values: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(values.cols())?;
        let mut out = values.clone();
        for t in 0..out.rows() {
            for (i, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        Ok(out)
    }

    pub fn destandardize(&self, values: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(values.cols())?;
        let mut out = values.clone();
        for t in 0..out.rows() {
            for (i, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = *v * self.std[i] + self.mean[i];
            }
        }
        Ok(out)
    }

    /// Maps one standardized length-N vector back to data units.
    pub fn destandardize_vec(&self, v: &[T]) -> Vec<T> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| x * self.std[i] + self.mean[i])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Scaler<U> {
        Scaler {
            mean: self.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
            std: self.std.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.sensors() {
            return Err(Error::contract(format!(
                "scaler fitted on {} sensors, data has {cols}",
                self.sensors()
            )));
        }
        Ok(())
    }
}

/// Which chronological part of the samples to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config {
                key: "split".into(),
                msg: format!("expected `train`, `val` or `test`, got `{other}`"),
            }),
        }
    }
}

/// Sample index ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// 70/10/20 on `count` window origins, flooring the first two parts.
    pub fn chronological(count: usize) -> Self {
        let train = count * 7 / 10;
        let val = count / 10;
        Self {
            train: 0..train,
            val: train..train + val,
            test: train + val..count,
        }
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Builds samples for arbitrary origins of one standardized panel.
#[derive(Debug, Clone)]
pub struct FeatureBuilder<T> {
    cfg: FeatureConfig,
    standardized: Matrix<T>,
    train_end: usize,
    k_target: usize,
    train_block: Option<ImfBlock<T>>,
    graphs: Vec<WindowGraph<T>>,
    adjacency: Vec<Matrix<T>>,
}

impl<T: Scalar> FeatureBuilder<T> {
    /// `train_end` is the exclusive end of the training rows.
    pub fn new(standardized: Matrix<T>, train_end: usize, cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let len = standardized.rows();
        if train_end < 4 || train_end > len {
            return Err(Error::contract(format!(
                "training range of {train_end} rows is unusable for a panel of {len} rows"
            )));
        }
        let (train_block, k_target) = match cfg.imf_mode {
            ImfMode::Off => (None, cfg.k_target.unwrap_or(1)),
            ImfMode::TrainHistory => {
                let sets = decompose_rows(&standardized, 0..train_end, &cfg.eemd)?;
                let k = cfg.k_target.unwrap_or_else(|| median_imf_count(&sets));
                (Some(align_imf_count(&sets, k)?), k)
            }
            ImfMode::Causal => {
                let k = match cfg.k_target {
                    Some(k) => k,
                    None => {
                        let start = history_start(train_end - 1, cfg.imf_history);
                        median_imf_count(&decompose_rows(&standardized, start..train_end, &cfg.eemd)?)
                    }
                };
                (None, k)
            }
        };
        let graphs: Vec<WindowGraph<T>> = (0..len)
            .into_par_iter()
            .map(|t| {
                let mut g = build_window_graph(&standardized, t.max(1), cfg.graph_lookback)?;
                g.t_index = t;
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let adjacency = graphs.iter().map(normalize_adjacency).collect();
        Ok(Self {
            cfg,
            standardized,
            train_end,
            k_target,
            train_block,
            graphs,
            adjacency,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn k_target(&self) -> usize {
        self.k_target
    }

    /// IMF feature channels per sensor, residual included.
    pub fn channels(&self) -> usize {
        self.k_target + 1
    }

    pub fn standardized(&self) -> &Matrix<T> {
        &self.standardized
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    /// Origins strictly below this value form the training split.
    pub fn train_origin_end(&self) -> usize {
        self.train_end.saturating_sub(self.cfg.horizon)
    }

    pub fn graph(&self, t: usize) -> Result<&WindowGraph<T>> {
        self.graphs.get(t).ok_or_else(|| Error::Bounds {
            index: t as i64,
            detail: format!("panel has {} time steps", self.graphs.len()),
        })
    }

    fn check_origin(&self, origin: usize) -> Result<()> {
        let len = self.standardized.rows();
        if origin + 1 < self.cfg.tau || origin >= len {
            return Err(Error::Bounds {
                index: origin as i64,
                detail: format!(
                    "window origin must lie in [{}, {}] for tau = {}",
                    self.cfg.tau - 1,
                    len.saturating_sub(1),
                    self.cfg.tau
                ),
            });
        }
        Ok(())
    }

    /// One `N × K` IMF matrix per window step for the window ending at `origin`.
    pub fn imf_window(&self, origin: usize) -> Result<Vec<Matrix<T>>> {
        self.check_origin(origin)?;
        let tau = self.cfg.tau;
        let n = self.standardized.cols();
        let k = self.channels();
        let first = origin + 1 - tau;
        let block = match (&self.train_block, self.cfg.imf_mode) {
            (_, ImfMode::Off) => return Ok(vec![Matrix::zeros(n, k); tau]),
            (Some(b), ImfMode::TrainHistory) if origin < self.train_origin_end() => {
                return Ok(slice_block(b, first, tau));
            }
            _ => {
                let start = history_start(origin, self.cfg.imf_history);
                let sets = decompose_rows(&self.standardized, start..origin + 1, &self.cfg.eemd)?;
                align_imf_count(&sets, self.k_target)?
            }
        };
        let offset = block.len() - tau;
        Ok(slice_block(&block, offset, tau))
    }

    /// Sample whose last observed step is `origin`; the target is left at
    /// zero when `origin + Δ` lies beyond the panel.
    pub fn sample(&self, origin: usize) -> Result<WindowSample<T>> {
        self.check_origin(origin)?;
        let tau = self.cfg.tau;
        let first = origin + 1 - tau;
        let raw = self.standardized.slice_rows(first, tau)?;
        let target_index = origin + self.cfg.horizon;
        let target = if target_index < self.standardized.rows() {
            self.standardized.row(target_index).to_vec()
        } else {
            vec![T::zero(); self.standardized.cols()]
        };
        let imf = self.imf_window(origin)?;
        let graphs = self.graphs[first..=origin].to_vec();
        let adjacency = self.adjacency[first..=origin].to_vec();
        Ok(WindowSample {
            origin,
            target_index,
            raw_window: raw,
            imf_window: imf,
            graphs,
            adjacency,
            target,
        })
    }
}

fn history_start(origin: usize, history: usize) -> usize {
    if history == 0 {
        0
    } else {
        (origin + 1).saturating_sub(history)
    }
}

/// Decomposes every sensor over `rows`. Sensor `i` uses EEMD seed
/// `seed + i · ensemble_size` so ensemble members never share noise.
fn decompose_rows<T: Scalar>(values: &Matrix<T>, rows: Range<usize>, cfg: &EemdConfig) -> Result<Vec<ImfSet<T>>> {
    (0..values.cols())
        .map(|i| {
            let series: Vec<T> = rows.clone().map(|t| values.get(t, i)).collect();
            let mut c = *cfg;
            c.seed = cfg.seed.wrapping_add((i * cfg.ensemble_size) as u64);
            eemd(&series, &c)
        })
        .collect()
}

fn slice_block<T: Scalar>(block: &ImfBlock<T>, first: usize, tau: usize) -> Vec<Matrix<T>> {
    let n = block.sensors();
    let k = block.k();
    (first..first + tau)
        .map(|t| {
            let mut m = Matrix::zeros(n, k);
            for (c, ch) in block.channels.iter().enumerate() {
                for i in 0..n {
                    m[(i, c)] = ch.get(t, i);
                }
            }
            m
        })
        .collect()
}

/// Chronologically split window samples plus the statistics used to build them.
#[derive(Debug, Clone)]
pub struct WindowedDataset<T> {
    pub samples: Vec<WindowSample<T>>,
    pub splits: Splits,
    pub tau: usize,
    pub horizon: usize,
    /// IMF feature channels per sensor, residual included.
    pub k: usize,
    pub scaler: Scaler<T>,
    /// Exclusive end of the rows the scaler was fitted on.
    pub train_end: usize,
    pub sensor_ids: Vec<String>,
}

impl<T: Scalar> WindowedDataset<T> {
    pub fn split(&self, split: Split) -> &[WindowSample<T>] {
        &self.samples[self.splits.range(split)]
    }

    pub fn sensors(&self) -> usize {
        self.scaler.sensors()
    }
}

/// Sample count, and the exclusive end of the training rows, for a panel of
/// `len` steps.
pub fn layout(len: usize, cfg: &FeatureConfig) -> Result<(usize, Splits, usize)> {
    if len < cfg.min_len() {
        return Err(Error::contract(format!(
            "panel has {len} time steps; tau = {} and horizon = {} need at least {}",
            cfg.tau,
            cfg.horizon,
            cfg.min_len()
        )));
    }
    let count = len - cfg.tau - cfg.horizon + 1;
    let splits = Splits::chronological(count);
    // last training origin is tau - 1 + train - 1; its target follows by horizon
    let train_end = cfg.tau + splits.train.len() + cfg.horizon - 1;
    Ok((count, splits, train_end))
}

/// Windows the panel into one sample per origin `t ∈ [τ−1, T−Δ−1]` and
/// splits the origins 70/10/20. Values are z-scored with statistics of the
/// training rows (inputs and targets of training samples).
pub fn make_windows<T: Scalar>(panel: &Panel<T>, cfg: &FeatureConfig) -> Result<WindowedDataset<T>> {
    cfg.validate()?;
    if panel.sensors() < 2 {
        return Err(Error::contract(format!(
            "window graphs need at least 2 sensors, panel has {}",
            panel.sensors()
        )));
    }
    let (_, _, train_end) = layout(panel.len(), cfg)?;
    let scaler = Scaler::fit(&panel.values, 0..train_end)?;
    make_windows_with_scaler(panel, cfg, scaler)
}

/// [`make_windows`] with fixed standardization statistics, e.g. those stored
/// alongside a trained model.
pub fn make_windows_with_scaler<T: Scalar>(
    panel: &Panel<T>,
    cfg: &FeatureConfig,
    scaler: Scaler<T>,
) -> Result<WindowedDataset<T>> {
    cfg.validate()?;
    if panel.sensors() < 2 {
        return Err(Error::contract(format!(
            "window graphs need at least 2 sensors, panel has {}",
            panel.sensors()
        )));
    }
    if scaler.sensors() != panel.sensors() {
        return Err(Error::contract(format!(
            "scaler covers {} sensors, panel has {}",
            scaler.sensors(),
            panel.sensors()
        )));
    }
    let (count, splits, train_end) = layout(panel.len(), cfg)?;
    let standardized = scaler.standardize(&panel.values)?;
    let builder = FeatureBuilder::new(standardized, train_end, *cfg)?;
    let samples = (0..count)
        .into_par_iter()
        .map(|s| builder.sample(cfg.tau - 1 + s))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowedDataset {
        samples,
        splits,
        tau: cfg.tau,
        horizon: cfg.horizon,
        k: builder.channels(),
        scaler,
        train_end,
        sensor_ids: panel.sensor_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(len: usize, n: usize) -> Panel<f64> {
        let data = (0..len * n)
            .map(|i| ((i as f64) * 0.37).sin() * 3.0 + (i % n) as f64)
            .collect();
        Panel::from_values(Matrix::from_vec(len, n, data).unwrap(), (0..n).map(|i| format!("s{i}")).collect())
            .unwrap()
    }

    fn quick(tau: usize, horizon: usize) -> FeatureConfig {
        let mut c = FeatureConfig::new(tau, horizon);
        c.eemd.ensemble_size = 2;
        c.imf_history = 32;
        c
    }

    #[test]
    fn counting_oracle() {
        let ds = make_windows(&panel(100, 3), &quick(6, 1)).unwrap();
        assert_eq!(ds.samples.len(), 100 - 6 - 1 + 1);
        assert_eq!(ds.splits.train.len(), 65);
        assert_eq!(ds.splits.val.len(), 9);
        assert_eq!(ds.splits.test.len(), 20);
        assert_eq!(ds.samples.last().unwrap().target_index, 99);
        assert_eq!(ds.samples[0].origin, 5);
    }

    #[test]
    fn no_leakage_between_windows_and_targets() {
        let ds = make_windows(&panel(100, 3), &quick(6, 2)).unwrap();
        for s in &ds.samples {
            assert!(s.graphs.iter().all(|g| g.t_index <= s.origin));
            assert_eq!(s.target_index, s.origin + 2);
        }
        let first_test = &ds.samples[ds.splits.test.start];
        assert!(first_test.origin + 1 - ds.tau >= ds.train_end);
    }

    #[test]
    fn statistics_ignore_test_rows() {
        let p = panel(100, 3);
        let a = make_windows(&p, &quick(6, 1)).unwrap();
        let mut q = p.clone();
        for t in 90..100 {
            q.values[(t, 1)] += 1000.0;
        }
        let b = make_windows(&q, &quick(6, 1)).unwrap();
        assert_eq!(a.scaler, b.scaler);
        assert_eq!(a.split(Split::Train), b.split(Split::Train));
    }

    #[test]
    fn deterministic() {
        let p = panel(80, 3);
        let a = make_windows(&p, &quick(6, 1)).unwrap();
        let b = make_windows(&p, &quick(6, 1)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn too_short_states_minimum() {
        let e = make_windows(&panel(15, 3), &quick(6, 1)).unwrap_err();
        assert_eq!(e.class(), "ContractError");
        assert!(e.to_string().contains("at least 16"), "{e}");
    }

    #[test]
    fn scaler_round_trip() {
        let p = panel(60, 4);
        let s = Scaler::fit(&p.values, 0..40).unwrap();
        let back = s.destandardize(&s.standardize(&p.values).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(p.values.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn imf_channels_reconstruct_window_values() {
        for mode in [ImfMode::TrainHistory, ImfMode::Causal] {
            let mut cfg = quick(6, 1);
            cfg.imf_mode = mode;
            let ds = make_windows(&panel(120, 3), &cfg).unwrap();
            for s in ds.samples.iter().step_by(7) {
                for (j, imf) in s.imf_window.iter().enumerate() {
                    for i in 0..3 {
                        let sum: f64 = imf.row(i).iter().sum();
                        assert!((sum - s.raw_window.get(j, i)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn off_mode_is_all_zero() {
        let mut cfg = quick(6, 1);
        cfg.imf_mode = ImfMode::Off;
        cfg.k_target = Some(3);
        let ds = make_windows(&panel(60, 3), &cfg).unwrap();
        assert_eq!(ds.k, 4);
        assert!(ds.samples[0].imf_window.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn sample_origin_bounds() {
        let p = panel(60, 3);
        let s = Scaler::fit(&p.values, 0..40).unwrap();
        let b = FeatureBuilder::new(s.standardize(&p.values).unwrap(), 40, quick(6, 1)).unwrap();
        assert_eq!(b.sample(4).unwrap_err().class(), "BoundsError");
        assert_eq!(b.sample(60).unwrap_err().class(), "BoundsError");
        let last = b.sample(59).unwrap();
        assert!(last.target.iter().all(|&v| v == 0.0));
    }
}
