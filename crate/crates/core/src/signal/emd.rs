use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;
use crate::signal::{envelope, find_extrema};

/// Sifting and stopping parameters shared by EMD and EEMD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmdConfig {
    pub max_sift_iterations: usize,
    /// Cauchy-type threshold on `Σ(h_prev − h)² / Σ h_prev²`.
    pub sift_threshold: f64,
    pub max_imfs: usize,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            max_sift_iterations: 50,
            sift_threshold: 0.2,
            max_imfs: 8,
        }
    }
}

impl EmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_imfs == 0 {
            return Err(Error::contract("max_imfs must be at least 1"));
        }
        if self.max_sift_iterations == 0 {
            return Err(Error::contract("max_sift_iterations must be at least 1"));
        }
        if !(self.sift_threshold > 0.0 && self.sift_threshold.is_finite()) {
            return Err(Error::contract("sift_threshold must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EemdConfig {
    pub ensemble_size: usize,
    /// Noise standard deviation as a fraction of the input's standard deviation.
    pub noise_std_ratio: f64,
    pub emd: EmdConfig,
    pub seed: u64,
}

impl Default for EemdConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 50,
            noise_std_ratio: 0.2,
            emd: EmdConfig::default(),
            seed: 0,
        }
    }
}

impl EemdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::contract("ensemble_size must be at least 1"));
        }
        if !(self.noise_std_ratio >= 0.0 && self.noise_std_ratio.is_finite()) {
            return Err(Error::contract("noise_std_ratio must be a finite value >= 0"));
        }
        self.emd.validate()
    }
}

/// Decomposition of one series into `k` IMFs (rows) plus a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfSet<T> {
    pub imfs: Matrix<T>,
    pub residual: Vec<T>,
}

impl<T: Scalar> ImfSet<T> {
    pub fn k(&self) -> usize {
        self.imfs.rows()
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    pub fn imf(&self, k: usize) -> &[T] {
        self.imfs.row(k)
    }

    /// Column sum of the IMFs plus the residual.
    pub fn reconstruct(&self) -> Vec<T> {
        let mut out = self.residual.clone();
        for k in 0..self.k() {
            for (o, &v) in out.iter_mut().zip(self.imfs.row(k)) {
                *o += v;
            }
        }
        out
    }

    fn from_parts(x: &[T], imfs: Vec<Vec<T>>) -> Self {
        let residual = residual_of(x, &imfs);
        let len = x.len();
        let k = imfs.len();
        let data: Vec<T> = imfs.into_iter().flatten().collect();
        Self {
            imfs: Matrix::from_vec(k, len, data).expect("imf rows share the series length"),
            residual,
        }
    }
}

/// `x − Σ imfs`, summing the IMFs in order before subtracting.
fn residual_of<T: Scalar>(x: &[T], imfs: &[Vec<T>]) -> Vec<T> {
    x.iter()
        .enumerate()
        .map(|(t, &v)| {
            let s = imfs.iter().fold(T::zero(), |acc, imf| acc + imf[t]);
            v - s
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SiftOutcome<T> {
    pub imf: Vec<T>,
    pub remainder: Vec<T>,
    pub iterations: usize,
}

/// Extracts one IMF by repeatedly subtracting the envelope mean.
pub fn sift<T: Scalar>(x: &[T], cfg: &EmdConfig) -> Result<SiftOutcome<T>> {
    let ex = find_extrema(x)?;
    if ex.maxima.len() < 2 || ex.minima.len() < 2 {
        return Err(Error::InsufficientExtrema {
            maxima: ex.maxima.len(),
            minima: ex.minima.len(),
        });
    }
    let len = x.len();
    let half = T::lit(0.5);
    let threshold = T::lit(cfg.sift_threshold);
    let mut h = x.to_vec();
    let mut iterations = 0;
    let mut ex = ex;
    while iterations < cfg.max_sift_iterations {
        if ex.maxima.len() < 2 || ex.minima.len() < 2 {
            break;
        }
        let upper = envelope(len, &ex.maxima)?;
        let lower = envelope(len, &ex.minima)?;
        let mut change = T::zero();
        let mut energy = T::zero();
        for t in 0..len {
            let mean = (upper[t] + lower[t]) * half;
            energy += h[t] * h[t];
            change += mean * mean;
            h[t] -= mean;
        }
        iterations += 1;
        if energy == T::zero() || change / energy < threshold {
            break;
        }
        ex = find_extrema(&h)?;
    }
    let remainder = x.iter().zip(&h).map(|(&a, &b)| a - b).collect();
    Ok(SiftOutcome {
        imf: h,
        remainder,
        iterations,
    })
}

/// Empirical mode decomposition.
pub fn emd<T: Scalar>(x: &[T], cfg: &EmdConfig) -> Result<ImfSet<T>> {
    cfg.validate()?;
    if x.len() < 4 {
        return Err(Error::SeriesTooShort { len: x.len(), min: 4 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let mut imfs = Vec::new();
    let mut rest = x.to_vec();
    while imfs.len() < cfg.max_imfs {
        let ex = find_extrema(&rest)?;
        if ex.maxima.len() < 2 || ex.minima.len() < 2 {
            break;
        }
        let s = sift(&rest, cfg)?;
        rest = s.remainder;
        imfs.push(s.imf);
    }
    Ok(ImfSet::from_parts(x, imfs))
}

fn population_std<T: Scalar>(x: &[T]) -> T {
    let n = T::from_usize_lossy(x.len());
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    (x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n).sqrt()
}

/// Ensemble EMD: averages the decompositions of noise-perturbed copies.
///
/// Member `m` draws its noise from a generator seeded with `seed + m`, so
/// the result does not depend on how members are scheduled.
pub fn eemd<T: Scalar>(x: &[T], cfg: &EemdConfig) -> Result<ImfSet<T>> {
    cfg.validate()?;
    if x.len() < 4 {
        return Err(Error::SeriesTooShort { len: x.len(), min: 4 });
    }
    let sigma = cfg.noise_std_ratio * population_std(x).as_f64();
    let run_member = |m: usize| -> Result<ImfSet<T>> {
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(m as u64));
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
            let noisy: Vec<T> = x
                .iter()
                .map(|&v| v + T::lit(normal.sample(&mut rng)))
                .collect();
            emd(&noisy, &cfg.emd)
        } else {
            emd(x, &cfg.emd)
        }
    };
    let members: Vec<ImfSet<T>> = if cfg.ensemble_size > 1 {
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(run_member)
            .collect::<Result<_>>()?
    } else {
        vec![run_member(0)?]
    };

    let k_max = members.iter().map(ImfSet::k).max().unwrap_or(0);
    let mut averaged: Vec<Vec<T>> = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let mut acc: Option<Vec<T>> = None;
        let mut count = 0usize;
        for m in members.iter().filter(|m| m.k() > k) {
            count += 1;
            match &mut acc {
                None => acc = Some(m.imf(k).to_vec()),
                Some(a) => {
                    for (s, &v) in a.iter_mut().zip(m.imf(k)) {
                        *s += v;
                    }
                }
            }
        }
        let mut a = acc.expect("k < k_max implies at least one member");
        let denom = T::from_usize_lossy(count);
        for v in &mut a {
            *v = *v / denom;
        }
        averaged.push(a);
    }
    Ok(ImfSet::from_parts(x, averaged))
}

/// IMF feature block: `channels[c]` is a `T × N` matrix (time rows, sensor
/// columns). The last channel is the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfBlock<T> {
    pub channels: Vec<Matrix<T>>,
}

impl<T: Scalar> ImfBlock<T> {
    /// Channel count, residual included.
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensors(&self) -> usize {
        self.channels.first().map_or(0, Matrix::cols)
    }

    pub fn reconstruct_sensor(&self, sensor: usize) -> Vec<T> {
        (0..self.len())
            .map(|t| {
                self.channels
                    .iter()
                    .fold(T::zero(), |acc, c| acc + c.get(t, sensor))
            })
            .collect()
    }
}

/// Unifies the IMF count across sensors to `k_target` IMFs plus a residual
/// channel. Surplus IMFs are folded into the residual; missing ones are
/// zero-padded.
pub fn align_imf_count<T: Scalar>(sets: &[ImfSet<T>], k_target: usize) -> Result<ImfBlock<T>> {
    if k_target == 0 {
        return Err(Error::contract("k_target must be at least 1"));
    }
    let Some(first) = sets.first() else {
        return Err(Error::contract("align_imf_count needs at least one sensor"));
    };
    let len = first.len();
    if let Some(bad) = sets.iter().find(|s| s.len() != len) {
        return Err(Error::Dimension {
            op: "align_imf_count",
            left: (first.k(), len),
            right: (bad.k(), bad.len()),
        });
    }
    let n = sets.len();
    let mut channels = vec![Matrix::zeros(len, n); k_target + 1];
    for (i, set) in sets.iter().enumerate() {
        for c in 0..k_target.min(set.k()) {
            for (t, &v) in set.imf(c).iter().enumerate() {
                channels[c].set(t, i, v);
            }
        }
        for t in 0..len {
            let surplus = (k_target..set.k()).fold(T::zero(), |acc, c| acc + set.imfs.get(c, t));
            channels[k_target].set(t, i, set.residual[t] + surplus);
        }
    }
    Ok(ImfBlock { channels })
}

/// Lower median of the per-sensor IMF counts, at least 1.
pub fn median_imf_count<T: Scalar>(sets: &[ImfSet<T>]) -> usize {
    let mut ks: Vec<usize> = sets.iter().map(ImfSet::k).collect();
    ks.sort_unstable();
    ks.get(ks.len().saturating_sub(1) / 2).copied().unwrap_or(1).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn pure_sine_sifts_to_itself() {
        let x: Vec<f64> = (0..256).map(|t| (2.0 * PI * t as f64 / 16.0).sin()).collect();
        let s = sift(&x, &EmdConfig::default()).unwrap();
        assert!(rms(&s.remainder) <= 0.05 * rms(&x), "{}", rms(&s.remainder));
        for t in 0..x.len() {
            assert!((s.imf[t] + s.remainder[t] - x[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_plus_trend_separates() {
        let trend: Vec<f64> = (0..256).map(|t| 0.01 * t as f64).collect();
        let tone: Vec<f64> = (0..256).map(|t| (2.0 * PI * t as f64 / 16.0).sin()).collect();
        let x: Vec<f64> = trend.iter().zip(&tone).map(|(a, b)| a + b).collect();
        let s = sift(&x, &EmdConfig::default()).unwrap();
        let e_imf: Vec<f64> = s.imf.iter().zip(&tone).map(|(a, b)| a - b).collect();
        let e_rem: Vec<f64> = s.remainder.iter().zip(&trend).map(|(a, b)| a - b).collect();
        assert!(rms(&e_imf) < 0.1, "{}", rms(&e_imf));
        assert!(rms(&e_rem) < 0.1, "{}", rms(&e_rem));
    }

    #[test]
    fn sift_needs_oscillation() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(
            sift(&x, &EmdConfig::default()).unwrap_err().class(),
            "InsufficientExtrema"
        );
    }

    #[test]
    fn constant_and_ramp_have_no_imfs() {
        let c = vec![3.5f64; 40];
        let set = emd(&c, &EmdConfig::default()).unwrap();
        assert_eq!(set.k(), 0);
        assert_eq!(set.residual, c);
        let ramp: Vec<f64> = (0..40).map(|t| 0.5 * t as f64 - 3.0).collect();
        let set = emd(&ramp, &EmdConfig::default()).unwrap();
        assert_eq!(set.k(), 0);
        assert_eq!(set.residual, ramp);
    }

    #[test]
    fn too_short_series() {
        let err = emd(&[1.0f64, 2.0, 1.0], &EmdConfig::default()).unwrap_err();
        assert_eq!(err.class(), "SeriesTooShortError");
    }

    #[test]
    fn two_tone_first_imf_tracks_fast_tone() {
        let fast: Vec<f64> = (0..256).map(|t| (2.0 * PI * t as f64 / 8.0).sin()).collect();
        let x: Vec<f64> = (0..256)
            .map(|t| fast[t] + (2.0 * PI * t as f64 / 64.0).sin())
            .collect();
        let set = emd(&x, &EmdConfig::default()).unwrap();
        assert!(set.k() >= 2);
        assert!(corr(set.imf(0), &fast) > 0.9);
    }

    #[test]
    fn degenerate_ensemble_equals_emd() {
        let x: Vec<f64> = (0..128)
            .map(|t| (t as f64 * 0.7).sin() + 0.3 * (t as f64 * 0.11).cos())
            .collect();
        let cfg = EemdConfig {
            ensemble_size: 1,
            noise_std_ratio: 0.0,
            ..Default::default()
        };
        assert_eq!(eemd(&x, &cfg).unwrap(), emd(&x, &cfg.emd).unwrap());
    }

    #[test]
    fn eemd_is_seed_deterministic_and_capped() {
        let x: Vec<f64> = (0..200)
            .map(|t| (t as f64 * 0.9).sin() + (t as f64 * 0.05).sin())
            .collect();
        let cfg = EemdConfig {
            ensemble_size: 6,
            seed: 11,
            emd: EmdConfig {
                max_imfs: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = eemd(&x, &cfg).unwrap();
        let b = eemd(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.k() <= 3);
    }

    #[test]
    fn invalid_eemd_config() {
        let x = vec![0.0f64; 16];
        for cfg in [
            EemdConfig { ensemble_size: 0, ..Default::default() },
            EemdConfig { noise_std_ratio: -1.0, ..Default::default() },
            EemdConfig {
                emd: EmdConfig { max_imfs: 0, ..Default::default() },
                ..Default::default()
            },
        ] {
            assert_eq!(eemd(&x, &cfg).unwrap_err().class(), "ContractError");
        }
    }

    fn fake_set(len: usize, k: usize, seed: f64) -> ImfSet<f64> {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..len).map(|t| ((t + 1) as f64 * (c as f64 + seed)).sin()).collect())
            .collect();
        let x: Vec<f64> = (0..len).map(|t| t as f64 * 0.1 + seed).collect();
        ImfSet::from_parts(&x, rows)
    }

    #[test]
    fn align_pure_restack_when_counts_match() {
        let sets = vec![fake_set(10, 2, 0.3), fake_set(10, 2, 1.1)];
        let block = align_imf_count(&sets, 2).unwrap();
        assert_eq!(block.k(), 3);
        for (i, s) in sets.iter().enumerate() {
            for t in 0..10 {
                assert_eq!(block.channels[0].get(t, i), s.imf(0)[t]);
                assert_eq!(block.channels[1].get(t, i), s.imf(1)[t]);
                assert_eq!(block.channels[2].get(t, i), s.residual[t]);
            }
        }
    }

    #[test]
    fn align_folds_surplus_and_pads() {
        let sets = vec![fake_set(12, 1, 0.2), fake_set(12, 2, 0.5), fake_set(12, 3, 0.9)];
        let block = align_imf_count(&sets, 2).unwrap();
        assert_eq!(block.k(), 3);
        // padded channel of the single-IMF sensor is zero
        assert!(block.channels[1].col(0).iter().all(|&v| v == 0.0));
        for (i, s) in sets.iter().enumerate() {
            let orig = s.reconstruct();
            let rebuilt = block.reconstruct_sensor(i);
            for (a, b) in orig.iter().zip(&rebuilt) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        assert!(align_imf_count(&sets, 0).is_err());
    }

    #[test]
    fn median_count() {
        let sets = vec![fake_set(8, 1, 0.1), fake_set(8, 3, 0.2), fake_set(8, 2, 0.3)];
        assert_eq!(median_imf_count(&sets), 2);
        assert_eq!(median_imf_count(&[fake_set(8, 0, 0.1)]), 1);
    }
}
