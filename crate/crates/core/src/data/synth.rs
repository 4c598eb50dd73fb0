use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

use super::panel::Panel;

/// `amplitude · sin(2π t / period + phase)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonalTerm {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl SeasonalTerm {
    pub fn at(&self, t: usize) -> f64 {
        self.amplitude * (2.0 * PI * t as f64 / self.period + self.phase).sin()
    }
}

/// Planted-structure panel: `X^{t+1} = ar · G X^t + seasonal(t) + level +
/// noise`, then `scale · X + offset` per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    /// Row-stochastic `N × N` diffusion matrix `G`.
    pub graph: Matrix<f64>,
    pub ar: f64,
    /// Seasonal terms per sensor.
    pub seasonal: Vec<Vec<SeasonalTerm>>,
    pub noise_std: f64,
    /// Constant per-sensor drive added every step.
    pub levels: Vec<f64>,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Diffusion panel with one daily-style seasonal term per sensor and a
    /// random sparse graph, all drawn from `seed`.
    pub fn diffusion(n: usize, t: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_6a9a);
        let graph = random_diffusion_graph(n, 2, &mut rng);
        let seasonal = (0..n)
            .map(|_| {
                vec![SeasonalTerm {
                    amplitude: rng.random_range(0.2..0.5),
                    period: 24.0,
                    phase: rng.random_range(0.0..2.0 * PI),
                }]
            })
            .collect();
        let scale = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let offset = (0..n).map(|_| rng.random_range(10.0..50.0)).collect();
        Self {
            n,
            t,
            graph,
            ar: 0.9,
            seasonal,
            noise_std: 0.05,
            levels: vec![0.0; n],
            scale,
            offset,
            seed,
        }
    }

    /// Like [`SyntheticSpec::diffusion`] but every sensor mixes three
    /// seasonal components of distinct periods.
    pub fn multi_seasonal(n: usize, t: usize, seed: u64) -> Self {
        let mut spec = Self::diffusion(n, t, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a5_0ca1);
        spec.seasonal = (0..n)
            .map(|_| {
                [(6.0, 0.06..0.12), (24.0, 0.08..0.16), (96.0, 0.04..0.1)]
                    .into_iter()
                    .map(|(period, amp)| SeasonalTerm {
                        amplitude: rng.random_range(amp),
                        period,
                        phase: rng.random_range(0.0..2.0 * PI),
                    })
                    .collect()
            })
            .collect();
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { key: "synth".into(), msg });
        if self.n == 0 || self.t == 0 {
            return bad("n and t must be positive".into());
        }
        if self.graph.shape() != (self.n, self.n) {
            return bad(format!("graph is {:?}, expected {n}×{n}", self.graph.shape(), n = self.n));
        }
        for i in 0..self.n {
            let row = self.graph.row(i);
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return bad(format!("graph row {i} has a negative or non-finite weight"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("graph row {i} sums to {s}, expected 1"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0".into());
        }
        if !self.ar.is_finite() {
            return bad("ar must be finite".into());
        }
        for (name, len) in [
            ("seasonal", self.seasonal.len()),
            ("levels", self.levels.len()),
            ("scale", self.scale.len()),
            ("offset", self.offset.len()),
        ] {
            if len != self.n {
                return bad(format!("{name} has {len} entries, expected {}", self.n));
            }
        }
        if self.seasonal.iter().flatten().any(|s| !(s.period > 0.0)) {
            return bad("seasonal periods must be positive".into());
        }
        Ok(())
    }

    /// True when `G[u][v] > 0` for distinct sensors.
    pub fn linked(&self, u: usize, v: usize) -> bool {
        u != v && (self.graph.get(u, v) > 0.0 || self.graph.get(v, u) > 0.0)
    }
}

/// Each row keeps a self weight plus `degree` random neighbours, then is
/// normalized to sum to one.
pub fn random_diffusion_graph(n: usize, degree: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let mut g = Matrix::zeros(n, n);
    let degree = degree.min(n.saturating_sub(1));
    for i in 0..n {
        g[(i, i)] = rng.random_range(0.5..1.0);
        for j in sample(rng, n - 1, degree) {
            let j = if j >= i { j + 1 } else { j };
            g[(i, j)] = rng.random_range(0.5..1.0);
        }
        let s: f64 = g.row(i).iter().sum();
        for w in g.row_mut(i) {
            *w /= s;
        }
    }
    g
}

/// Simulates the panel; deterministic in `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Panel<f64>> {
    spec.validate()?;
    let (n, len) = (spec.n, spec.t);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let mut noise = || if spec.noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
    let seasonal = |i: usize, t: usize| spec.seasonal[i].iter().map(|s| s.at(t)).sum::<f64>();

    let mut latent = Matrix::zeros(len, n);
    for i in 0..n {
        latent[(0, i)] = seasonal(i, 0) + spec.levels[i] + noise();
    }
    for t in 1..len {
        for i in 0..n {
            let prev = latent.row(t - 1);
            let mixed: f64 = spec.graph.row(i).iter().zip(prev).map(|(w, x)| w * x).sum();
            let v = spec.ar * mixed + seasonal(i, t - 1) + spec.levels[i] + noise();
            latent[(t, i)] = v;
        }
    }
    let values = Matrix::from_vec(
        len,
        n,
        latent
            .as_slice()
            .iter()
            .enumerate()
            .map(|(idx, &x)| spec.scale[idx % n] * x + spec.offset[idx % n])
            .collect(),
    )?;
    Panel::from_values(values, (0..n).map(|i| format!("s{i}")).collect())
}
