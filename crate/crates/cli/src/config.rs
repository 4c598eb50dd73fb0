//! TOML run and synthetic-panel configuration.

use std::path::{Path, PathBuf};

use agstn::data::{FeatureConfig, ImfMode, SyntheticSpec};
use agstn::model::{ModelMeta, Variant};
use agstn::signal::{EemdConfig, EmdConfig};
use agstn::train::{Optimizer, TrainConfig};
use agstn::Error;
use serde::{Deserialize, Serialize};

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), Error> {
    if v < min {
        return Err(bad(key, format!("must be at least {min}, got {v}")));
    }
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<(), Error> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad(key, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn open_unit(key: &str, v: f64) -> Result<(), Error> {
    if !(v > 0.0 && v < 1.0) {
        return Err(bad(key, format!("must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| {
        let key = e.span().map(|s| text[s].to_string()).unwrap_or_else(|| path.display().to_string());
        bad(&key, e.message().replace('\n', " "))
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Panel CSV, relative to the config file.
    pub path: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("panel.csv"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub tau: usize,
    pub horizon: usize,
    /// Rows used for each cosine-similarity graph; defaults to `tau`.
    pub graph_lookback: Option<usize>,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            tau: 6,
            horizon: 1,
            graph_lookback: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImfSection {
    /// `train-history`, `causal` or `off`.
    pub mode: String,
    /// Trailing rows decomposed per window; 0 keeps the whole history.
    pub history: usize,
    /// IMFs kept per sensor; the median sensor count when unset.
    pub k: Option<usize>,
}

impl Default for ImfSection {
    fn default() -> Self {
        Self {
            mode: ImfMode::TrainHistory.as_str().into(),
            history: 256,
            k: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EemdSection {
    pub ensemble_size: usize,
    pub noise_std_ratio: f64,
    pub max_imfs: usize,
    pub max_sift_iterations: usize,
    pub sift_threshold: f64,
}

impl Default for EemdSection {
    fn default() -> Self {
        let d = EemdConfig::default();
        Self {
            ensemble_size: d.ensemble_size,
            noise_std_ratio: d.noise_std_ratio,
            max_imfs: d.emd.max_imfs,
            max_sift_iterations: d.emd.max_sift_iterations,
            sift_threshold: d.emd.sift_threshold,
        }
    }
}

impl EemdSection {
    pub fn to_config(&self, seed: u64) -> EemdConfig {
        EemdConfig {
            ensemble_size: self.ensemble_size,
            noise_std_ratio: self.noise_std_ratio,
            emd: EmdConfig {
                max_sift_iterations: self.max_sift_iterations,
                sift_threshold: self.sift_threshold,
                max_imfs: self.max_imfs,
            },
            seed,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        at_least("eemd.ensemble_size", self.ensemble_size, 1)?;
        at_least("eemd.max_imfs", self.max_imfs, 1)?;
        at_least("eemd.max_sift_iterations", self.max_sift_iterations, 1)?;
        positive("eemd.sift_threshold", self.sift_threshold)?;
        if !(self.noise_std_ratio >= 0.0 && self.noise_std_ratio.is_finite()) {
            return Err(bad("eemd.noise_std_ratio", format!("must be finite and >= 0, got {}", self.noise_std_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HiddenSection {
    pub hidden: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvSection {
    pub width: usize,
    pub shared: bool,
}

impl Default for ConvSection {
    fn default() -> Self {
        Self { width: 3, shared: false }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSection {
    pub shared: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shuffle: bool,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        let (beta1, beta2, eps) = match Optimizer::default() {
            Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Optimizer::Sgd => (0.9, 0.999, 1e-8),
        };
        Self {
            batch_size: d.batch_size,
            lr: d.lr0,
            lr_decay: d.lr_decay,
            decay_every: d.decay_every,
            max_epochs: d.max_epochs,
            patience: d.patience,
            optimizer: "adam".into(),
            beta1,
            beta2,
            eps,
            shuffle: d.shuffle,
            clip_norm: d.clip_norm.unwrap_or(0.0),
        }
    }
}

/// Everything `train` needs, read from a TOML file with dotted sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// `full` or `no-imf`.
    pub variant: String,
    pub data: DataSection,
    pub window: WindowSection,
    pub imf: ImfSection,
    pub eemd: EemdSection,
    pub gcn: HiddenSection,
    pub lstm: HiddenSection,
    pub conv: ConvSection,
    pub attention: AttentionSection,
    pub train: TrainSection,
}

impl Default for HiddenSection {
    fn default() -> Self {
        Self { hidden: 8 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::Full.as_str().into(),
            data: DataSection::default(),
            window: WindowSection::default(),
            imf: ImfSection::default(),
            eemd: EemdSection::default(),
            gcn: HiddenSection { hidden: 8 },
            lstm: HiddenSection { hidden: 64 },
            conv: ConvSection::default(),
            attention: AttentionSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and range-checks `path`; `data.path` is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut cfg: RunConfig = read_toml(path)?;
        if cfg.data.path.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.data.path = base.join(&cfg.data.path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.variant()?;
        self.imf_mode()?;
        at_least("window.tau", self.window.tau, 2)?;
        at_least("window.horizon", self.window.horizon, 1)?;
        if let Some(l) = self.window.graph_lookback {
            at_least("window.graph_lookback", l, 2)?;
        }
        if let Some(k) = self.imf.k {
            at_least("imf.k", k, 1)?;
        }
        if self.imf.history != 0 && self.imf.history < self.window.tau.max(4) {
            return Err(bad(
                "imf.history",
                format!("must be 0 or at least {}, got {}", self.window.tau.max(4), self.imf.history),
            ));
        }
        self.eemd.validate()?;
        at_least("gcn.hidden", self.gcn.hidden, 1)?;
        at_least("lstm.hidden", self.lstm.hidden, 1)?;
        at_least("conv.width", self.conv.width, 1)?;
        if self.conv.width > self.window.tau {
            return Err(bad("conv.width", format!("must not exceed window.tau = {}", self.window.tau)));
        }
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant, Error> {
        self.variant.parse().map_err(|_| bad("variant", format!("expected `full` or `no-imf`, got `{}`", self.variant)))
    }

    pub fn imf_mode(&self) -> Result<ImfMode, Error> {
        self.imf.mode.parse()
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, Error> {
        let mut f = FeatureConfig::new(self.window.tau, self.window.horizon);
        if let Some(l) = self.window.graph_lookback {
            f.graph_lookback = l;
        }
        f.eemd = self.eemd.to_config(self.seed);
        f.k_target = self.imf.k;
        f.imf_mode = self.imf_mode()?;
        f.imf_history = self.imf.history;
        Ok(f)
    }

    pub fn model_meta(&self, n_sensors: usize, k: usize) -> Result<ModelMeta, Error> {
        let mut m = ModelMeta::new(n_sensors, self.window.tau, k, self.window.horizon, self.variant()?);
        m.gcn_hidden = self.gcn.hidden;
        m.lstm_hidden = self.lstm.hidden;
        m.conv_width = self.conv.width;
        m.conv_shared = self.conv.shared;
        m.attention_shared = self.attention.shared;
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig, Error> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "adam" => {
                open_unit("train.beta1", t.beta1)?;
                open_unit("train.beta2", t.beta2)?;
                positive("train.eps", t.eps)?;
                Optimizer::Adam {
                    beta1: t.beta1,
                    beta2: t.beta2,
                    eps: t.eps,
                }
            }
            "sgd" => Optimizer::Sgd,
            other => return Err(bad("train.optimizer", format!("expected `adam` or `sgd`, got `{other}`"))),
        };
        if !(t.clip_norm >= 0.0 && t.clip_norm.is_finite()) {
            return Err(bad("train.clip_norm", format!("must be finite and >= 0, got {}", t.clip_norm)));
        }
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            lr0: t.lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            max_epochs: t.max_epochs,
            patience: t.patience,
            optimizer,
            seed: self.seed,
            shuffle: t.shuffle,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Synthetic panel description for `synth`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// `diffusion` or `multi-seasonal`.
    pub kind: String,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub ar: Option<f64>,
    pub noise_std: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: "diffusion".into(),
            n: 8,
            t: 2000,
            seed: 7,
            ar: None,
            noise_std: None,
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let cfg: SynthConfig = read_toml(path)?;
        cfg.spec()?;
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<SyntheticSpec, Error> {
        at_least("n", self.n, 2)?;
        at_least("t", self.t, 2)?;
        let mut spec = match self.kind.as_str() {
            "diffusion" => SyntheticSpec::diffusion(self.n, self.t, self.seed),
            "multi-seasonal" => SyntheticSpec::multi_seasonal(self.n, self.t, self.seed),
            other => return Err(bad("kind", format!("expected `diffusion` or `multi-seasonal`, got `{other}`"))),
        };
        if let Some(ar) = self.ar {
            if !(ar.abs() < 1.0) {
                return Err(bad("ar", format!("must satisfy |ar| < 1, got {ar}")));
            }
            spec.ar = ar;
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(bad("noise_std", format!("must be finite and >= 0, got {s}")));
            }
            spec.noise_std = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad("toml", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults_resolve() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.window.tau, 6);
        assert_eq!(cfg.lstm.hidden, 64);
        assert_eq!(cfg.gcn.hidden, 8);
        let t = cfg.train_config().unwrap();
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.clip_norm, Some(5.0));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(parse("colour = 1\n").is_err());
    }

    #[test]
    fn ranges_checked() {
        let e = parse("[window]\ntau = 1\n").unwrap_err();
        assert_eq!(e.class(), "ConfigError");
        assert!(parse("[train]\nlr = -1.0\n").is_err());
        assert!(parse("[conv]\nwidth = 9\n").is_err());
        assert!(parse("variant = \"tiny\"\n").is_err());
        assert!(parse("[imf]\nmode = \"sometimes\"\n").is_err());
        assert!(parse("[train]\noptimizer = \"rmsprop\"\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse("seed = 3\n[train]\nmax_epochs = 4\npatience = 2\n").unwrap();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn synth_overrides() {
        let cfg: SynthConfig = toml::from_str("kind = \"multi-seasonal\"\nn = 4\nt = 50\nar = 0.5\n").unwrap();
        let spec = cfg.spec().unwrap();
        assert_eq!(spec.ar, 0.5);
        assert_eq!(spec.seasonal[0].len(), 3);
        let cfg: SynthConfig = toml::from_str("ar = 1.5\n").unwrap();
        assert!(cfg.spec().is_err());
    }
}
