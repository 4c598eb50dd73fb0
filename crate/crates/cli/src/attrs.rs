//! Feature settings stored as checkpoint attributes, so `predict` and
//! `evaluate` rebuild exactly the windows the model was trained on.

use std::collections::BTreeMap;
use std::str::FromStr;

use agstn::data::{FeatureConfig, ImfMode};
use agstn::signal::{EemdConfig, EmdConfig};
use agstn::Error;

pub fn encode(cfg: &FeatureConfig, sensor_ids: &[String]) -> BTreeMap<String, String> {
    let mut a = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        a.insert(k.to_string(), v);
    };
    put("feature.tau", cfg.tau.to_string());
    put("feature.horizon", cfg.horizon.to_string());
    put("feature.graph_lookback", cfg.graph_lookback.to_string());
    put("feature.imf_mode", cfg.imf_mode.as_str().to_string());
    put("feature.imf_history", cfg.imf_history.to_string());
    put("feature.k_target", cfg.k_target.map_or("auto".into(), |k| k.to_string()));
    put("eemd.ensemble_size", cfg.eemd.ensemble_size.to_string());
    put("eemd.noise_std_ratio", format!("{:?}", cfg.eemd.noise_std_ratio));
    put("eemd.seed", cfg.eemd.seed.to_string());
    put("eemd.max_imfs", cfg.eemd.emd.max_imfs.to_string());
    put("eemd.max_sift_iterations", cfg.eemd.emd.max_sift_iterations.to_string());
    put("eemd.sift_threshold", format!("{:?}", cfg.eemd.emd.sift_threshold));
    put("sensors", sensor_ids.len().to_string());
    for (i, id) in sensor_ids.iter().enumerate() {
        put(&format!("sensor.{i}"), id.clone());
    }
    a
}

fn get<'a>(a: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, Error> {
    a.get(key).map(String::as_str).ok_or_else(|| Error::Config {
        key: key.into(),
        msg: "missing from checkpoint attributes".into(),
    })
}

fn parse<T: FromStr>(a: &BTreeMap<String, String>, key: &str) -> Result<T, Error> {
    let v = get(a, key)?;
    v.parse().map_err(|_| Error::Config {
        key: key.into(),
        msg: format!("unparseable checkpoint attribute `{v}`"),
    })
}

pub fn decode(a: &BTreeMap<String, String>) -> Result<(FeatureConfig, Vec<String>), Error> {
    let mut cfg = FeatureConfig::new(parse(a, "feature.tau")?, parse(a, "feature.horizon")?);
    cfg.graph_lookback = parse(a, "feature.graph_lookback")?;
    cfg.imf_mode = get(a, "feature.imf_mode")?.parse::<ImfMode>()?;
    cfg.imf_history = parse(a, "feature.imf_history")?;
    cfg.k_target = match get(a, "feature.k_target")? {
        "auto" => None,
        _ => Some(parse(a, "feature.k_target")?),
    };
    cfg.eemd = EemdConfig {
        ensemble_size: parse(a, "eemd.ensemble_size")?,
        noise_std_ratio: parse(a, "eemd.noise_std_ratio")?,
        emd: EmdConfig {
            max_sift_iterations: parse(a, "eemd.max_sift_iterations")?,
            sift_threshold: parse(a, "eemd.sift_threshold")?,
            max_imfs: parse(a, "eemd.max_imfs")?,
        },
        seed: parse(a, "eemd.seed")?,
    };
    let n: usize = parse(a, "sensors")?;
    let ids = (0..n)
        .map(|i| get(a, &format!("sensor.{i}")).map(str::to_string))
        .collect::<Result<_, _>>()?;
    Ok((cfg, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = FeatureConfig::new(7, 3);
        cfg.k_target = Some(4);
        cfg.imf_mode = ImfMode::Causal;
        cfg.eemd.noise_std_ratio = 0.1 + 0.2;
        cfg.eemd.seed = 99;
        let ids = vec!["a b".to_string(), "c".to_string()];
        let (back, back_ids) = decode(&encode(&cfg, &ids)).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back_ids, ids);
    }

    #[test]
    fn missing_key_is_config_error() {
        let mut a = encode(&FeatureConfig::new(6, 1), &["x".into(), "y".into()]);
        a.remove("feature.tau");
        assert_eq!(decode(&a).unwrap_err().class(), "ConfigError");
    }
}
