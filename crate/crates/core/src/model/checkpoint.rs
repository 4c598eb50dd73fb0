//! Versioned checkpoint container: a text header (magic, version, meta
//! fields, array manifest) terminated by `end`, then little-endian `f64`
//! arrays in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::Scaler;
use crate::error::{CheckpointFault, Error, Result};
use crate::numcore::Matrix;
use crate::train::TrainHistory;

use super::params::{ModelMeta, ModelParams, Variant};

pub const MAGIC: &str = "AGSTN-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
const END: &str = "end";

/// Everything persisted by a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f64>,
    pub history: TrainHistory,
    pub scaler: Scaler<f64>,
    /// Free-form `key value` settings needed to rebuild features.
    pub attrs: BTreeMap<String, String>,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> usize {
        self.rows * self.cols * 8
    }
}

impl Checkpoint {
    fn arrays(&self) -> Vec<(String, Matrix<f64>)> {
        let mut out: Vec<(String, Matrix<f64>)> = self
            .params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(n, m)| (n.to_string(), m.clone()))
            .collect();
        let h = &self.history;
        out.push(("history.train_loss".into(), Matrix::row_vector(&h.train_loss)));
        out.push(("history.val_loss".into(), Matrix::row_vector(&h.val_loss)));
        out.push(("history.lr".into(), Matrix::row_vector(&h.lr)));
        out.push(("scaler.mean".into(), Matrix::row_vector(&self.scaler.mean)));
        out.push(("scaler.std".into(), Matrix::row_vector(&self.scaler.std)));
        out
    }

    /// Manifest for the current contents, offsets relative to the data block.
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0;
        self.arrays()
            .into_iter()
            .map(|(name, m)| {
                let e = ManifestEntry {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                    offset,
                };
                offset += e.byte_len();
                e
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.params.meta;
        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "version {FORMAT_VERSION}");
        for (k, v) in [
            ("n_sensors", m.n_sensors.to_string()),
            ("tau", m.tau.to_string()),
            ("k", m.k.to_string()),
            ("horizon", m.horizon.to_string()),
            ("variant", m.variant.as_str().to_string()),
            ("gcn_hidden", m.gcn_hidden.to_string()),
            ("lstm_hidden", m.lstm_hidden.to_string()),
            ("conv_width", m.conv_width.to_string()),
            ("conv_shared", m.conv_shared.to_string()),
            ("attention_shared", m.attention_shared.to_string()),
        ] {
            let _ = writeln!(head, "meta {k} {v}");
        }
        let _ = writeln!(head, "history best_epoch {}", self.history.best_epoch);
        let _ = writeln!(head, "history stopped_early {}", self.history.stopped_early);
        for (k, v) in &self.attrs {
            if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::contract(format!("checkpoint attribute `{k}` is not a single-line key/value")));
            }
            let _ = writeln!(head, "attr {k} {v}");
        }
        for e in self.manifest() {
            let _ = writeln!(head, "array {} {} {} {}", e.name, e.rows, e.cols, e.offset);
        }
        let _ = writeln!(head, "{END}");

        let mut bytes = head.into_bytes();
        for (_, m) in self.arrays() {
            for v in m.as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    /// Parses a checkpoint; `path` only labels errors.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let fail = |fault: CheckpointFault| Error::Checkpoint {
            path: path.to_path_buf(),
            fault,
        };
        let header_err = |msg: String| fail(CheckpointFault::Header(msg));

        let first_nl = bytes.iter().position(|&b| b == b'\n');
        if first_nl.map(|i| &bytes[..i]) != Some(MAGIC.as_bytes()) {
            return Err(fail(CheckpointFault::BadMagic));
        }
        let terminator = format!("\n{END}\n");
        let head_end = find(bytes, terminator.as_bytes())
            .ok_or_else(|| header_err("missing `end` line".into()))?
            + terminator.len();
        let head = std::str::from_utf8(&bytes[..head_end])
            .map_err(|_| header_err("header is not UTF-8".into()))?;
        let data = &bytes[head_end..];

        let mut lines = head.lines().skip(1);
        let version_line = lines.next().unwrap_or_default();
        let found = version_line
            .strip_prefix("version ")
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| header_err(format!("bad version line `{version_line}`")))?;
        if found != FORMAT_VERSION {
            return Err(fail(CheckpointFault::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            }));
        }

        let mut meta_fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut history_fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut attrs = BTreeMap::new();
        let mut manifest = Vec::new();
        for line in lines {
            if line == END {
                break;
            }
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "meta" | "history" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| header_err(format!("malformed line `{line}`")))?;
                    let map = if kind == "meta" { &mut meta_fields } else { &mut history_fields };
                    if map.insert(k, v).is_some() {
                        return Err(header_err(format!("duplicate {kind} field `{k}`")));
                    }
                }
                "attr" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    attrs.insert(k.to_string(), v.to_string());
                }
                "array" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let parse = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| fail(CheckpointFault::Manifest(format!("bad number in `{line}`"))))
                    };
                    if parts.len() != 4 {
                        return Err(fail(CheckpointFault::Manifest(format!("malformed entry `{line}`"))));
                    }
                    manifest.push(ManifestEntry {
                        name: parts[0].to_string(),
                        rows: parse(parts[1])?,
                        cols: parse(parts[2])?,
                        offset: parse(parts[3])?,
                    });
                }
                _ => return Err(header_err(format!("unknown header line `{line}`"))),
            }
        }

        let meta = parse_meta(&meta_fields).map_err(header_err)?;
        let best_epoch = field::<usize>(&history_fields, "best_epoch").map_err(header_err)?;
        let stopped_early = field::<bool>(&history_fields, "stopped_early").map_err(header_err)?;

        // manifest must be contiguous and cover the data block exactly
        let mut expected_offset = 0usize;
        for e in &manifest {
            if e.offset != expected_offset {
                return Err(fail(CheckpointFault::Manifest(format!(
                    "array `{}` at offset {}, expected {expected_offset}",
                    e.name, e.offset
                ))));
            }
            expected_offset = e
                .rows
                .checked_mul(e.cols)
                .and_then(|n| n.checked_mul(8))
                .and_then(|n| n.checked_add(expected_offset))
                .ok_or_else(|| fail(CheckpointFault::Manifest(format!("array `{}` is too large", e.name))))?;
        }
        if data.len() < expected_offset {
            return Err(fail(CheckpointFault::Truncated {
                expected: expected_offset as u64,
                actual: data.len() as u64,
            }));
        }
        if data.len() > expected_offset {
            return Err(fail(CheckpointFault::Manifest(format!(
                "{} trailing bytes after the last array",
                data.len() - expected_offset
            ))));
        }

        let mut arrays: BTreeMap<&str, Matrix<f64>> = BTreeMap::new();
        for e in &manifest {
            let raw = &data[e.offset..e.offset + e.byte_len()];
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let m = Matrix::from_vec(e.rows, e.cols, values).expect("length from manifest");
            if arrays.insert(&e.name, m).is_some() {
                return Err(fail(CheckpointFault::Manifest(format!("duplicate array `{}`", e.name))));
            }
        }
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| fail(CheckpointFault::Manifest(format!("missing array `{name}`"))))
        };
        let mut tensors = Vec::new();
        for (name, _, _) in meta.shapes() {
            tensors.push(take(name)?);
        }
        let train_loss = take("history.train_loss")?.into_vec();
        let val_loss = take("history.val_loss")?.into_vec();
        let lr = take("history.lr")?.into_vec();
        let mean = take("scaler.mean")?.into_vec();
        let std = take("scaler.std")?.into_vec();
        if let Some(extra) = arrays.keys().next() {
            return Err(fail(CheckpointFault::Manifest(format!("unexpected array `{extra}`"))));
        }
        let params = ModelParams::from_tensors(meta, tensors)
            .map_err(|e| fail(CheckpointFault::Manifest(e.to_string())))?;
        if mean.len() != meta.n_sensors || std.len() != meta.n_sensors {
            return Err(fail(CheckpointFault::Manifest("scaler length differs from n_sensors".into())));
        }
        if train_loss.len() != val_loss.len() || lr.len() != val_loss.len() {
            return Err(fail(CheckpointFault::Manifest("history arrays differ in length".into())));
        }
        Ok(Self {
            params,
            history: TrainHistory {
                train_loss,
                val_loss,
                lr,
                best_epoch,
                stopped_early,
            },
            scaler: Scaler { mean, std },
            attrs,
        })
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn field<V: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> std::result::Result<V, String> {
    let raw = map.get(key).ok_or_else(|| format!("missing field `{key}`"))?;
    raw.parse().map_err(|_| format!("bad value `{raw}` for `{key}`"))
}

fn parse_meta(map: &BTreeMap<&str, &str>) -> std::result::Result<ModelMeta, String> {
    let known = [
        "n_sensors",
        "tau",
        "k",
        "horizon",
        "variant",
        "gcn_hidden",
        "lstm_hidden",
        "conv_width",
        "conv_shared",
        "attention_shared",
    ];
    if let Some(k) = map.keys().find(|k| !known.contains(k)) {
        return Err(format!("unknown meta field `{k}`"));
    }
    let variant: Variant = field::<String>(map, "variant")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    Ok(ModelMeta {
        n_sensors: field(map, "n_sensors")?,
        tau: field(map, "tau")?,
        k: field(map, "k")?,
        horizon: field(map, "horizon")?,
        variant,
        gcn_hidden: field(map, "gcn_hidden")?,
        lstm_hidden: field(map, "lstm_hidden")?,
        conv_width: field(map, "conv_width")?,
        conv_shared: field(map, "conv_shared")?,
        attention_shared: field(map, "attention_shared")?,
    })
}
