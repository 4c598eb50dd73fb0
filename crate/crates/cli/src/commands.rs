use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use agstn::data::{
    gen_synthetic, load_csv, make_windows, make_windows_with_scaler, FeatureBuilder, Panel, Scaler, Split,
    TRAIN_FRACTION,
};
use agstn::eval::{baselines, forecast_split, score, write_rankings, write_reports_csv, EvalReport};
use agstn::graphs::{build_window_graph, write_edge_list};
use agstn::model::{forward, init_params, Checkpoint};
use agstn::signal::{eemd, write_imfs_csv, EemdConfig, EmdConfig, ImfSet};
use agstn::train::train_with;
use agstn::Error;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::attrs;
use crate::config::{RunConfig, SynthConfig};

/// Graph spatio-temporal forecasting for multi-sensor time series.
#[derive(Debug, Parser)]
#[command(name = "agstn", version)]
pub struct Cli {
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true, env = "AGSTN_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic panel with a planted diffusion graph.
    Synth(SynthArgs),
    /// Write the EEMD decomposition of every sensor.
    Decompose(DecomposeArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Forecast one step from a trained model, with per-sensor diagnostics.
    Predict(PredictArgs),
    /// Score a trained model and the reference baselines on one split.
    Evaluate(EvaluateArgs),
    /// Write the similarity graph of one time step as an edge list.
    InspectGraph(InspectGraphArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synthetic spec (kind, n, t, seed, ar, noise_std).
    #[arg(long)]
    spec: PathBuf,
    /// Output panel CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Input panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with rows `sensor_id,channel,t0..`.
    #[arg(long)]
    out: PathBuf,
    /// Noisy EMD runs averaged per sensor.
    #[arg(long, default_value_t = 50)]
    ensemble_size: usize,
    /// Added noise std as a fraction of each series' std.
    #[arg(long, default_value_t = 0.2)]
    noise_ratio: f64,
    /// Upper bound on IMFs per sensor.
    #[arg(long, default_value_t = 8)]
    max_imfs: usize,
    /// Base seed; sensor i uses seed + i * ensemble_size.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoint.agstn, history.csv and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Print per-epoch losses to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Row index of the last observed step of the input window.
    #[arg(long)]
    at: usize,
    /// Output CSV, one row per sensor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Cut-off for Precision@k and the ranking dump.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Output CSV of `metric,value` rows for the model and baselines.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-sample top-k sensor lists to this CSV.
    #[arg(long)]
    emit_ranking: Option<PathBuf>,
    /// Also write forecast-vs-truth traces to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the reports as a TOML document.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectGraphArgs {
    /// Panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Time step whose graph is written.
    #[arg(long)]
    at: usize,
    /// Output CSV of `u,v,weight` rows.
    #[arg(long)]
    out: PathBuf,
    /// Rows ending at `--at` used for the similarity.
    #[arg(long, default_value_t = 6)]
    lookback: usize,
    /// Standardize with this checkpoint's statistics and lookback instead of
    /// the leading 70% of rows.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Decompose(a) => decompose(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::InspectGraph(a) => inspect_graph(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufWriter::new(f))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthConfig::load(&a.spec)?.spec()?;
    let panel = gen_synthetic(&spec)?;
    panel.save_csv(&a.out)?;
    println!("wrote {} rows x {} sensors to {}", panel.len(), panel.sensors(), a.out.display());
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let panel = load_csv(&a.data)?;
    let cfg = EemdConfig {
        ensemble_size: a.ensemble_size,
        noise_std_ratio: a.noise_ratio,
        emd: EmdConfig {
            max_imfs: a.max_imfs,
            ..EmdConfig::default()
        },
        seed: a.seed,
    };
    cfg.validate()?;
    let sets: Vec<ImfSet<f64>> = (0..panel.sensors())
        .into_par_iter()
        .map(|i| {
            let mut c = cfg;
            c.seed = cfg.seed.wrapping_add((i * cfg.ensemble_size) as u64);
            eemd(&panel.series(i), &c)
        })
        .collect::<Result<_, Error>>()?;
    write_imfs_csv(create(&a.out)?, &panel.sensor_ids, &sets)?;
    let counts: Vec<String> = sets.iter().map(|s| s.k().to_string()).collect();
    println!("imf counts per sensor: {}", counts.join(","));
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let panel = load_csv(&cfg.data.path)?;
    let features = cfg.feature_config()?;
    let ds = make_windows(&panel, &features)?;
    let meta = cfg.model_meta(panel.sensors(), ds.k)?;
    let init = init_params::<f64>(meta, cfg.seed)?;
    let tc = cfg.train_config()?;
    let verbose = a.verbose;
    let outcome = train_with(&ds, init, &tc, |e, h| {
        if verbose {
            eprintln!("epoch {e}: train {:.6} val {:.6} lr {:.3e}", h.train_loss[e], h.val_loss[e], h.lr[e]);
        }
    })?;

    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let mut attrs = attrs::encode(&features, &panel.sensor_ids);
    attrs.insert("feature.train_end".into(), ds.train_end.to_string());
    let ckpt = Checkpoint {
        params: outcome.params,
        history: outcome.history,
        scaler: ds.scaler.clone(),
        attrs,
    };
    ckpt.save(&a.out.join("checkpoint.agstn"))?;
    write_with(&a.out.join("history.csv"), |w| ckpt.history.write_csv(w))?;
    let resolved = cfg.to_toml();
    std::fs::write(a.out.join("config.toml"), resolved).map_err(io_err(&a.out))?;
    let h = &ckpt.history;
    println!(
        "trained {} epochs (best {} with val loss {:.6}){}",
        h.epochs(),
        h.best_epoch,
        h.best_val_loss().unwrap_or(f64::NAN),
        if h.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    panel: Panel<f64>,
    features: agstn::data::FeatureConfig,
}

fn load_model(checkpoint: &Path, data: &Path) -> Result<Loaded> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (features, ids) = attrs::decode(&ckpt.attrs)?;
    let panel = load_csv(data)?;
    if panel.sensor_ids != ids {
        return Err(Error::Config {
            key: "data".into(),
            msg: format!(
                "panel sensors [{}] differ from the checkpoint's [{}]",
                panel.sensor_ids.join(","),
                ids.join(",")
            ),
        }
        .into());
    }
    Ok(Loaded { ckpt, panel, features })
}

fn predict(a: PredictArgs) -> Result<()> {
    let Loaded { ckpt, panel, features } = load_model(&a.checkpoint, &a.data)?;
    let train_end: usize = ckpt
        .attrs
        .get("feature.train_end")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config {
            key: "feature.train_end".into(),
            msg: "missing from checkpoint attributes".into(),
        })?;
    let standardized = ckpt.scaler.standardize(&panel.values)?;
    let builder = FeatureBuilder::new(standardized, train_end, features).context("rebuilding window features")?;
    let sample = builder.sample(a.at)?;
    let out = forward(&sample, &ckpt.params)?;
    let prediction = ckpt.scaler.destandardize_vec(&out.prediction);
    let truth = (sample.target_index < panel.len()).then(|| panel.values.row(sample.target_index).to_vec());
    write_with(&a.out, |w| {
        writeln!(w, "sensor_id,target_index,prediction,truth,prediction_std,r_hat,c_hat,attention")?;
        for (i, id) in panel.sensor_ids.iter().enumerate() {
            let truth = truth.as_ref().map_or(String::new(), |t| t[i].to_string());
            writeln!(
                w,
                "{id},{},{},{truth},{},{},{},{}",
                sample.target_index, prediction[i], out.prediction[i], out.r_hat[i], out.c_hat[i], out.attention[i]
            )?;
        }
        Ok(())
    })?;
    println!("forecast for step {} written to {}", sample.target_index, a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let Loaded { ckpt, panel, features } = load_model(&a.checkpoint, &a.data)?;
    let ds = make_windows_with_scaler(&panel, &features, ckpt.scaler.clone())?;
    let params = &ckpt.params;
    let fc = forecast_split(&ds, split, |s| Ok(forward(s, params)?.prediction))?;
    let mut reports = vec![score("agstn", &fc, a.k, ds.horizon)?];
    reports.extend(baselines(&ds, split, a.k)?);
    write_with(&a.out, |w| write_reports_csv(w, &reports))?;
    if let Some(path) = &a.emit_ranking {
        write_with(path, |w| write_rankings(w, &fc, &ds.sensor_ids, a.k))?;
    }
    if let Some(path) = &a.trace {
        write_with(path, |w| {
            writeln!(w, "origin,target_index,sensor_id,prediction,truth")?;
            for ((p, t), &origin) in fc.predictions.iter().zip(&fc.truths).zip(&fc.origins) {
                for (i, id) in ds.sensor_ids.iter().enumerate() {
                    writeln!(w, "{origin},{},{id},{},{}", origin + ds.horizon, p[i], t[i])?;
                }
            }
            Ok(())
        })?;
    }
    if let Some(path) = &a.summary {
        std::fs::write(path, summary_toml(split, &reports)).map_err(io_err(path))?;
    }
    for r in &reports {
        println!("{:<12} mae {:.6} rmse {:.6} p@{} {:.4} ndcg {:.4}", r.name, r.mae, r.rmse, r.k, r.p_at_k, r.ndcg);
    }
    Ok(())
}

fn summary_toml(split: Split, reports: &[EvalReport]) -> String {
    let mut doc = toml::Table::new();
    doc.insert("split".into(), split.as_str().into());
    for r in reports {
        let mut t = toml::Table::new();
        t.insert("mae".into(), r.mae.into());
        t.insert("rmse".into(), r.rmse.into());
        t.insert("p_at_k".into(), r.p_at_k.into());
        t.insert("ndcg".into(), r.ndcg.into());
        t.insert("k".into(), (r.k as i64).into());
        t.insert("horizon".into(), (r.horizon as i64).into());
        t.insert("samples".into(), (r.samples.len() as i64).into());
        doc.insert(r.name.clone(), t.into());
    }
    doc.to_string()
}

fn inspect_graph(a: InspectGraphArgs) -> Result<()> {
    let panel = load_csv(&a.data)?;
    let (scaler, lookback) = match &a.checkpoint {
        Some(path) => {
            let Loaded { ckpt, features, .. } = load_model(path, &a.data)?;
            (ckpt.scaler, features.graph_lookback)
        }
        None => {
            let rows = ((panel.len() as f64 * TRAIN_FRACTION).floor() as usize).max(1);
            (Scaler::fit(&panel.values, 0..rows)?, a.lookback)
        }
    };
    let standardized = scaler.standardize(&panel.values)?;
    let mut g = build_window_graph(&standardized, a.at.max(1), lookback)?;
    g.t_index = a.at;
    write_edge_list(create(&a.out)?, &g)?;
    Ok(())
}
