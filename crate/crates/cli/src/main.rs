//! `nfpos`: generate datasets, train and evaluate positioning models,
//! compare reports and inspect array geometry.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nfpos::dataset::{generate_dataset, load_dataset, FeatureKind};
use nfpos::geometry::{
    fresnel_bounds, near_field_ratio, near_field_ratio_limit, ula_path_difference_exact, ula_path_difference_taylor,
    wavelength_from_frequency, ArrayConfig,
};
use nfpos::harness::experiment::{hold_out, model_for};
use nfpos::harness::metrics::{evaluate, evaluate_with, median_db_gap};
use nfpos::harness::{db_gap, train, EvalReport, LossSpace};
use nfpos::nn::checkpoint::{self, Provenance};
use nfpos::nn::{ModelKind, PosNet};
use nfpos::{Error, Result};

use config::{Overrides, RunConfig, SeedTarget};

const DATA_ENV: &str = "NFPOS_DATA_DIR";

#[derive(Parser)]
#[command(name = "nfpos", version, about = "Near-field positioning with a sectored circular array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of normalized features and position labels.
    GenData(Common),
    /// Train a model on a generated dataset.
    Train(Common),
    /// Evaluate a checkpoint on a dataset split and export error reports.
    Eval(EvalArgs),
    /// Tabulate two or more exported reports with dB gaps against the first.
    Compare(CompareArgs),
    /// Print Fresnel bounds, the near-field ratio and Taylor accuracy.
    Fresnel(FresnelArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (train); defaults to the config or $NFPOS_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset seed for gen-data, training seed for train.
    #[arg(long)]
    seed: Option<u64>,
    /// Signal-to-noise ratio in dB.
    #[arg(long)]
    snr: Option<f64>,
    /// Snapshots per sample.
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long, value_parser = parse_feature)]
    feature: Option<FeatureKind>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Convolutional width (channels).
    #[arg(long)]
    width: Option<usize>,
    /// Training samples to generate (gen-data) or to use (train).
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            data: self.data.clone(),
            seed: self.seed,
            snr: self.snr,
            snapshots: self.snapshots,
            feature: self.feature,
            model: self.model,
            width: self.width,
            n_train: self.n_train,
            n_test: self.n_test,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
        }
    }

    fn resolve(&self, target: SeedTarget) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&self.overrides(), target);
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; defaults to $NFPOS_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which split to score.
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    split: String,
    /// Replace the model by a perfect predictor (pipeline check).
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Report directories; the first is the reference.
    reports: Vec<PathBuf>,
    /// Also write the table as CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FresnelArgs {
    /// Analyse a linear array instead of the circular sector.
    #[arg(long)]
    ula: bool,
    /// Element count.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Linear-array spacing in meters (default: half a wavelength).
    #[arg(long)]
    delta: Option<f64>,
    /// Circular-array radius in meters.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Carrier frequency in Hz.
    #[arg(long, default_value_t = 3.5e9)]
    freq: f64,
}

fn parse_feature(s: &str) -> std::result::Result<FeatureKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::DegenerateGeometry(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Contract(_) | Error::Format { .. } | Error::Corrupt { .. } | Error::DataIntegrity(_) => 3,
        Error::Io { .. } | Error::Divergence { .. } | Error::UndefinedGap(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Compare(a) => compare(&a),
        Command::Fresnel(a) => fresnel(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ENV).map(PathBuf::from)
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| Error::Config("missing output directory: pass --out DIR (or set `out` in --config)".into()))
}

fn require_data(data: Option<PathBuf>) -> Result<PathBuf> {
    data.or_else(data_root)
        .ok_or_else(|| Error::Config(format!("missing dataset: pass --data DIR or set {DATA_ENV}")))
}

fn gen_data(a: &Common) -> Result<()> {
    let cfg = a.resolve(SeedTarget::Dataset)?;
    let scenario = cfg.scenario()?;
    let out = match cfg.out.clone() {
        Some(p) => p,
        None => match data_root() {
            Some(root) => root.join(format!(
                "{}_snr{}_k{}_seed{}",
                scenario.feature, scenario.snr_db, scenario.snapshots, scenario.base_seed
            )),
            None => return Err(require_out(None).unwrap_err()),
        },
    };
    let manifest = generate_dataset(&scenario, &out)?;
    println!(
        "wrote {}: {} train + {} test samples, feature {} {:?}, seed {}",
        out.display(),
        manifest.counts.train,
        manifest.counts.test,
        scenario.feature,
        manifest.feature_shape,
        scenario.base_seed
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_cmd(a: &Common) -> Result<()> {
    let cfg = a.resolve(SeedTarget::Training)?;
    let out = require_out(cfg.out.clone())?;
    let data = require_data(cfg.data.clone())?;
    let model_cfg = cfg.model()?;
    let tc = cfg.train()?;
    let dataset = load_dataset(&data)?;
    let scenario = dataset.scenario().clone();
    let model_cfg = if cfg.model.input.is_some() {
        model_cfg
    } else {
        model_for(&model_cfg, &dataset)
    };
    let codec = scenario.codec()?;
    let mut model = PosNet::<f32>::new(model_cfg, tc.seed)?;
    let (train_view, _) = dataset.train_test();
    let train_view = match cfg.train.n_train {
        Some(n) => train_view.take(n),
        None => train_view,
    };
    let (fit, held) = hold_out(&train_view, tc.held_out_fraction, tc.seed)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    write_text(&out.join("run.toml"), &cfg.to_toml()?)?;
    let record = train(&mut model, &fit, held.as_ref(), &codec, &tc, |e| {
        let held = e.held_out_loss.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        println!("epoch {:>4}  train {:.6e}  held-out {held}", e.epoch, e.train_loss);
    })?;
    record.write_loss_curve(&out.join("loss_curve.csv"))?;
    record.write_timings(&out.join("train.log"))?;
    let provenance = Provenance {
        init_seed: tc.seed,
        epochs: tc.epochs,
        best_epoch: Some(record.best_epoch),
        best_held_out_loss: record.best_held_out_loss,
        loss_space: Some(tc.loss_space.to_string()),
        feature: Some(scenario.feature.to_string()),
        r_range: Some(scenario.r_range),
        eta_range: Some(scenario.eta_range),
        dataset_seed: Some(scenario.base_seed.to_string()),
    };
    checkpoint::save(&mut model, &provenance, &out.join("checkpoint"))?;
    let best = record
        .best_held_out_loss
        .map(|v| format!("{v:.6e}"))
        .unwrap_or_else(|| "n/a (no held-out slice)".into());
    println!(
        "trained {} for {} epochs ({} steps) on {} samples; best held-out loss {best} at epoch {}; checkpoint {}",
        model.config().kind,
        tc.epochs,
        record.steps,
        fit.len(),
        record.best_epoch,
        out.join("checkpoint").display()
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let out = require_out(a.out.clone())?;
    let data = require_data(a.data.clone())?;
    let dataset = load_dataset(&data)?;
    let (train_view, test_view) = dataset.train_test();
    let view = match a.split.as_str() {
        "train" => train_view,
        "all" => dataset.view_all(),
        _ => test_view,
    };
    let scenario = dataset.scenario();
    let name = format!(
        "{} snr={} K={} split={}",
        scenario.feature, scenario.snr_db, scenario.snapshots, a.split
    );
    let report = if a.oracle {
        evaluate_with(&view, format!("oracle {name}"), |_, truth| truth)?
    } else {
        let dir = a
            .checkpoint
            .clone()
            .ok_or_else(|| Error::Config("missing checkpoint: pass --checkpoint DIR (or --oracle)".into()))?;
        if !dir.join(checkpoint::MANIFEST_FILE).exists() {
            return Err(Error::Config(format!("--checkpoint {}: no checkpoint manifest found", dir.display())));
        }
        let (model, manifest) = checkpoint::load::<f32>(&dir)?;
        let prov = &manifest.provenance;
        if let (Some(r), Some(e)) = (prov.r_range, prov.eta_range) {
            if r != scenario.r_range || e != scenario.eta_range {
                return Err(Error::Contract(format!(
                    "checkpoint labels span range {r:?}, angle {e:?}; dataset spans {:?}, {:?}",
                    scenario.r_range, scenario.eta_range
                )));
            }
        }
        let space: LossSpace = prov.loss_space.as_deref().unwrap_or("normalized").parse()?;
        evaluate(&model, &view, &scenario.codec()?, space, format!("{} {name}", model.config().kind))?
    };
    report.export(&out)?;
    println!(
        "{}: n={} mean {:.4} m, median {:.4} m, rmse {:.4} m ({:.2} dB re 1 m); reports in {}",
        report.scenario,
        report.len(),
        report.mean,
        report.median,
        report.rmse,
        report.mean_db(),
        out.display()
    );
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    if a.reports.len() < 2 {
        return Err(Error::Config(format!(
            "compare needs at least two report directories, got {}",
            a.reports.len()
        )));
    }
    let reports: Vec<EvalReport> = a
        .reports
        .iter()
        .map(|dir| EvalReport::load(dir, dir.display().to_string()))
        .collect::<Result<_>>()?;
    let gap = |r: &EvalReport, f: fn(&EvalReport, &EvalReport) -> Result<f64>| {
        f(&reports[0], r).map(|g| format!("{g:.3}")).unwrap_or_else(|_| "undefined".into())
    };
    let mut csv = String::from("run,mean_m,median_m,rmse_m,gap_db_mean,gap_db_median\n");
    println!(
        "{:<40} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "run", "mean_m", "median_m", "rmse_m", "gap_dB_mean", "gap_dB_med"
    );
    for r in &reports {
        let (gm, gd) = (gap(r, db_gap), gap(r, median_db_gap));
        println!(
            "{:<40} {:>10.4} {:>10.4} {:>10.4} {:>12} {:>12}",
            r.scenario, r.mean, r.median, r.rmse, gm, gd
        );
        csv.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{gm},{gd}\n",
            r.scenario.replace(',', ";"),
            r.mean,
            r.median,
            r.rmse
        ));
    }
    if let Some(path) = &a.out {
        write_text(path, &csv)?;
    }
    Ok(())
}

fn fresnel(a: &FresnelArgs) -> Result<()> {
    let wavelength = wavelength_from_frequency(a.freq)?;
    let array = if a.ula {
        ArrayConfig::ula(a.n, a.delta.unwrap_or(wavelength / 2.0), wavelength)?
    } else {
        ArrayConfig::uca(a.n, a.radius, wavelength)?
    };
    let bounds = fresnel_bounds(array.aperture(), wavelength)?;
    println!("array: {:?}, N = {}, λ = {:.6} m", array.kind(), a.n, wavelength);
    println!("aperture D = {:.6} m", bounds.aperture);
    println!("near field: {:.6} m ≤ r ≤ {:.6} m", bounds.lower, bounds.upper);
    if let nfpos::geometry::ArrayGeometry::Ula { spacing } = array.geometry {
        let limit = near_field_ratio_limit(a.n);
        for (label, r) in [("lower", bounds.lower), ("upper", bounds.upper)] {
            let ratio = near_field_ratio(a.n, spacing, r);
            let verdict = if ratio <= limit * (1.0 + 1e-12) { "within" } else { "exceeds" };
            println!("(NΔ/r)² at {label} bound = {ratio:.6e} ({verdict} 41.6/N = {limit:.6e})");
        }
        println!("\n   n   r_m  eta_deg        exact       taylor    |error|  bound (nΔ)³/r²");
        for &r in &[bounds.lower.max(spacing * 40.0), 2.0 * bounds.lower.max(spacing * 40.0)] {
            for &eta in &[30.0f64, 60.0, 90.0, 120.0, 150.0] {
                for &n in &[1usize, 2] {
                    let exact = ula_path_difference_exact(r, eta.to_radians(), n, spacing);
                    let taylor = ula_path_difference_taylor(r, eta.to_radians(), n, spacing);
                    let bound = (n as f64 * spacing).powi(3) / (r * r);
                    println!(
                        "{n:>4} {r:>5.2} {eta:>8.1} {exact:>12.6e} {taylor:>12.6e} {:>10.3e} {bound:>10.3e}",
                        (exact - taylor).abs()
                    );
                }
            }
        }
    }
    Ok(())
}
