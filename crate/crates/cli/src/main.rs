//! `ugss` — ingest clinical time-series data, train the uncertainty-gated
//! stochastic sequential model, evaluate checkpoints, run baselines, and
//! emit imputation figures.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ugss_core::baselines::{self, ImputeMethod};
use ugss_core::data_model::{read_container, write_container};
use ugss_core::evaluation;
use ugss_core::ingestion::{self, SyntheticSpec};
use ugss_core::training::{
    self, load_checkpoint, predict_dataset, save_checkpoint, Direction, ExperimentConfig,
    FoldManifest, RunManifest,
};

#[derive(Parser)]
#[command(name = "ugss", version, about = "Uncertainty-gated stochastic sequential model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build datasets in the container format.
    Ingest {
        #[command(subcommand)]
        source: IngestSource,
    },
    /// Train with k-fold cross-validation and write run artifacts.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train/evaluate an imputation baseline on the same folds.
    Baseline(BaselineArgs),
    /// Emit imputation plot data (and an SVG) for one sample of a run.
    Plot(PlotArgs),
}

#[derive(Subcommand)]
enum IngestSource {
    /// PhysioNet Challenge 2012 record files plus Outcomes*.txt.
    Physionet {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid resolution in hours (must divide 48).
        #[arg(long, default_value_t = 1)]
        grid_hours: usize,
    },
    /// Synthetic linear-Gaussian data with known ground truth.
    Synthetic {
        /// JSON file with the generator spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-gridded matrix directory (variables.json + labels.csv + CSVs).
    Gridded {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Container file with the raw (unnormalized) dataset.
    #[arg(long)]
    data: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Reuse an existing fold manifest instead of deriving one.
    #[arg(long)]
    folds: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Container file with a prepared (normalized, masked) dataset, e.g. a
    /// split written by `train`.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the metrics JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fold manifest from the main model's run directory.
    #[arg(long)]
    folds: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BaselineMethod {
    Zero,
    Mean,
    GruZero,
    GruMean,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Sample index within the stored test split.
    #[arg(long)]
    sample_id: usize,
    /// Fold whose model/test split to use.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { source } => ingest(source),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Baseline(args) => baseline(args),
        Command::Plot(args) => plot(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(ExperimentConfig::from_json(&text)?)
        }
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn ingest(source: IngestSource) -> Result<()> {
    match source {
        IngestSource::Physionet { dir, out, grid_hours } => {
            let load = ingestion::load_physionet(&dir, grid_hours)?;
            let s = &load.summary;
            log::info!(
                "{} records seen, {} empty, {} without outcome, {} rows skipped",
                s.records_seen,
                s.records_empty,
                s.records_without_outcome,
                s.rows_skipped
            );
            log::info!(
                "{} samples ({} positive / {} negative), missing rate {:.4}",
                load.dataset.len(),
                s.n_positive,
                s.n_negative,
                s.missing_rate
            );
            write_container(&load.dataset, &out)?;
            println!("wrote {} samples to {}", load.dataset.len(), out.display());
        }
        IngestSource::Synthetic { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)?;
            let generated = ingestion::generate_synthetic(&spec)?;
            write_container(&generated.dataset, &out)?;
            println!("wrote {} samples to {}", generated.dataset.len(), out.display());
        }
        IngestSource::Gridded { dir, out } => {
            let dataset = ingestion::load_gridded_matrix(&dir)?;
            write_container(&dataset, &out)?;
            println!("wrote {} samples to {}", dataset.len(), out.display());
        }
    }
    Ok(())
}

fn read_manifest(path: &Option<PathBuf>) -> Result<Option<FoldManifest>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading fold manifest {}", p.display()))?;
            Ok(Some(serde_json::from_str(&text)?))
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dataset = read_container(&args.data)?;
    let manifest = read_manifest(&args.folds)?;
    std::fs::create_dir_all(&args.out)?;

    let outcome = training::train_cv(&config, &dataset, manifest)?;
    write_json(&args.out.join("folds.json"), &outcome.manifest)?;
    for (fold, model) in outcome.models.iter().enumerate() {
        save_checkpoint(model, &args.out.join(format!("fold{fold}.checkpoint.json")))?;
    }
    write_json(&args.out.join("history.json"), &outcome.histories)?;
    let manifest = RunManifest {
        config: config.clone(),
        seed: config.seed,
        git_revision: git_revision(),
        optimizer: "radam".into(),
        folds: outcome.folds.clone(),
        summary: Some(outcome.summary.clone()),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;

    // persist each fold's prepared test split so evaluate/plot can reuse it
    for fold in 0..outcome.manifest.folds {
        let test_idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| outcome.manifest.assignment[i] == fold)
            .collect();
        let pool: Vec<usize> = (0..dataset.len())
            .filter(|&i| outcome.manifest.assignment[i] != fold)
            .collect();
        let (train_idx, val_idx) =
            training::split_train_val(&pool, config.validation_fraction, config.seed, fold);
        let prepared = training::prepare_splits(&config, &dataset, &train_idx, &val_idx, &test_idx)?;
        write_container(&prepared.test, &args.out.join(format!("fold{fold}.test.ugss")))?;
    }

    let s = &outcome.summary;
    println!(
        "cv: auc {:.4} ± {:.4}, auprc {:.4} ± {:.4}, masked mae {}",
        s.auc_mean,
        s.auc_std,
        s.auprc_mean,
        s.auprc_std,
        s.mae_mean.map(|m| format!("{m:.4} ± {:.4}", s.mae_std.unwrap_or(0.0)))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = read_container(&args.data)?;
    let pred = predict_dataset(&model, &dataset)?;
    let labels = pred.label_flags();
    let auc = evaluation::auc(&pred.probabilities, &labels)?;
    let auprc = evaluation::auprc(&pred.probabilities, &labels)?;
    let mae = evaluation::masked_mae_dataset(&dataset, &pred.imputations).ok();
    let pairs = evaluation::per_sample_mae_and_uncertainty(
        &dataset,
        &pred.imputations,
        &pred.uncertainties,
    );
    let correlation = evaluation::uncertainty_error_correlation(&pairs).ok();
    let metrics = serde_json::json!({
        "auc": auc,
        "auprc": auprc,
        "masked_mae": mae,
        "uncertainty_error_correlation": correlation.map(|(r, p)| {
            serde_json::json!({"r": r, "p_value": p})
        }),
        "n_samples": dataset.len(),
    });
    match args.out {
        Some(path) => {
            std::fs::write(&path, serde_json::to_string_pretty(&metrics)?)?;
            println!("wrote metrics to {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&metrics)?),
    }
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dataset = read_container(&args.data)?;
    let manifest = read_manifest(&args.folds)?
        .unwrap_or_else(|| training::make_folds(dataset.len(), config.folds, config.seed));
    std::fs::create_dir_all(&args.out)?;

    let mut fold_metrics = Vec::new();
    for fold in 0..manifest.folds {
        let test_idx: Vec<usize> =
            (0..dataset.len()).filter(|&i| manifest.assignment[i] == fold).collect();
        let pool: Vec<usize> =
            (0..dataset.len()).filter(|&i| manifest.assignment[i] != fold).collect();
        let (train_idx, val_idx) =
            training::split_train_val(&pool, config.validation_fraction, config.seed, fold);
        let prepared =
            training::prepare_splits(&config, &dataset, &train_idx, &val_idx, &test_idx)?;
        let means = baselines::observed_means(&prepared.train);

        let metrics = match args.method {
            BaselineMethod::Zero | BaselineMethod::Mean => {
                let method = if matches!(args.method, BaselineMethod::Zero) {
                    ImputeMethod::Zero
                } else {
                    ImputeMethod::Mean
                };
                let imps = baselines::baseline_imputations(&prepared.test, method, &means);
                let mae = evaluation::masked_mae_dataset(&prepared.test, &imps)?;
                serde_json::json!({"fold": fold, "masked_mae": mae})
            }
            BaselineMethod::GruZero | BaselineMethod::GruMean => {
                let method = if matches!(args.method, BaselineMethod::GruZero) {
                    ImputeMethod::Zero
                } else {
                    ImputeMethod::Mean
                };
                let outcome =
                    baselines::baseline_gru_train(&config, method, &prepared.train, &prepared.val)?;
                let probs = baselines::baseline_predict(&outcome.model, &prepared.test)?;
                let labels: Vec<bool> = prepared.test.samples.iter().map(|s| s.label).collect();
                let auc = evaluation::auc(&probs, &labels)?;
                let auprc = evaluation::auprc(&probs, &labels)?;
                serde_json::json!({"fold": fold, "auc": auc, "auprc": auprc})
            }
        };
        log::info!("fold {fold}: {metrics}");
        fold_metrics.push(metrics);
    }
    let report = serde_json::json!({
        "method": match args.method {
            BaselineMethod::Zero => "zero",
            BaselineMethod::Mean => "mean",
            BaselineMethod::GruZero => "gru-zero",
            BaselineMethod::GruMean => "gru-mean",
        },
        "folds": fold_metrics,
    });
    let path = args.out.join("baseline.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let ckpt = args.run.join(format!("fold{}.checkpoint.json", args.fold));
    let test = args.run.join(format!("fold{}.test.ugss", args.fold));
    if !ckpt.exists() || !test.exists() {
        bail!("run directory {} lacks fold {} artifacts", args.run.display(), args.fold);
    }
    let model = load_checkpoint(&ckpt)?;
    let dataset = read_container(&test)?;
    if args.sample_id >= dataset.len() {
        bail!("sample {} out of range ({} samples)", args.sample_id, dataset.len());
    }
    let sample = &dataset.samples[args.sample_id];
    let pass = training::run_forward_pass(&model, sample, Direction::Forward, None)?;
    let plot = evaluation::emit_imputation_plot_data(sample, &dataset.variables, &pass.steps)?;

    let data_path = args.run.join(format!("plot_fold{}_sample{}.json", args.fold, args.sample_id));
    write_json(&data_path, &plot)?;
    let svg_path = args.run.join(format!("plot_fold{}_sample{}.svg", args.fold, args.sample_id));
    std::fs::write(&svg_path, render_svg(&plot))?;
    println!("wrote {} and {}", data_path.display(), svg_path.display());
    Ok(())
}

/// Minimal multi-panel SVG: observed dots, imputed line, uncertainty band,
/// held-out truth markers.
fn render_svg(plot: &evaluation::SamplePlotData) -> String {
    let panel_w = 640.0;
    let panel_h = 120.0;
    let margin = 36.0;
    let n = plot.variables.len();
    let height = margin + n as f64 * (panel_h + margin);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\">\n",
        panel_w + 2.0 * margin
    );
    for (i, var) in plot.variables.iter().enumerate() {
        let top = margin + i as f64 * (panel_h + margin);
        let (tmin, tmax) = var
            .imputed
            .iter()
            .map(|p| p.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
        let values: Vec<f64> = var
            .imputed
            .iter()
            .flat_map(|p| [p.1 - p.2, p.1 + p.2])
            .chain(var.observed.iter().map(|p| p.1))
            .chain(var.held_out.iter().map(|p| p.1))
            .collect();
        let (vmin, vmax) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (vmin, vmax) = if vmin == vmax { (vmin - 1.0, vmax + 1.0) } else { (vmin, vmax) };
        let x = |t: f64| margin + (t - tmin) / (tmax - tmin).max(1e-9) * panel_w;
        let y = |v: f64| top + panel_h - (v - vmin) / (vmax - vmin) * panel_h;

        // uncertainty band
        let mut band = String::from("M");
        for p in &var.imputed {
            band += &format!(" {:.1},{:.1}", x(p.0), y(p.1 + p.2));
        }
        for p in var.imputed.iter().rev() {
            band += &format!(" L {:.1},{:.1}", x(p.0), y(p.1 - p.2));
        }
        svg += &format!("<path d=\"{band} Z\" fill=\"#aac8e8\" opacity=\"0.55\"/>\n");
        // imputed line
        let mut line = String::from("M");
        for p in &var.imputed {
            line += &format!(" {:.1},{:.1}", x(p.0), y(p.1));
        }
        svg += &format!("<path d=\"{line}\" stroke=\"#1f77b4\" fill=\"none\"/>\n");
        for p in &var.observed {
            svg += &format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"#1f77b4\"/>\n",
                x(p.0),
                y(p.1)
            );
        }
        for p in &var.held_out {
            svg += &format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#d62728\" font-size=\"9\" text-anchor=\"middle\">x</text>\n",
                x(p.0),
                y(p.1) + 3.0
            );
        }
        let label = match var.mae {
            Some(mae) => format!("{} (masked MAE {mae:.3})", var.variable),
            None => var.variable.clone(),
        };
        svg += &format!(
            "<text x=\"{margin}\" y=\"{:.1}\" font-size=\"11\" fill=\"#333\">{label}</text>\n",
            top - 6.0
        );
    }
    svg += "</svg>\n";
    svg
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
