//! Command-line front end for the nmil toolkit: generate synthetic corpora,
//! train forecasting models, score events, extract precursor reports, run
//! multi-class pipelines, evaluate predictions and sweep config grids.
//!
//! Progress goes to stderr; machine-readable output goes to files or stdout.
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config,
//! malformed input), 2 on runtime failures (I/O, diverged training, a failed
//! gradient audit).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nmil::corpus::{self, Dataset};
use nmil::evaluation;
use nmil::model::{self, SavedModel, Variant};
use nmil::multiclass;
use nmil::objective::LossConfig;
use nmil::precursor;
use nmil::synthgen::{self, GenConfig, NPerDay};
use nmil::trainer::{self, Init, TrainConfig};
use nmil::{Error, Result};

const DATASET_FORMAT: &str = "\
Dataset files are newline-delimited JSON: a header object with the schema
name, feature dimension, history length and lead time, then one super-bag
object per line ({event_id, label, days: [{day, instances}], ...}).";

#[derive(Parser)]
#[command(
    name = "nmil",
    version,
    about = "Event forecasting and precursor discovery on nested bags of documents",
    after_help = "Run `nmil <command> --help` for flag details and file formats."
)]
struct Cli {
    /// JSON file with defaults for common flags; explicit flags win.
    ///
    /// Recognized keys: variant, beta, lambda, m0, p0, tau, top_k, lr0,
    /// epochs, batch_size, folds, seed, history, lead, init.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

/// Optional overrides loaded from `--config`. Unknown keys are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    variant: Option<Variant>,
    beta: Option<f64>,
    lambda: Option<f64>,
    m0: Option<f64>,
    p0: Option<f64>,
    tau: Option<f64>,
    top_k: Option<usize>,
    lr0: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    folds: Option<usize>,
    seed: Option<u64>,
    history: Option<usize>,
    lead: Option<usize>,
    init: Option<String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }
}

/// Flags shared by every command that trains a model. Each resolves as
/// flag > NMIL_SEED (seed only) > --config file > built-in default.
#[derive(Args)]
struct TrainFlags {
    /// Model variant: nmil, nmil-delta, nmil-omega, rmil-nor or rmil-avg.
    #[arg(long)]
    variant: Option<Variant>,

    /// Weight of the super-bag fit term (default 3).
    #[arg(long)]
    beta: Option<f64>,

    /// Regularization weight, also drives learning-rate decay (default 0.05).
    #[arg(long)]
    lambda: Option<f64>,

    /// Margin of the instance hinge term (default 0.5).
    #[arg(long)]
    m0: Option<f64>,

    /// Instance probability threshold that picks the hinge side (default 0.5).
    #[arg(long)]
    p0: Option<f64>,

    /// Initial learning rate (default 0.1).
    #[arg(long)]
    lr0: Option<f64>,

    /// Number of passes over the training set (default 50).
    #[arg(long)]
    epochs: Option<usize>,

    /// Super-bags per SGD step (default 8).
    #[arg(long)]
    batch_size: Option<usize>,

    /// Shuffling/init seed; falls back to NMIL_SEED, then 7.
    #[arg(long, env = "NMIL_SEED")]
    seed: Option<u64>,

    /// Weight init: zeros, gaussian or gaussian:<scale> (default zeros).
    #[arg(long)]
    init: Option<Init>,
}

impl TrainFlags {
    fn resolve(&self, file: &FileConfig) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let init = match (self.init, file.init.as_deref()) {
            (Some(i), _) => i,
            (None, Some(s)) => s.parse()?,
            (None, None) => d.init,
        };
        let cfg = TrainConfig {
            variant: self.variant.or(file.variant).unwrap_or(d.variant),
            loss: LossConfig {
                beta: self.beta.or(file.beta).unwrap_or(d.loss.beta),
                lambda: self.lambda.or(file.lambda).unwrap_or(d.loss.lambda),
                m0: self.m0.or(file.m0).unwrap_or(d.loss.m0),
                p0: self.p0.or(file.p0).unwrap_or(d.loss.p0),
            },
            lr0: self.lr0.or(file.lr0).unwrap_or(d.lr0),
            epochs: self.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flags shared by the synthetic-data commands.
#[derive(Args)]
struct GenFlags {
    /// Positive super-bags to generate (default 100).
    #[arg(long, value_name = "N")]
    n_pos: Option<usize>,

    /// Negative super-bags to generate (default 100).
    #[arg(long, value_name = "N")]
    n_neg: Option<usize>,

    /// Observed days per super-bag (default 5).
    #[arg(long)]
    history: Option<usize>,

    /// Days between the last observed day and the event (default 1).
    #[arg(long)]
    lead: Option<usize>,

    /// Feature dimension, intercept coordinate included (default 20).
    #[arg(long)]
    feature_dim: Option<usize>,

    /// Documents per day: a count or a min-max range, e.g. 10 or 8-12.
    #[arg(long)]
    n_per_day: Option<NPerDay>,

    /// Mean fraction of signal documents in positive super-bags (default 0.2).
    #[arg(long)]
    precursor_rate: Option<f64>,

    /// Separation between signal and background distributions (default 2).
    #[arg(long)]
    signal_shift: Option<f64>,

    /// Standard deviation of feature noise (default 1).
    #[arg(long)]
    noise_std: Option<f64>,

    /// Number of event classes (default 1, plain binary data).
    #[arg(long)]
    classes: Option<usize>,
}

impl GenFlags {
    /// `seed` comes from the owning command so that commands which both
    /// generate and train share one `--seed` flag.
    fn resolve(&self, file: &FileConfig, seed: Option<u64>) -> Result<GenConfig> {
        let d = GenConfig::default();
        let cfg = GenConfig {
            n_pos: self.n_pos.unwrap_or(d.n_pos),
            n_neg: self.n_neg.unwrap_or(d.n_neg),
            history_days: self.history.or(file.history).unwrap_or(d.history_days),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            n_per_day: self.n_per_day.unwrap_or(d.n_per_day),
            precursor_rate: self.precursor_rate.unwrap_or(d.precursor_rate),
            signal_shift: self.signal_shift.unwrap_or(d.signal_shift),
            noise_std: self.noise_std.unwrap_or(d.noise_std),
            n_classes: self.classes.unwrap_or(d.n_classes),
            lead_time: self.lead.or(file.lead).unwrap_or(d.lead_time),
            seed: seed.or(file.seed).unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with planted precursor documents.
    #[command(after_help = format!(
        "{DATASET_FORMAT}\n\nThe truth file is newline-delimited JSON with one \
{{event_id, signal_ids, class_label}} record per super-bag."
    ))]
    Generate {
        /// Dataset output path.
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,

        /// Planted-truth output path (default: <out stem>.truth.ndjson).
        #[arg(long, value_name = "PATH")]
        truth_out: Option<PathBuf>,

        /// Generator seed; falls back to NMIL_SEED, then 7.
        #[arg(long, env = "NMIL_SEED")]
        seed: Option<u64>,

        #[command(flatten)]
        gen: GenFlags,
    },

    /// Train a binary forecasting model.
    #[command(after_help = "\
The model file is pretty-printed JSON holding the weights and the exact
config used; the trace file is CSV with `epoch,objective` rows, one per
completed epoch.")]
    Train {
        /// Training dataset path.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Model output path.
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,

        /// Objective trace output path (default: <out stem>.trace.csv).
        #[arg(long, value_name = "PATH")]
        trace_out: Option<PathBuf>,

        #[command(flatten)]
        train: TrainFlags,
    },

    /// Score a dataset with a trained model.
    #[command(after_help = "\
Output is CSV with `event_id,prediction,probability` rows; prediction is 1
or -1 (ties at probability 0.5 go negative).")]
    Predict {
        /// Trained model path.
        #[arg(short, long, value_name = "PATH")]
        model: PathBuf,

        /// Dataset to score.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Output CSV path (stdout when omitted).
        #[arg(short, long, value_name = "PATH")]
        out: Option<PathBuf>,
    },

    /// Rank the documents a trained model flags as precursors.
    #[command(after_help = "\
Reports are newline-delimited JSON, one per super-bag, each holding per-day
entries sorted by probability. The day table is CSV `day,mean_relative_cosine`
over all scanned documents; the samples file is CSV `population,value` with
one `all` row per document and one `precursor` row per flagged document.
Cosine diagnostics compare documents against each event's target document,
so they cover positive super-bags only.")]
    Precursors {
        /// Trained model path.
        #[arg(short, long, value_name = "PATH")]
        model: PathBuf,

        /// Dataset to scan.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Report output path.
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,

        /// Per-day cosine table output (default: <out stem>.days.csv).
        #[arg(long, value_name = "PATH")]
        day_table_out: Option<PathBuf>,

        /// Cosine samples output (default: <out stem>.samples.csv).
        #[arg(long, value_name = "PATH")]
        samples_out: Option<PathBuf>,

        /// Probability threshold a document must exceed, in [0, 1).
        #[arg(long)]
        tau: Option<f64>,

        /// Keep only the top K documents per day (0 keeps all).
        #[arg(long)]
        top_k: Option<usize>,

        /// Also scan negative super-bags.
        #[arg(long)]
        include_negatives: bool,
    },

    /// Train a multi-class pipeline: a gate model plus one model per class.
    #[command(name = "train-mc", after_help = "\
The bundle file is pretty-printed JSON holding the gate model followed by one
one-vs-rest model per class. Positive super-bags must carry class labels in
1..=K.")]
    TrainMc {
        /// Training dataset path (class-labeled).
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Bundle output path.
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,

        /// Class count (default: inferred from the dataset's labels).
        #[arg(long, value_name = "K")]
        classes: Option<usize>,

        #[command(flatten)]
        train: TrainFlags,
    },

    /// Assign each event a class with a trained multi-class bundle.
    #[command(name = "classify-mc", after_help = "\
Output is CSV with `event_id,class,label` rows; class 0 means the gate
predicted no event and its label column reads `negative`.")]
    ClassifyMc {
        /// Trained bundle path.
        #[arg(short, long, value_name = "PATH")]
        model: PathBuf,

        /// Dataset to classify.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Output CSV path (stdout when omitted).
        #[arg(short, long, value_name = "PATH")]
        out: Option<PathBuf>,
    },

    /// Compare a prediction file against a labeled dataset.
    #[command(after_help = "\
Reads the CSV written by `predict`; every listed event must exist in the
dataset, and only listed events are scored. Output is CSV `metric,value`
with the confusion counts and accuracy, precision, recall and f1.")]
    Eval {
        /// Predictions CSV from `predict`.
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,

        /// Labeled dataset the predictions refer to.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,
    },

    /// Cross-validate fresh synthetic datasets over a lead x history grid.
    #[command(after_help = "\
Each grid cell generates its own dataset with the given shape, then runs
k-fold cross-validation. Output is CSV `lead,history,metric,mean,std` with
four rows per cell (accuracy, precision, recall, f1; std is the sample
standard deviation over folds), mirrored as pretty-printed JSON.")]
    Sweep {
        /// Output CSV path.
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,

        /// JSON mirror path (default: <out>.json).
        #[arg(long, value_name = "PATH")]
        json_out: Option<PathBuf>,

        /// Largest lead time; the grid covers 1..=N (default 5).
        #[arg(long, value_name = "N")]
        lead_max: Option<usize>,

        /// Largest history length; the grid covers 1..=N (default 10).
        #[arg(long, value_name = "N")]
        history_max: Option<usize>,

        /// Cross-validation folds per cell (default 3).
        #[arg(long, value_name = "K")]
        folds: Option<usize>,

        /// Worker threads for the grid (default 1; 0 means one per core).
        #[arg(long, default_value_t = 1, value_name = "N")]
        jobs: usize,

        #[command(flatten)]
        gen: GenFlags,

        #[command(flatten)]
        train: TrainFlags,
    },

    /// Audit analytic gradients against finite differences.
    #[command(name = "fd-check", after_help = "\
Takes the first N super-bags of the dataset, runs a short warm-up training
to land on a generic point in weight space, then compares the analytic batch
gradient with central finite differences there. Prints the worst relative
error to stdout and exits 2 when it exceeds the tolerance. Coordinates that
sit within a step of a hinge kink are excluded, so run against nonzero
weights (the default warm-up guarantees that) for a meaningful audit.")]
    FdCheck {
        /// Dataset to audit on.
        #[arg(short, long, value_name = "PATH")]
        data: PathBuf,

        /// Number of super-bags to audit (default 4).
        #[arg(long, value_name = "N")]
        sample: Option<usize>,

        /// Warm-up epochs before the audit (default 2).
        #[arg(long, value_name = "N")]
        warmup_epochs: Option<usize>,

        /// Finite-difference step size (default 1e-5).
        #[arg(long, default_value_t = 1e-5)]
        step: f64,

        /// Largest acceptable relative error (default 1e-4).
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,

        #[command(flatten)]
        train: TrainFlags,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help goes to stdout, errors to stderr; clap picks the stream.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Generate { out, truth_out, seed, gen } => {
            let cfg = gen.resolve(&file, seed)?;
            let truth_out = truth_out.unwrap_or_else(|| derived(&out, "truth", "ndjson"));
            eprintln!(
                "generating {} positive + {} negative super-bags ({} days, {} features)",
                cfg.n_pos, cfg.n_neg, cfg.history_days, cfg.feature_dim
            );
            let (ds, truth) = synthgen::generate(&cfg)?;
            corpus::save_dataset(&ds, &out)?;
            synthgen::save_truth(&truth, &truth_out)?;
            eprintln!("wrote {} and {}", out.display(), truth_out.display());
        }

        Cmd::Train { data, out, trace_out, train } => {
            let tcfg = train.resolve(&file)?;
            let trace_out = trace_out.unwrap_or_else(|| derived(&out, "trace", "csv"));
            let ds = corpus::load_dataset(&data)?;
            eprintln!(
                "training {} on {} super-bags for {} epochs",
                tcfg.variant,
                ds.len(),
                tcfg.epochs
            );
            let report = trainer::train(&ds, &tcfg)?;
            let last = report.objective_trace.last().copied().unwrap_or(f64::NAN);
            model::save_model(
                &SavedModel {
                    params: report.final_params,
                    config: tcfg,
                },
                &out,
            )?;
            trainer::save_trace(&report.objective_trace, &trace_out)?;
            eprintln!(
                "final objective {last:.6}; wrote {} and {}",
                out.display(),
                trace_out.display()
            );
        }

        Cmd::Predict { model, data, out } => {
            let saved = model::load_model(&model)?;
            let ds = corpus::load_dataset(&data)?;
            let scores = model::score_dataset(&saved.params, &ds)?;
            let mut csv = String::from("event_id,prediction,probability\n");
            for (sb, p) in ds.super_bags.iter().zip(&scores) {
                writeln!(csv, "{},{},{}", sb.event_id, model::predict(*p), p)
                    .expect("string write");
            }
            emit(out.as_deref(), &csv)?;
        }

        Cmd::Precursors {
            model,
            data,
            out,
            day_table_out,
            samples_out,
            tau,
            top_k,
            include_negatives,
        } => {
            let tau = tau.or(file.tau).unwrap_or(0.7);
            let top_k = top_k.or(file.top_k).unwrap_or(0);
            let day_table_out = day_table_out.unwrap_or_else(|| derived(&out, "days", "csv"));
            let samples_out = samples_out.unwrap_or_else(|| derived(&out, "samples", "csv"));
            let saved = model::load_model(&model)?;
            let ds = corpus::load_dataset(&data)?;
            let reports = precursor::discover(&ds, &saved.params, tau, top_k, include_negatives)?;
            precursor::save_reports(&reports, &out)?;
            // Cosine diagnostics need a target document, which negatives
            // lack, so they always run on the positive reports only.
            let positives: Vec<_> = reports.iter().filter(|r| r.label == 1).cloned().collect();
            let diag = precursor::similarity_diagnostics(&positives, &ds)?;
            precursor::save_day_table(&diag, &day_table_out)?;
            precursor::save_samples(&diag, &samples_out)?;
            let flagged: usize = reports.iter().map(|r| r.entries.len()).sum();
            eprintln!(
                "{} reports, {flagged} documents above tau={tau}; wrote {}, {} and {}",
                reports.len(),
                out.display(),
                day_table_out.display(),
                samples_out.display()
            );
        }

        Cmd::TrainMc { data, out, classes, train } => {
            let tcfg = train.resolve(&file)?;
            let ds = corpus::load_dataset(&data)?;
            let k = match classes {
                Some(k) => k,
                None => infer_class_count(&ds)?,
            };
            eprintln!(
                "training gate + {k} class models ({}) on {} super-bags",
                tcfg.variant,
                ds.len()
            );
            let mm = multiclass::train_multiclass(&ds, &tcfg, k)?;
            multiclass::save_multimodel(&mm, &tcfg, &out)?;
            eprintln!("wrote {}", out.display());
        }

        Cmd::ClassifyMc { model, data, out } => {
            let saved = multiclass::load_multimodel(&model)?;
            let ds = corpus::load_dataset(&data)?;
            let classes = multiclass::classify_dataset(&saved.model, &ds)?;
            let mut csv = String::from("event_id,class,label\n");
            for (sb, &c) in ds.super_bags.iter().zip(&classes) {
                writeln!(csv, "{},{c},{}", sb.event_id, class_name(&saved.model, c))
                    .expect("string write");
            }
            emit(out.as_deref(), &csv)?;
        }

        Cmd::Eval { predictions, data } => {
            let ds = corpus::load_dataset(&data)?;
            let (preds, truth) = read_predictions(&predictions, &ds)?;
            let m = evaluation::compute_metrics(&preds, &truth)?;
            let mut csv = String::from("metric,value\n");
            for (name, value) in [("tp", m.tp), ("fp", m.fp), ("tn", m.tn), ("fn", m.fn_)] {
                writeln!(csv, "{name},{value}").expect("string write");
            }
            for (name, value) in m.named() {
                writeln!(csv, "{name},{value}").expect("string write");
            }
            print!("{csv}");
        }

        Cmd::Sweep {
            out,
            json_out,
            lead_max,
            history_max,
            folds,
            jobs,
            gen,
            train,
        } => {
            // One --seed drives both the per-cell generators and training.
            let base = gen.resolve(&file, train.seed)?;
            let tcfg = train.resolve(&file)?;
            let lead_max = lead_max.unwrap_or(5);
            let history_max = history_max.unwrap_or(10);
            let folds = folds.or(file.folds).unwrap_or(3);
            let json_out = json_out.unwrap_or_else(|| {
                let mut p = out.clone();
                p.set_extension("json");
                p
            });
            eprintln!(
                "sweeping {lead_max}x{history_max} grid, {folds}-fold CV per cell, jobs={jobs}"
            );
            let result = nmil::exec::with_threads(jobs, || {
                evaluation::sweep(
                    |lead, history| {
                        let cell = GenConfig {
                            lead_time: lead,
                            history_days: history,
                            ..base.clone()
                        };
                        Ok(synthgen::generate(&cell)?.0)
                    },
                    &tcfg,
                    lead_max,
                    history_max,
                    folds,
                )
            })?;
            evaluation::save_sweep_csv(&result, &out)?;
            evaluation::save_sweep_json(&result, &json_out)?;
            eprintln!(
                "{} rows; wrote {} and {}",
                result.rows.len(),
                out.display(),
                json_out.display()
            );
        }

        Cmd::FdCheck {
            data,
            sample,
            warmup_epochs,
            step,
            tolerance,
            train,
        } => {
            let tcfg = train.resolve(&file)?;
            if step <= 0.0 || !step.is_finite() {
                return Err(Error::Config(format!("step must be positive, got {step}")));
            }
            if tolerance <= 0.0 || !tolerance.is_finite() {
                return Err(Error::Config(format!(
                    "tolerance must be positive, got {tolerance}"
                )));
            }
            let ds = corpus::load_dataset(&data)?;
            let sample = sample.unwrap_or(4).min(ds.len());
            if sample == 0 {
                return Err(Error::Validation("dataset is empty".into()));
            }
            let subset = ds.subset(&(0..sample).collect::<Vec<_>>());
            let warm_cfg = TrainConfig {
                epochs: warmup_epochs.unwrap_or(2),
                batch_size: tcfg.batch_size.min(sample),
                ..tcfg.clone()
            };
            let params = trainer::train(&subset, &warm_cfg)?.final_params;
            let refs: Vec<_> = subset.super_bags.iter().collect();
            let err = trainer::fd_check(&refs, &params, &tcfg.loss, step);
            println!("{err}");
            if err > tolerance {
                eprintln!(
                    "gradient audit FAILED: max relative error {err:.3e} > tolerance {tolerance:.3e}"
                );
                return Ok(2);
            }
            eprintln!(
                "gradient audit passed: max relative error {err:.3e} <= tolerance {tolerance:.3e}"
            );
        }
    }
    Ok(0)
}

/// `out.ndjson` + ("truth", "ndjson") -> `out.truth.ndjson`, next to `out`.
fn derived(base: &Path, label: &str, ext: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("out")
        .to_string();
    base.with_file_name(format!("{stem}.{label}.{ext}"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn class_name(mm: &multiclass::MultiModel, c: usize) -> String {
    if c == 0 {
        return "negative".into();
    }
    mm.class_names
        .as_ref()
        .and_then(|names| names.get(c - 1).cloned())
        .unwrap_or_else(|| format!("class-{c}"))
}

/// Class count for `train-mc` when `--classes` is absent: the declared name
/// list if the dataset has one, otherwise the largest class label present.
fn infer_class_count(ds: &Dataset) -> Result<usize> {
    if let Some(names) = &ds.class_names {
        return Ok(names.len());
    }
    ds.super_bags
        .iter()
        .filter_map(|sb| sb.class_label)
        .max()
        .ok_or_else(|| {
            Error::Config("dataset carries no class labels; pass --classes".into())
        })
}

/// Parses a `predict` output file against the dataset it was scored from.
/// The prediction rows define the evaluated sample; every row must name a
/// known event.
fn read_predictions(path: &Path, ds: &Dataset) -> Result<(Vec<i8>, Vec<i8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let labels: HashMap<&str, i8> = ds
        .super_bags
        .iter()
        .map(|sb| (sb.event_id.as_str(), sb.label))
        .collect();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "event_id,prediction,probability")) => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `event_id,prediction,probability`, got `{header}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty predictions file".into(),
            })
        }
    }
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for (idx, row) in lines {
        let line = idx + 1;
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        let (Some(event), Some(pred), Some(_prob), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 comma-separated fields, got `{row}`"),
            });
        };
        let pred: i8 = pred.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad prediction `{pred}`; expected 1 or -1"),
        })?;
        let Some(&label) = labels.get(event) else {
            return Err(Error::Validation(format!(
                "prediction file names unknown event {event}"
            )));
        };
        preds.push(pred);
        truth.push(label);
    }
    Ok((preds, truth))
}
