use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dforest::cascade::{feature_importances, predict_cascade, rank_by_importance, run_cascade};
use dforest::dataio::{
    balanced_weights, load_csv_with, load_features_csv, read_scores, synth_imbalanced, write_csv, write_scores,
    ColumnRef, CsvOptions, Dataset, Features, RowMajor,
};
use dforest::mart::MartParams;
use dforest::metrics::{write_pr_csv, MetricReport};
use dforest::scheduler::{Checkpoint, ExecOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, WeightMode, DEFAULT_RATES};
use crate::model_file::ModelFile;
use crate::{CliError, EvalArgs, GenDataArgs, PredictArgs, SelectArgs, TrainArgs};

/// Output of `select`, consumed by `train --selected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    /// Column count of the data the ranking was computed on.
    pub num_features: usize,
    /// Kept column indices, most important first.
    pub indices: Vec<usize>,
    /// Gain importance of every column.
    pub importances: Vec<f64>,
    /// Names of the kept columns, parallel to `indices`.
    pub feature_names: Vec<String>,
}

impl Selection {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("selection {}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunStamp {
    fingerprint: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(dforest::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required (flag or config)")))
}

/// Loads a training CSV and applies the configured weighting.
fn load_training(path: &Path, config: &RunConfig) -> Result<Dataset, CliError> {
    let ds = load_csv_with(path, &config.csv_options())?;
    Ok(match config.weights {
        WeightMode::Balanced => {
            let w = balanced_weights(ds.labels())?;
            ds.with_weights(w)?
        }
        WeightMode::Uniform | WeightMode::Column(_) => ds,
    })
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let ds = synth_imbalanced(args.rows, args.cols, args.informative, args.pos_rate, args.seed)?;
    write_csv(&ds, &args.out, None)?;
    Ok(())
}

pub fn select(args: &SelectArgs) -> Result<(), CliError> {
    let config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ds = load_training(&args.data, &config)?;
    if args.top_k == 0 || args.top_k > ds.n_cols() {
        return Err(CliError::Usage(format!(
            "--top-k {} must be between 1 and the column count {}",
            args.top_k,
            ds.n_cols()
        )));
    }
    ds.require_both_classes()?;
    let params = MartParams {
        seed: config.seed,
        ..config.mart.clone()
    };
    let importances = feature_importances(&ds, &params)?;
    let indices: Vec<usize> = rank_by_importance(&importances).into_iter().take(args.top_k).collect();
    let selection = Selection {
        num_features: ds.n_cols(),
        feature_names: indices.iter().map(|&i| ds.feature_names()[i].clone()).collect(),
        indices,
        importances,
    };
    write_json(&args.out_indices, &selection)?;
    if let Some(out) = &args.out_data {
        let projected = ds.project(&selection.indices)?;
        let weight_header = match &config.weights {
            WeightMode::Column(name) => Some(name.as_str()),
            _ => None,
        };
        write_csv(&projected, out, weight_header)?;
    }
    Ok(())
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Identifies the inputs of a training run so a checkpoint is only reused by
/// the run that produced it.
fn fingerprint(config: &RunConfig, data: &Path, selection: Option<&Selection>) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update(config.fingerprint_json().as_bytes());
    h.update(b"\n");
    h.update(file_digest(data)?.as_bytes());
    h.update(b"\n");
    if let Some(s) = selection {
        h.update(
            serde_json::to_string(&s.indices)
                .map_err(dforest::Error::from)?
                .as_bytes(),
        );
    }
    Ok(hex::encode(h.finalize()))
}

/// Opens the checkpoint directory, discarding it when it belongs to other inputs.
fn open_checkpoint(dir: &Path, fingerprint: &str) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::in_dir(dir)?;
    let stamp_path = dir.join("run.json");
    let matches = fs::read_to_string(&stamp_path)
        .ok()
        .and_then(|t| serde_json::from_str::<RunStamp>(&t).ok())
        .is_some_and(|s| s.fingerprint == fingerprint);
    if !matches {
        ckpt.reset()?;
        write_json(
            &stamp_path,
            &RunStamp {
                fingerprint: fingerprint.to_string(),
            },
        )?;
    }
    Ok(ckpt)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.data {
        config.data = Some(p.clone());
    }
    if let Some(p) = &args.model {
        config.model = Some(p.clone());
    }
    if let Some(p) = &args.checkpoint {
        config.checkpoint = Some(p.clone());
    }
    if let Some(n) = args.pool_size {
        config.pool_size = n;
    }
    config.validate()?;
    let data_path = required(config.data.clone(), "--data")?;
    let model_path = required(config.model.clone(), "--model")?;
    let selection = args.selected.as_deref().map(Selection::load).transpose()?;

    let full = load_training(&data_path, &config)?;
    let ds = match &selection {
        Some(s) => {
            if s.num_features != full.n_cols() {
                return Err(CliError::Runtime(format!(
                    "selection was made on {} columns, data has {}",
                    s.num_features,
                    full.n_cols()
                )));
            }
            full.project(&s.indices)?
        }
        None => full.clone(),
    };

    let print = fingerprint(&config, &data_path, selection.as_ref())?;
    let ckpt = match &config.checkpoint {
        Some(dir) => open_checkpoint(dir, &print)?,
        None => Checkpoint::in_memory(),
    };
    let opts = ExecOptions {
        resume: true,
        max_jobs: args.stop_after,
        ..ExecOptions::new(config.pool_size)
    };
    let run = run_cascade(&ds, &config.cascade(), &ckpt, &opts)?;
    if let Some(dir) = &config.checkpoint {
        run.report.write_event_log(&dir.join("events.log"))?;
    }
    let mut model = run.into_model()?;
    if let Some(s) = &selection {
        model.selected_features = model.selected_features.iter().map(|&i| s.indices[i]).collect();
        model.num_features = s.num_features;
    }
    eprintln!("trained: {model}");
    // Paths and pool size do not affect the model; leave them out so the
    // file depends only on the data and the training settings.
    let stored = RunConfig {
        data: None,
        model: None,
        checkpoint: None,
        pool_size: 1,
        ..config
    };
    ModelFile::new(stored, full.feature_names().to_vec(), model).save(&model_path)
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let file = ModelFile::load(&args.model)?;
    let (values, cols) = load_features_csv(&args.data, &file.config.csv_options())?;
    let rows = RowMajor::new(&values, cols)?;
    let scores = predict_cascade(&file.model, &rows)?;
    write_scores(&args.out, &scores)?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let scores = read_scores(&args.scores)?;
    let labels = load_csv_with(
        &args.labels,
        &CsvOptions {
            label_column: ColumnRef::Name(args.label_column.clone()),
            ..CsvOptions::default()
        },
    )?;
    let rates = args.rates.clone().unwrap_or_else(|| DEFAULT_RATES.to_vec());
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(CliError::Usage(format!("rate {r} is not in (0, 1]")));
    }
    let report = MetricReport::compute(&scores, labels.labels(), &rates)?;
    if let Some(out) = &args.pr_out {
        write_pr_csv(out, &report.pr_points)?;
    }
    let mut text = String::new();
    if args.json {
        let summary = serde_json::json!({
            "auc": report.auc,
            "f1": report.f1,
            "ks": report.ks,
            "recall_at": report.recall_at,
        });
        text = serde_json::to_string_pretty(&summary).map_err(dforest::Error::from)?;
        text.push('\n');
    } else {
        text.push_str(&format!(
            "auc {:.6}\nks {:.6}\nf1 {:.6}\n",
            report.auc, report.ks, report.f1
        ));
        for (rate, recall) in &report.recall_at {
            text.push_str(&format!("recall@{rate} {recall:.6}\n"));
        }
    }
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}
