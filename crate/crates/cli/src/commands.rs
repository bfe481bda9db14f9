//! Subcommand implementations. The in-memory pieces (`prepare_data`, `fit`)
//! are public so experiments can run without touching the filesystem.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ldl_core::amend::{evaluate as accuracy, train as train_engine, Predictor, SemanticContext, TrainOutcome};
use ldl_core::datagen::{generate_synthetic, inject_noise, load_csv, save_csv, split, Dataset};
use ldl_core::embeddings::{parse_word2vec_text, EmotionVocabulary};
use ldl_core::semantic::{train_autoencoder, AutoEncoder, SemanticHistory};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, ConfigSnapshot};
use crate::config::ExperimentConfig;
use crate::InputError;

pub const DATA_FILE: &str = "data.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const AMEND_FILE: &str = "amend.jsonl";

pub fn load_vocabulary(config: &ExperimentConfig) -> Result<EmotionVocabulary, InputError> {
    let text = match &config.vocabulary {
        Some(path) => fs::read_to_string(path).map_err(|e| InputError::Read {
            path: path.clone(),
            source: e,
        })?,
        None => EmotionVocabulary::fixture_text().to_string(),
    };
    parse_word2vec_text(&text, &config.words).map_err(|e| match &config.vocabulary {
        Some(path) => InputError::Vocabulary {
            path: path.clone(),
            source: e,
        },
        None => InputError::Core(e),
    })
}

fn load_dataset(path: &Path, classes: usize) -> Result<Dataset, InputError> {
    load_csv(path, classes).map_err(|e| InputError::Dataset {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: EmotionVocabulary,
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads or generates the data, splits off the test set and flips
/// `noise_ratio` of the training labels. Test labels stay clean.
pub fn prepare_data(config: &ExperimentConfig) -> Result<Prepared, InputError> {
    let config = config.resolved();
    config.validate()?;
    let seeds = config.seeds();
    let vocab = load_vocabulary(&config)?;
    let full = match &config.data {
        Some(path) => load_dataset(path, vocab.classes())?,
        None => generate_synthetic(&config.synthetic, &vocab)?,
    };
    let (train, test) = match &config.test_data {
        Some(path) => (full, load_dataset(path, vocab.classes())?),
        None => split(&full, config.test_fraction, seeds.split)?,
    };
    let train = if config.noise_ratio > 0.0 {
        inject_noise(&train, config.noise_ratio, seeds.noise)?.0
    } else {
        train
    };
    Ok(Prepared { vocab, train, test })
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub autoencoder: AutoEncoder,
    pub semantic_history: SemanticHistory,
    pub outcome: TrainOutcome,
}

/// Trains the autoencoder, then the task model against its frozen graphs.
pub fn fit(config: &ExperimentConfig, data: &Prepared) -> Result<Fitted> {
    let config = config.resolved();
    let (autoencoder, semantic_history) =
        train_autoencoder(&data.train, &data.vocab, &config.semantic).context("training the autoencoder")?;
    let ctx = SemanticContext::new(&autoencoder, &data.vocab, config.engine.ground_cost);
    let outcome =
        train_engine(&data.train, &ctx, &config.engine, Some(&data.test)).context("training the task model")?;
    Ok(Fitted {
        autoencoder,
        semantic_history,
        outcome,
    })
}

pub fn checkpoint_of(config: &ExperimentConfig, vocab: &EmotionVocabulary, fitted: &Fitted) -> Checkpoint {
    let config = config.resolved();
    let round = &fitted.outcome.final_round;
    Checkpoint {
        config: ConfigSnapshot {
            engine: config.engine,
            semantic: config.semantic,
        },
        vocab: vocab.clone(),
        autoencoder: fitted.autoencoder.clone(),
        model: fitted.outcome.model.clone(),
        prototypes: round.prototypes.clone(),
        alpha_class_means: round.confidences.class_means.clone(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    rows: usize,
    classes: usize,
    dim: usize,
    words: &'a [String],
    synthetic: &'a ldl_core::datagen::SyntheticSpec,
}

/// Writes the synthetic dataset and a manifest echoing its spec.
pub fn gen_data(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let config = config.resolved();
    config.validate()?;
    let vocab = load_vocabulary(&config)?;
    let data = generate_synthetic(&config.synthetic, &vocab).map_err(InputError::Core)?;
    let path = out.join(DATA_FILE);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_csv(&data, &path).with_context(|| format!("writing {}", path.display()))?;
    let manifest = Manifest {
        rows: data.len(),
        classes: data.classes(),
        dim: data.dim(),
        words: vocab.words(),
        synthetic: &config.synthetic,
    };
    write_file(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

pub fn embed_analyze(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let vocab = load_vocabulary(config)?;
    let path = out.join(SIMILARITY_FILE);
    write_file(&path, vocab.similarity_matrix().to_csv().as_bytes())?;
    Ok(path)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    id: &'a str,
    y: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flipped: Option<bool>,
    alpha: f64,
    distribution: &'a [f64],
}

/// Full experiment: data, both trainings, checkpoint and reports.
pub fn train(config: &ExperimentConfig, out: &Path, checkpoint: &Path) -> Result<Fitted> {
    let data = prepare_data(config)?;
    log::info!(
        "training on {} samples ({} held out), {} classes",
        data.train.len(),
        data.test.len(),
        data.vocab.classes()
    );
    let fitted = fit(config, &data)?;
    let outcome = &fitted.outcome;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_csv(&data.train, &out.join(TRAIN_FILE))?;
    save_csv(&data.test, &out.join(TEST_FILE))?;
    write_file(&out.join(CONFIG_FILE), &serde_json::to_vec_pretty(&config.resolved())?)?;
    write_jsonl(&out.join(METRICS_FILE), &outcome.metrics)?;
    let round = &outcome.final_round;
    write_jsonl(
        &out.join(REPORT_FILE),
        data.train.samples().iter().enumerate().map(|(i, s)| ReportRow {
            id: &s.id,
            y: s.label,
            true_label: s.true_label,
            flipped: s.flipped,
            alpha: round.confidences.alpha[i],
            distribution: round.distributions[i].as_slice(),
        }),
    )?;
    checkpoint_of(config, &data.vocab, &fitted).save(checkpoint)?;
    if let Some(last) = outcome.metrics.last() {
        log::info!(
            "epoch {}: train accuracy {:.4}, test accuracy {:.4}",
            last.epoch,
            last.train_accuracy,
            last.test_accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(fitted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub n: usize,
}

pub fn evaluate(checkpoint: &Path, data: &Path) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = load_dataset(data, ck.vocab.classes())?;
    check_dims(&ck, &dataset)?;
    Ok(Evaluation {
        accuracy: accuracy(&ck.model, &dataset)?,
        n: dataset.len(),
    })
}

fn check_dims(ck: &Checkpoint, dataset: &Dataset) -> Result<(), InputError> {
    if dataset.dim() != ck.model.input_dim() {
        return Err(InputError::Invalid(format!(
            "dataset has {} features, checkpoint expects {}",
            dataset.dim(),
            ck.model.input_dim()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct AmendRow<'a> {
    id: &'a str,
    predicted: usize,
    alpha: f64,
    distribution: &'a [f64],
}

/// Per-sample prediction, amended distribution and confidence.
pub fn amend(checkpoint: &Path, data: &Path, out: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = load_dataset(data, ck.vocab.classes())?;
    check_dims(&ck, &dataset)?;
    let predictor: Predictor = ck.predictor();
    let predictions = dataset
        .samples()
        .iter()
        .map(|s| predictor.predict_with_distribution(&s.x, Some(s.label)))
        .collect::<Result<Vec<_>, _>>()?;
    let path = out.join(AMEND_FILE);
    write_jsonl(
        &path,
        dataset.samples().iter().zip(&predictions).map(|(s, p)| AmendRow {
            id: &s.id,
            predicted: p.class,
            alpha: p.alpha,
            distribution: p.distribution.as_slice(),
        }),
    )?;
    Ok(path)
}
