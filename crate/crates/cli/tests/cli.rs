use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldl_cli::commands::{self, prepare_data};
use ldl_cli::ExperimentConfig;
use ldl_core::amend::EngineConfig;
use ldl_core::datagen::{load_csv, SyntheticSpec};
use ldl_core::nn::OptimizerConfig;
use ldl_core::semantic::SemanticConfig;
use serde_json::Value;

fn ldl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small_config(dir: &Path, json: &str) {
    fs::write(dir.join("config.json"), json).unwrap();
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn missing_vocabulary_is_an_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), r#"{"vocabulary": "nowhere/vectors.txt"}"#);
    let out = ldl(&["--config", "config.json", "embed-analyze"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/vectors.txt"));
}

#[test]
fn corrupted_checkpoints_exit_with_checkpoint_code() {
    let dir = tempfile::tempdir().unwrap();
    small_config(
        dir.path(),
        r#"{"synthetic": {"samples_per_class": 10}, "semantic": {"epochs": 1}, "engine": {"epochs": 1, "warmup_epochs": 0}}"#,
    );
    assert!(ldl(&["--config", "config.json", "train"], dir.path()).status.success());
    let ckpt = dir.path().join("out").join(commands::CHECKPOINT_FILE);
    let data = format!("out/{}", commands::TRAIN_FILE);
    let original = fs::read(&ckpt).unwrap();

    let mut bad_magic = original.clone();
    bad_magic[0] ^= 0xff;
    fs::write(&ckpt, &bad_magic).unwrap();
    let out = ldl(&["--data", &data, "evaluate"], dir.path());
    assert_eq!(out.status.code(), Some(3));

    let mut bad_version = original.clone();
    bad_version[8..12].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&ckpt, &bad_version).unwrap();
    assert_eq!(ldl(&["--data", &data, "evaluate"], dir.path()).status.code(), Some(3));

    fs::write(&ckpt, &original[..original.len() / 2]).unwrap();
    assert_eq!(ldl(&["--data", &data, "amend"], dir.path()).status.code(), Some(3));

    fs::write(&ckpt, &original).unwrap();
    assert!(ldl(&["--data", &data, "evaluate"], dir.path()).status.success());
}

#[test]
fn generated_data_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), r#"{"synthetic": {"samples_per_class": 12, "compound_fraction": 0.25}}"#);
    assert!(ldl(&["--config", "config.json", "gen-data"], dir.path()).status.success());
    let data = load_csv(&dir.path().join("out").join(commands::DATA_FILE), 7).unwrap();
    assert_eq!(data.len(), 7 * 12);
    assert_eq!(data.class_counts(), vec![12; 7]);
    let compound = data.samples().iter().filter(|s| s.compound_with.is_some()).count();
    assert!(compound > 0 && compound < data.len());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(commands::MANIFEST_FILE)).unwrap()).unwrap();
    assert!(manifest.is_object());
}

#[test]
fn orthonormal_vocabulary_gives_identity_similarities() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("vec.txt"), "2 3\nup 1 0 0\ndown 0 0 2.5\n").unwrap();
    small_config(dir.path(), r#"{"vocabulary": "vec.txt", "words": ["up", "down"]}"#);
    assert!(ldl(&["--config", "config.json", "embed-analyze"], dir.path()).status.success());
    let text = fs::read_to_string(dir.path().join("out").join(commands::SIMILARITY_FILE)).unwrap();
    let rows: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows[0][1..], ["up", "down"]);
    for (i, row) in rows[1..].iter().enumerate() {
        for (j, v) in row[1..].iter().enumerate() {
            assert_eq!(v.parse::<f64>().unwrap(), if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn full_warmup_matches_plain_cross_entropy() {
    let base = ExperimentConfig {
        noise_ratio: 0.2,
        synthetic: SyntheticSpec { samples_per_class: 20, ..Default::default() },
        semantic: SemanticConfig { epochs: 2, ..Default::default() },
        ..Default::default()
    };
    let data = prepare_data(&base.resolved()).unwrap();
    let warm = ExperimentConfig {
        engine: EngineConfig { epochs: 8, warmup_epochs: 8, ..Default::default() },
        ..base.clone()
    };
    let plain = ExperimentConfig {
        engine: EngineConfig { epochs: 8, warmup_epochs: 2, beta: 1.0, ..Default::default() },
        ..base
    };
    let a = commands::fit(&warm.resolved(), &data).unwrap().outcome;
    let b = commands::fit(&plain.resolved(), &data).unwrap().outcome;
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn flipped_samples_report_lower_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        noise_ratio: 0.2,
        semantic: SemanticConfig {
            hidden: 128,
            epochs: 60,
            optimizer: OptimizerConfig::adam(3e-3),
            ..Default::default()
        },
        ..Default::default()
    };
    let out = dir.path().join("out");
    commands::train(&config, &out, &out.join(commands::CHECKPOINT_FILE)).unwrap();
    let (mut flipped, mut clean) = (Vec::new(), Vec::new());
    for row in jsonl(&out.join(commands::REPORT_FILE)) {
        let alpha = row["alpha"].as_f64().unwrap();
        if row["flipped"].as_bool().unwrap() {
            flipped.push(alpha);
        } else {
            clean.push(alpha);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!flipped.is_empty());
    assert!(mean(&flipped) < mean(&clean), "{} vs {}", mean(&flipped), mean(&clean));
}

#[test]
fn converged_noiseless_run_fits_its_training_set() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ldl(&["train"], dir.path()).status.success());
    let out = ldl(&["--data", &format!("out/{}", commands::TRAIN_FILE), "evaluate"], dir.path());
    assert!(out.status.success());
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() > 0.95, "{eval}");
}

#[test]
fn amend_writes_one_distribution_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    small_config(
        dir.path(),
        r#"{"synthetic": {"samples_per_class": 15}, "semantic": {"epochs": 2}, "engine": {"epochs": 3, "warmup_epochs": 1}}"#,
    );
    assert!(ldl(&["--config", "config.json", "gen-data"], dir.path()).status.success());
    assert!(ldl(&["--config", "config.json", "train"], dir.path()).status.success());
    let data = format!("out/{}", commands::DATA_FILE);
    assert!(ldl(&["--data", &data, "amend"], dir.path()).status.success());
    let rows = jsonl(&dir.path().join("out").join(commands::AMEND_FILE));
    assert_eq!(rows.len(), 7 * 15);
    for row in rows {
        let l: Vec<f64> = row["distribution"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(l.len(), 7);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(l.iter().all(|&v| v > 0.0));
        let alpha = row["alpha"].as_f64().unwrap();
        assert!(alpha.is_finite() && alpha > 0.0);
        assert!((1..=7).contains(&row["predicted"].as_u64().unwrap()));
    }
}
