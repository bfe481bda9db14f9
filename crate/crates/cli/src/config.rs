//! Experiment configuration read from a JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use ldl_core::amend::EngineConfig;
use ldl_core::datagen::SyntheticSpec;
use ldl_core::embeddings::DEFAULT_WORDS;
use ldl_core::semantic::SemanticConfig;
use serde::{Deserialize, Serialize};

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// word2vec text table; the bundled fixture when absent.
    pub vocabulary: Option<PathBuf>,
    /// Class words in label order.
    pub words: Vec<String>,
    /// Dataset CSV; a synthetic set is generated when absent.
    pub data: Option<PathBuf>,
    /// Held-out CSV; otherwise `data` is split with `test_fraction`.
    pub test_data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub test_fraction: f64,
    /// Share of training labels flipped before training.
    pub noise_ratio: f64,
    pub semantic: SemanticConfig,
    pub engine: EngineConfig,
    pub output_dir: PathBuf,
    /// Master seed. Sub-seeds are derived from it, see [`ExperimentConfig::resolved`].
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vocabulary: None,
            words: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            data: None,
            test_data: None,
            synthetic: SyntheticSpec::default(),
            test_fraction: 1.0 / 3.0,
            noise_ratio: 0.0,
            semantic: SemanticConfig::default(),
            engine: EngineConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Seeds of the individual random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub synthetic: u64,
    pub semantic: u64,
    pub engine: u64,
    pub noise: u64,
    pub split: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            synthetic: seed,
            semantic: seed.wrapping_add(1),
            engine: seed.wrapping_add(2),
            noise: seed.wrapping_add(3),
            split: seed.wrapping_add(4),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = fs::read_to_string(path).map_err(|e| InputError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| InputError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    /// Copy with the nested seeds replaced by the derived ones.
    pub fn resolved(&self) -> Self {
        let seeds = self.seeds();
        let mut out = self.clone();
        out.synthetic.seed = seeds.synthetic;
        out.semantic.seed = seeds.semantic;
        out.engine.seed = seeds.engine;
        out
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let bad = |m: String| Err(InputError::Invalid(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return bad(format!("noise_ratio {} outside [0, 1]", self.noise_ratio));
        }
        if self.words.len() < 2 {
            return bad("at least two class words are required".into());
        }
        self.synthetic.validate()?;
        self.semantic.validate()?;
        self.engine.validate()?;
        Ok(())
    }
}
