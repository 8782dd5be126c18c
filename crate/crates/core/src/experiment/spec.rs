use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumConfig, TrainSettings};
use crate::data::{synthetic, Dataset, VocabOptions};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig, Positional, Preset};

/// Architecture: a preset plus optional overrides of any dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: Preset,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub d_ffn: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub dropout: Option<f64>,
    pub positional: Option<Positional>,
    pub activation: Option<Activation>,
}

impl ModelSpec {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        let base = ModelConfig::preset(self.preset, vocab_size);
        ModelConfig {
            vocab_size,
            d_model: self.d_model.unwrap_or(base.d_model),
            n_heads: self.n_heads.unwrap_or(base.n_heads),
            n_layers: self.n_layers.unwrap_or(base.n_layers),
            d_ffn: self.d_ffn.unwrap_or(base.d_ffn),
            max_seq_len: self.max_seq_len.unwrap_or(base.max_seq_len),
            dropout: self.dropout.unwrap_or(base.dropout),
            positional: self.positional.unwrap_or(base.positional),
            activation: self.activation.unwrap_or(base.activation),
        }
    }

    /// The same model description with every override filled in.
    pub fn materialized(&self) -> Self {
        let c = self.config(1);
        Self {
            preset: self.preset,
            d_model: Some(c.d_model),
            n_heads: Some(c.n_heads),
            n_layers: Some(c.n_layers),
            d_ffn: Some(c.d_ffn),
            max_seq_len: Some(c.max_seq_len),
            dropout: Some(c.dropout),
            positional: Some(c.positional),
            activation: Some(c.activation),
        }
    }
}

/// Corpus source. Explicit split files win over a single file, which wins
/// over the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// One file split by contiguous line blocks.
    pub path: Option<PathBuf>,
    /// `(train, valid)` fractions; test takes the rest.
    pub split: (f64, f64),
    pub synthetic_bytes: usize,
    pub synthetic_seed: u64,
    pub min_freq: usize,
    pub max_vocab: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        let v = VocabOptions::default();
        Self {
            train: None,
            valid: None,
            test: None,
            path: None,
            split: (0.8, 0.1),
            synthetic_bytes: 100_000,
            synthetic_seed: 0,
            min_freq: v.min_freq,
            max_vocab: v.max_size,
        }
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        let opts = VocabOptions {
            min_freq: self.min_freq,
            max_size: self.max_vocab,
        };
        match (&self.train, &self.valid, &self.test, &self.path) {
            (Some(tr), Some(va), Some(te), _) => Dataset::from_files(tr, va, te, &opts),
            (None, None, None, Some(p)) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Dataset::from_text(&text, self.split, &opts)
            }
            (None, None, None, None) => {
                let text = synthetic::generate(self.synthetic_seed, self.synthetic_bytes);
                Dataset::from_text(&text, self.split, &opts)
            }
            _ => Err(Error::Config(
                "data: give all of train/valid/test, or a single path, or neither".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Number of independent dense early-stopping runs.
    pub early_stopping_runs: usize,
    pub patience: usize,
    /// Epoch cap per early-stopping run; 0 means the curriculum's total
    /// epoch budget.
    pub max_epochs: usize,
    /// Early-stopping run `k` (0-based) uses seed `seed_offset + k`.
    pub seed_offset: u64,
    /// Run a pruning-only baseline for every seed.
    pub imp: bool,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            early_stopping_runs: 20,
            patience: 3,
            max_epochs: 0,
            seed_offset: 1000,
            imp: true,
        }
    }
}

/// Everything that determines a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub curriculum: CurriculumConfig,
    pub train: TrainSettings,
    pub baselines: BaselineSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("runs"),
            model: ModelSpec::default(),
            data: DataSpec::default(),
            curriculum: CurriculumConfig::default(),
            train: TrainSettings::default(),
            baselines: BaselineSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {dup} listed twice")));
        }
        if self.baselines.early_stopping_runs == 0 {
            return Err(Error::Config("early_stopping_runs must be at least 1".into()));
        }
        if self.train.seq_len > self.model.config(1).max_seq_len {
            return Err(Error::Config(format!(
                "seq_len {} exceeds the model's max_seq_len",
                self.train.seq_len
            )));
        }
        self.curriculum.validate()?;
        self.train.validate()
    }

    /// Copy with every default written out explicitly.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.model = self.model.materialized();
        if out.curriculum.epoch_schedule.is_none() {
            let c = &out.curriculum;
            out.curriculum.epoch_schedule = Some((1..=c.n + c.m).map(|i| c.epochs(i)).collect());
        }
        if out.baselines.max_epochs == 0 {
            out.baselines.max_epochs = self.curriculum_epochs();
        }
        out
    }

    /// Total epochs of a full curriculum run without early stopping.
    pub fn curriculum_epochs(&self) -> usize {
        let c = &self.curriculum;
        (1..=c.n + c.m).map(|i| c.epochs(i)).sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved experiment as `spec.toml` inside `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("spec.toml");
        fs::write(&path, self.resolved().to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
