//! Small, fast datasets and models for engine tests.

use cup_curriculum::curriculum::{CurriculumConfig, TrainData, TrainSettings};
use cup_curriculum::data::{synthetic, Dataset, VocabOptions};
use cup_curriculum::model::{ModelConfig, Preset, TransformerLm};
use cup_curriculum::optim::LrSchedule;

pub fn dataset(bytes: usize) -> Dataset {
    let text = synthetic::generate(7, bytes);
    Dataset::from_text(&text, (0.8, 0.1), &VocabOptions::default()).unwrap()
}

pub fn tiny_settings() -> TrainSettings {
    TrainSettings {
        batch_size: 4,
        seq_len: 8,
        lr: LrSchedule::default(),
        grad_clip: 0.5,
        shuffle: true,
    }
}

pub fn tiny_model(vocab: usize) -> TransformerLm {
    TransformerLm::new(ModelConfig {
        vocab_size: vocab,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ffn: 32,
        max_seq_len: 8,
        dropout: 0.1,
        positional: Default::default(),
        activation: Default::default(),
    })
    .unwrap()
}

pub fn small_model(vocab: usize) -> TransformerLm {
    TransformerLm::new(ModelConfig::preset(Preset::Small, vocab)).unwrap()
}

/// Tiny model, data and settings; cheap enough for dozens of full runs.
pub struct Tiny {
    pub dataset: Dataset,
    pub data: TrainData,
    pub settings: TrainSettings,
}

impl Tiny {
    pub fn new() -> Self {
        let dataset = dataset(6_000);
        let settings = tiny_settings();
        let data = TrainData::new(&dataset, &settings).unwrap();
        Self {
            dataset,
            data,
            settings,
        }
    }

    pub fn model(&self) -> TransformerLm {
        tiny_model(self.dataset.vocab.len())
    }
}

pub fn curriculum(n: usize, m: usize, epochs: usize) -> CurriculumConfig {
    CurriculumConfig {
        n,
        m,
        epochs_per_cycle: epochs,
        ..CurriculumConfig::default()
    }
}
