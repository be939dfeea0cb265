//! Non-parallel adversarial training: manifest ingestion, configuration,
//! the alternating update loop, the segment-size ablation protocol, and the
//! synthetic toy corpus used by hermetic end-to-end tests.

mod toy;
mod trainer;

pub use toy::{generate_toy_corpus, ToyCorpus};
pub use trainer::{ablation_run, train, train_with_log, AblationOutcome, Trainer};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{
    ContentBackendConfig, SerBackendConfig, SpeakerBackendConfig,
};
use crate::error::{Error, Result};
use crate::losses::{BatchReduction, LossWeights};
use crate::mel::MelConfig;
use crate::vocoder::{DiscriminatorConfig, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One corpus row: an audio file with its utterance-level arousal label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub audio_path: String,
    pub speaker_id: String,
    pub arousal: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

/// Result of manifest ingestion: valid rows plus an itemized account of
/// everything that was rejected, so nothing is dropped silently.
#[derive(Clone, Debug)]
pub struct ManifestLoad {
    pub rows: Vec<ManifestRow>,
    pub issues: Vec<RowIssue>,
    pub duplicate_paths: usize,
}

/// Parse a newline-delimited JSON manifest.
pub fn load_manifest(path: &Path) -> Result<ManifestLoad> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicate_paths = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue {
                    line: line_no,
                    message: format!("parse error: {e}"),
                });
                continue;
            }
        };
        if row.audio_path.is_empty() {
            issues.push(RowIssue {
                line: line_no,
                message: "empty audio_path".into(),
            });
            continue;
        }
        if !(1.0..=7.0).contains(&row.arousal) {
            issues.push(RowIssue {
                line: line_no,
                message: format!("arousal {} outside [1, 7]", row.arousal),
            });
            continue;
        }
        if !seen.insert(row.audio_path.clone()) {
            duplicate_paths += 1;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: no valid rows ({} rejected)",
            path.display(),
            issues.len()
        )));
    }
    Ok(ManifestLoad {
        rows,
        issues,
        duplicate_paths,
    })
}

/// Write rows as newline-delimited JSON.
pub fn save_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Which pretrained models back each role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendSet {
    pub content: ContentBackendConfig,
    pub speaker: SpeakerBackendConfig,
    pub ser: SerBackendConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Exponential learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub batch_reduction: BatchReduction,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Codebook size K.
    pub k_units: usize,
    pub backends: BackendSet,
    pub mel: MelConfig,
    /// Steps between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sample_rate: 16_000,
            segment_seconds: 1.5,
            batch_size: 8,
            steps: 5_000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_decay: 0.999,
            adam_beta1: 0.8,
            adam_beta2: 0.99,
            seed: 42,
            batch_reduction: BatchReduction::Mean,
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            k_units: 100,
            backends: BackendSet {
                content: ContentBackendConfig::Mock {
                    seed: 42,
                    feature_dim: 64,
                },
                speaker: SpeakerBackendConfig::Mock { seed: 42 },
                ser: SerBackendConfig::Mock { seed: 42 },
            },
            mel: MelConfig::default(),
            checkpoint_interval: 1_000,
        }
    }
}

impl TrainConfig {
    /// Small everything: the hermetic smoke-test setup over the toy corpus.
    pub fn toy_preset(seed: u64) -> Self {
        TrainConfig {
            segment_seconds: 0.5,
            batch_size: 2,
            steps: 500,
            seed,
            generator: GeneratorConfig::tiny(),
            discriminator: DiscriminatorConfig::tiny(),
            k_units: 32,
            backends: BackendSet {
                content: ContentBackendConfig::Mock {
                    seed,
                    feature_dim: 16,
                },
                speaker: SpeakerBackendConfig::Mock { seed },
                ser: SerBackendConfig::Mock { seed },
            },
            checkpoint_interval: 0,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_seconds <= 0.0 {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.weights.lambda_ser > 0.0 && self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 while the SER loss is active".into(),
            ));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::Config("learning rates and decay must be positive".into()));
        }
        if self.k_units < 2 {
            return Err(Error::Config("k_units must be at least 2".into()));
        }
        if self.weights.lambda_fm < 0.0 || self.weights.lambda_r < 0.0 || self.weights.lambda_ser < 0.0
        {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.sample_rate != self.sample_rate {
            return Err(Error::Config(
                "generator sample rate differs from working rate".into(),
            ));
        }
        if self.mel.sample_rate != self.sample_rate {
            return Err(Error::Config("mel sample rate differs from working rate".into()));
        }
        // training segments are unit-aligned, so their sample count is
        // floor(seconds * frame_rate) frames of (sample_rate / frame_rate)
        // samples; the reconstruction loss needs at least one mel window
        let frames = ((self.segment_seconds * self.generator.frame_rate as f64).floor() as usize).max(1);
        let seg_samples = frames * (self.sample_rate / self.generator.frame_rate) as usize;
        if seg_samples < self.mel.n_fft {
            return Err(Error::Config(format!(
                "segment of {seg_samples} samples is shorter than the {}-sample mel window",
                self.mel.n_fft
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic RNG streams: one master seed fans out by purpose and step,
/// so resuming at step N replays the exact stream an uninterrupted run
/// would have used.
pub mod rng_streams {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const PURPOSE_INIT: u64 = 1;
    pub const PURPOSE_KMEANS: u64 = 2;
    pub const PURPOSE_SHUFFLE: u64 = 3;
    pub const PURPOSE_SEGMENT: u64 = 4;

    pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((purpose << 48) | (index & 0xffff_ffff_ffff));
        rng
    }
}
