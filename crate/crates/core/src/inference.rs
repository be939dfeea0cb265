//! The deployed conversion path: waveform in, target arousal in, converted
//! waveform out, all through a loaded checkpoint.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::{load_audio, save_wav, AudioClip};
use crate::backends::{build_content, build_speaker, ContentBackend, SpeakerBackend};
use crate::checkpoint::CheckpointBundle;
use crate::encoders::{embed_emotion, emotion, quantize, SpeakerEmbedding, UnitCodebook, UnitSequence};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::training::{ManifestRow, TrainConfig};
use crate::vocoder::{build_conditioning, generate, GeneratorConfig};

/// Default ceiling on input duration; whole-utterance synthesis on very
/// long inputs gets expensive fast.
pub const DEFAULT_MAX_SECONDS: f64 = 60.0;

/// A single conversion instruction against a checkpoint on disk.
#[derive(Clone, Debug)]
pub struct ConversionRequest {
    pub input: AudioClip,
    pub target_arousal: f64,
    pub checkpoint: PathBuf,
}

/// Loaded conversion pipeline. Read-only once constructed; safe to share
/// across threads.
pub struct Converter {
    config: TrainConfig,
    gen_store: ParamStore,
    codebook: UnitCodebook,
    content: Arc<dyn ContentBackend>,
    speaker: Arc<dyn SpeakerBackend>,
    max_seconds: f64,
}

/// Conversion output with the intermediate representations exposed, so
/// callers can verify that only the emotion slice moved between targets.
pub struct Conversion {
    pub audio: AudioClip,
    pub units: UnitSequence,
    pub speaker: SpeakerEmbedding,
}

impl Converter {
    pub fn from_bundle(bundle: &CheckpointBundle) -> Result<Self> {
        let config = bundle.meta.config.clone();
        config.validate()?;
        let content = build_content(&config.backends.content, config.sample_rate)?;
        let speaker = build_speaker(&config.backends.speaker)?;
        if content.id() != bundle.meta.codebook.backend_id {
            return Err(Error::Config(format!(
                "checkpoint codebook was produced by '{}' but the config builds '{}'",
                bundle.meta.codebook.backend_id,
                content.id()
            )));
        }
        if bundle.codebook.feature_dim() != content.feature_dim() {
            return Err(Error::Config(format!(
                "codebook feature dim {} != backend feature dim {}",
                bundle.codebook.feature_dim(),
                content.feature_dim()
            )));
        }
        Ok(Converter {
            config,
            gen_store: bundle.gen_params.clone(),
            codebook: bundle.codebook.clone(),
            content,
            speaker,
            max_seconds: DEFAULT_MAX_SECONDS,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bundle(&CheckpointBundle::load(dir)?)
    }

    pub fn with_max_seconds(mut self, seconds: f64) -> Self {
        self.max_seconds = seconds;
        self
    }

    pub fn generator_config(&self) -> &GeneratorConfig {
        &self.config.generator
    }

    pub fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }

    /// Full pipeline: content units -> speaker vector -> target-arousal
    /// embedding -> conditioning -> synthesis.
    pub fn convert_detailed(&self, input: &AudioClip, target_arousal: f64) -> Result<Conversion> {
        emotion::check_arousal(target_arousal)?;
        if input.sample_rate != self.config.sample_rate {
            return Err(Error::Contract(format!(
                "input rate {} != working rate {} (load audio through the toolkit)",
                input.sample_rate, self.config.sample_rate
            )));
        }
        if input.duration_seconds() > self.max_seconds {
            return Err(Error::Contract(format!(
                "input of {:.1}s exceeds the {:.0}s duration guard",
                input.duration_seconds(),
                self.max_seconds
            )));
        }
        let feats = self.content.encode(input)?;
        let units = quantize(&feats, &self.codebook)?;
        let spk = self.speaker.embed(input)?;
        let emo = embed_emotion(target_arousal, &self.gen_store)?;
        let cond = build_conditioning(&units, &spk, &emo, &self.gen_store, feats.frame_rate)?;
        let mut audio = generate(&cond, &self.gen_store, &self.config.generator)?;
        audio.source_id = format!("{}#e{:.3}", input.source_id, target_arousal);
        debug_assert!(audio.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
        Ok(Conversion {
            audio,
            units,
            speaker: spk,
        })
    }

    pub fn convert(&self, input: &AudioClip, target_arousal: f64) -> Result<AudioClip> {
        Ok(self.convert_detailed(input, target_arousal)?.audio)
    }
}

/// One-shot conversion from a request that references a checkpoint on disk.
pub fn convert(req: &ConversionRequest) -> Result<AudioClip> {
    let converter = Converter::load(&req.checkpoint)?;
    converter.convert(&req.input, req.target_arousal)
}

/// Target selection for batch conversion: one global value or each row's
/// own annotated arousal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchTarget {
    Global(f64),
    Column,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    pub input: String,
    pub output: String,
    pub target_arousal: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexFailure {
    pub input: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BatchIndex {
    pub entries: Vec<IndexEntry>,
    pub failures: Vec<IndexFailure>,
}

/// Convert every manifest row, writing one WAV per row plus an
/// `index.jsonl` mapping inputs to outputs. Row failures are itemized and
/// the run continues.
pub fn batch_convert(
    rows: &[ManifestRow],
    base: &Path,
    target: BatchTarget,
    converter: &Converter,
    out_dir: &Path,
) -> Result<BatchIndex> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = BatchIndex::default();
    for (i, row) in rows.iter().enumerate() {
        let target_arousal = match target {
            BatchTarget::Global(v) => v,
            BatchTarget::Column => row.arousal,
        };
        let result = (|| -> Result<PathBuf> {
            let path = if Path::new(&row.audio_path).is_absolute() {
                PathBuf::from(&row.audio_path)
            } else {
                base.join(&row.audio_path)
            };
            let clip = load_audio(&path, converter.sample_rate())?;
            let converted = converter.convert(&clip, target_arousal)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("row{i}"));
            let out_path = out_dir.join(format!("{stem}_e{target_arousal:.2}.wav"));
            save_wav(&converted, &out_path)?;
            Ok(out_path)
        })();
        match result {
            Ok(out_path) => index.entries.push(IndexEntry {
                input: row.audio_path.clone(),
                output: out_path.display().to_string(),
                target_arousal,
            }),
            Err(e) => index.failures.push(IndexFailure {
                input: row.audio_path.clone(),
                error: e.to_string(),
            }),
        }
    }
    let index_path = out_dir.join("index.jsonl");
    let mut text = String::new();
    for e in &index.entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    for f in &index.failures {
        text.push_str(&serde_json::to_string(f)?);
        text.push('\n');
    }
    std::fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))?;
    Ok(index)
}
