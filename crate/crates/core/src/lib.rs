//! Non-parallel speech emotion conversion over the arousal dimension.
//!
//! An utterance is decomposed into discrete lexical units (k-means over a
//! pluggable content encoder), a global speaker d-vector, and a trainable
//! arousal embedding; an adversarial upsampling vocoder resynthesizes the
//! concatenated representations at any target arousal in [1, 7]. Training,
//! conversion, and the SER/MOS evaluation suite all run hermetically on
//! deterministic mock backends; adapters for locally cached pretrained
//! models plug in through the same traits.

pub mod audio;
pub mod backends;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod figures;
pub mod graph;
pub mod inference;
pub mod kernels;
pub mod losses;
pub mod mel;
pub mod net;
pub mod params;
pub mod pitch;
pub mod tensor;
pub mod training;
pub mod vocoder;

pub use audio::{load_audio, sample_segment, save_wav, AudioClip, Segment, WORKING_SAMPLE_RATE};
pub use checkpoint::{CheckpointBundle, CHECKPOINT_FORMAT_VERSION};
pub use encoders::{
    embed_emotion, encode_content, encode_speaker, fit_codebook, quantize, ContentFeatures,
    EmotionEmbedding, SpeakerEmbedding, UnitCodebook, UnitSequence, EMOTION_DIM, SPEAKER_DIM,
};
pub use error::{Error, Result};
pub use evaluation::{
    classwise_report, evaluate, score_mos, sec_error, significance, EvalReport, EvalRow,
    EvalTargets,
};
pub use figures::emit_figures;
pub use inference::{batch_convert, convert, BatchTarget, ConversionRequest, Converter};
pub use losses::{ccc, recon_loss, BatchReduction, LossReport, LossWeights};
pub use mel::{mel, MelAnalyzer, MelConfig, MelSpectrogram};
pub use pitch::{extract_pitch, PitchContour};
pub use tensor::Tensor;
pub use training::{
    ablation_run, generate_toy_corpus, load_manifest, train, ManifestRow, Split, TrainConfig,
    Trainer,
};
pub use vocoder::{
    build_conditioning, discriminate, generate, ConditioningTensor, DiscriminatorBank,
    DiscriminatorConfig, Generator, GeneratorConfig,
};
