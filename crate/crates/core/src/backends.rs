//! Pluggable model backends.
//!
//! The toolkit never ships pretrained weights. Each role (content encoder,
//! speaker encoder, SER regressor, MOS predictor) is a trait with two
//! implementations: a seeded deterministic mock that keeps the whole test
//! suite hermetic, and an external adapter that resolves weights from the
//! model cache directory (`EMOVOX_CACHE_DIR`) and reports precisely why it
//! cannot serve if the deployment lacks them.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::encoders::{ContentFeatures, SpeakerEmbedding, SPEAKER_DIM};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::mel::{MelAnalyzer, MelConfig};
use crate::net::{Ctx, GraphCtx};
use crate::tensor::Tensor;

/// Environment variable pointing at locally cached model weights.
pub const MODEL_CACHE_ENV: &str = "EMOVOX_CACHE_DIR";

pub fn model_cache_dir() -> PathBuf {
    std::env::var_os(MODEL_CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".emovox-cache"))
}

fn external_unavailable(role: &str, name: &str) -> Error {
    let dir = model_cache_dir().join(name);
    let reason = if dir.is_dir() {
        format!(
            "weights found at {} but this build has no external {role} runtime",
            dir.display()
        )
    } else {
        format!(
            "weights not found at {} (set {MODEL_CACHE_ENV} to your model cache)",
            dir.display()
        )
    };
    Error::BackendUnavailable {
        backend: name.to_string(),
        reason,
    }
}

// ---------------------------------------------------------------- configs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentBackendConfig {
    Mock { seed: u64, feature_dim: usize },
    External { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeakerBackendConfig {
    Mock { seed: u64 },
    External { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SerBackendConfig {
    Mock { seed: u64 },
    External { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MosBackendConfig {
    Mock,
    External { name: String },
}

// ----------------------------------------------------------------- traits

pub trait ContentBackend: Send + Sync {
    fn id(&self) -> String;
    fn frame_rate(&self) -> u32;
    fn feature_dim(&self) -> usize;
    fn encode(&self, clip: &AudioClip) -> Result<ContentFeatures>;
    /// Content hash of the frozen weights; the freeze contract is checked
    /// against this.
    fn param_digest(&self) -> u64;
}

pub trait SpeakerBackend: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, clip: &AudioClip) -> Result<SpeakerEmbedding>;
    fn param_digest(&self) -> u64;
}

/// Arousal regressor. The graph entry point keeps the model frozen while
/// letting gradients pass through to the waveform.
pub trait SerBackend: Send + Sync {
    fn id(&self) -> String;
    fn predict(&self, clip: &AudioClip) -> Result<f64>;
    fn predict_var(&self, ctx: &mut GraphCtx<'_>, wave: Var, sample_rate: u32) -> Result<Var>;
    fn param_digest(&self) -> u64;
}

pub trait MosBackend: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, clip: &AudioClip) -> Result<f64>;
}

// ------------------------------------------------------------ mock content

const CONTENT_FRAME_RATE: u32 = 50;
const CONTENT_BANDS: usize = 16;

/// Seeded random projection of per-frame band energies. Strictly local:
/// each feature frame depends only on its own `hop` samples, so the
/// declared receptive field is one frame.
pub struct MockContentEncoder {
    seed: u64,
    feature_dim: usize,
    projection: Tensor, // [feature_dim, CONTENT_BANDS]
    fft: Arc<dyn Fft<f64>>,
    hop: usize,
}

impl MockContentEncoder {
    pub fn new(seed: u64, feature_dim: usize, sample_rate: u32) -> Result<Self> {
        if !sample_rate.is_multiple_of(CONTENT_FRAME_RATE) {
            return Err(Error::Config(format!(
                "sample rate {sample_rate} is not a multiple of the {CONTENT_FRAME_RATE} Hz content frame rate"
            )));
        }
        if feature_dim == 0 {
            return Err(Error::Config("content feature_dim must be positive".into()));
        }
        let hop = (sample_rate / CONTENT_FRAME_RATE) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de_c0de);
        let projection = Tensor::randn(
            &[feature_dim, CONTENT_BANDS],
            1.0 / (CONTENT_BANDS as f64).sqrt(),
            &mut rng,
        );
        Ok(MockContentEncoder {
            seed,
            feature_dim,
            projection,
            fft: FftPlanner::new().plan_fft_forward(hop),
            hop,
        })
    }

    fn frame_bands(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.hop;
        let mut buf: Vec<Complex64> = frame.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(&mut buf, &mut scratch);
        let bins = n / 2 + 1;
        let mut bands = vec![0.0f64; CONTENT_BANDS];
        for (k, c) in buf[..bins].iter().enumerate() {
            bands[k * CONTENT_BANDS / bins] += c.norm_sqr();
        }
        for b in bands.iter_mut() {
            *b = (*b + 1e-10).ln();
        }
        bands
    }
}

impl ContentBackend for MockContentEncoder {
    fn id(&self) -> String {
        format!("mock-content/v1?seed={}&dim={}", self.seed, self.feature_dim)
    }

    fn frame_rate(&self) -> u32 {
        CONTENT_FRAME_RATE
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn encode(&self, clip: &AudioClip) -> Result<ContentFeatures> {
        let t_prime = clip.samples.len() / self.hop;
        if t_prime == 0 {
            return Err(Error::DegenerateInput(format!(
                "clip of {} samples is shorter than one {}-sample content frame",
                clip.samples.len(),
                self.hop
            )));
        }
        let mut frames = Tensor::zeros(&[t_prime, self.feature_dim]);
        for t in 0..t_prime {
            let bands = self.frame_bands(&clip.samples[t * self.hop..(t + 1) * self.hop]);
            let bands_t = Tensor::from_vec(&[CONTENT_BANDS], bands);
            let feat = crate::kernels::matvec(&self.projection, &bands_t);
            frames.row_mut(t).copy_from_slice(feat.data());
        }
        ContentFeatures::new(frames, CONTENT_FRAME_RATE)
    }

    fn param_digest(&self) -> u64 {
        self.projection.digest()
    }
}

// ------------------------------------------------------------ mock speaker

const SPEAKER_BANDS: usize = 32;
const SPEAKER_FRAME: usize = 512;
const SPEAKER_STATS: usize = SPEAKER_BANDS + 3; // bands + rms + zcr + duration proxy

/// Seeded projection of long-term spectral statistics to a 512-dim vector.
pub struct MockSpeakerEncoder {
    seed: u64,
    projection: Tensor, // [SPEAKER_DIM, SPEAKER_STATS]
    fft: Arc<dyn Fft<f64>>,
}

impl MockSpeakerEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bea_4e5d);
        MockSpeakerEncoder {
            seed,
            projection: Tensor::randn(
                &[SPEAKER_DIM, SPEAKER_STATS],
                1.0 / (SPEAKER_STATS as f64).sqrt(),
                &mut rng,
            ),
            fft: FftPlanner::new().plan_fft_forward(SPEAKER_FRAME),
        }
    }
}

impl SpeakerBackend for MockSpeakerEncoder {
    fn id(&self) -> String {
        format!("mock-speaker/v1?seed={}", self.seed)
    }

    fn embed(&self, clip: &AudioClip) -> Result<SpeakerEmbedding> {
        if clip.samples.is_empty() {
            return Err(Error::DegenerateInput("empty clip".into()));
        }
        let mut padded = clip.samples.clone();
        if padded.len() < SPEAKER_FRAME {
            padded.resize(SPEAKER_FRAME, 0.0);
        }
        let n_frames = padded.len() / SPEAKER_FRAME;
        let bins = SPEAKER_FRAME / 2 + 1;
        let mut bands = vec![0.0f64; SPEAKER_BANDS];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let mut buf: Vec<Complex64> = padded[f * SPEAKER_FRAME..(f + 1) * SPEAKER_FRAME]
                .iter()
                .map(|&s| Complex64::new(s, 0.0))
                .collect();
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf[..bins].iter().enumerate() {
                bands[k * SPEAKER_BANDS / bins] += c.norm_sqr();
            }
        }
        let mut stats = Vec::with_capacity(SPEAKER_STATS);
        for b in &bands {
            stats.push((b / n_frames as f64 + 1e-10).ln());
        }
        let rms = (clip.samples.iter().map(|v| v * v).sum::<f64>() / clip.samples.len() as f64).sqrt();
        let zcr = clip
            .samples
            .windows(2)
            .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
            .count() as f64
            / clip.samples.len() as f64;
        stats.push((rms + 1e-10).ln());
        stats.push(zcr);
        stats.push((clip.samples.len() as f64).ln());
        let stats_t = Tensor::from_vec(&[SPEAKER_STATS], stats);
        let raw = crate::kernels::matvec(&self.projection, &stats_t);
        SpeakerEmbedding::new(raw.map(f64::tanh))
    }

    fn param_digest(&self) -> u64 {
        self.projection.digest()
    }
}

// ---------------------------------------------------------------- mock SER

const SER_MELS: usize = 32;

/// Differentiable arousal proxy: fixed random projection of mean log-mel
/// statistics squashed into [1, 7]. Frozen by construction; its parameters
/// enter training graphs as constants.
pub struct MockSerModel {
    seed: u64,
    weights: Tensor, // [SER_MELS]
    bias: f64,
    analyzer: Arc<MelAnalyzer>,
}

impl MockSerModel {
    pub fn new(seed: u64, sample_rate: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e12_5e12);
        let weights = Tensor::randn(&[SER_MELS], 1.0 / (SER_MELS as f64).sqrt(), &mut rng);
        let analyzer = Arc::new(MelAnalyzer::new(MelConfig {
            sample_rate,
            n_fft: 512,
            hop: 128,
            n_mels: SER_MELS,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            log_floor: 1e-5,
        }));
        MockSerModel {
            seed,
            weights,
            bias: 0.0,
            analyzer,
        }
    }

    fn squash(z: f64) -> f64 {
        4.0 + 3.0 * z.tanh()
    }
}

impl SerBackend for MockSerModel {
    fn id(&self) -> String {
        format!("mock-ser/v1?seed={}", self.seed)
    }

    fn predict(&self, clip: &AudioClip) -> Result<f64> {
        let m = self.analyzer.log_mel(&clip.samples)?;
        let frames = m.dim(1);
        let mut z = self.bias;
        for (b, w) in self.weights.data().iter().enumerate() {
            let mean = m.data()[b * frames..(b + 1) * frames].iter().sum::<f64>() / frames as f64;
            z += w * mean;
        }
        Ok(Self::squash(z))
    }

    fn predict_var(&self, ctx: &mut GraphCtx<'_>, wave: Var, sample_rate: u32) -> Result<Var> {
        if sample_rate != self.analyzer.config().sample_rate {
            return Err(Error::Contract(format!(
                "SER backend built for {} Hz, fed {} Hz audio",
                self.analyzer.config().sample_rate,
                sample_rate
            )));
        }
        let m = ctx.log_mel(&wave, &self.analyzer);
        let means = ctx.mean_axis1(&m);
        let w = ctx.constant(self.weights.clone());
        let z = ctx.dot(&w, &means);
        let z = ctx.affine(&z, 1.0, self.bias);
        let t = ctx.tanh(&z);
        Ok(ctx.affine(&t, 3.0, 4.0))
    }

    fn param_digest(&self) -> u64 {
        self.weights.digest() ^ self.bias.to_bits()
    }
}

// ---------------------------------------------------------------- mock MOS

/// Spectral-flatness naturalness proxy on [1, 5]: tonal structure scores
/// high, noise-like and clipped signals score low.
pub struct MockMosModel {
    analyzer: Arc<MelAnalyzer>,
}

impl MockMosModel {
    pub fn new(sample_rate: u32) -> Self {
        MockMosModel {
            analyzer: Arc::new(MelAnalyzer::new(MelConfig {
                sample_rate,
                n_fft: 512,
                hop: 256,
                n_mels: 8, // unused; magnitudes() drives the score
                fmin: 0.0,
                fmax: sample_rate as f64 / 2.0,
                log_floor: 1e-5,
            })),
        }
    }
}

impl MosBackend for MockMosModel {
    fn id(&self) -> String {
        "mock-mos/v1".into()
    }

    fn score(&self, clip: &AudioClip) -> Result<f64> {
        let mags = self.analyzer.magnitudes(&clip.samples)?;
        let n = mags.numel() as f64;
        let mut log_sum = 0.0;
        let mut sum = 0.0;
        for &m in mags.data() {
            let p = m * m + 1e-12;
            log_sum += p.ln();
            sum += p;
        }
        let flatness = (log_sum / n).exp() / (sum / n);
        let score = 1.0 + 4.0 * (1.0 - flatness).powi(4);
        Ok(score.clamp(1.0, 5.0))
    }
}

// ------------------------------------------------------- external adapters

pub struct ExternalContentAdapter {
    pub name: String,
}

impl ContentBackend for ExternalContentAdapter {
    fn id(&self) -> String {
        format!("external-content/{}", self.name)
    }
    fn frame_rate(&self) -> u32 {
        CONTENT_FRAME_RATE
    }
    fn feature_dim(&self) -> usize {
        768
    }
    fn encode(&self, _clip: &AudioClip) -> Result<ContentFeatures> {
        Err(external_unavailable("content encoder", &self.name))
    }
    fn param_digest(&self) -> u64 {
        0
    }
}

pub struct ExternalSpeakerAdapter {
    pub name: String,
}

impl SpeakerBackend for ExternalSpeakerAdapter {
    fn id(&self) -> String {
        format!("external-speaker/{}", self.name)
    }
    fn embed(&self, _clip: &AudioClip) -> Result<SpeakerEmbedding> {
        Err(external_unavailable("speaker encoder", &self.name))
    }
    fn param_digest(&self) -> u64 {
        0
    }
}

pub struct ExternalSerAdapter {
    pub name: String,
}

impl SerBackend for ExternalSerAdapter {
    fn id(&self) -> String {
        format!("external-ser/{}", self.name)
    }
    fn predict(&self, _clip: &AudioClip) -> Result<f64> {
        Err(external_unavailable("SER", &self.name))
    }
    fn predict_var(&self, _ctx: &mut GraphCtx<'_>, _wave: Var, _rate: u32) -> Result<Var> {
        Err(external_unavailable("SER", &self.name))
    }
    fn param_digest(&self) -> u64 {
        0
    }
}

pub struct ExternalMosAdapter {
    pub name: String,
}

impl MosBackend for ExternalMosAdapter {
    fn id(&self) -> String {
        format!("external-mos/{}", self.name)
    }
    fn score(&self, _clip: &AudioClip) -> Result<f64> {
        Err(external_unavailable("MOS", &self.name))
    }
}

// -------------------------------------------------------------- factories

pub fn build_content(cfg: &ContentBackendConfig, sample_rate: u32) -> Result<Arc<dyn ContentBackend>> {
    match cfg {
        ContentBackendConfig::Mock { seed, feature_dim } => Ok(Arc::new(MockContentEncoder::new(
            *seed,
            *feature_dim,
            sample_rate,
        )?)),
        ContentBackendConfig::External { name } => {
            Ok(Arc::new(ExternalContentAdapter { name: name.clone() }))
        }
    }
}

pub fn build_speaker(cfg: &SpeakerBackendConfig) -> Result<Arc<dyn SpeakerBackend>> {
    match cfg {
        SpeakerBackendConfig::Mock { seed } => Ok(Arc::new(MockSpeakerEncoder::new(*seed))),
        SpeakerBackendConfig::External { name } => {
            Ok(Arc::new(ExternalSpeakerAdapter { name: name.clone() }))
        }
    }
}

pub fn build_ser(cfg: &SerBackendConfig, sample_rate: u32) -> Result<Arc<dyn SerBackend>> {
    match cfg {
        SerBackendConfig::Mock { seed } => Ok(Arc::new(MockSerModel::new(*seed, sample_rate))),
        SerBackendConfig::External { name } => Ok(Arc::new(ExternalSerAdapter { name: name.clone() })),
    }
}

pub fn build_mos(cfg: &MosBackendConfig, sample_rate: u32) -> Result<Arc<dyn MosBackend>> {
    match cfg {
        MosBackendConfig::Mock => Ok(Arc::new(MockMosModel::new(sample_rate))),
        MosBackendConfig::External { name } => Ok(Arc::new(ExternalMosAdapter { name: name.clone() })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::ParamStore;

    fn tone(freq: f64, seconds: f64) -> AudioClip {
        let rate = 16_000u32;
        let n = (seconds * rate as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
            "tone",
        )
        .unwrap()
    }

    #[test]
    fn content_frame_count_tracks_rate() {
        let enc = MockContentEncoder::new(1, 8, 16_000).unwrap();
        let f = enc.encode(&tone(220.0, 1.0)).unwrap();
        assert!((f.n_frames() as i64 - 50).abs() <= 1);
        assert_eq!(f.feature_dim(), 8);
        assert_eq!(f.frame_rate, 50);
    }

    #[test]
    fn content_deterministic() {
        let enc = MockContentEncoder::new(7, 8, 16_000).unwrap();
        let clip = tone(173.0, 0.4);
        assert_eq!(enc.encode(&clip).unwrap(), enc.encode(&clip).unwrap());
    }

    #[test]
    fn content_is_local_across_concatenation() {
        let enc = MockContentEncoder::new(3, 8, 16_000).unwrap();
        let a = tone(200.0, 0.4); // 6400 samples = 20 frames exactly
        let b = tone(350.0, 0.3);
        let mut cat = a.samples.clone();
        cat.extend_from_slice(&b.samples);
        let cat_clip = AudioClip::new(cat, 16_000, "cat").unwrap();
        let fa = enc.encode(&a).unwrap();
        let fcat = enc.encode(&cat_clip).unwrap();
        for t in 0..fa.n_frames() {
            assert_eq!(fa.frames.row(t), fcat.frames.row(t), "frame {t}");
        }
    }

    #[test]
    fn speaker_dimension_and_distinctness() {
        let enc = MockSpeakerEncoder::new(11);
        let e1 = enc.embed(&tone(120.0, 0.5)).unwrap();
        let e2 = enc.embed(&tone(480.0, 0.5)).unwrap();
        assert_eq!(e1.vector.numel(), 512);
        assert_eq!(
            enc.embed(&tone(120.0, 0.5)).unwrap().vector,
            e1.vector,
            "same clip must embed identically"
        );
        assert_ne!(e1.vector, e2.vector);
    }

    #[test]
    fn ser_plain_and_graph_paths_agree() {
        let ser = MockSerModel::new(5, 16_000);
        let clip = tone(261.0, 0.6);
        let plain = ser.predict(&clip).unwrap();
        assert!((1.0..=7.0).contains(&plain));

        let store = ParamStore::new();
        let mut g = Graph::new();
        let mut ctx = GraphCtx::new(&mut g, &store, false);
        let n = clip.samples.len();
        let wave = ctx.constant(Tensor::from_vec(&[n], clip.samples.clone()));
        let pred = ser.predict_var(&mut ctx, wave, 16_000).unwrap();
        assert!((g.value(pred).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn mos_orders_clean_tone_above_clipped() {
        let mos = MockMosModel::new(16_000);
        let clean = tone(330.0, 0.5);
        let clipped = AudioClip::new(
            clean.samples.iter().map(|v| (v * 8.0).clamp(-0.95, 0.95)).collect(),
            16_000,
            "clipped",
        )
        .unwrap();
        let s_clean = mos.score(&clean).unwrap();
        let s_clipped = mos.score(&clipped).unwrap();
        assert!(
            s_clean > s_clipped,
            "clean {s_clean} should beat clipped {s_clipped}"
        );
        assert!((1.0..=5.0).contains(&s_clean));
        assert!((1.0..=5.0).contains(&s_clipped));
    }

    #[test]
    fn external_adapters_report_unavailable_not_data_errors() {
        let c = ExternalContentAdapter { name: "hubert-base".into() };
        match c.encode(&tone(100.0, 0.2)) {
            Err(Error::BackendUnavailable { backend, .. }) => assert_eq!(backend, "hubert-base"),
            other => panic!("expected BackendUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn config_serde_roundtrip() {
        let cfg = ContentBackendConfig::Mock { seed: 9, feature_dim: 16 };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ContentBackendConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
