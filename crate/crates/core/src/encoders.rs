//! Disentangled representations: discrete lexical units from a k-means
//! codebook over content-encoder features, a global speaker vector, and a
//! trainable arousal embedding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backends::{ContentBackend, SpeakerBackend};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::net::Ctx;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const SPEAKER_DIM: usize = 512;
pub const EMOTION_DIM: usize = 128;
pub const AROUSAL_MIN: f64 = 1.0;
pub const AROUSAL_MAX: f64 = 7.0;

/// Frame-rate content features, `[T', feature_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentFeatures {
    pub frames: Tensor,
    pub frame_rate: u32,
}

impl ContentFeatures {
    pub fn new(frames: Tensor, frame_rate: u32) -> Result<Self> {
        if frames.rank() != 2 || frames.dim(0) == 0 {
            return Err(Error::Contract(
                "content features must be a non-empty [frames, dim] matrix".into(),
            ));
        }
        if !frames.is_finite() {
            return Err(Error::DegenerateInput("non-finite content feature".into()));
        }
        Ok(ContentFeatures { frames, frame_rate })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.dim(1)
    }
}

/// K-means centroids over content features, `[K, feature_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitCodebook {
    centroids: Tensor,
}

impl UnitCodebook {
    pub fn new(centroids: Tensor) -> Result<Self> {
        if centroids.rank() != 2 || centroids.dim(0) < 2 {
            return Err(Error::Contract("codebook needs K >= 2 centroids".into()));
        }
        if !centroids.is_finite() {
            return Err(Error::Contract("non-finite centroid".into()));
        }
        let k = centroids.dim(0);
        for a in 0..k {
            for b in a + 1..k {
                if centroids.row(a) == centroids.row(b) {
                    return Err(Error::Contract(format!(
                        "centroids {a} and {b} are identical"
                    )));
                }
            }
        }
        Ok(UnitCodebook { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.dim(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.centroids.dim(1)
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }
}

/// Discrete lexical units, each in `[0, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    pub k: usize,
}

impl UnitSequence {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Global d-vector speaker representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Tensor,
}

impl SpeakerEmbedding {
    pub fn new(vector: Tensor) -> Result<Self> {
        if vector.numel() != SPEAKER_DIM {
            return Err(Error::Contract(format!(
                "speaker embedding must have dimension {SPEAKER_DIM}, got {}",
                vector.numel()
            )));
        }
        if !vector.is_finite() {
            return Err(Error::Contract("non-finite speaker embedding".into()));
        }
        Ok(SpeakerEmbedding {
            vector: vector.reshaped(&[SPEAKER_DIM]),
        })
    }
}

/// Learned arousal embedding together with the scalar it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionEmbedding {
    pub vector: Tensor,
    pub source_arousal: f64,
}

pub fn encode_content(clip: &AudioClip, backend: &dyn ContentBackend) -> Result<ContentFeatures> {
    backend.encode(clip)
}

pub fn encode_speaker(clip: &AudioClip, backend: &dyn SpeakerBackend) -> Result<SpeakerEmbedding> {
    backend.embed(clip)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-10;

/// Lloyd's algorithm with seeded k-means++ initialization.
pub fn fit_codebook(features: &[&ContentFeatures], k: usize, seed: u64) -> Result<UnitCodebook> {
    if k < 2 {
        return Err(Error::Contract("K must be at least 2".into()));
    }
    let dim = features
        .first()
        .map(|f| f.feature_dim())
        .ok_or_else(|| Error::InsufficientData("no feature matrices given".into()))?;
    let mut rows: Vec<&[f64]> = Vec::new();
    for f in features {
        if f.feature_dim() != dim {
            return Err(Error::Contract("feature dimension mismatch across clips".into()));
        }
        for i in 0..f.n_frames() {
            rows.push(f.frames.row(i));
        }
    }
    let n = rows.len();
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} frames cannot support K={k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.gen_range(0..n)].to_vec());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            // all remaining points coincide with a centroid; take any distinct row
            rows.iter()
                .position(|r| centroids.iter().all(|c| c.as_slice() != *r))
                .ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "fewer than K={k} distinct frames in the data"
                    ))
                })?
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        };
        centroids.push(rows[pick].to_vec());
        let cnew = centroids.last().unwrap();
        for (i, r) in rows.iter().enumerate() {
            let d = sq_dist(r, cnew);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    // Lloyd iterations
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(r, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(*r) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(rows[a], &centroids[assign[a]])
                            .partial_cmp(&sq_dist(rows[b], &centroids[assign[b]]))
                            .unwrap()
                    })
                    .unwrap();
                shift += sq_dist(&centroids[c], rows[far]);
                centroids[c] = rows[far].to_vec();
                assign[far] = c;
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0.0;
            for (j, s) in sums[c].iter().enumerate() {
                let nv = s * inv;
                let dv = nv - centroids[c][j];
                moved += dv * dv;
                centroids[c][j] = nv;
            }
            shift += moved;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }

    let flat: Vec<f64> = centroids.into_iter().flatten().collect();
    UnitCodebook::new(Tensor::from_vec(&[k, dim], flat))
}

/// Nearest-centroid assignment; ties break toward the lowest index.
pub fn quantize(features: &ContentFeatures, codebook: &UnitCodebook) -> Result<UnitSequence> {
    if features.feature_dim() != codebook.feature_dim() {
        return Err(Error::Contract(format!(
            "feature dim {} does not match codebook dim {}",
            features.feature_dim(),
            codebook.feature_dim()
        )));
    }
    let k = codebook.k();
    let mut units = Vec::with_capacity(features.n_frames());
    for i in 0..features.n_frames() {
        let row = features.frames.row(i);
        let mut best = 0u32;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = sq_dist(row, codebook.centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c as u32;
            }
        }
        units.push(best);
    }
    Ok(UnitSequence { units, k })
}

/// The trainable arousal embedder: two linear layers with a tanh between,
/// on the scalar rescaled to [0, 1].
pub mod emotion {
    use super::*;

    pub const HIDDEN: usize = 64;
    pub const PARAM_W1: &str = "emo.w1";
    pub const PARAM_B1: &str = "emo.b1";
    pub const PARAM_W2: &str = "emo.w2";
    pub const PARAM_B2: &str = "emo.b2";

    pub fn init_params(store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(PARAM_W1, Tensor::randn(&[HIDDEN, 1], 0.5, rng));
        store.insert(PARAM_B1, Tensor::randn(&[HIDDEN], 0.1, rng));
        store.insert(PARAM_W2, Tensor::randn(&[EMOTION_DIM, HIDDEN], 0.1, rng));
        store.insert(PARAM_B2, Tensor::zeros(&[EMOTION_DIM]));
    }

    pub fn check_arousal(e: f64) -> Result<()> {
        if !(AROUSAL_MIN..=AROUSAL_MAX).contains(&e) {
            return Err(Error::Contract(format!(
                "arousal {e} outside [{AROUSAL_MIN}, {AROUSAL_MAX}]"
            )));
        }
        Ok(())
    }

    pub fn forward<C: Ctx>(ctx: &mut C, e: f64) -> Result<C::T> {
        check_arousal(e)?;
        let scaled = (e - AROUSAL_MIN) / (AROUSAL_MAX - AROUSAL_MIN);
        let x = ctx.constant(Tensor::from_vec(&[1], vec![scaled]));
        let w1 = ctx.param(PARAM_W1);
        let b1 = ctx.param(PARAM_B1);
        let w2 = ctx.param(PARAM_W2);
        let b2 = ctx.param(PARAM_B2);
        let h = ctx.matvec(&w1, &x);
        let h = ctx.add(&h, &b1);
        let h = ctx.tanh(&h);
        let z = ctx.matvec(&w2, &h);
        Ok(ctx.add(&z, &b2))
    }
}

/// Plain-path arousal embedding from a parameter store.
pub fn embed_emotion(e: f64, store: &ParamStore) -> Result<EmotionEmbedding> {
    let mut ctx = crate::net::PlainCtx::new(store);
    let vector = emotion::forward(&mut ctx, e)?;
    Ok(EmotionEmbedding {
        vector,
        source_arousal: e,
    })
}
