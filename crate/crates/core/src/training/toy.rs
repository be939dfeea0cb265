//! Synthetic toy corpus: seeded harmonic tones with pseudo-arousal labels.
//! Every end-to-end test trains on this so nothing in CI needs a real
//! (licensed) corpus or a network connection.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{save_wav, AudioClip};
use crate::error::{Error, Result};
use crate::training::{save_manifest, ManifestRow, Split};

pub struct ToyCorpus {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// Write `n_train` training and `n_eval` test clips plus a manifest.
/// Higher pseudo-arousal rows get higher fundamentals and brighter
/// harmonics, which gives the SER mock something consistent to regress.
pub fn generate_toy_corpus(dir: &Path, n_train: usize, n_eval: usize, seed: u64) -> Result<ToyCorpus> {
    if n_train == 0 {
        return Err(Error::Contract("toy corpus needs at least one training clip".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let total = n_train + n_eval;
    let mut rows = Vec::with_capacity(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..total {
        let frac = if total > 1 { i as f64 / (total - 1) as f64 } else { 0.5 };
        let arousal = 1.5 + 5.0 * frac + rng.gen_range(-0.2..0.2);
        let arousal = arousal.clamp(1.0, 7.0);
        let f0 = 110.0 * (1.0 + 2.0 * frac) + rng.gen_range(-5.0..5.0);
        let seconds = rng.gen_range(1.2..2.0);
        let clip = harmonic_clip(f0, seconds, frac, &mut rng);
        let name = format!("toy_{i:02}.wav");
        let path = dir.join(&name);
        save_wav(&clip, &path)?;
        rows.push(ManifestRow {
            audio_path: name,
            speaker_id: if i % 2 == 0 { "spk_a".into() } else { "spk_b".into() },
            arousal,
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    let manifest_path = dir.join("manifest.jsonl");
    save_manifest(&rows, &manifest_path)?;
    Ok(ToyCorpus {
        dir: dir.to_path_buf(),
        manifest_path,
        rows,
    })
}

fn harmonic_clip(f0: f64, seconds: f64, brightness: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let rate = 16_000u32;
    let n = (seconds * rate as f64) as usize;
    let vibrato_hz = rng.gen_range(4.0..7.0);
    let vibrato_depth = rng.gen_range(0.002..0.01);
    let noise_amp = 0.01 + 0.02 * brightness;
    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / rate as f64;
        let vib = 1.0 + vibrato_depth * (2.0 * std::f64::consts::PI * vibrato_hz * t).sin();
        phase += 2.0 * std::f64::consts::PI * f0 * vib / rate as f64;
        let mut s = 0.0;
        for h in 1..=4u32 {
            let amp = (1.0 / h as f64) * (1.0 - 0.15 * (1.0 - brightness) * (h as f64 - 1.0)).max(0.1);
            s += amp * (phase * h as f64).sin();
        }
        // attack/decay envelope so segments from different offsets differ
        let env = (t * 12.0).min(1.0) * (1.0 - (t / seconds).powi(3));
        s = s * env * 0.35 + noise_amp * rng.gen_range(-1.0..1.0);
        samples.push(s);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        for s in &mut samples {
            *s *= 0.95 / peak;
        }
    }
    AudioClip::new(samples, rate, "toy").unwrap()
}
