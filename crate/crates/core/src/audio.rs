//! Waveform loading, resampling, segment sampling and WAV export.
//!
//! Everything downstream runs at a single working rate (16 kHz by default);
//! `load_audio` is the only place sample rates are reconciled.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The sample rate every encoder and the vocoder operate at.
pub const WORKING_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput("empty audio clip".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateInput("non-finite sample in clip".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// A segment cut (or padded) out of a clip.
#[derive(Clone, Debug)]
pub struct Segment {
    pub clip: AudioClip,
    pub offset: usize,
    pub padded: bool,
}

/// Decode a WAV or FLAC file, downmix to mono, resample to `target_rate`,
/// and scale down iff the peak exceeds 1.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Contract("target rate must be positive".into()));
    }
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| Error::io(path, e))?;
    let (samples, rate) = match &magic {
        b"RIFF" => decode_wav(path)?,
        b"fLaC" => decode_flac(path)?,
        _ => {
            return Err(Error::Decode(format!(
                "{}: unrecognized container (expected WAV or FLAC)",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "{}: file decodes to zero samples",
            path.display()
        )));
    }
    let mut samples = if rate == target_rate {
        samples
    } else {
        resample(&samples, rate, target_rate)
    };
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        for s in &mut samples {
            *s /= peak;
        }
    }
    AudioClip::new(samples, target_rate, path.display().to_string())
}

fn decode_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader =
        hound::WavReader::open(path).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let mono: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => downmix(
            reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?,
            channels,
        ),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            downmix(
                reader
                    .into_samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?,
                channels,
            )
        }
    };
    Ok((mono, spec.sample_rate))
}

fn decode_flac(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = claxon::FlacReader::open(path)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let info = reader.streaminfo();
    let channels = info.channels as usize;
    let scale = (1i64 << (info.bits_per_sample - 1)) as f64;
    let interleaved: Vec<f64> = reader
        .samples()
        .map(|s| s.map(|v| v as f64 / scale))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    Ok((downmix(interleaved, channels), info.sample_rate))
}

fn downmix(interleaved: Vec<f64>, channels: usize) -> Vec<f64> {
    if channels <= 1 {
        return interleaved;
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Write 16-bit PCM WAV.
pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    Ok(())
}

const RESAMPLE_TAPS: i64 = 32;

/// Windowed-sinc resampling. Output length is `ceil(n * to / from)`.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let n = x.len();
    let out_len = ((n as u64 * to as u64).div_ceil(from as u64)) as usize;
    let ratio = from as f64 / to as f64; // input samples per output sample
    let cutoff = (to as f64 / from as f64).min(1.0);
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 * ratio;
        let k0 = center.floor() as i64 - RESAMPLE_TAPS + 1;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in k0..k0 + 2 * RESAMPLE_TAPS {
            let t = center - k as f64;
            let w = cutoff * sinc(cutoff * t) * hann_lobe(t / RESAMPLE_TAPS as f64);
            norm += w;
            if k >= 0 && (k as usize) < n {
                acc += w * x[k as usize];
            }
        }
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }
    out
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

fn hann_lobe(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        0.5 + 0.5 * (std::f64::consts::PI * t).cos()
    }
}

/// Cut a fixed-duration segment at a seeded uniform offset. Clips shorter
/// than the segment come back zero-padded at the tail with `padded` set, so
/// short manifest rows are never dropped.
pub fn sample_segment(clip: &AudioClip, seg_seconds: f64, seed: u64) -> Result<Segment> {
    if seg_seconds.is_nan() || seg_seconds <= 0.0 {
        return Err(Error::Contract(format!(
            "segment length must be positive, got {seg_seconds}"
        )));
    }
    let seg_len = (seg_seconds * clip.sample_rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::Contract(format!(
            "segment of {seg_seconds}s is shorter than one sample at {} Hz",
            clip.sample_rate
        )));
    }
    let t = clip.samples.len();
    if t >= seg_len {
        let max_off = t - seg_len;
        let offset = if max_off == 0 {
            0
        } else {
            ChaCha8Rng::seed_from_u64(seed).gen_range(0..=max_off)
        };
        let clip = AudioClip {
            samples: clip.samples[offset..offset + seg_len].to_vec(),
            sample_rate: clip.sample_rate,
            source_id: clip.source_id.clone(),
        };
        Ok(Segment {
            clip,
            offset,
            padded: false,
        })
    } else {
        let mut samples = clip.samples.clone();
        samples.resize(seg_len, 0.0);
        let clip = AudioClip {
            samples,
            sample_rate: clip.sample_rate,
            source_id: clip.source_id.clone(),
        };
        Ok(Segment {
            clip,
            offset: 0,
            padded: true,
        })
    }
}
