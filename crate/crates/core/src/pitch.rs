//! F0 contour extraction by normalized autocorrelation.
//!
//! Exists for the qualitative analysis figures only; the vocoder itself is
//! never conditioned on pitch.

use crate::audio::AudioClip;
use crate::error::{Error, Result};

const WINDOW: usize = 1024;
const HOP: usize = 256;
const F0_MIN: f64 = 50.0;
const F0_MAX: f64 = 600.0;
const VOICING_THRESHOLD: f64 = 0.5;
const ENERGY_FLOOR: f64 = 1e-6;

/// Per-frame F0 in Hz, 0 meaning unvoiced. Voiced statistics are absent
/// when no frame is voiced.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub frame_hop: usize,
    pub mean_voiced: Option<f64>,
    pub std_voiced: Option<f64>,
}

impl PitchContour {
    pub fn voiced_count(&self) -> usize {
        self.f0.iter().filter(|&&v| v > 0.0).count()
    }
}

pub fn extract_pitch(clip: &AudioClip) -> Result<PitchContour> {
    let x = &clip.samples;
    if x.len() < WINDOW {
        return Err(Error::DegenerateInput(format!(
            "clip of {} samples is shorter than the {}-sample pitch window",
            x.len(),
            WINDOW
        )));
    }
    let fs = clip.sample_rate as f64;
    let tau_min = ((fs / F0_MAX).floor() as usize).max(2);
    let tau_max = ((fs / F0_MIN).ceil() as usize).min(WINDOW / 2);
    let n_frames = (x.len() - WINDOW) / HOP + 1;
    let mut f0 = Vec::with_capacity(n_frames);
    for fr in 0..n_frames {
        let frame = &x[fr * HOP..fr * HOP + WINDOW];
        f0.push(frame_f0(frame, fs, tau_min, tau_max));
    }
    let voiced: Vec<f64> = f0.iter().copied().filter(|&v| v > 0.0).collect();
    let (mean_voiced, std_voiced) = if voiced.is_empty() {
        (None, None)
    } else {
        let m = voiced.iter().sum::<f64>() / voiced.len() as f64;
        let var = voiced.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / voiced.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    Ok(PitchContour {
        f0,
        frame_hop: HOP,
        mean_voiced,
        std_voiced,
    })
}

fn frame_f0(frame: &[f64], fs: f64, tau_min: usize, tau_max: usize) -> f64 {
    let energy: f64 = frame.iter().map(|v| v * v).sum();
    if energy / (frame.len() as f64) < ENERGY_FLOOR {
        return 0.0;
    }
    // normalized autocorrelation over the overlapping region per lag
    let mut r = vec![0.0f64; tau_max + 1];
    for tau in tau_min..=tau_max {
        let n = frame.len() - tau;
        let mut num = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..n {
            num += frame[i] * frame[i + tau];
            e0 += frame[i] * frame[i];
            e1 += frame[i + tau] * frame[i + tau];
        }
        let denom = (e0 * e1).sqrt();
        r[tau] = if denom > 0.0 { num / denom } else { 0.0 };
    }
    let global_max = r[tau_min..=tau_max]
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if global_max < VOICING_THRESHOLD {
        return 0.0;
    }
    // a pure tone correlates equally well at every period multiple, so take
    // the smallest-lag local peak that comes close to the global maximum
    let accept = (0.9 * global_max).max(VOICING_THRESHOLD);
    let mut best_tau = 0usize;
    for tau in tau_min..=tau_max {
        let left = if tau > tau_min { r[tau - 1] } else { f64::MIN };
        let right = if tau < tau_max { r[tau + 1] } else { f64::MIN };
        if r[tau] >= accept && r[tau] >= left && r[tau] >= right {
            best_tau = tau;
            break;
        }
    }
    if best_tau == 0 {
        return 0.0;
    }
    // parabolic refinement around the integer peak
    let tau = best_tau as f64
        + if best_tau > tau_min && best_tau < tau_max {
            let (a, b, c) = (r[best_tau - 1], r[best_tau], r[best_tau + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-12 {
                (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        } else {
            0.0
        };
    fs / tau
}
