//! Log-mel spectrogram extraction.
//!
//! The same analyzer drives the reconstruction loss (where gradients must
//! flow back to the generated waveform) and plain feature extraction, so
//! the framing and filterbank logic live here once. Frame count follows
//! `ceil(T / hop)` exactly; the signal is reflect-padded to cover it.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn n_frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }
}

/// Log-magnitude mel matrix plus the geometry it was computed with.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[n_mels, n_frames]`, natural-log magnitude.
    pub frames: Tensor,
    pub frame_hop: usize,
    pub n_mels: usize,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter stored sparsely as (first FFT bin, weights).
#[derive(Clone, Debug)]
struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

#[derive(Clone)]
pub struct MelAnalyzer {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

const MAG_EPS: f64 = 1e-24;

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Self {
        let n = cfg.n_fft;
        let window: Vec<f64> = (0..n)
            .map(|i| {
                let x = std::f64::consts::PI * 2.0 * i as f64 / n as f64;
                0.5 - 0.5 * x.cos()
            })
            .collect();
        let filters = build_filters(&cfg);
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n);
        let fft_inv = planner.plan_fft_inverse(n);
        MelAnalyzer {
            cfg,
            window,
            filters,
            fft_fwd,
            fft_inv,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    fn pad_geometry(&self, t: usize) -> (usize, usize, usize) {
        let n_frames = self.cfg.n_frames(t);
        let left = (self.cfg.n_fft - self.cfg.hop) / 2;
        let needed = (n_frames - 1) * self.cfg.hop + self.cfg.n_fft;
        let right = needed - left - t;
        (n_frames, left, right)
    }

    fn padded(&self, x: &[f64]) -> Vec<f64> {
        let (_, left, right) = self.pad_geometry(x.len());
        let mut out = Vec::with_capacity(left + x.len() + right);
        for i in 0..left {
            out.push(x[left - i]);
        }
        out.extend_from_slice(x);
        for j in 0..right {
            out.push(x[x.len() - 2 - j]);
        }
        out
    }

    fn frame_spectrum(&self, padded: &[f64], frame: usize) -> Vec<Complex64> {
        let n = self.cfg.n_fft;
        let start = frame * self.cfg.hop;
        let mut buf: Vec<Complex64> = padded[start..start + n]
            .iter()
            .zip(self.window.iter())
            .map(|(&s, &w)| Complex64::new(s * w, 0.0))
            .collect();
        let mut scratch = vec![Complex64::default(); self.fft_fwd.get_inplace_scratch_len()];
        self.fft_fwd.process_with_scratch(&mut buf, &mut scratch);
        buf
    }

    /// Per-frame linear magnitude spectrum: `[n_fft/2 + 1, n_frames]`.
    pub fn magnitudes(&self, x: &[f64]) -> Result<Tensor> {
        self.check_len(x.len())?;
        let bins = self.cfg.n_fft / 2 + 1;
        let (n_frames, _, _) = self.pad_geometry(x.len());
        let padded = self.padded(x);
        let mut out = Tensor::zeros(&[bins, n_frames]);
        for f in 0..n_frames {
            let spec = self.frame_spectrum(&padded, f);
            for (k, c) in spec[..bins].iter().enumerate() {
                out.data_mut()[k * n_frames + f] = (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
            }
        }
        Ok(out)
    }

    fn check_len(&self, t: usize) -> Result<()> {
        if t < self.cfg.n_fft {
            return Err(Error::DegenerateInput(format!(
                "clip of {} samples is shorter than the {}-sample analysis window",
                t, self.cfg.n_fft
            )));
        }
        Ok(())
    }

    /// Natural-log mel magnitudes, `[n_mels, n_frames]`.
    pub fn log_mel(&self, x: &[f64]) -> Result<Tensor> {
        self.check_len(x.len())?;
        let (n_frames, _, _) = self.pad_geometry(x.len());
        let padded = self.padded(x);
        let bins = self.cfg.n_fft / 2 + 1;
        let mut out = Tensor::zeros(&[self.cfg.n_mels, n_frames]);
        let mut mags = vec![0.0f64; bins];
        for f in 0..n_frames {
            let spec = self.frame_spectrum(&padded, f);
            for (k, c) in spec[..bins].iter().enumerate() {
                mags[k] = (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
            }
            for (m, filt) in self.filters.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &w) in filt.weights.iter().enumerate() {
                    acc += w * mags[filt.start + j];
                }
                out.data_mut()[m * n_frames + f] = acc.max(self.cfg.log_floor).ln();
            }
        }
        Ok(out)
    }

    /// Adjoint of `log_mel`: gradient w.r.t. the input samples.
    ///
    /// Recomputes the forward per frame, then pushes the mel gradient back
    /// through the filterbank, the magnitude, and an inverse FFT (the DFT
    /// adjoint of a loss depending only on one-sided bins), and finally
    /// undoes the reflect padding.
    pub fn log_mel_bwd(&self, x: &[f64], grad: &Tensor) -> Vec<f64> {
        let t = x.len();
        let n = self.cfg.n_fft;
        let bins = n / 2 + 1;
        let (n_frames, left, right) = self.pad_geometry(t);
        assert_eq!(grad.shape(), &[self.cfg.n_mels, n_frames]);
        let padded = self.padded(x);
        let mut gpad = vec![0.0f64; padded.len()];
        let mut scratch = vec![Complex64::default(); self.fft_inv.get_inplace_scratch_len()];
        let mut gspec = vec![Complex64::default(); n];
        for f in 0..n_frames {
            let spec = self.frame_spectrum(&padded, f);
            // mel value per filter (pre-log) to invert the log/floor
            let mut gmag = vec![0.0f64; bins];
            for (m, filt) in self.filters.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &w) in filt.weights.iter().enumerate() {
                    let c = &spec[filt.start + j];
                    acc += w * (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
                }
                let g = grad.data()[m * n_frames + f];
                if g == 0.0 || acc <= self.cfg.log_floor {
                    continue;
                }
                let gv = g / acc;
                for (j, &w) in filt.weights.iter().enumerate() {
                    gmag[filt.start + j] += w * gv;
                }
            }
            for c in gspec.iter_mut() {
                *c = Complex64::default();
            }
            for k in 0..bins {
                if gmag[k] == 0.0 {
                    continue;
                }
                let c = spec[k];
                let mag = (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
                gspec[k] = Complex64::new(gmag[k] * c.re / mag, gmag[k] * c.im / mag);
            }
            self.fft_inv.process_with_scratch(&mut gspec, &mut scratch);
            let start = f * self.cfg.hop;
            for i in 0..n {
                gpad[start + i] += gspec[i].re * self.window[i];
            }
        }
        // adjoint of the reflect padding
        let mut gx = vec![0.0f64; t];
        for i in 0..left {
            gx[left - i] += gpad[i];
        }
        for i in 0..t {
            gx[i] += gpad[left + i];
        }
        for j in 0..right {
            gx[t - 2 - j] += gpad[left + t + j];
        }
        gx
    }
}

fn build_filters(cfg: &MelConfig) -> Vec<MelFilter> {
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    // n_mels + 2 edge points, uniformly spaced on the mel scale
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut filters = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut start = None;
        let mut weights = Vec::new();
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                if start.is_none() {
                    start = Some(k);
                }
                weights.push(w);
            } else if start.is_some() {
                break;
            }
        }
        // very narrow filters can fall between FFT bins; pin them to the
        // bin nearest their center so no filter is silently empty
        if weights.is_empty() {
            let k = ((center / bin_hz).round() as usize).min(bins - 1);
            start = Some(k);
            weights.push(1.0);
        }
        filters.push(MelFilter {
            start: start.unwrap(),
            weights,
        });
    }
    filters
}

/// Center frequency (Hz) of each mel filter, in filter order.
pub fn filter_centers_hz(cfg: &MelConfig) -> Vec<f64> {
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels)
        .map(|m| mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Log-mel spectrogram of a clip.
pub fn mel(clip: &crate::audio::AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Contract(format!(
            "clip rate {} does not match mel config rate {}",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let analyzer = MelAnalyzer::new(cfg.clone());
    let frames = analyzer.log_mel(&clip.samples)?;
    Ok(MelSpectrogram {
        frames,
        frame_hop: cfg.hop,
        n_mels: cfg.n_mels,
    })
}
