//! Qualitative-analysis artifacts: log-energy spectrogram images, overlaid
//! pitch contours, and the per-clip pitch statistics table that backs the
//! "does higher target arousal raise pitch" check.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mel::{MelAnalyzer, MelConfig};
use crate::pitch::{extract_pitch, PitchContour};

const SPEC_DB_RANGE: f64 = 80.0;
const CONTOUR_WIDTH: u32 = 900;
const CONTOUR_HEIGHT: u32 = 400;
const F0_AXIS_MAX: f64 = 600.0;

/// Colors assigned to contour lines, in drawing order (original first).
const PALETTE: [(Rgb<u8>, &str); 6] = [
    (Rgb([20, 20, 20]), "black"),
    (Rgb([31, 119, 180]), "blue"),
    (Rgb([214, 39, 40]), "red"),
    (Rgb([44, 160, 44]), "green"),
    (Rgb([255, 127, 14]), "orange"),
    (Rgb([148, 103, 189]), "purple"),
];

#[derive(Clone, Debug, Serialize)]
pub struct PitchStatsRow {
    pub label: String,
    pub color: String,
    pub mean_voiced_hz: Option<f64>,
    pub std_voiced_hz: Option<f64>,
    pub voiced_frames: usize,
    pub total_frames: usize,
}

#[derive(Clone, Debug)]
pub struct FigureSet {
    pub files: Vec<PathBuf>,
    pub stats: Vec<PitchStatsRow>,
}

/// Spectrogram per clip, one contour overlay, and the pitch stats table.
pub fn emit_figures(
    original: &AudioClip,
    conversions: &[(f64, AudioClip)],
    out_dir: &Path,
) -> Result<FigureSet> {
    if conversions.is_empty() {
        return Err(Error::Contract("emit_figures needs at least one conversion".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();

    let mut labeled: Vec<(String, &AudioClip)> = vec![("original".to_string(), original)];
    for (target, clip) in conversions {
        labeled.push((format!("e{target:.2}"), clip));
    }

    for (label, clip) in &labeled {
        let path = out_dir.join(format!("spectrogram_{label}.png"));
        render_spectrogram(clip)?
            .save(&path)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        files.push(path);
    }

    let mut stats = Vec::new();
    let mut contours: Vec<(String, Rgb<u8>, PitchContour)> = Vec::new();
    for (i, (label, clip)) in labeled.iter().enumerate() {
        let (color, color_name) = PALETTE[i % PALETTE.len()];
        let contour = extract_pitch(clip)?;
        stats.push(PitchStatsRow {
            label: label.clone(),
            color: color_name.to_string(),
            mean_voiced_hz: contour.mean_voiced,
            std_voiced_hz: contour.std_voiced,
            voiced_frames: contour.voiced_count(),
            total_frames: contour.f0.len(),
        });
        contours.push((label.clone(), color, contour));
    }

    let overlay_path = out_dir.join("pitch_contours.png");
    render_contours(&contours, original.sample_rate)
        .save(&overlay_path)
        .map_err(|e| Error::Decode(format!("{}: {e}", overlay_path.display())))?;
    files.push(overlay_path);

    let stats_path = out_dir.join("pitch_stats.json");
    let mut text = serde_json::to_string_pretty(&stats)?;
    text.push('\n');
    std::fs::write(&stats_path, text).map_err(|e| Error::io(&stats_path, e))?;
    files.push(stats_path);

    Ok(FigureSet { files, stats })
}

/// Log-energy spectrogram heatmap: time left to right, frequency bottom up.
pub fn render_spectrogram(clip: &AudioClip) -> Result<RgbImage> {
    let cfg = MelConfig {
        sample_rate: clip.sample_rate,
        fmax: clip.sample_rate as f64 / 2.0,
        ..MelConfig::default()
    };
    let analyzer = MelAnalyzer::new(cfg);
    let mags = analyzer.magnitudes(&clip.samples)?;
    let (bins, frames) = (mags.dim(0), mags.dim(1));
    let db: Vec<f64> = mags.data().iter().map(|m| 20.0 * (m + 1e-10).log10()).collect();
    let peak = db.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let floor = peak - SPEC_DB_RANGE;
    let mut img = RgbImage::new(frames as u32, bins as u32);
    for b in 0..bins {
        for f in 0..frames {
            let v = ((db[b * frames + f] - floor) / SPEC_DB_RANGE).clamp(0.0, 1.0);
            // frequency increases upward
            img.put_pixel(f as u32, (bins - 1 - b) as u32, viridis(v));
        }
    }
    Ok(img)
}

fn render_contours(contours: &[(String, Rgb<u8>, PitchContour)], sample_rate: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(CONTOUR_WIDTH, CONTOUR_HEIGHT, Rgb([255, 255, 255]));
    let max_frames = contours.iter().map(|(_, _, c)| c.f0.len()).max().unwrap_or(1);
    let _ = sample_rate;
    // axis ticks every 100 Hz
    for hz in (0..=F0_AXIS_MAX as usize).step_by(100) {
        let y = f0_to_y(hz as f64);
        for x in 0..CONTOUR_WIDTH {
            let p = img.get_pixel_mut(x, y);
            if p.0 == [255, 255, 255] {
                *p = Rgb([230, 230, 230]);
            }
        }
    }
    for (i, (_, color, contour)) in contours.iter().enumerate() {
        // legend swatch in the top-left corner, one box per contour
        for dy in 0..10u32 {
            for dx in 0..18u32 {
                img.put_pixel(8 + dx, 8 + i as u32 * 14 + dy, *color);
            }
        }
        let mut prev: Option<(u32, u32)> = None;
        for (frame, &f0) in contour.f0.iter().enumerate() {
            if f0 <= 0.0 {
                prev = None;
                continue;
            }
            let x = ((frame as f64 / max_frames as f64) * (CONTOUR_WIDTH - 1) as f64) as u32;
            let y = f0_to_y(f0.min(F0_AXIS_MAX));
            if let Some((px, py)) = prev {
                draw_line(&mut img, px, py, x, y, *color);
            } else {
                img.put_pixel(x, y, *color);
            }
            prev = Some((x, y));
        }
    }
    img
}

fn f0_to_y(f0: f64) -> u32 {
    let frac = (f0 / F0_AXIS_MAX).clamp(0.0, 1.0);
    ((1.0 - frac) * (CONTOUR_HEIGHT - 1) as f64) as u32
}

fn draw_line(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    let (mut x0, mut y0) = (x0 as i64, y0 as i64);
    let (x1, y1) = (x1 as i64, y1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Five-stop approximation of the viridis colormap.
fn viridis(v: f64) -> Rgb<u8> {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if v <= t1 {
            let f = if t1 > t0 { (v - t0) / (t1 - t0) } else { 0.0 };
            return Rgb([
                (c0[0] + f * (c1[0] - c0[0])) as u8,
                (c0[1] + f * (c1[1] - c0[1])) as u8,
                (c0[2] + f * (c1[2] - c0[2])) as u8,
            ]);
        }
    }
    Rgb([253, 231, 37])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64) -> AudioClip {
        let rate = 16_000u32;
        let n = (seconds * rate as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| 0.6 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
            "tone",
        )
        .unwrap()
    }

    #[test]
    fn emits_expected_file_set() {
        let dir = tempfile::tempdir().unwrap();
        let original = tone(220.0, 0.6);
        let conv = vec![(1.0, tone(180.0, 0.6)), (7.0, tone(320.0, 0.6))];
        let set = emit_figures(&original, &conv, dir.path()).unwrap();
        // 3 spectrograms + overlay + stats table
        assert_eq!(set.files.len(), 5);
        for f in &set.files {
            assert!(f.exists(), "{} missing", f.display());
        }
        assert_eq!(set.stats.len(), 3);
        assert!(set.stats[0].mean_voiced_hz.is_some());
    }

    #[test]
    fn single_conversion_emits_two_spectrograms() {
        let dir = tempfile::tempdir().unwrap();
        let set = emit_figures(&tone(220.0, 0.5), &[(4.0, tone(220.0, 0.5))], dir.path()).unwrap();
        let spect = set
            .files
            .iter()
            .filter(|f| f.file_name().unwrap().to_string_lossy().starts_with("spectrogram"))
            .count();
        assert_eq!(spect, 2);
    }

    #[test]
    fn silent_clip_stats_absent() {
        let dir = tempfile::tempdir().unwrap();
        let silent = AudioClip::new(vec![0.0; 8_000], 16_000, "s").unwrap();
        let set = emit_figures(&silent, &[(4.0, silent.clone())], dir.path()).unwrap();
        assert!(set.stats.iter().all(|s| s.mean_voiced_hz.is_none()));
        assert!(set.stats.iter().all(|s| s.voiced_frames == 0));
    }

    #[test]
    fn empty_conversions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_figures(&tone(220.0, 0.5), &[], dir.path()),
            Err(Error::Contract(_))
        ));
    }
}
