//! Conversion-quality measurement: SER error against the target arousal,
//! MOS-predictor naturalness, class-wise breakdowns, and one-tailed Welch
//! significance tests between error distributions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::audio::{load_audio, AudioClip};
use crate::backends::{MosBackend, SerBackend};
use crate::error::{Error, Result};
use crate::inference::Converter;
use crate::training::ManifestRow;

/// Mean squared and mean absolute error between targets and predictions.
pub fn sec_error(targets: &[f64], predictions: &[f64]) -> Result<(f64, f64)> {
    if targets.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "target/prediction lengths differ: {} vs {}",
            targets.len(),
            predictions.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Contract("sec_error needs at least one pair".into()));
    }
    let n = targets.len() as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    for (t, p) in targets.iter().zip(predictions) {
        let d = t - p;
        mse += d * d;
        mae += d.abs();
    }
    Ok((mse / n, mae / n))
}

/// Non-intrusive naturalness scores, one per clip.
pub fn score_mos(clips: &[AudioClip], backend: &dyn MosBackend) -> Result<Vec<f64>> {
    clips.iter().map(|c| backend.score(c)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub target_arousal: f64,
    pub ser_prediction: f64,
    pub squared_error: f64,
    pub abs_error: f64,
    pub mos: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAgg {
    pub l_mse: f64,
    pub mean_mos: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigMethod {
    Welch,
    /// Zero-variance degenerate fallback: direct mean comparison.
    ExactFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p_value: f64,
    pub t: f64,
    pub dof: f64,
    pub method: SigMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub name: String,
    pub pair: (String, String),
    #[serde(flatten)]
    pub result: Significance,
}

/// One-tailed Welch t-test for `mean(errors_a) < mean(errors_b)`.
pub fn significance(errors_a: &[f64], errors_b: &[f64]) -> Result<Significance> {
    if errors_a.len() < 2 || errors_b.len() < 2 {
        return Err(Error::Contract("significance needs at least 2 samples per side".into()));
    }
    let (na, nb) = (errors_a.len() as f64, errors_b.len() as f64);
    let ma = errors_a.iter().sum::<f64>() / na;
    let mb = errors_b.iter().sum::<f64>() / nb;
    let va = errors_a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / (na - 1.0);
    let vb = errors_b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / (nb - 1.0);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // both samples constant; fall back to comparing the means directly
        let p = if ma < mb { f64::MIN_POSITIVE } else { 1.0 };
        return Ok(Significance {
            p_value: p,
            t: 0.0,
            dof: na + nb - 2.0,
            method: SigMethod::ExactFallback,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Contract(format!("invalid t distribution: {e}")))?;
    let p = dist.cdf(t).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(Significance {
        p_value: p,
        t,
        dof,
        method: SigMethod::Welch,
    })
}

/// Bin rows by nearest integer arousal class and aggregate.
pub fn classwise_report(rows: &[EvalRow]) -> BTreeMap<u8, ClassAgg> {
    let mut bins: BTreeMap<u8, (f64, f64, usize, usize)> = BTreeMap::new(); // (sq, mos, mos_n, n)
    for row in rows {
        let class = row.target_arousal.round().clamp(1.0, 7.0) as u8;
        let e = bins.entry(class).or_insert((0.0, 0.0, 0, 0));
        e.0 += row.squared_error;
        if let Some(m) = row.mos {
            e.1 += m;
            e.2 += 1;
        }
        e.3 += 1;
    }
    bins.into_iter()
        .map(|(class, (sq, mos, mos_n, n))| {
            (
                class,
                ClassAgg {
                    l_mse: sq / n as f64,
                    mean_mos: (mos_n > 0).then(|| mos / mos_n as f64),
                    count: n,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub l_mse: f64,
    pub l_abs: f64,
    pub mean_mos: Option<f64>,
    pub classwise: BTreeMap<u8, ClassAgg>,
    pub significance: Vec<SignificanceEntry>,
    /// Identifier of the MOS backend, recorded for provenance; absent when
    /// the metric could not be computed.
    pub mos_backend: Option<String>,
    pub ser_backend: String,
}

impl EvalReport {
    /// Aggregates are derived from the rows here and nowhere else.
    pub fn from_rows(
        rows: Vec<EvalRow>,
        significance: Vec<SignificanceEntry>,
        ser_backend: String,
        mos_backend: Option<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("evaluation produced no rows".into()));
        }
        let targets: Vec<f64> = rows.iter().map(|r| r.target_arousal).collect();
        let preds: Vec<f64> = rows.iter().map(|r| r.ser_prediction).collect();
        let (l_mse, l_abs) = sec_error(&targets, &preds)?;
        let mos_vals: Vec<f64> = rows.iter().filter_map(|r| r.mos).collect();
        let mean_mos = (!mos_vals.is_empty()).then(|| mos_vals.iter().sum::<f64>() / mos_vals.len() as f64);
        let classwise = classwise_report(&rows);
        Ok(EvalReport {
            rows,
            l_mse,
            l_abs,
            mean_mos,
            classwise,
            significance,
            mos_backend,
            ser_backend,
        })
    }

    /// Recompute every aggregate from the rows and compare.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = EvalReport::from_rows(
            self.rows.clone(),
            self.significance.clone(),
            self.ser_backend.clone(),
            self.mos_backend.clone(),
        )?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        if !close(rebuilt.l_mse, self.l_mse) || !close(rebuilt.l_abs, self.l_abs) {
            return Err(Error::Contract("aggregates do not match their rows".into()));
        }
        if rebuilt.classwise != self.classwise {
            return Err(Error::Contract("class-wise table does not match rows".into()));
        }
        let total: usize = self.classwise.values().map(|a| a.count).sum();
        if total != self.rows.len() {
            return Err(Error::Contract(format!(
                "class-wise counts sum to {total}, expected {}",
                self.rows.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows_path = dir.join("rows.jsonl");
        let mut text = String::new();
        for row in &self.rows {
            text.push_str(&serde_json::to_string(row)?);
            text.push('\n');
        }
        std::fs::write(&rows_path, text).map_err(|e| Error::io(&rows_path, e))?;
        let summary = serde_json::json!({
            "l_mse": self.l_mse,
            "l_abs": self.l_abs,
            "mean_mos": self.mean_mos,
            "n_rows": self.rows.len(),
            "classwise": self.classwise,
            "significance": self.significance,
            "ser_backend": self.ser_backend,
            "mos_backend": self.mos_backend,
        });
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Which arousal targets to evaluate each row at.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalTargets {
    List(Vec<f64>),
    /// Self-reconstruction: each row converted to its own annotation.
    SelfAnnotated,
}

/// Convert every row at every target and score the results. A missing MOS
/// backend downgrades the metric to absent rather than failing the run.
pub fn evaluate(
    rows: &[ManifestRow],
    base: &Path,
    targets: &EvalTargets,
    converter: &Converter,
    ser: &dyn SerBackend,
    mos: Option<&dyn MosBackend>,
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Contract("no rows to evaluate".into()));
    }
    let mut eval_rows = Vec::new();
    let mut mos_available = mos.is_some();
    let mut mos_id = mos.map(|m| m.id());
    for row in rows {
        let path = if Path::new(&row.audio_path).is_absolute() {
            std::path::PathBuf::from(&row.audio_path)
        } else {
            base.join(&row.audio_path)
        };
        let clip = load_audio(&path, converter.sample_rate())?;
        let row_targets: Vec<f64> = match targets {
            EvalTargets::List(list) => list.clone(),
            EvalTargets::SelfAnnotated => vec![row.arousal],
        };
        for target in row_targets {
            let converted = converter.convert(&clip, target)?;
            let pred = ser.predict(&converted)?;
            let mos_score = if mos_available {
                match mos.unwrap().score(&converted) {
                    Ok(v) => Some(v),
                    Err(Error::BackendUnavailable { .. }) => {
                        mos_available = false;
                        mos_id = None;
                        None
                    }
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let d = target - pred;
            eval_rows.push(EvalRow {
                id: format!("{}#e{:.2}", row.audio_path, target),
                target_arousal: target,
                ser_prediction: pred,
                squared_error: d * d,
                abs_error: d.abs(),
                mos: mos_score,
            });
        }
    }
    EvalReport::from_rows(eval_rows, Vec::new(), ser.id(), mos_id)
}
