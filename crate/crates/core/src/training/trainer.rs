//! The alternating-update training loop and the segment-size ablation
//! protocol. One step = one discriminator update on the detached generator
//! output, then one generator (+ unit table + emotion embedder) update
//! through the refreshed discriminator.
//!
//! Content and speaker encoders are frozen, so their features are computed
//! once per run and cached; randomness (init, shuffling, segment offsets)
//! is derived from `(seed, purpose, index)` streams, which is what makes a
//! resumed run reproduce the uninterrupted trajectory exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::audio::load_audio;
use crate::backends::{build_content, build_ser, build_speaker, ContentBackend, SerBackend, SpeakerBackend};
use crate::checkpoint::{CheckpointBundle, CheckpointMeta, CodebookMeta, CHECKPOINT_FORMAT_VERSION};
use crate::encoders::{emotion, fit_codebook, quantize, SpeakerEmbedding, UnitCodebook, UnitSequence};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, EvalTargets};
use crate::graph::{Graph, Var};
use crate::losses::{
    adv_generator_loss, discriminator_loss, feature_matching_loss, recon_loss_batch, ser_loss,
    total_generator_var, total_losses, LossComponents, LossReport,
};
use crate::mel::MelAnalyzer;
use crate::net::{Ctx, GraphCtx};
use crate::params::{Adam, ParamStore};
use crate::tensor::Tensor;
use crate::training::rng_streams::{self, stream};
use crate::training::{ManifestRow, Split, TrainConfig};
use crate::vocoder::{
    build_conditioning_on, init_unit_table, DiscriminatorBank, Generator, UNIT_TABLE_PARAM,
};

struct RowCache {
    samples: Vec<f64>,
    units: Vec<u32>,
    spk: SpeakerEmbedding,
    arousal: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    cache: Vec<RowCache>,
    gen_store: ParamStore,
    disc_store: ParamStore,
    opt_g: Adam,
    opt_d: Adam,
    codebook: UnitCodebook,
    content: Arc<dyn ContentBackend>,
    speaker: Arc<dyn SpeakerBackend>,
    ser: Arc<dyn SerBackend>,
    generator: Generator,
    bank: DiscriminatorBank,
    mel: Arc<MelAnalyzer>,
    step: u64,
    epoch_order: Option<(u64, Vec<usize>)>,
    silence_unit: u32,
    hop: usize,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, rows: &[ManifestRow], base: &Path) -> Result<Self> {
        cfg.validate()?;
        let (content, speaker, ser, cache_rows) = Self::load_rows(&cfg, rows, base)?;

        // fit the codebook over every cached feature matrix
        let feats: Vec<_> = cache_rows.iter().map(|(f, _, _, _)| f).collect();
        let refs: Vec<&crate::encoders::ContentFeatures> = feats.iter().map(|f| &**f).collect();
        let kmeans_seed = stream(cfg.seed, rng_streams::PURPOSE_KMEANS, 0).next_u64();
        let codebook = fit_codebook(&refs, cfg.k_units, kmeans_seed)?;

        let mut cache = Vec::with_capacity(cache_rows.len());
        for (f, samples, spk, arousal) in cache_rows {
            let units = quantize(&f, &codebook)?.units;
            cache.push(RowCache {
                samples,
                units,
                spk,
                arousal,
            });
        }

        let generator = Generator::new(cfg.generator.clone())?;
        let bank = DiscriminatorBank::new(cfg.discriminator.clone())?;
        let mut init_rng = stream(cfg.seed, rng_streams::PURPOSE_INIT, 0);
        let mut gen_store = ParamStore::new();
        init_unit_table(&mut gen_store, cfg.k_units, cfg.generator.unit_embed_dim, &mut init_rng);
        emotion::init_params(&mut gen_store, &mut init_rng);
        generator.init_params(&mut gen_store, &mut init_rng);
        let mut disc_store = ParamStore::new();
        bank.init_params(&mut disc_store, &mut init_rng);

        let opt_g = Adam::new(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, cfg.lr_decay);
        let opt_d = Adam::new(cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.lr_decay);
        let mel = Arc::new(MelAnalyzer::new(cfg.mel.clone()));
        let hop = (cfg.sample_rate / content.frame_rate()) as usize;
        let silence_unit = Self::silence_unit(&*content, &codebook, hop, cfg.sample_rate)?;

        Ok(Trainer {
            cfg,
            cache,
            gen_store,
            disc_store,
            opt_g,
            opt_d,
            codebook,
            content,
            speaker,
            ser,
            generator,
            bank,
            mel,
            step: 0,
            epoch_order: None,
            silence_unit,
            hop,
        })
    }

    /// Restore a trainer mid-run; the subsequent step stream is identical
    /// to the uninterrupted run's.
    pub fn resume(bundle: CheckpointBundle, rows: &[ManifestRow], base: &Path) -> Result<Self> {
        let cfg = bundle.meta.config.clone();
        cfg.validate()?;
        let (content, speaker, ser, cache_rows) = Self::load_rows(&cfg, rows, base)?;
        if content.id() != bundle.meta.codebook.backend_id {
            return Err(Error::Config(format!(
                "checkpoint codebook was fitted on '{}' but the configured backend is '{}'",
                bundle.meta.codebook.backend_id,
                content.id()
            )));
        }
        let codebook = bundle.codebook;
        let mut cache = Vec::with_capacity(cache_rows.len());
        for (f, samples, spk, arousal) in cache_rows {
            let units = quantize(&f, &codebook)?.units;
            cache.push(RowCache {
                samples,
                units,
                spk,
                arousal,
            });
        }
        let generator = Generator::new(cfg.generator.clone())?;
        let bank = DiscriminatorBank::new(cfg.discriminator.clone())?;
        let mut opt_g = Adam::new(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, cfg.lr_decay);
        opt_g.state = bundle.opt_g;
        let mut opt_d = Adam::new(cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.lr_decay);
        opt_d.state = bundle.opt_d;
        let mel = Arc::new(MelAnalyzer::new(cfg.mel.clone()));
        let hop = (cfg.sample_rate / content.frame_rate()) as usize;
        let silence_unit = Self::silence_unit(&*content, &codebook, hop, cfg.sample_rate)?;
        Ok(Trainer {
            cfg,
            cache,
            gen_store: bundle.gen_params,
            disc_store: bundle.disc_params,
            opt_g,
            opt_d,
            codebook,
            content,
            speaker,
            ser,
            generator,
            bank,
            mel,
            step: bundle.meta.step,
            epoch_order: None,
            silence_unit,
            hop,
        })
    }

    #[allow(clippy::type_complexity)]
    fn load_rows(
        cfg: &TrainConfig,
        rows: &[ManifestRow],
        base: &Path,
    ) -> Result<(
        Arc<dyn ContentBackend>,
        Arc<dyn SpeakerBackend>,
        Arc<dyn SerBackend>,
        Vec<(crate::encoders::ContentFeatures, Vec<f64>, SpeakerEmbedding, f64)>,
    )> {
        let content = build_content(&cfg.backends.content, cfg.sample_rate)?;
        let speaker = build_speaker(&cfg.backends.speaker)?;
        let ser = build_ser(&cfg.backends.ser, cfg.sample_rate)?;
        if content.frame_rate() != cfg.generator.frame_rate {
            return Err(Error::Config(format!(
                "content backend frame rate {} != generator frame rate {}",
                content.frame_rate(),
                cfg.generator.frame_rate
            )));
        }
        let train_rows: Vec<&ManifestRow> = rows.iter().filter(|r| r.split == Split::Train).collect();
        if train_rows.is_empty() {
            return Err(Error::Manifest("no rows in the train split".into()));
        }
        let mut cache_rows = Vec::with_capacity(train_rows.len());
        for row in train_rows {
            let clip = load_audio(&resolve(base, &row.audio_path), cfg.sample_rate)?;
            let feats = content.encode(&clip)?;
            let spk = speaker.embed(&clip)?;
            cache_rows.push((feats, clip.samples, spk, row.arousal));
        }
        Ok((content, speaker, ser, cache_rows))
    }

    fn silence_unit(
        content: &dyn ContentBackend,
        codebook: &UnitCodebook,
        hop: usize,
        sample_rate: u32,
    ) -> Result<u32> {
        let silence = crate::audio::AudioClip {
            samples: vec![0.0; hop],
            sample_rate,
            source_id: "silence".into(),
        };
        let f = content.encode(&silence)?;
        Ok(quantize(&f, codebook)?.units[0])
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn gen_store(&self) -> &ParamStore {
        &self.gen_store
    }

    pub fn disc_store(&self) -> &ParamStore {
        &self.disc_store
    }

    /// (content, speaker, SER) weight digests, for freeze-contract checks.
    pub fn backend_digests(&self) -> (u64, u64, u64) {
        (
            self.content.param_digest(),
            self.speaker.param_digest(),
            self.ser.param_digest(),
        )
    }

    fn epoch_of(&self, step: u64) -> u64 {
        step * self.cfg.batch_size as u64 / self.cache.len() as u64
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        let n = self.cache.len();
        let needs = match &self.epoch_order {
            Some((e, _)) => *e != epoch,
            None => true,
        };
        if needs {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = stream(self.cfg.seed, rng_streams::PURPOSE_SHUFFLE, epoch);
            order.shuffle(&mut rng);
            self.epoch_order = Some((epoch, order));
        }
        &self.epoch_order.as_ref().unwrap().1
    }

    /// Batch membership for a step: consecutive positions in the stream of
    /// concatenated shuffled epochs, so each row appears exactly once per
    /// epoch even when batches straddle the boundary.
    fn batch_rows(&mut self, step: u64) -> Vec<usize> {
        let n = self.cache.len() as u64;
        let b = self.cfg.batch_size as u64;
        (0..b)
            .map(|i| {
                let global = step * b + i;
                let epoch = global / n;
                let pos = (global % n) as usize;
                self.epoch_order(epoch)[pos]
            })
            .collect()
    }

    fn segment_frames(&self) -> usize {
        ((self.cfg.segment_seconds * self.cfg.generator.frame_rate as f64).floor() as usize).max(1)
    }

    /// Unit-aligned segment: `seg_frames` units and exactly `seg_frames *
    /// hop` samples from the same offset. Short rows are padded with
    /// silence units and zero audio.
    fn sample_item(&self, row: &RowCache, rng: &mut impl Rng) -> (Vec<f64>, Vec<u32>) {
        let seg_frames = self.segment_frames();
        let t_units = row.units.len();
        if t_units >= seg_frames {
            let max_off = t_units - seg_frames;
            let off = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
            let audio = row.samples[off * self.hop..(off + seg_frames) * self.hop].to_vec();
            let units = row.units[off..off + seg_frames].to_vec();
            (audio, units)
        } else {
            let mut units = row.units.clone();
            units.resize(seg_frames, self.silence_unit);
            let mut audio = row.samples[..t_units * self.hop].to_vec();
            audio.resize(seg_frames * self.hop, 0.0);
            (audio, units)
        }
    }

    /// One discriminator update followed by one generator update.
    pub fn step_once(&mut self) -> Result<LossReport> {
        let step = self.step;
        let epoch = self.epoch_of(step);
        let row_ids = self.batch_rows(step);
        let mut seg_rng = stream(self.cfg.seed, rng_streams::PURPOSE_SEGMENT, step);
        let items: Vec<(Vec<f64>, Vec<u32>, SpeakerEmbedding, f64)> = row_ids
            .iter()
            .map(|&i| {
                let row = &self.cache[i];
                let (audio, units) = self.sample_item(row, &mut seg_rng);
                (audio, units, row.spk.clone(), row.arousal)
            })
            .collect();
        let k = self.codebook.k();
        let n_subs = self.bank.sub_count();
        let red = self.cfg.batch_reduction;

        // ---- generator forward (gradients retained for the later update)
        let mut g1 = Graph::new();
        let mut yhat_vars: Vec<Var> = Vec::with_capacity(items.len());
        let touched_gen = {
            let mut gctx = GraphCtx::new(&mut g1, &self.gen_store, true);
            for (_, units, spk, arousal) in &items {
                let emo = emotion::forward(&mut gctx, *arousal)?;
                let table = gctx.param(UNIT_TABLE_PARAM);
                let useq = UnitSequence {
                    units: units.clone(),
                    k,
                };
                let cond = build_conditioning_on(&mut gctx, &useq, spk, &emo, &table)?;
                yhat_vars.push(self.generator.forward(&mut gctx, &cond)?);
            }
            gctx.touched_params().clone()
        };
        let yhat_data: Vec<Tensor> = yhat_vars.iter().map(|&v| g1.value(v).clone()).collect();

        // ---- discriminator update on detached outputs
        let disc_per = {
            let mut g2 = Graph::new();
            let mut real_scores: Vec<Vec<Var>> = vec![Vec::new(); n_subs];
            let mut fake_scores: Vec<Vec<Var>> = vec![Vec::new(); n_subs];
            let touched_disc = {
                let mut dctx = GraphCtx::new(&mut g2, &self.disc_store, true);
                for ((x, _, _, _), yh) in items.iter().zip(&yhat_data) {
                    let xv = dctx.constant(Tensor::from_vec(&[x.len()], x.clone()));
                    for (j, sub) in self.bank.forward_wave(&mut dctx, &xv).into_iter().enumerate() {
                        real_scores[j].push(sub.score);
                    }
                    let yv = dctx.constant(yh.clone());
                    for (j, sub) in self.bank.forward_wave(&mut dctx, &yv).into_iter().enumerate() {
                        fake_scores[j].push(sub.score);
                    }
                }
                dctx.touched_params().clone()
            };
            let (d_total, d_per) = discriminator_loss(&mut g2, &real_scores, &fake_scores, red)?;
            let d_per_vals: Vec<f64> = d_per.iter().map(|&v| g2.value(v).item()).collect();
            let mut grads = g2.backward(d_total);
            let mut grad_map = BTreeMap::new();
            for (name, var) in &touched_disc {
                if let Some(t) = grads.take(*var) {
                    grad_map.insert(name.clone(), t);
                }
            }
            self.opt_d.step(&mut self.disc_store, &grad_map, epoch);
            d_per_vals
        };

        // ---- generator update through the refreshed discriminator
        let mut fake_scores: Vec<Vec<Var>> = vec![Vec::new(); n_subs];
        let mut real_acts: Vec<Vec<Vec<Var>>> = vec![Vec::new(); n_subs];
        let mut fake_acts: Vec<Vec<Vec<Var>>> = vec![Vec::new(); n_subs];
        {
            let mut dctx = GraphCtx::new(&mut g1, &self.disc_store, false);
            for ((x, _, _, _), &yv) in items.iter().zip(&yhat_vars) {
                let xv = dctx.constant(Tensor::from_vec(&[x.len()], x.clone()));
                for (j, sub) in self.bank.forward_wave(&mut dctx, &xv).into_iter().enumerate() {
                    real_acts[j].push(sub.acts);
                }
                for (j, sub) in self.bank.forward_wave(&mut dctx, &yv).into_iter().enumerate() {
                    fake_scores[j].push(sub.score);
                    fake_acts[j].push(sub.acts);
                }
            }
        }
        let (_, adv_per) = adv_generator_loss(&mut g1, &fake_scores, red)?;
        let (_, fm_per) = feature_matching_loss(&mut g1, &real_acts, &fake_acts, red)?;
        let pairs: Vec<(&[f64], Var)> = items
            .iter()
            .zip(&yhat_vars)
            .map(|((x, _, _, _), &y)| (x.as_slice(), y))
            .collect();
        let recon = recon_loss_batch(&mut g1, &pairs, &self.mel, red)?;
        let ser_var = if self.cfg.weights.lambda_ser > 0.0 {
            let targets: Vec<f64> = items.iter().map(|(_, _, _, a)| *a).collect();
            let mut sctx = GraphCtx::new(&mut g1, &self.gen_store, false);
            Some(ser_loss(
                &mut sctx,
                &targets,
                &yhat_vars,
                &*self.ser,
                self.cfg.sample_rate,
            )?)
        } else {
            None
        };
        let total_g = total_generator_var(
            &mut g1,
            &adv_per,
            &fm_per,
            recon,
            ser_var,
            &self.cfg.weights,
        );

        let components = LossComponents {
            adv_g_per: adv_per.iter().map(|&v| g1.value(v).item()).collect(),
            fm_per: fm_per.iter().map(|&v| g1.value(v).item()).collect(),
            disc_per,
            recon: g1.value(recon).item(),
            ser: ser_var.map(|v| g1.value(v).item()),
        };
        let report = total_losses(&components, &self.cfg.weights, step)?;
        debug_assert_eq!(report.total_g, g1.value(total_g).item());
        if let Some((term, value)) = report.first_non_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                term: term.to_string(),
                value,
            });
        }

        let mut grads = g1.backward(total_g);
        let mut grad_map = BTreeMap::new();
        for (name, var) in &touched_gen {
            if let Some(t) = grads.take(*var) {
                grad_map.insert(name.clone(), t);
            }
        }
        self.opt_g.step(&mut self.gen_store, &grad_map, epoch);

        self.step += 1;
        Ok(report)
    }

    pub fn bundle(&self) -> CheckpointBundle {
        CheckpointBundle {
            meta: CheckpointMeta {
                format_version: CHECKPOINT_FORMAT_VERSION,
                step: self.step,
                opt_g_t: self.opt_g.state.t,
                opt_d_t: self.opt_d.state.t,
                config: self.cfg.clone(),
                codebook: CodebookMeta {
                    k: self.codebook.k(),
                    feature_dim: self.codebook.feature_dim(),
                    backend_id: self.content.id(),
                },
            },
            gen_params: self.gen_store.clone(),
            disc_params: self.disc_store.clone(),
            opt_g: self.opt_g.state.clone(),
            opt_d: self.opt_d.state.clone(),
            codebook: self.codebook.clone(),
        }
    }
}

pub struct TrainOutcome {
    pub bundle: CheckpointBundle,
    pub reports: Vec<LossReport>,
}

/// Train from scratch. With an output directory, periodic checkpoints land
/// in `step_NNNNNN/`, the final bundle in `final/`, and per-step loss rows
/// in `train_log.jsonl`.
pub fn train(
    cfg: TrainConfig,
    rows: &[ManifestRow],
    base: &Path,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(cfg, rows, base)?;
    run_loop(trainer, out, None)
}

/// Continue a checkpointed run up to `steps_override` (or the configured
/// step count).
pub fn train_with_log(
    bundle: CheckpointBundle,
    rows: &[ManifestRow],
    base: &Path,
    out: Option<&Path>,
    steps_override: Option<u64>,
) -> Result<TrainOutcome> {
    let trainer = Trainer::resume(bundle, rows, base)?;
    run_loop(trainer, out, steps_override)
}

fn run_loop(mut trainer: Trainer, out: Option<&Path>, steps_override: Option<u64>) -> Result<TrainOutcome> {
    let steps = steps_override.unwrap_or(trainer.cfg.steps);
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            Some(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?,
            )
        }
        None => None,
    };
    let mut reports = Vec::new();
    while trainer.current_step() < steps {
        let report = trainer.step_once()?;
        if let Some(f) = log.as_mut() {
            let line = serde_json::to_string(&report)?;
            writeln!(f, "{line}").map_err(|e| Error::io("train_log.jsonl", e))?;
        }
        let done = trainer.current_step();
        if let Some(dir) = out {
            let interval = trainer.cfg.checkpoint_interval;
            if interval > 0 && done.is_multiple_of(interval) && done < steps {
                trainer.bundle().save(&dir.join(format!("step_{done:06}")))?;
            }
        }
        reports.push(report);
    }
    let bundle = trainer.bundle();
    if let Some(dir) = out {
        bundle.save(&dir.join("final"))?;
    }
    Ok(TrainOutcome { bundle, reports })
}

/// One full train + eval per segment size, identical seeds otherwise.
/// Per-size failures are isolated so partial results survive.
pub struct AblationOutcome {
    pub segment_seconds: f64,
    pub report: Result<EvalReport>,
}

pub fn ablation_run(
    cfg: &TrainConfig,
    rows: &[ManifestRow],
    base: &Path,
    segment_sizes: &[f64],
    out: Option<&Path>,
) -> Result<Vec<AblationOutcome>> {
    if segment_sizes.is_empty() {
        return Err(Error::Contract("ablation needs at least one segment size".into()));
    }
    let eval_rows: Vec<ManifestRow> = {
        let test: Vec<ManifestRow> = rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
        if test.is_empty() {
            rows.iter().filter(|r| r.split == Split::Train).cloned().collect()
        } else {
            test
        }
    };
    let targets = EvalTargets::List((1..=7).map(f64::from).collect());
    let mut outcomes = Vec::with_capacity(segment_sizes.len());
    for &size in segment_sizes {
        let mut cfg_i = cfg.clone();
        cfg_i.segment_seconds = size;
        let sub_out = out.map(|d| d.join(format!("seg_{size}")));
        let report = (|| -> Result<EvalReport> {
            let outcome = train(cfg_i.clone(), rows, base, sub_out.as_deref())?;
            let converter = crate::inference::Converter::from_bundle(&outcome.bundle)?;
            let ser = build_ser(&cfg_i.backends.ser, cfg_i.sample_rate)?;
            let mos = crate::backends::build_mos(&crate::backends::MosBackendConfig::Mock, cfg_i.sample_rate)?;
            evaluate(&eval_rows, base, &targets, &converter, &*ser, Some(&*mos))
        })();
        outcomes.push(AblationOutcome {
            segment_seconds: size,
            report,
        });
    }
    if let Some(dir) = out {
        write_trend_table(dir, &outcomes)?;
    }
    Ok(outcomes)
}

/// Per-class trend rows across segment sizes (the class-wise breakdown a
/// segment-size study is read from).
fn write_trend_table(dir: &Path, outcomes: &[AblationOutcome]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("trends.csv");
    let mut text = String::from("segment_seconds,arousal_class,l_mse,mean_mos,count\n");
    for o in outcomes {
        if let Ok(report) = &o.report {
            for (class, agg) in &report.classwise {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    o.segment_seconds,
                    class,
                    agg.l_mse,
                    agg.mean_mos.map(|m| m.to_string()).unwrap_or_default(),
                    agg.count
                ));
            }
        }
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::generate_toy_corpus;

    fn micro_config(seed: u64) -> TrainConfig {
        TrainConfig {
            segment_seconds: 0.25,
            steps: 3,
            ..TrainConfig::toy_preset(seed)
        }
    }

    fn micro_trainer(seed: u64, dir: &Path) -> (Trainer, Vec<ManifestRow>) {
        let corpus = generate_toy_corpus(dir, 3, 0, seed).unwrap();
        let trainer = Trainer::new(micro_config(seed), &corpus.rows, dir).unwrap();
        (trainer, corpus.rows)
    }

    #[test]
    fn steps_are_deterministic_across_fresh_trainers() {
        let dir = tempfile::tempdir().unwrap();
        let (mut a, rows) = micro_trainer(11, dir.path());
        let ra: Vec<LossReport> = (0..3).map(|_| a.step_once().unwrap()).collect();
        let mut b = Trainer::new(micro_config(11), &rows, dir.path()).unwrap();
        let rb: Vec<LossReport> = (0..3).map(|_| b.step_once().unwrap()).collect();
        assert_eq!(ra, rb);
        assert_eq!(a.gen_store().digest(), b.gen_store().digest());
        assert_eq!(a.disc_store().digest(), b.disc_store().digest());
    }

    #[test]
    fn every_row_visited_once_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let (mut t, _) = micro_trainer(3, dir.path());
        let n = t.cache.len() as u64;
        let b = t.cfg.batch_size as u64;
        // walk enough batches to cover 4 epochs and count visits per epoch
        let mut steps_for_epoch = |e: u64| -> Vec<usize> {
            let mut visits = Vec::new();
            for step in 0..(4 * n / b + 1) {
                for i in 0..b {
                    let global = step * b + i;
                    if global / n == e {
                        visits.push((step, i));
                    }
                }
            }
            visits
                .into_iter()
                .map(|(s, i)| t.batch_rows(s)[i as usize])
                .collect()
        };
        for epoch in 0..3u64 {
            let mut rows = steps_for_epoch(epoch);
            rows.sort_unstable();
            assert_eq!(rows, (0..n as usize).collect::<Vec<_>>(), "epoch {epoch}");
        }
    }

    #[test]
    fn backends_are_frozen_across_steps() {
        let dir = tempfile::tempdir().unwrap();
        let (mut t, _) = micro_trainer(5, dir.path());
        let before = t.backend_digests();
        for _ in 0..3 {
            t.step_once().unwrap();
        }
        assert_eq!(before, t.backend_digests());
    }

    #[test]
    fn resume_continues_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (mut full, rows) = micro_trainer(9, dir.path());
        let all: Vec<LossReport> = (0..4).map(|_| full.step_once().unwrap()).collect();

        let (mut half, _) = micro_trainer(9, dir.path());
        half.step_once().unwrap();
        half.step_once().unwrap();
        let bundle = half.bundle();
        let mut resumed = Trainer::resume(bundle, &rows, dir.path()).unwrap();
        assert_eq!(resumed.current_step(), 2);
        let r2 = resumed.step_once().unwrap();
        let r3 = resumed.step_once().unwrap();
        assert_eq!(r2, all[2]);
        assert_eq!(r3, all[3]);
        assert_eq!(resumed.gen_store().digest(), full.gen_store().digest());
    }

    #[test]
    fn zero_steps_yields_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_toy_corpus(dir.path(), 2, 0, 1).unwrap();
        let mut cfg = micro_config(1);
        cfg.steps = 0;
        let out = dir.path().join("out");
        let outcome = train(cfg, &corpus.rows, dir.path(), Some(&out)).unwrap();
        assert_eq!(outcome.bundle.meta.step, 0);
        assert!(outcome.reports.is_empty());
        assert!(out.join("final").join("meta.json").exists());
    }

    #[test]
    fn short_rows_padded_with_silence_units() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_toy_corpus(dir.path(), 2, 0, 2).unwrap();
        let mut cfg = micro_config(2);
        cfg.segment_seconds = 3.0; // longer than every toy clip
        let mut t = Trainer::new(cfg, &corpus.rows, dir.path()).unwrap();
        let r = t.step_once().unwrap();
        assert!(r.is_finite());
    }

    #[test]
    fn empty_train_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_toy_corpus(dir.path(), 1, 1, 3).unwrap();
        let test_only: Vec<ManifestRow> = corpus
            .rows
            .into_iter()
            .filter(|r| r.split == Split::Test)
            .collect();
        assert!(matches!(
            Trainer::new(micro_config(3), &test_only, dir.path()),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn ablation_isolates_failures_and_keys_by_size() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_toy_corpus(dir.path(), 2, 1, 4).unwrap();
        let mut cfg = micro_config(4);
        cfg.steps = 1;
        let out = dir.path().join("ablate");
        let outcomes = ablation_run(&cfg, &corpus.rows, dir.path(), &[0.25, 0.5], Some(&out)).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].segment_seconds, 0.25);
        for o in &outcomes {
            assert!(o.report.is_ok(), "{:?}", o.report.as_ref().err());
        }
        assert!(out.join("trends.csv").exists());
        assert!(matches!(
            ablation_run(&cfg, &corpus.rows, dir.path(), &[], None),
            Err(Error::Contract(_))
        ));
    }
}
