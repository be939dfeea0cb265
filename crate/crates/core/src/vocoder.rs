//! Conditioned adversarial vocoder: an upsampling generator over the
//! concatenated disentangled representations, judged by six multi-period
//! and three multi-scale sub-discriminators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::encoders::{SpeakerEmbedding, UnitSequence, EMOTION_DIM, SPEAKER_DIM};
use crate::error::{Error, Result};
use crate::net::{Ctx, PlainCtx};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.1;
const WEIGHT_STD: f64 = 0.01;

/// Per-frame conditioning `[T', unit_embed_dim + 512 + 128]`; the speaker
/// and emotion slices repeat on every row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTensor {
    pub frames: Tensor,
    pub frame_rate: u32,
}

impl ConditioningTensor {
    pub fn n_frames(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn width(&self) -> usize {
        self.frames.dim(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub unit_embed_dim: usize,
    pub upsample_factors: Vec<usize>,
    /// Channel widths: entry 0 is the pre-conv output, then one entry per
    /// upsampling stage.
    pub channel_widths: Vec<usize>,
    /// Dilations of the residual units within each stage.
    pub residual_dilations: Vec<usize>,
    pub frame_rate: u32,
    pub sample_rate: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            unit_embed_dim: 128,
            upsample_factors: vec![5, 4, 4, 4],
            channel_widths: vec![512, 256, 128, 64, 32],
            residual_dilations: vec![1, 3, 5],
            frame_rate: 50,
            sample_rate: 16_000,
        }
    }
}

impl GeneratorConfig {
    /// Small widths for tests and smoke training runs.
    pub fn tiny() -> Self {
        GeneratorConfig {
            unit_embed_dim: 32,
            channel_widths: vec![32, 16, 8, 4, 2],
            ..GeneratorConfig::default()
        }
    }

    pub fn upsample_product(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    pub fn cond_width(&self) -> usize {
        self.unit_embed_dim + SPEAKER_DIM + EMOTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.upsample_factors.is_empty() || self.upsample_factors.contains(&0) {
            return Err(Error::Config("upsample factors must be positive".into()));
        }
        if self.channel_widths.len() != self.upsample_factors.len() + 1 {
            return Err(Error::Config(format!(
                "need {} channel widths for {} stages, got {}",
                self.upsample_factors.len() + 1,
                self.upsample_factors.len(),
                self.channel_widths.len()
            )));
        }
        if self.channel_widths.contains(&0) || self.unit_embed_dim == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.residual_dilations.is_empty() {
            return Err(Error::Config("need at least one residual dilation".into()));
        }
        let product = self.upsample_product() as u64 * self.frame_rate as u64;
        if product != self.sample_rate as u64 {
            return Err(Error::Config(format!(
                "upsample product {} x frame rate {} must equal sample rate {}",
                self.upsample_product(),
                self.frame_rate,
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Upsampling kernel for one stage: twice the factor, widened by one for
/// odd factors so the symmetric padding that preserves the exact output
/// length stays integral.
fn up_kernel(factor: usize) -> usize {
    if factor.is_multiple_of(2) {
        2 * factor
    } else {
        2 * factor + 1
    }
}

pub struct Generator {
    cfg: GeneratorConfig,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Generator { cfg })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = &self.cfg;
        store.insert("g.pre.w", Tensor::randn(&[c.channel_widths[0], c.cond_width(), 7], WEIGHT_STD, rng));
        store.insert("g.pre.b", Tensor::zeros(&[c.channel_widths[0]]));
        for (i, &factor) in c.upsample_factors.iter().enumerate() {
            let (cin, cout) = (c.channel_widths[i], c.channel_widths[i + 1]);
            let kk = up_kernel(factor);
            store.insert(format!("g.up{i}.w"), Tensor::randn(&[cout, cin, kk], WEIGHT_STD, rng));
            store.insert(format!("g.up{i}.b"), Tensor::zeros(&[cout]));
            for (j, _) in c.residual_dilations.iter().enumerate() {
                store.insert(
                    format!("g.res{i}.{j}.a.w"),
                    Tensor::randn(&[cout, cout, 3], WEIGHT_STD, rng),
                );
                store.insert(format!("g.res{i}.{j}.a.b"), Tensor::zeros(&[cout]));
                store.insert(
                    format!("g.res{i}.{j}.b.w"),
                    Tensor::randn(&[cout, cout, 3], WEIGHT_STD, rng),
                );
                store.insert(format!("g.res{i}.{j}.b.b"), Tensor::zeros(&[cout]));
            }
        }
        let c_last = *c.channel_widths.last().unwrap();
        store.insert("g.post.w", Tensor::randn(&[1, c_last, 7], WEIGHT_STD, rng));
        store.insert("g.post.b", Tensor::zeros(&[1]));
    }

    /// cond `[T', cond_width]` -> waveform `[T' * upsample_product]`.
    pub fn forward<C: Ctx>(&self, ctx: &mut C, cond: &C::T) -> Result<C::T> {
        let dims = ctx.dims(cond);
        if dims.len() != 2 || dims[1] != self.cfg.cond_width() {
            return Err(Error::Contract(format!(
                "conditioning shape {:?} does not match generator input width {}",
                dims,
                self.cfg.cond_width()
            )));
        }
        let mut x = ctx.transpose2(cond); // [W, T']
        {
            let w = ctx.param("g.pre.w");
            let b = ctx.param("g.pre.b");
            x = ctx.conv1d(&x, &w, &b, 1, 1, 3);
        }
        for (i, &factor) in self.cfg.upsample_factors.iter().enumerate() {
            x = ctx.leaky_relu(&x, LEAKY_SLOPE);
            let w = ctx.param(&format!("g.up{i}.w"));
            let b = ctx.param(&format!("g.up{i}.b"));
            x = ctx.tconv1d(&x, &w, &b, factor);
            for (j, &dil) in self.cfg.residual_dilations.iter().enumerate() {
                let h = ctx.leaky_relu(&x, LEAKY_SLOPE);
                let wa = ctx.param(&format!("g.res{i}.{j}.a.w"));
                let ba = ctx.param(&format!("g.res{i}.{j}.a.b"));
                let h = ctx.conv1d(&h, &wa, &ba, 1, dil, dil);
                let h = ctx.leaky_relu(&h, LEAKY_SLOPE);
                let wb = ctx.param(&format!("g.res{i}.{j}.b.w"));
                let bb = ctx.param(&format!("g.res{i}.{j}.b.b"));
                let h = ctx.conv1d(&h, &wb, &bb, 1, 1, 1);
                x = ctx.add(&x, &h);
            }
        }
        x = ctx.leaky_relu(&x, LEAKY_SLOPE);
        let w = ctx.param("g.post.w");
        let b = ctx.param("g.post.b");
        x = ctx.conv1d(&x, &w, &b, 1, 1, 3);
        let x = ctx.tanh(&x);
        let n = ctx.numel(&x);
        Ok(ctx.reshape(&x, &[n]))
    }
}

pub const UNIT_TABLE_PARAM: &str = "g.units.w";

pub fn init_unit_table(store: &mut ParamStore, k: usize, embed_dim: usize, rng: &mut impl Rng) {
    store.insert(UNIT_TABLE_PARAM, Tensor::randn(&[k, embed_dim], 0.1, rng));
}

/// Assemble per-frame conditioning rows: `(unit embedding, speaker, emotion)`.
pub fn build_conditioning_on<C: Ctx>(
    ctx: &mut C,
    units: &UnitSequence,
    spk: &SpeakerEmbedding,
    emo: &C::T,
    unit_table: &C::T,
) -> Result<C::T> {
    let table_dims = ctx.dims(unit_table);
    if units.is_empty() {
        return Err(Error::Contract("empty unit sequence".into()));
    }
    if let Some(&bad) = units.units.iter().find(|&&u| u as usize >= table_dims[0]) {
        return Err(Error::Contract(format!(
            "unit {bad} out of range for embedding table with K={}",
            table_dims[0]
        )));
    }
    if ctx.numel(emo) != EMOTION_DIM {
        return Err(Error::Contract(format!(
            "emotion embedding must have {EMOTION_DIM} dims"
        )));
    }
    let rows = units.len();
    let e = ctx.embed_rows(unit_table, &units.units);
    let spk_c = ctx.constant(spk.vector.clone());
    let s = ctx.broadcast_row(&spk_c, rows);
    let m = ctx.broadcast_row(emo, rows);
    Ok(ctx.concat_cols(&[e, s, m]))
}

/// Plain-path conditioning from stored parameters.
pub fn build_conditioning(
    units: &UnitSequence,
    spk: &SpeakerEmbedding,
    emo: &crate::encoders::EmotionEmbedding,
    store: &ParamStore,
    frame_rate: u32,
) -> Result<ConditioningTensor> {
    let mut ctx = PlainCtx::new(store);
    let table = ctx.param(UNIT_TABLE_PARAM);
    let emo_t = emo.vector.clone();
    let frames = build_conditioning_on(&mut ctx, units, spk, &emo_t, &table)?;
    Ok(ConditioningTensor { frames, frame_rate })
}

/// Plain-path synthesis from stored parameters.
pub fn generate(cond: &ConditioningTensor, store: &ParamStore, cfg: &GeneratorConfig) -> Result<AudioClip> {
    let gen = Generator::new(cfg.clone())?;
    let mut ctx = PlainCtx::new(store);
    let cond_t = cond.frames.clone();
    let wave = gen.forward(&mut ctx, &cond_t)?;
    AudioClip::new(wave.into_data(), cfg.sample_rate, "generated")
}

// ------------------------------------------------------------ discriminators

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    pub scales: Vec<usize>,
    pub mpd_channels: Vec<usize>,
    pub msd_channels: Vec<usize>,
}

pub const PERIODS: [usize; 6] = [2, 3, 4, 5, 7, 11];
pub const SCALES: [usize; 3] = [1, 2, 4];

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            periods: PERIODS.to_vec(),
            scales: SCALES.to_vec(),
            mpd_channels: vec![16, 64, 128, 256],
            msd_channels: vec![16, 64, 128, 256],
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        DiscriminatorConfig {
            mpd_channels: vec![2, 4, 8, 8],
            msd_channels: vec![2, 4, 8, 8],
            ..DiscriminatorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods != PERIODS {
            return Err(Error::Config(format!(
                "period bank must be {PERIODS:?}, got {:?}",
                self.periods
            )));
        }
        if self.scales != SCALES {
            return Err(Error::Config(format!(
                "scale bank must be {SCALES:?}, got {:?}",
                self.scales
            )));
        }
        if self.mpd_channels.is_empty() || self.msd_channels.is_empty() {
            return Err(Error::Config("discriminator channel lists must be non-empty".into()));
        }
        Ok(())
    }

    pub fn sub_count(&self) -> usize {
        self.periods.len() + self.scales.len()
    }

    /// Conv layers per sub-discriminator, and therefore activations
    /// reported for feature matching.
    pub fn layers_per_sub(&self) -> usize {
        // channel ramp + one stride-1 consolidation + score head
        debug_assert_eq!(self.mpd_channels.len(), self.msd_channels.len());
        self.mpd_channels.len() + 2
    }
}

/// One sub-discriminator's output: raw score map plus every intermediate
/// activation for the feature-matching loss.
pub struct SubOutput<T> {
    pub label: String,
    pub score: T,
    pub acts: Vec<T>,
}

pub struct DiscriminatorBank {
    cfg: DiscriminatorConfig,
}

impl DiscriminatorBank {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DiscriminatorBank { cfg })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn sub_count(&self) -> usize {
        self.cfg.sub_count()
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for &p in &self.cfg.periods {
            for (l, (cin, cout, kk)) in mpd_plan(&self.cfg.mpd_channels).into_iter().enumerate() {
                store.insert(format!("d.p{p}.l{l}.w"), Tensor::randn(&[cout, cin, kk], WEIGHT_STD, rng));
                store.insert(format!("d.p{p}.l{l}.b"), Tensor::zeros(&[cout]));
            }
        }
        for &s in &self.cfg.scales {
            for (l, (cin, cout, kk)) in msd_plan(&self.cfg.msd_channels).into_iter().enumerate() {
                store.insert(format!("d.s{s}.l{l}.w"), Tensor::randn(&[cout, cin, kk], WEIGHT_STD, rng));
                store.insert(format!("d.s{s}.l{l}.b"), Tensor::zeros(&[cout]));
            }
        }
    }

    /// Run every sub-discriminator over a `[L]` waveform.
    pub fn forward_wave<C: Ctx>(&self, ctx: &mut C, wave: &C::T) -> Vec<SubOutput<C::T>> {
        let mut out = Vec::with_capacity(self.sub_count());
        for &p in &self.cfg.periods {
            out.push(self.forward_period(ctx, wave, p));
        }
        for &s in &self.cfg.scales {
            out.push(self.forward_scale(ctx, wave, s));
        }
        out
    }

    fn forward_period<C: Ctx>(&self, ctx: &mut C, wave: &C::T, period: usize) -> SubOutput<C::T> {
        let l = ctx.numel(wave);
        let pad = (period - l % period) % period;
        let x2 = ctx.reshape(wave, &[1, l]);
        let padded = ctx.pad_reflect_end(&x2, pad);
        let m = (l + pad) / period;
        // (i, j) = x[j * period + i]: reshape to [M, p] then transpose
        let by_time = ctx.reshape(&padded, &[m, period]);
        let folded = ctx.transpose2(&by_time);
        let mut x = ctx.reshape(&folded, &[1, period, m]);

        let plan = mpd_plan(&self.cfg.mpd_channels);
        let last = plan.len() - 1;
        let mut acts = Vec::with_capacity(plan.len());
        for (lix, (_cin, _cout, kk)) in plan.iter().enumerate() {
            let w = ctx.param(&format!("d.p{period}.l{lix}.w"));
            let b = ctx.param(&format!("d.p{period}.l{lix}.b"));
            let stride = if lix < self.cfg.mpd_channels.len() { 3 } else { 1 };
            let pad = kk / 2;
            x = ctx.conv2d_rows(&x, &w, &b, stride, pad);
            if lix < last {
                x = ctx.leaky_relu(&x, LEAKY_SLOPE);
            }
            acts.push(x.clone());
        }
        SubOutput {
            label: format!("p{period}"),
            score: x,
            acts,
        }
    }

    fn forward_scale<C: Ctx>(&self, ctx: &mut C, wave: &C::T, scale: usize) -> SubOutput<C::T> {
        let l = ctx.numel(wave);
        let mut x = ctx.reshape(wave, &[1, l]);
        let mut s = scale;
        while s > 1 {
            x = ctx.avg_pool1d(&x, 4, 2, 1);
            s /= 2;
        }
        let plan = msd_plan(&self.cfg.msd_channels);
        let last = plan.len() - 1;
        let mut acts = Vec::with_capacity(plan.len());
        for (lix, (_cin, _cout, kk)) in plan.iter().enumerate() {
            let w = ctx.param(&format!("d.s{scale}.l{lix}.w"));
            let b = ctx.param(&format!("d.s{scale}.l{lix}.b"));
            let first_ramp = 1..self.cfg.msd_channels.len();
            let stride = if first_ramp.contains(&lix) { 4 } else { 1 };
            let pad = kk / 2;
            x = ctx.conv1d(&x, &w, &b, stride, 1, pad);
            if lix < last {
                x = ctx.leaky_relu(&x, LEAKY_SLOPE);
            }
            acts.push(x.clone());
        }
        SubOutput {
            label: format!("s{scale}"),
            score: x,
            acts,
        }
    }
}

/// (in, out, kernel) per layer of a period sub-discriminator.
fn mpd_plan(channels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut plan = Vec::with_capacity(channels.len() + 2);
    let mut cin = 1;
    for &c in channels {
        plan.push((cin, c, 5));
        cin = c;
    }
    plan.push((cin, cin, 5));
    plan.push((cin, 1, 3));
    plan
}

/// (in, out, kernel) per layer of a scale sub-discriminator.
fn msd_plan(channels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut plan = Vec::with_capacity(channels.len() + 2);
    let mut cin = 1;
    for (i, &c) in channels.iter().enumerate() {
        plan.push((cin, c, if i == 0 { 15 } else { 41 }));
        cin = c;
    }
    plan.push((cin, cin, 5));
    plan.push((cin, 1, 3));
    plan
}

/// Score both waveforms with frozen parameters: the one-call evaluation
/// surface over a real/generated pair.
pub struct SubPair {
    pub label: String,
    pub real_score: Tensor,
    pub fake_score: Tensor,
    pub real_acts: Vec<Tensor>,
    pub fake_acts: Vec<Tensor>,
}

pub fn discriminate(
    real: &AudioClip,
    fake: &AudioClip,
    store: &ParamStore,
    cfg: &DiscriminatorConfig,
) -> Result<Vec<SubPair>> {
    if real.len() != fake.len() {
        return Err(Error::Contract(format!(
            "real ({}) and fake ({}) lengths differ",
            real.len(),
            fake.len()
        )));
    }
    let bank = DiscriminatorBank::new(cfg.clone())?;
    let mut ctx = PlainCtx::new(store);
    let rt = Tensor::from_vec(&[real.len()], real.samples.clone());
    let ft = Tensor::from_vec(&[fake.len()], fake.samples.clone());
    let r = bank.forward_wave(&mut ctx, &rt);
    let f = bank.forward_wave(&mut ctx, &ft);
    Ok(r.into_iter()
        .zip(f)
        .map(|(r, f)| SubPair {
            label: r.label,
            real_score: r.score,
            fake_score: f.score,
            real_acts: r.acts,
            fake_acts: f.acts,
        })
        .collect())
}
