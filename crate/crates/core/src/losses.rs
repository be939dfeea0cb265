//! Training objectives: least-squares adversarial terms, mel reconstruction,
//! feature matching, and the SER concordance loss, plus their weighted
//! combination. Everything here runs on the autodiff graph so a single
//! backward sweep covers the generator, the unit table, and the emotion
//! embedder.
//!
//! Within one sample the norms are sums over all elements; across the batch
//! the reduction is configurable (mean by default).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::SerBackend;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mel::MelAnalyzer;
use crate::net::GraphCtx;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchReduction {
    Mean,
    Sum,
}

impl BatchReduction {
    fn apply(self, g: &mut Graph, items: Vec<Var>) -> Var {
        assert!(!items.is_empty());
        let mut acc = items[0];
        for &it in &items[1..] {
            acc = g.add(acc, it);
        }
        match self {
            BatchReduction::Sum => acc,
            BatchReduction::Mean => g.affine(acc, 1.0 / items.len() as f64, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_r: f64,
    pub lambda_ser: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fm: 2.0,
            lambda_r: 45.0,
            lambda_ser: 1.0,
        }
    }
}

/// All loss terms of one step, with weights applied in the totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub adv_g: f64,
    pub disc: f64,
    pub recon: f64,
    pub fm: f64,
    pub ser: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub adv_g_per: Vec<f64>,
    pub fm_per: Vec<f64>,
    pub disc_per: Vec<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.adv_g, self.disc, self.recon, self.fm, self.ser, self.total_g, self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Name and value of the first non-finite term, for divergence dumps.
    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        [
            ("adv_g", self.adv_g),
            ("disc", self.disc),
            ("recon", self.recon),
            ("fm", self.fm),
            ("ser", self.ser),
            ("total_g", self.total_g),
            ("total_d", self.total_d),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

/// Concordance correlation coefficient with population (1/n) moments.
/// Degenerate inputs (zero variances and equal means) return 0.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "ccc length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Contract("ccc needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov /= n;
    vx /= n;
    vy /= n;
    let denom = vx + vy + (mx - my) * (mx - my);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * cov / denom)
}

/// Graph-side CCC over two `[n]` vectors; same formula as [`ccc`].
pub fn ccc_var(g: &mut Graph, x: Var, y: Var) -> Var {
    let n = g.value(x).numel() as f64;
    let mx = g.mean_all(x);
    let my = g.mean_all(y);
    let dx = g.sub_scalar(x, mx);
    let dy = g.sub_scalar(y, my);
    let cov_sum = g.dot(dx, dy);
    let cov = g.affine(cov_sum, 1.0 / n, 0.0);
    let vx_sum = g.dot(dx, dx);
    let vx = g.affine(vx_sum, 1.0 / n, 0.0);
    let vy_sum = g.dot(dy, dy);
    let vy = g.affine(vy_sum, 1.0 / n, 0.0);
    let md = g.sub(mx, my);
    let md2 = g.mul(md, md);
    let v_sum = g.add(vx, vy);
    let denom = g.add(v_sum, md2);
    let num = g.affine(cov, 2.0, 0.0);
    g.div_scalars(num, denom)
}

/// `sum((1 - s)^2)` over one score map.
fn squared_dev_from_one(g: &mut Graph, s: Var) -> Var {
    let d = g.affine(s, -1.0, 1.0);
    let sq = g.mul(d, d);
    g.sum_all(sq)
}

/// `sum(s^2)` over one score map.
fn squared_norm(g: &mut Graph, s: Var) -> Var {
    let sq = g.mul(s, s);
    g.sum_all(sq)
}

/// Generator-side adversarial loss. `fake_scores[j][b]` is sub-discriminator
/// `j`'s score map on batch item `b`. Returns the total and the per-sub terms.
pub fn adv_generator_loss(
    g: &mut Graph,
    fake_scores: &[Vec<Var>],
    red: BatchReduction,
) -> Result<(Var, Vec<Var>)> {
    if fake_scores.is_empty() || fake_scores.iter().any(Vec::is_empty) {
        return Err(Error::Contract("adversarial loss needs non-empty score maps".into()));
    }
    let mut per_sub = Vec::with_capacity(fake_scores.len());
    for maps in fake_scores {
        let items: Vec<Var> = maps.iter().map(|&s| squared_dev_from_one(g, s)).collect();
        per_sub.push(red.apply(g, items));
    }
    let mut total = per_sub[0];
    for &t in &per_sub[1..] {
        total = g.add(total, t);
    }
    Ok((total, per_sub))
}

/// Discriminator loss: `sum((1 - D(x))^2) + sum(D(y_hat)^2)` per sub.
pub fn discriminator_loss(
    g: &mut Graph,
    real_scores: &[Vec<Var>],
    fake_scores: &[Vec<Var>],
    red: BatchReduction,
) -> Result<(Var, Vec<Var>)> {
    if real_scores.len() != fake_scores.len() {
        return Err(Error::Contract("real/fake sub-discriminator counts differ".into()));
    }
    if real_scores.is_empty() {
        return Err(Error::Contract("discriminator loss needs at least one sub".into()));
    }
    let mut per_sub = Vec::with_capacity(real_scores.len());
    for (rmaps, fmaps) in real_scores.iter().zip(fake_scores) {
        if rmaps.len() != fmaps.len() || rmaps.is_empty() {
            return Err(Error::Contract("real/fake batch sizes differ".into()));
        }
        let mut items = Vec::with_capacity(rmaps.len());
        for (&r, &f) in rmaps.iter().zip(fmaps) {
            if g.value(r).shape() != g.value(f).shape() {
                return Err(Error::Contract("real/fake score map shapes differ".into()));
            }
            let lr = squared_dev_from_one(g, r);
            let lf = squared_norm(g, f);
            items.push(g.add(lr, lf));
        }
        per_sub.push(red.apply(g, items));
    }
    let mut total = per_sub[0];
    for &t in &per_sub[1..] {
        total = g.add(total, t);
    }
    Ok((total, per_sub))
}

/// L1 between two log-mel matrices, summed over all entries.
pub fn mel_l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "mel shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum())
}

/// Mel reconstruction for one (reference, generated) pair on the graph.
pub fn recon_loss_on(
    g: &mut Graph,
    x_samples: &[f64],
    y_hat: Var,
    analyzer: &Arc<MelAnalyzer>,
) -> Result<Var> {
    if x_samples.len() != g.value(y_hat).numel() {
        return Err(Error::Contract(format!(
            "reconstruction pair lengths differ: {} vs {}",
            x_samples.len(),
            g.value(y_hat).numel()
        )));
    }
    let mel_x = g.constant(analyzer.log_mel(x_samples)?);
    let mel_y = g.log_mel(y_hat, analyzer);
    let d = g.sub(mel_x, mel_y);
    let a = g.abs(d);
    Ok(g.sum_all(a))
}

/// Batched mel reconstruction with the configured reduction.
pub fn recon_loss_batch(
    g: &mut Graph,
    pairs: &[(&[f64], Var)],
    analyzer: &Arc<MelAnalyzer>,
    red: BatchReduction,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Contract("reconstruction loss needs at least one pair".into()));
    }
    let mut items = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        items.push(recon_loss_on(g, x, *y, analyzer)?);
    }
    Ok(red.apply(g, items))
}

/// Plain reconstruction loss between two clips.
pub fn recon_loss(
    x: &crate::audio::AudioClip,
    y_hat: &crate::audio::AudioClip,
    cfg: &crate::mel::MelConfig,
) -> Result<f64> {
    if x.len() != y_hat.len() {
        return Err(Error::Contract(format!(
            "reconstruction pair lengths differ: {} vs {}",
            x.len(),
            y_hat.len()
        )));
    }
    let analyzer = MelAnalyzer::new(cfg.clone());
    let ma = analyzer.log_mel(&x.samples)?;
    let mb = analyzer.log_mel(&y_hat.samples)?;
    mel_l1(&ma, &mb)
}

/// Feature-matching loss: per sub-discriminator, the layer-normalized L1
/// between real and generated activations. `acts[j][b][i]` indexes sub,
/// batch item, layer.
pub fn feature_matching_loss(
    g: &mut Graph,
    real_acts: &[Vec<Vec<Var>>],
    fake_acts: &[Vec<Vec<Var>>],
    red: BatchReduction,
) -> Result<(Var, Vec<Var>)> {
    if real_acts.len() != fake_acts.len() || real_acts.is_empty() {
        return Err(Error::Contract("feature lists misaligned across subs".into()));
    }
    let mut per_sub = Vec::with_capacity(real_acts.len());
    for (rsub, fsub) in real_acts.iter().zip(fake_acts) {
        if rsub.len() != fsub.len() || rsub.is_empty() {
            return Err(Error::Contract("feature lists misaligned across batch".into()));
        }
        let mut items = Vec::with_capacity(rsub.len());
        for (ritem, fitem) in rsub.iter().zip(fsub) {
            if ritem.len() != fitem.len() || ritem.is_empty() {
                return Err(Error::Contract("feature lists misaligned across layers".into()));
            }
            let mut layer_terms = Vec::with_capacity(ritem.len());
            for (&ra, &fa) in ritem.iter().zip(fitem) {
                let m = g.value(ra).numel();
                if g.value(fa).numel() != m {
                    return Err(Error::Contract("activation sizes differ".into()));
                }
                let d = g.sub(ra, fa);
                let a = g.abs(d);
                let s = g.sum_all(a);
                layer_terms.push(g.affine(s, 1.0 / m as f64, 0.0));
            }
            let mut acc = layer_terms[0];
            for &t in &layer_terms[1..] {
                acc = g.add(acc, t);
            }
            items.push(acc);
        }
        per_sub.push(red.apply(g, items));
    }
    let mut total = per_sub[0];
    for &t in &per_sub[1..] {
        total = g.add(total, t);
    }
    Ok((total, per_sub))
}

/// SER conditioning loss: `1 - CCC(targets, SER(y_hat))` over the batch.
/// The SER backend is frozen; gradients flow only into the waveforms.
pub fn ser_loss(
    ctx: &mut GraphCtx<'_>,
    targets: &[f64],
    y_hat_waves: &[Var],
    ser: &dyn SerBackend,
    sample_rate: u32,
) -> Result<Var> {
    if targets.len() != y_hat_waves.len() {
        return Err(Error::Contract("target/waveform counts differ".into()));
    }
    if targets.len() < 2 {
        return Err(Error::Contract(format!(
            "SER loss needs a batch of at least 2, got {}",
            targets.len()
        )));
    }
    let preds: Vec<Var> = y_hat_waves
        .iter()
        .map(|&w| ser.predict_var(ctx, w, sample_rate))
        .collect::<Result<_>>()?;
    let g = &mut *ctx.graph;
    let pred_vec = g.stack_scalars(&preds);
    let target_vec = g.constant(Tensor::from_vec(&[targets.len()], targets.to_vec()));
    let c = ccc_var(g, target_vec, pred_vec);
    Ok(g.affine(c, -1.0, 1.0))
}

/// Scalar loss components of one step, before weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct LossComponents {
    pub adv_g_per: Vec<f64>,
    pub fm_per: Vec<f64>,
    pub disc_per: Vec<f64>,
    pub recon: f64,
    pub ser: Option<f64>,
}

/// Combine components into the weighted totals. The floating-point
/// accumulation order mirrors the graph-side combination exactly.
pub fn total_losses(c: &LossComponents, w: &LossWeights, step: u64) -> Result<LossReport> {
    let j = c.adv_g_per.len();
    if j == 0 {
        return Err(Error::Contract("no adversarial components".into()));
    }
    if c.fm_per.len() != j || c.disc_per.len() != j {
        return Err(Error::Contract(format!(
            "component counts differ: adv {j}, fm {}, disc {}",
            c.fm_per.len(),
            c.disc_per.len()
        )));
    }
    if w.lambda_ser > 0.0 && c.ser.is_none() {
        return Err(Error::Contract(
            "SER component missing while lambda_ser > 0".into(),
        ));
    }
    let mut total_g = c.adv_g_per[0] + w.lambda_fm * c.fm_per[0];
    for i in 1..j {
        total_g += c.adv_g_per[i] + w.lambda_fm * c.fm_per[i];
    }
    total_g += w.lambda_r * c.recon;
    if let Some(ser) = c.ser {
        total_g += w.lambda_ser * ser;
    }
    let mut total_d = c.disc_per[0];
    for i in 1..j {
        total_d += c.disc_per[i];
    }
    Ok(LossReport {
        step,
        adv_g: c.adv_g_per.iter().sum(),
        disc: total_d,
        recon: c.recon,
        fm: c.fm_per.iter().sum(),
        ser: c.ser.unwrap_or(0.0),
        total_g,
        total_d,
        adv_g_per: c.adv_g_per.clone(),
        fm_per: c.fm_per.clone(),
        disc_per: c.disc_per.clone(),
    })
}

/// Graph-side weighted generator total, mirroring [`total_losses`].
pub fn total_generator_var(
    g: &mut Graph,
    adv_per: &[Var],
    fm_per: &[Var],
    recon: Var,
    ser: Option<Var>,
    w: &LossWeights,
) -> Var {
    assert_eq!(adv_per.len(), fm_per.len());
    let fm0 = g.affine(fm_per[0], w.lambda_fm, 0.0);
    let mut acc = g.add(adv_per[0], fm0);
    for i in 1..adv_per.len() {
        let fmi = g.affine(fm_per[i], w.lambda_fm, 0.0);
        let t = g.add(adv_per[i], fmi);
        acc = g.add(acc, t);
    }
    let r = g.affine(recon, w.lambda_r, 0.0);
    acc = g.add(acc, r);
    if let Some(s) = ser {
        let sv = g.affine(s, w.lambda_ser, 0.0);
        acc = g.add(acc, sv);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn consts(g: &mut Graph, maps: &[Tensor]) -> Vec<Var> {
        maps.iter().map(|t| g.constant(t.clone())).collect()
    }

    #[test]
    fn ccc_perfect_agreement() {
        let v = vec![1.0, 2.5, -3.0, 0.5];
        assert!((ccc(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_antithetic_is_minus_one() {
        assert!((ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_constant_y_equal_means_is_zero() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![2.0, 2.0, 2.0];
        assert_eq!(ccc(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn ccc_degenerate_both_constant_equal() {
        assert_eq!(ccc(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn ccc_contract_errors() {
        assert!(ccc(&[1.0], &[1.0]).is_err());
        assert!(ccc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ccc_graph_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(2..20);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let plain = ccc(&x, &y).unwrap();
            let mut g = Graph::new();
            let xv = g.constant(Tensor::from_vec(&[n], x.clone()));
            let yv = g.constant(Tensor::from_vec(&[n], y.clone()));
            let c = ccc_var(&mut g, xv, yv);
            assert!((g.value(c).item() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn adv_examples_from_contract() {
        let mut g = Graph::new();
        // all scores 1 -> 0
        let ones = consts(&mut g, &[Tensor::full(&[2, 3], 1.0)]);
        let (t, _) = adv_generator_loss(&mut g, &[ones], BatchReduction::Mean).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        // all scores 0, N elements -> N
        let zeros = consts(&mut g, &[Tensor::zeros(&[4, 5])]);
        let (t, _) = adv_generator_loss(&mut g, &[zeros], BatchReduction::Mean).unwrap();
        assert_eq!(g.value(t).item(), 20.0);
    }

    #[test]
    fn adv_matches_bruteforce_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let maps: Vec<Vec<Tensor>> = (0..3)
            .map(|_| (0..2).map(|_| Tensor::randn(&[3, 7], 1.0, &mut rng)).collect())
            .collect();
        let vars: Vec<Vec<Var>> = maps.iter().map(|ms| consts(&mut g, ms)).collect();
        let (t, per) = adv_generator_loss(&mut g, &vars, BatchReduction::Mean).unwrap();
        // oracle: independent elementwise loops
        let mut expect_total = 0.0;
        for (j, ms) in maps.iter().enumerate() {
            let mut sub = 0.0;
            for m in ms {
                sub += m.data().iter().map(|s| (1.0 - s) * (1.0 - s)).sum::<f64>();
            }
            sub /= ms.len() as f64;
            assert!((g.value(per[j]).item() - sub).abs() < 1e-9);
            expect_total += sub;
        }
        assert!((g.value(t).item() - expect_total).abs() < 1e-9);
    }

    #[test]
    fn disc_examples_from_contract() {
        let mut g = Graph::new();
        let real = consts(&mut g, &[Tensor::full(&[2, 2], 1.0)]);
        let fake = consts(&mut g, &[Tensor::zeros(&[2, 2])]);
        let (t, _) = discriminator_loss(&mut g, &[real], &[fake], BatchReduction::Mean).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        // real 0, fake 1, N elements each -> 2N
        let real = consts(&mut g, &[Tensor::zeros(&[3, 2])]);
        let fake = consts(&mut g, &[Tensor::full(&[3, 2], 1.0)]);
        let (t, _) = discriminator_loss(&mut g, &[real], &[fake], BatchReduction::Mean).unwrap();
        assert_eq!(g.value(t).item(), 12.0);
    }

    #[test]
    fn disc_shape_mismatch_is_contract_error() {
        let mut g = Graph::new();
        let real = consts(&mut g, &[Tensor::zeros(&[2, 2])]);
        let fake = consts(&mut g, &[Tensor::zeros(&[2, 3])]);
        assert!(matches!(
            discriminator_loss(&mut g, &[real], &[fake], BatchReduction::Mean),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fm_single_layer_arithmetic() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full(&[4], 1.0));
        let f = g.constant(Tensor::full(&[4], 0.5));
        let (t, _) =
            feature_matching_loss(&mut g, &[vec![vec![r]]], &[vec![vec![f]]], BatchReduction::Mean)
                .unwrap();
        assert!((g.value(t).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fm_identical_lists_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let a = g.constant(Tensor::randn(&[2, 5], 1.0, &mut rng));
        let b = g.constant(Tensor::randn(&[3], 1.0, &mut rng));
        let (t, _) = feature_matching_loss(
            &mut g,
            &[vec![vec![a, b]]],
            &[vec![vec![a, b]]],
            BatchReduction::Mean,
        )
        .unwrap();
        assert_eq!(g.value(t).item(), 0.0);
    }

    #[test]
    fn fm_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let shapes: Vec<Vec<usize>> = vec![vec![2, 6], vec![8], vec![3, 3]];
        let rt: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
        let ft: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
        let rv: Vec<Var> = rt.iter().map(|t| g.constant(t.clone())).collect();
        let fv: Vec<Var> = ft.iter().map(|t| g.constant(t.clone())).collect();
        let (t, _) =
            feature_matching_loss(&mut g, &[vec![rv]], &[vec![fv]], BatchReduction::Mean).unwrap();
        let mut expect = 0.0;
        for (a, b) in rt.iter().zip(&ft) {
            let m = a.numel() as f64;
            expect += a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / m;
        }
        assert!((g.value(t).item() - expect).abs() < 1e-9);
    }

    #[test]
    fn recon_identity_is_zero_and_shift_is_linear() {
        use crate::audio::AudioClip;
        let cfg = crate::mel::MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let x = AudioClip::new(samples, 16_000, "x").unwrap();
        assert_eq!(recon_loss(&x, &x, &cfg).unwrap(), 0.0);
        // matrices differing by +c in every entry -> c * M
        let a = Tensor::full(&[4, 6], 1.25);
        let b = Tensor::full(&[4, 6], 1.25 + 0.3);
        let l = mel_l1(&a, &b).unwrap();
        assert!((l - 0.3 * 24.0).abs() < 1e-12);
    }

    #[test]
    fn total_reconstructs_from_components() {
        // adv 1 per sub (J=9), fm 0, recon 1, ser 1 -> 9 + 45 + 1 = 55
        let c = LossComponents {
            adv_g_per: vec![1.0; 9],
            fm_per: vec![0.0; 9],
            disc_per: vec![0.5; 9],
            recon: 1.0,
            ser: Some(1.0),
        };
        let r = total_losses(&c, &LossWeights::default(), 3).unwrap();
        assert_eq!(r.total_g, 55.0);
        assert_eq!(r.total_d, 4.5);
        assert_eq!(r.adv_g, 9.0);
        assert_eq!(r.step, 3);
    }

    #[test]
    fn total_missing_ser_is_contract_error() {
        let c = LossComponents {
            adv_g_per: vec![1.0; 2],
            fm_per: vec![0.0; 2],
            disc_per: vec![0.0; 2],
            recon: 0.0,
            ser: None,
        };
        assert!(matches!(
            total_losses(&c, &LossWeights::default(), 0),
            Err(Error::Contract(_))
        ));
        let w = LossWeights { lambda_ser: 0.0, ..Default::default() };
        assert!(total_losses(&c, &w, 0).is_ok());
    }

    #[test]
    fn total_matches_random_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let j = rng.gen_range(1..12);
            let c = LossComponents {
                adv_g_per: (0..j).map(|_| rng.gen_range(0.0..3.0)).collect(),
                fm_per: (0..j).map(|_| rng.gen_range(0.0..3.0)).collect(),
                disc_per: (0..j).map(|_| rng.gen_range(0.0..3.0)).collect(),
                recon: rng.gen_range(0.0..10.0),
                ser: Some(rng.gen_range(0.0..2.0)),
            };
            let w = LossWeights {
                lambda_fm: rng.gen_range(0.0..4.0),
                lambda_r: rng.gen_range(0.0..50.0),
                lambda_ser: rng.gen_range(0.1..2.0),
            };
            let r = total_losses(&c, &w, 0).unwrap();
            let expect: f64 = c
                .adv_g_per
                .iter()
                .zip(&c.fm_per)
                .map(|(a, f)| a + w.lambda_fm * f)
                .sum::<f64>()
                + w.lambda_r * c.recon
                + w.lambda_ser * c.ser.unwrap();
            assert!((r.total_g - expect).abs() < 1e-9);
            let invariant: f64 = r
                .adv_g_per
                .iter()
                .zip(&r.fm_per)
                .map(|(a, f)| a + w.lambda_fm * f)
                .sum::<f64>()
                + w.lambda_r * r.recon
                + w.lambda_ser * r.ser;
            assert!((r.total_g - invariant).abs() < 1e-9);
        }
    }

    #[test]
    fn ser_loss_examples() {
        use crate::backends::MockSerModel;
        use crate::net::Ctx;
        use crate::params::ParamStore;

        // contract: batch of 1 rejected
        let ser = MockSerModel::new(1, 16_000);
        let store = ParamStore::new();
        let mut g = Graph::new();
        let mut ctx = GraphCtx::new(&mut g, &store, false);
        let w = ctx.constant(Tensor::full(&[2048], 0.1));
        assert!(matches!(
            ser_loss(&mut ctx, &[4.0], &[w], &ser, 16_000),
            Err(Error::Contract(_))
        ));

        // reproducible scalar on a fixed batch
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let waves: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2048).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let run = |waves: &[Vec<f64>]| -> f64 {
            let mut g = Graph::new();
            let store = ParamStore::new();
            let mut ctx = GraphCtx::new(&mut g, &store, false);
            let vars: Vec<Var> = waves
                .iter()
                .map(|s| ctx.constant(Tensor::from_vec(&[s.len()], s.clone())))
                .collect();
            let l = ser_loss(&mut ctx, &[2.0, 4.0, 6.0], &vars, &ser, 16_000).unwrap();
            g.value(l).item()
        };
        let a = run(&waves);
        let b = run(&waves);
        assert_eq!(a, b);
        assert!(a.is_finite());

        // predictions identical to non-constant targets -> loss 0 by the CCC identity
        let targets: Vec<f64> = (1..=7).map(f64::from).collect();
        assert!((1.0 - ccc(&targets, &targets).unwrap()).abs() < 1e-12);
        // predictions = reversed targets 1..7 -> 1 - (-1) = 2
        let rev: Vec<f64> = targets.iter().rev().copied().collect();
        assert!((1.0 - ccc(&targets, &rev).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn losses_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        for _ in 0..30 {
            let maps = consts(&mut g, &[Tensor::randn(&[4, 4], 2.0, &mut rng)]);
            let (t, _) = adv_generator_loss(&mut g, std::slice::from_ref(&maps), BatchReduction::Sum).unwrap();
            assert!(g.value(t).item() >= 0.0);
            let fake = consts(&mut g, &[Tensor::randn(&[4, 4], 2.0, &mut rng)]);
            let (t, _) =
                discriminator_loss(&mut g, std::slice::from_ref(&maps), std::slice::from_ref(&fake), BatchReduction::Sum)
                    .unwrap();
            assert!(g.value(t).item() >= 0.0);
            let (t, _) = feature_matching_loss(
                &mut g,
                &[vec![vec![maps[0]]]],
                &[vec![vec![fake[0]]]],
                BatchReduction::Sum,
            )
            .unwrap();
            assert!(g.value(t).item() >= 0.0);
        }
    }
}
