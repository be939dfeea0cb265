//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured evidence (run with `--nocapture` to see
//! them). The heavy smoke-training artifacts are shared across criteria
//! through a lazily initialized fixture.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emovox_core::backends::{build_mos, build_ser, MosBackendConfig, MockSerModel};
use emovox_core::checkpoint::{dir_digest, CheckpointBundle};
use emovox_core::encoders::{emotion, quantize, ContentFeatures, UnitCodebook};
use emovox_core::evaluation::{classwise_report, sec_error, significance, EvalRow};
use emovox_core::graph::{central_diff, rel_err, Graph, Var};
use emovox_core::inference::Converter;
use emovox_core::losses::{
    adv_generator_loss, ccc, discriminator_loss, feature_matching_loss, recon_loss_on, ser_loss,
    total_losses, BatchReduction, LossComponents, LossReport, LossWeights,
};
use emovox_core::mel::{MelAnalyzer, MelConfig};
use emovox_core::net::{Ctx, GraphCtx};
use emovox_core::params::ParamStore;
use emovox_core::training::{generate_toy_corpus, train, train_with_log, ManifestRow, Split, TrainConfig, Trainer};
use emovox_core::vocoder::{DiscriminatorBank, DiscriminatorConfig, Generator, GeneratorConfig};
use emovox_core::{emit_figures, evaluate, load_audio, EvalTargets, Tensor};

const SMOKE_SEED: u64 = 2024;

struct Smoke {
    _dir: tempfile::TempDir,
    base: PathBuf,
    rows: Vec<ManifestRow>,
    reports: Vec<LossReport>,
    runs_identical: bool,
    stores_identical: bool,
    bundle: CheckpointBundle,
}

fn smoke() -> &'static Smoke {
    static SMOKE: OnceLock<Smoke> = OnceLock::new();
    SMOKE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().to_path_buf();
        let corpus = generate_toy_corpus(&base, 5, 2, SMOKE_SEED).unwrap();
        let cfg = TrainConfig::toy_preset(SMOKE_SEED);
        assert_eq!(cfg.steps, 500);
        let out = base.join("run_a");
        let a = train(cfg.clone(), &corpus.rows, &base, Some(&out)).unwrap();
        let b = train(cfg, &corpus.rows, &base, None).unwrap();
        let runs_identical = a.reports == b.reports;
        let stores_identical = a.bundle.gen_params == b.bundle.gen_params
            && a.bundle.disc_params == b.bundle.disc_params;
        Smoke {
            _dir: dir,
            base,
            rows: corpus.rows,
            reports: a.reports,
            runs_identical,
            stores_identical,
            bundle: a.bundle,
        }
    })
}

// --------------------------------------------------------------------------
// 1. Loss-oracle equivalence

#[test]
fn c01_loss_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut tensors_checked = 0usize;
    let tol = 1e-6;

    // adversarial generator loss vs an elementwise loop
    for _ in 0..40 {
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..8);
        let map = Tensor::randn(&[rows, cols], 1.5, &mut rng);
        let mut g = Graph::new();
        let v = g.constant(map.clone());
        let (t, _) = adv_generator_loss(&mut g, &[vec![v]], BatchReduction::Mean).unwrap();
        let oracle: f64 = map.data().iter().map(|s| (1.0 - s) * (1.0 - s)).sum();
        assert!(rel_err(g.value(t).item(), oracle) < tol);
        tensors_checked += 1;
    }

    // discriminator loss vs an elementwise loop
    for _ in 0..15 {
        let shape = [rng.gen_range(1..5), rng.gen_range(1..7)];
        let real = Tensor::randn(&shape, 1.5, &mut rng);
        let fake = Tensor::randn(&shape, 1.5, &mut rng);
        let mut g = Graph::new();
        let rv = g.constant(real.clone());
        let fv = g.constant(fake.clone());
        let (t, _) =
            discriminator_loss(&mut g, &[vec![rv]], &[vec![fv]], BatchReduction::Mean).unwrap();
        let oracle: f64 = real.data().iter().map(|s| (1.0 - s) * (1.0 - s)).sum::<f64>()
            + fake.data().iter().map(|s| s * s).sum::<f64>();
        assert!(rel_err(g.value(t).item(), oracle) < tol);
        tensors_checked += 2;
    }

    // feature matching vs a layer loop
    for _ in 0..10 {
        let n_layers = rng.gen_range(1..4);
        let shapes: Vec<Vec<usize>> = (0..n_layers)
            .map(|_| vec![rng.gen_range(1..4), rng.gen_range(1..6)])
            .collect();
        let rt: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
        let ft: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
        let mut g = Graph::new();
        let rv: Vec<Var> = rt.iter().map(|t| g.constant(t.clone())).collect();
        let fv: Vec<Var> = ft.iter().map(|t| g.constant(t.clone())).collect();
        let (t, _) =
            feature_matching_loss(&mut g, &[vec![rv]], &[vec![fv]], BatchReduction::Mean).unwrap();
        let mut oracle = 0.0;
        for (a, b) in rt.iter().zip(&ft) {
            let m = a.numel() as f64;
            oracle +=
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / m;
        }
        assert!(rel_err(g.value(t).item(), oracle) < tol);
        tensors_checked += 2 * n_layers;
    }

    // mel reconstruction vs an independent mel + |.| sum
    let analyzer = Arc::new(MelAnalyzer::new(MelConfig::default()));
    for _ in 0..5 {
        let n = 2048;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let mut g = Graph::new();
        let yv = g.constant(Tensor::from_vec(&[n], y.clone()));
        let l = recon_loss_on(&mut g, &x, yv, &analyzer).unwrap();
        let ma = analyzer.log_mel(&x).unwrap();
        let mb = analyzer.log_mel(&y).unwrap();
        let oracle: f64 = ma.data().iter().zip(mb.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(rel_err(g.value(l).item(), oracle) < tol);
        tensors_checked += 2;
    }
    assert!(tensors_checked >= 100, "only {tensors_checked} tensors checked");

    // weighted generator/discriminator totals reconstruct exactly from components
    let w = LossWeights::default();
    assert_eq!((w.lambda_fm, w.lambda_r, w.lambda_ser), (2.0, 45.0, 1.0));
    for _ in 0..50 {
        let j = 9;
        let c = LossComponents {
            adv_g_per: (0..j).map(|_| rng.gen_range(0.0..4.0)).collect(),
            fm_per: (0..j).map(|_| rng.gen_range(0.0..4.0)).collect(),
            disc_per: (0..j).map(|_| rng.gen_range(0.0..4.0)).collect(),
            recon: rng.gen_range(0.0..100.0),
            ser: Some(rng.gen_range(0.0..2.0)),
        };
        let report = total_losses(&c, &w, 0).unwrap();
        // identical accumulation order must be bit-exact
        let mut expect_g = c.adv_g_per[0] + w.lambda_fm * c.fm_per[0];
        for i in 1..j {
            expect_g += c.adv_g_per[i] + w.lambda_fm * c.fm_per[i];
        }
        expect_g += w.lambda_r * c.recon;
        expect_g += w.lambda_ser * c.ser.unwrap();
        assert_eq!(report.total_g, expect_g);
        let mut expect_d = c.disc_per[0];
        for i in 1..j {
            expect_d += c.disc_per[i];
        }
        assert_eq!(report.total_d, expect_d);
    }
    let fixed = LossComponents {
        adv_g_per: vec![1.0; 9],
        fm_per: vec![0.0; 9],
        disc_per: vec![0.0; 9],
        recon: 1.0,
        ser: Some(1.0),
    };
    assert_eq!(total_losses(&fixed, &w, 0).unwrap().total_g, 55.0);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "acceptance criterion 1: PASS: {tensors_checked} tensors matched brute-force oracles within 1e-6; totals reconstruct exactly ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 2. CCC correctness

#[test]
fn c02_ccc_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..50 {
        let n = rng.gen_range(2..40);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert!((ccc(&v, &v).unwrap() - 1.0).abs() < 1e-9);
    }
    assert!((ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-9);

    let pearson = |x: &[f64], y: &[f64]| -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            cov += (a - mx) * (b - my);
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
        }
        if vx == 0.0 || vy == 0.0 {
            0.0
        } else {
            cov / (vx * vy).sqrt()
        }
    };
    for _ in 0..1000 {
        let n = rng.gen_range(2..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let ab = ccc(&x, &y).unwrap();
        let ba = ccc(&y, &x).unwrap();
        assert!((ab - ba).abs() < 1e-12, "asymmetric: {ab} vs {ba}");
        assert!(ab.abs() <= pearson(&x, &y).abs() + 1e-9);
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}");
    println!(
        "acceptance criterion 2: PASS: identity, antithetic, symmetry and |CCC| <= |Pearson| over 1000 pairs ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 3. Gradient checks

fn check_leaf_grads(
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    coords_per_input: usize,
    label: &str,
) {
    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let mut grads = g.backward(loss);
    let mut pick = ChaCha8Rng::seed_from_u64(0xfd);
    for (i, v) in vars.iter().enumerate() {
        let gt = grads
            .take(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let n = inputs[i].numel();
        for _ in 0..coords_per_input.min(n) {
            let coord = pick.gen_range(0..n);
            let fd = central_diff(&eval, inputs, i, coord, 1e-6);
            let ad = gt.data()[coord];
            assert!(
                rel_err(ad, fd) < 1e-3 || (ad.abs() < 1e-9 && fd.abs() < 1e-6),
                "{label}: input {i} coord {coord}: ad={ad} fd={fd}"
            );
        }
    }
}

#[test]
fn c03_gradient_checks() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // adversarial (generator side)
    let map = Tensor::randn(&[3, 5], 1.0, &mut rng);
    check_leaf_grads(
        &|g, v| {
            let (t, _) = adv_generator_loss(g, &[vec![v[0]]], BatchReduction::Mean).unwrap();
            t
        },
        &[map],
        15,
        "adv_generator_loss",
    );

    // discriminator
    let real = Tensor::randn(&[2, 6], 1.0, &mut rng);
    let fake = Tensor::randn(&[2, 6], 1.0, &mut rng);
    check_leaf_grads(
        &|g, v| {
            let (t, _) =
                discriminator_loss(g, &[vec![v[0]]], &[vec![v[1]]], BatchReduction::Mean).unwrap();
            t
        },
        &[real, fake],
        12,
        "discriminator_loss",
    );

    // feature matching
    let ra = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let rb = Tensor::randn(&[6], 1.0, &mut rng);
    let fa = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let fb = Tensor::randn(&[6], 1.0, &mut rng);
    check_leaf_grads(
        &|g, v| {
            let (t, _) = feature_matching_loss(
                g,
                &[vec![vec![v[0], v[1]]]],
                &[vec![vec![v[2], v[3]]]],
                BatchReduction::Mean,
            )
            .unwrap();
            t
        },
        &[ra, rb, fa, fb],
        8,
        "feature_matching_loss",
    );

    // mel reconstruction w.r.t. the generated waveform
    let x_ref: Vec<f64> = (0..2048).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let y0 = Tensor::from_vec(&[2048], (0..2048).map(|_| rng.gen_range(-0.8..0.8)).collect());
    let analyzer = Arc::new(MelAnalyzer::new(MelConfig::default()));
    let x_for_build = x_ref.clone();
    check_leaf_grads(
        &move |g, v| recon_loss_on(g, &x_for_build, v[0], &analyzer).unwrap(),
        &[y0],
        10,
        "recon_loss",
    );

    // SER loss w.r.t. the generated batch
    let ser = MockSerModel::new(5, 16_000);
    let w1 = Tensor::from_vec(&[1024], (0..1024).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let w2 = Tensor::from_vec(&[1024], (0..1024).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let store = ParamStore::new();
    check_leaf_grads(
        &move |g, v| {
            let mut ctx = GraphCtx::new(g, &store, false);
            ser_loss(&mut ctx, &[2.0, 6.0], &[v[0], v[1]], &ser, 16_000).unwrap()
        },
        &[w1, w2],
        8,
        "ser_loss",
    );

    // emotion embedder parameters
    {
        let mut store = ParamStore::new();
        emotion::init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(7));
        let names = [emotion::PARAM_W1, emotion::PARAM_B1, emotion::PARAM_W2, emotion::PARAM_B2];
        let probe = Tensor::randn(&[128], 1.0, &mut rng);
        let inputs: Vec<Tensor> = names.iter().map(|n| store.get(n).clone()).collect();
        let probe_eval = probe.clone();
        let eval = move |ins: &[Tensor]| -> f64 {
            let mut s = ParamStore::new();
            for (n, t) in names.iter().zip(ins) {
                s.insert(*n, t.clone());
            }
            emovox_core::embed_emotion(3.7, &s)
                .unwrap()
                .vector
                .data()
                .iter()
                .zip(probe_eval.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut g = Graph::new();
        let mut ctx = GraphCtx::new(&mut g, &store, true);
        let z = emotion::forward(&mut ctx, 3.7).unwrap();
        let touched = ctx.touched_params().clone();
        let pv = g.constant(probe);
        let obj = g.dot(z, pv);
        let mut grads = g.backward(obj);
        let mut pick = ChaCha8Rng::seed_from_u64(0xce);
        for (i, name) in names.iter().enumerate() {
            let gt = grads.take(touched[*name]).unwrap();
            for _ in 0..8.min(inputs[i].numel()) {
                let coord = pick.gen_range(0..inputs[i].numel());
                let fd = central_diff(&eval, &inputs, i, coord, 1e-6);
                let ad = gt.data()[coord];
                assert!(
                    rel_err(ad, fd) < 1e-3 || (ad.abs() < 1e-9 && fd.abs() < 1e-6),
                    "emotion {name}[{coord}]: ad={ad} fd={fd}"
                );
            }
        }
    }

    // generator: mean output w.r.t. probe weights on the tiny preset
    {
        let gen = Generator::new(GeneratorConfig::tiny()).unwrap();
        let mut store = ParamStore::new();
        gen.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(8));
        let cond = Tensor::randn(&[4, gen.config().cond_width()], 0.5, &mut rng);
        let cond_eval = cond.clone();
        let gen_cfg = gen.config().clone();
        let mut g = Graph::new();
        let mut ctx = GraphCtx::new(&mut g, &store, true);
        let cv = ctx.constant(cond.clone());
        let wave = gen.forward(&mut ctx, &cv).unwrap();
        let touched = ctx.touched_params().clone();
        let obj = g.mean_all(wave);
        let mut grads = g.backward(obj);
        let mut pick = ChaCha8Rng::seed_from_u64(0xab);
        for probe_name in ["g.pre.w", "g.up1.w", "g.res2.0.a.w", "g.post.w"] {
            let base = store.get(probe_name).clone();
            let gt = grads.take(touched[probe_name]).unwrap();
            for _ in 0..4 {
                let coord = pick.gen_range(0..base.numel());
                let eval_store = store.clone();
                let eval = |delta: f64| -> f64 {
                    let mut s = eval_store.clone();
                    s.get_mut(probe_name).data_mut()[coord] += delta;
                    let gen = Generator::new(gen_cfg.clone()).unwrap();
                    let mut ctx = emovox_core::net::PlainCtx::new(&s);
                    let out = gen.forward(&mut ctx, &cond_eval).unwrap();
                    out.data().iter().sum::<f64>() / out.numel() as f64
                };
                let eps = 1e-5;
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let ad = gt.data()[coord];
                assert!(
                    rel_err(ad, fd) < 1e-3 || (ad.abs() < 1e-9 && fd.abs() < 1e-6),
                    "generator {probe_name}[{coord}]: ad={ad} fd={fd}"
                );
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "acceptance criterion 3: PASS: all losses, the emotion embedder, and generator probe weights match central differences at 1e-3 ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 4. Shape laws

#[test]
fn c04_shape_laws() {
    let started = Instant::now();
    let gen = Generator::new(GeneratorConfig::tiny()).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    gen.init_params(&mut store, &mut rng);
    let product: usize = gen.config().upsample_factors.iter().product();
    assert_eq!(product, 320);
    for t_prime in 1..=200usize {
        let cond = emovox_core::vocoder::ConditioningTensor {
            frames: Tensor::randn(&[t_prime, gen.config().cond_width()], 0.3, &mut rng),
            frame_rate: 50,
        };
        let out = emovox_core::generate(&cond, &store, gen.config()).unwrap();
        assert_eq!(out.len(), t_prime * product, "T'={t_prime}");
    }

    let bank = DiscriminatorBank::new(DiscriminatorConfig::tiny()).unwrap();
    assert_eq!(bank.sub_count(), 9);
    assert_eq!(bank.config().periods, vec![2, 3, 4, 5, 7, 11]);
    assert_eq!(bank.config().scales, vec![1, 2, 4]);
    let mut dstore = ParamStore::new();
    bank.init_params(&mut dstore, &mut rng);
    let wave = Tensor::randn(&[1600], 0.3, &mut rng);
    let mut ctx = emovox_core::net::PlainCtx::new(&dstore);
    let outs = bank.forward_wave(&mut ctx, &wave);
    let labels: Vec<&str> = outs.iter().map(|o| o.label.as_str()).collect();
    assert_eq!(labels, ["p2", "p3", "p4", "p5", "p7", "p11", "s1", "s2", "s4"]);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "acceptance criterion 4: PASS: output length = T' x 320 for T' in 1..=200; bank is 6 periods [2,3,4,5,7,11] + 3 scales [1,2,4] ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 5. Quantizer oracle

#[test]
fn c05_quantizer_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for &k in &[10usize, 100] {
        let dim = 8;
        let codebook = UnitCodebook::new(Tensor::randn(&[k, dim], 1.0, &mut rng)).unwrap();
        let frames = Tensor::randn(&[1000, dim], 2.0, &mut rng);
        let feats = ContentFeatures::new(frames.clone(), 50).unwrap();
        let got = quantize(&feats, &codebook).unwrap();
        for i in 0..1000 {
            let row = frames.row(i);
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d: f64 = row
                    .iter()
                    .zip(codebook.centroids().row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c as u32;
                }
            }
            assert_eq!(got.units[i], best, "K={k} frame {i}");
        }
    }

    // constructed equidistant ties break toward the lowest index
    let cb = UnitCodebook::new(Tensor::from_vec(&[4, 1], vec![-3.0, -1.0, 1.0, 3.0])).unwrap();
    let feats = ContentFeatures::new(Tensor::from_vec(&[3, 1], vec![-2.0, 0.0, 2.0]), 50).unwrap();
    assert_eq!(quantize(&feats, &cb).unwrap().units, vec![0, 1, 2]);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "acceptance criterion 5: PASS: quantizer equals exhaustive scan on 1000 frames at K=10 and K=100; ties go to the lowest index ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 6. Hermetic end-to-end smoke

#[test]
fn c06_hermetic_smoke() {
    let started = Instant::now();
    let s = smoke();
    assert_eq!(s.reports.len(), 500);
    let first = s.reports.first().unwrap().recon;
    let last = s.reports.last().unwrap().recon;
    assert!(
        last <= 0.5 * first,
        "recon only moved from {first:.1} to {last:.1}"
    );
    assert!(s.runs_identical, "two seeded runs produced different loss trajectories");
    assert!(s.stores_identical, "two seeded runs produced different parameters");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");
    println!(
        "acceptance criterion 6: PASS: 500 steps cut recon from {first:.1} to {last:.1} ({:.0} %); two seeded executions bit-identical ({elapsed:?})",
        100.0 * (1.0 - last / first)
    );
}

// --------------------------------------------------------------------------
// 7. Conditioning sensitivity

#[test]
fn c07_conditioning_sensitivity() {
    let s = smoke();
    let converter = Converter::from_bundle(&s.bundle).unwrap();
    let input = load_audio(&s.base.join(&s.rows[0].audio_path), 16_000).unwrap();
    let lo = converter.convert_detailed(&input, 1.0).unwrap();
    let hi = converter.convert_detailed(&input, 7.0).unwrap();
    assert_eq!(lo.units.units, hi.units.units, "unit sequences must be bit-identical");
    assert_eq!(lo.speaker.vector, hi.speaker.vector, "speaker vectors must be bit-identical");
    let l2: f64 = lo
        .audio
        .samples
        .iter()
        .zip(&hi.audio.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    assert!(l2 > 0.0, "targets 1 and 7 synthesized identical audio");
    println!(
        "acceptance criterion 7: PASS: targets 1 vs 7: waveform L2 distance {l2:.3e} with identical units and speaker vector"
    );
}

// --------------------------------------------------------------------------
// 8. Freeze contract

#[test]
fn c08_freeze_contract() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_toy_corpus(dir.path(), 3, 0, 808).unwrap();
    let cfg = TrainConfig {
        steps: 100,
        segment_seconds: 0.25,
        ..TrainConfig::toy_preset(808)
    };
    let mut trainer = Trainer::new(cfg, &corpus.rows, dir.path()).unwrap();
    let before = trainer.backend_digests();
    for _ in 0..100 {
        trainer.step_once().unwrap();
    }
    let after = trainer.backend_digests();
    assert_eq!(before, after, "a frozen backend changed during training");
    let elapsed = started.elapsed();
    println!(
        "acceptance criterion 8: PASS: content/speaker/SER digests bit-identical across 100 steps ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 9. Checkpoint round-trip and resume

#[test]
fn c09_checkpoint_roundtrip_and_resume() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_toy_corpus(dir.path(), 3, 0, 909).unwrap();
    let cfg = TrainConfig {
        steps: 12,
        segment_seconds: 0.25,
        ..TrainConfig::toy_preset(909)
    };

    // byte-identical save -> load -> save
    let full = train(cfg.clone(), &corpus.rows, dir.path(), None).unwrap();
    let d1 = dir.path().join("ck1");
    let d2 = dir.path().join("ck2");
    full.bundle.save(&d1).unwrap();
    CheckpointBundle::load(&d1).unwrap().save(&d2).unwrap();
    assert_eq!(dir_digest(&d1).unwrap(), dir_digest(&d2).unwrap());

    // resumed training matches the uninterrupted trajectory
    let mut half_cfg = cfg.clone();
    half_cfg.steps = 6;
    let half = train(half_cfg, &corpus.rows, dir.path(), None).unwrap();
    let resumed = train_with_log(half.bundle, &corpus.rows, dir.path(), None, Some(12)).unwrap();
    assert_eq!(resumed.reports.len(), 6);
    assert_eq!(
        resumed.reports.as_slice(),
        &full.reports[6..],
        "resumed losses diverged from the uninterrupted run"
    );
    assert_eq!(resumed.bundle.gen_params, full.bundle.gen_params);
    assert_eq!(resumed.bundle.disc_params, full.bundle.disc_params);

    let elapsed = started.elapsed();
    println!(
        "acceptance criterion 9: PASS: checkpoint bytes stable under reload; 6+6 resumed steps equal the 12-step run bitwise ({elapsed:?})"
    );
}

// --------------------------------------------------------------------------
// 10. Evaluation integrity

#[test]
fn c10_evaluation_integrity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);

    // sec_error vs brute force on 1000 random pairs
    for _ in 0..1000 {
        let n = rng.gen_range(1..20);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..7.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..7.0)).collect();
        let (mse, mae) = sec_error(&t, &p).unwrap();
        let (mut bm, mut ba) = (0.0, 0.0);
        for i in 0..n {
            bm += (t[i] - p[i]) * (t[i] - p[i]);
            ba += (t[i] - p[i]).abs();
        }
        assert!((mse - bm / n as f64).abs() < 1e-9);
        assert!((mae - ba / n as f64).abs() < 1e-9);
    }

    // class-wise counts always sum to the row total
    for _ in 0..50 {
        let n = rng.gen_range(1..300);
        let rows: Vec<EvalRow> = (0..n)
            .map(|i| {
                let target: f64 = rng.gen_range(1.0..7.0);
                let pred: f64 = rng.gen_range(1.0..7.0);
                EvalRow {
                    id: format!("r{i}"),
                    target_arousal: target,
                    ser_prediction: pred,
                    squared_error: (target - pred) * (target - pred),
                    abs_error: (target - pred).abs(),
                    mos: None,
                }
            })
            .collect();
        let table = classwise_report(&rows);
        assert_eq!(table.values().map(|a| a.count).sum::<usize>(), n);
    }

    // identical-distribution simulation: mean one-tailed p in [0.4, 0.6]
    let mut ps = Vec::new();
    for _ in 0..60 {
        let a: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = significance(&a, &b).unwrap();
        assert!(s.p_value > 0.0 && s.p_value <= 1.0);
        ps.push(s.p_value);
    }
    let mean_p = ps.iter().sum::<f64>() / ps.len() as f64;
    assert!((0.4..=0.6).contains(&mean_p), "mean p = {mean_p}");

    // report + figures on the smoke run's outputs
    let s = smoke();
    let converter = Converter::from_bundle(&s.bundle).unwrap();
    let cfg = &s.bundle.meta.config;
    let ser = build_ser(&cfg.backends.ser, cfg.sample_rate).unwrap();
    let mos = build_mos(&MosBackendConfig::Mock, cfg.sample_rate).unwrap();
    let eval_rows: Vec<ManifestRow> = s.rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
    let report = evaluate(
        &eval_rows,
        &s.base,
        &EvalTargets::List((1..=7).map(f64::from).collect()),
        &converter,
        &*ser,
        Some(&*mos),
    )
    .unwrap();
    report.validate().unwrap();
    assert_eq!(report.rows.len(), eval_rows.len() * 7);
    let report_dir = s.base.join("acceptance_report");
    report.save(&report_dir).unwrap();
    assert!(report_dir.join("summary.json").exists());

    let input = load_audio(&s.base.join(&s.rows[0].audio_path), 16_000).unwrap();
    let lo = converter.convert(&input, 1.0).unwrap();
    let hi = converter.convert(&input, 7.0).unwrap();
    let figs = emit_figures(&input, &[(1.0, lo), (7.0, hi)], &s.base.join("acceptance_figs")).unwrap();
    assert_eq!(figs.files.len(), 5);
    let by_class: BTreeMap<u8, usize> = report.classwise.iter().map(|(k, v)| (*k, v.count)).collect();
    let elapsed = started.elapsed();
    println!(
        "acceptance criterion 10: PASS: sec_error brute-force match, class counts {by_class:?} sum to {}, mean identical-dist p {mean_p:.3}, report + figures emitted ({elapsed:?})",
        report.rows.len()
    );
}
