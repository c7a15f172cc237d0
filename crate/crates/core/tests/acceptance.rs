//! Acceptance suite: one test per release criterion, each printing a
//! PASS line on success (run with `--nocapture` to see them).
//!
//! Criterion 7 needs the external 548-event dataset converted to the event
//! CSV format; point FLAPINV_OPENSOURCE_DATA at that directory to enable
//! it, otherwise it reports SKIP.

use flapinv::asl::{retained_bins, AslConfig, AslState, SkipMode};
use flapinv::checkpoint;
use flapinv::config::RunConfig;
use flapinv::data::{load_dataset, make_windows, split, Dataset, WindowSpec};
use flapinv::error::Result;
use flapinv::eval::{aggregate, evaluate, param_sweep, wilcoxon_signed_rank, AggMode};
use flapinv::fft::{irfft, rfft};
use flapinv::gradcheck::grad_check;
use flapinv::nn::{Linear, Mode};
use flapinv::rng::Rng;
use flapinv::seq2seq::{gru_cell, Attention, GruCellParams, Model, ModelClass, ModelConfig};
use flapinv::synth::{generate_dataset, QsParams, SynthConfig, SynthRanges};
use flapinv::tensor::Tensor;
use flapinv::train::{train, TrainSetup, TrainedModel};
use num_complex::Complex64;
use std::time::Instant;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// O(H^2) reference DFT over the half spectrum.
fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let h = x.len();
    (0..=h / 2)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / h as f64;
                acc += Complex64::new(ang.cos(), ang.sin()) * v;
            }
            acc
        })
        .collect()
}

/// O(H^2) inverse of the half spectrum with hermitian completion.
fn naive_idft(spec: &[Complex64], h: usize) -> Vec<f64> {
    (0..h)
        .map(|n| {
            let mut acc = spec[0].re;
            for (k, bin) in spec.iter().enumerate().skip(1) {
                let ang = 2.0 * std::f64::consts::PI * (k * n) as f64 / h as f64;
                let w = Complex64::new(ang.cos(), ang.sin());
                let term = bin * w;
                acc += if k == h / 2 { term.re } else { 2.0 * term.re };
            }
            acc / h as f64
        })
        .collect()
}

#[test]
fn criterion_01_fft_correctness() {
    let started = Instant::now();
    for &h in &[8usize, 64, 512] {
        let mut rng = Rng::new(h as u64 + 1);
        let mut x = vec![0.0; h];
        rng.fill_uniform(&mut x, -1.0, 1.0);
        let fast = rfft(&x).unwrap();
        let slow = naive_dft(&x);
        let scale = slow.iter().map(|c| c.norm()).fold(1e-30f64, f64::max);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).norm() / scale < 1e-9, "H={h}");
        }
        let back = irfft(&fast, h).unwrap();
        let amp = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10 * amp, "H={h} round trip");
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "criterion 1 took {elapsed:.2}s, budget 1s");
    println!("criterion 1 (FFT correctness, {elapsed:.2}s): PASS");
}

#[test]
fn criterion_02_asl_identity_and_low_pass() {
    // (a) Unit gates, full band, skip off: identity.
    let h = 64;
    let cfg_full = AslConfig {
        hidden_size: 8,
        sample_rate: 100.0,
        freq_threshold: 50.0,
        skip_mode: SkipMode::Off,
        per_freq_layer: false,
        ..AslConfig::default()
    };
    let mut rng = Rng::new(2);
    let mut state = AslState::new(h, 2, &cfg_full, &mut rng).unwrap();
    saturate_gates(&mut state);
    let x = Tensor::rand_uniform(&[h, 2], 1.0, &mut rng);
    let (y, _) = state.forward(&x, &cfg_full, Mode::Eval, &mut rng).unwrap();
    let diff = y.sub(&x).unwrap().max_abs();
    assert!(diff < 1e-9, "identity diff {diff}");

    // (b) 512 samples at 5 kHz with a 210 Hz cutoff: exactly 22 bins and a
    // direct DFT-truncation oracle match.
    let h = 512;
    assert_eq!(retained_bins(h, 5000.0, 210.0), 22);
    let cfg_lp = AslConfig {
        hidden_size: 8,
        sample_rate: 5000.0,
        freq_threshold: 210.0,
        skip_mode: SkipMode::Off,
        per_freq_layer: false,
        ..AslConfig::default()
    };
    let mut state = AslState::new(h, 1, &cfg_lp, &mut rng).unwrap();
    assert_eq!(state.n_bins(), 22);
    saturate_gates(&mut state);
    let mut raw = vec![0.0; h];
    Rng::new(77).fill_uniform(&mut raw, -1.0, 1.0);
    let x = Tensor::new(vec![h, 1], raw.clone()).unwrap();
    let (y, _) = state.forward(&x, &cfg_lp, Mode::Eval, &mut rng).unwrap();
    // Oracle: naive DFT, zero every bin from 22 up, naive inverse.
    let mut spec = naive_dft(&raw);
    for bin in spec.iter_mut().skip(22) {
        *bin = Complex64::new(0.0, 0.0);
    }
    let oracle = naive_idft(&spec, h);
    let scale = oracle.iter().fold(1e-30f64, |m, v| m.max(v.abs()));
    for t in 0..h {
        assert!(
            (y.data()[t] - oracle[t]).abs() / scale < 1e-9,
            "t={t}: {} vs {}",
            y.data()[t],
            oracle[t]
        );
    }
    println!("criterion 2 (spectral layer identity and low-pass): PASS");
}

/// Overrides the gate FC so every weight saturates to exactly 1.
fn saturate_gates(state: &mut AslState) {
    let fc2 = state.fc2.as_mut().expect("gate enabled");
    fc2.weight.value.fill(0.0);
    fc2.bias.value.fill(1000.0);
}

#[test]
fn criterion_03_gradient_integrity() {
    let started = Instant::now();
    let tol = 1e-4;

    // Fully connected layer.
    {
        let mut rng = Rng::new(31);
        let layer = Linear::new(5, 4, &mut rng);
        let x = Tensor::rand_uniform(&[1, 5], 1.0, &mut rng);
        let proj = Tensor::rand_uniform(&[1, 4], 1.0, &mut rng);
        let mut bw = layer.clone();
        let dx = bw.backward(&x, &proj).unwrap();
        let eval = layer.clone();
        let proj_d = proj.data().to_vec();
        let mut f = |xs: &[f64]| {
            let x = Tensor::new(vec![1, 5], xs.to_vec()).unwrap();
            dot(eval.forward(&x).unwrap().data(), &proj_d)
        };
        let err = grad_check(&mut f, x.data(), dx.data(), 1e-5);
        assert!(err < tol, "FC input grad rel err {err}");
        let wgrad = bw.weight.grad.data().to_vec();
        let w0 = layer.weight.value.data().to_vec();
        let mut fw = |ws: &[f64]| {
            let mut l = layer.clone();
            l.weight.value.data_mut().copy_from_slice(ws);
            dot(l.forward(&x).unwrap().data(), &proj_d)
        };
        let err = grad_check(&mut fw, &w0, &wgrad, 1e-5);
        assert!(err < tol, "FC weight grad rel err {err}");
    }

    // GRU cell over every parameter group.
    {
        let mut rng = Rng::new(32);
        let cell = GruCellParams::new(3, 4, &mut rng);
        let mut x = vec![0.0; 3];
        let mut h = vec![0.0; 4];
        let mut proj = vec![0.0; 4];
        rng.fill_uniform(&mut x, -1.0, 1.0);
        rng.fill_uniform(&mut h, -1.0, 1.0);
        rng.fill_uniform(&mut proj, -1.0, 1.0);
        let mut names = Vec::new();
        cell.visit("gru", &mut |name, p| {
            names.push((name, p.value.data().to_vec()))
        });
        for (name, point) in names {
            // Analytic gradient of <proj, gru(x, 0)> via the library's
            // sequence backward over a one-step sequence (forward_seq
            // starts from a zero state).
            let mut layer = flapinv::seq2seq::GruLayer { cell: cell.clone() };
            let xs = Tensor::new(vec![1, 3], x.clone()).unwrap();
            let (_, cache) = layer.forward_seq(&xs);
            let dhs = Tensor::new(vec![1, 4], proj.clone()).unwrap();
            layer.backward_seq(&cache, &dhs, &[0.0; 4]);
            let mut analytic = Vec::new();
            layer.cell.visit("gru", &mut |n, p| {
                if n == name {
                    analytic = p.grad.data().to_vec();
                }
            });
            let h_zero = vec![0.0; 4];
            let (x0, pr) = (x.clone(), proj.clone());
            let name_ref = name.clone();
            let base = cell.clone();
            let mut f = |ws: &[f64]| {
                let mut c = base.clone();
                c.visit_mut("gru", &mut |n, p| {
                    if n == name_ref {
                        p.value.data_mut().copy_from_slice(ws);
                    }
                });
                dot(&gru_cell(&x0, &h_zero, &c).unwrap(), &pr)
            };
            let err = grad_check(&mut f, &point, &analytic, 1e-5);
            assert!(err < tol, "{name} rel err {err}");
        }
    }

    // Attention: query, encoder outputs, and head parameters.
    {
        let mut rng = Rng::new(33);
        let attn = Attention::new(3, 4, 2, &mut rng);
        let enc = Tensor::rand_uniform(&[6, 4], 1.0, &mut rng);
        let mut query = vec![0.0; 3];
        rng.fill_uniform(&mut query, -1.0, 1.0);
        let mut proj = vec![0.0; 4];
        rng.fill_uniform(&mut proj, -1.0, 1.0);

        let mut bw = attn.clone();
        let (_, _, cache) = bw.forward(&query, &enc).unwrap();
        let mut denc = Tensor::zeros(&[6, 4]);
        let dquery = bw.backward(&cache, &enc, &proj, &mut denc).unwrap();

        let eval = attn.clone();
        let (enc_f, proj_f) = (enc.clone(), proj.clone());
        let mut fq = |qs: &[f64]| {
            let (ctx, _, _) = eval.forward(qs, &enc_f).unwrap();
            dot(&ctx, &proj_f)
        };
        let err = grad_check(&mut fq, &query, &dquery, 1e-5);
        assert!(err < tol, "attention query grad rel err {err}");

        let eval2 = attn.clone();
        let (q_f, proj_f2) = (query.clone(), proj.clone());
        let mut fe = |es: &[f64]| {
            let e = Tensor::new(vec![6, 4], es.to_vec()).unwrap();
            let (ctx, _, _) = eval2.forward(&q_f, &e).unwrap();
            dot(&ctx, &proj_f2)
        };
        let err = grad_check(&mut fe, enc.data(), denc.data(), 1e-5);
        assert!(err < tol, "attention enc grad rel err {err}");

        let head_grad = bw.heads[0].weight.grad.data().to_vec();
        let w0 = attn.heads[0].weight.value.data().to_vec();
        let base = attn.clone();
        let (q_f3, enc_f3, proj_f3) = (query.clone(), enc.clone(), proj.clone());
        let mut fh = |ws: &[f64]| {
            let mut a = base.clone();
            a.heads[0].weight.value.data_mut().copy_from_slice(ws);
            let (ctx, _, _) = a.forward(&q_f3, &enc_f3).unwrap();
            dot(&ctx, &proj_f3)
        };
        let err = grad_check(&mut fh, &w0, &head_grad, 1e-5);
        assert!(err < tol, "attention head grad rel err {err}");
    }

    // Spectral layer with all default flags (train mode, reseeded dropout).
    {
        let cfg = AslConfig {
            hidden_size: 8,
            sample_rate: 100.0,
            freq_threshold: 30.0,
            ..AslConfig::default()
        };
        let mut rng = Rng::new(34);
        let state = AslState::new(32, 2, &cfg, &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[32, 2], 1.0, &mut rng);
        let proj = Tensor::rand_uniform(&[32, 2], 1.0, &mut rng);
        let mut bw = state.clone();
        let mut r = Rng::new(4242);
        let (_, cache) = bw.forward(&x, &cfg, Mode::Train, &mut r).unwrap();
        let dx = bw.backward(&cfg, &cache, &proj).unwrap();
        let eval = state.clone();
        let proj_d = proj.clone();
        let mut f = |xs: &[f64]| {
            let x = Tensor::new(vec![32, 2], xs.to_vec()).unwrap();
            let mut r = Rng::new(4242);
            let (y, _) = eval.forward(&x, &cfg, Mode::Train, &mut r).unwrap();
            dot(y.data(), proj_d.data())
        };
        let err = grad_check(&mut f, x.data(), dx.data(), 1e-5);
        assert!(err < tol, "ASL input grad rel err {err}");
    }

    // Full tiny model, every parameter group.
    {
        let cfg = tiny_model_cfg();
        let mut rng = Rng::new(35);
        let model = Model::new(ModelClass::Seq2Seq, &cfg, &mut rng).unwrap();
        let window = Tensor::rand_uniform(&[16, 2], 1.0, &mut rng);
        let proj = Tensor::rand_uniform(&[1, 3], 1.0, &mut rng);
        let loss = |m: &Model, w: &Tensor| -> f64 {
            let mut r = Rng::new(555);
            let (y, _) = m.forward(w, &cfg, Mode::Train, &mut r).unwrap();
            dot(y.data(), proj.data())
        };
        let mut bw = model.clone();
        let mut r = Rng::new(555);
        let (_, cache) = bw.forward(&window, &cfg, Mode::Train, &mut r).unwrap();
        let dwindow = bw.backward(&cfg, &cache, &proj).unwrap();
        let eval = model.clone();
        let mut f = |xs: &[f64]| {
            let w = Tensor::new(vec![16, 2], xs.to_vec()).unwrap();
            loss(&eval, &w)
        };
        let err = grad_check(&mut f, window.data(), dwindow.data(), 1e-5);
        assert!(err < tol, "tiny model input grad rel err {err}");

        let mut grads = Vec::new();
        bw.visit_params(&mut |name, p| grads.push((name, p.grad.data().to_vec())));
        for (name, grad) in grads {
            let base = model.clone();
            let w_fixed = window.clone();
            let name_ref = name.clone();
            let mut fp = |ws: &[f64]| {
                let mut m = base.clone();
                m.visit_params_mut(&mut |n, p| {
                    if n == name_ref {
                        p.value.data_mut().copy_from_slice(ws);
                    }
                });
                loss(&m, &w_fixed)
            };
            let mut point = Vec::new();
            model.visit_params(&mut |n, p| {
                if n == name {
                    point = p.value.data().to_vec();
                }
            });
            let err = grad_check(&mut fp, &point, &grad, 1e-5);
            assert!(err < tol, "{name} rel err {err}");
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 3 took {elapsed:.1}s, budget 30s");
    println!("criterion 3 (gradient integrity, {elapsed:.1}s): PASS");
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        input_channels: 2,
        feature_win: 16,
        target_win: 1,
        enc_embedding_size: 3,
        enc_hidden_size: 4,
        enc_num_layers: 1,
        enc_bidirectional: false,
        dec_embedding_size: 3,
        dec_hidden_size: 4,
        dec_output_size: 3,
        attn_heads: 2,
        use_asl: true,
        asl: AslConfig {
            hidden_size: 5,
            sample_rate: 100.0,
            freq_threshold: 30.0,
            ..AslConfig::default()
        },
    }
}

#[test]
fn criterion_04_windowing_and_split_arithmetic() {
    let mut rng = Rng::new(4);
    let forces = Tensor::rand_uniform(&[550, 4], 1.0, &mut rng);
    let kin = Tensor::rand_uniform(&[550, 3], 1.0, &mut rng);
    let spec = WindowSpec {
        feature_win: 512,
        target_win: 1,
        intersect: 1,
        stride: 1,
    };
    assert_eq!(make_windows(&forces, &kin, &spec).len(), 39);

    for (n, expected) in [(153usize, (114, 15, 24)), (548, (411, 54, 83))] {
        let events: Vec<flapinv::data::Event> = (0..n)
            .map(|i| flapinv::data::Event {
                id: format!("e{i}"),
                sample_rate: 100.0,
                forces: Tensor::zeros(&[4, 1]),
                kinematics: Tensor::zeros(&[4, 3]),
            })
            .collect();
        let ds = Dataset::from_events(events).unwrap();
        let (a, b, c) = split(&ds, 0.75, 0.10, 3407).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), expected, "N={n}");
        // Deterministic under a fixed seed.
        let (a2, b2, c2) = split(&ds, 0.75, 0.10, 3407).unwrap();
        let ids = |d: &Dataset| d.events.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&a2));
        assert_eq!(ids(&b), ids(&b2));
        assert_eq!(ids(&c), ids(&c2));
    }
    println!("criterion 4 (windowing and split arithmetic): PASS");
}

/// The desk-scale synthetic benchmark: clean quasi-steady events.
fn benchmark_dataset() -> Dataset {
    generate_dataset(
        &SynthConfig {
            n_events: 64,
            seed: 3407,
            sample_rate: 500.0,
            ranges: SynthRanges {
                duration: (0.5, 0.5),
                ..SynthRanges::default()
            },
            ..SynthConfig::default()
        },
        &QsParams::default(),
    )
    .unwrap()
}

fn benchmark_run_config(seed: u64, use_asl: bool, class: &str) -> RunConfig {
    let mut run = RunConfig::default();
    for (k, v) in [
        ("feature_win", "128"),
        ("batch_size", "128"),
        ("n_epochs", "30"),
        ("model_args_enc_embedding_size", "8"),
        ("model_args_enc_hidden_size", "32"),
        ("model_args_dec_hidden_size", "32"),
        ("model_args_dec_embedding_size", "8"),
        ("model_args_asl_hidden_size", "32"),
        ("model_args_freq_threshold", "40"),
    ] {
        run.set(k, v).unwrap();
    }
    run.set("seed", &seed.to_string()).unwrap();
    run.set("model_args_use_asl", if use_asl { "true" } else { "false" })
        .unwrap();
    run.set("model_class_name", &format!("\"{class}\"")).unwrap();
    run
}

fn train_and_score(run: &RunConfig, data: &Dataset) -> Result<(TrainedModel, f64)> {
    let (train_ds, val_ds, test_ds) = split(data, run.train_percent, run.val_percent, run.seed)?;
    let setup = TrainSetup::from_run_config(run, data.m_f, data.sample_rate)?;
    let (trained, _) = train(&setup, &train_ds, &val_ds)?;
    let report = evaluate(&trained, &test_ds, &run.window_spec())?;
    Ok((trained, report.median))
}

#[test]
fn criterion_05_end_to_end_synthetic_inverse_mapping() {
    let started = Instant::now();
    let data = benchmark_dataset();

    let run_s2s = benchmark_run_config(3407, true, "Seq2Seq");
    let (_, s2s_median) = train_and_score(&run_s2s, &data).unwrap();

    let run_linear = benchmark_run_config(3407, true, "Linear");
    let (_, linear_median) = train_and_score(&run_linear, &data).unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 5 detail: Seq2Seq+ASL median {s2s_median:.4} rad, \
         Linear median {linear_median:.4} rad, ratio {:.3}, {elapsed:.0}s",
        s2s_median / linear_median
    );
    assert!(
        s2s_median <= 0.5 * linear_median,
        "Seq2Seq+ASL median {s2s_median} not <= 0.5 x Linear {linear_median}"
    );
    assert!(
        s2s_median <= 0.35,
        "absolute median {s2s_median} exceeds 0.35 rad"
    );
    assert!(elapsed <= 600.0, "took {elapsed:.0}s, budget 600s");
    println!("criterion 5 (end-to-end synthetic inverse mapping): PASS");
}

/// Ablation benchmark: adds mild white sensor noise plus a per-event
/// narrowband disturbance above the signal band.
fn ablation_dataset() -> Dataset {
    generate_dataset(
        &SynthConfig {
            n_events: 32,
            seed: 2024,
            sample_rate: 500.0,
            ranges: SynthRanges {
                duration: (0.4, 0.4),
                shape_k: (0.0, 0.7),
                ..SynthRanges::default()
            },
            noise_std: 5e-5,
            vibration_amp: 4e-4,
            ..SynthConfig::default()
        },
        &QsParams::default(),
    )
    .unwrap()
}

#[test]
fn criterion_06_ablation_direction() {
    let data = ablation_dataset();
    let seeds = [11u64, 22, 33, 44, 55];
    let mut with_asl = Vec::new();
    let mut without_asl = Vec::new();
    for &seed in &seeds {
        for use_asl in [true, false] {
            let mut run = benchmark_run_config(seed, use_asl, "Seq2Seq");
            run.set("n_epochs", "18").unwrap();
            run.set("patience", "18").unwrap();
            run.set("model_args_freq_threshold", "70").unwrap();
            run.set("model_args_per_freq_layer", "false").unwrap();
            let (_, median) = train_and_score(&run, &data).unwrap();
            if use_asl {
                with_asl.push(median);
            } else {
                without_asl.push(median);
            }
        }
    }
    let asl_median = aggregate(&with_asl, AggMode::Median).unwrap();
    let plain_median = aggregate(&without_asl, AggMode::Median).unwrap();
    let improvement = 100.0 * (1.0 - asl_median / plain_median);
    println!(
        "criterion 6 detail: per-seed MAE with ASL {with_asl:?}, without {without_asl:?}; \
         medians {asl_median:.4} vs {plain_median:.4} rad \
         (spectral layer changes median MAE by {improvement:+.1}%)"
    );
    assert!(
        asl_median <= 1.02 * plain_median,
        "ASL median {asl_median} worse than 1.02 x plain {plain_median}"
    );
    println!("criterion 6 (ablation direction): PASS");
}

#[test]
fn criterion_07_conditional_real_data_reproduction() {
    let Some(dir) = std::env::var_os("FLAPINV_OPENSOURCE_DATA") else {
        println!(
            "criterion 7 (real-data reproduction): SKIP \
             (set FLAPINV_OPENSOURCE_DATA to the converted 548-event dataset)"
        );
        return;
    };
    let started = Instant::now();
    let data = load_dataset(std::path::Path::new(&dir)).unwrap();
    assert_eq!(data.len(), 548, "expected the 548-event dataset");
    assert_eq!(data.m_f, 5, "expected 5 force/torque channels");

    // Published configuration for this dataset.
    let mut run = RunConfig::default();
    for (k, v) in [
        ("feature_win", "256"),
        ("model_args_enc_embedding_size", "30"),
        ("model_args_enc_hidden_size", "100"),
        ("model_args_dec_hidden_size", "100"),
        ("model_args_dec_embedding_size", "30"),
        ("model_args_freq_threshold", "200"),
        ("model_args_per_freq_layer", "false"),
    ] {
        run.set(k, v).unwrap();
    }
    let (_, median) = train_and_score(&run, &data).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion 7 detail: test median MAE {median:.4} rad in {elapsed:.0}s");
    assert!(median <= 0.20, "median {median} exceeds 0.20 rad");
    assert!(elapsed <= 3600.0, "took {elapsed:.0}s, budget 60 min");
    println!("criterion 7 (real-data reproduction): PASS");
}

#[test]
fn criterion_08_latency_scaling() {
    // Representative deployment family; parameters grow ~50k -> ~400k by
    // widening the encoder hidden size.
    let base = ModelConfig {
        input_channels: 4,
        feature_win: 256,
        dec_hidden_size: 64,
        dec_embedding_size: 10,
        asl: AslConfig {
            hidden_size: 64,
            ..AslConfig::default()
        },
        ..ModelConfig::default()
    };
    let sizes = [55usize, 90, 130, 180, 235, 310];
    let rows = param_sweep(&base, ModelClass::Seq2Seq, &sizes, 15, 5).unwrap();
    println!("criterion 8 detail: enc_hidden,params,median_ms,mad_ms");
    for row in &rows {
        println!(
            "  {},{},{:.3},{:.3}",
            row.enc_hidden_size, row.param_count, row.latency.median_ms, row.latency.mad_ms
        );
    }
    let small = rows.first().unwrap();
    let large = rows.last().unwrap();
    assert!(
        (40_000..=70_000).contains(&small.param_count),
        "smallest config should sit near 50k params, got {}",
        small.param_count
    );
    assert!(
        (320_000..=480_000).contains(&large.param_count),
        "largest config should sit near 400k params, got {}",
        large.param_count
    );
    let ratio = large.latency.median_ms / small.latency.median_ms;
    println!(
        "criterion 8 detail: latency {:.3} ms at {}k params vs {:.3} ms at {}k params, ratio {ratio:.2}",
        small.latency.median_ms,
        small.param_count / 1000,
        large.latency.median_ms,
        large.param_count / 1000
    );
    assert!(
        ratio <= 2.0,
        "median latency at ~400k params is {ratio:.2}x the ~50k latency (bound: 2x)"
    );
    println!("criterion 8 (latency scaling): PASS");
}

#[test]
fn criterion_09_wilcoxon_exactness() {
    // n = 3, all diffs positive: one-sided exact p = 1/8.
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.2, 1.1, 2.5]).unwrap();
    assert!(r.exact);
    assert!((r.p_one_sided - 0.125).abs() < 1e-12);

    // Randomized fixtures vs a literal sign-enumeration oracle, n <= 10.
    for n in 1..=10usize {
        for trial in 0..12u64 {
            let mut rng = Rng::new(900 + n as u64 * 31 + trial);
            let a: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            let (oracle_ge, oracle_le) = enumeration_oracle(&a, &b);
            assert!(
                (r.p_one_sided - oracle_ge).abs() < 1e-9,
                "n={n} trial={trial}: {} vs {oracle_ge}",
                r.p_one_sided
            );
            let expected_two = (2.0 * oracle_ge.min(oracle_le)).min(1.0);
            assert!((r.p_two_sided - expected_two).abs() < 1e-9);
        }
    }
    println!("criterion 9 (Wilcoxon exactness): PASS");
}

/// Independent oracle: rank by sorting, enumerate all sign assignments.
fn enumeration_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return (1.0, 1.0);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[idx[j + 1]].abs() == diffs[idx[i]].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = mid;
        }
        i = j + 1;
    }
    let observed: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut ge, mut le) = (0usize, 0usize);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| ranks[i])
            .sum();
        if w >= observed - 1e-12 {
            ge += 1;
        }
        if w <= observed + 1e-12 {
            le += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (ge as f64 / total, le as f64 / total)
}

#[test]
fn criterion_10_determinism_and_serialization() {
    let data = ablation_dataset();
    let mut run = benchmark_run_config(3407, true, "Seq2Seq");
    run.set("n_epochs", "4").unwrap();
    run.set("model_args_freq_threshold", "70").unwrap();

    // Identical seed and config: bitwise-identical loss trajectory.
    let (train_ds, val_ds, _) = split(&data, run.train_percent, run.val_percent, run.seed).unwrap();
    let setup = TrainSetup::from_run_config(&run, data.m_f, data.sample_rate).unwrap();
    let (trained_a, report_a) = train(&setup, &train_ds, &val_ds).unwrap();
    let (_, report_b) = train(&setup, &train_ds, &val_ds).unwrap();
    assert_eq!(report_a.epochs.len(), report_b.epochs.len());
    for (x, y) in report_a.epochs.iter().zip(report_b.epochs.iter()) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
    }

    // Checkpoint round trip preserves eval outputs within 1e-6 over 100
    // random windows.
    let dir = std::env::temp_dir().join(format!("flapinv_acc10_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    checkpoint::save(&path, &trained_a, &run).unwrap();
    let (loaded, run_loaded) = checkpoint::load(&path).unwrap();
    assert_eq!(run_loaded.seed, run.seed);
    let mut rng = Rng::new(123);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let w = Tensor::rand_uniform(&[128, 4], 1.0, &mut rng);
        let a = trained_a.model.predict(&w, &trained_a.model_cfg).unwrap();
        let b = loaded.model.predict(&w, &loaded.model_cfg).unwrap();
        worst = worst.max(a.sub(&b).unwrap().max_abs());
    }
    println!("criterion 10 detail: worst round-trip deviation {worst:.2e}");
    assert!(worst < 1e-6, "round-trip deviation {worst}");
    std::fs::remove_dir_all(&dir).unwrap();
    println!("criterion 10 (determinism and serialization): PASS");
}
