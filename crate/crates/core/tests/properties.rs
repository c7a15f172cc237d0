//! Property tests over the crate's stated invariants.

use flapinv::asl::{AslConfig, AslState, SkipMode};
use flapinv::data::{align, make_windows, AlignConfig, NormMethod, Normalizer, WindowSpec};
use flapinv::eval::{aggregate, AggMode};
use flapinv::fft::{irfft, rfft};
use flapinv::nn::Mode;
use flapinv::rng::Rng;
use flapinv::seq2seq::{gru_cell, Attention, GruCellParams};
use flapinv::synth::stroke_profile;
use flapinv::tensor::Tensor;
use proptest::prelude::*;

fn signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut x = vec![0.0; len];
    rng.fill_uniform(&mut x, -1.0, 1.0);
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Round trip within 1e-10 of the signal's magnitude for every
    /// power-of-two length in range.
    #[test]
    fn fft_round_trip(exp in 3usize..=12, seed in 0u64..1000) {
        let h = 1usize << exp;
        let x = signal(h, seed);
        let back = irfft(&rfft(&x).unwrap(), h).unwrap();
        let amp = x.iter().fold(1e-30f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() < 1e-10 * amp);
        }
    }

    /// Parseval: time energy equals duplication-weighted spectral energy.
    #[test]
    fn fft_parseval(exp in 3usize..=11, seed in 0u64..1000) {
        let h = 1usize << exp;
        let x = signal(h, seed);
        let spec = rfft(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let mut freq = spec[0].norm_sqr() + spec[h / 2].norm_sqr();
        for bin in &spec[1..h / 2] {
            freq += 2.0 * bin.norm_sqr();
        }
        freq /= h as f64;
        prop_assert!((time - freq).abs() / time.max(1e-30) < 1e-9);
    }

    /// apply then invert is the identity for non-degenerate data.
    #[test]
    fn normalizer_round_trip(
        rows in 4usize..80,
        cols in 1usize..5,
        seed in 0u64..1000,
        zscore in any::<bool>(),
        global in any::<bool>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Tensor::rand_uniform(&[rows, cols], 3.0, &mut rng);
        let method = if zscore { NormMethod::Zscore } else { NormMethod::Minmax };
        let norm = Normalizer::fit(method, global, &[&x]).unwrap();
        let (y, stats) = norm.apply(&x);
        let back = norm.invert_with(&y, &stats);
        prop_assert!(back.sub(&x).unwrap().max_abs() < 1e-10);
    }

    /// |windows| = floor((T - feature_win)/stride) + 1 whenever T >= feature_win.
    #[test]
    fn window_count(
        t_extra in 0usize..200,
        feature_win in 2usize..64,
        stride in 1usize..7,
        seed in 0u64..1000,
    ) {
        let t_total = feature_win + t_extra;
        let mut rng = Rng::new(seed);
        let forces = Tensor::rand_uniform(&[t_total, 2], 1.0, &mut rng);
        let kin = Tensor::rand_uniform(&[t_total, 3], 1.0, &mut rng);
        let spec = WindowSpec { feature_win, target_win: 1, intersect: 1, stride };
        let windows = make_windows(&forces, &kin, &spec);
        prop_assert_eq!(windows.len(), (t_total - feature_win) / stride + 1);
    }

    /// Alignment is shift-exact on noiseless synthetic steps for any shift
    /// within the series bounds.
    #[test]
    fn alignment_recovers_any_shift(
        base in 30usize..80,
        shift in 0usize..60,
    ) {
        let t_total = 300;
        let step = |onset: usize, cols: usize| {
            let mut x = Tensor::zeros(&[t_total, cols]);
            for t in onset..t_total {
                for c in 0..cols {
                    x.row_mut(t)[c] = 1.0;
                }
            }
            x
        };
        let f = step(base, 2);
        let k = step(base + shift, 3);
        let ev = align(&f, &k, 100.0, "p", &AlignConfig::default()).unwrap();
        let f_edge = (0..ev.len()).find(|&t| ev.forces.row(t)[0] > 0.5).unwrap();
        let k_edge = (0..ev.len()).find(|&t| ev.kinematics.row(t)[0] > 0.5).unwrap();
        prop_assert_eq!(f_edge, k_edge);
    }

    /// GRU state stays within max(|h|, 1) for arbitrary weights and inputs.
    #[test]
    fn gru_state_bounded(seed in 0u64..500, steps in 1usize..30) {
        let mut rng = Rng::new(seed);
        let cell = GruCellParams::new(2, 5, &mut rng);
        let mut h: Vec<f64> = vec![0.0; 5];
        for _ in 0..steps {
            let mut x = vec![0.0; 2];
            rng.fill_uniform(&mut x, -5.0, 5.0);
            let bound = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            h = gru_cell(&x, &h, &cell).unwrap();
            let new_max = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(new_max <= bound + 1e-12);
        }
    }

    /// Attention weights are non-negative and sum to 1 per head.
    #[test]
    fn attention_weights_normalized(seed in 0u64..500, t_len in 1usize..20, heads in 1usize..4) {
        let mut rng = Rng::new(seed);
        let attn = Attention::new(3, 4, heads, &mut rng);
        let enc = Tensor::rand_uniform(&[t_len, 4], 2.0, &mut rng);
        let mut q = vec![0.0; 3];
        rng.fill_uniform(&mut q, -2.0, 2.0);
        let (_, w, _) = attn.forward(&q, &enc).unwrap();
        for hi in 0..heads {
            let row = w.row(hi);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    /// The stroke profile is odd in t and bounded by half the amplitude.
    #[test]
    fn stroke_odd_and_bounded(
        f in 1.0f64..15.0,
        amp in 0.3f64..1.2,
        k in 0.0f64..0.95,
        t in -0.5f64..0.5,
    ) {
        let k = k.min(0.99);
        let pos = stroke_profile(t, f, amp, k).unwrap();
        let neg = stroke_profile(-t, f, amp, k).unwrap();
        prop_assert!((pos + neg).abs() < 1e-12);
        prop_assert!(pos.abs() <= amp / 2.0 + 1e-12);
    }

    /// Median aggregation is invariant under permutation.
    #[test]
    fn median_permutation_invariant(mut values in prop::collection::vec(0.0f64..10.0, 1..20), seed in 0u64..100) {
        let reference = aggregate(&values, AggMode::Median).unwrap();
        Rng::new(seed).shuffle(&mut values);
        prop_assert_eq!(aggregate(&values, AggMode::Median).unwrap(), reference);
    }

    /// Spectral-layer gate weights live strictly inside (0, 1) and the
    /// output keeps the input shape.
    #[test]
    fn asl_output_shape_and_real(seed in 0u64..200) {
        let cfg = AslConfig {
            hidden_size: 6,
            sample_rate: 100.0,
            freq_threshold: 35.0,
            skip_mode: SkipMode::Add,
            ..AslConfig::default()
        };
        let mut rng = Rng::new(seed);
        let state = AslState::new(32, 2, &cfg, &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[32, 2], 1.0, &mut rng);
        let (y, _) = state.forward(&x, &cfg, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}
