mod common;

use common::naive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use res_core::signal::{stft, NormStats, Role, TimeSignal, N_BINS};
use res_core::training::{
    fit_input_norm, infer_stream, loss_grad, loss_j, predict_frames, train, train_from, BlockSet, EmitFrame, InferConfig,
    LossConfig, TrainConfig, UtteranceSpectra, VarianceAxis, BLOCK_FRAMES,
};
use res_core::unet::{Tensor, UNetConfig, UNetWeights};
use res_core::Error;

fn random_block(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 30 * 161).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::from_vec(n, 1, 30, 161, data).unwrap()
}

#[test]
fn loss_matches_scalar_oracle() {
    for (seed, axis) in [(1, VarianceAxis::Global), (2, VarianceAxis::PerBin)] {
        let p = random_block(4, seed);
        let d = random_block(4, seed + 10);
        for alpha in [0.0, 0.5, 1.0] {
            let cfg = LossConfig { alpha, variance_axis: axis };
            let j = loss_j(&p, &d, &cfg).unwrap();
            let o = naive::loss(&p, &d, alpha, axis);
            assert!(((j - o) / o).abs() < 1e-10, "{axis:?} alpha {alpha}: {j} vs {o}");
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for axis in [VarianceAxis::Global, VarianceAxis::PerBin] {
        for alpha in [0.0, 0.5, 1.0] {
            let cfg = LossConfig { alpha, variance_axis: axis };
            let mut p = random_block(4, 3);
            let d = random_block(4, 4);
            let g = loss_grad(&p, &d, &cfg).unwrap();
            let h = 1e-4;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for k in (0..p.data.len()).step_by(7) {
                let orig = p.data[k];
                p.data[k] = orig + h;
                let plus = loss_j(&p, &d, &cfg).unwrap();
                p.data[k] = orig - h;
                let minus = loss_j(&p, &d, &cfg).unwrap();
                p.data[k] = orig;
                let fd = (plus - minus) / (2.0 * h);
                num += (fd - g.data[k]).powi(2);
                den += g.data[k].powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-6, "{axis:?} alpha {alpha}: relative error {rel}");
        }
    }
}

#[test]
fn loss_is_nonnegative_and_increasing_in_alpha() {
    let p = random_block(2, 5);
    let d = random_block(2, 6);
    let mut last = -1.0;
    for alpha in [0.0, 0.1, 0.5, 1.0, 2.0] {
        let j = loss_j(&p, &d, &LossConfig::with_alpha(alpha)).unwrap();
        assert!(j >= 0.0 && j > last);
        last = j;
    }
    let z = Tensor::<f64>::zeros(1, 1, 30, 161);
    assert_eq!(loss_j(&z, &z, &LossConfig::with_alpha(1.0)).unwrap(), 0.0);
}

/// Blocks where the target is a smooth pattern and the first input channel
/// carries it plus an "echo" given on the second channel.
fn synthetic_blocks(n: usize, seed: u64) -> BlockSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BlockSet::new();
    let len = BLOCK_FRAMES * N_BINS;
    for _ in 0..n {
        let (f1, f2, ph): (f64, f64, f64) = (rng.random_range(0.02..0.2), rng.random_range(0.05..0.3), rng.random_range(0.0..6.0));
        let mut input = vec![0.0f32; 2 * len];
        let mut target = vec![0.0f32; len];
        for t in 0..BLOCK_FRAMES {
            for b in 0..N_BINS {
                let k = t * N_BINS + b;
                let d = 0.4 * (0.5 + 0.5 * (f1 * b as f64 + ph).sin()) * (0.5 + 0.5 * (0.3 * t as f64).cos());
                let a = 0.3 * (0.5 + 0.5 * (f2 * (b + 2 * t) as f64).sin());
                target[k] = d as f32;
                input[k] = (d + a) as f32;
                input[len + k] = a as f32;
            }
        }
        set.push_block(&input, &target).unwrap();
    }
    set
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let cfg = UNetConfig::with_base_width(2);
    let w = UNetWeights::<f32>::init(&cfg, 1).unwrap();
    let data = synthetic_blocks(5, 1);
    let tc = TrainConfig { learning_rate: 0.0, epochs: 2, ..TrainConfig::default() };
    let out = train(&data, w.clone(), &LossConfig::default(), &tc, &mut ()).unwrap();
    assert_eq!(out.final_state.weights.params, w.params);
    assert_eq!(out.best_weights.params, w.params);
}

#[test]
fn same_seed_same_log_and_resume_matches() {
    let cfg = UNetConfig::with_base_width(2);
    let w = UNetWeights::<f32>::init(&cfg, 2).unwrap();
    let data = synthetic_blocks(9, 2);
    let loss = LossConfig::with_alpha(0.5);
    let tc = TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() };
    let a = train(&data, w.clone(), &loss, &tc, &mut ()).unwrap();
    let b = train(&data, w.clone(), &loss, &tc, &mut ()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 3 * 3);
    assert_eq!(a.final_state.weights, b.final_state.weights);

    let first = train(&data, w.clone(), &loss, &TrainConfig { epochs: 1, ..tc.clone() }, &mut ()).unwrap();
    let resumed = train_from(&data, first.final_state, &loss, &tc, &mut ()).unwrap();
    assert_eq!(resumed.final_state.weights, a.final_state.weights);
    assert_eq!(&a.log[3..], &resumed.log[..]);

    let other = train(&data, w, &loss, &TrainConfig { seed: 6, ..tc }, &mut ()).unwrap();
    assert_ne!(other.log, a.log);
}

#[test]
fn non_finite_input_aborts_with_batch_index() {
    let cfg = UNetConfig::with_base_width(2);
    let w = UNetWeights::<f32>::init(&cfg, 1).unwrap();
    let len = BLOCK_FRAMES * N_BINS;
    let mut data = BlockSet::new();
    data.push_block(&vec![f32::NAN; 2 * len], &vec![0.0; len]).unwrap();
    let err = train(&data, w, &LossConfig::default(), &TrainConfig::default(), &mut ()).unwrap_err();
    assert!(matches!(err, Error::NanLoss { epoch: 0, batch: 0 }), "{err}");
    assert!(err.to_string().contains("batch 0"));
}

#[test]
fn overfits_twenty_blocks() {
    let cfg = UNetConfig::default();
    let w = UNetWeights::<f32>::init(&cfg, 3).unwrap();
    let data = synthetic_blocks(20, 3);
    let tc = TrainConfig { epochs: 200, seed: 1, ..TrainConfig::default() };
    let out = train(&data, w, &LossConfig::default(), &tc, &mut ()).unwrap();
    let first = out.epoch_losses[0];
    let last = *out.epoch_losses.last().unwrap();
    eprintln!("epoch loss {first:.5} -> {last:.6}");
    assert!(last < 0.05 * first, "loss went from {first} to {last}");
    assert!(out.best_epoch >= 100);
}

fn noise_signal(len: usize, seed: u64, role: Role) -> TimeSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..len)
        .map(|i| {
            let env = 0.5 + 0.5 * (i as f64 * 2e-3).sin();
            0.2 * env * rng.random_range(-1.0..1.0)
        })
        .collect();
    TimeSignal::new(x, role).unwrap()
}

fn flat_stats() -> NormStats {
    NormStats { bin_min: vec![0.0; N_BINS], bin_range: vec![1.0; N_BINS] }
}

#[test]
fn window_count_and_output_length() {
    let cfg = UNetConfig::with_base_width(2);
    let w = UNetWeights::<f32>::init(&cfg, 1).unwrap();
    // 32 frames: (32 - 1) * 160 + 320 samples, plus a partial trailing frame.
    let len = 31 * 160 + 320 + 77;
    let e = noise_signal(len, 1, Role::AecError);
    let a = noise_signal(len, 2, Role::AecEstimate);
    for emit in [EmitFrame::Last, EmitFrame::Center] {
        let out = infer_stream(&e, &a, &w, &flat_stats(), &InferConfig { emit, ..InferConfig::default() }).unwrap();
        assert_eq!(out.windows, 3);
        assert_eq!(out.prediction.len(), len);
        assert_eq!(out.prediction.role(), Role::Prediction);
    }
    let short = noise_signal(28 * 160 + 320, 3, Role::AecError);
    let err = infer_stream(&short, &short, &w, &flat_stats(), &InferConfig::default()).unwrap_err();
    assert!(err.to_string().contains("zero-pad"), "{err}");
}

#[test]
fn emitted_frames_follow_the_window_rule() {
    // With windows_per_batch 1 vs many the frames must agree, and the first
    // 29 frames must come from the first window.
    let cfg = UNetConfig::with_base_width(2);
    let w = UNetWeights::<f32>::init(&cfg, 4).unwrap();
    let e = stft(&noise_signal(40 * 160 + 160, 5, Role::AecError)).unwrap().amplitudes;
    let a = stft(&noise_signal(40 * 160 + 160, 6, Role::AecEstimate)).unwrap().amplitudes;
    let stats = flat_stats();
    let (p1, n1) = predict_frames(&e, &a, &w, &stats, &InferConfig { windows_per_batch: 1, ..InferConfig::default() }).unwrap();
    let (p8, n8) = predict_frames(&e, &a, &w, &stats, &InferConfig { windows_per_batch: 8, ..InferConfig::default() }).unwrap();
    assert_eq!(n1, e.rows() - 29);
    assert_eq!(n1, n8);
    assert_eq!(p1, p8);
    let first = predict_frames(&e.slice_rows(0, 30), &a.slice_rows(0, 30), &w, &stats, &InferConfig::default()).unwrap().0;
    for t in 0..30 {
        assert_eq!(p1.row(t), first.row(t));
    }
}

#[test]
fn near_identity_network_reproduces_its_input() {
    // Train to map the error channel to itself, then run the full inference path.
    let e = noise_signal(16000 * 3, 7, Role::AecError);
    let a = noise_signal(16000 * 3, 8, Role::AecEstimate).scaled(0.5);
    let utt = UtteranceSpectra::new(&e, &a, Some(&e)).unwrap();
    let stats = fit_input_norm(std::slice::from_ref(&utt)).unwrap();
    let mut data = BlockSet::new();
    data.push_utterance(&utt, &stats).unwrap();
    let cfg = UNetConfig::with_base_width(4);
    let tc = TrainConfig { epochs: 150, learning_rate: 0.002, seed: 3, ..TrainConfig::default() };
    let out = train(&data, UNetWeights::init(&cfg, 5).unwrap(), &LossConfig::default(), &tc, &mut ()).unwrap();
    let residual = out.epoch_losses[out.best_epoch];

    let ic = InferConfig { gain_compensation: false, ..InferConfig::default() };
    let (pred, _) = predict_frames(&utt.error.amplitudes, &utt.estimate.amplitudes, &out.best_weights, &stats, &ic).unwrap();
    let target = res_core::signal::apply_norm(&utt.error.amplitudes, &stats).unwrap();
    let mse = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.as_slice().len() as f64;
    eprintln!("training residual {residual:.2e}, inference mse {mse:.2e}");
    assert!(mse < 5.0 * residual + 1e-4);

    let p = infer_stream(&e, &a, &out.best_weights, &stats, &ic).unwrap().prediction;
    let interior = 320..e.len() - 320;
    let err: f64 = interior.clone().map(|i| (p.samples()[i] - e.samples()[i]).powi(2)).sum();
    let sig: f64 = interior.map(|i| e.samples()[i].powi(2)).sum();
    let snr = 10.0 * (sig / err).log10();
    eprintln!("time-domain reproduction {snr:.1} dB");
    assert!(snr > 6.0, "reproduction {snr} dB");
}
