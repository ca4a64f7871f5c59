use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbnet::autograd::ops::{softmax_cross_entropy, softmax_rows};
use tbnet::data::clip::{clip_indices, crop};
use tbnet::data::{Dataset, SynthParams};
use tbnet::network::ForwardCtx;
use tbnet::trainer::{
    evaluate, evaluate_views, mean_loss, protocol_views, stack_clips, train, train_clip, train_step, EpochLog, EvalProtocol, Sgd,
    TrainConfig,
};
use tbnet::{Arch, Graph, Model, NetworkConfig};

fn small_data(count: usize, seed: u64) -> Dataset {
    let params = SynthParams {
        frames: 24,
        height: 16,
        width: 16,
        ..SynthParams::default()
    };
    Dataset::synthetic(params, count, seed).unwrap()
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        clip_frames: 8,
        clip_stride: 2,
        crop: 14,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn small_net(arch: Arch) -> NetworkConfig {
    NetworkConfig {
        width_divisor: 16,
        blocks_per_stage: 1,
        frames: 8,
        height: 14,
        width: 14,
        ..NetworkConfig::desk(arch, 4)
    }
}

fn no_hook(_: &mut EpochLog, _: &Model<f32>) -> tbnet::Result<()> {
    Ok(())
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = small_data(48, 1);
    let cfg = small_train(2);
    let run = || {
        let mut m = Model::<f32>::new(small_net(Arch::Dtbn), 5).unwrap();
        let logs = train(&mut m, &data, &cfg, no_hook).unwrap();
        (logs, tbnet::network::checkpoint::to_bytes(&m))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn one_epoch_lowers_the_loss() {
    let data = small_data(256, 2);
    let cfg = small_train(1);
    let mut m = Model::<f32>::new(small_net(Arch::Wtbn), 1).unwrap();
    let before = mean_loss(&m, &data, &cfg, 9).unwrap();
    train(&mut m, &data, &cfg, no_hook).unwrap();
    let after = mean_loss(&m, &data, &cfg, 9).unwrap();
    assert!(after < before, "loss {before} -> {after}");
}

#[test]
fn tiny_set_is_memorised() {
    let data = small_data(32, 4);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        weight_decay: 0.0,
        ..small_train(200)
    };
    let mut m = Model::<f32>::new(small_net(Arch::Wtbn), 2).unwrap();
    train(&mut m, &data, &cfg, no_hook).unwrap();
    let report = evaluate(&m, &data, &cfg, &EvalProtocol::single()).unwrap();
    assert_eq!(report.top1, 1.0);
}

#[test]
fn single_view_evaluation_is_one_forward() {
    let data = small_data(12, 5);
    let cfg = small_train(1);
    let m = Model::<f64>::new(small_net(Arch::Dtbn), 6).unwrap();
    let proto = EvalProtocol::single();
    let report = evaluate(&m, &data, &cfg, &proto).unwrap();
    let [(start, win)] = <[_; 1]>::try_from(protocol_views(&data, &cfg, &proto).unwrap()).unwrap();
    for i in 0..data.len() {
        let idx = clip_indices(data.dims()[0], cfg.clip_frames, cfg.clip_stride, start).unwrap();
        let clip = crop(&data.clip(i, &idx).unwrap(), win).unwrap();
        let logits = m.forward_classify(&stack_clips::<f64>(&[clip]).unwrap()).unwrap();
        let probs = softmax_rows(logits.data(), 4);
        for (a, b) in probs.iter().zip(&report.scores[i]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn duplicated_views_change_nothing() {
    let data = small_data(12, 6);
    let cfg = small_train(1);
    let m = Model::<f64>::new(small_net(Arch::Wtbn), 7).unwrap();
    let views = protocol_views(&data, &cfg, &EvalProtocol::default()).unwrap();
    let twice: Vec<_> = views.iter().chain(&views).copied().collect();
    let (a, b) = (
        evaluate_views(&m, &data, &cfg, &views, 2).unwrap(),
        evaluate_views(&m, &data, &cfg, &twice, 2).unwrap(),
    );
    assert_eq!(a.predictions, b.predictions);
    for (x, y) in a.scores.iter().flatten().zip(b.scores.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn evaluation_leaves_the_model_untouched() {
    let data = small_data(8, 7);
    let cfg = small_train(1);
    let m = Model::<f32>::new(small_net(Arch::Dtbn), 8).unwrap();
    let before = m.checksum();
    evaluate(&m, &data, &cfg, &EvalProtocol::default()).unwrap();
    mean_loss(&m, &data, &cfg, 1).unwrap();
    assert_eq!(m.checksum(), before);
}

#[test]
fn multi_view_is_not_worse_than_single_view() {
    let (train_set, test_set) = (small_data(400, 8), small_data(200, 9));
    let cfg = small_train(3);
    let mut m = Model::<f32>::new(small_net(Arch::Wtbn), 9).unwrap();
    train(&mut m, &train_set, &cfg, no_hook).unwrap();
    let single = evaluate(&m, &test_set, &cfg, &EvalProtocol::single()).unwrap().top1;
    let multi = evaluate(&m, &test_set, &cfg, &EvalProtocol::default()).unwrap().top1;
    assert!(multi >= single - 0.02, "multi {multi} single {single}");
}

#[test]
fn paired_classes_share_mean_intensity() {
    let data = Dataset::synthetic(SynthParams::default(), 1000, 10).unwrap();
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for i in 0..data.len() {
        let v = data.video(i).unwrap();
        sums[v.label] += v.frames.iter().map(|&x| x as f64).sum::<f64>() / v.frames.len() as f64;
        counts[v.label] += 1;
    }
    let mean: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    for pair in [(0, 1), (2, 3)] {
        let (a, b) = (mean[pair.0], mean[pair.1]);
        assert!((a - b).abs() / a.max(b) < 0.01, "{pair:?}: {a} vs {b}");
    }
}

#[test]
fn plain_sgd_step_follows_the_finite_difference_gradient() {
    let data = small_data(4, 11);
    let cfg = small_train(1);
    let mut model = Model::<f64>::new(small_net(Arch::C2d), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clips: Vec<_> = (0..4).map(|i| train_clip(&data, i, &cfg, &mut rng).unwrap()).collect();
    let x = stack_clips::<f64>(&clips).unwrap();
    let labels = data.labels().to_vec();
    let loss_at = |m: &Model<f64>| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::train_deterministic();
        let logits = m.forward(&mut g, xv, &mut ctx).unwrap();
        let l = softmax_cross_entropy(&mut g, logits, &labels).unwrap();
        g.value(l).data()[0]
    };

    let h = 1e-5;
    let mut probe = model.clone();
    let mut picks = Vec::new();
    for pi in 0..probe.store.params().len() {
        let k = rng.random_range(0..probe.store.params()[pi].tensor.numel());
        let orig = probe.store.params()[pi].tensor.data()[k];
        probe.store.params_mut()[pi].tensor.data_mut()[k] = orig + h;
        let plus = loss_at(&probe);
        probe.store.params_mut()[pi].tensor.data_mut()[k] = orig - h;
        let minus = loss_at(&probe);
        probe.store.params_mut()[pi].tensor.data_mut()[k] = orig;
        picks.push((pi, k, orig, (plus - minus) / (2.0 * h)));
    }

    let lr = 0.1;
    let mut opt = Sgd::new(0.0, 0.0);
    train_step(&mut model, &mut opt, &x, &labels, lr, &mut rng).unwrap();
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (pi, k, orig, fd) in picks {
        let step = (orig - model.store.params()[pi].tensor.data()[k]) / lr;
        diff += (step - fd).powi(2);
        norm += fd * fd;
    }
    assert!((diff / norm).sqrt() < 1e-4, "relative error {}", (diff / norm).sqrt());
}

#[test]
fn checkpoint_mismatch_is_a_config_error() {
    let data = small_data(4, 12);
    let cfg = TrainConfig {
        crop: 12,
        ..small_train(1)
    };
    let m = Model::<f32>::new(small_net(Arch::C2d), 1).unwrap();
    let err = evaluate(&m, &data, &cfg, &EvalProtocol::single()).unwrap_err();
    assert!(matches!(err, tbnet::Error::Config { .. }), "{err}");
}
