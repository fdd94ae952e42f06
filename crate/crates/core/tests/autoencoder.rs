mod common;

use common::*;
use proptest::prelude::*;
use treecoder::autoencoder::{adagrad_update, train_step, EpochRecord, OptimizerState, TrainObserver, ADAGRAD_EPSILON};
use treecoder::data_io::{make_synthetic_clusters, Dataset};
use treecoder::soft_tree::LeafKind;
use treecoder::{evaluate, train, AutoencoderPair, ErrorScale, Result, SoftTree, TrainConfig};

fn random_pair(seed: u64, d: usize, k: usize, depth: usize, kind: LeafKind) -> AutoencoderPair {
    let mut r = rng(seed);
    let encoder = random_tree(&mut r, d, k, depth, kind);
    let decoder = random_tree(&mut r, k, d, depth, kind);
    AutoencoderPair::new(encoder, decoder).unwrap()
}

fn pair_with_params(pair: &AutoencoderPair, encoder: Option<&[f64]>, decoder: Option<&[f64]>) -> AutoencoderPair {
    let mut p = pair.clone();
    if let Some(e) = encoder {
        set_tree_params(&mut p.encoder, e);
    }
    if let Some(d) = decoder {
        set_tree_params(&mut p.decoder, d);
    }
    p
}

#[test]
fn chained_gradients_match_finite_differences() {
    for trial in 0..120u64 {
        let kind = if trial % 2 == 0 {
            LeafKind::Constant
        } else {
            LeafKind::Linear
        };
        let pair = random_pair(1000 + trial, 4, 2, 3, kind);
        let x = uniform_vec(&mut rng(trial), 4, 0.0, 1.0);
        let grads = pair.gradients(&x, 0.0).unwrap();

        let mut enc = flatten(pair.encoder.param_blocks());
        let numeric_enc = central_differences(&mut enc, |p| {
            pair_with_params(&pair, Some(p), None).instance_loss(&x).unwrap()
        });
        let err = relative_error(&flatten(grads.encoder.blocks()), &numeric_enc);
        assert!(err <= GRAD_TOL, "encoder trial {trial}: {err}");

        let mut dec = flatten(pair.decoder.param_blocks());
        let numeric_dec = central_differences(&mut dec, |p| {
            pair_with_params(&pair, None, Some(p)).instance_loss(&x).unwrap()
        });
        let err = relative_error(&flatten(grads.decoder.blocks()), &numeric_dec);
        assert!(err <= GRAD_TOL, "decoder trial {trial}: {err}");
    }
}

#[test]
fn hidden_responsibility_matches_finite_differences() {
    for trial in 0..120u64 {
        let kind = if trial % 2 == 0 {
            LeafKind::Constant
        } else {
            LeafKind::Linear
        };
        let pair = random_pair(2000 + trial, 5, 3, 3, kind);
        let x = uniform_vec(&mut rng(trial), 5, 0.0, 1.0);
        let grads = pair.gradients(&x, 0.0).unwrap();
        let mut h = pair.encode(&x).unwrap();
        let numeric = central_differences(&mut h, |h| {
            let xh = pair.decoder.predict(h).unwrap();
            0.5 * xh.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        });
        let err = relative_error(&grads.hidden, &numeric);
        assert!(err <= GRAD_TOL, "trial {trial}: {err}");
    }
}

#[test]
fn l2_term_is_added_to_every_gradient() {
    let pair = random_pair(3, 3, 2, 3, LeafKind::Linear);
    let x = [0.2, 0.4, 0.6];
    let plain = pair.gradients(&x, 0.0).unwrap();
    let reg = pair.gradients(&x, 0.5).unwrap();
    let expected: Vec<f64> = flatten(plain.encoder.blocks())
        .iter()
        .zip(flatten(pair.encoder.param_blocks()))
        .map(|(g, p)| g + 0.5 * p)
        .collect();
    assert_eq!(flatten(reg.encoder.blocks()), expected);
    assert_eq!(reg.loss, plain.loss);
}

#[test]
fn reconstruction_composes_tree_oracles() {
    for seed in 0..20 {
        let pair = random_pair(seed, 6, 2, 4, LeafKind::Constant);
        let x = uniform_vec(&mut rng(seed + 50), 6, 0.0, 1.0);
        let rec = pair.reconstruct(&x).unwrap();
        let h = pair.encoder.forward_by_path_enumeration(&x).unwrap();
        let xh = pair.decoder.forward_by_path_enumeration(&h).unwrap();
        for (a, b) in rec.output.iter().zip(&xh) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let direct = 0.5 * x.iter().zip(&rec.output).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!((pair.instance_loss(&x).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct));
    }
}

#[test]
fn mnist_shaped_pair_dimensions() {
    let cfg = TrainConfig::default();
    let pair = AutoencoderPair::initialize(784, &cfg).unwrap();
    let rec = pair.reconstruct(&vec![0.5; 784]).unwrap();
    assert_eq!(rec.hidden.len(), 2);
    assert_eq!(rec.output.len(), 784);
    assert_eq!(pair.depth(), 2);
}

#[test]
fn small_steps_decrease_the_loss() {
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        l2_strength: 0.0,
        ..TrainConfig::default()
    };
    let mut decreased = 0;
    for trial in 0..200u64 {
        let kind = if trial % 2 == 0 {
            LeafKind::Constant
        } else {
            LeafKind::Linear
        };
        let mut pair = random_pair(5000 + trial, 4, 2, 2 + (trial % 3) as usize, kind);
        let x = uniform_vec(&mut rng(trial), 4, 0.0, 1.0);
        let mut opt = OptimizerState::new(&pair);
        let before = train_step(&mut pair, &x, &mut opt, &cfg).unwrap();
        let after = pair.instance_loss(&x).unwrap();
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 190, "loss decreased in {decreased}/200 trials");
}

#[test]
fn repeated_steps_fit_a_single_instance() {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        l2_strength: 0.0,
        ..TrainConfig::default()
    };
    let mut pair = AutoencoderPair::initialize(6, &cfg).unwrap();
    let x = [0.9, 0.1, 0.4, 0.7, 0.0, 1.0];
    let initial = pair.instance_loss(&x).unwrap();
    let mut opt = OptimizerState::new(&pair);
    for _ in 0..500 {
        train_step(&mut pair, &x, &mut opt, &cfg).unwrap();
    }
    let last = pair.instance_loss(&x).unwrap();
    assert!(last < 0.01 * initial, "{last} vs initial {initial}");
}

#[test]
fn adagrad_closed_forms() {
    let mut acc = vec![0.0];
    let mut p = vec![1.0];
    adagrad_update(&mut acc, &mut p, &[0.0], 0.1, ADAGRAD_EPSILON);
    assert_eq!((acc[0], p[0]), (0.0, 1.0));

    adagrad_update(&mut acc, &mut p, &[-3.0], 0.1, ADAGRAD_EPSILON);
    assert!((p[0] - (1.0 + 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    let mut acc = vec![0.0];
    for _ in 0..7 {
        adagrad_update(&mut acc, &mut p, &[0.5], 0.1, ADAGRAD_EPSILON);
    }
    assert_eq!(acc[0], 7.0 * 0.25);
}

#[test]
fn accumulators_never_decrease() {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let data = make_synthetic_clusters(3, 10, 5, 0.1, 4).unwrap();
    let mut pair = random_pair(9, 5, 2, 3, LeafKind::Linear);
    let mut opt = OptimizerState::new(&pair);
    let snapshot = |o: &OptimizerState| flatten(o.encoder.blocks().iter().chain(o.decoder.blocks()));
    let mut prev = snapshot(&opt);
    for x in data.rows().chain(data.rows()) {
        train_step(&mut pair, x, &mut opt, &cfg).unwrap();
        let now = snapshot(&opt);
        assert!(now.iter().zip(&prev).all(|(a, b)| a >= b));
        prev = now;
    }
}

#[test]
fn perfect_pair_is_a_fixed_point() {
    let x = vec![0.25, 0.75];
    let mut pair = AutoencoderPair::new(
        SoftTree::constant(2, vec![0.3]).unwrap(),
        SoftTree::constant(1, x.clone()).unwrap(),
    )
    .unwrap();
    let before = pair.clone();
    let cfg = TrainConfig {
        l2_strength: 0.0,
        ..TrainConfig::default()
    };
    let mut opt = OptimizerState::new(&pair);
    assert_eq!(train_step(&mut pair, &x, &mut opt, &cfg).unwrap(), 0.0);
    assert_eq!(pair, before);
}

#[test]
fn paper_schedule_depth_sequence() {
    let cfg = TrainConfig::default();
    let depths: Vec<usize> = (0..6).map(|block| cfg.depth_at_epoch(block * 40 + 1)).collect();
    assert_eq!(depths, vec![2, 3, 4, 5, 6, 6]);
}

#[test]
fn training_follows_the_depth_schedule() {
    let data = make_synthetic_clusters(2, 5, 3, 0.1, 1).unwrap();
    let cfg = TrainConfig {
        total_epochs: 12,
        grow_every: 3,
        max_depth: 4,
        ..TrainConfig::default()
    };
    let mut pair = AutoencoderPair::initialize(3, &cfg).unwrap();
    let history = train(&mut pair, &data, None, &cfg, &mut ()).unwrap();
    let depths: Vec<usize> = history.records.iter().map(|r| r.depth).collect();
    assert_eq!(depths, vec![2, 2, 2, 3, 3, 3, 4, 4, 4, 4, 4, 4]);
    assert_eq!(depths, (1..=12).map(|e| cfg.depth_at_epoch(e)).collect::<Vec<_>>());
    assert!(history.records.iter().all(|r| r.test_error.is_none()));
}

#[test]
fn single_epoch_gives_single_record() {
    let data = Dataset::from_rows(&[[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]).unwrap();
    let cfg = TrainConfig {
        total_epochs: 1,
        ..TrainConfig::default()
    };
    let mut pair = AutoencoderPair::initialize(2, &cfg).unwrap();
    let history = train(&mut pair, &data, Some(&data), &cfg, &mut ()).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history.records[0].epoch, 1);
}

#[test]
fn training_is_deterministic() {
    let data = make_synthetic_clusters(3, 8, 4, 0.1, 2).unwrap();
    let cfg = TrainConfig {
        total_epochs: 6,
        grow_every: 2,
        max_depth: 4,
        seed: 77,
        ..TrainConfig::default()
    };
    let run = || {
        let mut pair = AutoencoderPair::initialize(4, &cfg).unwrap();
        let h = train(&mut pair, &data, Some(&data), &cfg, &mut ()).unwrap();
        (pair, h)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    let bits = |p: &AutoencoderPair| -> Vec<u64> {
        flatten(p.encoder.param_blocks().chain(p.decoder.param_blocks()))
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&p1), bits(&p2));
}

struct GrowthProbe {
    data: Dataset,
    checks: usize,
}

impl TrainObserver for GrowthProbe {
    fn before_growth(&mut self, _epoch: usize, pair: &AutoencoderPair) -> Result<()> {
        let before = evaluate(pair, &self.data, ErrorScale::Pixel)?;
        let grown = pair.grow(0.0, 0.0, &mut rng(0));
        let after = evaluate(&grown, &self.data, ErrorScale::Pixel)?;
        assert!((before - after).abs() <= 1e-12, "{before} vs {after}");
        self.checks += 1;
        Ok(())
    }

    fn on_epoch(&mut self, _r: &EpochRecord, _p: &AutoencoderPair) -> Result<()> {
        Ok(())
    }
}

#[test]
fn zero_noise_growth_preserves_test_error_during_training() {
    let data = make_synthetic_clusters(3, 10, 4, 0.1, 5).unwrap();
    let cfg = TrainConfig {
        total_epochs: 9,
        grow_every: 3,
        max_depth: 5,
        gate_init_scale: 0.0,
        noise_scale: 0.0,
        ..TrainConfig::default()
    };
    let mut pair = AutoencoderPair::initialize(4, &cfg).unwrap();
    let mut probe = GrowthProbe {
        data: data.clone(),
        checks: 0,
    };
    train(&mut pair, &data, None, &cfg, &mut probe).unwrap();
    assert_eq!(probe.checks, 2);
}

#[test]
fn evaluate_closed_form() {
    let pair = AutoencoderPair::new(
        SoftTree::constant(2, vec![0.0]).unwrap(),
        SoftTree::constant(1, vec![0.0, 0.0]).unwrap(),
    )
    .unwrap();
    let data = Dataset::from_rows(&[[1.0, 0.0]]).unwrap();
    let e = evaluate(&pair, &data, ErrorScale::Pixel).unwrap();
    assert!((e - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = TrainConfig::default();
    for cfg in [
        TrainConfig {
            total_epochs: 0,
            ..base.clone()
        },
        TrainConfig {
            grow_every: 0,
            ..base.clone()
        },
        TrainConfig {
            max_depth: 1,
            ..base.clone()
        },
        TrainConfig {
            latent_dim: 0,
            ..base.clone()
        },
        TrainConfig {
            l2_strength: -1.0,
            ..base.clone()
        },
    ] {
        assert!(matches!(cfg.validate(), Err(treecoder::Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn exploding_parameters_report_divergence() {
    let cfg = TrainConfig::default();
    let mut pair = AutoencoderPair::initialize(2, &cfg).unwrap();
    pair.decoder.leaves_mut()[0].params_mut()[0] = f64::MAX;
    pair.decoder.leaves_mut()[1].params_mut()[0] = -f64::MAX;
    let data = Dataset::from_rows(&[[0.5, 0.5]]).unwrap();
    let err = train(&mut pair, &data, None, &cfg, &mut ()).unwrap_err();
    assert!(matches!(err, treecoder::Error::Diverged { epoch: 1, .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_ignores_instance_order(seed in any::<u64>(), n in 2usize..12) {
        let pair = random_pair(seed, 3, 2, 3, LeafKind::Constant);
        let mut r = rng(seed ^ 9);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, 3, 0.0, 1.0)).collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let reversed: Vec<usize> = (0..n).rev().collect();
        let a = evaluate(&pair, &data, ErrorScale::Pixel).unwrap();
        let b = evaluate(&pair, &data.subset(&reversed), ErrorScale::Pixel).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}
