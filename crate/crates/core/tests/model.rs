mod common;

use common::gradcheck::{check, random_tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use stsc_core::data::{generate_synthetic, SynthConfig};
use stsc_core::dataset::{build_dataset, stack_x, stack_y, DatasetConfig, NormalizationParams, Sample};
use stsc_core::model::{
    assemble_cross_connected, build_dae_x, build_dae_y, build_lfmm, load_checkpoint, predict, pretrain_dae,
    save_checkpoint, train_cross, Autoencoder, Checkpoint, CrossModel, ModelKind, ModelSpec, Phase, PhasePlan,
};
use stsc_core::nn::{
    evaluate_mse, predict_batch, ForwardCtx, LayerSpec, Mode, Module, Network, Tensor, TrainingConfig,
};
use stsc_core::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn eval(m: &mut impl Module, x: &Tensor) -> Tensor {
    predict_batch(m, x, 64, &mut rng(0)).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / s
}

/// Eight real samples spread over one synthetic day.
fn eight_samples() -> (Vec<Sample>, NormalizationParams) {
    let (m, net) = generate_synthetic(&SynthConfig {
        sensor_count: 6,
        day_count: 15,
        missing_rate: 0.0,
        outlier_rate: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = DatasetConfig {
        anchor_stride_min: 60,
        targets: vec!["S3".into()],
        split_fraction: 1.0,
        ..DatasetConfig::default()
    };
    let split = build_dataset(&m, &net, &cfg).unwrap();
    assert_eq!(split.train.len(), 8);
    (split.train, split.params)
}

fn hash_networks(nets: &[&Network]) -> Vec<u8> {
    let mut h = Sha256::new();
    for (i, n) in nets.iter().enumerate() {
        for (name, t) in n.named_tensors(&i.to_string()) {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().to_vec()
}

fn pretrained_pair(spec: &ModelSpec, x: &Tensor, y: &Tensor, cfg: &TrainingConfig) -> (Autoencoder, Autoencoder) {
    let mut r = rng(3);
    let mut dx = build_dae_x(spec, &mut r).unwrap();
    let mut dy = build_dae_y(spec, &mut r).unwrap();
    pretrain_dae(&mut dx, x, cfg, Phase::PretrainX, &mut |_, _| {}).unwrap();
    pretrain_dae(&mut dy, y, cfg, Phase::PretrainY, &mut |_, _| {}).unwrap();
    (dx, dy)
}

fn cross(spec: &ModelSpec, dx: &Autoencoder, dy: &Autoencoder, seed: u64) -> CrossModel {
    let lfmm = build_lfmm(spec, &dx.latent_shape, &dy.latent_shape, &mut rng(seed)).unwrap();
    assemble_cross_connected(spec, dx, dy, lfmm, false).unwrap()
}

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        x_shape: [8, 4, 4],
        horizon: 4,
        ex_widths: [2, 2, 2],
        residual_blocks: 1,
        ey_widths: [2, 2, 2],
        lfmm_channels: 2,
        ..ModelSpec::default()
    }
}

// ---- shapes --------------------------------------------------------------

#[test]
fn default_shape_contract() {
    let spec = ModelSpec::default();
    let x = spec.dae_x_layout().unwrap();
    assert_eq!(x.latent_shape, vec![8, 2, 64]);
    let enc = Network::from_specs(x.encoder.clone(), &mut rng(0)).unwrap();
    let trace: Vec<(usize, usize)> = enc
        .shape_trace(&[60, 10, 4])
        .unwrap()
        .iter()
        .map(|s| (s[0], s[1]))
        .collect();
    let mut spatial = trace.clone();
    spatial.dedup();
    assert_eq!(spatial, vec![(60, 10), (30, 5), (15, 3), (8, 2)]);

    let pads: Vec<(usize, usize)> = x
        .decoder
        .iter()
        .filter_map(|l| match l {
            LayerSpec::TransposedConv { output_padding, .. } => Some(*output_padding),
            _ => None,
        })
        .collect();
    assert_eq!(pads, vec![(0, 0), (1, 0), (1, 1)]);
    let dec = Network::from_specs(x.decoder, &mut rng(0)).unwrap();
    let mut back: Vec<(usize, usize)> = dec
        .shape_trace(&[8, 2, 64])
        .unwrap()
        .iter()
        .map(|s| (s[0], s[1]))
        .collect();
    back.dedup();
    assert_eq!(back, vec![(8, 2), (15, 3), (30, 5), (60, 10)]);
    assert_eq!(dec.output_shape(&[8, 2, 64]).unwrap(), vec![60, 10, 4]);

    let y = spec.dae_y_layout().unwrap();
    assert_eq!(y.latent_shape, vec![3, 1, 16]);
    let enc = Network::from_specs(y.encoder, &mut rng(0)).unwrap();
    let mut heights: Vec<usize> = enc.shape_trace(&[12, 1, 1]).unwrap().iter().map(|s| s[0]).collect();
    heights.dedup();
    assert_eq!(heights, vec![12, 6, 3]);
    let dec = Network::from_specs(y.decoder, &mut rng(0)).unwrap();
    assert_eq!(dec.output_shape(&[3, 1, 16]).unwrap(), vec![12, 1, 1]);

    let lfmm = Network::from_specs(spec.lfmm_layout(&[8, 2, 64], &[3, 1, 16]).unwrap(), &mut rng(0)).unwrap();
    let t = lfmm.shape_trace(&[8, 2, 64]).unwrap();
    assert_eq!(t[1], vec![10, 4, 16]);
    assert_eq!(t.last().unwrap(), &vec![48]);
}

#[test]
fn lfmm_matches_zy_for_any_widths() {
    for (ey, lc) in [([4, 4, 4], 3), ([8, 16, 5], 7), ([2, 3, 9], 1)] {
        let spec = ModelSpec {
            ey_widths: ey,
            lfmm_channels: lc,
            ..ModelSpec::default()
        };
        let mut r = rng(1);
        let dx = build_dae_x(&spec, &mut r).unwrap();
        let dy = build_dae_y(&spec, &mut r).unwrap();
        let lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
        assert_eq!(lfmm.output_shape(&dx.latent_shape).unwrap(), vec![3 * ey[2]]);
    }
}

#[test]
fn bad_specs_are_config_errors() {
    let zero = ModelSpec {
        ex_widths: [16, 0, 64],
        ..ModelSpec::default()
    };
    assert!(matches!(build_dae_x(&zero, &mut rng(0)), Err(Error::Config(_))));
    let odd = ModelSpec {
        horizon: 10,
        ..ModelSpec::default()
    };
    assert!(matches!(build_dae_y(&odd, &mut rng(0)), Err(Error::Config(_))));
    let spec = ModelSpec::default();
    let mut r = rng(0);
    let dx = build_dae_x(&spec, &mut r).unwrap();
    let mut dy = build_dae_y(&spec, &mut r).unwrap();
    let lfmm = build_lfmm(&spec, &dx.latent_shape, &[4, 1, 16], &mut r).unwrap();
    dy.phase = Phase::PretrainY;
    let mut dx2 = dx.clone();
    dx2.phase = Phase::PretrainX;
    assert!(matches!(
        assemble_cross_connected(&spec, &dx2, &dy, lfmm, false),
        Err(Error::Config(_))
    ));
}

#[test]
fn forward_shapes() {
    let spec = ModelSpec::default();
    let mut r = rng(5);
    let mut dx = build_dae_x(&spec, &mut r).unwrap();
    let dy = build_dae_y(&spec, &mut r).unwrap();
    let x = random_tensor(&[3, 60, 10, 4], 1);
    assert_eq!(eval(&mut dx, &x).shape(), &[3, 60, 10, 4]);
    let lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
    let mut m = assemble_cross_connected(&spec, &dx, &dy, lfmm, true).unwrap();
    assert_eq!(eval(&mut m, &x).shape(), &[3, 12]);
}

#[test]
fn zero_lfmm_gives_constant_latent() {
    let spec = ModelSpec::default();
    let mut lfmm = build_lfmm(&spec, &[8, 2, 64], &[3, 1, 16], &mut rng(0)).unwrap();
    for p in lfmm.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    let mut params = lfmm.params_mut();
    for (i, b) in params[3].value.data_mut().iter_mut().enumerate() {
        *b = i as f64 * 0.1 - 2.0;
    }
    let out = eval(&mut lfmm, &random_tensor(&[2, 8, 2, 64], 3));
    for row in out.data().chunks(48) {
        for (i, v) in row.iter().enumerate() {
            assert_eq!(*v, i as f64 * 0.1 - 2.0);
        }
    }
}

#[test]
fn assembly_checks_phases_and_copies_parameters() {
    let spec = tiny_spec();
    let mut r = rng(2);
    let mut dx = build_dae_x(&spec, &mut r).unwrap();
    let mut dy = build_dae_y(&spec, &mut r).unwrap();
    let lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
    assert!(matches!(
        assemble_cross_connected(&spec, &dx, &dy, lfmm.clone(), false),
        Err(Error::State(_))
    ));
    dx.phase = Phase::PretrainX;
    dy.phase = Phase::PretrainY;
    let m = assemble_cross_connected(&spec, &dx, &dy, lfmm, false).unwrap();
    assert_eq!(hash_networks(&[&m.encoder]), hash_networks(&[&dx.encoder]));
    assert_eq!(hash_networks(&[&m.decoder]), hash_networks(&[&dy.decoder]));
}

#[test]
fn composition_identity_with_memorizing_lfmm() {
    let spec = tiny_spec();
    let mut r = rng(4);
    let mut dx = build_dae_x(&spec, &mut r).unwrap();
    let mut dy = build_dae_y(&spec, &mut r).unwrap();
    let y = Tensor::new(vec![1, 4], vec![0.2, 0.4, 0.7, 0.5]).unwrap();
    let zy = {
        let mut g = rng(0);
        let mut ctx = ForwardCtx {
            mode: Mode::Eval,
            rng: &mut g,
        };
        dy.encode(y.clone(), &mut ctx).unwrap()
    };
    let dy_out = eval(&mut dy, &y);
    let mut lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
    for p in lfmm.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    lfmm.params_mut()[3].value.data_mut().copy_from_slice(zy.data());
    dx.phase = Phase::PretrainX;
    dy.phase = Phase::PretrainY;
    let mut m = assemble_cross_connected(&spec, &dx, &dy, lfmm, false).unwrap();
    let out = eval(&mut m, &random_tensor(&[1, 8, 4, 4], 9));
    assert_eq!(out.data(), dy_out.data());
}

// ---- gradients -----------------------------------------------------------

#[test]
fn end_to_end_gradient_tiny_spec() {
    let spec = tiny_spec();
    let mut r = rng(6);
    let dx = build_dae_x(&spec, &mut r).unwrap();
    let dy = build_dae_y(&spec, &mut r).unwrap();
    let lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
    let mut m = assemble_cross_connected(&spec, &dx, &dy, lfmm, true).unwrap();
    common::gradcheck::randomize_params(&mut m, 8);
    let x = random_tensor(&[3, 8, 4, 4], 7);
    let rep = check(&mut m, &x, Mode::Train, 30, 1);
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");

    let mut ae = build_dae_y(&spec, &mut r).unwrap();
    common::gradcheck::randomize_params(&mut ae, 9);
    let rep = check(&mut ae, &random_tensor(&[3, 4], 2), Mode::Train, 30, 2);
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
}

// ---- training ------------------------------------------------------------

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let spec = tiny_spec();
    let mut dae = build_dae_x(&spec, &mut rng(1)).unwrap();
    let before = hash_networks(&[&dae.encoder, &dae.decoder]);
    let cfg = TrainingConfig {
        epochs: 0,
        ..TrainingConfig::default()
    };
    let curve = pretrain_dae(
        &mut dae,
        &random_tensor(&[4, 8, 4, 4], 1),
        &cfg,
        Phase::PretrainX,
        &mut |_, _| {},
    )
    .unwrap();
    assert!(curve.is_empty());
    assert_eq!(before, hash_networks(&[&dae.encoder, &dae.decoder]));
}

#[test]
fn overfit_daes_and_cross_model() {
    let (samples, _) = eight_samples();
    let x = stack_x(&samples).unwrap();
    let y = stack_y(&samples).unwrap();
    // memorization setup: no dropout, default learning rate; DAE_X needs
    // more steps per epoch, the others train best on the full batch
    let spec = ModelSpec {
        dropout: 0.0,
        ..ModelSpec::default()
    };
    let full = TrainingConfig {
        epochs: 500,
        batch_size: 8,
        ..TrainingConfig::default()
    };
    let mut r = rng(3);
    let mut dx = build_dae_x(&spec, &mut r).unwrap();
    let mut dy = build_dae_y(&spec, &mut r).unwrap();
    let small = TrainingConfig { batch_size: 2, ..full };
    pretrain_dae(&mut dx, &x, &small, Phase::PretrainX, &mut |_, _| {}).unwrap();
    pretrain_dae(&mut dy, &y, &full, Phase::PretrainY, &mut |_, _| {}).unwrap();
    let mse_x = evaluate_mse(&mut dx, &x, &x, &mut rng(0)).unwrap();
    let mse_y = evaluate_mse(&mut dy, &y, &y, &mut rng(0)).unwrap();
    assert!(mse_x < 1e-3, "DAE_X reconstruction MSE {mse_x}");
    assert!(mse_y < 1e-3, "DAE_Y reconstruction MSE {mse_y}");

    let mut m = cross(&spec, &dx, &dy, 11);
    let before = hash_networks(&[&m.encoder, &m.decoder]);
    let lfmm_before = hash_networks(&[&m.lfmm]);
    let plan = PhasePlan {
        lfmm_epochs: 250,
        finetune_epochs: 0,
    };
    train_cross(&mut m, &x, &y, &full, plan, &mut |_, _, _| {}).unwrap();
    assert_eq!(
        before,
        hash_networks(&[&m.encoder, &m.decoder]),
        "phase A touched E_X/D_Y"
    );
    assert_ne!(lfmm_before, hash_networks(&[&m.lfmm]));
    assert_eq!(m.phase, Phase::Cross);
    let plan = PhasePlan {
        lfmm_epochs: 0,
        finetune_epochs: 250,
    };
    train_cross(&mut m, &x, &y, &full, plan, &mut |_, _, _| {}).unwrap();
    assert_eq!(m.phase, Phase::Finetuned);
    let mse = evaluate_mse(&mut m, &x, &y, &mut rng(0)).unwrap();
    assert!(mse < 1e-3, "cross-connected MSE {mse}");
}

#[test]
fn smoothed_loss_curve_decreases() {
    let (samples, _) = eight_samples();
    let y = stack_y(&samples).unwrap();
    let mut dy = build_dae_y(&ModelSpec::default(), &mut rng(12)).unwrap();
    let cfg = TrainingConfig {
        epochs: 60,
        batch_size: 4,
        ..TrainingConfig::default()
    };
    let curve = pretrain_dae(&mut dy, &y, &cfg, Phase::PretrainY, &mut |_, _| {}).unwrap();
    let windows: Vec<f64> = curve.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
    for w in windows.windows(2) {
        assert!(w[1] <= w[0], "{windows:?}");
    }
}

#[test]
fn cross_training_is_deterministic() {
    let spec = tiny_spec();
    let x = random_tensor(&[10, 8, 4, 4], 1).map(|v| 0.5 + 0.25 * v);
    let y = random_tensor(&[10, 4], 2).map(|v| 0.5 + 0.25 * v);
    let run = || {
        let (dx, dy) = pretrained_pair(
            &spec,
            &x,
            &y,
            &TrainingConfig {
                epochs: 3,
                ..TrainingConfig::default()
            },
        );
        let mut m = cross(&spec, &dx, &dy, 7);
        let cfg = TrainingConfig {
            batch_size: 4,
            ..TrainingConfig::default()
        };
        let plan = PhasePlan {
            lfmm_epochs: 3,
            finetune_epochs: 3,
        };
        train_cross(&mut m, &x, &y, &cfg, plan, &mut |_, _, _| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(
        a.finetune.last().unwrap().to_bits(),
        b.finetune.last().unwrap().to_bits()
    );
}

// ---- prediction and checkpoints -----------------------------------------

#[test]
fn predictions_are_12_denormalized_speeds() {
    let spec = ModelSpec::default();
    let mut r = rng(3);
    let dx = build_dae_x(&spec, &mut r).unwrap();
    let dy = build_dae_y(&spec, &mut r).unwrap();
    let lfmm = build_lfmm(&spec, &dx.latent_shape, &dy.latent_shape, &mut r).unwrap();
    let mut m = assemble_cross_connected(&spec, &dx, &dy, lfmm, true).unwrap();
    let params = NormalizationParams::new(20.0, 70.0).unwrap();
    let out = predict(&mut m, &random_tensor(&[5, 60, 10, 4], 4), &params, (0.0, 120.0)).unwrap();
    assert_eq!(out.len(), 5);
    for row in out {
        assert_eq!(row.len(), 12);
        assert!(row.iter().all(|v| (20.0..=70.0).contains(v)));
    }
    assert!(matches!(
        predict(&mut m, &random_tensor(&[2, 60, 10, 3], 4), &params, (0.0, 120.0)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn checkpoint_round_trip() {
    let spec = ModelSpec::default();
    let x = random_tensor(&[4, 60, 10, 4], 1).map(|v| 0.5 + 0.2 * v);
    let y = random_tensor(&[4, 12], 2).map(|v| 0.5 + 0.2 * v);
    let (dx, dy) = pretrained_pair(
        &spec,
        &x,
        &y,
        &TrainingConfig {
            epochs: 2,
            ..TrainingConfig::default()
        },
    );
    let mut m = cross(&spec, &dx, &dy, 1);
    train_cross(
        &mut m,
        &x,
        &y,
        &TrainingConfig::default(),
        PhasePlan {
            lfmm_epochs: 2,
            finetune_epochs: 2,
        },
        &mut |_, _, _| {},
    )
    .unwrap();
    let params = NormalizationParams::new(10.0, 75.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cross.ckpt");
    save_checkpoint(&path, &Checkpoint::from_cross(&m, Some(params))).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.normalization, Some(params));
    assert_eq!(ck.phase, Phase::Finetuned);
    let mut back = ck.into_cross().unwrap();
    let probe = random_tensor(&[6, 60, 10, 4], 5);
    let a = eval(&mut m, &probe);
    let b = eval(&mut back, &probe);
    assert!(rel(b.data(), a.data()) < 1e-6, "{}", rel(b.data(), a.data()));

    let mut dx2 = dx.clone();
    let p = dir.path().join("dae_x.ckpt");
    save_checkpoint(&p, &Checkpoint::from_dae(ModelKind::DaeX, &spec, &dx, None)).unwrap();
    let mut dx_back = load_checkpoint(&p).unwrap().into_dae().unwrap();
    assert_eq!(dx_back.phase, Phase::PretrainX);
    let a = eval(&mut dx2, &probe);
    let b = eval(&mut dx_back, &probe);
    assert!(rel(b.data(), a.data()) < 1e-6);
    assert!(matches!(
        load_checkpoint(&p).unwrap().into_cross(),
        Err(Error::State(_))
    ));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let spec = tiny_spec();
    let mut r = rng(1);
    let dx = build_dae_x(&spec, &mut r).unwrap();
    let bytes = Checkpoint::from_dae(ModelKind::DaeX, &spec, &dx, None)
        .to_bytes()
        .unwrap();

    let mut bad = bytes.clone();
    bad[4] = b'9';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Version(_))));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::Truncated(_))
    ));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..20]), Err(Error::Truncated(_))));

    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = String::from_utf8(bytes[12..12 + len].to_vec()).unwrap();
    let rewrite = |h: String| {
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(h.as_bytes());
        out.extend_from_slice(&bytes[12 + len..]);
        out
    };
    let versioned = header.replacen("\"format_version\":1", "\"format_version\":7", 1);
    assert!(matches!(
        Checkpoint::from_bytes(&rewrite(versioned)),
        Err(Error::Version(_))
    ));
    let reshaped = header.replacen("\"shape\":[3,3,4,2]", "\"shape\":[3,3,4,3]", 1);
    assert_ne!(reshaped, header);
    assert!(matches!(
        Checkpoint::from_bytes(&rewrite(reshaped)),
        Err(Error::ShapeMismatch(_))
    ));
    let garbage = header.replacen('{', "[", 1);
    assert!(matches!(Checkpoint::from_bytes(&rewrite(garbage)), Err(Error::Json(_))));
}
