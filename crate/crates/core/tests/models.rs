use std::time::Instant;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xrecolor::diff::{Graph, Mode, PlateauConfig, PlateauMode, PlateauScheduler, Tensor};
use xrecolor::embed::{
    load_embedder, save_embedder, train_embedder, EmbedMeta, EmbedSchedule, EmbedTrainConfig,
    EmbeddedImage, EmbedderConfig, EmbedderModel,
};
use xrecolor::fixtures::toy_spectra;
use xrecolor::recolor::{load_recolor, save_recolor, SkipFusion, SmallUViT, SmallUViTConfig};

const REFERENCE_UVIT_PARAMETERS: f64 = 3_485_076.0;

#[test]
fn full_configuration_shapes_and_parameter_count() {
    let start = Instant::now();
    let cfg = SmallUViTConfig::default();
    assert_eq!(
        (
            cfg.patch_size,
            cfg.embed_dim,
            cfg.heads,
            cfg.head_dim,
            cfg.mlp_factor
        ),
        (16, 192, 9, 32, 2)
    );
    assert_eq!((cfg.depth_in, cfg.depth_mid, cfg.depth_out), (3, 1, 3));
    let model = SmallUViT::new(cfg.clone(), 0).unwrap();
    assert_eq!(model.config.tokens(), 256);
    let n = model.trainable_parameters() as f64;
    let rel = (n - REFERENCE_UVIT_PARAMETERS).abs() / REFERENCE_UVIT_PARAMETERS;
    assert!(rel < 0.05, "{n} parameters, {:.2}% off", 100.0 * rel);

    let x = Tensor::new(
        &[1, 3, 256, 256],
        (0..3 * 65536).map(|i| (i % 251) as f64 / 251.0).collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let tokens = model.tokenize(&mut g, &x).unwrap();
    assert_eq!(g.value(tokens).shape(), &[256, 192]);
    let y = model
        .forward(&mut g, &x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(g.value(y).shape(), &[1, 3, 256, 256]);
    assert!(g.value(y).data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn concat_skip_fusion_adds_one_projection_per_skip() {
    let add = SmallUViT::new(SmallUViTConfig::default(), 0)
        .unwrap()
        .trainable_parameters();
    let cat = SmallUViT::new(
        SmallUViTConfig {
            skip_fusion: SkipFusion::ConcatLinear,
            ..SmallUViTConfig::default()
        },
        0,
    )
    .unwrap()
    .trainable_parameters();
    assert_eq!(cat - add, 3 * (2 * 192 * 192 + 192));
}

#[test]
fn embedder_layer_widths() {
    let cfg = EmbedderConfig::default();
    assert_eq!(cfg.encoder_widths(), vec![512, 256, 128, 64, 32, 6]);
    assert_eq!(cfg.decoder_widths(), vec![3, 64, 128, 256, 512]);
    let expected: usize = [
        (512, 256),
        (256, 128),
        (128, 64),
        (64, 32),
        (32, 6),
        (3, 64),
        (64, 128),
        (128, 256),
        (256, 512),
    ]
    .iter()
    .map(|(i, o)| i * o + o)
    .sum();
    assert_eq!(
        EmbedderModel::new(cfg, 0).unwrap().trainable_parameters(),
        expected
    );
}

#[test]
fn loss_weight_schedule() {
    let s = EmbedSchedule::default();
    for i in 0..30 {
        assert_eq!(s.beta(i), 0.0, "epoch {i}");
    }
    for i in 30..200 {
        assert_eq!(s.beta(i), 0.01, "epoch {i}");
    }
    for i in 0..200 {
        assert_eq!(s.gamma(i), 0.01);
    }
}

#[test]
fn plateau_rule_follows_a_scripted_sequence() {
    let mut p = PlateauScheduler::new(PlateauConfig {
        patience: 2,
        mode: PlateauMode::Min,
        ..PlateauConfig::default()
    });
    let losses = [1.0, 0.9, 0.9, 0.95, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8];
    let expected = [
        1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.125,
    ];
    let mut lr = 1.0;
    for (i, (&m, &e)) in losses.iter().zip(&expected).enumerate() {
        lr = p.observe(m, lr);
        assert_eq!(lr, e, "epoch {i}");
    }
    let mut floor = PlateauScheduler::new(PlateauConfig {
        patience: 0,
        min_lr: 0.3,
        ..PlateauConfig::default()
    });
    let mut lr = 1.0;
    for _ in 0..6 {
        lr = floor.observe(0.0, lr);
    }
    assert_eq!(lr, 0.3);
}

#[test]
fn embedder_overfits_thirty_two_spectra() {
    let start = Instant::now();
    let train = toy_spectra(32, 0);
    let val = toy_spectra(16, 1);
    let cfg = EmbedTrainConfig {
        epochs: 200,
        batch_size: 32,
        seed: 1,
        ..EmbedTrainConfig::default()
    };
    let out = train_embedder(&train, &val, &cfg).unwrap();
    let first = out.history[0].val_rec;
    let best = out.history[out.best_epoch].val_rec;
    assert!(out.history.len() <= 200);
    assert!(
        first / best >= 10.0,
        "validation L_rec {first:e} -> {best:e}"
    );
    assert!(start.elapsed().as_secs_f64() < 120.0);
}

#[test]
fn embedder_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.xckp");
    let model = EmbedderModel::new(EmbedderConfig::reduced(), 4).unwrap();
    let sha = save_embedder(&path, &model).unwrap();
    let (back, sha2) = load_embedder(&path).unwrap();
    assert_eq!(sha, sha2);
    let again = dir.path().join("again.xckp");
    save_embedder(&again, &back).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
    let x: Vec<f64> = toy_spectra(3, 2)
        .chunks(512)
        .flat_map(|r| r[..model.config.input_dim].to_vec())
        .collect();
    // weights are stored as f32
    for (a, b) in model
        .encode_mu(&x)
        .unwrap()
        .iter()
        .zip(back.encode_mu(&x).unwrap())
    {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!(
        load_recolor(&path).is_err(),
        "kind mismatch must be rejected"
    );
}

#[test]
fn recolor_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.xckp");
    let model = SmallUViT::new(SmallUViTConfig::reduced(), 8).unwrap();
    save_recolor(&path, &model).unwrap();
    let (back, _) = load_recolor(&path).unwrap();
    let c = &model.config;
    let x: Vec<f64> = (0..c.in_channels * c.image_height * c.image_width)
        .map(|i| (i as f64 * 0.37).sin())
        .collect();
    for (a, b) in model
        .predict(&x)
        .unwrap()
        .iter()
        .zip(back.predict(&x).unwrap())
    {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(
        load_recolor(&path).is_err(),
        "tampered payload must fail the hash check"
    );
}

proptest! {
    #[test]
    fn embedded_image_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let meta = EmbedMeta { source_cube: "c.xrfc".into(), checkpoint: "abc".into() };
        let img = EmbeddedImage::new(h, w, 3, data, meta).unwrap();
        prop_assert_eq!(EmbeddedImage::from_bytes(&img.to_bytes()).unwrap(), img);
    }
}
