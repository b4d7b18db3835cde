mod common;

use common::rel_err;
use ndarray::{Array2, Array3};
use qednet::data::{
    extract_patches, mask_from_bytes, mask_to_bytes, normalize, pad_even, raster_from_bytes,
    raster_to_bytes, read_raster, stitch, synth_scene, write_raster, Mask, Raster, SynthSpec,
    S2_BANDS,
};
use qednet::metrics::{kappa, MetricsRow};
use qednet::model::{forward, ModelParams, SigmoidMap, Variant};
use qednet::train::{
    adamw_step, bce_loss, checkpoint_from_bytes, checkpoint_to_bytes, cosine_lr, evaluate,
    sample_loss_grad, train, AdamW, OptimizerState, Sample, TrainConfig,
};
use qednet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn names() -> Vec<String> {
    S2_BANDS.iter().map(|s| s.to_string()).collect()
}

fn random_raster(h: usize, w: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Array3::from_shape_simple_fn((12, h, w), || rng.random_range(0.0..12_000.0f32).round());
    Raster::new(names(), v, 10_000.0).unwrap()
}

#[test]
fn raster_container_round_trip() {
    let r = random_raster(5, 7, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.mqr");
    write_raster(&path, &r).unwrap();
    assert_eq!(read_raster(&path).unwrap(), r);
}

#[test]
fn container_rejects_damage() {
    let p = Path::new("x.mqr");
    let good = raster_to_bytes(&random_raster(3, 4, 2)).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(
        raster_from_bytes(p, &bad),
        Err(Error::BadMagic { .. })
    ));

    let mut bad = good.clone();
    bad[7] = b'9';
    assert!(matches!(
        raster_from_bytes(p, &bad),
        Err(Error::VersionMismatch { .. })
    ));

    let bad = &good[..good.len() - 20];
    assert!(matches!(
        raster_from_bytes(p, bad),
        Err(Error::Truncated { .. })
    ));

    let mut bad = good.clone();
    let mid = good.len() - 30;
    bad[mid] ^= 0x40;
    assert!(matches!(
        raster_from_bytes(p, &bad),
        Err(Error::ChecksumMismatch { .. })
    ));

    let mut bad = good.clone();
    bad[12] = b'!';
    assert!(matches!(
        raster_from_bytes(p, &bad),
        Err(Error::HeaderInvalid { .. })
    ));

    assert!(raster_from_bytes(p, &good[..5])
        .unwrap_err()
        .is_data_error());
}

#[test]
fn mask_round_trip_and_kind_check() {
    let m = Mask::new(Array2::from_shape_fn((3, 5), |(y, x)| ((y + x) % 2) as u8)).unwrap();
    let bytes = mask_to_bytes(&m).unwrap();
    assert_eq!(mask_from_bytes(Path::new("m"), &bytes).unwrap(), m);
    // a raster is not a mask
    let r = raster_to_bytes(&random_raster(3, 5, 3)).unwrap();
    assert!(mask_from_bytes(Path::new("m"), &r).is_err());
    assert!(Mask::new(Array2::from_elem((2, 2), 2u8)).is_err());
}

#[test]
fn normalize_divides_and_clamps() {
    let r = random_raster(4, 4, 4);
    let n = normalize(&r, 10_000.0).unwrap();
    assert_eq!(n.raster.scale(), 1.0);
    let over = r.values().iter().filter(|&&v| v > 10_000.0).count();
    assert_eq!(n.clamped, over);
    for (a, b) in r.values().iter().zip(n.raster.values()) {
        let want = (f64::from(*a) / 10_000.0).min(1.0);
        assert!((f64::from(*b) - want).abs() < 1e-7);
    }
    assert!(normalize(&r, 0.0).is_err());
}

#[test]
fn odd_scene_pads_by_reflection() {
    let r = random_raster(5, 3, 5);
    let p = pad_even(&r).unwrap();
    assert_eq!((p.height(), p.width()), (6, 4));
    for b in 0..12 {
        assert_eq!(p.values()[[b, 5, 1]], r.values()[[b, 3, 1]]);
        assert_eq!(p.values()[[b, 2, 3]], r.values()[[b, 2, 1]]);
    }
}

#[test]
fn patches_tile_and_stitch_back() {
    let r = random_raster(13, 10, 6);
    let labels = Array2::from_shape_fn((13, 10), |(y, x)| ((y * 7 + x) % 2) as u8);
    let m = Mask::new(labels.clone()).unwrap();
    let patches = extract_patches(&r, Some(&m), 4, 4).unwrap();
    assert_eq!(patches.len(), 4 * 3);
    for p in &patches {
        assert_eq!((p.raster.height(), p.raster.width()), (4, 4));
        let (y0, x0) = p.origin;
        for ((y, x), &v) in p.valid.indexed_iter() {
            assert_eq!(v, y0 + y < 13 && x0 + x < 10);
        }
    }
    let tiles: Vec<_> = patches
        .iter()
        .map(|p| (p.origin, p.mask.as_ref().unwrap().values().clone()))
        .collect();
    assert_eq!(stitch(&tiles, 13, 10).unwrap(), labels);
    let band0: Vec<_> = patches
        .iter()
        .map(|p| (p.origin, p.raster.band(0).to_owned()))
        .collect();
    assert_eq!(stitch(&band0, 13, 10).unwrap(), r.band(0));
}

#[test]
fn synthetic_scenes_are_seeded() {
    let spec = SynthSpec::new(42, 16, 0.03);
    let (a, ma) = synth_scene(&spec).unwrap();
    let (b, mb) = synth_scene(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, _) = synth_scene(&SynthSpec::new(43, 16, 0.03)).unwrap();
    assert_ne!(a, c);
    assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-3.0..3.0));
    let gt = Array2::from_shape_simple_fn((3, 4), || u8::from(rng.random::<bool>()));
    let valid = Array2::from_shape_fn((3, 4), |(y, x)| y + x != 2);
    let loss = |z: &Array2<f64>| {
        bce_loss(&SigmoidMap::from_logits(z), &gt, Some(&valid))
            .unwrap()
            .loss
    };
    let out = bce_loss(&SigmoidMap::from_logits(&logits), &gt, Some(&valid)).unwrap();
    let h = 1e-6;
    for idx in [(0, 0), (1, 1), (2, 3), (0, 2)] {
        let (mut a, mut b) = (logits.clone(), logits.clone());
        a[idx] += h;
        b[idx] -= h;
        let fd = (loss(&a) - loss(&b)) / (2.0 * h);
        assert!(rel_err(out.grad_logits[idx], fd, 1e-8) < 1e-6);
    }
    assert_eq!(out.grad_logits[(0, 2)], 0.0);
}

#[test]
fn bce_perfect_prediction_is_near_zero() {
    let y = SigmoidMap::new(Array2::from_elem((2, 2), 1.0)).unwrap();
    let out = bce_loss(&y, &Array2::from_elem((2, 2), 1u8), None).unwrap();
    assert!(out.loss < 1e-6);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 200, 1e-4), 1e-4);
    assert!((cosine_lr(100, 200, 1e-4) - 5e-5).abs() < 1e-18);
    assert!(cosine_lr(200, 200, 1e-4).abs() < 1e-20);
}

#[test]
fn adamw_first_step_moves_by_lr() {
    // with bias correction the first step is lr * sign(g) (eps aside)
    let hp = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut st = OptimizerState::new(3);
    let mut p = vec![1.0, -2.0, 0.5];
    adamw_step(&mut st, &mut p, &[0.3, -4.0, 0.0], 0.1, &hp, None).unwrap();
    assert!((p[0] - 0.9).abs() < 1e-7);
    assert!((p[1] + 1.9).abs() < 1e-7);
    assert_eq!(p[2], 0.5);
    // decay only where the mask says so
    let hp = AdamW::default();
    let mut st = OptimizerState::new(2);
    let mut p = vec![1.0, 1.0];
    adamw_step(&mut st, &mut p, &[0.0, 0.0], 0.5, &hp, Some(&[true, false])).unwrap();
    assert!((p[0] - (1.0 - 0.5 * 0.01)).abs() < 1e-15);
    assert_eq!(p[1], 1.0);
}

#[test]
fn a_few_steps_reduce_the_loss_for_most_seeds() {
    let (r, m) = synth_scene(&SynthSpec::new(5, 8, 0.03)).unwrap();
    let s = Sample::from_scene(&r, &m).unwrap();
    let hp = AdamW::default();
    let mut decreased = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::random(Variant::CnnQnn, 4, &mut rng);
        let mut flat = params.to_flat();
        let mask = params.decay_mask();
        let mut st = OptimizerState::new(flat.len());
        let (l0, _) = sample_loss_grad(&params, &s).unwrap();
        for _ in 0..5 {
            let (_, g) = sample_loss_grad(&params, &s).unwrap();
            adamw_step(&mut st, &mut flat, &g, 1e-3, &hp, Some(&mask)).unwrap();
            params.assign_flat(&flat).unwrap();
        }
        let (l1, _) = sample_loss_grad(&params, &s).unwrap();
        decreased += usize::from(l1 < l0);
    }
    assert!(decreased >= 18, "loss decreased for {decreased}/20 seeds");
}

#[test]
fn best_checkpoint_reproduces_its_kappa() {
    let mut tr = Vec::new();
    for i in 0..2 {
        let (r, m) = synth_scene(&SynthSpec::new(60 + i, 16, 0.03)).unwrap();
        for p in extract_patches(&r, Some(&m), 8, 8).unwrap() {
            tr.push(Sample::from_patch(&p).unwrap());
        }
    }
    let (r, m) = synth_scene(&SynthSpec::new(70, 16, 0.03)).unwrap();
    let val = vec![Sample::from_scene(&r, &m).unwrap()];
    let cfg = TrainConfig {
        variant: Variant::CnnOnly,
        feat_width: 4,
        max_epochs: 4,
        seed: 3,
        optimizer: AdamW {
            lr0: 1e-2,
            ..AdamW::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&tr, &val, &cfg).unwrap();
    assert_eq!(out.history.len(), 4);
    let best_rec = out
        .history
        .iter()
        .find(|e| e.epoch == out.best_epoch)
        .unwrap();
    assert_eq!(best_rec.val_kappa, out.best_kappa);
    assert!(out.history.iter().all(|e| e.val_kappa <= out.best_kappa));

    let restored = checkpoint_from_bytes(Path::new("c"), &checkpoint_to_bytes(&out.best)).unwrap();
    assert_eq!(restored, out.best);
    let ev = evaluate(&restored, &val).unwrap();
    assert_eq!(kappa(&ev.confusion), out.best_kappa);
    assert_eq!(MetricsRow::new("m", &ev.confusion).kappa, out.best_kappa);
    assert_eq!(forward(&val[0].x, &restored).unwrap(), ev.maps[0]);
}

#[test]
fn checkpoint_rejects_damage() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ModelParams::random(Variant::CnnCnn, 3, &mut rng);
    let good = checkpoint_to_bytes(&p);
    let path = Path::new("c");
    let mut bad = good.clone();
    bad[0] = b'Z';
    assert!(matches!(
        checkpoint_from_bytes(path, &bad),
        Err(Error::BadMagic { .. })
    ));
    let mut bad = good.clone();
    bad[40] ^= 1;
    assert!(matches!(
        checkpoint_from_bytes(path, &bad),
        Err(Error::ChecksumMismatch { .. })
    ));
    assert!(checkpoint_from_bytes(path, &good[..good.len() - 9])
        .unwrap_err()
        .is_data_error());
}

#[test]
fn training_rejects_bad_config() {
    let (r, m) = synth_scene(&SynthSpec::new(1, 8, 0.0)).unwrap();
    let s = vec![Sample::from_scene(&r, &m).unwrap()];
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&s, &s, &cfg), Err(Error::Contract(_))));
    assert!(train(&[], &s, &TrainConfig::default()).is_err());
}
