use cropseg::datapipe::{synthesize_dataset, tile, SynthSpec};
use cropseg::fcn3d::load_weights;
use cropseg::gradcheck::micro_config;
use cropseg::loss::LossKind;
use cropseg::optim::{history_csv, split_folds, train_fold, TrainConfig};
use cropseg::{ArchitectureConfig, Error, NetworkModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameter count from the layer widths alone: two 3×3×3 convs per
/// encoder level, two 3×3 convs per decoder stage, a 1×1 head.
fn expected_parameters(c: &ArchitectureConfig) -> usize {
    let conv = |cin: usize, cout: usize, taps: usize| cin * cout * taps + cout;
    let ch = &c.channel_schedule;
    let mut total = 0;
    let mut cin = c.input_bands;
    for &co in ch {
        total += conv(cin, co, 27) + conv(co, co, 27);
        cin = co;
    }
    for l in (0..ch.len() - 1).rev() {
        total += conv(ch[l + 1] + ch[l], ch[l], 9) + conv(ch[l], ch[l], 9);
    }
    total + conv(ch[0], c.num_classes, 1)
}

#[test]
fn default_network_has_the_documented_size() {
    let c = ArchitectureConfig::default();
    assert_eq!(c.channel_schedule, vec![16, 32, 64, 128]);
    assert_eq!(c.spatial_extents(), vec![128, 64, 32, 16]);
    assert_eq!(c.temporal_extents(), vec![23, 11, 5, 2]);
    let model = NetworkModel::<f32>::build(&c, 0).unwrap();
    assert_eq!(expected_parameters(&c), 1_074_707);
    assert_eq!(model.parameter_count(), 1_074_707);
}

#[test]
fn parameter_count_follows_the_schedule() {
    for (levels, base) in [(1, 4), (2, 3), (3, 8), (4, 2)] {
        let mut c = ArchitectureConfig::doubling(levels, base);
        c.tile_size = 16;
        let model = NetworkModel::<f64>::build(&c, 1).unwrap();
        assert_eq!(model.parameter_count(), expected_parameters(&c), "{levels} levels");
    }
}

#[test]
fn default_forward_maps_a_tile_to_class_probabilities() {
    let c = ArchitectureConfig::default();
    let model = NetworkModel::<f32>::build(&c, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&c.input_shape(1), |_| rng.random_range(-1.0f32..1.0));
    let p = model.predict(&x).unwrap();
    assert_eq!(p.shape(), &[1, 3, 128, 128]);
    let plane = 128 * 128;
    for i in 0..plane {
        let s: f32 = (0..3).map(|k| p.data()[k * plane + i]).sum();
        assert!((s - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn tile_not_divisible_by_pooling_is_a_config_error() {
    let c = ArchitectureConfig {
        tile_size: 100,
        ..ArchitectureConfig::default()
    };
    assert!(matches!(NetworkModel::<f32>::build(&c, 0), Err(Error::Config(_))));
}

#[test]
fn one_tile_cannot_fill_five_folds() {
    assert!(matches!(split_folds(1, 5, 0), Err(Error::Config(_))));
}

#[test]
fn batch_order_does_not_change_per_example_output() {
    let c = micro_config();
    let model = NetworkModel::<f64>::build(&c, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_fn(&c.input_shape(3), |_| rng.random_range(-1.0..1.0));
    let per = x.len() / 3;
    let order = [2, 0, 1];
    let permuted = Tensor::from_fn(&c.input_shape(3), |i| x.data()[order[i / per] * per + i % per]);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&permuted).unwrap();
    let out = a.len() / 3;
    for (slot, &src) in order.iter().enumerate() {
        assert_eq!(&b.data()[slot * out..][..out], &a.data()[src * out..][..out]);
    }
}

#[test]
fn saved_weights_reload_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fold0.weights");
    let mut c = ArchitectureConfig::doubling(3, 4);
    c.tile_size = 8;
    let model = NetworkModel::<f32>::build(&c, 5).unwrap();
    model.save_weights(&path).unwrap();
    let back = load_weights::<f32>(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.weight_checksum(), model.weight_checksum());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&c.input_shape(1), |_| rng.random_range(-1.0f32..1.0));
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
}

#[test]
fn truncated_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fold0.weights");
    NetworkModel::<f32>::build(&micro_config(), 0).unwrap().save_weights(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_weights::<f32>(&path), Err(Error::Format(_))));
}

#[test]
fn f64_training_trajectory_is_reproducible() {
    let spec = SynthSpec {
        height: 16,
        width: 16,
        bands: 2,
        time_steps: 4,
        fields: 6,
        ..SynthSpec::default()
    };
    let scene = synthesize_dataset(&spec, 4).unwrap();
    let examples = tile(&scene.cube.data, &scene.labels, &scene.cube.pixel_valid, 8, "s").unwrap();
    let plan = split_folds(examples.len(), 2, 4).unwrap();
    let config = TrainConfig {
        arch: micro_config(),
        loss: LossKind::Iou,
        epochs: 3,
        ..TrainConfig::default()
    };
    let run = || train_fold::<f64>(&examples, &plan, 1, &config, 4).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.model.weight_checksum(), b.model.weight_checksum());
    assert_eq!(a.history.len(), 3);
    assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
}
