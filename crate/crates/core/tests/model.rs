use fgrnet::model::{infer_on, ModelConfig, ParamGroup};
use fgrnet::tensor::OpKind;
use fgrnet::{FgrNetParams, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(config: &ModelConfig, batch: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = config.input_size;
    let n = batch * config.in_channels * s * s;
    Tensor::new(&[batch, config.in_channels, s, s], (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Paper geometry with every width cut to 2, so a full 480 px pass stays cheap.
fn narrow_paper(k: usize) -> ModelConfig {
    let mut c = ModelConfig::paper(k);
    c.block_channels = vec![2; 5];
    c.bottleneck_channels = 2;
    c.center_channels = 2;
    c.decoder_widths = vec![[2, 2]; 5];
    c.fusion_channels = 2;
    c.classifier_widths = vec![4, 4, 4];
    c
}

#[test]
fn paper_geometry_shapes() {
    let c = narrow_paper(2);
    let p = FgrNetParams::<f32>::init(&c, 3).unwrap();
    let img = random_image(&c, 1, 1);
    let (bottleneck, skips) = p.encode(&img).unwrap();
    assert_eq!(bottleneck.shape(), &[1, 2, 15, 15]);
    let sides: Vec<usize> = skips.iter().map(|s| s.shape()[2]).collect();
    assert_eq!(sides, vec![480, 240, 120, 60, 30]);
    let recon = p.decode(&bottleneck, &skips).unwrap();
    assert_eq!(recon.shape(), &[1, 3, 480, 480]);
    assert!(recon.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(p.forward_infer(&img).unwrap().shape(), &[1, 2]);
}

#[test]
fn desk_forward_shapes_and_batch() {
    for k in [2, 3] {
        let c = ModelConfig::desk(k);
        let p = FgrNetParams::<f32>::init(&c, 5).unwrap();
        let img = random_image(&c, 2, 9);
        let (recon, logits) = p.forward_train(&img).unwrap();
        assert_eq!(recon.shape(), img.shape());
        assert!(recon.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(logits.shape(), &[2, k]);
        assert_eq!(p.forward_infer(&img).unwrap(), logits);
        // each sample is processed independently
        let single = p.forward_infer(&img.sample(1)).unwrap();
        for (a, b) in single.data().iter().zip(&logits.data()[k..]) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(p.predict(&img).unwrap().len(), 2);
    }
}

#[test]
fn inference_never_touches_the_decoder() {
    let c = ModelConfig::desk(2);
    let mut p = FgrNetParams::<f32>::init(&c, 5).unwrap();
    let img = random_image(&c, 1, 2);

    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    infer_on(&mut tape, &p, x, false).unwrap();
    let encoder_convs: usize = c.block_conv_counts.iter().sum();
    assert_eq!(tape.count(OpKind::Conv2d), encoder_convs);
    assert_eq!(tape.count(OpKind::Upsample), 0);
    assert_eq!(tape.count(OpKind::Sigmoid), 0);
    let decoder_params = p.specs().iter().filter(|s| s.group == ParamGroup::Decoder).count();
    let leaves = tape.count(OpKind::Leaf);
    assert_eq!(leaves, 1 + p.specs().len() - decoder_params);

    let before = p.forward_infer(&img).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let decoder: Vec<usize> = (0..p.specs().len())
        .filter(|&i| p.specs()[i].group == ParamGroup::Decoder)
        .collect();
    for i in decoder {
        for v in p.tensors_mut()[i].data_mut() {
            *v = rng.random_range(-5.0..5.0);
        }
    }
    assert_eq!(p.forward_infer(&img).unwrap(), before);
    assert_ne!(p.forward_train(&img).unwrap().0, FgrNetParams::<f32>::init(&c, 5).unwrap().forward_train(&img).unwrap().0);
}

#[test]
fn wrong_input_size_is_a_dimension_error() {
    let c = ModelConfig::desk(2);
    let p = FgrNetParams::<f32>::init(&c, 5).unwrap();
    let bad = Tensor::zeros(&[1, 3, 32, 32]);
    assert!(matches!(p.forward_infer(&bad), Err(fgrnet::Error::Dimension { .. })));
    let bad = Tensor::zeros(&[1, 1, 64, 64]);
    assert!(matches!(p.forward_infer(&bad), Err(fgrnet::Error::Dimension { .. })));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let p = FgrNetParams::<f32>::init(&ModelConfig::desk(3), 21).unwrap();
    fgrnet::model::save_checkpoint(&p, &path).unwrap();
    let q: FgrNetParams<f32> = fgrnet::model::load_checkpoint(&path).unwrap();
    assert_eq!(p, q);
    let img = random_image(p.config(), 1, 4);
    assert_eq!(p.forward_infer(&img).unwrap(), q.forward_infer(&img).unwrap());
}
