use std::collections::HashSet;

use fgrnet::synth::{aperture, degrade, generate_fundus, high_frequency_energy, load_dataset, make_dataset, save_dataset, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn outside_aperture_is_black_inside_is_not() {
    for seed in 0..4 {
        let img = generate_fundus(seed, 64).unwrap();
        let mask = aperture(64);
        let d = img.data();
        for (i, &m) in mask.iter().enumerate() {
            let px = [d[i], d[4096 + i], d[8192 + i]];
            if m {
                assert!(px.iter().all(|&v| v > 0.0));
            } else {
                assert_eq!(px, [0.0; 3]);
            }
        }
    }
}

#[test]
fn seeds_give_different_images() {
    let mask = aperture(64);
    let inside = mask.iter().filter(|&&m| m).count();
    for seed in 0..5u64 {
        let a = generate_fundus(seed, 64).unwrap();
        let b = generate_fundus(seed + 100, 64).unwrap();
        let differ = (0..4096)
            .filter(|&i| mask[i] && (0..3).any(|c| a.data()[c * 4096 + i] != b.data()[c * 4096 + i]))
            .count();
        assert!(differ * 100 > inside, "seed {seed}: {differ} of {inside}");
    }
}

#[test]
fn optic_disk_is_brighter_than_average() {
    // the disk is the brightest structure, so the brightest 2% of pixels
    // should lie far above the in-aperture mean
    for seed in 0..4 {
        let img = generate_fundus(seed, 64).unwrap();
        let mask = aperture(64);
        let lum: Vec<f32> = (0..4096)
            .filter(|&i| mask[i])
            .map(|i| (img.data()[i] + img.data()[4096 + i] + img.data()[8192 + i]) / 3.0)
            .collect();
        let mean = lum.iter().sum::<f32>() / lum.len() as f32;
        let mut sorted = lum.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = &sorted[..lum.len() / 50];
        let top_mean = top.iter().sum::<f32>() / top.len() as f32;
        assert!(top_mean > mean * 1.4, "{top_mean} vs {mean}");
    }
}

#[test]
fn degradation_is_monotone_and_strong() {
    for seed in 0..6u64 {
        let img = generate_fundus(seed, 64).unwrap();
        let e0 = high_frequency_energy(&img);
        let at = |s: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            high_frequency_energy(&degrade(&img, s, &mut rng).unwrap().0)
        };
        assert_eq!(at(0.0), e0);
        assert!(at(1.0) < 0.2 * e0, "seed {seed}: {} vs {e0}", at(1.0));
        let mut prev = e0;
        for s in [0.1, 0.2, 0.3, 0.5, 0.7, 0.85, 1.0] {
            let e = at(s);
            assert!(e <= prev, "seed {seed} s {s}: {e} > {prev}");
            prev = e;
        }
    }
}

#[test]
fn dataset_counts_and_splits() {
    let d = make_dataset(200, Scheme::TwoClass, 1, 64).unwrap();
    assert_eq!(d.train.len(), 160);
    assert_eq!(d.test.len(), 40);
    let count = |l| d.train.iter().chain(&d.test).filter(|s| s.label == l).count();
    assert_eq!((count(0), count(1)), (100, 100));
    for s in d.train.iter().chain(&d.test) {
        assert_eq!(Scheme::TwoClass.label_for(s.gen_params.severity), Some(s.label));
    }
    let hash = |s: &fgrnet::synth::SyntheticSample| s.image.data().iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    let train: HashSet<Vec<u32>> = d.train.iter().map(hash).collect();
    assert!(d.test.iter().all(|s| !train.contains(&hash(s))));

    let d3 = make_dataset(60, Scheme::ThreeClass, 2, 32).unwrap();
    for split in [&d3.train, &d3.test] {
        let labels: HashSet<usize> = split.iter().map(|s| s.label).collect();
        assert_eq!(labels.len(), 3);
    }
    assert!(make_dataset(15, Scheme::TwoClass, 0, 64).is_err());
}

#[test]
fn datasets_are_deterministic_and_persist_losslessly() {
    let a = make_dataset(30, Scheme::ThreeClass, 9, 32).unwrap();
    let b = make_dataset(30, Scheme::ThreeClass, 9, 32).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&a, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), a);
}

#[test]
fn energy_feature_separates_two_classes() {
    // one-feature logistic model on log high-frequency energy
    let d = make_dataset(120, Scheme::TwoClass, 4, 64).unwrap();
    let feat = |s: &fgrnet::synth::SyntheticSample| high_frequency_energy(&s.image).ln();
    let train: Vec<(f64, f64)> = d.train.iter().map(|s| (feat(s), s.label as f64)).collect();
    let mean = train.iter().map(|p| p.0).sum::<f64>() / train.len() as f64;
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..2000 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for &(x, y) in &train {
            let p = 1.0 / (1.0 + (-(w * (x - mean) + b)).exp());
            gw += (p - y) * (x - mean);
            gb += p - y;
        }
        w -= 0.1 * gw / train.len() as f64;
        b -= 0.1 * gb / train.len() as f64;
    }
    let correct = d
        .test
        .iter()
        .filter(|s| ((w * (feat(s) - mean) + b > 0.0) as usize) == s.label)
        .count();
    assert!(correct as f64 / d.test.len() as f64 >= 0.85, "{correct}/{}", d.test.len());
}
