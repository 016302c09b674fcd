use bandsel::dataio::{pearson, pearson_band_lidar};
use bandsel::synthetic::{generate, generate_raw, recovery_score, Scene, SynthSpec, SynthTruth};

fn small(seed: u64, sigma: f64) -> SynthSpec {
    SynthSpec::with_random_layout(32, 32, 20, 4, 4, 4, sigma, seed).unwrap()
}

fn truth_with(planted: Vec<usize>) -> SynthTruth {
    let mut truth = generate(&small(0, 0.05)).unwrap().truth;
    truth.planted_bands = planted;
    truth
}

/// Nearest-signature classifier on the planted bands of the raw scene.
fn nearest_signature_accuracy(scene: &Scene) -> f64 {
    let t = &scene.truth;
    let (w, h) = (scene.cube.width, scene.cube.height);
    let mut correct = 0;
    for r in 0..h {
        for c in 0..w {
            let x: Vec<f64> = t.planted_bands.iter().map(|&b| scene.cube.get(r, c, b)).collect();
            let dist = |sig: &Vec<f64>| sig.iter().zip(&x).map(|(s, v)| (s - v).powi(2)).sum::<f64>();
            let best = (0..t.signatures.len())
                .min_by(|&a, &b| dist(&t.signatures[a]).total_cmp(&dist(&t.signatures[b])))
                .unwrap();
            if best as u32 + 1 == scene.labels.get(r, c) {
                correct += 1;
            }
        }
    }
    correct as f64 / (w * h) as f64
}

#[test]
fn zero_noise_planted_values_equal_signatures() {
    let scene = generate_raw(&small(1, 0.0)).unwrap();
    for r in 0..32 {
        for c in 0..32 {
            let class = scene.labels.get(r, c) as usize - 1;
            for (j, &b) in scene.truth.planted_bands.iter().enumerate() {
                assert_eq!(scene.cube.get(r, c, b), scene.truth.signatures[class][j]);
            }
        }
    }
}

#[test]
fn signatures_are_distinct_and_separated() {
    let spec = SynthSpec::standard(2);
    let truth = generate(&spec).unwrap().truth;
    let sep = 4.0 * spec.noise_sigma;
    for a in 0..truth.signatures.len() {
        for b in a + 1..truth.signatures.len() {
            let gap = truth.signatures[a]
                .iter()
                .zip(&truth.signatures[b])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(gap >= sep - 1e-12, "classes {a} {b}");
        }
    }
}

#[test]
fn redundant_bands_track_lidar() {
    let scene = generate(&SynthSpec::standard(3)).unwrap();
    let r = pearson_band_lidar(&scene.cube, &scene.lidar, 0).unwrap();
    for rb in &scene.truth.redundant {
        assert!(r[rb.band] >= 0.9, "band {} r={}", rb.band, r[rb.band]);
    }
}

#[test]
fn redundant_beats_noise_correlation_over_seeds() {
    for seed in 0..20 {
        let spec = SynthSpec::standard(seed);
        let scene = generate(&spec).unwrap();
        let r = pearson_band_lidar(&scene.cube, &scene.lidar, 0).unwrap();
        let redundant: Vec<usize> = scene.truth.redundant.iter().map(|rb| rb.band).collect();
        let min_red = redundant.iter().map(|&b| r[b].abs()).fold(f64::INFINITY, f64::min);
        let max_noise = (0..spec.bands)
            .filter(|b| !redundant.contains(b) && !spec.planted_bands.contains(b))
            .map(|b| r[b].abs())
            .fold(0.0, f64::max);
        assert!(min_red > max_noise, "seed {seed}: {min_red} vs {max_noise}");
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = generate(&SynthSpec::standard(4)).unwrap();
    let b = generate(&SynthSpec::standard(4)).unwrap();
    assert_eq!(a.cube, b.cube);
    assert_eq!(a.lidar, b.lidar);
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.truth, b.truth);
    let c = generate(&SynthSpec::standard(5)).unwrap();
    assert_ne!(a.cube, c.cube);
}

#[test]
fn normalized_into_unit_range() {
    let scene = generate(&SynthSpec::standard(6)).unwrap();
    assert!(scene.cube.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(scene.lidar.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(scene.labels.class_counts().len(), 8);
    assert!(scene.labels.class_counts().iter().all(|&n| n > 0));
}

#[test]
fn classes_separable_on_planted_bands() {
    let mut prev = 1.0;
    for sigma in [0.0, 0.02, 0.05] {
        let spec = SynthSpec {
            noise_sigma: sigma,
            ..SynthSpec::standard(7)
        };
        let acc = nearest_signature_accuracy(&generate_raw(&spec).unwrap());
        assert!(acc >= 0.99, "sigma {sigma}: {acc}");
        assert!(acc <= prev + 0.005, "sigma {sigma}: {acc} > {prev}");
        prev = acc;
    }
}

#[test]
fn lidar_alone_is_weakly_informative() {
    let scene = generate(&SynthSpec::standard(8)).unwrap();
    let labels: Vec<f64> = scene.labels.labels().iter().map(|&l| l as f64).collect();
    let r = pearson(&scene.lidar.channel(0), &labels);
    assert!(r.abs() < 0.5, "{r}");
}

#[test]
fn recovery_score_cases() {
    let truth = truth_with(vec![1, 3, 5, 7]);
    assert_eq!(recovery_score(&[1, 3, 5, 7], &truth), 1.0);
    assert_eq!(recovery_score(&[0, 2, 4, 6], &truth), 0.0);
    assert_eq!(recovery_score(&[1, 3, 4, 6], &truth), 0.5);
    assert_eq!(recovery_score(&[7, 1], &truth), 1.0);
    assert_eq!(recovery_score(&[1, 1, 2, 2], &truth), 0.25);
    assert_eq!(recovery_score(&[], &truth), 0.0);
    assert_eq!(recovery_score(&[1], &truth_with(vec![])), 0.0);
}

#[test]
fn invalid_specs_rejected() {
    let base = small(0, 0.05);
    let bad = [
        SynthSpec { classes: 1, ..base.clone() },
        SynthSpec { noise_sigma: -0.1, ..base.clone() },
        SynthSpec { noise_sigma: f64::NAN, ..base.clone() },
        SynthSpec { planted_bands: vec![3, 2], ..base.clone() },
        SynthSpec { planted_bands: vec![], ..base.clone() },
        SynthSpec { planted_bands: vec![0, 20], ..base.clone() },
        SynthSpec { lidar_redundant_bands: vec![base.planted_bands[0]], ..base.clone() },
        SynthSpec { lidar_redundant_bands: vec![19, 19], planted_bands: vec![0, 1], ..base.clone() },
        SynthSpec { width: 0, ..base.clone() },
        SynthSpec { block_size: 32, classes: 2, ..base.clone() },
        SynthSpec { classes: 32, ..base.clone() },
    ];
    for spec in bad {
        let err = generate(&spec).unwrap_err();
        assert!(err.is_usage(), "{spec:?}");
    }
    assert!(SynthSpec::with_random_layout(8, 8, 4, 2, 3, 2, 0.05, 0).is_err());
}

#[test]
fn spec_and_truth_round_trip() {
    let spec = SynthSpec::standard(9);
    assert_eq!(SynthSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    assert!(SynthSpec::from_toml("width = 4\n").is_err());
    let truth = generate(&spec).unwrap().truth;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.json");
    truth.write(&path).unwrap();
    assert_eq!(SynthTruth::read(&path).unwrap(), truth);
    assert!(SynthTruth::read(dir.path().join("missing.json")).is_err());
}
