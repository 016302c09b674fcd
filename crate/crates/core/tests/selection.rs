mod common;

use bandsel::dataio::HsiCube;
use bandsel::model::{init_params, Architecture, ModelConfig};
use bandsel::selection::*;
use bandsel::selection::Strategy;
use bandsel::Error;
use common::{random_params, random_sample};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(bands: usize, arch: Architecture) -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        arch,
        ..ModelConfig::micro(3, bands, 3, 8, 2)
    }
}

#[test]
fn houston_single_record() {
    let c = ModelConfig {
        encoder_layers: 1,
        ..ModelConfig::houston()
    };
    let p = init_params(&c).unwrap();
    let s = random_sample(&c, &mut ChaCha8Rng::seed_from_u64(0));
    let recs = collect_weights(&p, &[s]).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].weights.len(), 144);
    assert!((recs[0].weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn records_match_forward() {
    let c = cfg(5, Architecture::CrossAttention);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&c, &mut rng);
    let s = random_sample(&c, &mut rng);
    let samples = vec![s.clone(), s.clone(), random_sample(&c, &mut rng)];
    let recs = collect_weights(&p, &samples).unwrap();
    assert_eq!(recs[1], BandWeightRecord { sample_index: 1, ..recs[0].clone() });
    for (r, s) in recs.iter().zip(&samples) {
        assert_eq!(r.weights, p.forward(s).unwrap().att_weights.unwrap().data());
        assert_eq!(r.label, s.label);
    }
}

#[test]
fn multi_channel_records_average_queries() {
    let c = ModelConfig {
        lidar_channels: 2,
        ..cfg(4, Architecture::CrossAttention)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_params(&c, &mut rng);
    let s = random_sample(&c, &mut rng);
    let att = p.forward(&s).unwrap().att_weights.unwrap();
    assert_eq!(att.shape(), &[2, 4]);
    let rec = &collect_weights(&p, &[s]).unwrap()[0];
    for b in 0..4 {
        assert!((rec.weights[b] - 0.5 * (att.at2(0, b) + att.at2(1, b))).abs() < 1e-15);
    }
}

/// Sum with an error-free transformation carried in a second accumulator.
fn compensated_mean(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    (s + c) / xs.len() as f64
}

#[test]
fn aggregate_matches_compensated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let recs: Vec<BandWeightRecord> = (0..50)
        .map(|i| {
            let raw: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
            let z: f64 = raw.iter().sum();
            BandWeightRecord {
                sample_index: i,
                label: 1,
                weights: raw.iter().map(|v| v / z).collect(),
            }
        })
        .collect();
    let r = aggregate(&recs, Aggregation::Global).unwrap();
    for b in 0..12 {
        let col: Vec<f64> = recs.iter().map(|r| r.weights[b]).collect();
        assert!((r.scores[b] - compensated_mean(&col)).abs() < 1e-12);
    }
    assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn one_band_model_scores_one() {
    for arch in [Architecture::CrossAttention, Architecture::HsiOnly] {
        let c = cfg(1, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&c, &mut rng);
        let samples: Vec<_> = (0..3).map(|_| random_sample(&c, &mut rng)).collect();
        let strategies: &[Strategy] = match arch {
            Architecture::CrossAttention => &[Strategy::Cross, Strategy::SelfA],
            Architecture::HsiOnly => &[Strategy::SelfB],
        };
        for &s in strategies {
            let r = rank_bands(&p, &samples, s).unwrap();
            assert_eq!(r.scores, vec![1.0]);
            assert_eq!(r.strategy, s);
        }
    }
}

#[test]
fn identical_bands_give_uniform_scores() {
    for (arch, variant) in [(Architecture::HsiOnly, Variant::B), (Architecture::CrossAttention, Variant::A)] {
        let c = cfg(5, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&c, &mut rng);
        let pos = p.tensor_mut("hsi.pos").unwrap();
        let first = pos.row(0).to_vec();
        for r in 1..5 {
            pos.data_mut()[r * 8..(r + 1) * 8].copy_from_slice(&first);
        }
        let mut s = random_sample(&c, &mut rng);
        for px in s.hsi_patch.chunks_mut(5) {
            let v = px[0];
            px.fill(v);
        }
        let r = selfattn_importance(&p, &[s], variant).unwrap();
        for v in r.scores {
            assert!((v - 0.2).abs() < 1e-12, "{v}");
        }
    }
}

#[test]
fn variant_b_matches_brute_force_column_means() {
    let c = cfg(2, Architecture::HsiOnly);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_params(&c, &mut rng);
    let samples: Vec<_> = (0..4).map(|_| random_sample(&c, &mut rng)).collect();
    let mut expect = [0.0; 2];
    let mut n = 0.0;
    for s in &samples {
        let (_, trace) = p.forward_traced(s).unwrap();
        for layer in &trace.hsi_self {
            for m in layer {
                for j in 0..2 {
                    expect[j] += (m.at2(0, j) + m.at2(1, j)) / 2.0;
                }
                n += 1.0;
            }
        }
    }
    let r = selfattn_importance(&p, &samples, Variant::B).unwrap();
    for j in 0..2 {
        assert!((r.scores[j] - expect[j] / n).abs() < 1e-12);
    }
}

#[test]
fn variant_a_is_mean_of_self_and_cross_stream() {
    let c = cfg(3, Architecture::CrossAttention);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_params(&c, &mut rng);
    let s = random_sample(&c, &mut rng);
    let (_, trace) = p.forward_traced(&s).unwrap();
    let maps: Vec<_> = trace.hsi_self.iter().flatten().collect();
    let cross = trace.cross_stream.unwrap();
    assert_eq!(cross.shape(), &[1, 3]);
    assert!((cross.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let r = selfattn_importance(&p, &[s], Variant::A).unwrap();
    for j in 0..3 {
        let colmean: f64 = maps
            .iter()
            .map(|m| (0..3).map(|i| m.at2(i, j)).sum::<f64>() / 3.0)
            .sum::<f64>()
            / maps.len() as f64;
        assert!((r.scores[j] - 0.5 * (colmean + cross.data()[j])).abs() < 1e-12);
    }
}

#[test]
fn wrong_architecture_is_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let full = cfg(3, Architecture::CrossAttention);
    let hsi = cfg(3, Architecture::HsiOnly);
    let pf = init_params(&full).unwrap();
    let ph = init_params(&hsi).unwrap();
    let s = random_sample(&full, &mut rng);
    assert!(matches!(selfattn_importance(&pf, &[s.clone()], Variant::B), Err(Error::Contract(_))));
    assert!(matches!(selfattn_importance(&ph, &[s.clone()], Variant::A), Err(Error::Contract(_))));
    assert!(matches!(collect_weights(&ph, &[s]), Err(Error::Contract(_))));
}

#[test]
fn reduce_cube_matches_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cube = HsiCube::new(6, 5, 20, (0..600).map(|_| rng.gen()).collect()).unwrap();
    let mut idx: Vec<usize> = (0..20).collect();
    idx.shuffle(&mut rng);
    let mut pick = idx[..7].to_vec();
    pick.sort_unstable();
    let out = reduce_cube(&cube, &pick).unwrap();
    for r in 0..5 {
        for c in 0..6 {
            for (j, &b) in pick.iter().enumerate() {
                assert_eq!(out.get(r, c, j), cube.get(r, c, b));
            }
        }
    }
}

#[test]
fn ranking_and_band_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = BandRanking::from_scores(vec![0.1, 0.35, 0.2, 0.35], Strategy::Cross, Aggregation::Global);
    let path = dir.path().join("ranking.csv");
    write_ranking_csv(&r, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "band_index,score,rank\n0,0.1,4\n1,0.35,1\n2,0.2,3\n3,0.35,2\n");
    assert_eq!(read_ranking_scores(&path).unwrap(), r.scores);

    let bands = select_top_k(&r, 3).unwrap();
    let bp = dir.path().join("bands.txt");
    write_band_list(&bands, &bp).unwrap();
    assert_eq!(std::fs::read_to_string(&bp).unwrap(), "1\n2\n3\n");
    assert_eq!(read_band_list(&bp).unwrap(), bands);

    std::fs::write(&bp, "1\nx\n").unwrap();
    assert!(read_band_list(&bp).is_err());
    std::fs::write(&path, "band,score\n").unwrap();
    assert!(read_ranking_scores(&path).is_err());
}

#[test]
fn paper_k_values_select_nested_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let r = BandRanking::from_scores((0..144).map(|_| rng.gen()).collect(), Strategy::Cross, Aggregation::Global);
    let mut prev: Vec<usize> = Vec::new();
    for k in [1, 5, 10, 15, 20, 25, 30] {
        let sel = select_top_k(&r, k).unwrap();
        assert_eq!(sel.len(), k);
        assert!(prev.iter().all(|b| sel.contains(b)));
        prev = sel;
    }
}

fn records_strategy() -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..20).prop_flat_map(|(b, n)| {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, b), n).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let z: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / z).collect()
                })
                .collect()
        })
    })
}

fn to_records(rows: &[Vec<f64>]) -> Vec<BandWeightRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, w)| BandWeightRecord {
            sample_index: i,
            label: 1,
            weights: w.clone(),
        })
        .collect()
}

proptest! {
    #[test]
    fn ranking_invariants(rows in records_strategy(), seed in any::<u64>()) {
        let r = aggregate(&to_records(&rows), Aggregation::Global).unwrap();
        let b = r.bands();
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..b).collect::<Vec<_>>());
        for w in r.order.windows(2) {
            let (x, y) = (r.scores[w[0]], r.scores[w[1]]);
            prop_assert!(x > y || (x == y && w[0] < w[1]));
        }
        prop_assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for k1 in 1..=b {
            let small = select_top_k(&r, k1).unwrap();
            let large = select_top_k(&r, b).unwrap();
            prop_assert!(small.iter().all(|x| large.contains(x)));
            if k1 > 1 {
                let prev = select_top_k(&r, k1 - 1).unwrap();
                prop_assert!(prev.iter().all(|x| small.contains(x)));
            }
        }

        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r2 = aggregate(&to_records(&shuffled), Aggregation::Global).unwrap();
        for (x, y) in r.scores.iter().zip(&r2.scores) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
