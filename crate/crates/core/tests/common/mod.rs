#![allow(dead_code)]

use bandsel::dataio::SamplePair;
use bandsel::model::{init_params, ModelConfig, ModelParams};
use bandsel::numerics::relative_error;
use rand::Rng;

pub fn random_sample<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> SamplePair {
    let m = cfg.patch_size * cfg.patch_size;
    SamplePair {
        hsi_patch: (0..m * cfg.bands).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        lidar_patch: (0..m * cfg.lidar_channels).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        patch_size: cfg.patch_size,
        bands: cfg.bands,
        channels: cfg.lidar_channels,
        label: rng.gen_range(1..=cfg.num_classes as u32),
        center: (0, 0),
    }
}

/// Params with every tensor (including biases, norms) drawn at random so no
/// gradient path is trivially zero.
pub fn random_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> ModelParams {
    let mut p = init_params(cfg).unwrap();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    p
}

/// Largest relative error between backprop and central differences over
/// every scalar parameter.
pub fn max_grad_error(params: &ModelParams, sample: &SamplePair, h: f64) -> (f64, String) {
    let (_, grads) = params.loss_and_grads(sample).unwrap();
    let mut p = params.clone();
    let mut worst = (0.0, String::new());
    for i in 0..p.len() {
        let n = p.tensors()[i].len();
        for j in 0..n {
            let orig = p.tensors()[i].data()[j];
            p.tensors_mut()[i].data_mut()[j] = orig + h;
            let up = p.loss(sample).unwrap();
            p.tensors_mut()[i].data_mut()[j] = orig - h;
            let down = p.loss(sample).unwrap();
            p.tensors_mut()[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let bp = grads[i].as_ref().map_or(0.0, |g| g[j]);
            let e = relative_error(bp, fd);
            if e > worst.0 {
                worst = (e, format!("{}[{j}]: backprop {bp} fd {fd}", p.names()[i]));
            }
        }
    }
    worst
}

/// Applies band permutation `perm` (new band `j` = old band `perm[j]`) to the
/// sample's HSI patch and to the HSI positional rows.
pub fn permute_bands(sample: &SamplePair, params: &ModelParams, perm: &[usize]) -> (SamplePair, ModelParams) {
    let b = sample.bands;
    let mut s = sample.clone();
    for (px, chunk) in s.hsi_patch.chunks_mut(b).enumerate() {
        for (j, &src) in perm.iter().enumerate() {
            chunk[j] = sample.hsi_patch[px * b + src];
        }
    }
    let mut p = params.clone();
    let pos = params.tensor("hsi.pos").unwrap().clone();
    let d = pos.shape()[1];
    let dst = p.tensor_mut("hsi.pos").unwrap();
    for (j, &src) in perm.iter().enumerate() {
        dst.data_mut()[j * d..(j + 1) * d].copy_from_slice(&pos.data()[src * d..(src + 1) * d]);
    }
    (s, p)
}

/// `(true, predicted)` 1-based pairs for a random `k×k` matrix with up to
/// `max_count` samples per cell.
pub fn random_pairs<R: Rng>(k: usize, max_count: u64, rng: &mut R) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for t in 1..=k as u32 {
        for p in 1..=k as u32 {
            for _ in 0..rng.gen_range(0..=max_count) {
                pairs.push((t, p));
            }
        }
    }
    pairs
}

/// OA, AA and Kappa tallied sample by sample.
pub fn brute_metrics(pairs: &[(u32, u32)], k: usize) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let mut accs = Vec::new();
    let mut chance = 0.0;
    for c in 1..=k as u32 {
        let truth = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
        let predicted = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
        let hit = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        if truth > 0.0 {
            accs.push(hit / truth);
        }
        chance += truth * predicted;
    }
    let po = agree / n;
    let pe = chance / (n * n);
    let kappa = if pe == 1.0 { f64::from(u8::from(po == 1.0)) } else { (po - pe) / (1.0 - pe) };
    (po, accs.iter().sum::<f64>() / accs.len() as f64, kappa)
}
