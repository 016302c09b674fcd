//! Confusion matrices, OA / AA / Kappa, and the downstream fused classifier
//! (selected-band patches + LiDAR patches → one-hidden-layer MLP).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{extract_patch, HsiCube, LabelMap, LidarRaster};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, argmax, AdamState, Tape, Tensor, Var};

/// `K×K` counts; rows are true classes, columns predictions (both 1-based ids
/// mapped to index `id - 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// Count for 0-based (true, predicted) indices.
    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.k + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t * self.k..(t + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

pub fn confusion(preds: &[u32], truths: &[u32], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &t) in preds.iter().zip(truths) {
        for v in [p, t] {
            if v == 0 || v as usize > k {
                return Err(Error::Validation(format!("class id {v} outside 1..={k}")));
            }
        }
        cm.counts[(t as usize - 1) * k + p as usize - 1] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `None` for classes with no true samples.
    pub per_class: Vec<Option<f64>>,
    /// Class ids excluded from AA because they had no true samples.
    pub absent_classes: Vec<u32>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let po = cm.trace() as f64 / n;
    let per_class: Vec<Option<f64>> = (0..cm.k)
        .map(|i| match cm.row_sum(i) {
            0 => None,
            r => Some(cm.get(i, i) as f64 / r as f64),
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = defined.iter().sum::<f64>() / defined.len() as f64;
    let pe = (0..cm.k)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa = if pe == 1.0 {
        if po == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    };
    let absent_classes = per_class
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(i, _)| i as u32 + 1)
        .collect();
    Ok(MetricsReport {
        oa: po,
        aa,
        kappa,
        per_class,
        absent_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub patch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            patch_size: 3,
            hidden: 128,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One-hidden-layer ReLU network.
#[derive(Debug, Clone)]
pub struct Mlp {
    params: Vec<Tensor>,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut xavier = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
            Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
        };
        let w1 = xavier(inputs, hidden);
        let w2 = xavier(hidden, classes);
        Self {
            params: vec![w1, Tensor::zeros(&[hidden]), w2, Tensor::zeros(&[classes])],
        }
    }

    fn logits(&self, tape: &mut Tape, x: Tensor, track: bool) -> Result<([Var; 4], Var)> {
        let vars: Vec<_> = self
            .params
            .iter()
            .map(|p| if track { tape.param(p) } else { tape.constant(p.clone()) })
            .collect();
        let x = tape.constant(x);
        let h = tape.linear(x, vars[0], vars[1])?;
        let h = tape.relu(h);
        let out = tape.linear(h, vars[2], vars[3])?;
        Ok(([vars[0], vars[1], vars[2], vars[3]], out))
    }

    /// Class ids `1..=K` for each feature row.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<u32>> {
        let mut tape = Tape::new();
        let (_, out) = self.logits(&mut tape, features.clone(), false)?;
        let logits = tape.value(out);
        let k = logits.shape()[1];
        Ok(logits.data().chunks(k).map(|r| argmax(r) as u32 + 1).collect())
    }

    /// Mini-batch Adam on `features` (rows) with labels `1..=K`.
    pub fn fit(&mut self, features: &Tensor, labels: &[u32], cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        let (n, f) = features.dims2()?;
        let mut adam = AdamState::new(&self.params);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for idx in order.chunks(cfg.batch_size.max(1)) {
                let mut data = Vec::with_capacity(idx.len() * f);
                for &i in idx {
                    data.extend_from_slice(features.row(i));
                }
                let x = Tensor::new(vec![idx.len(), f], data)?;
                let y: Vec<usize> = idx.iter().map(|&i| labels[i] as usize - 1).collect();
                let mut tape = Tape::new();
                let (vars, out) = self.logits(&mut tape, x, true)?;
                let loss = tape.cross_entropy(out, &y)?;
                tape.backward(loss)?;
                let grads: Vec<Vec<f64>> = vars
                    .iter()
                    .zip(&self.params)
                    .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
                    .collect();
                adam_step(&mut self.params, &grads, &mut adam, cfg.learning_rate)?;
            }
        }
        Ok(())
    }
}

/// Patch features (all bands then all LiDAR channels, pixel-interleaved) and
/// labels for `centers`.
pub fn fusion_features(
    cube: &HsiCube,
    lidar: &LidarRaster,
    labels: &LabelMap,
    centers: &[(usize, usize)],
    patch_size: usize,
) -> Result<(Tensor, Vec<u32>)> {
    if centers.is_empty() {
        return Err(Error::Validation("no pixels to featurize".into()));
    }
    let mut data = Vec::new();
    let mut ys = Vec::with_capacity(centers.len());
    for &c in centers {
        let s = extract_patch(cube, lidar, c, patch_size)?;
        let y = labels.get(c.0, c.1);
        if y == 0 {
            return Err(Error::Validation(format!("pixel {c:?} is unlabeled")));
        }
        data.extend_from_slice(&s.hsi_patch);
        data.extend_from_slice(&s.lidar_patch);
        ys.push(y);
    }
    let f = data.len() / centers.len();
    Ok((Tensor::new(vec![centers.len(), f], data)?, ys))
}

/// Trains the MLP on `train` pixels of the (already band-reduced) cube plus
/// LiDAR and scores it on `test` pixels.
pub fn evaluate_fusion(
    cube_reduced: &HsiCube,
    lidar: &LidarRaster,
    labels: &LabelMap,
    train: &[(usize, usize)],
    test: &[(usize, usize)],
    cfg: &ClassifierConfig,
) -> Result<MetricsReport> {
    if cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("classifier hidden width and batch size must be positive".into()));
    }
    let (xtr, ytr) = fusion_features(cube_reduced, lidar, labels, train, cfg.patch_size)?;
    let (xte, yte) = fusion_features(cube_reduced, lidar, labels, test, cfg.patch_size)?;
    let k = labels.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::new(xtr.shape()[1], cfg.hidden, k, &mut rng);
    mlp.fit(&xtr, &ytr, cfg, &mut rng)?;
    let preds = mlp.predict(&xte)?;
    metrics(&confusion(&preds, &yte, k)?)
}

/// CSV with one row per labeled report: `label,oa,aa,kappa,class_1..class_K`.
/// Per-class cells are empty for absent classes.
pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let k = rows.first().map_or(0, |(_, r)| r.per_class.len());
    let mut out = String::from("label,oa,aa,kappa");
    for i in 1..=k {
        let _ = write!(out, ",class_{i}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label},{},{},{}", r.oa, r.aa, r.kappa);
        for a in &r.per_class {
            match a {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(rows: &[(String, MetricsReport)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Aligned table: one column per labeled report, rows OA / AA / Kappa in
/// percent (Kappa ×100).
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<6}", "");
    for (label, _) in rows {
        let _ = write!(out, " {label:>width$}");
    }
    out.push('\n');
    let lines: [(&str, fn(&MetricsReport) -> f64); 3] =
        [("OA", |r| r.oa), ("AA", |r| r.aa), ("Kappa", |r| r.kappa)];
    for (name, get) in lines {
        let _ = write!(out, "{name:<6}");
        for (_, r) in rows {
            let _ = write!(out, " {:>width$.2}", 100.0 * get(r));
        }
        out.push('\n');
    }
    let absent: Vec<String> = rows
        .iter()
        .filter(|(_, r)| !r.absent_classes.is_empty())
        .map(|(l, r)| format!("{l}: classes {:?} absent from AA", r.absent_classes))
        .collect();
    for line in absent {
        out.push_str(&line);
        out.push('\n');
    }
    out
}
