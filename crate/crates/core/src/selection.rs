//! Band rankings from trained models.
//!
//! The cross-attention strategy averages the head-averaged LiDAR→band weights
//! over samples. The two self-attention strategies score each band by the
//! attention mass it receives inside the HSI encoder (column means of the
//! self-attention maps, averaged over layers, heads and samples). Variant A
//! additionally averages in a cross-stream score: the LiDAR encoder output
//! used as one extra query against the last HSI layer's keys.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{HsiCube, SamplePair};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::numerics::{pairwise_sum, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Cross,
    SelfA,
    SelfB,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Cross, Strategy::SelfA, Strategy::SelfB];

    /// Architecture a model must have for this strategy.
    pub fn architecture(self) -> Architecture {
        match self {
            Strategy::Cross | Strategy::SelfA => Architecture::CrossAttention,
            Strategy::SelfB => Architecture::HsiOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cross => "cross",
            Strategy::SelfA => "self-a",
            Strategy::SelfB => "self-b",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str().replace('-', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}; expected cross, self-a or self-b")))
    }
}

/// Self-attention ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Global,
    PerClass(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandWeightRecord {
    pub sample_index: usize,
    pub label: u32,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRanking {
    pub scores: Vec<f64>,
    /// Band indices by descending score, ties by ascending index.
    pub order: Vec<usize>,
    pub strategy: Strategy,
    pub aggregation: Aggregation,
}

impl BandRanking {
    pub fn from_scores(scores: Vec<f64>, strategy: Strategy, aggregation: Aggregation) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self {
            scores,
            order,
            strategy,
            aggregation,
        }
    }

    pub fn bands(&self) -> usize {
        self.scores.len()
    }

    /// 1-based rank of each band.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.bands()];
        for (r, &b) in self.order.iter().enumerate() {
            ranks[b] = r + 1;
        }
        ranks
    }
}

fn require_arch(params: &ModelParams, arch: Architecture, what: &str) -> Result<()> {
    let got = params.config().arch;
    if got != arch {
        return Err(Error::Contract(format!("{what} needs a {arch:?} model, got {got:?}")));
    }
    Ok(())
}

fn row_mean(t: &Tensor) -> Vec<f64> {
    let (rows, cols) = t.dims2().expect("attention maps are matrices");
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

/// Head-averaged cross-attention weights per sample, averaged over the LiDAR
/// query rows when there are several channels.
pub fn collect_weights(params: &ModelParams, samples: &[SamplePair]) -> Result<Vec<BandWeightRecord>> {
    require_arch(params, Architecture::CrossAttention, "cross-attention weights")?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let out = params.forward(s)?;
            let att = out.att_weights.expect("cross-attention model yields weights");
            Ok(BandWeightRecord {
                sample_index: i,
                label: s.label,
                weights: row_mean(&att),
            })
        })
        .collect()
}

fn mean_columns(rows: &[&[f64]]) -> Vec<f64> {
    let b = rows[0].len();
    let mut col = vec![0.0; rows.len()];
    (0..b)
        .map(|j| {
            for (c, r) in col.iter_mut().zip(rows) {
                *c = r[j];
            }
            pairwise_sum(&col) / rows.len() as f64
        })
        .collect()
}

/// Mean of the record weights, over all records or one class.
pub fn aggregate(records: &[BandWeightRecord], mode: Aggregation) -> Result<BandRanking> {
    aggregate_as(records, mode, Strategy::Cross)
}

pub fn aggregate_as(records: &[BandWeightRecord], mode: Aggregation, strategy: Strategy) -> Result<BandRanking> {
    let rows: Vec<&[f64]> = records
        .iter()
        .filter(|r| match mode {
            Aggregation::Global => true,
            Aggregation::PerClass(c) => r.label == c,
        })
        .map(|r| r.weights.as_slice())
        .collect();
    if rows.is_empty() {
        return Err(Error::Validation(match mode {
            Aggregation::Global => "no weight records to aggregate".into(),
            Aggregation::PerClass(c) => format!("class {c} has no weight records"),
        }));
    }
    let b = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != b) {
        return Err(Error::shape("aggregate", &[b], &[bad.len()]));
    }
    Ok(BandRanking::from_scores(mean_columns(&rows), strategy, mode))
}

/// First `k` bands of the ranking, returned in ascending index order.
pub fn select_top_k(ranking: &BandRanking, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > ranking.bands() {
        return Err(Error::Validation(format!(
            "k must lie in 1..={}, got {k}",
            ranking.bands()
        )));
    }
    let mut bands = ranking.order[..k].to_vec();
    bands.sort_unstable();
    Ok(bands)
}

/// Per-sample self-attention scores (one record per sample).
pub fn selfattn_records(params: &ModelParams, samples: &[SamplePair], variant: Variant) -> Result<Vec<BandWeightRecord>> {
    let arch = match variant {
        Variant::A => Architecture::CrossAttention,
        Variant::B => Architecture::HsiOnly,
    };
    require_arch(params, arch, &format!("self-attention variant {variant:?}"))?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (_, trace) = params.forward_traced(s)?;
            let cols: Vec<Vec<f64>> = trace.hsi_self.iter().flatten().map(row_mean).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let mut weights = mean_columns(&refs);
            if let Some(cross) = trace.cross_stream.filter(|_| variant == Variant::A) {
                for (w, c) in weights.iter_mut().zip(row_mean(&cross)) {
                    *w = 0.5 * (*w + c);
                }
            }
            Ok(BandWeightRecord {
                sample_index: i,
                label: s.label,
                weights,
            })
        })
        .collect()
}

pub fn selfattn_importance(params: &ModelParams, samples: &[SamplePair], variant: Variant) -> Result<BandRanking> {
    let records = selfattn_records(params, samples, variant)?;
    let strategy = match variant {
        Variant::A => Strategy::SelfA,
        Variant::B => Strategy::SelfB,
    };
    aggregate_as(&records, Aggregation::Global, strategy)
}

/// Global ranking for any strategy.
pub fn rank_bands(params: &ModelParams, samples: &[SamplePair], strategy: Strategy) -> Result<BandRanking> {
    match strategy {
        Strategy::Cross => aggregate(&collect_weights(params, samples)?, Aggregation::Global),
        Strategy::SelfA => selfattn_importance(params, samples, Variant::A),
        Strategy::SelfB => selfattn_importance(params, samples, Variant::B),
    }
}

/// Cube restricted to strictly increasing `bands`.
pub fn reduce_cube(cube: &HsiCube, bands: &[usize]) -> Result<HsiCube> {
    if bands.is_empty() {
        return Err(Error::Validation("no bands selected".into()));
    }
    if let Some(&bad) = bands.iter().find(|&&b| b >= cube.bands) {
        return Err(Error::Validation(format!(
            "band {bad} out of range for a {}-band cube",
            cube.bands
        )));
    }
    if bands.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("band indices must be strictly increasing".into()));
    }
    let mut values = Vec::with_capacity(cube.pixels() * bands.len());
    for px in cube.values().chunks_exact(cube.bands) {
        values.extend(bands.iter().map(|&b| px[b]));
    }
    let out = HsiCube::new(cube.width, cube.height, bands.len(), values)?;
    match &cube.band_names {
        Some(names) => out.with_band_names(bands.iter().map(|&b| names[b].clone()).collect()),
        None => Ok(out),
    }
}

pub fn write_ranking_csv(ranking: &BandRanking, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ranks = ranking.ranks();
    let mut out = String::from("band_index,score,rank\n");
    for (b, s) in ranking.scores.iter().enumerate() {
        out.push_str(&format!("{b},{s},{}\n", ranks[b]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scores by band index from a ranking CSV.
pub fn read_ranking_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("band_index,score,rank") {
        return Err(Error::load(path, "expected header band_index,score,rank"));
    }
    let mut scores = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = match fields.as_slice() {
            [b, s, _] => b.trim().parse::<usize>().ok().zip(s.trim().parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((b, s)) if b == scores.len() => scores.push(s),
            _ => return Err(Error::load(path, format!("bad row {}: {line:?}", n + 2))),
        }
    }
    if scores.is_empty() {
        return Err(Error::load(path, "ranking has no rows"));
    }
    Ok(scores)
}

/// Newline-delimited band indices.
pub fn write_band_list(bands: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = bands.iter().map(|b| format!("{b}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_band_list(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse()
                .map_err(|_| Error::load(path, format!("bad band index {l:?}")))
        })
        .collect()
}
