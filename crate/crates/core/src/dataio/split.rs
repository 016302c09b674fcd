use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitCounts {
    /// Training count for each class `1..=K`, in order.
    PerClass(Vec<usize>),
    /// Same training count for every class.
    Global(usize),
}

/// Train/test split request. On disk:
///
/// ```toml
/// seed = 7
/// per_class = [198, 190, 192]   # or: count = 40
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SplitSpecFile", into = "SplitSpecFile")]
pub struct SplitSpec {
    pub counts: SplitCounts,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSpecFile {
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_class: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
}

impl TryFrom<SplitSpecFile> for SplitSpec {
    type Error = String;

    fn try_from(f: SplitSpecFile) -> std::result::Result<Self, String> {
        let counts = match (f.per_class, f.count) {
            (Some(v), None) => SplitCounts::PerClass(v),
            (None, Some(n)) => SplitCounts::Global(n),
            _ => return Err("split spec needs exactly one of `per_class` or `count`".into()),
        };
        Ok(SplitSpec { counts, seed: f.seed })
    }
}

impl From<SplitSpec> for SplitSpecFile {
    fn from(s: SplitSpec) -> Self {
        let (per_class, count) = match s.counts {
            SplitCounts::PerClass(v) => (Some(v), None),
            SplitCounts::Global(n) => (None, Some(n)),
        };
        SplitSpecFile {
            seed: s.seed,
            per_class,
            count,
        }
    }
}

impl SplitSpec {
    pub fn global(count: usize, seed: u64) -> Self {
        Self {
            counts: SplitCounts::Global(count),
            seed,
        }
    }

    pub fn per_class(counts: Vec<usize>, seed: u64) -> Self {
        Self {
            counts: SplitCounts::PerClass(counts),
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad split spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split spec serializes")
    }
}

/// Pixel coordinates `(row, col)`.
pub type Centers = Vec<(usize, usize)>;

/// Per-class uniform sampling without replacement. Returns `(train, test)`,
/// each in raster order; together they cover every labeled pixel once.
pub fn split(labels: &LabelMap, spec: &SplitSpec) -> Result<(Centers, Centers)> {
    let k = labels.num_classes();
    let wanted: Vec<usize> = match &spec.counts {
        SplitCounts::Global(n) => vec![*n; k],
        SplitCounts::PerClass(v) => {
            if v.len() != k {
                return Err(Error::Validation(format!(
                    "split lists {} class counts but the label map has {k} classes",
                    v.len()
                )));
            }
            v.clone()
        }
    };

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (idx, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(idx);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, mut pixels) in by_class.into_iter().enumerate() {
        let n = wanted[ci];
        if n > pixels.len() {
            return Err(Error::Validation(format!(
                "class {} ({}) has {} labeled pixels but {n} training samples were requested",
                ci + 1,
                labels.class_names[ci],
                pixels.len()
            )));
        }
        pixels.shuffle(&mut rng);
        train.extend_from_slice(&pixels[..n]);
        test.extend_from_slice(&pixels[n..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let to_rc = |i: usize| (i / labels.width, i % labels.width);
    Ok((
        train.into_iter().map(to_rc).collect(),
        test.into_iter().map(to_rc).collect(),
    ))
}
