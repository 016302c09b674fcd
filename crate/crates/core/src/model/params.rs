use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Index of a tensor inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadsIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    /// Concatenated heads (N·d_k) → d.
    pub out: LinearIds,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayerIds {
    pub norm1: NormIds,
    pub attn: HeadsIds,
    pub norm2: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Debug, Clone)]
pub(crate) struct StreamIds {
    pub embed: LinearIds,
    pub pos: ParamId,
    pub layers: Vec<EncoderLayerIds>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub hsi: StreamIds,
    pub lidar: Option<StreamIds>,
    pub cross: Option<HeadsIds>,
    pub head: LinearIds,
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Small,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Registry {
    specs: Vec<Spec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(Spec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> LinearIds {
        LinearIds {
            w: self.add(format!("{prefix}.w"), vec![din, dout], Init::Xavier),
            b: self.add(format!("{prefix}.b"), vec![dout], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.add(format!("{prefix}.gamma"), vec![d], Init::Ones),
            beta: self.add(format!("{prefix}.beta"), vec![d], Init::Zeros),
        }
    }

    fn heads(&mut self, prefix: &str, cfg: &ModelConfig) -> HeadsIds {
        let (d, dk, n) = (cfg.embed_dim, cfg.head_dim, cfg.heads);
        let mut proj = |kind: &str| -> Vec<ParamId> {
            (0..n)
                .map(|h| self.add(format!("{prefix}.{kind}.h{h}"), vec![d, dk], Init::Xavier))
                .collect()
        };
        let (wq, wk, wv) = (proj("wq"), proj("wk"), proj("wv"));
        let out = self.linear(&format!("{prefix}.out"), n * dk, d);
        HeadsIds { wq, wk, wv, out }
    }

    fn stream(&mut self, prefix: &str, tokens: usize, cfg: &ModelConfig) -> StreamIds {
        let d = cfg.embed_dim;
        let embed = self.linear(&format!("{prefix}.embed"), cfg.tokens_len(), d);
        let pos = self.add(format!("{prefix}.pos"), vec![tokens, d], Init::Small);
        let layers = (0..cfg.encoder_layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                EncoderLayerIds {
                    norm1: self.norm(&format!("{p}.norm1"), d),
                    attn: self.heads(&format!("{p}.attn"), cfg),
                    norm2: self.norm(&format!("{p}.norm2"), d),
                    fc1: self.linear(&format!("{p}.fc1"), d, cfg.mlp_dim),
                    fc2: self.linear(&format!("{p}.fc2"), cfg.mlp_dim, d),
                }
            })
            .collect();
        StreamIds { embed, pos, layers }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Registry) {
    let mut reg = Registry::default();
    let hsi = reg.stream("hsi", cfg.bands, cfg);
    let (lidar, cross) = match cfg.arch {
        Architecture::CrossAttention => {
            let lidar = reg.stream("lidar", cfg.lidar_channels, cfg);
            let cross = reg.heads("cross", cfg);
            (Some(lidar), Some(cross))
        }
        Architecture::HsiOnly => (None, None),
    };
    let head = reg.linear("head", cfg.embed_dim, cfg.num_classes);
    (
        Layout {
            hsi,
            lidar,
            cross,
            head,
        },
        reg,
    )
}

/// Every learnable tensor of the network, addressed by name or [`ParamId`].
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.tensors[id.0])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |id| &mut self.tensors[id.0])
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Parameters with the layout implied by `config` and values from
    /// `tensors`, checked name-by-name and shape-by-shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, reg) = build_layout(&config);
        if named.len() != reg.specs.len() {
            return Err(Error::Validation(format!(
                "config needs {} tensors, got {}",
                reg.specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (spec, (name, t)) in reg.specs.iter().zip(named) {
            if spec.name != name {
                return Err(Error::Validation(format!(
                    "expected tensor {:?}, got {name:?}",
                    spec.name
                )));
            }
            if spec.shape != t.shape() {
                return Err(Error::shape("load tensor", &spec.shape, t.shape()));
            }
            if !t.data().iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("tensor {name} has non-finite values")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            names,
            tensors,
            layout,
        })
    }
}

/// Seeded initialization: Xavier-uniform weights, zero biases, unit norm
/// gains, positional encodings uniform in ±0.02.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let (layout, reg) = build_layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names = Vec::with_capacity(reg.specs.len());
    let mut tensors = Vec::with_capacity(reg.specs.len());
    for spec in reg.specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Small => (0..n).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            Init::Xavier => {
                let a = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        };
        tensors.push(Tensor::new(spec.shape, data)?);
        names.push(spec.name);
    }
    Ok(ModelParams {
        config: config.clone(),
        names,
        tensors,
        layout,
    })
}
