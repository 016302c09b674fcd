use super::params::{EncoderLayerIds, HeadsIds, LinearIds, ModelParams, NormIds, ParamId, StreamIds};
use crate::dataio::{tokenize, SamplePair};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Class scores, shape `[K]`; softmax is applied only in the loss.
    pub logits: Tensor,
    /// Head-averaged cross-attention weights, `C×B`. `None` for the
    /// HSI-only architecture.
    pub att_weights: Option<Tensor>,
    /// Pooled feature fed to the classifier, shape `[d]`.
    pub fused: Tensor,
}

/// Attention maps harvested for the self-attention band-importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `[layer][head]` self-attention matrices of the HSI stream, each `B×B`.
    pub hsi_self: Vec<Vec<Tensor>>,
    /// Head-averaged `C×B` weights of the LiDAR encoder output used as an
    /// extra query against the last HSI layer's keys.
    pub cross_stream: Option<Tensor>,
    /// Per-head `C×B` cross-attention weights; empty for the HSI-only model.
    pub cross_heads: Vec<Tensor>,
}

/// A tape plus lazily bound parameter leaves.
pub(crate) struct Graph<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    bound: Vec<Option<Var>>,
    track_grads: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams, track_grads: bool) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            track_grads,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id);
        let v = if self.track_grads {
            self.tape.param(t)
        } else {
            self.tape.constant(t.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradient per parameter; `None` where the loss does not depend on it.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.tape.grad(v).map(<[f64]>::to_vec)))
            .collect()
    }

    fn linear(&mut self, x: Var, ids: LinearIds) -> Result<Var> {
        let (w, b) = (self.p(ids.w), self.p(ids.b));
        self.tape.linear(x, w, b)
    }

    fn norm(&mut self, x: Var, ids: NormIds) -> Result<Var> {
        let (g, b) = (self.p(ids.gamma), self.p(ids.beta));
        self.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    /// Token embedding plus positional rows.
    pub fn embed(&mut self, tokens: Var, stream: &StreamIds) -> Result<Var> {
        let e = self.linear(tokens, stream.embed)?;
        let pos = self.p(stream.pos);
        self.tape.add(e, pos)
    }

    /// Multi-head attention with queries from `q_src`, keys and values from
    /// `kv_src`. Returns the output projection and per-head weights.
    pub fn multi_head(&mut self, q_src: Var, kv_src: Var, heads: &HeadsIds) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(heads.wq.len());
        let mut weights = Vec::with_capacity(heads.wq.len());
        for h in 0..heads.wq.len() {
            let (wq, wk, wv) = (self.p(heads.wq[h]), self.p(heads.wk[h]), self.p(heads.wv[h]));
            let q = self.tape.matmul(q_src, wq)?;
            let k = self.tape.matmul(kv_src, wk)?;
            let v = self.tape.matmul(kv_src, wv)?;
            let (o, w) = self.tape.scaled_dot_attention(q, k, v)?;
            outs.push(o);
            weights.push(w);
        }
        let cat = self.tape.concat_cols(&outs)?;
        let out = self.linear(cat, heads.out)?;
        Ok((out, weights))
    }

    /// Pre-norm encoder layer. Returns the output and per-head weights.
    pub fn encoder_layer(&mut self, x: Var, layer: &EncoderLayerIds) -> Result<(Var, Vec<Var>)> {
        let h = self.norm(x, layer.norm1)?;
        let (a, w) = self.multi_head(h, h, &layer.attn)?;
        let x1 = self.tape.add(x, a)?;
        let h2 = self.norm(x1, layer.norm2)?;
        let f1 = self.linear(h2, layer.fc1)?;
        let r = self.tape.relu(f1);
        let f2 = self.linear(r, layer.fc2)?;
        let x2 = self.tape.add(x1, f2)?;
        Ok((x2, w))
    }

    /// Runs every layer; returns the output, `[layer][head]` weights, and the
    /// input of the last layer.
    pub fn encode(&mut self, x: Var, layers: &[EncoderLayerIds]) -> Result<(Var, Vec<Vec<Var>>, Var)> {
        let mut cur = x;
        let mut last_in = x;
        let mut maps = Vec::with_capacity(layers.len());
        for layer in layers {
            last_in = cur;
            let (y, w) = self.encoder_layer(cur, layer)?;
            maps.push(w);
            cur = y;
        }
        Ok((cur, maps, last_in))
    }

    /// LiDAR queries against HSI keys/values. Returns `(fused C×d,
    /// head-averaged weights C×B, per-head weights)`.
    pub fn cross_attention(&mut self, lidar: Var, hsi: Var, heads: &HeadsIds) -> Result<(Var, Var, Vec<Var>)> {
        let (fused, weights) = self.multi_head(lidar, hsi, heads)?;
        let avg = self.tape.mean_of(&weights)?;
        Ok((fused, avg, weights))
    }

    /// Mean-pools rows then applies the d→K head. Returns `(logits 1×K, pooled 1×d)`.
    pub fn classify(&mut self, fused: Var, head: LinearIds) -> Result<(Var, Var)> {
        let pooled = self.tape.mean_rows(fused)?;
        let logits = self.linear(pooled, head)?;
        Ok((logits, pooled))
    }
}

pub(crate) struct Pass {
    pub logits: Var,
    pub pooled: Var,
    pub att: Option<Var>,
    pub att_heads: Vec<Var>,
    pub hsi_maps: Vec<Vec<Var>>,
    pub hsi_last_in: Var,
    pub lidar_out: Option<Var>,
}

fn check_sample(params: &ModelParams, s: &SamplePair) -> Result<()> {
    let c = params.config();
    if s.patch_size != c.patch_size || s.bands != c.bands || s.channels != c.lidar_channels {
        return Err(Error::Validation(format!(
            "sample is {p}x{p} with {b} bands and {ch} lidar channels; model expects {}x{} with {} bands and {} channels",
            c.patch_size,
            c.patch_size,
            c.bands,
            c.lidar_channels,
            p = s.patch_size,
            b = s.bands,
            ch = s.channels
        )));
    }
    Ok(())
}

pub(crate) fn run(g: &mut Graph, sample: &SamplePair) -> Result<Pass> {
    check_sample(g.params, sample)?;
    let layout = g.params.layout.clone();
    let (hsi_tok, lidar_tok) = tokenize(sample);
    let hsi_tok = g.tape.constant(hsi_tok);
    let h0 = g.embed(hsi_tok, &layout.hsi)?;
    let (h, hsi_maps, hsi_last_in) = g.encode(h0, &layout.hsi.layers)?;

    match (&layout.lidar, &layout.cross) {
        (Some(lidar_ids), Some(cross_ids)) => {
            let lidar_tok = g.tape.constant(lidar_tok);
            let l0 = g.embed(lidar_tok, lidar_ids)?;
            let (l, _, _) = g.encode(l0, &lidar_ids.layers)?;
            let (fused, att, att_heads) = g.cross_attention(l, h, cross_ids)?;
            let (logits, pooled) = g.classify(fused, layout.head)?;
            Ok(Pass {
                logits,
                pooled,
                att: Some(att),
                att_heads,
                hsi_maps,
                hsi_last_in,
                lidar_out: Some(l),
            })
        }
        _ => {
            let (logits, pooled) = g.classify(h, layout.head)?;
            Ok(Pass {
                logits,
                pooled,
                att: None,
                att_heads: Vec::new(),
                hsi_maps,
                hsi_last_in,
                lidar_out: None,
            })
        }
    }
}

fn flat(t: &Tensor) -> Tensor {
    t.clone().reshape(vec![t.len()]).expect("non-empty")
}

fn output(g: &Graph, pass: &Pass) -> ForwardOutput {
    ForwardOutput {
        logits: flat(g.tape.value(pass.logits)),
        att_weights: pass.att.map(|a| g.tape.value(a).clone()),
        fused: flat(g.tape.value(pass.pooled)),
    }
}

/// Runs the full network on one sample.
pub fn forward(sample: &SamplePair, params: &ModelParams) -> Result<ForwardOutput> {
    params.forward(sample)
}

impl ModelParams {
    pub fn forward(&self, sample: &SamplePair) -> Result<ForwardOutput> {
        let mut g = Graph::new(self, false);
        let pass = run(&mut g, sample)?;
        Ok(output(&g, &pass))
    }

    /// Forward pass that also returns the attention maps used by the
    /// self-attention importance scores.
    pub fn forward_traced(&self, sample: &SamplePair) -> Result<(ForwardOutput, AttentionTrace)> {
        let mut g = Graph::new(self, false);
        let pass = run(&mut g, sample)?;
        let hsi_self = pass
            .hsi_maps
            .iter()
            .map(|layer| layer.iter().map(|&w| g.tape.value(w).clone()).collect())
            .collect();
        let cross_stream = match pass.lidar_out {
            Some(l) => {
                let last = self
                    .layout
                    .hsi
                    .layers
                    .last()
                    .expect("at least one encoder layer")
                    .clone();
                let hk = g.norm(pass.hsi_last_in, last.norm1)?;
                let lq = g.norm(l, last.norm1)?;
                let mut maps = Vec::with_capacity(last.attn.wq.len());
                for h in 0..last.attn.wq.len() {
                    let (wq, wk) = (g.p(last.attn.wq[h]), g.p(last.attn.wk[h]));
                    let q = g.tape.matmul(lq, wq)?;
                    let k = g.tape.matmul(hk, wk)?;
                    // values are irrelevant for the weights; reuse k
                    let (_, w) = g.tape.scaled_dot_attention(q, k, k)?;
                    maps.push(w);
                }
                let avg = g.tape.mean_of(&maps)?;
                Some(g.tape.value(avg).clone())
            }
            None => None,
        };
        Ok((
            output(&g, &pass),
            AttentionTrace {
                hsi_self,
                cross_stream,
                cross_heads: pass.att_heads.iter().map(|&w| g.tape.value(w).clone()).collect(),
            },
        ))
    }

    /// Cross-entropy of one sample (label `1..=K`).
    pub fn loss(&self, sample: &SamplePair) -> Result<f64> {
        let mut g = Graph::new(self, false);
        let pass = run(&mut g, sample)?;
        let l = ce(&mut g, pass.logits, sample.label, self.config().num_classes)?;
        Ok(g.tape.value(l).data()[0])
    }

    /// Loss of one sample and its gradient for every parameter.
    pub fn loss_and_grads(&self, sample: &SamplePair) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut g = Graph::new(self, true);
        let pass = run(&mut g, sample)?;
        let l = ce(&mut g, pass.logits, sample.label, self.config().num_classes)?;
        g.tape.backward(l)?;
        Ok((g.tape.value(l).data()[0], g.grads()))
    }

    /// `linear(tokens) + pos` for the HSI stream.
    pub fn embed_hsi(&self, tokens: &Tensor) -> Result<Tensor> {
        let stream = self.layout.hsi.clone();
        self.eager(|g| {
            let t = g.tape.constant(tokens.clone());
            g.embed(t, &stream)
        })
    }

    pub fn embed_lidar(&self, tokens: &Tensor) -> Result<Tensor> {
        let stream = self.lidar_stream()?;
        self.eager(|g| {
            let t = g.tape.constant(tokens.clone());
            g.embed(t, &stream)
        })
    }

    /// Full HSI encoder stack on `x: B×d`.
    pub fn encode_hsi(&self, x: &Tensor) -> Result<Tensor> {
        let layers = self.layout.hsi.layers.clone();
        self.eager(|g| {
            let v = g.tape.constant(x.clone());
            Ok(g.encode(v, &layers)?.0)
        })
    }

    pub fn encode_lidar(&self, x: &Tensor) -> Result<Tensor> {
        let layers = self.lidar_stream()?.layers;
        self.eager(|g| {
            let v = g.tape.constant(x.clone());
            Ok(g.encode(v, &layers)?.0)
        })
    }

    /// Returns `(fused C×d, head-averaged weights C×B)`.
    pub fn cross_attention(&self, lidar_feats: &Tensor, hsi_feats: &Tensor) -> Result<(Tensor, Tensor)> {
        let heads = self
            .layout
            .cross
            .clone()
            .ok_or_else(|| Error::Contract("HSI-only model has no cross-attention".into()))?;
        let mut g = Graph::new(self, false);
        let l = g.tape.constant(lidar_feats.clone());
        let h = g.tape.constant(hsi_feats.clone());
        let (f, w, _) = g.cross_attention(l, h, &heads)?;
        Ok((g.tape.value(f).clone(), g.tape.value(w).clone()))
    }

    /// Logits `[K]` from fused features `C×d`.
    pub fn classify(&self, fused: &Tensor) -> Result<Tensor> {
        let head = self.layout.head;
        let out = self.eager(|g| {
            let f = g.tape.constant(fused.clone());
            Ok(g.classify(f, head)?.0)
        })?;
        Ok(flat(&out))
    }

    fn lidar_stream(&self) -> Result<StreamIds> {
        self.layout
            .lidar
            .clone()
            .ok_or_else(|| Error::Contract("HSI-only model has no LiDAR stream".into()))
    }

    fn eager(&self, f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<Tensor> {
        let mut g = Graph::new(self, false);
        let v = f(&mut g)?;
        Ok(g.tape.value(v).clone())
    }
}

fn ce(g: &mut Graph, logits: Var, label: u32, k: usize) -> Result<Var> {
    if label == 0 || label as usize > k {
        return Err(Error::Validation(format!(
            "label {label} out of range 1..={k}"
        )));
    }
    g.tape.cross_entropy(logits, &[label as usize - 1])
}
