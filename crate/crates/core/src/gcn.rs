//! Multi-head attention graph convolutional classifier.
//!
//! Pipeline: linear node embedding → one or more blocks of
//! `ReLU(Σ_k A^k X W^k)` → flatten → dense + ReLU → classifier. Every
//! prunable weight (embedding, per-head filters, dense layer) is a
//! [`LatentLayer`]; attention matrices and the classifier stay dense.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CompGraph, Var};
use crate::bandstop::{effective_weights_node, BandStopConfig, LatentLayer};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// One graph: node signal `U` (s×n) and its class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub node_signal: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcnConfig {
    pub nodes: usize,
    /// Raw per-node dimension (3·M after temporal chunking).
    pub raw_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub filters: usize,
    pub dense_dim: usize,
    pub classes: usize,
    /// Number of stacked attention + convolution blocks.
    pub blocks: usize,
    /// Row-stochastic n×n matrix the attention heads start from.
    pub adjacency_init: Tensor,
}

impl GcnConfig {
    /// Default architecture: 16 embedding channels, 8 heads, 32 filters,
    /// a 64-wide dense layer and a single block.
    pub fn new(raw_dim: usize, classes: usize, adjacency_init: Tensor) -> Result<Self> {
        let (n, _) = adjacency_init.dims2()?;
        let cfg = Self {
            nodes: n,
            raw_dim,
            embed_dim: 16,
            heads: 8,
            filters: 32,
            dense_dim: 64,
            classes,
            blocks: 1,
            adjacency_init,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("nodes", self.nodes),
            ("raw_dim", self.raw_dim),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("filters", self.filters),
            ("dense_dim", self.dense_dim),
            ("classes", self.classes),
            ("blocks", self.blocks),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Contract(format!("GCN dimension `{name}` must be positive")));
        }
        if self.adjacency_init.shape() != [self.nodes, self.nodes] {
            return Err(shape_err(
                "GcnConfig",
                format!("adjacency {:?} for {} nodes", self.adjacency_init.shape(), self.nodes),
            ));
        }
        self.adjacency_init.check_finite()?;
        for i in 0..self.nodes {
            let row: f64 = (0..self.nodes).map(|j| self.adjacency_init.at(i, j)).sum();
            if (row - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!("adjacency row {i} sums to {row}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnBlock {
    pub attention: Vec<Tensor>,
    pub conv: Vec<LatentLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub config: GcnConfig,
    /// When false, latent tensors are used as plain weights (dense training,
    /// magnitude-pruning baseline, hard-exported models).
    pub gated: bool,
    pub embed: LatentLayer,
    pub blocks: Vec<GcnBlock>,
    pub dense: LatentLayer,
    pub classifier: Tensor,
}

/// Graph handles for every parameter of a [`GcnModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed: Var,
    pub attention: Vec<Vec<Var>>,
    pub conv: Vec<Vec<Var>>,
    pub dense: Var,
    pub classifier: Var,
}

impl ModelVars {
    /// Inverse of [`ModelVars::all`]: splits `leaves` laid out in
    /// [`GcnModel::params_mut`] order.
    pub fn from_leaves(model: &GcnModel, leaves: &[Var]) -> Result<Self> {
        let expected = 3 + model.blocks.iter().map(|b| b.attention.len() + b.conv.len()).sum::<usize>();
        if leaves.len() != expected {
            return Err(shape_err("bind", format!("{} leaves for {expected} parameters", leaves.len())));
        }
        let mut it = leaves.iter().copied();
        let embed = it.next().expect("counted");
        let mut attention = Vec::with_capacity(model.blocks.len());
        let mut conv = Vec::with_capacity(model.blocks.len());
        for b in &model.blocks {
            attention.push(it.by_ref().take(b.attention.len()).collect());
            conv.push(it.by_ref().take(b.conv.len()).collect());
        }
        let dense = it.next().expect("counted");
        let classifier = it.next().expect("counted");
        Ok(Self { embed, attention, conv, dense, classifier })
    }

    /// All parameters, in [`GcnModel::params_mut`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embed];
        for (att, conv) in self.attention.iter().zip(&self.conv) {
            v.extend(att);
            v.extend(conv);
        }
        v.push(self.dense);
        v.push(self.classifier);
        v
    }

    /// Prunable latent tensors, in [`GcnModel::prunable_layers`] order.
    pub fn latents(&self) -> Vec<Var> {
        let mut v = vec![self.embed];
        for conv in &self.conv {
            v.extend(conv);
        }
        v.push(self.dense);
        v
    }
}

/// Per-layer prunable parameter counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

pub fn count_layers(layers: &[(String, &LatentLayer)]) -> Result<ParamCount> {
    if layers.is_empty() {
        return Err(Error::Contract("model has no prunable layers".into()));
    }
    let per_layer: Vec<(String, usize)> = layers.iter().map(|(n, l)| (n.clone(), l.numel())).collect();
    let total = per_layer.iter().map(|(_, c)| c).sum();
    Ok(ParamCount { per_layer, total })
}

pub fn count_params(model: &GcnModel) -> Result<ParamCount> {
    count_layers(&model.named_prunable_layers())
}

/// ReLU or identity after aggregation and convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// `f(Σ_k A^k Uᵀ W^k)` for one graph with node signal `u` (s×n); n×C result.
pub fn graph_conv(g: &mut CompGraph, attention: &[Var], u: Var, filters: &[Var], f: Activation) -> Result<Var> {
    let ut = g.transpose(u)?;
    graph_conv_nodes(g, attention, ut, filters, f)
}

/// As [`graph_conv`] on node-major features: `x` stacks one n×s block per
/// graph, and all graphs share the attention matrices and filters.
pub fn graph_conv_nodes(g: &mut CompGraph, attention: &[Var], x: Var, filters: &[Var], f: Activation) -> Result<Var> {
    if attention.is_empty() || attention.len() != filters.len() {
        return Err(shape_err(
            "graph_conv",
            format!("{} attention matrices vs {} filter banks", attention.len(), filters.len()),
        ));
    }
    let mut acc: Option<Var> = None;
    for (&a, &w) in attention.iter().zip(filters) {
        let aggregated = g.block_left_matmul(a, x)?;
        let head = g.matmul(aggregated, w)?;
        acc = Some(match acc {
            None => head,
            Some(s) => g.add(s, head)?,
        });
    }
    let pre = acc.expect("at least one head");
    Ok(match f {
        Activation::Relu => g.relu(pre),
        Activation::Identity => pre,
    })
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / math::sqrt(rows as f64);
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(-0.5..0.5) * scale)
}

impl GcnModel {
    /// Fresh parameters: latent tensors uniform in `[−0.5, 0.5]/√fan_in`,
    /// attention heads at the initial adjacency plus N(0, 0.01²) noise.
    pub fn init<R: Rng + ?Sized>(config: GcnConfig, gate: Option<BandStopConfig>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let cfg = gate.unwrap_or_default();
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let n = config.nodes;
        let embed = LatentLayer::new(uniform_init(rng, config.raw_dim, config.embed_dim), cfg)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let d_in = if b == 0 { config.embed_dim } else { config.filters };
            let mut attention = Vec::with_capacity(config.heads);
            let mut conv = Vec::with_capacity(config.heads);
            for _ in 0..config.heads {
                let a = Tensor::from_fn(&[n, n], |i| config.adjacency_init.data()[i] + noise.sample(rng));
                attention.push(a);
                conv.push(LatentLayer::new(uniform_init(rng, d_in, config.filters), cfg)?);
            }
            blocks.push(GcnBlock { attention, conv });
        }
        let dense = LatentLayer::new(uniform_init(rng, n * config.filters, config.dense_dim), cfg)?;
        let classifier = uniform_init(rng, config.dense_dim, config.classes);
        Ok(Self { config, gated: gate.is_some(), embed, blocks, dense, classifier })
    }

    pub fn prunable_layers(&self) -> Vec<&LatentLayer> {
        let mut v = vec![&self.embed];
        for b in &self.blocks {
            v.extend(b.conv.iter());
        }
        v.push(&self.dense);
        v
    }

    pub fn prunable_layers_mut(&mut self) -> Vec<&mut LatentLayer> {
        let mut v = vec![&mut self.embed];
        for b in &mut self.blocks {
            v.extend(b.conv.iter_mut());
        }
        v.push(&mut self.dense);
        v
    }

    pub fn named_prunable_layers(&self) -> Vec<(String, &LatentLayer)> {
        let mut v = vec![(String::from("embed"), &self.embed)];
        for (bi, b) in self.blocks.iter().enumerate() {
            for (h, l) in b.conv.iter().enumerate() {
                v.push((format!("block{bi}.conv{h}"), l));
            }
        }
        v.push((String::from("dense"), &self.dense));
        v
    }

    /// All trainable tensors paired with whether they are prunable.
    pub fn params_mut(&mut self) -> Vec<(&mut Tensor, bool)> {
        let mut v: Vec<(&mut Tensor, bool)> = vec![(&mut self.embed.latent, true)];
        for b in &mut self.blocks {
            for a in b.attention.iter_mut() {
                v.push((a, false));
            }
            for c in b.conv.iter_mut() {
                v.push((&mut c.latent, true));
            }
        }
        v.push((&mut self.dense.latent, true));
        v.push((&mut self.classifier, false));
        v
    }

    /// Shared gate configuration (that of the embedding layer).
    pub fn band_stop(&self) -> BandStopConfig {
        self.embed.config
    }

    pub fn set_band_stop(&mut self, cfg: BandStopConfig) {
        for l in self.prunable_layers_mut() {
            l.config = cfg;
        }
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut CompGraph) -> ModelVars {
        let embed = g.param(self.embed.latent.clone());
        let mut attention = Vec::new();
        let mut conv = Vec::new();
        for b in &self.blocks {
            attention.push(b.attention.iter().map(|a| g.param(a.clone())).collect());
            conv.push(b.conv.iter().map(|c| g.param(c.latent.clone())).collect());
        }
        let dense = g.param(self.dense.latent.clone());
        let classifier = g.param(self.classifier.clone());
        ModelVars { embed, attention, conv, dense, classifier }
    }

    fn weight(&self, g: &mut CompGraph, latent: Var) -> Result<Var> {
        if self.gated {
            effective_weights_node(g, latent, &self.band_stop())
        } else {
            Ok(latent)
        }
    }

    /// Logits (B×classes) for a node-major batch `x` of B graphs.
    pub fn logits(&self, g: &mut CompGraph, vars: &ModelVars, x: Var, batch: usize) -> Result<Var> {
        let c = &self.config;
        let (rows, s) = g.value(x).dims2()?;
        if rows != batch * c.nodes || s != c.raw_dim {
            return Err(shape_err(
                "forward",
                format!("input {rows}x{s}, expected {}x{}", batch * c.nodes, c.raw_dim),
            ));
        }
        let e = self.weight(g, vars.embed)?;
        let mut h = g.matmul(x, e)?;
        for (att, conv) in vars.attention.iter().zip(&vars.conv) {
            let filters = conv.iter().map(|&w| self.weight(g, w)).collect::<Result<Vec<_>>>()?;
            h = graph_conv_nodes(g, att, h, &filters, Activation::Relu)?;
        }
        let flat = g.reshape(h, &[batch, c.nodes * c.filters])?;
        let d = self.weight(g, vars.dense)?;
        let hidden = g.matmul(flat, d)?;
        let hidden = g.relu(hidden);
        g.matmul(hidden, vars.classifier)
    }

    /// Stacks the transposed node signals of `samples` into a node-major
    /// (B·n)×s matrix.
    pub fn batch_input(&self, samples: &[&GraphSample]) -> Result<Tensor> {
        let (s, n) = (self.config.raw_dim, self.config.nodes);
        let mut data = Vec::with_capacity(samples.len() * n * s);
        for sample in samples {
            if sample.node_signal.shape() != [s, n] {
                return Err(shape_err(
                    "forward",
                    format!("sample signal {:?}, model expects [{s}, {n}]", sample.node_signal.shape()),
                ));
            }
            data.extend(sample.node_signal.transpose()?.into_data());
        }
        Tensor::new(vec![samples.len() * n, s], data)
    }

    /// Logits of a batch, value only.
    pub fn forward_batch(&self, samples: &[&GraphSample]) -> Result<Tensor> {
        if samples.is_empty() {
            return Err(Error::Contract("forward on an empty batch".into()));
        }
        let mut g = CompGraph::new();
        let vars = self.bind(&mut g);
        let x = g.constant(self.batch_input(samples)?);
        let out = self.logits(&mut g, &vars, x, samples.len())?;
        Ok(g.value(out).clone())
    }

    /// Logits of one sample, shape `[classes]`.
    pub fn forward(&self, sample: &GraphSample) -> Result<Tensor> {
        self.forward_batch(&[sample])?.reshape(&[self.config.classes])
    }

    /// Inference copy: gated latents replaced by their hard export.
    pub fn hard_export(&self) -> GcnModel {
        let mut m = self.clone();
        if self.gated {
            for l in m.prunable_layers_mut() {
                l.latent = l.hard_export();
            }
            m.gated = false;
        }
        m
    }

    pub fn check_finite(&self) -> Result<()> {
        for l in self.prunable_layers() {
            l.latent.check_finite()?;
        }
        for b in &self.blocks {
            for a in &b.attention {
                a.check_finite()?;
            }
        }
        self.classifier.check_finite()
    }
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let mut g = CompGraph::new();
    let l = g.constant(logits.clone());
    let ce = g.softmax_cross_entropy(l, &[label])?;
    Ok(g.value(ce).item())
}
