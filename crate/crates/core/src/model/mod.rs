//! The toy decoder-only transformer and its factorized edge-graph view.
//!
//! Architecture: learned absolute position embeddings, pre-norm layers with
//! sequential attention→MLP, per-head Q/K/V/O projections, GELU MLP, tied to
//! nothing (separate unembedding). Normalization is applied where a component
//! *reads* the residual stream, so residual-stream edges connect raw source
//! outputs to raw destination inputs.

mod checkpoint;
mod forward;
mod graph;

pub use checkpoint::{load_model, save_model};
pub use forward::{ActivationCache, EmbedInput, GraphRun, TrainForward};
pub use graph::{edge_count_closed_form, DestNode, Edge, EdgeGraph, SourceNode};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::{ensure, Tensor};

/// Structural configuration of the transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Replace layer normalization with the identity (test configurations).
    #[serde(default)]
    pub identity_layernorm: bool,
    /// Replace attention weights with a fixed uniform causal average
    /// (test configurations; makes the network linear in its activations).
    #[serde(default)]
    pub uniform_attention: bool,
    /// Replace the MLP activation with the identity (test configurations).
    #[serde(default)]
    pub identity_activation: bool,
}

impl ModelConfig {
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        d_head: usize,
        d_mlp: usize,
        vocab_size: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> Self {
        ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_head,
            d_mlp,
            vocab_size,
            max_seq_len,
            seed,
            identity_layernorm: false,
            uniform_attention: false,
            identity_activation: false,
        }
    }

    /// Pipeline-facing validation. Zero-layer configurations are permitted
    /// only in tests and deliberately fail here.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_layers > 0, "n_layers must be positive");
        ensure!(self.n_heads > 0, "n_heads must be positive");
        ensure!(
            self.d_model == self.n_heads * self.d_head,
            "d_model ({}) must equal n_heads * d_head ({})",
            self.d_model,
            self.n_heads * self.d_head
        );
        ensure!(self.d_mlp > 0, "d_mlp must be positive");
        ensure!(self.vocab_size > 0, "vocab_size must be positive");
        ensure!(
            self.max_seq_len >= 51,
            "max_seq_len must be at least 51 (50-token context plus one)"
        );
        Ok(())
    }
}

/// Per-head projection weights.
#[derive(Debug, Clone)]
pub struct HeadWeights {
    /// `[d_model, d_head]`
    pub wq: Arc<Tensor>,
    pub wk: Arc<Tensor>,
    pub wv: Arc<Tensor>,
    /// `[d_head, d_model]`
    pub wo: Arc<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// Attention read norm, `[d_model]` each.
    pub ln1_g: Arc<Tensor>,
    pub ln1_b: Arc<Tensor>,
    /// MLP read norm.
    pub ln2_g: Arc<Tensor>,
    pub ln2_b: Arc<Tensor>,
    /// `[d_model, d_mlp]`
    pub w1: Arc<Tensor>,
    /// `[d_mlp, d_model]`
    pub w2: Arc<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Weights {
    /// `[vocab, d_model]`
    pub tok: Arc<Tensor>,
    /// `[max_seq_len, d_model]`
    pub pos: Arc<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Arc<Tensor>,
    pub lnf_b: Arc<Tensor>,
    /// `[d_model, vocab]`
    pub unembed: Arc<Tensor>,
}

impl Weights {
    /// Deterministic name/tensor enumeration used by the optimizer and the
    /// checkpoint format.
    pub fn named(&self) -> Vec<(String, &Arc<Tensor>)> {
        let mut out: Vec<(String, &Arc<Tensor>)> = vec![
            ("tok_embed".into(), &self.tok),
            ("pos_embed".into(), &self.pos),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("l{l}.h{h}.wq"), &head.wq));
                out.push((format!("l{l}.h{h}.wk"), &head.wk));
                out.push((format!("l{l}.h{h}.wv"), &head.wv));
                out.push((format!("l{l}.h{h}.wo"), &head.wo));
            }
            out.push((format!("l{l}.ln1.g"), &layer.ln1_g));
            out.push((format!("l{l}.ln1.b"), &layer.ln1_b));
            out.push((format!("l{l}.ln2.g"), &layer.ln2_g));
            out.push((format!("l{l}.ln2.b"), &layer.ln2_b));
            out.push((format!("l{l}.mlp.w1"), &layer.w1));
            out.push((format!("l{l}.mlp.w2"), &layer.w2));
        }
        out.push(("ln_f.g".into(), &self.lnf_g));
        out.push(("ln_f.b".into(), &self.lnf_b));
        out.push(("unembed".into(), &self.unembed));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Arc<Tensor>)> {
        let mut out: Vec<(String, &mut Arc<Tensor>)> = vec![
            ("tok_embed".into(), &mut self.tok),
            ("pos_embed".into(), &mut self.pos),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("l{l}.h{h}.wq"), &mut head.wq));
                out.push((format!("l{l}.h{h}.wk"), &mut head.wk));
                out.push((format!("l{l}.h{h}.wv"), &mut head.wv));
                out.push((format!("l{l}.h{h}.wo"), &mut head.wo));
            }
            out.push((format!("l{l}.ln1.g"), &mut layer.ln1_g));
            out.push((format!("l{l}.ln1.b"), &mut layer.ln1_b));
            out.push((format!("l{l}.ln2.g"), &mut layer.ln2_g));
            out.push((format!("l{l}.ln2.b"), &mut layer.ln2_b));
            out.push((format!("l{l}.mlp.w1"), &mut layer.w1));
            out.push((format!("l{l}.mlp.w2"), &mut layer.w2));
        }
        out.push(("ln_f.g".into(), &mut self.lnf_g));
        out.push(("ln_f.b".into(), &mut self.lnf_b));
        out.push(("unembed".into(), &mut self.unembed));
        out
    }
}

/// A transformer with immutable weights (training swaps them wholesale).
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights,
}

impl Model {
    /// Fresh model with seeded N(0, 0.02²) init; layernorm starts at identity.
    pub fn new(config: ModelConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        let mut randn = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Arc::new(Tensor::new(shape.to_vec(), data).expect("shape matches"))
        };
        let ones = |n: usize| Arc::new(Tensor::new(vec![n], vec![1.0; n]).expect("len"));
        let zeros = |n: usize| Arc::new(Tensor::zeros(&[n]));

        let d = config.d_model;
        let tok = randn(&[config.vocab_size, d]);
        let pos = randn(&[config.max_seq_len, d]);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                heads: (0..config.n_heads)
                    .map(|_| HeadWeights {
                        wq: randn(&[d, config.d_head]),
                        wk: randn(&[d, config.d_head]),
                        wv: randn(&[d, config.d_head]),
                        wo: randn(&[config.d_head, d]),
                    })
                    .collect(),
                ln1_g: ones(d),
                ln1_b: zeros(d),
                ln2_g: ones(d),
                ln2_b: zeros(d),
                w1: randn(&[d, config.d_mlp]),
                w2: randn(&[config.d_mlp, d]),
            })
            .collect();
        let weights = Weights {
            tok,
            pos,
            layers,
            lnf_g: ones(d),
            lnf_b: zeros(d),
            unembed: randn(&[d, config.vocab_size]),
        };
        Model { config, weights }
    }

    /// The edge graph induced by this model's shape.
    pub fn edge_graph(&self) -> EdgeGraph {
        EdgeGraph::enumerate(self.config.n_layers, self.config.n_heads)
    }

    /// Content hash of config plus weights (matches the checkpoint file's
    /// digest for a freshly saved model).
    pub fn digest(&self) -> String {
        checkpoint::digest_of(self)
    }
}
