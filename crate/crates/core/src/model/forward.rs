//! Forward passes: the fast residual-stream path used for training,
//! generation, and activation capture, and the graph path that recomposes
//! every destination input edge-by-edge (the form patched execution and
//! attribution need).
//!
//! Both paths accumulate residual contributions in the same canonical order
//! (embed, then layer by layer: heads in head order, then MLP), so an
//! unpatched graph run reproduces the fast path bit-for-bit.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::graph::{DestNode, EdgeGraph, SourceNode};
use crate::model::Model;
use crate::tape::ValueId;
use crate::tensor::{self, argmax};
use crate::{ensure, Tape, Tensor};

/// Per-sample record of every source node's output (raw, pre-residual-write),
/// captured from one unpatched forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    /// Aligned to [`EdgeGraph::sources`]; each `[len, d_model]`.
    pub source_out: Vec<Arc<Tensor>>,
    /// `[len, vocab]`
    pub logits: Arc<Tensor>,
}

impl ActivationCache {
    pub fn seq_len(&self) -> usize {
        self.source_out[0].rows()
    }

    /// The residual stream as read by a destination: sum of all cached
    /// source outputs that write before it.
    pub fn dest_input(&self, graph: &EdgeGraph, dest: usize) -> Tensor {
        let mut acc: Option<Tensor> = None;
        for &ei in graph.incoming(dest) {
            let src = &self.source_out[graph.edges[ei].source];
            match &mut acc {
                Some(t) => t.add_assign(src),
                None => acc = Some((**src).clone()),
            }
        }
        acc.expect("every destination has incoming edges")
    }

    /// Final-layer residual stream (the logits destination's input): every
    /// source writes before the logits read, so this is the sum of all
    /// cached source outputs.
    pub fn residual_after_all_writes(&self) -> Tensor {
        let mut acc = (*self.source_out[0]).clone();
        for src in &self.source_out[1..] {
            acc.add_assign(src);
        }
        acc
    }
}

/// Input to a graph-mode forward: token ids, or a ready-made embedding-node
/// output (token + position embeddings), as attribution's interpolation uses.
pub enum EmbedInput<'a> {
    Tokens(&'a [u32]),
    Embeddings(Tensor),
}

impl EmbedInput<'_> {
    fn len(&self) -> usize {
        match self {
            EmbedInput::Tokens(t) => t.len(),
            EmbedInput::Embeddings(e) => e.rows(),
        }
    }
}

/// A recorded graph-mode forward pass.
pub struct GraphRun {
    pub tape: Tape,
    /// `[len, vocab]` logits value.
    pub logits: ValueId,
    /// Recomposed input of every destination, aligned to [`EdgeGraph::dests`].
    pub dest_inputs: Vec<ValueId>,
    /// Output of every source, aligned to [`EdgeGraph::sources`].
    pub source_outs: Vec<ValueId>,
}

impl GraphRun {
    pub fn logits_tensor(&self) -> &Tensor {
        self.tape.value(self.logits)
    }
}

/// A recorded training forward (next-token cross-entropy over the sequence).
pub struct TrainForward {
    pub tape: Tape,
    pub loss: ValueId,
    /// Weight leaf ids in [`crate::model::Weights::named`] order.
    pub weight_ids: Vec<ValueId>,
}

impl Model {
    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        ensure!(!tokens.is_empty(), "empty token sequence");
        ensure!(
            tokens.len() <= self.config.max_seq_len,
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            self.config.max_seq_len
        );
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} out of vocabulary (size {})",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Tensor {
        let d = self.config.d_model;
        let mut out = Tensor::zeros(&[tokens.len(), d]);
        for (i, &t) in tokens.iter().enumerate() {
            let row = out.row_mut(i);
            let tok = self.weights.tok.row(t as usize);
            let pos = self.weights.pos.row(i);
            for j in 0..d {
                row[j] = tok[j] + pos[j];
            }
        }
        out
    }

    fn ln_read(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
        if self.config.identity_layernorm {
            x.clone()
        } else {
            tensor::layernorm(x, gamma.data(), beta.data()).0
        }
    }

    /// Fixed uniform causal attention matrix (linear test configurations).
    fn uniform_probs(len: usize) -> Tensor {
        let mut probs = Tensor::zeros(&[len, len]);
        for i in 0..len {
            let w = 1.0 / (i + 1) as f64;
            for j in 0..=i {
                probs.row_mut(i)[j] = w;
            }
        }
        probs
    }

    /// Plain forward pass: logits at every position.
    pub fn forward(&self, tokens: &[u32]) -> Result<Tensor> {
        Ok(self.forward_cached(tokens)?.0)
    }

    /// Forward pass that also captures every source node's output.
    pub fn forward_cached(&self, tokens: &[u32]) -> Result<(Tensor, ActivationCache)> {
        self.check_tokens(tokens)?;
        let len = tokens.len();
        let scale = 1.0 / (self.config.d_head as f64).sqrt();

        let embed_out = self.embed_tokens(tokens);
        let mut source_out: Vec<Arc<Tensor>> = Vec::with_capacity(
            1 + self.config.n_layers * (self.config.n_heads + 1),
        );
        let mut resid = embed_out.clone();
        source_out.push(Arc::new(embed_out));

        for layer in &self.weights.layers {
            let ln1 = self.ln_read(&resid, &layer.ln1_g, &layer.ln1_b);
            let mut head_outs = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let v = ln1.matmul(&head.wv);
                let probs = if self.config.uniform_attention {
                    Self::uniform_probs(len)
                } else {
                    let q = ln1.matmul(&head.wq);
                    let k = ln1.matmul(&head.wk);
                    tensor::softmax_rows(&q.matmul_bt(&k).scale(scale), true)
                };
                let ctx = probs.matmul(&v);
                head_outs.push(ctx.matmul(&head.wo));
            }
            for h in head_outs {
                resid.add_assign(&h);
                source_out.push(Arc::new(h));
            }
            let x = self.ln_read(&resid, &layer.ln2_g, &layer.ln2_b);
            let pre = x.matmul(&layer.w1);
            let act = if self.config.identity_activation {
                pre
            } else {
                Tensor::new(
                    pre.shape().to_vec(),
                    pre.data().iter().map(|v| tensor::gelu(*v)).collect(),
                )
                .expect("same shape")
            };
            let mlp_out = act.matmul(&layer.w2);
            resid.add_assign(&mlp_out);
            source_out.push(Arc::new(mlp_out));
        }

        let y = self.ln_read(&resid, &self.weights.lnf_g, &self.weights.lnf_b);
        let logits = y.matmul(&self.weights.unembed);
        if !logits.all_finite() {
            return Err(Error::numeric("forward", "non-finite logits"));
        }
        let logits = Arc::new(logits);
        Ok((
            (*logits).clone(),
            ActivationCache {
                source_out,
                logits,
            },
        ))
    }

    /// Greedy decoding: repeatedly append the argmax next token (ties break
    /// to the lowest token id).
    pub fn generate_greedy(&self, context: &[u32], n_tokens: usize) -> Result<Vec<u32>> {
        ensure!(n_tokens >= 1, "n_tokens must be at least 1");
        self.check_tokens(context)?;
        ensure!(
            context.len() + n_tokens <= self.config.max_seq_len,
            "generation would exceed max_seq_len"
        );
        let mut seq = context.to_vec();
        let mut out = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let logits = self.forward(&seq)?;
            let next = argmax(logits.row(logits.rows() - 1)) as u32;
            seq.push(next);
            out.push(next);
        }
        Ok(out)
    }

    /// Argmax next token after every prefix, from a single forward pass
    /// (`result[i]` is the prediction after `tokens[..=i]`).
    pub fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>> {
        let logits = self.forward(tokens)?;
        Ok((0..tokens.len())
            .map(|i| argmax(logits.row(i)) as u32)
            .collect())
    }

    /// Training forward: records the whole computation on a tape and returns
    /// the mean next-token cross-entropy along with the weight leaf ids.
    pub fn forward_train(&self, tokens: &[u32]) -> Result<TrainForward> {
        self.check_tokens(tokens)?;
        ensure!(tokens.len() >= 2, "training needs at least two tokens");
        let len = tokens.len();
        let scale = 1.0 / (self.config.d_head as f64).sqrt();
        let mut tape = Tape::new();

        // leaf every weight in named order so gradients align with the
        // optimizer state
        let named = self.weights.named();
        let weight_ids: Vec<ValueId> = named
            .iter()
            .map(|(_, t)| tape.leaf_shared(Arc::clone(t)))
            .collect();
        let id_of = |name: &str| -> ValueId {
            let idx = named
                .iter()
                .position(|(n, _)| n == name)
                .expect("known weight name");
            weight_ids[idx]
        };

        let tok_id = id_of("tok_embed");
        let pos_id = id_of("pos_embed");
        let e_tok = tape.embed(tok_id, tokens);
        let positions: Vec<u32> = (0..len as u32).collect();
        let e_pos = tape.embed(pos_id, &positions);
        let mut resid = tape.add(e_tok, e_pos);

        for (l, layer) in self.weights.layers.iter().enumerate() {
            let ln1 = if self.config.identity_layernorm {
                resid
            } else {
                let g = id_of(&format!("l{l}.ln1.g"));
                let b = id_of(&format!("l{l}.ln1.b"));
                tape.layernorm(resid, g, b)
            };
            let mut head_outs = Vec::with_capacity(layer.heads.len());
            for h in 0..layer.heads.len() {
                let wv = id_of(&format!("l{l}.h{h}.wv"));
                let v = tape.matmul(ln1, wv);
                let probs = if self.config.uniform_attention {
                    tape.leaf(Self::uniform_probs(len))
                } else {
                    let wq = id_of(&format!("l{l}.h{h}.wq"));
                    let wk = id_of(&format!("l{l}.h{h}.wk"));
                    let q = tape.matmul(ln1, wq);
                    let k = tape.matmul(ln1, wk);
                    let scores = tape.matmul_bt(q, k);
                    let scaled = tape.scale(scores, scale);
                    tape.softmax(scaled, true)
                };
                let ctx = tape.matmul(probs, v);
                let wo = id_of(&format!("l{l}.h{h}.wo"));
                head_outs.push(tape.matmul(ctx, wo));
            }
            for h in head_outs {
                resid = tape.add(resid, h);
            }
            let x = if self.config.identity_layernorm {
                resid
            } else {
                let g = id_of(&format!("l{l}.ln2.g"));
                let b = id_of(&format!("l{l}.ln2.b"));
                tape.layernorm(resid, g, b)
            };
            let w1 = id_of(&format!("l{l}.mlp.w1"));
            let pre = tape.matmul(x, w1);
            let act = if self.config.identity_activation {
                pre
            } else {
                tape.gelu(pre)
            };
            let w2 = id_of(&format!("l{l}.mlp.w2"));
            let mlp_out = tape.matmul(act, w2);
            resid = tape.add(resid, mlp_out);
        }

        let y = if self.config.identity_layernorm {
            resid
        } else {
            let g = id_of("ln_f.g");
            let b = id_of("ln_f.b");
            tape.layernorm(resid, g, b)
        };
        let unembed = id_of("unembed");
        let logits = tape.matmul(y, unembed);
        let loss = tape.cross_entropy(logits, &tokens[1..]);
        let lv = tape.value(loss).scalar_value();
        if !lv.is_finite() {
            return Err(Error::numeric("forward_train", "non-finite loss"));
        }
        Ok(TrainForward {
            tape,
            loss,
            weight_ids,
        })
    }

    /// Graph-mode forward: every destination's input is recomposed from its
    /// incoming edges. `patch` optionally supplies a per-edge mask (`true` =
    /// live value from this run, `false` = the donor value for the edge's
    /// source) plus donor activations aligned to sources.
    pub fn forward_graph(
        &self,
        graph: &EdgeGraph,
        input: EmbedInput<'_>,
        patch: Option<(&[bool], &[Arc<Tensor>])>,
    ) -> Result<GraphRun> {
        let len = input.len();
        ensure!(len >= 1, "empty input");
        ensure!(
            len <= self.config.max_seq_len,
            "sequence length {} exceeds max_seq_len {}",
            len,
            self.config.max_seq_len
        );
        if let Some((bits, donors)) = patch {
            ensure!(
                bits.len() == graph.n_edges(),
                "mask has {} bits for {} edges",
                bits.len(),
                graph.n_edges()
            );
            ensure!(
                donors.len() == graph.sources.len(),
                "donor cache has {} sources, graph has {}",
                donors.len(),
                graph.sources.len()
            );
            for d in donors {
                ensure!(
                    d.rows() == len && d.cols() == self.config.d_model,
                    "donor activation shape {:?} does not match [len={}, d_model={}]",
                    d.shape(),
                    len,
                    self.config.d_model
                );
            }
        }
        let scale = 1.0 / (self.config.d_head as f64).sqrt();
        let mut tape = Tape::new();

        let embed_id = match input {
            EmbedInput::Tokens(tokens) => {
                self.check_tokens(tokens)?;
                let tok = tape.leaf_shared(Arc::clone(&self.weights.tok));
                let pos = tape.leaf_shared(Arc::clone(&self.weights.pos));
                let e_tok = tape.embed(tok, tokens);
                let positions: Vec<u32> = (0..len as u32).collect();
                let e_pos = tape.embed(pos, &positions);
                tape.add(e_tok, e_pos)
            }
            EmbedInput::Embeddings(e) => {
                ensure!(
                    e.cols() == self.config.d_model,
                    "embedding width {} does not match d_model {}",
                    e.cols(),
                    self.config.d_model
                );
                tape.leaf(e)
            }
        };

        let n_sources = graph.sources.len();
        let mut source_outs: Vec<Option<ValueId>> = vec![None; n_sources];
        source_outs[0] = Some(embed_id);
        let mut donor_ids: Vec<Option<ValueId>> = vec![None; n_sources];
        let mut dest_inputs: Vec<Option<ValueId>> = vec![None; graph.dests.len()];

        // recompose one destination's input from its incoming edges
        let recompose = |tape: &mut Tape,
                             source_outs: &[Option<ValueId>],
                             donor_ids: &mut Vec<Option<ValueId>>,
                             dest: usize|
         -> ValueId {
            let mut terms = Vec::with_capacity(graph.incoming(dest).len());
            for &ei in graph.incoming(dest) {
                let src = graph.edges[ei].source;
                let live = match patch {
                    None => true,
                    Some((bits, _)) => bits[ei],
                };
                if live {
                    terms.push(source_outs[src].expect("source computed before read"));
                } else {
                    let (_, donors) = patch.expect("donor patch present");
                    let id = donor_ids[src].get_or_insert_with(|| {
                        tape.leaf_shared(Arc::clone(&donors[src]))
                    });
                    terms.push(*id);
                }
            }
            tape.sum_many(&terms)
        };

        let ln_on_tape = |tape: &mut Tape, x: ValueId, g: &Arc<Tensor>, b: &Arc<Tensor>| {
            if self.config.identity_layernorm {
                x
            } else {
                let gid = tape.leaf_shared(Arc::clone(g));
                let bid = tape.leaf_shared(Arc::clone(b));
                tape.layernorm(x, gid, bid)
            }
        };

        for (l, layer) in self.weights.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                let qi = graph.dest_index(DestNode::HeadQ { layer: l, head: h });
                let ki = graph.dest_index(DestNode::HeadK { layer: l, head: h });
                let vi = graph.dest_index(DestNode::HeadV { layer: l, head: h });
                let q_in = recompose(&mut tape, &source_outs, &mut donor_ids, qi);
                let k_in = recompose(&mut tape, &source_outs, &mut donor_ids, ki);
                let v_in = recompose(&mut tape, &source_outs, &mut donor_ids, vi);
                dest_inputs[qi] = Some(q_in);
                dest_inputs[ki] = Some(k_in);
                dest_inputs[vi] = Some(v_in);

                let v_ln = ln_on_tape(&mut tape, v_in, &layer.ln1_g, &layer.ln1_b);
                let wv = tape.leaf_shared(Arc::clone(&head.wv));
                let v = tape.matmul(v_ln, wv);
                let probs = if self.config.uniform_attention {
                    tape.leaf(Self::uniform_probs(len))
                } else {
                    let q_ln = ln_on_tape(&mut tape, q_in, &layer.ln1_g, &layer.ln1_b);
                    let k_ln = ln_on_tape(&mut tape, k_in, &layer.ln1_g, &layer.ln1_b);
                    let wq = tape.leaf_shared(Arc::clone(&head.wq));
                    let wk = tape.leaf_shared(Arc::clone(&head.wk));
                    let q = tape.matmul(q_ln, wq);
                    let k = tape.matmul(k_ln, wk);
                    let scores = tape.matmul_bt(q, k);
                    let scaled = tape.scale(scores, scale);
                    tape.softmax(scaled, true)
                };
                let ctx = tape.matmul(probs, v);
                let wo = tape.leaf_shared(Arc::clone(&head.wo));
                let out = tape.matmul(ctx, wo);
                let src_idx = graph.source_index(SourceNode::Head { layer: l, head: h });
                source_outs[src_idx] = Some(out);
            }

            let mi = graph.dest_index(DestNode::MlpIn { layer: l });
            let m_in = recompose(&mut tape, &source_outs, &mut donor_ids, mi);
            dest_inputs[mi] = Some(m_in);
            let x = ln_on_tape(&mut tape, m_in, &layer.ln2_g, &layer.ln2_b);
            let w1 = tape.leaf_shared(Arc::clone(&layer.w1));
            let pre = tape.matmul(x, w1);
            let act = if self.config.identity_activation {
                pre
            } else {
                tape.gelu(pre)
            };
            let w2 = tape.leaf_shared(Arc::clone(&layer.w2));
            let out = tape.matmul(act, w2);
            let src_idx = graph.source_index(SourceNode::Mlp { layer: l });
            source_outs[src_idx] = Some(out);
        }

        let li = graph.dest_index(DestNode::Logits);
        let l_in = recompose(&mut tape, &source_outs, &mut donor_ids, li);
        dest_inputs[li] = Some(l_in);
        let y = ln_on_tape(&mut tape, l_in, &self.weights.lnf_g, &self.weights.lnf_b);
        let unembed = tape.leaf_shared(Arc::clone(&self.weights.unembed));
        let logits = tape.matmul(y, unembed);

        if !tape.value(logits).all_finite() {
            return Err(Error::numeric("forward_graph", "non-finite logits"));
        }

        Ok(GraphRun {
            tape,
            logits,
            dest_inputs: dest_inputs
                .into_iter()
                .map(|v| v.expect("all destinations visited"))
                .collect(),
            source_outs: source_outs
                .into_iter()
                .map(|v| v.expect("all sources computed"))
                .collect(),
        })
    }
}
