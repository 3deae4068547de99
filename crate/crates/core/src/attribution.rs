//! Edge attribution with integrated gradients.
//!
//! For each pair the clean and corrupt source activations are cached from
//! unpatched runs; the model is then re-run on token embeddings interpolated
//! from the corrupt side toward the clean side, the task loss is
//! backpropagated, and each edge scores the activation difference of its
//! source against the mean gradient at its destination input, summed over
//! positions and averaged over pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ContrastivePair, Task};
use crate::ensure;
use crate::error::{Error, Result};
use crate::model::{EdgeGraph, EmbedInput, Model};
use crate::patching::{prepare_pairs, Direction, PreparedPair};
use crate::tape::ValueId;
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LogitMem,
    LogitDiff,
    NegLogitMem,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::LogitMem => "logit_mem",
            LossKind::LogitDiff => "logit_diff",
            LossKind::NegLogitMem => "neg_logit_mem",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "logit_mem" => Ok(LossKind::LogitMem),
            "logit_diff" => Ok(LossKind::LogitDiff),
            "neg_logit_mem" => Ok(LossKind::NegLogitMem),
            other => Err(Error::contract(format!("unknown loss '{other}'"))),
        }
    }

    /// Loss kinds the task registry admits for each task.
    pub fn allowed_for(task: Task) -> &'static [LossKind] {
        match task {
            Task::Decision => &[LossKind::LogitDiff, LossKind::LogitMem],
            Task::Branch => &[LossKind::NegLogitMem],
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub loss: LossKind,
    /// Number of interpolation steps (m).
    pub ig_steps: usize,
    pub direction: Direction,
    pub ranking: Ranking,
    /// Provenance: digest of the model the scores were computed on.
    #[serde(default)]
    pub model_digest: String,
    /// Provenance: structural signature of the edge graph.
    #[serde(default)]
    pub graph: String,
}

impl AttributionConfig {
    pub fn new(loss: LossKind, ig_steps: usize, direction: Direction) -> Self {
        AttributionConfig {
            loss,
            ig_steps,
            direction,
            ranking: Ranking::Absolute,
            model_digest: String::new(),
            graph: String::new(),
        }
    }
}

/// Importance scores aligned to the graph's canonical edge order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeScores {
    pub config: AttributionConfig,
    pub dataset_digest: String,
    pub scores: Vec<f64>,
}

impl EdgeScores {
    /// Edge indices ordered by importance under the configured ranking rule
    /// (ties break toward the lower index).
    pub fn ranked_edges(&self) -> Vec<usize> {
        let key = |i: usize| match self.config.ranking {
            Ranking::Absolute => self.scores[i].abs(),
            Ranking::Signed => self.scores[i],
        };
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            key(b)
                .partial_cmp(&key(a))
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<EdgeScores> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Scalar task loss over final-position logits.
pub fn loss_value(logits_final: &[f64], pair: &ContrastivePair, kind: LossKind) -> Result<f64> {
    let check = |t: u32| -> Result<usize> {
        let i = t as usize;
        ensure!(
            i < logits_final.len(),
            "token id {t} out of vocabulary (size {})",
            logits_final.len()
        );
        Ok(i)
    };
    let mem = logits_final[check(pair.eval_mem_token())?];
    Ok(match kind {
        LossKind::LogitMem => mem,
        LossKind::LogitDiff => mem - logits_final[check(pair.t_pred)?],
        LossKind::NegLogitMem => -mem,
    })
}

/// Record the task loss on a tape, reading the final row of `logits`.
fn loss_on_tape(
    tape: &mut Tape,
    logits: ValueId,
    pair: &ContrastivePair,
    kind: LossKind,
) -> Result<ValueId> {
    let last = tape.value(logits).rows() - 1;
    let vocab = tape.value(logits).cols();
    let check = |t: u32| -> Result<usize> {
        let i = t as usize;
        ensure!(i < vocab, "token id {t} out of vocabulary (size {vocab})");
        Ok(i)
    };
    let mem = check(pair.eval_mem_token())?;
    Ok(match kind {
        LossKind::LogitMem => tape.pick(logits, last, mem),
        LossKind::LogitDiff => {
            let m = tape.pick(logits, last, mem);
            let p = tape.pick(logits, last, check(pair.t_pred)?);
            tape.sub(m, p)
        }
        LossKind::NegLogitMem => {
            let m = tape.pick(logits, last, mem);
            tape.scale(m, -1.0)
        }
    })
}

/// Per-pair edge contributions under a caller-supplied loss recorder.
/// This is the generic engine behind [`eap_ig`]; tests drive it with
/// composite losses.
pub fn eap_ig_scores_with<F>(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &[PreparedPair],
    ig_steps: usize,
    record_loss: F,
) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, ValueId, &ContrastivePair) -> Result<ValueId> + Sync,
{
    ensure!(ig_steps >= 1, "ig_steps must be at least 1");
    ensure!(!prepared.is_empty(), "empty dataset");

    let per_pair: Vec<Vec<f64>> = prepared
        .par_iter()
        .map(|p| {
            let clean_emb = &p.clean_cache.source_out[0];
            let corrupt_emb = &p.corrupt_cache.source_out[0];
            let n_dests = graph.dests.len();
            let mut grad_sum: Vec<Tensor> =
                (0..n_dests).map(|_| Tensor::zeros(clean_emb.shape())).collect();

            for k in 1..=ig_steps {
                let alpha = k as f64 / ig_steps as f64;
                // z' + (k/m)(z - z'): from the corrupt embeddings toward clean
                let emb = corrupt_emb
                    .sub(clean_emb)
                    .scale(-alpha)
                    .add(corrupt_emb);
                let mut run = model.forward_graph(graph, EmbedInput::Embeddings(emb), None)?;
                let loss = record_loss(&mut run.tape, run.logits, &p.pair)?;
                let lv = run.tape.value(loss).scalar_value();
                if !lv.is_finite() {
                    return Err(Error::numeric(
                        format!("eap_ig step {k}"),
                        "non-finite loss",
                    ));
                }
                run.tape.backward(loss).map_err(|e| match e {
                    Error::Numeric { context, detail } => Error::Numeric {
                        context: format!("eap_ig step {k}: {context}"),
                        detail,
                    },
                    other => other,
                })?;
                for (acc, &dest) in grad_sum.iter_mut().zip(&run.dest_inputs) {
                    acc.add_assign(run.tape.grad(dest));
                }
            }
            let inv_m = 1.0 / ig_steps as f64;

            // activation differences per source: z'_u - z_u
            let diffs: Vec<Tensor> = p
                .corrupt_cache
                .source_out
                .iter()
                .zip(&p.clean_cache.source_out)
                .map(|(zc, z)| zc.sub(z))
                .collect();

            let scores: Vec<f64> = graph
                .edges
                .iter()
                .map(|e| diffs[e.source].dot(&grad_sum[e.dest]) * inv_m)
                .collect();
            Ok(scores)
        })
        .collect::<Result<_>>()?;

    // mean over pairs, accumulated in dataset order
    let n_edges = graph.n_edges();
    let mut out = vec![0.0; n_edges];
    for scores in &per_pair {
        for (o, s) in out.iter_mut().zip(scores) {
            *o += s;
        }
    }
    let inv = 1.0 / per_pair.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// EAP-IG importance scores for every edge under a task loss.
pub fn eap_ig(
    model: &Model,
    graph: &EdgeGraph,
    pairs: &[ContrastivePair],
    config: &AttributionConfig,
) -> Result<EdgeScores> {
    ensure!(!pairs.is_empty(), "empty dataset");
    let prepared = prepare_pairs(model, pairs)?;
    let kind = config.loss;
    let scores = eap_ig_scores_with(model, graph, &prepared, config.ig_steps, |t, l, p| {
        loss_on_tape(t, l, p, kind)
    })?;
    for s in &scores {
        ensure!(s.is_finite(), "non-finite edge score");
    }
    let mut config = config.clone();
    config.model_digest = model.digest();
    config.graph = graph.signature();
    Ok(EdgeScores {
        config,
        dataset_digest: crate::dataset::pairs_digest(pairs),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn pair(clean: Vec<u32>, corrupt: Vec<u32>, t_mem: u32, t_pred: u32) -> ContrastivePair {
        ContrastivePair {
            task: Task::Decision,
            clean,
            corrupt,
            t_mem,
            t_pred,
            target: None,
            src_ids: vec![],
        }
    }

    #[test]
    fn identical_pair_scores_are_exactly_zero() {
        let m = Model::new(ModelConfig::new(2, 2, 12, 6, 20, 19, 32, 4));
        let g = m.edge_graph();
        let pairs = vec![pair(vec![1, 2, 3, 4], vec![1, 2, 3, 4], 5, 6)];
        let cfg = AttributionConfig::new(LossKind::LogitDiff, 3, Direction::Noising);
        let scores = eap_ig(&m, &g, &pairs, &cfg).unwrap();
        assert!(scores.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_step_evaluates_gradient_at_clean_input() {
        // with m=1 the only interpolation point is the clean side
        let m = Model::new(ModelConfig::new(2, 2, 12, 6, 20, 19, 32, 8));
        let g = m.edge_graph();
        let pairs = vec![pair(vec![1, 2, 3], vec![4, 5, 6], 7, 8)];
        let prepared = prepare_pairs(&m, &pairs).unwrap();

        let cfg = AttributionConfig::new(LossKind::LogitMem, 1, Direction::Noising);
        let got = eap_ig(&m, &g, &pairs, &cfg).unwrap().scores;

        // plain EAP oracle: one backward at the clean embeddings
        let clean_emb = (*prepared[0].clean_cache.source_out[0]).clone();
        let mut run = m
            .forward_graph(&g, EmbedInput::Embeddings(clean_emb), None)
            .unwrap();
        let last = run.tape.value(run.logits).rows() - 1;
        let loss = run.tape.pick(run.logits, last, 7);
        run.tape.backward(loss).unwrap();
        for (ei, e) in g.edges.iter().enumerate() {
            let diff = prepared[0].corrupt_cache.source_out[e.source]
                .sub(&prepared[0].clean_cache.source_out[e.source]);
            let want = diff.dot(run.tape.grad(run.dest_inputs[e.dest]));
            assert!(
                (got[ei] - want).abs() < 1e-12,
                "edge {ei}: {} vs {want}",
                got[ei]
            );
        }
    }

    #[test]
    fn loss_values() {
        let p = pair(vec![1], vec![2], 3, 3);
        // t_mem == t_pred gives zero logit difference
        assert_eq!(loss_value(&[0.0, 1.0, 2.0, 5.0], &p, LossKind::LogitDiff).unwrap(), 0.0);
        // uniform logits give zero difference as well
        let p2 = pair(vec![1], vec![2], 0, 3);
        assert_eq!(loss_value(&[2.0, 2.0, 2.0, 2.0], &p2, LossKind::LogitDiff).unwrap(), 0.0);
        assert_eq!(loss_value(&[4.0, 0.0, 0.0, 1.0], &p2, LossKind::LogitMem).unwrap(), 4.0);
        assert_eq!(
            loss_value(&[4.0, 0.0, 0.0, 1.0], &p2, LossKind::NegLogitMem).unwrap(),
            -4.0
        );
        // out-of-vocab token is a contract violation
        let bad = pair(vec![1], vec![2], 9, 0);
        assert!(loss_value(&[0.0, 1.0], &bad, LossKind::LogitMem).is_err());
    }

    #[test]
    fn scores_are_linear_in_the_loss() {
        let m = Model::new(ModelConfig::new(2, 2, 12, 6, 20, 19, 32, 13));
        let g = m.edge_graph();
        let pairs = vec![
            pair(vec![1, 2, 3, 4], vec![5, 6, 7, 8], 9, 10),
            pair(vec![2, 4, 6, 8], vec![1, 3, 5, 7], 11, 12),
        ];
        let prepared = prepare_pairs(&m, &pairs).unwrap();
        let (a, b) = (1.7, -0.6);

        let s_mem = eap_ig_scores_with(&m, &g, &prepared, 4, |t, l, p| {
            loss_on_tape(t, l, p, LossKind::LogitMem)
        })
        .unwrap();
        let s_diff = eap_ig_scores_with(&m, &g, &prepared, 4, |t, l, p| {
            loss_on_tape(t, l, p, LossKind::LogitDiff)
        })
        .unwrap();
        // combined loss a*logit_mem + b*logit_diff on the tape
        let s_combo = eap_ig_scores_with(&m, &g, &prepared, 4, |t, l, p| {
            let l1 = loss_on_tape(t, l, p, LossKind::LogitMem)?;
            let l2 = loss_on_tape(t, l, p, LossKind::LogitDiff)?;
            let l1s = t.scale(l1, a);
            let l2s = t.scale(l2, b);
            Ok(t.add(l1s, l2s))
        })
        .unwrap();
        for i in 0..g.n_edges() {
            let want = a * s_mem[i] + b * s_diff[i];
            assert!(
                (s_combo[i] - want).abs() < 1e-8,
                "edge {i}: {} vs {want}",
                s_combo[i]
            );
        }
    }

    /// On a network that is linear in all activations, each edge's score
    /// equals its direct single-edge patching effect, for any m.
    #[test]
    fn linear_network_scores_equal_direct_effects() {
        let mut config = ModelConfig::new(2, 2, 12, 6, 20, 19, 32, 17);
        config.identity_layernorm = true;
        config.uniform_attention = true;
        config.identity_activation = true;
        let m = Model::new(config);
        let g = m.edge_graph();
        let pairs = vec![pair(vec![1, 2, 3, 4], vec![5, 6, 7, 8], 9, 10)];
        let prepared = prepare_pairs(&m, &pairs).unwrap();

        for ig_steps in [1, 5] {
            let cfg = AttributionConfig {
                ig_steps,
                ..AttributionConfig::new(LossKind::LogitDiff, ig_steps, Direction::Noising)
            };
            let scores = eap_ig(&m, &g, &pairs, &cfg).unwrap().scores;
            for (ei, _) in g.edges.iter().enumerate() {
                let effect = crate::patching::direct_edge_effect(
                    &m,
                    &g,
                    &prepared[0],
                    ei,
                    Direction::Noising,
                    |logits| loss_value(logits, &pairs[0], LossKind::LogitDiff).unwrap(),
                )
                .unwrap();
                assert!(
                    (scores[ei] - effect).abs() < 1e-8,
                    "m={ig_steps} edge {ei}: score {} vs effect {effect}",
                    scores[ei]
                );
            }
        }
    }

    #[test]
    fn ranking_rules() {
        let mut scores = EdgeScores {
            config: AttributionConfig::new(LossKind::LogitMem, 1, Direction::Noising),
            dataset_digest: String::new(),
            scores: vec![1.0, -3.0, 2.0, -3.0],
        };
        assert_eq!(scores.ranked_edges(), vec![1, 3, 2, 0]);
        scores.config.ranking = Ranking::Signed;
        assert_eq!(scores.ranked_edges(), vec![2, 0, 1, 3]);
    }
}
