//! Builders for the two contrastive datasets.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{ContrastivePair, MemorizationRecord, PMContext, Task};
use crate::ensure;
use crate::error::{Error, Result};
use crate::model::Model;

/// Precomputed per-pool-sample tables: one cached forward pass gives the
/// argmax after every prefix plus prefix sums of the final residual stream
/// (for mean-pooled context embeddings at any trim length).
pub struct PoolScan {
    pub id: String,
    pub len: usize,
    /// `preds[i]` is the argmax next token after the first `i + 1` tokens.
    pub preds: Vec<u32>,
    /// `cumsum[i]` is the elementwise sum of residual rows `0..=i`.
    pub cumsum: Vec<Vec<f64>>,
    pub tokens: Vec<u32>,
}

/// Scan pool records with one forward pass each.
pub fn scan_pool(model: &Model, pool: &[&MemorizationRecord]) -> Result<Vec<PoolScan>> {
    pool.par_iter()
        .map(|r| {
            let tokens = r.full_tokens();
            let (logits, cache) = model.forward_cached(&tokens)?;
            let preds = (0..tokens.len())
                .map(|i| crate::tensor::argmax(logits.row(i)) as u32)
                .collect();
            let resid = cache.residual_after_all_writes();
            let d = resid.cols();
            let mut cumsum = Vec::with_capacity(tokens.len());
            let mut acc = vec![0.0; d];
            for i in 0..tokens.len() {
                for (a, v) in acc.iter_mut().zip(resid.row(i)) {
                    *a += v;
                }
                cumsum.push(acc.clone());
            }
            Ok(PoolScan {
                id: r.id.clone(),
                len: tokens.len(),
                preds,
                cumsum,
                tokens,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DecisionOptions {
    /// Pool samples must score strictly below this.
    pub pool_max_score: f64,
}

impl Default for DecisionOptions {
    fn default() -> Self {
        DecisionOptions {
            pool_max_score: 0.2,
        }
    }
}

/// Per-constraint rejection counts emitted alongside decision datasets.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct RejectionStats {
    pub pool_total: usize,
    /// Pool records rejected for scoring at or above the threshold.
    pub pool_rejected_score: usize,
    pub pm_total: usize,
    /// PM contexts with no candidate predicting `t_mem`.
    pub pm_rejected_no_argmax_match: usize,
    /// (pm, candidate) combinations rejected because the pool sample is
    /// shorter than the trimmed context.
    pub cand_rejected_length: usize,
    /// (pm, candidate) combinations rejected on the argmax constraint.
    pub cand_rejected_argmax: usize,
    pub pairs_built: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Choose the embedding-nearest pool candidate of the right length whose
/// argmax after `c` tokens equals `t_mem`. Returns the scan index.
fn select_nearest(
    c: usize,
    t_mem: u32,
    clean_embed: &[f64],
    scans: &[PoolScan],
    stats: &mut RejectionStats,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, scan) in scans.iter().enumerate() {
        if scan.len < c {
            stats.cand_rejected_length += 1;
            continue;
        }
        if scan.preds[c - 1] != t_mem {
            stats.cand_rejected_argmax += 1;
            continue;
        }
        let mean: Vec<f64> = scan.cumsum[c - 1].iter().map(|v| v / c as f64).collect();
        let sim = cosine(clean_embed, &mean);
        match best {
            Some((_, s)) if sim <= s => {}
            _ => best = Some((i, sim)),
        }
    }
    best.map(|(i, _)| i)
}

/// Build the memorization-decision dataset: clean sides are PM contexts,
/// corrupt sides are embedding-nearest non-memorized samples (trimmed to the
/// same length) that the model already steers to `t_mem`.
pub fn build_decision_dataset(
    pms: &[PMContext],
    pool: &[MemorizationRecord],
    model: &Model,
    opts: &DecisionOptions,
) -> Result<(Vec<ContrastivePair>, RejectionStats)> {
    ensure!(!pms.is_empty(), "no PM contexts supplied");
    let mut stats = RejectionStats {
        pool_total: pool.len(),
        pm_total: pms.len(),
        ..RejectionStats::default()
    };
    let eligible: Vec<&MemorizationRecord> = pool
        .iter()
        .filter(|r| r.score < opts.pool_max_score)
        .collect();
    stats.pool_rejected_score = pool.len() - eligible.len();

    let scans = scan_pool(model, &eligible)?;

    // mean-pooled final-residual embedding of each clean PM context
    let clean_embeds: Vec<Vec<f64>> = pms
        .par_iter()
        .map(|pm| {
            let (_, cache) = model.forward_cached(&pm.context)?;
            let resid = cache.residual_after_all_writes();
            let d = resid.cols();
            let mut mean = vec![0.0; d];
            for i in 0..resid.rows() {
                for (m, v) in mean.iter_mut().zip(resid.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= resid.rows() as f64;
            }
            Ok(mean)
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (pm, embed) in pms.iter().zip(&clean_embeds) {
        let c = pm.context.len();
        match select_nearest(c, pm.t_mem, embed, &scans, &mut stats) {
            Some(i) => {
                pairs.push(ContrastivePair {
                    task: Task::Decision,
                    clean: pm.context.clone(),
                    corrupt: scans[i].tokens[..c].to_vec(),
                    t_mem: pm.t_mem,
                    t_pred: pm.t_pred,
                    target: None,
                    src_ids: vec![pm.source_id.clone(), scans[i].id.clone()],
                });
            }
            None => stats.pm_rejected_no_argmax_match += 1,
        }
    }
    stats.pairs_built = pairs.len();
    if pairs.is_empty() {
        return Err(Error::Search(format!(
            "decision dataset came out empty; rejection counts: {stats:?}"
        )));
    }
    Ok((pairs, stats))
}

/// Build the branch-comparison dataset: clean = PM context + memorized next
/// token, corrupt = PM context + the model's predicted token. The evaluation
/// target is the corpus token following `t_mem`.
pub fn build_branch_dataset(
    pms: &[PMContext],
    records_by_id: &BTreeMap<String, &MemorizationRecord>,
) -> Result<(Vec<ContrastivePair>, usize)> {
    ensure!(!pms.is_empty(), "no PM contexts supplied");
    let mut pairs = Vec::new();
    let mut dropped_no_successor = 0usize;
    for pm in pms {
        let record = records_by_id.get(&pm.source_id).ok_or_else(|| {
            Error::contract(format!("PM context references unknown sample {}", pm.source_id))
        })?;
        let full = record.full_tokens();
        let c = pm.context.len();
        debug_assert_eq!(full[c], pm.t_mem);
        if c + 1 >= full.len() {
            dropped_no_successor += 1;
            continue;
        }
        let mut clean = pm.context.clone();
        clean.push(pm.t_mem);
        let mut corrupt = pm.context.clone();
        corrupt.push(pm.t_pred);
        pairs.push(ContrastivePair {
            task: Task::Branch,
            clean,
            corrupt,
            t_mem: pm.t_mem,
            t_pred: pm.t_pred,
            target: Some(full[c + 1]),
            src_ids: vec![pm.source_id.clone()],
        });
    }
    Ok((pairs, dropped_no_successor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn scan(id: &str, len: usize, pred: u32, embed_dir: f64) -> PoolScan {
        PoolScan {
            id: id.into(),
            len,
            preds: vec![pred; len],
            cumsum: (0..len)
                .map(|i| vec![(i + 1) as f64 * embed_dir, (i + 1) as f64])
                .collect(),
            tokens: (0..len as u32).collect(),
        }
    }

    #[test]
    fn select_prefers_argmax_match_then_similarity() {
        let mut stats = RejectionStats::default();
        let scans = vec![
            scan("p0", 10, 5, 1.0),   // wrong token
            scan("p1", 10, 7, -1.0),  // right token, opposite direction
            scan("p2", 10, 7, 1.0),   // right token, aligned
            scan("p3", 3, 7, 1.0),    // too short
        ];
        let clean = vec![1.0, 1.0];
        let got = select_nearest(5, 7, &clean, &scans, &mut stats);
        assert_eq!(got, Some(2));
        assert_eq!(stats.cand_rejected_argmax, 1);
        assert_eq!(stats.cand_rejected_length, 1);
    }

    #[test]
    fn no_argmax_match_rejects_all() {
        let mut stats = RejectionStats::default();
        let scans = vec![scan("p0", 10, 5, 1.0), scan("p1", 10, 6, 1.0)];
        let got = select_nearest(5, 7, &vec![1.0, 0.0], &scans, &mut stats);
        assert_eq!(got, None);
        assert_eq!(stats.cand_rejected_argmax, 2);
    }

    fn pm(id: &str, context: Vec<u32>, t_mem: u32, t_pred: u32) -> PMContext {
        let divergence_pos = context.len() - 1;
        PMContext {
            source_id: id.into(),
            context,
            divergence_pos,
            t_mem,
            t_pred,
            bleu_at_trim: 0.1,
        }
    }

    #[test]
    fn branch_pairs_differ_only_at_final_position() {
        let tokens: Vec<u32> = (0..30).collect();
        let record = MemorizationRecord {
            id: "s-1".into(),
            domain: Domain::Wiki,
            context: tokens[..15].to_vec(),
            continuation: tokens[15..].to_vec(),
            generation: tokens[15..].to_vec(),
            score: 1.0,
        };
        let mut by_id = BTreeMap::new();
        by_id.insert(record.id.clone(), &record);
        let pms = vec![pm("s-1", tokens[..10].to_vec(), 10, 99)];
        let (pairs, dropped) = build_branch_dataset(&pms, &by_id).unwrap();
        assert_eq!(dropped, 0);
        let p = &pairs[0];
        assert_eq!(p.clean.len(), p.corrupt.len());
        let diffs: Vec<usize> = (0..p.clean.len())
            .filter(|&i| p.clean[i] != p.corrupt[i])
            .collect();
        assert_eq!(diffs, vec![p.clean.len() - 1]);
        // target is the corpus token at divergence_pos + 2
        assert_eq!(p.target, Some(tokens[pms[0].divergence_pos + 2]));
        assert_eq!(p.eval_mem_token(), 11);
    }

    #[test]
    fn branch_drops_pm_without_successor() {
        let tokens: Vec<u32> = (0..12).collect();
        let record = MemorizationRecord {
            id: "s-2".into(),
            domain: Domain::Code,
            context: tokens[..6].to_vec(),
            continuation: tokens[6..].to_vec(),
            generation: tokens[6..].to_vec(),
            score: 1.0,
        };
        let mut by_id = BTreeMap::new();
        by_id.insert(record.id.clone(), &record);
        // trimmed context of 11 tokens: t_mem is the final token, no successor
        let pms = vec![pm("s-2", tokens[..11].to_vec(), 11, 99)];
        let (pairs, dropped) = build_branch_dataset(&pms, &by_id).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn empty_pm_list_is_contract_violation() {
        let by_id = BTreeMap::new();
        assert!(build_branch_dataset(&[], &by_id).is_err());
    }
}
