//! Divergence-point search: shorten a perfectly memorized context until the
//! model's continuation falls off the memorized path.

use super::bleu::bleu;
use super::{MemorizationRecord, PMContext};
use crate::ensure;
use crate::error::Result;
use crate::model::Model;

/// The two model behaviors the search needs; abstracted so the trimming
/// logic is testable against scripted models.
pub trait SequenceModel: Sync {
    /// Argmax next token after every prefix: `out[i]` follows `tokens[..=i]`.
    fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>>;
    /// Greedy continuation of `context` by `n` tokens.
    fn generate(&self, context: &[u32], n: usize) -> Result<Vec<u32>>;
}

impl SequenceModel for Model {
    fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>> {
        Model::prefix_argmax(self, tokens)
    }

    fn generate(&self, context: &[u32], n: usize) -> Result<Vec<u32>> {
        self.generate_greedy(context, n)
    }
}

/// Trim tokens off the end of the context one at a time. Return the longest
/// trimmed context where (a) the greedy regeneration of the rest of the
/// sample has BLEU below `threshold` against the ground truth, and (b) the
/// argmax next token differs from the memorized next token. `None` when no
/// trim point satisfies both.
pub fn find_divergence(
    record: &MemorizationRecord,
    model: &impl SequenceModel,
    threshold: f64,
) -> Result<Option<PMContext>> {
    ensure!(
        record.score == 1.0,
        "divergence search requires a perfectly memorized record (score {})",
        record.score
    );
    let full = record.full_tokens();
    let k = record.context.len();
    ensure!(k >= 2, "context too short to trim");

    // one teacher-forced pass gives the argmax after every prefix
    let preds = model.prefix_argmax(&full[..k])?;

    for c in (1..k).rev() {
        let t_mem = full[c];
        let t_pred = preds[c - 1];
        if t_pred == t_mem {
            continue;
        }
        let generated = model.generate(&full[..c], full.len() - c)?;
        let b = bleu(&generated, &full[c..])?;
        if b < threshold {
            return Ok(Some(PMContext {
                source_id: record.id.clone(),
                context: full[..c].to_vec(),
                divergence_pos: c - 1,
                t_mem,
                t_pred,
                bleu_at_trim: b,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn record(tokens: &[u32], k: usize) -> MemorizationRecord {
        MemorizationRecord {
            id: "t-0".into(),
            domain: Domain::Wiki,
            context: tokens[..k].to_vec(),
            continuation: tokens[k..].to_vec(),
            generation: tokens[k..].to_vec(),
            score: 1.0,
        }
    }

    /// Always regenerates the ground truth, whatever the prefix.
    struct RigidMemorizer {
        full: Vec<u32>,
    }

    impl SequenceModel for RigidMemorizer {
        fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>> {
            Ok((0..tokens.len())
                .map(|i| self.full.get(i + 1).copied().unwrap_or(0))
                .collect())
        }

        fn generate(&self, context: &[u32], n: usize) -> Result<Vec<u32>> {
            let start = context.len();
            Ok(self.full[start..start + n].to_vec())
        }
    }

    /// Emits a constant alien token everywhere.
    struct Amnesiac;

    impl SequenceModel for Amnesiac {
        fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>> {
            Ok(vec![777; tokens.len()])
        }

        fn generate(&self, _context: &[u32], n: usize) -> Result<Vec<u32>> {
            Ok(vec![777; n])
        }
    }

    #[test]
    fn rigid_memorizer_has_no_divergence_point() {
        let tokens: Vec<u32> = (0..40).collect();
        let rec = record(&tokens, 20);
        let model = RigidMemorizer {
            full: tokens.clone(),
        };
        assert!(find_divergence(&rec, &model, 0.3).unwrap().is_none());
    }

    #[test]
    fn amnesiac_diverges_at_maximal_trim() {
        let tokens: Vec<u32> = (0..40).collect();
        let rec = record(&tokens, 20);
        let pm = find_divergence(&rec, &Amnesiac, 0.3).unwrap().unwrap();
        // longest trimmed context: original context minus one token
        assert_eq!(pm.context.len(), 19);
        assert_eq!(pm.divergence_pos, 18);
        assert_eq!(pm.t_mem, 19);
        assert_eq!(pm.t_pred, 777);
        assert_eq!(pm.bleu_at_trim, 0.0);
    }

    /// Diverges only when the trim crosses a scripted boundary; checks that
    /// the *longest* qualifying context wins and that both conditions gate.
    struct BoundaryModel {
        full: Vec<u32>,
        boundary: usize,
    }

    impl SequenceModel for BoundaryModel {
        fn prefix_argmax(&self, tokens: &[u32]) -> Result<Vec<u32>> {
            Ok((0..tokens.len())
                .map(|i| {
                    if i + 1 <= self.boundary {
                        888 // diverges below the boundary
                    } else {
                        self.full.get(i + 1).copied().unwrap_or(0)
                    }
                })
                .collect())
        }

        fn generate(&self, context: &[u32], n: usize) -> Result<Vec<u32>> {
            if context.len() <= self.boundary {
                Ok(vec![888; n])
            } else {
                let start = context.len();
                Ok(self.full[start..start + n].to_vec())
            }
        }
    }

    #[test]
    fn longest_qualifying_trim_is_returned() {
        let tokens: Vec<u32> = (0..40).collect();
        let rec = record(&tokens, 20);
        let model = BoundaryModel {
            full: tokens.clone(),
            boundary: 12,
        };
        let pm = find_divergence(&rec, &model, 0.3).unwrap().unwrap();
        assert_eq!(pm.context.len(), 12);
        assert_eq!(pm.t_pred, 888);
        assert_eq!(pm.t_mem, 12);
    }

    #[test]
    fn imperfect_record_is_contract_violation() {
        let tokens: Vec<u32> = (0..40).collect();
        let mut rec = record(&tokens, 20);
        rec.score = 0.9;
        assert!(find_divergence(&rec, &Amnesiac, 0.3).is_err());
    }
}
