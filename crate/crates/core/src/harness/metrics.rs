//! Task metrics over final-position logits.
//!
//! `logit_*` metrics average the designated token's raw logit, `logprob_*`
//! its log-softmax, and `accuracy_*` the percentage of samples whose argmax
//! is the designated token. The memorization token at the evaluation
//! position is the pair's `t_mem` for the decision task and the stored
//! target (the token continuing the memorized sequence) for the branch task;
//! the predicted token is the stored `t_pred` for decision and the unpatched
//! corrupt-run argmax for branch, where the divergent path's own next token
//! is not part of the pair record.

use serde::{Deserialize, Serialize};

use crate::dataset::{ContrastivePair, Task};
use crate::ensure;
use crate::error::{Error, Result};
use crate::tensor::{argmax, log_softmax_at};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogitMem,
    LogitDiff,
    LogitPred,
    LogprobPred,
    AccuracyMem,
    AccuracyPred,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::LogitMem => "logit_mem",
            Metric::LogitDiff => "logit_diff",
            Metric::LogitPred => "logit_pred",
            Metric::LogprobPred => "logprob_pred",
            Metric::AccuracyMem => "accuracy_mem",
            Metric::AccuracyPred => "accuracy_pred",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "logit_mem" => Ok(Metric::LogitMem),
            "logit_diff" => Ok(Metric::LogitDiff),
            "logit_pred" => Ok(Metric::LogitPred),
            "logprob_pred" => Ok(Metric::LogprobPred),
            "accuracy_mem" => Ok(Metric::AccuracyMem),
            "accuracy_pred" => Ok(Metric::AccuracyPred),
            other => Err(Error::contract(format!("unknown metric '{other}'"))),
        }
    }

    /// Faithfulness metrics admitted per task and direction (the registry's
    /// cells). The boolean marks whether higher values are better for the
    /// task itself.
    pub fn allowed_for(task: Task, noising: bool) -> &'static [(Metric, bool)] {
        match (task, noising) {
            (Task::Decision, true) => &[(Metric::LogitMem, true), (Metric::LogitDiff, true)],
            (Task::Decision, false) => {
                &[(Metric::LogitPred, true), (Metric::LogprobPred, true)]
            }
            (Task::Branch, true) => &[(Metric::LogitMem, false), (Metric::AccuracyMem, false)],
            (Task::Branch, false) => &[(Metric::LogitMem, true), (Metric::AccuracyPred, false)],
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-sample designated tokens resolved once per dataset.
#[derive(Debug, Clone)]
pub struct EvalTokens {
    pub mem: Vec<u32>,
    pub pred: Vec<u32>,
}

impl EvalTokens {
    /// `baseline_corrupt` must hold the unpatched corrupt-side final logits
    /// (used to resolve the branch task's predicted token).
    pub fn resolve(pairs: &[ContrastivePair], baseline_corrupt: &[Vec<f64>]) -> Result<EvalTokens> {
        ensure!(
            pairs.len() == baseline_corrupt.len(),
            "token resolution needs one corrupt baseline per pair"
        );
        let mem = pairs.iter().map(|p| p.eval_mem_token()).collect();
        let pred = pairs
            .iter()
            .zip(baseline_corrupt)
            .map(|(p, logits)| match p.task {
                Task::Decision => p.t_pred,
                Task::Branch => argmax(logits) as u32,
            })
            .collect();
        Ok(EvalTokens { mem, pred })
    }
}

/// Aggregate metric over a set of per-sample final-position logits.
pub fn metric_value(logits_set: &[Vec<f64>], tokens: &EvalTokens, metric: Metric) -> f64 {
    let n = logits_set.len() as f64;
    match metric {
        Metric::LogitMem => {
            logits_set
                .iter()
                .zip(&tokens.mem)
                .map(|(l, &t)| l[t as usize])
                .sum::<f64>()
                / n
        }
        Metric::LogitDiff => {
            logits_set
                .iter()
                .zip(tokens.mem.iter().zip(&tokens.pred))
                .map(|(l, (&m, &p))| l[m as usize] - l[p as usize])
                .sum::<f64>()
                / n
        }
        Metric::LogitPred => {
            logits_set
                .iter()
                .zip(&tokens.pred)
                .map(|(l, &t)| l[t as usize])
                .sum::<f64>()
                / n
        }
        Metric::LogprobPred => {
            logits_set
                .iter()
                .zip(&tokens.pred)
                .map(|(l, &t)| log_softmax_at(l, t as usize))
                .sum::<f64>()
                / n
        }
        Metric::AccuracyMem => {
            100.0
                * logits_set
                    .iter()
                    .zip(&tokens.mem)
                    .filter(|(l, &t)| argmax(l) as u32 == t)
                    .count() as f64
                / n
        }
        Metric::AccuracyPred => {
            100.0
                * logits_set
                    .iter()
                    .zip(&tokens.pred)
                    .filter(|(l, &t)| argmax(l) as u32 == t)
                    .count() as f64
                / n
        }
    }
}

/// Per-sample metric values (each sample treated as a singleton set).
pub fn metric_per_sample(logits_set: &[Vec<f64>], tokens: &EvalTokens, metric: Metric) -> Vec<f64> {
    (0..logits_set.len())
        .map(|i| {
            let single = EvalTokens {
                mem: vec![tokens.mem[i]],
                pred: vec![tokens.pred[i]],
            };
            metric_value(&logits_set[i..=i], &single, metric)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(mem: Vec<u32>, pred: Vec<u32>) -> EvalTokens {
        EvalTokens { mem, pred }
    }

    #[test]
    fn accuracy_trivials() {
        // both samples argmax at index 2
        let logits = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 9.0]];
        let t = tokens(vec![2, 2], vec![2, 0]);
        assert_eq!(metric_value(&logits, &t, Metric::AccuracyMem), 100.0);
        assert_eq!(metric_value(&logits, &t, Metric::AccuracyPred), 50.0);
    }

    #[test]
    fn logit_metrics() {
        let logits = vec![vec![1.0, 2.0, 3.0]];
        let t = tokens(vec![2], vec![0]);
        assert_eq!(metric_value(&logits, &t, Metric::LogitMem), 3.0);
        assert_eq!(metric_value(&logits, &t, Metric::LogitDiff), 2.0);
        assert_eq!(metric_value(&logits, &t, Metric::LogitPred), 1.0);
    }

    #[test]
    fn logprob_matches_direct_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(50);
        for _ in 0..50 {
            let v = 12;
            let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let t = rng.gen_range(0..v) as u32;
            let lt = tokens(vec![0], vec![t]);
            let got = metric_value(&[logits.clone()], &lt, Metric::LogprobPred);
            // direct recomputation
            let z: f64 = logits.iter().map(|x| x.exp()).sum();
            let want = logits[t as usize] - z.ln();
            assert!((got - want).abs() < 1e-9);
            // argmax token's logprob is at least -log(vocab)
            let am = argmax(&logits) as u32;
            let lt2 = tokens(vec![0], vec![am]);
            let lp = metric_value(&[logits], &lt2, Metric::LogprobPred);
            assert!(lp >= -(v as f64).ln() - 1e-12);
        }
    }

    #[test]
    fn registry_restricts_metric_cells() {
        use crate::dataset::Task;
        let cells = Metric::allowed_for(Task::Branch, true);
        assert!(cells.iter().any(|(m, up)| *m == Metric::AccuracyMem && !up));
        assert!(!Metric::allowed_for(Task::Decision, true)
            .iter()
            .any(|(m, _)| *m == Metric::AccuracyMem));
    }
}
