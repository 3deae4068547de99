//! Memorization scoring and the two contrastive datasets.
//!
//! [`memorization_score`] implements the proportion-of-matching-tokens
//! measure; [`bleu`] the n-gram overlap used by divergence search;
//! [`find_divergence`] trims memorized contexts back to the point where the
//! model leaves the memorized path; and the builders assemble the
//! memorization-decision and branch-comparison pair sets.

mod bleu;
mod build;
mod divergence;

pub use bleu::bleu;
pub use build::{
    build_branch_dataset, build_decision_dataset, scan_pool, DecisionOptions, PoolScan,
    RejectionStats,
};
pub use divergence::{find_divergence, SequenceModel};

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Sample};
use crate::ensure;
use crate::error::Result;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Decision,
    Branch,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Decision => "decision",
            Task::Branch => "branch",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "decision" => Ok(Task::Decision),
            "branch" => Ok(Task::Branch),
            other => Err(crate::error::Error::contract(format!(
                "unknown task '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scored memorization record for one corpus sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorizationRecord {
    pub id: String,
    pub domain: Domain,
    /// First `k` tokens (the prompt).
    pub context: Vec<u32>,
    /// Ground-truth continuation `Y`.
    pub continuation: Vec<u32>,
    /// Greedy generation `X` from the context.
    pub generation: Vec<u32>,
    /// `M(X, Y)`: fraction of matching positions.
    pub score: f64,
}

impl MemorizationRecord {
    /// The original sample: context followed by ground-truth continuation.
    pub fn full_tokens(&self) -> Vec<u32> {
        let mut t = self.context.clone();
        t.extend_from_slice(&self.continuation);
        t
    }
}

/// A trimmed "potentially memorized" context: the model's argmax leaves the
/// memorized continuation exactly after this prefix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PMContext {
    pub source_id: String,
    /// Trimmed context (length `divergence_pos + 1`).
    pub context: Vec<u32>,
    /// Index of the last kept context token.
    pub divergence_pos: usize,
    /// Memorized next token (the corpus token right after the context).
    pub t_mem: u32,
    /// Model's argmax next token; differs from `t_mem` by construction.
    pub t_pred: u32,
    pub bleu_at_trim: f64,
}

/// Aligned clean/corrupt pair for patched execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub task: Task,
    pub clean: Vec<u32>,
    pub corrupt: Vec<u32>,
    pub t_mem: u32,
    pub t_pred: u32,
    /// Branch task only: the corpus token following `t_mem`, the token whose
    /// prediction the task metrics evaluate.
    pub target: Option<u32>,
    pub src_ids: Vec<String>,
}

impl ContrastivePair {
    /// The memorized-continuation token at the evaluation position.
    pub fn eval_mem_token(&self) -> u32 {
        match self.task {
            Task::Decision => self.t_mem,
            Task::Branch => self.target.expect("branch pairs carry a target"),
        }
    }
}

/// Eq.-style memorization score: fraction of positions where the generated
/// token equals the ground-truth token.
pub fn memorization_score(generated: &[u32], truth: &[u32]) -> Result<f64> {
    ensure!(
        generated.len() == truth.len(),
        "memorization_score needs equal lengths, got {} vs {}",
        generated.len(),
        truth.len()
    );
    ensure!(!truth.is_empty(), "memorization_score needs n >= 1");
    let matches = generated
        .iter()
        .zip(truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / truth.len() as f64)
}

/// Score every sample: greedy-generate from the `context_len`-token prefix
/// and compare with the recorded continuation.
pub fn score_corpus(
    model: &Model,
    samples: &[Sample],
    context_len: usize,
) -> Result<Vec<MemorizationRecord>> {
    samples
        .par_iter()
        .map(|s| {
            ensure!(
                s.tokens.len() > context_len,
                "sample {} shorter than context length {context_len}",
                s.id
            );
            let context = s.tokens[..context_len].to_vec();
            let continuation = s.tokens[context_len..].to_vec();
            let generation = model.generate_greedy(&context, continuation.len())?;
            let score = memorization_score(&generation, &continuation)?;
            Ok(MemorizationRecord {
                id: s.id.clone(),
                domain: s.domain,
                context,
                continuation,
                generation,
                score,
            })
        })
        .collect()
}

// ── jsonl io ─────────────────────────────────────────────────────────

pub fn write_records(path: &Path, records: &[MemorizationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MemorizationRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[ContrastivePair]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<ContrastivePair>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Hex digest of a pair set (provenance for score files and circuits).
pub fn pairs_digest(pairs: &[ContrastivePair]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in pairs {
        hasher.update(serde_json::to_vec(p).expect("pair serializes"));
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
