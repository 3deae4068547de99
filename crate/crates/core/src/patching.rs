//! Patched execution: recompose every destination input from live and donor
//! source outputs according to a per-edge mask.
//!
//! Mask semantics are direction-relative: bit `true` means the edge carries
//! the live value computed in this (base-side) run, `false` means it carries
//! the donor value — the cached opposite-side activation, or an ablation
//! value (zeros or dataset means). Noising runs on the clean tokens with
//! corrupt-side donors; denoising runs on the corrupt tokens with clean-side
//! donors. An all-true mask therefore reproduces the base-side forward and
//! an all-false mask reproduces the donor-side forward.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ContrastivePair;
use crate::ensure;
use crate::error::{Error, Result};
use crate::model::{ActivationCache, EdgeGraph, EmbedInput, Model};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Noising,
    Denoising,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Noising => "noising",
            Direction::Denoising => "denoising",
        }
    }

    pub fn parse(s: &str) -> Result<Direction> {
        match s {
            "noising" => Ok(Direction::Noising),
            "denoising" => Ok(Direction::Denoising),
            other => Err(Error::contract(format!("unknown direction '{other}'"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What non-live edges receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    /// The paired counterfactual activation (the default).
    Paired,
    Zero,
    MeanClean,
    MeanCorrupt,
}

impl AblationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationKind::Paired => "paired",
            AblationKind::Zero => "zero",
            AblationKind::MeanClean => "mean-clean",
            AblationKind::MeanCorrupt => "mean-corrupt",
        }
    }

    pub fn parse(s: &str) -> Result<AblationKind> {
        match s {
            "paired" => Ok(AblationKind::Paired),
            "zero" => Ok(AblationKind::Zero),
            "mean-clean" => Ok(AblationKind::MeanClean),
            "mean-corrupt" => Ok(AblationKind::MeanCorrupt),
            other => Err(Error::contract(format!("unknown ablation '{other}'"))),
        }
    }
}

/// Per-edge intervention mask.
#[derive(Debug, Clone)]
pub struct EdgeMask {
    /// `true` = live base-side value, `false` = donor/ablation value.
    pub bits: Vec<bool>,
    pub direction: Direction,
    pub ablation: AblationKind,
}

impl EdgeMask {
    pub fn all_live(graph: &EdgeGraph, direction: Direction) -> EdgeMask {
        EdgeMask {
            bits: vec![true; graph.n_edges()],
            direction,
            ablation: AblationKind::Paired,
        }
    }

    pub fn all_donor(graph: &EdgeGraph, direction: Direction) -> EdgeMask {
        EdgeMask {
            bits: vec![false; graph.n_edges()],
            direction,
            ablation: AblationKind::Paired,
        }
    }

    /// Donor values on exactly `edges`, live everywhere else.
    pub fn donor_on(graph: &EdgeGraph, direction: Direction, edges: &[usize]) -> EdgeMask {
        let mut bits = vec![true; graph.n_edges()];
        for &e in edges {
            bits[e] = false;
        }
        EdgeMask {
            bits,
            direction,
            ablation: AblationKind::Paired,
        }
    }

    /// Live values on exactly `edges`, donor everywhere else.
    pub fn live_on(graph: &EdgeGraph, direction: Direction, edges: &[usize]) -> EdgeMask {
        let mut bits = vec![false; graph.n_edges()];
        for &e in edges {
            bits[e] = true;
        }
        EdgeMask {
            bits,
            direction,
            ablation: AblationKind::Paired,
        }
    }

    fn donor_edge_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Both sides of one pair, cached once and reused across masks.
pub struct PreparedPair {
    pub pair: ContrastivePair,
    pub clean_cache: ActivationCache,
    pub corrupt_cache: ActivationCache,
}

impl PreparedPair {
    pub fn seq_len(&self) -> usize {
        self.pair.clean.len()
    }

    fn base_tokens(&self, direction: Direction) -> &[u32] {
        match direction {
            Direction::Noising => &self.pair.clean,
            Direction::Denoising => &self.pair.corrupt,
        }
    }

    fn donor_cache(&self, direction: Direction) -> &ActivationCache {
        match direction {
            Direction::Noising => &self.corrupt_cache,
            Direction::Denoising => &self.clean_cache,
        }
    }

    /// Unpatched final-position logits of the requested side.
    pub fn final_logits(&self, side: Direction) -> Vec<f64> {
        let cache = match side {
            Direction::Noising => &self.clean_cache,
            Direction::Denoising => &self.corrupt_cache,
        };
        let logits = &cache.logits;
        logits.row(logits.rows() - 1).to_vec()
    }
}

/// Cache both sides of every pair (one forward each).
pub fn prepare_pairs(model: &Model, pairs: &[ContrastivePair]) -> Result<Vec<PreparedPair>> {
    pairs
        .par_iter()
        .map(|pair| {
            ensure!(
                pair.clean.len() == pair.corrupt.len(),
                "pair has misaligned sides: {} vs {} tokens",
                pair.clean.len(),
                pair.corrupt.len()
            );
            let (_, clean_cache) = model.forward_cached(&pair.clean)?;
            let (_, corrupt_cache) = model.forward_cached(&pair.corrupt)?;
            Ok(PreparedPair {
                pair: pair.clone(),
                clean_cache,
                corrupt_cache,
            })
        })
        .collect()
}

/// Positionwise mean of source activations over one side of a dataset.
#[derive(Debug, Clone)]
pub struct MeanCache {
    /// Aligned to the graph's sources; each `[len, d_model]`.
    pub per_source: Vec<Arc<Tensor>>,
    pub seq_len: usize,
    pub n_samples: usize,
}

/// Arithmetic mean over samples, per source node and token position.
/// All samples must share one length.
pub fn mean_activations(prepared: &[PreparedPair], side: Direction) -> Result<MeanCache> {
    ensure!(!prepared.is_empty(), "mean_activations needs samples");
    let len = prepared[0].seq_len();
    for p in prepared {
        ensure!(
            p.seq_len() == len,
            "mean_activations requires uniform length: found {} and {}",
            len,
            p.seq_len()
        );
    }
    let n_sources = prepared[0].clean_cache.source_out.len();
    let mut acc: Vec<Tensor> = (0..n_sources)
        .map(|_| Tensor::zeros(prepared[0].clean_cache.source_out[0].shape()))
        .collect();
    for p in prepared {
        let cache = match side {
            Direction::Noising => &p.clean_cache,
            Direction::Denoising => &p.corrupt_cache,
        };
        for (a, s) in acc.iter_mut().zip(&cache.source_out) {
            a.add_assign(s);
        }
    }
    let scale = 1.0 / prepared.len() as f64;
    Ok(MeanCache {
        per_source: acc.into_iter().map(|t| Arc::new(t.scale(scale))).collect(),
        seq_len: len,
        n_samples: prepared.len(),
    })
}

/// Mean caches for the ablation variants that need them.
#[derive(Default)]
pub struct MeanSet {
    pub clean: Option<MeanCache>,
    pub corrupt: Option<MeanCache>,
}

/// Result of patched execution over a pair set.
#[derive(Debug, Clone)]
pub struct PatchRun {
    /// Final-position logits of every patched sample run.
    pub patched: Vec<Vec<f64>>,
    /// Unpatched all-clean final logits (baseline b).
    pub baseline_clean: Vec<Vec<f64>>,
    /// Unpatched all-corrupt final logits (baseline b').
    pub baseline_corrupt: Vec<Vec<f64>>,
}

fn donor_tensors(
    prepared: &PreparedPair,
    mask: &EdgeMask,
    means: &MeanSet,
) -> Result<Vec<Arc<Tensor>>> {
    let len = prepared.seq_len();
    match mask.ablation {
        AblationKind::Paired => Ok(prepared.donor_cache(mask.direction).source_out.clone()),
        AblationKind::Zero => {
            let d = prepared.clean_cache.source_out[0].cols();
            let zero = Arc::new(Tensor::zeros(&[len, d]));
            Ok(vec![zero; prepared.clean_cache.source_out.len()])
        }
        AblationKind::MeanClean | AblationKind::MeanCorrupt => {
            let cache = if mask.ablation == AblationKind::MeanClean {
                means.clean.as_ref()
            } else {
                means.corrupt.as_ref()
            };
            let cache = cache.ok_or_else(|| {
                Error::contract(format!(
                    "{} ablation requested without a mean cache",
                    mask.ablation.as_str()
                ))
            })?;
            ensure!(
                cache.seq_len == len,
                "mean cache length {} does not match pair length {}",
                cache.seq_len,
                len
            );
            Ok(cache.per_source.clone())
        }
    }
}

/// Patched execution of one pair under a mask.
pub fn run_patched_pair(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &PreparedPair,
    mask: &EdgeMask,
    means: &MeanSet,
) -> Result<Vec<f64>> {
    ensure!(
        mask.bits.len() == graph.n_edges(),
        "mask has {} bits for {} edges",
        mask.bits.len(),
        graph.n_edges()
    );
    let donors = donor_tensors(prepared, mask, means)?;
    let base = prepared.base_tokens(mask.direction);
    let run = model
        .forward_graph(graph, EmbedInput::Tokens(base), Some((&mask.bits, &donors)))
        .map_err(|e| match e {
            Error::Numeric { detail, .. } => {
                let donor_edges = mask.donor_edge_indices();
                let shown: Vec<usize> = donor_edges.iter().take(8).copied().collect();
                Error::numeric(
                    format!(
                        "run_patched[{} donor edges, first {:?}]",
                        donor_edges.len(),
                        shown
                    ),
                    detail,
                )
            }
            other => other,
        })?;
    let logits = run.logits_tensor();
    Ok(logits.row(logits.rows() - 1).to_vec())
}

/// Patched execution over a prepared dataset; baselines come from the
/// cached unpatched runs.
pub fn run_patched(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &[PreparedPair],
    mask: &EdgeMask,
    means: &MeanSet,
) -> Result<PatchRun> {
    ensure!(!prepared.is_empty(), "empty dataset");
    let patched: Vec<Vec<f64>> = prepared
        .par_iter()
        .map(|p| run_patched_pair(model, graph, p, mask, means))
        .collect::<Result<_>>()?;
    Ok(PatchRun {
        patched,
        baseline_clean: prepared
            .iter()
            .map(|p| p.final_logits(Direction::Noising))
            .collect(),
        baseline_corrupt: prepared
            .iter()
            .map(|p| p.final_logits(Direction::Denoising))
            .collect(),
    })
}

/// Loss difference caused by patching exactly one edge with its donor value
/// (base side per direction). `loss` maps final-position logits to a scalar.
pub fn direct_edge_effect(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &PreparedPair,
    edge: usize,
    direction: Direction,
    loss: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    ensure!(edge < graph.n_edges(), "edge index {edge} out of range");
    let mask = EdgeMask::donor_on(graph, direction, &[edge]);
    let patched = run_patched_pair(model, graph, prepared, &mask, &MeanSet::default())?;
    let base = prepared.final_logits(direction);
    Ok(loss(&patched) - loss(&base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::model::ModelConfig;

    fn small() -> (Model, EdgeGraph) {
        let m = Model::new(ModelConfig::new(2, 2, 12, 6, 20, 19, 32, 9));
        let g = m.edge_graph();
        (m, g)
    }

    fn pair(clean: Vec<u32>, corrupt: Vec<u32>) -> ContrastivePair {
        ContrastivePair {
            task: Task::Branch,
            clean,
            corrupt,
            t_mem: 1,
            t_pred: 2,
            target: Some(3),
            src_ids: vec!["x".into()],
        }
    }

    #[test]
    fn full_mask_reproduces_base_side() {
        let (m, g) = small();
        let prepared = prepare_pairs(&m, &[pair(vec![1, 2, 3, 4], vec![5, 6, 7, 8])]).unwrap();
        for direction in [Direction::Noising, Direction::Denoising] {
            let mask = EdgeMask::all_live(&g, direction);
            let got =
                run_patched_pair(&m, &g, &prepared[0], &mask, &MeanSet::default()).unwrap();
            let want = prepared[0].final_logits(direction);
            let diff: f64 = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{direction}: diff {diff}");
        }
    }

    #[test]
    fn zero_mask_reproduces_donor_side() {
        let (m, g) = small();
        let prepared = prepare_pairs(&m, &[pair(vec![1, 2, 3, 4], vec![5, 6, 7, 8])]).unwrap();
        for (direction, donor_side) in [
            (Direction::Noising, Direction::Denoising),
            (Direction::Denoising, Direction::Noising),
        ] {
            let mask = EdgeMask::all_donor(&g, direction);
            let got =
                run_patched_pair(&m, &g, &prepared[0], &mask, &MeanSet::default()).unwrap();
            let want = prepared[0].final_logits(donor_side);
            let diff: f64 = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{direction}: diff {diff}");
        }
    }

    #[test]
    fn direction_symmetry_under_pair_swap() {
        let (m, g) = small();
        let p = pair(vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10]);
        let swapped = pair(vec![6, 7, 8, 9, 10], vec![1, 2, 3, 4, 5]);
        let prep = prepare_pairs(&m, &[p, swapped]).unwrap();
        // arbitrary mixed mask
        let mut bits = vec![true; g.n_edges()];
        for i in (0..g.n_edges()).step_by(3) {
            bits[i] = false;
        }
        let noising = EdgeMask {
            bits: bits.clone(),
            direction: Direction::Noising,
            ablation: AblationKind::Paired,
        };
        let denoising = EdgeMask {
            bits,
            direction: Direction::Denoising,
            ablation: AblationKind::Paired,
        };
        let a = run_patched_pair(&m, &g, &prep[0], &noising, &MeanSet::default()).unwrap();
        let b = run_patched_pair(&m, &g, &prep[1], &denoising, &MeanSet::default()).unwrap();
        let diff: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10, "diff {diff}");
    }

    #[test]
    fn identical_donor_edge_has_zero_effect() {
        let (m, g) = small();
        // identical clean/corrupt: every donor equals the live value
        let prepared = prepare_pairs(&m, &[pair(vec![1, 2, 3], vec![1, 2, 3])]).unwrap();
        let effect = direct_edge_effect(&m, &g, &prepared[0], 5, Direction::Noising, |l| l[0])
            .unwrap();
        assert!(effect.abs() < 1e-12);
    }

    #[test]
    fn mean_activations_trivials() {
        let (m, _) = small();
        let one = prepare_pairs(&m, &[pair(vec![1, 2, 3], vec![4, 5, 6])]).unwrap();
        let mean = mean_activations(&one, Direction::Noising).unwrap();
        for (ms, cs) in mean.per_source.iter().zip(&one[0].clean_cache.source_out) {
            assert!(ms.max_abs_diff(cs) < 1e-15);
        }
        // mixed lengths violate the contract
        let mixed = prepare_pairs(
            &m,
            &[pair(vec![1, 2, 3], vec![4, 5, 6]), pair(vec![1, 2], vec![3, 4])],
        )
        .unwrap();
        assert!(mean_activations(&mixed, Direction::Noising).is_err());
    }

    #[test]
    fn mean_over_two_pairs_is_two_pass_mean() {
        let (m, _) = small();
        let prep = prepare_pairs(
            &m,
            &[pair(vec![1, 2, 3], vec![4, 5, 6]), pair(vec![7, 8, 9], vec![10, 11, 12])],
        )
        .unwrap();
        let mean = mean_activations(&prep, Direction::Denoising).unwrap();
        // two-pass oracle: explicit elementwise average
        for (si, ms) in mean.per_source.iter().enumerate() {
            let a = &prep[0].corrupt_cache.source_out[si];
            let b = &prep[1].corrupt_cache.source_out[si];
            for i in 0..ms.numel() {
                let want = (a.data()[i] + b.data()[i]) / 2.0;
                assert!((ms.data()[i] - want).abs() < 1e-15);
            }
        }
        assert_eq!(mean.n_samples, 2);
    }

    #[test]
    fn misaligned_pair_is_contract_violation() {
        let (m, _) = small();
        let bad = pair(vec![1, 2, 3], vec![4, 5]);
        assert!(prepare_pairs(&m, &[bad]).is_err());
    }
}
