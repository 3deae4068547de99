//! Faithfulness evaluation and minimal-circuit search.
//!
//! A circuit's faithfulness run keeps clean-side values on the circuit edges
//! and the corrupt side everywhere else (live vs donor assignments follow
//! the direction), then normalizes the metric between the all-corrupt (0)
//! and all-clean (1) baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{EdgeScores, LossKind, Ranking};
use crate::dataset::Task;
use crate::ensure;
use crate::error::{Error, Result};
use crate::harness::metrics::{metric_per_sample, metric_value, EvalTokens, Metric};
use crate::model::{EdgeGraph, Model};
use crate::patching::{run_patched, Direction, EdgeMask, MeanSet, PreparedPair};

/// How close two baselines may get before normalization is declared
/// undefined.
const DEGENERATE_EPS: f64 = 1e-9;

/// `(m - b') / (b - b')`; `None` when the baselines coincide.
pub fn normalize_faithfulness(m: f64, baseline_clean: f64, baseline_corrupt: f64) -> Option<f64> {
    let span = baseline_clean - baseline_corrupt;
    if span.abs() < DEGENERATE_EPS {
        None
    } else {
        Some((m - baseline_corrupt) / span)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub metric: Metric,
    pub direction: Direction,
    /// Circuit metric value m_c.
    pub circuit_value: f64,
    /// All-clean baseline b.
    pub baseline_clean: f64,
    /// All-corrupt baseline b'.
    pub baseline_corrupt: f64,
    /// `(m_c - b') / (b - b')`; absent when the baselines coincide.
    pub normalized: Option<f64>,
    pub degenerate: bool,
    pub n_samples: usize,
    pub per_sample: Vec<f64>,
}

/// Mask realizing "circuit edges carry clean values, the rest corrupt" in
/// the given direction.
pub fn circuit_mask(graph: &EdgeGraph, direction: Direction, edges: &[usize]) -> EdgeMask {
    match direction {
        // clean run is live: keep the circuit live, patch the complement
        Direction::Noising => EdgeMask::live_on(graph, direction, edges),
        // corrupt run is live: patch clean donors into the circuit
        Direction::Denoising => EdgeMask::donor_on(graph, direction, edges),
    }
}

/// Evaluate a circuit's faithfulness on a prepared pair set.
pub fn faithfulness(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &[PreparedPair],
    circuit_edges: &[usize],
    metric: Metric,
    direction: Direction,
) -> Result<FaithfulnessReport> {
    ensure!(!prepared.is_empty(), "empty dataset");
    let mask = circuit_mask(graph, direction, circuit_edges);
    let run = run_patched(model, graph, prepared, &mask, &MeanSet::default())?;
    let pairs: Vec<_> = prepared.iter().map(|p| p.pair.clone()).collect();
    let tokens = EvalTokens::resolve(&pairs, &run.baseline_corrupt)?;
    let m_c = metric_value(&run.patched, &tokens, metric);
    let b = metric_value(&run.baseline_clean, &tokens, metric);
    let b_corrupt = metric_value(&run.baseline_corrupt, &tokens, metric);
    let normalized = normalize_faithfulness(m_c, b, b_corrupt);
    Ok(FaithfulnessReport {
        metric,
        direction,
        circuit_value: m_c,
        baseline_clean: b,
        baseline_corrupt: b_corrupt,
        degenerate: normalized.is_none(),
        normalized,
        n_samples: prepared.len(),
        per_sample: metric_per_sample(&run.patched, &tokens, metric),
    })
}

/// One probed point of the binary search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbePoint {
    pub k: usize,
    pub faithfulness: f64,
}

/// Provenance a circuit file carries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub task: Task,
    pub loss: LossKind,
    pub direction: Direction,
    pub metric: Metric,
    pub ranking: Ranking,
    pub target: f64,
    pub model_digest: String,
    pub graph: String,
    pub dataset_digest: String,
}

/// A scored, ordered edge subset with its discovery provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Circuit {
    /// Edge indices in canonical order.
    pub edges: Vec<usize>,
    pub config: CircuitConfig,
    pub faithfulness: f64,
    pub edge_fraction: f64,
    pub transcript: Vec<ProbePoint>,
}

impl Circuit {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Circuit> {
        let c: Circuit = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ensure!(!c.edges.is_empty(), "circuit file has no edges");
        let mut sorted = c.edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        ensure!(
            sorted == c.edges,
            "circuit edges must be unique and sorted in canonical order"
        );
        Ok(c)
    }
}

/// Binary search for the smallest k whose probe meets `target`, with a
/// linear refinement pass over the window just below the result.
/// Faithfulness is not guaranteed monotone in k, so the full transcript is
/// returned for auditing.
pub fn search_minimal_k(
    n_edges: usize,
    target: f64,
    refine_delta: usize,
    mut probe: impl FnMut(usize) -> Result<f64>,
) -> Result<(usize, Vec<ProbePoint>)> {
    ensure!(n_edges >= 1, "empty edge set");
    let mut transcript: Vec<ProbePoint> = Vec::new();
    let mut memo: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut run = |k: usize, transcript: &mut Vec<ProbePoint>| -> Result<f64> {
        if let Some(&f) = memo.get(&k) {
            return Ok(f);
        }
        let f = probe(k)?;
        memo.insert(k, f);
        transcript.push(ProbePoint {
            k,
            faithfulness: f,
        });
        Ok(f)
    };

    if target <= 0.0 {
        // any circuit qualifies; record the k=1 probe for the transcript
        run(1, &mut transcript)?;
        return Ok((1, transcript));
    }

    let mut lo = 1usize;
    let mut hi = n_edges;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if run(mid, &mut transcript)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut k = lo;
    if run(k, &mut transcript)? < target {
        return Err(Error::Search(format!(
            "no edge set reaches faithfulness {target}; probes: {}",
            transcript
                .iter()
                .map(|p| format!("k={} f={:.4}", p.k, p.faithfulness))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    // non-monotonicity can hide a smaller passing k just below the result
    let start = k.saturating_sub(refine_delta).max(1);
    for k2 in start..k {
        if run(k2, &mut transcript)? >= target {
            k = k2;
            break;
        }
    }
    Ok((k, transcript))
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub target: f64,
    pub refine_delta: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            target: 0.85,
            refine_delta: 8,
        }
    }
}

/// Find the smallest top-k-by-rank edge set whose faithfulness meets the
/// target.
pub fn find_minimal_circuit(
    model: &Model,
    graph: &EdgeGraph,
    prepared: &[PreparedPair],
    scores: &EdgeScores,
    metric: Metric,
    task: Task,
    opts: &SearchOptions,
) -> Result<Circuit> {
    ensure!(
        scores.scores.len() == graph.n_edges(),
        "scores cover {} edges, graph has {}",
        scores.scores.len(),
        graph.n_edges()
    );
    let ranked = scores.ranked_edges();
    let direction = scores.config.direction;
    let (k, transcript) = search_minimal_k(graph.n_edges(), opts.target, opts.refine_delta, |k| {
        let report = faithfulness(model, graph, prepared, &ranked[..k], metric, direction)?;
        report.normalized.ok_or_else(|| {
            Error::Search("degenerate baselines: clean and corrupt metrics coincide".into())
        })
    })?;
    let achieved = transcript
        .iter()
        .find(|p| p.k == k)
        .expect("result k was probed")
        .faithfulness;
    let mut edges: Vec<usize> = ranked[..k].to_vec();
    edges.sort_unstable();
    let pairs: Vec<_> = prepared.iter().map(|p| p.pair.clone()).collect();
    Ok(Circuit {
        edges,
        config: CircuitConfig {
            task,
            loss: scores.config.loss,
            direction,
            metric,
            ranking: scores.config.ranking,
            target: opts.target,
            model_digest: scores.config.model_digest.clone(),
            graph: graph.signature(),
            dataset_digest: crate::dataset::pairs_digest(&pairs),
        },
        faithfulness: achieved,
        edge_fraction: k as f64 / graph.n_edges() as f64,
        transcript,
    })
}

/// Uniform random edge subsets of size k, deterministic under the seed.
pub fn random_circuits(
    n_edges: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    ensure!(
        k >= 1 && k <= n_edges,
        "k must lie in [1, {n_edges}], got {k}"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        // partial Fisher-Yates over the index range
        let mut idx: Vec<usize> = (0..n_edges).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n_edges);
            idx.swap(i, j);
        }
        let mut edges = idx[..k].to_vec();
        edges.sort_unstable();
        out.push(edges);
    }
    Ok(out)
}
