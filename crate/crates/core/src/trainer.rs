//! Training until a target subset of the corpus is perfectly memorized.
//!
//! Plain next-token cross-entropy with a momentum-free adaptive step
//! (RMSProp-style second-moment scaling with bias correction). Gradients are
//! computed per sample in parallel but always reduced in sample order, so a
//! fixed seed gives bit-identical training runs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Sample, CONTEXT_LEN};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::argmax;
use crate::{ensure, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Second-moment decay of the adaptive step.
    pub rms_decay: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Epoch after which the learning rate decays exponentially.
    pub lr_decay_after: usize,
    /// Per-epoch decay factor once past `lr_decay_after` (1.0 = constant).
    pub lr_decay: f64,
    pub target_memorized: usize,
    /// Optional per-domain minimum memorized counts on top of the total.
    #[serde(default)]
    pub per_domain_targets: BTreeMap<Domain, usize>,
    /// Run the memorization check every this many epochs.
    pub check_every: usize,
    pub seed: u64,
    /// Print per-check progress to stderr.
    #[serde(default)]
    pub verbose: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 16,
            learning_rate: 2e-3,
            rms_decay: 0.99,
            eps: 1e-8,
            max_epochs: 200,
            lr_decay_after: 40,
            lr_decay: 0.94,
            target_memorized: 0,
            per_domain_targets: BTreeMap::new(),
            check_every: 2,
            seed: 0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Samples (among the trained set) with memorization score exactly 1.0.
    pub memorized_count: usize,
    pub per_domain: BTreeMap<Domain, usize>,
    pub trained_samples: usize,
    /// Ids of the memorized samples at stop time.
    pub memorized_ids: Vec<String>,
}

/// Exact-memorization check from one teacher-forced pass: greedy generation
/// from the `context_len`-token prefix reproduces the continuation exactly
/// iff the argmax matches the recorded token at every continuation position.
pub fn is_exactly_memorized(model: &Model, tokens: &[u32], context_len: usize) -> Result<bool> {
    ensure!(
        context_len >= 1 && context_len < tokens.len(),
        "context_len {} out of range for sample of {} tokens",
        context_len,
        tokens.len()
    );
    let logits = model.forward(tokens)?;
    for p in (context_len - 1)..(tokens.len() - 1) {
        if argmax(logits.row(p)) as u32 != tokens[p + 1] {
            return Ok(false);
        }
    }
    Ok(true)
}

fn memorized_flags(model: &Model, samples: &[Sample]) -> Result<Vec<bool>> {
    samples
        .par_iter()
        .map(|s| is_exactly_memorized(model, &s.tokens, CONTEXT_LEN))
        .collect()
}

fn count_per_domain(samples: &[Sample], flags: &[bool]) -> BTreeMap<Domain, usize> {
    let mut per_domain = BTreeMap::new();
    for (s, &f) in samples.iter().zip(flags) {
        if f {
            *per_domain.entry(s.domain).or_insert(0) += 1;
        }
    }
    per_domain
}

fn targets_met(opts: &TrainOptions, total: usize, per_domain: &BTreeMap<Domain, usize>) -> bool {
    if total < opts.target_memorized {
        return false;
    }
    opts.per_domain_targets
        .iter()
        .all(|(d, t)| per_domain.get(d).copied().unwrap_or(0) >= *t)
}

/// Train `model` on `samples` until the memorization targets hold or
/// `max_epochs` runs out (then an explicit search failure carrying the best
/// counts achieved).
pub fn train_to_memorize(
    model: &mut Model,
    samples: &[Sample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    ensure!(
        opts.target_memorized <= samples.len(),
        "target_memorized {} exceeds sample count {}",
        opts.target_memorized,
        samples.len()
    );
    ensure!(opts.batch_size >= 1, "batch_size must be at least 1");
    ensure!(opts.check_every >= 1, "check_every must be at least 1");

    let report_for = |model: &Model, epochs: usize, loss: f64| -> Result<TrainReport> {
        let flags = memorized_flags(model, samples)?;
        let per_domain = count_per_domain(samples, &flags);
        let memorized_ids: Vec<String> = samples
            .iter()
            .zip(&flags)
            .filter(|(_, &f)| f)
            .map(|(s, _)| s.id.clone())
            .collect();
        Ok(TrainReport {
            epochs_run: epochs,
            final_loss: loss,
            memorized_count: memorized_ids.len(),
            per_domain,
            trained_samples: samples.len(),
            memorized_ids,
        })
    };

    // target 0 with no per-domain constraints: nothing to do
    if opts.target_memorized == 0 && opts.per_domain_targets.is_empty() {
        return report_for(model, 0, f64::NAN);
    }

    let named_count = model.weights.named().len();
    let mut second_moment: Vec<Tensor> = model
        .weights
        .named()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut step = 0usize;
    #[allow(unused_assignments)]
    let mut last_loss = f64::NAN;
    let mut best_total = 0usize;
    let mut best_per_domain = BTreeMap::new();

    for epoch in 1..=opts.max_epochs {
        let lr = if epoch > opts.lr_decay_after {
            opts.learning_rate * opts.lr_decay.powi((epoch - opts.lr_decay_after) as i32)
        } else {
            opts.learning_rate
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed ^ (epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            // per-sample backward passes in parallel, reduced in chunk order
            let results: Vec<Result<(f64, Vec<Tensor>)>> = chunk
                .par_iter()
                .map(|&i| {
                    let fwd = model.forward_train(&samples[i].tokens)?;
                    let mut tape = fwd.tape;
                    let loss = tape.value(fwd.loss).scalar_value();
                    tape.backward(fwd.loss)?;
                    let grads = fwd
                        .weight_ids
                        .iter()
                        .map(|&id| tape.grad(id).clone())
                        .collect();
                    Ok((loss, grads))
                })
                .collect();

            let mut batch_loss = 0.0;
            let mut acc: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (t, g) in a.iter_mut().zip(&grads) {
                            t.add_assign(g);
                        }
                    }
                }
            }
            let grads = acc.expect("non-empty chunk");
            let scale = 1.0 / chunk.len() as f64;
            batch_loss *= scale;
            epoch_loss += batch_loss;
            epoch_batches += 1;

            step += 1;
            let correction = 1.0 - opts.rms_decay.powi(step as i32);
            let mut slots = model.weights.named_mut();
            debug_assert_eq!(slots.len(), named_count);
            for ((_, w), (v, g)) in slots.iter_mut().zip(second_moment.iter_mut().zip(&grads)) {
                let wt = Arc::make_mut(w);
                let wd = wt.data_mut();
                let vd = v.data_mut();
                let gd = g.data();
                for j in 0..wd.len() {
                    let gj = gd[j] * scale;
                    vd[j] = opts.rms_decay * vd[j] + (1.0 - opts.rms_decay) * gj * gj;
                    let vhat = vd[j] / correction;
                    wd[j] -= lr * gj / (vhat.sqrt() + opts.eps);
                }
            }
        }
        last_loss = epoch_loss / epoch_batches.max(1) as f64;

        if epoch % opts.check_every == 0 || epoch == opts.max_epochs {
            let flags = memorized_flags(model, samples)?;
            let total = flags.iter().filter(|&&f| f).count();
            let per_domain = count_per_domain(samples, &flags);
            if total > best_total {
                best_total = total;
                best_per_domain = per_domain.clone();
            }
            if opts.verbose {
                eprintln!(
                    "epoch {epoch:4}  loss {last_loss:.4}  memorized {total}/{} {per_domain:?}",
                    samples.len()
                );
            }
            if targets_met(opts, total, &per_domain) {
                return report_for(model, epoch, last_loss);
            }
        }
    }

    Err(Error::Search(format!(
        "memorization target {} not reached within {} epochs; best count {} (per domain: {:?})",
        opts.target_memorized, opts.max_epochs, best_total, best_per_domain
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, Domain};
    use crate::model::ModelConfig;

    fn tiny_model(vocab_size: usize, seed: u64) -> Model {
        Model::new(ModelConfig::new(2, 2, 24, 12, 64, vocab_size, 128, seed))
    }

    #[test]
    fn target_zero_returns_immediately() {
        let corpus = generate_corpus(Domain::Wiki, 4, 21).unwrap();
        let mut model = tiny_model(corpus.vocab.len(), 1);
        let opts = TrainOptions {
            target_memorized: 0,
            ..TrainOptions::default()
        };
        let report = train_to_memorize(&mut model, &corpus.samples, &opts).unwrap();
        assert_eq!(report.epochs_run, 0);
    }

    #[test]
    fn unreachable_target_fails_with_best_count() {
        let corpus = generate_corpus(Domain::Wiki, 4, 22).unwrap();
        let mut model = tiny_model(corpus.vocab.len(), 2);
        let opts = TrainOptions {
            target_memorized: 4,
            max_epochs: 1,
            ..TrainOptions::default()
        };
        let err = train_to_memorize(&mut model, &corpus.samples, &opts).unwrap_err();
        match err {
            Error::Search(msg) => assert!(msg.contains("best count"), "{msg}"),
            other => panic!("expected search failure, got {other:?}"),
        }
    }

    /// Run-to-convergence oracle: a 2-layer model overfits 8 sequences.
    #[test]
    fn tiny_corpus_memorizes_completely() {
        let corpus = generate_corpus(Domain::Wiki, 8, 23).unwrap();
        let mut model = tiny_model(corpus.vocab.len(), 3);
        let opts = TrainOptions {
            target_memorized: 8,
            max_epochs: 300,
            check_every: 5,
            seed: 9,
            ..TrainOptions::default()
        };
        let report = train_to_memorize(&mut model, &corpus.samples, &opts).unwrap();
        assert_eq!(report.memorized_count, 8);
        assert_eq!(report.per_domain[&Domain::Wiki], 8);

        // internal consistency: the teacher-forced check must agree with true
        // greedy regeneration for every reported sample
        for s in &corpus.samples {
            let generated = model
                .generate_greedy(&s.tokens[..CONTEXT_LEN], s.tokens.len() - CONTEXT_LEN)
                .unwrap();
            assert_eq!(generated, s.tokens[CONTEXT_LEN..], "sample {}", s.id);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = generate_corpus(Domain::Code, 4, 24).unwrap();
        let run = || {
            let mut model = tiny_model(corpus.vocab.len(), 5);
            let opts = TrainOptions {
                target_memorized: 1,
                max_epochs: 3,
                check_every: 3,
                seed: 11,
                ..TrainOptions::default()
            };
            // ignore outcome; compare weights afterwards
            let _ = train_to_memorize(&mut model, &corpus.samples, &opts);
            model.digest()
        };
        assert_eq!(run(), run());
    }
}
