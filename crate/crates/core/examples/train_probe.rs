// Scratch probe for sizing the acceptance training run. Not part of the
// test suite.

use memcirc::corpus::{generate_corpus, Domain, Sample, CONTEXT_LEN};
use memcirc::model::{Model, ModelConfig};
use memcirc::trainer::{is_exactly_memorized, train_to_memorize, TrainOptions};
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let n_train: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(120);
    let epochs: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);
    let lr: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2e-3);

    let wiki = generate_corpus(Domain::Wiki, n_train, 42).unwrap();
    let vocab = wiki.vocab.clone();
    println!("vocab size {}", vocab.len());
    let foreign: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0);
    let d: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(48);
    let config = ModelConfig::new(4, 4, d, d / 4, 4 * d, vocab.len(), 128, 42);
    let mut model = Model::new(config);

    let mut samples: Vec<Sample> = wiki.samples.clone();
    for d in [Domain::Code, Domain::Email, Domain::Web] {
        if foreign > 0 {
            let c = generate_corpus(d, foreign, 42).unwrap();
            samples.extend(c.samples);
        }
    }
    let batch: usize = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let t0 = Instant::now();
    let opts = TrainOptions {
        batch_size: batch,
        learning_rate: lr,
        max_epochs: epochs,
        target_memorized: samples.len(),
        check_every: 2,
        seed: 7,
        verbose: true,
        lr_decay_after: 45,
        lr_decay: 0.93,
        ..TrainOptions::default()
    };
    let res = train_to_memorize(&mut model, &samples, &opts);
    let memorized: usize = samples
        .par_iter()
        .map(|s| is_exactly_memorized(&model, &s.tokens, CONTEXT_LEN).unwrap() as usize)
        .sum();
    println!(
        "done: elapsed {:6.1}s  memorized {}/{}  ok={}",
        t0.elapsed().as_secs_f64(),
        memorized,
        samples.len(),
        res.is_ok()
    );
    // near-miss profile: how many continuation predictions are wrong per sample
    let wrongs: Vec<usize> = samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.tokens).unwrap();
            (CONTEXT_LEN - 1..s.tokens.len() - 1)
                .filter(|&p| {
                    memcirc::tensor::argmax(logits.row(p)) as u32 != s.tokens[p + 1]
                })
                .count()
        })
        .collect();
    let mut hist = [0usize; 6];
    for &w in &wrongs {
        let b = match w { 0 => 0, 1 => 1, 2..=3 => 2, 4..=7 => 3, 8..=15 => 4, _ => 5 };
        hist[b] += 1;
    }
    println!("wrong-continuation histogram [0,1,2-3,4-7,8-15,16+]: {hist:?}");
}
