//! Sentence-level BLEU over token ids.
//!
//! Orders 1..=4 with uniform weights and a brevity penalty. Smoothing: an
//! order with zero matches scores `(m+1)/(t+1)` (an order the candidate is
//! too short to have scores 1); zero unigram overlap short-circuits to a hard
//! 0.0.

use std::collections::HashMap;

use crate::ensure;
use crate::error::Result;

const MAX_ORDER: usize = 4;

pub fn bleu(candidate: &[u32], reference: &[u32]) -> Result<f64> {
    ensure!(
        !candidate.is_empty() && !reference.is_empty(),
        "bleu requires non-empty sequences"
    );
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let total = candidate.len().saturating_sub(n - 1);
        let mut ref_grams: HashMap<&[u32], usize> = HashMap::new();
        if reference.len() >= n {
            for g in reference.windows(n) {
                *ref_grams.entry(g).or_insert(0) += 1;
            }
        }
        let mut matches = 0usize;
        if candidate.len() >= n {
            let mut cand_grams: HashMap<&[u32], usize> = HashMap::new();
            for g in candidate.windows(n) {
                *cand_grams.entry(g).or_insert(0) += 1;
            }
            for (g, c) in cand_grams {
                matches += c.min(ref_grams.get(g).copied().unwrap_or(0));
            }
        }
        if n == 1 && matches == 0 {
            return Ok(0.0);
        }
        let p = if matches == 0 {
            (matches + 1) as f64 / (total + 1) as f64
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * (log_sum / MAX_ORDER as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_score_one() {
        let x: Vec<u32> = (0..30).collect();
        assert!((bleu(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_sequences_score_zero() {
        assert_eq!(bleu(&[1, 2, 3, 4], &[5, 6, 7, 8]).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_is_contract_violation() {
        assert!(bleu(&[], &[1]).is_err());
        assert!(bleu(&[1], &[]).is_err());
    }

    /// Frozen oracle table (20 cases, computed independently from the same
    /// smoothing definition).
    #[test]
    fn hand_computed_cases() {
        let cases: Vec<(Vec<u32>, Vec<u32>, f64)> = vec![
            (vec![1, 2, 3, 4], vec![1, 2, 3, 4], 1.000000000000000),
            (vec![1, 2, 3, 4], vec![1, 2, 3, 5], 0.594603557501361),
            (
                vec![1, 2, 3, 4, 5, 6, 7, 8],
                vec![1, 2, 3, 4, 9, 10, 11, 12],
                0.345720784641941,
            ),
            (vec![1, 2, 3, 4], vec![5, 6, 7, 8], 0.000000000000000),
            (vec![1, 1, 1, 1], vec![1, 2, 3, 4], 0.319471552123136),
            (vec![1, 2, 3], vec![1, 2, 3], 1.000000000000000),
            (vec![1, 2], vec![1, 2], 1.000000000000000),
            (vec![5], vec![5], 1.000000000000000),
            (vec![1, 2, 3, 4, 5], vec![1, 2, 3, 4], 0.668740304976422),
            (vec![1, 2, 3, 4], vec![1, 2, 3, 4, 5], 0.778800783071405),
            (
                vec![1, 2, 3, 4, 5, 6],
                vec![4, 5, 6, 1, 2, 3],
                0.562341325190349,
            ),
            (
                vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
                vec![1, 2, 3, 4, 5, 99, 7, 8, 9, 10],
                0.658037006476246,
            ),
            (
                vec![1, 2, 1, 2, 1, 2],
                vec![1, 2, 1, 2, 3, 4],
                0.508132748154615,
            ),
            (
                vec![9, 1, 2, 3, 4, 9, 9],
                vec![1, 2, 3, 4, 5, 6, 7],
                0.411133616900520,
            ),
            (
                vec![1, 2, 3, 4, 4, 3, 2, 1],
                vec![1, 2, 3, 4],
                0.345720784641941,
            ),
            (vec![7, 7, 7, 1], vec![7, 1, 7, 2], 0.451801001804922),
            (
                vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
                vec![1, 2, 3, 99, 5, 6, 7, 99, 9, 10, 11, 12],
                0.391818915007021,
            ),
            (
                vec![2, 4, 6, 8, 10],
                vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
                0.132180595919581,
            ),
            (
                vec![1, 2, 3, 4, 5, 6, 7],
                vec![7, 6, 5, 4, 3, 2, 1],
                0.262690989442416,
            ),
            (
                vec![1, 2, 3, 4, 5, 6, 7, 8],
                vec![1, 2, 3, 4, 5, 6, 7, 8],
                1.000000000000000,
            ),
        ];
        assert_eq!(cases.len(), 20);
        for (i, (cand, reference, expect)) in cases.iter().enumerate() {
            let got = bleu(cand, reference).unwrap();
            assert!(
                (got - expect).abs() < 1e-9,
                "case {i}: got {got}, expected {expect}"
            );
        }
    }

    /// Replacing matched tokens with novel ones never increases the score.
    #[test]
    fn monotone_under_novel_token_replacement() {
        let reference: Vec<u32> = (0..20).collect();
        let mut candidate = reference.clone();
        let mut prev = bleu(&candidate, &reference).unwrap();
        // a fixed ladder of 10 perturbations at spread positions
        for (step, pos) in [3usize, 11, 7, 15, 1, 18, 9, 5, 13, 16].iter().enumerate() {
            candidate[*pos] = 1000 + step as u32; // novel token
            let next = bleu(&candidate, &reference).unwrap();
            assert!(
                next <= prev + 1e-15,
                "step {step}: {next} > {prev}"
            );
            prev = next;
        }
    }
}
