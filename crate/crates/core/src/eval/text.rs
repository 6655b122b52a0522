use std::collections::HashMap;

use super::report::MetricReport;
use crate::error::{Error, Result};

/// Lower-cased whitespace tokens with surrounding punctuation stripped.
pub fn tokenize_words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in words.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

fn check_pairs(candidates: &[String], references: &[String]) -> Result<()> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.iter().any(|c| tokenize_words(c).is_empty()) {
        return Err(Error::Data("empty candidate".into()));
    }
    Ok(())
}

/// Corpus BLEU@`max_n` (uniform weights, brevity penalty, single reference), scaled to 0..100.
pub fn bleu(candidates: &[String], references: &[String], max_n: usize) -> Result<MetricReport> {
    check_pairs(candidates, references)?;
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let (cw, rw) = (tokenize_words(c), tokenize_words(r));
        cand_len += cw.len();
        ref_len += rw.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&rw, n);
            for (g, k) in ngram_counts(&cw, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += cw.len().saturating_sub(n - 1);
        }
    }
    let log_p: f64 = if matched.iter().zip(&total).any(|(m, t)| *m == 0 || *t == 0) {
        f64::NEG_INFINITY
    } else {
        matched.iter().zip(&total).map(|(m, t)| (*m as f64 / *t as f64).ln()).sum::<f64>() / max_n as f64
    };
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(MetricReport::new(format!("bleu@{max_n}"), 100.0 * bp * log_p.exp(), 0.0)?.with("pairs", candidates.len()))
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Mean sentence-level ROUGE-L F1 in 0..1.
pub fn rouge_l(candidates: &[String], references: &[String]) -> Result<MetricReport> {
    check_pairs(candidates, references)?;
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        let (cw, rw) = (tokenize_words(c), tokenize_words(r));
        let l = lcs(&cw, &rw) as f64;
        if l > 0.0 && !rw.is_empty() {
            let (p, rc) = (l / cw.len() as f64, l / rw.len() as f64);
            sum += 2.0 * p * rc / (p + rc);
        }
    }
    Ok(MetricReport::new("rouge_l", sum / candidates.len() as f64, 0.0)?.with("pairs", candidates.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identical_text_scores_perfectly() {
        let c = s(&["the robot walks forward then turns left"]);
        assert!((bleu(&c, &c, 1).unwrap().value - 100.0).abs() < 1e-9);
        assert!((bleu(&c, &c, 4).unwrap().value - 100.0).abs() < 1e-9);
        assert!((rouge_l(&c, &c).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_brevity_penalty() {
        let b = bleu(&s(&["the robot walks"]), &s(&["the robot walks forward"]), 1).unwrap();
        assert!((b.value - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
        let r = rouge_l(&s(&["the robot walks"]), &s(&["the robot walks forward"])).unwrap();
        assert!((r.value - 2.0 * 1.0 * 0.75 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn clipped_counts_and_bigrams() {
        // Candidate "the the the" against "the cat": clipped unigram precision 1/3.
        let b = bleu(&s(&["the the the"]), &s(&["the cat"]), 1).unwrap();
        assert!((b.value - 100.0 / 3.0).abs() < 1e-9);
        // "a b c d" vs "a b x d": p1 = 3/4, p2 = 1/3.
        let b = bleu(&s(&["a b c d"]), &s(&["a b x d"]), 2).unwrap();
        assert!((b.value - 100.0 * (0.75f64 * (1.0 / 3.0)).sqrt()).abs() < 1e-9);
        // LCS of "a b c d" and "a x c d" is 3.
        let r = rouge_l(&s(&["a b c d"]), &s(&["a x c d"])).unwrap();
        assert!((r.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_empty() {
        assert_eq!(bleu(&s(&["walk left"]), &s(&["turn right"]), 1).unwrap().value, 0.0);
        assert_eq!(rouge_l(&s(&["walk left"]), &s(&["turn right"])).unwrap().value, 0.0);
        assert!(bleu(&s(&[" "]), &s(&["x"]), 1).is_err());
        assert!(bleu(&[], &[], 1).is_err());
    }
}
