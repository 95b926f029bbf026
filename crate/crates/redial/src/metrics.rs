//! From-scratch text-overlap metrics and the composite response-quality score.
//!
//! All metrics operate on [`TokenSeq`] values produced by [`tokenize`]:
//! lowercased, whitespace-split, with punctuation isolated into standalone
//! tokens. Tokenization is fixed engine-wide so scores are comparable across
//! generation backends.

use std::collections::HashMap;

use thiserror::Error;

/// Smoothing floor for zero higher-order BLEU precisions. Unigram precision
/// is never smoothed.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference must be non-empty")]
    EmptyReference,
}

/// An ordered sequence of lowercase tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    /// Builds a sequence from pre-split tokens, normalizing each the way the
    /// tokenizer would (lowercase, empty tokens dropped).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSeq {
            tokens: tokens
                .into_iter()
                .map(|t| t.as_ref().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn ngrams(&self, n: usize) -> impl Iterator<Item = &[String]> {
        self.tokens.windows(n)
    }
}

/// Lowercases, splits on whitespace, and isolates punctuation characters as
/// standalone tokens. Empty input yields an empty sequence.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            // Punctuation (and any other symbol) becomes its own token.
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq { tokens }
}

fn ngram_counts<'a>(seq: &'a TokenSeq, n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    for gram in seq.ngrams(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU: the geometric mean of clipped modified k-gram
/// precisions for k = 1..=n, times the brevity penalty
/// `min(1, exp(1 - |ref|/|cand|))`. Zero precisions for k >= 2 are floored
/// at [`BLEU_EPSILON`]; unigram precision is left exact so BLEU-1 is
/// unsmoothed. Orders longer than the candidate have no k-grams and
/// contribute a vacuous precision of 1. An empty candidate scores 0.
pub fn bleu_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> f64 {
    assert!(n >= 1, "bleu order must be at least 1");
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let total = candidate.len().saturating_sub(k - 1);
        if total == 0 {
            continue;
        }
        let mut matched = 0usize;
        let mut ref_counts = ngram_counts(reference, k);
        for gram in candidate.ngrams(k) {
            if let Some(count) = ref_counts.get_mut(gram) {
                if *count > 0 {
                    *count -= 1;
                    matched += 1;
                }
            }
        }
        if matched == 0 {
            if k == 1 {
                return 0.0;
            }
            log_sum += BLEU_EPSILON.ln();
        } else {
            log_sum += (matched as f64 / total as f64).ln();
        }
    }
    let brevity = (1.0 - reference.len() as f64 / candidate.len() as f64).exp().min(1.0);
    brevity * (log_sum / n as f64).exp()
}

/// Precision, recall, and F score of an LCS-based overlap measure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // One-row DP over the shorter side.
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Longest-common-subsequence overlap: precision = LCS/|cand|,
/// recall = LCS/|ref|, F their harmonic mean. All zero when either side is
/// empty.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_len(candidate.tokens(), reference.tokens()) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f,
    }
}

/// Leftmost maximal exact-match unigram alignment between candidate and
/// reference: each candidate token takes the leftmost unused matching
/// reference position. Returns the aligned (candidate, reference) position
/// pairs in candidate order.
fn align_unigrams(candidate: &TokenSeq, reference: &TokenSeq) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, token) in candidate.tokens().iter().enumerate() {
        let hit = reference
            .tokens()
            .iter()
            .enumerate()
            .position(|(j, r)| !used[j] && r == token);
        if let Some(j) = hit {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in pairs {
        let contiguous = prev.map_or(false, |(pi, pj)| i == pi + 1 && j == pj + 1);
        if !contiguous {
            chunks += 1;
        }
        prev = Some((i, j));
    }
    chunks
}

/// Exact-match harmonic-mean metric with a fragmentation penalty, without
/// stemming or synonym resources: F = P*R / (0.9*P + 0.1*R) over the
/// leftmost maximal unigram alignment, penalty = 0.5*(chunks/matches)^3,
/// score = F * (1 - penalty). Zero when nothing aligns.
pub fn meteor_lite(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let pairs = align_unigrams(candidate, reference);
    let matches = pairs.len();
    if matches == 0 {
        return 0.0;
    }
    let precision = matches as f64 / candidate.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let f_mean = precision * recall / (0.9 * precision + 0.1 * recall);
    let fragmentation = chunk_count(&pairs) as f64 / matches as f64;
    let penalty = 0.5 * fragmentation.powi(3);
    f_mean * (1.0 - penalty)
}

/// Proportion of distinct n-grams across all responses: distinct count over
/// total count, 0 when there are no n-grams at all. Supports n in {1, 2}.
pub fn dist_n(responses: &[TokenSeq], n: usize) -> f64 {
    assert!(n == 1 || n == 2, "dist-n is defined for n in {{1, 2}}");
    let mut distinct = std::collections::HashSet::new();
    let mut total = 0usize;
    for response in responses {
        for gram in response.ngrams(n) {
            distinct.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        distinct.len() as f64 / total as f64
    }
}

/// Composite response-quality score: the mean of unigram BLEU and ROUGE-L F
/// between a generated response and the gold response, both computed over
/// the module tokenizer.
pub fn response_quality(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    let reference = tokenize(reference);
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let candidate = tokenize(candidate);
    Ok(0.5 * (bleu_n(&candidate, &reference, 1) + rouge_l(&candidate, &reference).f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(tokens.iter().copied())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tokenize_isolates_punctuation() {
        assert_eq!(tokenize("Hello, world").tokens(), ["hello", ",", "world"]);
    }

    #[test]
    fn tokenize_empty_and_whitespace() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  B").tokens(), ["a", "b"]);
    }

    #[test]
    fn bleu_identity_is_one() {
        let s = seq(&["a", "b", "c"]);
        assert_eq!(bleu_n(&s, &s, 1), 1.0);
        // n exceeds the sequence length: the missing orders are vacuous.
        assert_eq!(bleu_n(&s, &s, 4), 1.0);
    }

    #[test]
    fn bleu_unigram_hand_count() {
        // 2 of 3 unigrams match, equal lengths so no brevity penalty.
        let cand = seq(&["the", "cat", "sat"]);
        let reference = seq(&["the", "cat", "slept"]);
        assert!(close(bleu_n(&cand, &reference, 1), 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        let cand = seq(&["x", "y"]);
        let reference = seq(&["a", "b"]);
        assert_eq!(bleu_n(&cand, &reference, 1), 0.0);
    }

    #[test]
    fn bleu_empty_candidate_is_zero() {
        assert_eq!(bleu_n(&seq(&[]), &seq(&["a"]), 1), 0.0);
        assert_eq!(bleu_n(&seq(&[]), &seq(&["a"]), 4), 0.0);
    }

    #[test]
    fn bleu_higher_order_smoothing() {
        // Unigrams overlap but no bigram does; BLEU-2 falls back to epsilon
        // for the bigram precision instead of zeroing out.
        let cand = seq(&["a", "c"]);
        let reference = seq(&["a", "b"]);
        let expected = (0.5f64.ln() / 2.0 + BLEU_EPSILON.ln() / 2.0).exp();
        assert!(close(bleu_n(&cand, &reference, 2), expected, 1e-15));
    }

    #[test]
    fn rouge_identity() {
        let s = seq(&["a", "b", "c"]);
        let score = rouge_l(&s, &s);
        assert_eq!((score.precision, score.recall, score.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rouge_hand_example() {
        let cand = seq(&["a", "b", "c", "d"]);
        let reference = seq(&["a", "c", "d"]);
        let score = rouge_l(&cand, &reference);
        assert!(close(score.precision, 0.75, 1e-12));
        assert!(close(score.recall, 1.0, 1e-12));
        assert!(close(score.f, 2.0 * 0.75 / 1.75, 1e-12));
    }

    #[test]
    fn rouge_disjoint_and_empty() {
        let score = rouge_l(&seq(&["x"]), &seq(&["y"]));
        assert_eq!((score.precision, score.recall, score.f), (0.0, 0.0, 0.0));
        assert_eq!(rouge_l(&seq(&[]), &seq(&["y"])).f, 0.0);
    }

    #[test]
    fn meteor_disjoint_is_zero() {
        assert_eq!(meteor_lite(&seq(&["x"]), &seq(&["y"])), 0.0);
    }

    #[test]
    fn meteor_identity_three_tokens() {
        let s = seq(&["a", "b", "c"]);
        // One chunk of three matches: penalty 0.5 * (1/3)^3.
        let expected = 1.0 - 0.5 * (1.0f64 / 3.0).powi(3);
        assert!(close(meteor_lite(&s, &s), expected, 1e-12));
    }

    #[test]
    fn meteor_fragmented_alignment() {
        // cand [a, x, b] vs ref [a, b]: 2 matches in 2 chunks.
        let cand = seq(&["a", "x", "b"]);
        let reference = seq(&["a", "b"]);
        let p = 2.0 / 3.0;
        let r = 1.0;
        let f = p * r / (0.9 * p + 0.1 * r);
        let expected = f * (1.0 - 0.5);
        assert!(close(meteor_lite(&cand, &reference), expected, 1e-12));
    }

    #[test]
    fn dist_unigram_hand_counts() {
        assert!(close(dist_n(&[seq(&["a", "a", "b"])], 1), 2.0 / 3.0, 1e-12));
        let repeated = vec![seq(&["a"]); 4];
        assert!(close(dist_n(&repeated, 1), 0.25, 1e-12));
        assert_eq!(dist_n(&[], 1), 0.0);
    }

    #[test]
    fn response_quality_identity_and_disjoint() {
        assert!(close(response_quality("same text", "same text").unwrap(), 1.0, 1e-12));
        assert_eq!(response_quality("abc", "xyz").unwrap(), 0.0);
    }

    #[test]
    fn response_quality_composes_components() {
        let bleu = 2.0 / 3.0;
        let f = rouge_l(&tokenize("the cat sat"), &tokenize("the cat slept")).f;
        let expected = 0.5 * (bleu + f);
        assert!(close(
            response_quality("the cat sat", "the cat slept").unwrap(),
            expected,
            1e-12
        ));
    }

    #[test]
    fn response_quality_rejects_empty_reference() {
        assert!(matches!(
            response_quality("x", "   "),
            Err(MetricsError::EmptyReference)
        ));
    }

    #[test]
    fn response_quality_monotone_in_components() {
        // Growing the shared prefix with the reference never lowers the score.
        let reference = "one two three four five";
        let mut last = 0.0;
        for k in 1..=5 {
            let cand = reference.split(' ').take(k).collect::<Vec<_>>().join(" ");
            let score = response_quality(&cand, reference).unwrap();
            assert!(score >= last - 1e-12, "k={k}: {score} < {last}");
            last = score;
        }
    }

    fn token_seq_strategy(max_len: usize) -> impl Strategy<Value = TokenSeq> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "d"], 0..=max_len)
            .prop_map(|tokens| TokenSeq::from_tokens(tokens))
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            cand in token_seq_strategy(12),
            reference in token_seq_strategy(12),
            n in 1usize..=4,
        ) {
            let bleu = bleu_n(&cand, &reference, n);
            prop_assert!((0.0..=1.0).contains(&bleu));
            let rouge = rouge_l(&cand, &reference);
            prop_assert!((0.0..=1.0).contains(&rouge.f));
            prop_assert!((0.0..=1.0).contains(&rouge.precision));
            prop_assert!((0.0..=1.0).contains(&rouge.recall));
            let meteor = meteor_lite(&cand, &reference);
            prop_assert!((0.0..=1.0).contains(&meteor));
        }

        #[test]
        fn identity_scores_are_maximal(cand in token_seq_strategy(12)) {
            prop_assume!(!cand.is_empty());
            prop_assert_eq!(bleu_n(&cand, &cand, 1), 1.0);
            prop_assert_eq!(rouge_l(&cand, &cand).f, 1.0);
            // Identity alignment is a single chunk, so the penalty is the
            // exact fragmentation floor.
            let m = cand.len() as f64;
            let expected = 1.0 - 0.5 / (m * m * m);
            prop_assert!((meteor_lite(&cand, &cand) - expected).abs() < 1e-12);
        }

        #[test]
        fn dist_n_bounds(responses in proptest::collection::vec(token_seq_strategy(8), 0..5)) {
            let d1 = dist_n(&responses, 1);
            let d2 = dist_n(&responses, 2);
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert!((0.0..=1.0).contains(&d2));
        }
    }
}
