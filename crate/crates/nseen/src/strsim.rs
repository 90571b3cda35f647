//! String-similarity measures used to soft-label syntactic-variant pairs:
//! normalized Levenshtein, Jaro–Winkler, and trigram Jaccard.
//!
//! All three operate on Unicode scalar values (not bytes), are symmetric,
//! map to `[0, 1]`, and score identical strings as 1.

/// A similarity score in `[0, 1]`.
pub type SimilarityScore = f64;

/// Minimum number of single-character insertions, deletions or
/// substitutions turning `a` into `b`.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Two-row DP over the edit lattice.
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein similarity: `1 − distance / max(|a|, |b|)`.
///
/// Two empty strings are maximally similar (1).
pub fn levenshtein_sim(a: &str, b: &str) -> SimilarityScore {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(a, b) as f64 / max_len as f64
}

const WINKLER_PREFIX_WEIGHT: f64 = 0.1;
const WINKLER_MAX_PREFIX: usize = 4;

/// Jaro similarity boosted by common-prefix scaling (weight 0.1, prefix
/// capped at 4).
pub fn jaro_winkler_sim(a: &str, b: &str) -> SimilarityScore {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let jaro = jaro_sim(&a, &b);
    let prefix = a
        .iter()
        .zip(b.iter())
        .take(WINKLER_MAX_PREFIX)
        .take_while(|(x, y)| x == y)
        .count();
    jaro + prefix as f64 * WINKLER_PREFIX_WEIGHT * (1.0 - jaro)
}

fn jaro_sim(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut b_taken = vec![false; b.len()];
    let mut a_matched = vec![false; a.len()];
    let mut matches = 0usize;
    for (i, &ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_taken[j] && b[j] == ca {
                b_taken[j] = true;
                a_matched[i] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    // Count transpositions between the two matched subsequences.
    let matched_b: Vec<char> = b_taken
        .iter()
        .zip(b.iter())
        .filter_map(|(&t, &c)| t.then_some(c))
        .collect();
    let transpositions = a
        .iter()
        .zip(a_matched.iter())
        .filter_map(|(&c, &m)| m.then_some(c))
        .zip(matched_b.iter())
        .filter(|(x, y)| x != *y)
        .count()
        / 2;
    let m = matches as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - transpositions as f64) / m) / 3.0
}

/// Jaccard coefficient over sets of contiguous length-3 substrings.
///
/// A string shorter than 3 characters contributes itself as its single gram.
pub fn trigram_jaccard_sim(a: &str, b: &str) -> SimilarityScore {
    let ta = trigrams(a);
    let tb = trigrams(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let intersection = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - intersection;
    intersection as f64 / union as f64
}

fn trigrams(s: &str) -> std::collections::BTreeSet<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut grams = std::collections::BTreeSet::new();
    if chars.is_empty() {
        return grams;
    }
    if chars.len() < 3 {
        grams.insert(chars.iter().collect());
        return grams;
    }
    for w in chars.windows(3) {
        grams.insert(w.iter().collect());
    }
    grams
}
