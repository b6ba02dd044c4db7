//! String-side similarity: normalized Levenshtein distance.
//!
//! Strings are compared per Unicode scalar value, never per byte.

use crate::error::{Error, Result};

/// Levenshtein distance (unit-cost insert, delete, substitute).
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance_chars(&a, &b)
}

pub fn edit_distance_chars(a: &[char], b: &[char]) -> usize {
    // keep the shorter string on the row axis
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// `1 - edit_distance(a, b) / max(|a|, |b|)`, in `[0, 1]`.
pub fn sim_t(a: &str, b: &str) -> Result<f64> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("sim_t is undefined for empty strings".into()));
    }
    Ok(sim_t_chars(&a, &b))
}

/// Unchecked variant for callers that already hold non-empty char slices.
pub fn sim_t_chars(a: &[char], b: &[char]) -> f64 {
    debug_assert!(!a.is_empty() && !b.is_empty());
    let d = edit_distance_chars(a, b);
    1.0 - d as f64 / a.len().max(b.len()) as f64
}

/// True if `needle` is a contiguous substring of `haystack`.
pub fn contains_substring(haystack: &str, needle: &str) -> bool {
    haystack.contains(needle)
}

/// True if the characters of `needle` appear in order (not necessarily
/// adjacent) in `haystack`.
pub fn is_subsequence(haystack: &str, needle: &str) -> bool {
    let mut it = haystack.chars();
    needle.chars().all(|c| it.any(|h| h == c))
}
