//! Library results checked against independent reference computations.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pstr_core::encoder::covered_chars;
use pstr_core::featsim::{dpma_grid, SimilarityGrid};
use pstr_core::geometry::{arc_position, chain_length, Point};
use pstr_core::mil::{window_count, windows};
use pstr_core::retrieval::average_precision;
use pstr_core::{
    dpma, edit_distance, encode_query, sim_f, sim_t, slice_window, tpga_resample, BoundaryPolygon, Matrix, ModelConfig,
    ModelParams, SequenceFeature,
};

/// Levenshtein distance by memoised recursion on suffixes.
fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut HashMap::new())
}

fn random_word(rng: &mut impl Rng, alphabet: &[char], max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

#[test]
fn edit_distance_matches_recursive_definition() {
    let alphabet: Vec<char> = "abcé漢".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let a = random_word(&mut rng, &alphabet, 7);
        let b = random_word(&mut rng, &alphabet, 7);
        let ac: Vec<char> = a.chars().collect();
        let bc: Vec<char> = b.chars().collect();
        let d = levenshtein_oracle(&ac, &bc);
        assert_eq!(edit_distance(&a, &b), d, "{a:?} {b:?}");
        if a.is_empty() || b.is_empty() {
            assert!(sim_t(&a, &b).is_err());
        } else {
            let expect = 1.0 - d as f64 / ac.len().max(bc.len()) as f64;
            assert!((sim_t(&a, &b).unwrap() - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn text_similarity_known_values() {
    assert!((sim_t("kitten", "sitting").unwrap() - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
    assert_eq!(sim_t("abc", "abc").unwrap(), 1.0);
    assert_eq!(sim_t("abc", "xyz").unwrap(), 0.0);
    // one scalar value per character, not per byte
    assert_eq!(edit_distance("café", "cafe"), 1);
    assert!((sim_t("café", "cafe").unwrap() - 0.75).abs() < 1e-15);
}

/// Best monotone path by enumeration; ties go to the path that is smallest
/// when compared from the last query row backwards.
fn dpma_oracle(cells: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let (xs, ys) = (cells.len(), cells[0].len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut path = vec![0usize; ys];
    loop {
        if path.windows(2).all(|w| w[0] <= w[1]) {
            let score: f64 = path.iter().enumerate().map(|(y, &x)| cells[x][y]).sum();
            let better = match &best {
                None => true,
                Some((bp, bs)) => score > *bs || (score == *bs && path.iter().rev().lt(bp.iter().rev())),
            };
            if better {
                best = Some((path.clone(), score));
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == ys {
                return best.unwrap();
            }
            path[i] += 1;
            if path[i] < xs {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn dpma_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // a coarse value set makes ties common and the sums exact
    let values = [-1.0, -0.5, 0.0, 0.5, 1.0];
    for _ in 0..400 {
        let xs = rng.random_range(1..=5);
        let ys = rng.random_range(1..=4);
        let cells: Vec<Vec<f64>> =
            (0..xs).map(|_| (0..ys).map(|_| values[rng.random_range(0..values.len())]).collect()).collect();
        let got = dpma_grid(&SimilarityGrid::from_cells(cells.clone()).unwrap());
        let (path, score) = dpma_oracle(&cells);
        assert_eq!(got.path, path, "{cells:?}");
        assert_eq!(got.cumulative_score, score);
    }
}

#[test]
fn dpma_on_features_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c = 4;
        let rand_feat = |rng: &mut ChaCha8Rng, t: usize| {
            let data = (0..t * c).map(|_| rng.random_range(-2.0..2.0)).collect();
            SequenceFeature::new(Matrix::from_vec(t, c, data)).unwrap()
        };
        let line = rand_feat(&mut rng, 5);
        let query = rand_feat(&mut rng, 4);
        // cosine of tanh rows, computed directly
        let cells: Vec<Vec<f64>> = (0..5)
            .map(|x| {
                (0..4)
                    .map(|y| {
                        let a: Vec<f64> = line.as_matrix().row(x).iter().map(|v| v.tanh()).collect();
                        let b: Vec<f64> = query.as_matrix().row(y).iter().map(|v| v.tanh()).collect();
                        let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
                        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                        dot / (na * nb)
                    })
                    .collect()
            })
            .collect();
        let got = dpma(&line, &query).unwrap();
        let (path, score) = dpma_oracle(&cells);
        assert_eq!(got.path, path);
        assert!((got.cumulative_score - score).abs() < 1e-12);
        for (y, &x) in path.iter().enumerate() {
            assert_eq!(got.matched_feature.as_matrix().row(y), line.as_matrix().row(x));
        }
    }
}

#[test]
fn feature_similarity_matches_direct_formula() {
    let params = ModelParams::init(ModelConfig { t: 6, c: 5, ..ModelConfig::default() }, 4).unwrap();
    let a = encode_query("store", &params).unwrap();
    let b = encode_query("stone", &params).unwrap();
    let ta: Vec<f64> = a.as_slice().iter().map(|v| v.tanh()).collect();
    let tb: Vec<f64> = b.as_slice().iter().map(|v| v.tanh()).collect();
    let dot: f64 = ta.iter().zip(&tb).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let expect = dot / (norm(&ta) * norm(&tb));
    assert!((sim_f(&a, &b) - expect).abs() < 1e-12);
    assert!((sim_f(&a, &a) - 1.0).abs() < 1e-12);
}

/// Average precision as the mean of `relevant-so-far / rank` over relevant ranks.
fn ap_oracle(flags: &[bool]) -> f64 {
    let ranks: Vec<usize> = flags.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i + 1).collect();
    let precisions: Vec<f64> =
        ranks.iter().map(|&k| flags[..k].iter().filter(|&&r| r).count() as f64 / k as f64).collect();
    precisions.iter().sum::<f64>() / precisions.len() as f64
}

#[test]
fn average_precision_matches_definition() {
    assert!((average_precision(&[true, false, true]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(average_precision(&[false, false, true]).unwrap(), 1.0 / 3.0);
    assert!(average_precision(&[false, false]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(1..20);
        let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        flags[rng.random_range(0..n)] = true;
        assert!((average_precision(&flags).unwrap() - ap_oracle(&flags)).abs() < 1e-12);
    }
}

#[test]
fn window_enumeration_matches_counting_formula() {
    for len in 2..12 {
        for n_min in 2..=len {
            for n_max in n_min..=len {
                let ws = windows(len, n_min, n_max).unwrap();
                let expect: usize = (n_min..=n_max).map(|n| len - n + 1).sum();
                assert_eq!(ws.len(), expect);
                assert_eq!(window_count(len, n_min, n_max), expect);
                for w in &ws {
                    assert_eq!(w.start_frac, w.start as f64 / len as f64);
                    assert_eq!(w.end_frac, (w.start + w.n) as f64 / len as f64);
                }
            }
        }
    }
    assert!(windows(3, 4, 5).is_err());
}

#[test]
fn span_coverage_uses_character_centres() {
    // centres at 1.5, 3.5, 4.5, 6.5 of a total width of 8
    assert_eq!(covered_chars(&[3.0, 1.0, 1.0, 3.0], 0.25, 0.5), vec![1]);
    assert_eq!(covered_chars(&[3.0, 1.0, 1.0, 3.0], 0.0, 1.0), vec![0, 1, 2, 3]);
    assert_eq!(covered_chars(&[1.0, 1.0, 1.0, 1.0], 0.25, 0.75), vec![1, 2]);
}

/// Arc length of a chain measured on a dense resampling of each segment.
fn dense_length(chain: &[Point]) -> f64 {
    let mut total = 0.0;
    for w in chain.windows(2) {
        let steps = 1000;
        let mut prev = w[0];
        for s in 1..=steps {
            let t = s as f64 / steps as f64;
            let p = [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
            total += ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
            prev = p;
        }
    }
    total
}

fn arc_band(k: usize, turn: f64) -> BoundaryPolygon {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, -turn * (k as f64 - 2.0) / 2.0);
    for i in 0..k {
        if i > 0 {
            x += heading.cos();
            y += heading.sin();
            heading += turn;
        }
        let h = heading - turn / 2.0;
        upper.push([x, y]);
        lower.push([x - 1.2 * h.sin(), y + 1.2 * h.cos()]);
    }
    BoundaryPolygon::new(upper, lower).unwrap()
}

#[test]
fn arc_length_matches_dense_sampling() {
    let poly = arc_band(9, 0.15);
    assert!((poly.arc_length() - dense_length(&poly.upper)).abs() < 1e-9);
    assert!((chain_length(&poly.upper) - 8.0).abs() < 1e-12);
}

#[test]
fn resampled_points_are_equidistant_along_the_source() {
    let poly = arc_band(7, 0.2);
    let total = poly.arc_length();
    for k_out in [2, 3, 7, 14] {
        let r = tpga_resample(&poly, k_out).unwrap();
        assert_eq!(r.upper.len(), k_out);
        assert_eq!(r.upper[0], poly.upper[0]);
        assert_eq!(r.upper[k_out - 1], poly.upper[6]);
        for (i, p) in r.upper.iter().enumerate() {
            let expect = total * i as f64 / (k_out - 1) as f64;
            assert!((arc_position(&poly.upper, *p) - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn slice_spans_its_fraction_of_the_source_arc() {
    let poly = arc_band(7, 0.2);
    let total = poly.arc_length();
    let (a, b) = (0.2, 0.65);
    let s = slice_window(&poly, a, b).unwrap();
    let start = arc_position(&poly.upper, s.upper[0]);
    let end = arc_position(&poly.upper, *s.upper.last().unwrap());
    assert!((start - a * total).abs() < 1e-6);
    assert!((end - start - (b - a) * total).abs() < 1e-6);
    // a straight band keeps its own chord length exactly
    let flat = BoundaryPolygon::new(
        vec![[0.0, 0.0], [1.0, 0.0], [4.0, 0.0], [10.0, 0.0]],
        vec![[0.0, 1.0], [2.0, 1.0], [5.0, 1.0], [10.0, 1.0]],
    )
    .unwrap();
    let s = slice_window(&flat, a, b).unwrap();
    assert!((s.arc_length() - (b - a) * 10.0).abs() < 1e-6);
    assert!((s.lower_arc_length() - (b - a) * 10.0).abs() < 1e-6);
}
