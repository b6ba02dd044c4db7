//! Feature-side similarity and the dynamic partial match.
//!
//! `sim_f` is the cosine between the flattened, element-wise `tanh` of two
//! sequence features. The partial matcher builds a grid of per-row cosines
//! between a line feature (rows `x`) and a query feature (columns `y`) and
//! picks one line row per query row, never moving backwards along the line,
//! so that the summed cell similarity is maximal. The picked rows, in query
//! order, form the matched partial feature.

use log::warn;

use crate::encoder::SequenceFeature;
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Result of a cosine evaluation. `degenerate` is set when one operand has
/// zero norm after `tanh`, in which case `value` is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

fn cosine(u: &[f64], v: &[f64]) -> Cosine {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Cosine { value: 0.0, degenerate: true };
    }
    Cosine { value: (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0), degenerate: false }
}

/// Cosine similarity of `tanh(vec(a))` and `tanh(vec(b))`.
pub fn try_sim_f(a: &SequenceFeature, b: &SequenceFeature) -> Result<Cosine> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!("sim_f needs matching shapes, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let out = cosine(&tanh_vec(a.as_slice()), &tanh_vec(b.as_slice()));
    if out.degenerate {
        warn!("sim_f on an all-zero feature; similarity defined as 0");
    }
    Ok(out)
}

/// Panics on shape mismatch; see [`try_sim_f`].
pub fn sim_f(a: &SequenceFeature, b: &SequenceFeature) -> f64 {
    try_sim_f(a, b).expect("sim_f shape mismatch").value
}

/// `tanh` of a feature with its norm, for scoring one query against many
/// candidates without recomputing the query side.
#[derive(Debug, Clone)]
pub struct TanhFeature {
    values: Vec<f64>,
    norm: f64,
}

impl TanhFeature {
    pub fn new(f: &SequenceFeature) -> Self {
        let values = tanh_vec(f.as_slice());
        let norm = dot(&values, &values).sqrt();
        TanhFeature { values, norm }
    }

    /// `sim_f` against a raw candidate feature.
    pub fn sim(&self, other: &SequenceFeature) -> f64 {
        debug_assert_eq!(other.as_slice().len(), self.values.len());
        let mut d = 0.0;
        let mut n2 = 0.0;
        for (q, x) in self.values.iter().zip(other.as_slice()) {
            let v = x.tanh();
            d += q * v;
            n2 += v * v;
        }
        if self.norm == 0.0 || n2 == 0.0 {
            return 0.0;
        }
        (d / (self.norm * n2.sqrt())).clamp(-1.0, 1.0)
    }
}

/// `sim_f(a, b)` together with its gradients with respect to the raw
/// (pre-`tanh`) entries of `a` and `b`.
pub fn sim_f_grad(a: &SequenceFeature, b: &SequenceFeature) -> (f64, Matrix, Matrix) {
    assert_eq!(a.shape(), b.shape(), "sim_f shape mismatch");
    let (rows, cols) = a.shape();
    let u = tanh_vec(a.as_slice());
    let v = tanh_vec(b.as_slice());
    let nu = dot(&u, &u).sqrt();
    let nv = dot(&v, &v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, Matrix::zeros(rows, cols), Matrix::zeros(rows, cols));
    }
    let s = dot(&u, &v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let ga = u.iter().zip(&v).map(|(ui, vi)| (vi * inv - s * ui / (nu * nu)) * (1.0 - ui * ui)).collect();
    let gb = u.iter().zip(&v).map(|(ui, vi)| (ui * inv - s * vi / (nv * nv)) * (1.0 - vi * vi)).collect();
    (s, Matrix::from_vec(rows, cols, ga), Matrix::from_vec(rows, cols, gb))
}

/// Per-position cosine similarities, `cells[x][y]` for line row `x` and
/// query row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    line_rows: usize,
    query_rows: usize,
    cells: Vec<f64>,
    /// Set if any row had zero norm after `tanh`.
    pub degenerate: bool,
}

impl SimilarityGrid {
    /// Builds a grid from explicit values, `cells[x][y]`.
    pub fn from_cells(cells: Vec<Vec<f64>>) -> Result<Self> {
        let line_rows = cells.len();
        let query_rows = cells.first().map_or(0, Vec::len);
        if line_rows == 0 || query_rows == 0 || cells.iter().any(|r| r.len() != query_rows) {
            return Err(Error::Argument("similarity grid must be a non-empty rectangle".into()));
        }
        Ok(SimilarityGrid { line_rows, query_rows, cells: cells.into_iter().flatten().collect(), degenerate: false })
    }

    pub fn line_rows(&self) -> usize {
        self.line_rows
    }

    pub fn query_rows(&self) -> usize {
        self.query_rows
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.cells[x * self.query_rows + y]
    }
}

fn tanh_rows(m: &Matrix) -> (Vec<f64>, Vec<f64>, bool) {
    let values = tanh_vec(m.as_slice());
    let c = m.cols();
    let mut degenerate = false;
    let norms = values
        .chunks_exact(c)
        .map(|r| {
            let n = dot(r, r).sqrt();
            degenerate |= n == 0.0;
            n
        })
        .collect();
    (values, norms, degenerate)
}

pub fn cell_similarities(line_f: &SequenceFeature, query_f: &SequenceFeature) -> Result<SimilarityGrid> {
    if line_f.c() != query_f.c() {
        return Err(Error::Argument(format!(
            "feature widths differ: line has {} columns, query has {}",
            line_f.c(),
            query_f.c()
        )));
    }
    let c = line_f.c();
    let (lv, ln, ld) = tanh_rows(line_f.as_matrix());
    let (qv, qn, qd) = tanh_rows(query_f.as_matrix());
    let (xs, ys) = (line_f.t(), query_f.t());
    let mut cells = Vec::with_capacity(xs * ys);
    for x in 0..xs {
        let lr = &lv[x * c..(x + 1) * c];
        for y in 0..ys {
            let denom = ln[x] * qn[y];
            let v = if denom == 0.0 { 0.0 } else { (dot(lr, &qv[y * c..(y + 1) * c]) / denom).clamp(-1.0, 1.0) };
            cells.push(v);
        }
    }
    Ok(SimilarityGrid { line_rows: xs, query_rows: ys, cells, degenerate: ld || qd })
}

/// Optimal monotone path through a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// Line row chosen for each query row; non-decreasing.
    pub path: Vec<usize>,
    pub cumulative_score: f64,
}

/// Dynamic program over a similarity grid.
///
/// `S[x][0] = s[x][0]` and `S[x][y] = max_{k <= x} S[k][y-1] + s[x][y]`.
/// The prefix maximum is carried along `x` so the whole grid costs one pass.
/// Ties resolve to the smallest line row, both for the final row and while
/// backtracking.
pub fn dpma_grid(grid: &SimilarityGrid) -> GridPath {
    let (xs, ys) = (grid.line_rows(), grid.query_rows());
    let mut prev: Vec<f64> = (0..xs).map(|x| grid.get(x, 0)).collect();
    let mut cur = vec![0.0; xs];
    // back[y * xs + x]: argmax_{k <= x} S[k][y-1]
    let mut back = vec![0usize; xs * ys];
    for y in 1..ys {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for x in 0..xs {
            if prev[x] > best {
                best = prev[x];
                arg = x;
            }
            back[y * xs + x] = arg;
            cur[x] = best + grid.get(x, y);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut end = 0;
    for x in 1..xs {
        if prev[x] > prev[end] {
            end = x;
        }
    }
    let mut path = vec![0; ys];
    path[ys - 1] = end;
    for y in (1..ys).rev() {
        path[y - 1] = back[y * xs + path[y]];
    }
    GridPath { path, cumulative_score: prev[end] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmaResult {
    pub path: Vec<usize>,
    pub cumulative_score: f64,
    /// Row `y` is line row `path[y]`.
    pub matched_feature: SequenceFeature,
    pub degenerate: bool,
}

pub fn dpma(line_f: &SequenceFeature, query_f: &SequenceFeature) -> Result<DpmaResult> {
    let grid = cell_similarities(line_f, query_f)?;
    let GridPath { path, cumulative_score } = dpma_grid(&grid);
    let matched_feature = gather_rows(line_f, &path);
    Ok(DpmaResult { path, cumulative_score, matched_feature, degenerate: grid.degenerate })
}

pub(crate) fn gather_rows(f: &SequenceFeature, rows: &[usize]) -> SequenceFeature {
    let c = f.c();
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        data.extend_from_slice(f.as_matrix().row(r));
    }
    SequenceFeature::from_matrix_unchecked(Matrix::from_vec(rows.len(), c, data))
}

/// Similarity between the query and the partial patch found by [`dpma`].
pub fn partial_similarity(line_f: &SequenceFeature, query_f: &SequenceFeature) -> Result<Cosine> {
    if line_f.shape() != query_f.shape() {
        return Err(Error::Argument(format!(
            "partial_similarity needs matching shapes, got {:?} and {:?}",
            line_f.shape(),
            query_f.shape()
        )));
    }
    let found = dpma(line_f, query_f)?;
    let mut out = try_sim_f(&found.matched_feature, query_f)?;
    out.degenerate |= found.degenerate;
    Ok(out)
}
