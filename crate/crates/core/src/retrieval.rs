//! Gallery ranking with whole lines, inference-time bags, or the dynamic
//! partial match, and mean average precision.
//!
//! Scene features do not depend on the query, so a [`Gallery`] encodes them
//! once. Per-query timing covers only the similarity measurement against
//! those stored (raw, pre-`tanh`) features.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{QueryKind, QuerySet, Scene, TextLine};
use crate::encoder::{encode_query, encode_scene_span, ModelParams, SequenceFeature};
use crate::error::{Error, Result};
use crate::featsim::{dpma_grid, SimilarityGrid, TanhFeature};
use crate::mil::windows;
use crate::tensor::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Whole-line features only.
    LineOnly,
    /// Lines plus sliding-window proposals built at inference.
    Bags,
    /// Lines plus the partial patch found by dynamic matching.
    Dpma,
}

impl Matcher {
    pub const ALL: [Matcher; 3] = [Matcher::LineOnly, Matcher::Bags, Matcher::Dpma];

    pub fn name(self) -> &'static str {
        match self {
            Matcher::LineOnly => "line",
            Matcher::Bags => "bags",
            Matcher::Dpma => "dpma",
        }
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line" | "line_only" | "line-only" => Ok(Matcher::LineOnly),
            "bags" => Ok(Matcher::Bags),
            "dpma" => Ok(Matcher::Dpma),
            _ => Err(Error::Argument(format!("unknown matcher {s:?}"))),
        }
    }
}

/// How many characters inference-time bags assume a line holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagPolicy {
    /// Typical character width; a line is assumed to hold
    /// `round(arc_length / char_width)` characters.
    pub char_width: f64,
    pub n_min: usize,
}

impl BagPolicy {
    /// Uses the median character width of a corpus.
    pub fn from_corpus(scenes: &[Scene]) -> Result<Self> {
        let mut widths: Vec<f64> =
            scenes.iter().flat_map(|s| s.lines.iter().flat_map(|l| l.char_widths.iter().copied())).collect();
        if widths.is_empty() {
            return Err(Error::Argument("cannot estimate a character width from an empty corpus".into()));
        }
        widths.sort_by(f64::total_cmp);
        let mid = widths.len() / 2;
        let median = if widths.len() % 2 == 1 { widths[mid] } else { (widths[mid - 1] + widths[mid]) / 2.0 };
        Ok(BagPolicy { char_width: median, n_min: 2 })
    }

    pub fn estimated_chars(&self, line: &TextLine) -> usize {
        ((line.polygon.arc_length() / self.char_width).round() as usize).max(self.n_min.max(2))
    }
}

#[derive(Debug, Clone)]
struct GalleryLine {
    scene: usize,
    feature: SequenceFeature,
    proposals: Vec<SequenceFeature>,
}

/// Precomputed scene-side features of a corpus for one matcher.
#[derive(Debug, Clone)]
pub struct Gallery {
    pub matcher: Matcher,
    scene_ids: Vec<String>,
    lines: Vec<GalleryLine>,
}

impl Gallery {
    pub fn build(
        scenes: &[Scene],
        params: &ModelParams,
        matcher: Matcher,
        policy: &BagPolicy,
        seed: u64,
    ) -> Result<Self> {
        let mut lines = Vec::new();
        for (si, scene) in scenes.iter().enumerate() {
            for line in &scene.lines {
                let feature = encode_scene_span(line, 0.0, 1.0, params, seed)?;
                let proposals =
                    if matcher == Matcher::Bags { bag_features(line, params, policy, seed)? } else { Vec::new() };
                lines.push(GalleryLine { scene: si, feature, proposals });
            }
        }
        Ok(Gallery { matcher, scene_ids: scenes.iter().map(|s| s.scene_id.clone()).collect(), lines })
    }

    pub fn scene_ids(&self) -> &[String] {
        &self.scene_ids
    }

    /// Number of stored candidate features.
    pub fn candidate_count(&self) -> usize {
        self.lines.iter().map(|l| 1 + l.proposals.len()).sum()
    }

    /// Best score per scene, with the winning line and (for the partial
    /// matcher) its path.
    pub fn score(&self, query_f: &SequenceFeature) -> Vec<SceneScore> {
        let mut out: Vec<SceneScore> =
            (0..self.scene_ids.len()).map(|_| SceneScore { score: f64::NEG_INFINITY, line: 0, path: None }).collect();
        let q = TanhFeature::new(query_f);
        let rows = TanhRows::new(query_f);
        let mut line_index = vec![0usize; self.scene_ids.len()];
        for gl in &self.lines {
            let li = line_index[gl.scene];
            line_index[gl.scene] += 1;
            let (s, path) = match self.matcher {
                Matcher::LineOnly => (q.sim(&gl.feature), None),
                Matcher::Bags => {
                    let best = gl.proposals.iter().map(|p| q.sim(p)).fold(q.sim(&gl.feature), f64::max);
                    (best, None)
                }
                Matcher::Dpma => {
                    let m = rows.match_line(&gl.feature);
                    if m.partial > m.whole {
                        (m.partial, Some(m.path))
                    } else {
                        (m.whole, Some(m.path))
                    }
                }
            };
            let slot = &mut out[gl.scene];
            if s > slot.score {
                *slot = SceneScore { score: s, line: li, path };
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub score: f64,
    /// Index of the best line within its scene.
    pub line: usize,
    pub path: Option<Vec<usize>>,
}

/// Row-wise `tanh` of a query, reused across every line it is matched to.
struct TanhRows {
    c: usize,
    values: Vec<f64>,
    row_norms: Vec<f64>,
    norm: f64,
}

struct LineMatch {
    whole: f64,
    partial: f64,
    path: Vec<usize>,
}

impl TanhRows {
    fn new(f: &SequenceFeature) -> Self {
        let c = f.c();
        let values: Vec<f64> = f.as_slice().iter().map(|v| v.tanh()).collect();
        let row_norms = values.chunks_exact(c).map(|r| dot(r, r).sqrt()).collect();
        let norm = dot(&values, &values).sqrt();
        TanhRows { c, values, row_norms, norm }
    }

    /// Whole-line similarity and partial similarity along the optimal path.
    /// `tanh` of gathered rows is the gather of `tanh` rows, so the line is
    /// transformed once.
    fn match_line(&self, line_f: &SequenceFeature) -> LineMatch {
        let line = TanhRows::new(line_f);
        let c = self.c;
        let (xs, ys) = (line.row_norms.len(), self.row_norms.len());
        let mut cells = Vec::with_capacity(xs);
        for x in 0..xs {
            let lr = &line.values[x * c..(x + 1) * c];
            cells.push(
                (0..ys)
                    .map(|y| {
                        let d = line.row_norms[x] * self.row_norms[y];
                        if d == 0.0 {
                            0.0
                        } else {
                            (dot(lr, &self.values[y * c..(y + 1) * c]) / d).clamp(-1.0, 1.0)
                        }
                    })
                    .collect(),
            );
        }
        let grid = SimilarityGrid::from_cells(cells).expect("grid is a non-empty rectangle");
        let path = dpma_grid(&grid).path;
        let cos = |num: f64, n2: f64| {
            if n2 == 0.0 || self.norm == 0.0 {
                0.0
            } else {
                (num / (n2.sqrt() * self.norm)).clamp(-1.0, 1.0)
            }
        };
        let whole = cos(dot(&line.values, &self.values), line.norm * line.norm);
        let (mut num, mut n2) = (0.0, 0.0);
        for (y, &x) in path.iter().enumerate() {
            num += dot(&line.values[x * c..(x + 1) * c], &self.values[y * c..(y + 1) * c]);
            n2 += line.row_norms[x] * line.row_norms[x];
        }
        LineMatch { whole, partial: cos(num, n2), path }
    }
}

fn bag_features(line: &TextLine, params: &ModelParams, policy: &BagPolicy, seed: u64) -> Result<Vec<SequenceFeature>> {
    let n = policy.estimated_chars(line);
    let n_min = policy.n_min.max(2).min(n);
    windows(n, n_min, n)?.into_iter().map(|w| encode_scene_span(line, w.start_frac, w.end_frac, params, seed)).collect()
}

fn check_query(query: &str) -> Result<()> {
    if query.is_empty() {
        return Err(Error::Argument("query must not be empty".into()));
    }
    Ok(())
}

fn single(
    scene: &Scene,
    query: &str,
    params: &ModelParams,
    matcher: Matcher,
    policy: &BagPolicy,
    seed: u64,
) -> Result<f64> {
    check_query(query)?;
    let g = Gallery::build(std::slice::from_ref(scene), params, matcher, policy, seed)?;
    Ok(g.score(&encode_query(query, params)?)[0].score)
}

/// Best of the whole-line and partial-match similarities over the lines.
pub fn score_scene_dpma(scene: &Scene, query: &str, params: &ModelParams, seed: u64) -> Result<f64> {
    let policy = BagPolicy { char_width: 1.0, n_min: 2 };
    single(scene, query, params, Matcher::Dpma, &policy, seed)
}

/// Best similarity over the lines and their inference-time bags.
pub fn score_scene_bags(
    scene: &Scene,
    query: &str,
    params: &ModelParams,
    policy: &BagPolicy,
    seed: u64,
) -> Result<f64> {
    single(scene, query, params, Matcher::Bags, policy, seed)
}

pub fn score_scene_line(scene: &Scene, query: &str, params: &ModelParams, seed: u64) -> Result<f64> {
    let policy = BagPolicy { char_width: 1.0, n_min: 2 };
    single(scene, query, params, Matcher::LineOnly, &policy, seed)
}

/// Mean over relevant ranks `k` of the precision at `k`.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Evaluation("average precision is undefined without a relevant item".into()));
    }
    Ok(sum / hits as f64)
}

/// Scene indices by descending score, ties by ascending scene id.
pub fn rank(scores: &[f64], scene_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| scene_ids[a].cmp(&scene_ids[b])));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Tir,
    Ppr,
    Both,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tir" => Ok(Task::Tir),
            "ppr" => Ok(Task::Ppr),
            "both" => Ok(Task::Both),
            _ => Err(Error::Argument(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScene {
    pub scene_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub kind: QueryKind,
    pub ranking: Vec<RankedScene>,
    pub ap: f64,
    /// Wall-clock seconds spent scoring the gallery.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub matcher: Matcher,
    pub map_tir: Option<f64>,
    pub map_ppr: Option<f64>,
    pub map_cpp: Option<f64>,
    pub map_ncpp: Option<f64>,
    pub median_query_seconds: f64,
    pub queries: Vec<QueryResult>,
}

impl RetrievalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::from)?;
        fs::write(path, json)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub task: Task,
    /// Seed of the scene-feature noise.
    pub seed: u64,
    pub policy: BagPolicy,
    pub threads: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Ranks the whole gallery for each selected query and scores the result.
pub fn evaluate(
    scenes: &[Scene],
    queries: &QuerySet,
    params: &ModelParams,
    matcher: Matcher,
    opts: &EvalOptions,
) -> Result<RetrievalReport> {
    let selected: Vec<(&str, QueryKind)> = queries
        .all()
        .filter(|(_, k)| match opts.task {
            Task::Tir => *k == QueryKind::Tir,
            Task::Ppr => *k != QueryKind::Tir,
            Task::Both => true,
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Evaluation("no queries to evaluate".into()));
    }
    let gallery = Gallery::build(scenes, params, matcher, &opts.policy, opts.seed)?;
    let encoded: Vec<SequenceFeature> = selected.iter().map(|(q, _)| encode_query(q, params)).collect::<Result<_>>()?;

    let threads = opts.threads.max(1).min(selected.len());
    let chunk = selected.len().div_ceil(threads);
    let timed: Vec<(Vec<f64>, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = encoded
            .chunks(chunk)
            .map(|part| {
                let gallery = &gallery;
                scope.spawn(move || {
                    part.iter()
                        .map(|qf| {
                            let start = Instant::now();
                            let scores: Vec<f64> = gallery.score(qf).into_iter().map(|s| s.score).collect();
                            (scores, start.elapsed().as_secs_f64())
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scoring thread panicked")).collect()
    });

    let mut results = Vec::with_capacity(selected.len());
    for ((query, kind), (scores, seconds)) in selected.iter().zip(timed) {
        let relevant = queries
            .relevance
            .get(*query)
            .ok_or_else(|| Error::Evaluation(format!("query {query:?} has no relevance entry")))?;
        let order = rank(&scores, gallery.scene_ids());
        let flags: Vec<bool> = order.iter().map(|&i| relevant.contains(&gallery.scene_ids()[i])).collect();
        let ap = average_precision(&flags)
            .map_err(|_| Error::Evaluation(format!("query {query:?} has no relevant scene in this gallery")))?;
        results.push(QueryResult {
            query: query.to_string(),
            kind: *kind,
            ranking: order
                .iter()
                .map(|&i| RankedScene { scene_id: gallery.scene_ids()[i].clone(), score: scores[i] })
                .collect(),
            ap,
            seconds,
        });
    }
    Ok(summarize(matcher, results))
}

/// Aggregates per-query results into a report.
pub fn summarize(matcher: Matcher, results: Vec<QueryResult>) -> RetrievalReport {
    let aps =
        |f: &dyn Fn(QueryKind) -> bool| -> Vec<f64> { results.iter().filter(|r| f(r.kind)).map(|r| r.ap).collect() };
    let seconds: Vec<f64> = results.iter().map(|r| r.seconds).collect();
    RetrievalReport {
        matcher,
        map_tir: mean(&aps(&|k| k == QueryKind::Tir)),
        map_ppr: mean(&aps(&|k| k != QueryKind::Tir)),
        map_cpp: mean(&aps(&|k| k == QueryKind::Cpp)),
        map_ncpp: mean(&aps(&|k| k == QueryKind::Ncpp)),
        median_query_seconds: median(&seconds),
        queries: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert!((average_precision(&[true, false, true]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true, true]).unwrap(), 1.0);
        assert!((average_precision(&[false, false, false, true]).unwrap() - 0.25).abs() < 1e-12);
        assert!(matches!(average_precision(&[false]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn ties_break_by_scene_id() {
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(rank(&[0.5, 0.5, 0.9], &ids), vec![2, 1, 0]);
    }

    #[test]
    fn matcher_names() {
        for m in Matcher::ALL {
            assert_eq!(m.name().parse::<Matcher>().unwrap(), m);
        }
        assert!("x".parse::<Matcher>().is_err());
    }
}
