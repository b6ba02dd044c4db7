//! Seeded synthetic scenes and their query sets.
//!
//! Each scene holds one or more text lines. Character widths are jittered
//! around a base width, so splitting a line into equal-width cells (as bag
//! construction does) misaligns with the true character extents.
//!
//! Random streams: scene `i` draws from ChaCha8 stream `i + 1` of the corpus
//! seed; query sampling uses stream 0.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::LOWERCASE;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPolygon, Point, DEFAULT_K};
use crate::textsim::is_subsequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub transcription: String,
    pub char_widths: Vec<f64>,
    pub polygon: BoundaryPolygon,
}

impl TextLine {
    pub fn new(transcription: impl Into<String>, char_widths: Vec<f64>, polygon: BoundaryPolygon) -> Result<Self> {
        let line = TextLine { transcription: transcription.into(), char_widths, polygon };
        line.validate().map_err(|(_, msg)| Error::Argument(msg))?;
        Ok(line)
    }

    /// A horizontal line with the given widths, `height` tall.
    pub fn straight(transcription: &str, char_widths: Vec<f64>, height: f64) -> Result<Self> {
        let total: f64 = char_widths.iter().sum();
        let polygon = BoundaryPolygon::new(vec![[0.0, 0.0], [total, 0.0]], vec![[0.0, height], [total, height]])?;
        TextLine::new(transcription, char_widths, polygon)
    }

    pub fn len(&self) -> usize {
        self.transcription.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.transcription.is_empty()
    }

    pub fn total_width(&self) -> f64 {
        self.char_widths.iter().sum()
    }

    /// Err carries `(field, message)`.
    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let n = self.transcription.chars().count();
        if n == 0 {
            return Err(("transcription".into(), "transcription must not be empty".into()));
        }
        if self.char_widths.len() != n {
            return Err((
                "char_widths".into(),
                format!("expected {n} widths (one per character), got {}", self.char_widths.len()),
            ));
        }
        if let Some(i) = self.char_widths.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err((format!("char_widths[{i}]"), "width must be positive".into()));
        }
        self.polygon.validate().map_err(|e| ("polygon".into(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub lines: Vec<TextLine>,
}

/// Evaluation queries and their ground-truth relevant scenes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuerySet {
    #[serde(rename = "tir")]
    pub tir_queries: Vec<String>,
    #[serde(rename = "ppr_cpp")]
    pub ppr_cpp_queries: Vec<String>,
    #[serde(rename = "ppr_ncpp")]
    pub ppr_ncpp_queries: Vec<String>,
    pub relevance: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Tir,
    Cpp,
    Ncpp,
}

impl QuerySet {
    /// Every query with its kind, in file order.
    pub fn all(&self) -> impl Iterator<Item = (&str, QueryKind)> {
        self.tir_queries
            .iter()
            .map(|q| (q.as_str(), QueryKind::Tir))
            .chain(self.ppr_cpp_queries.iter().map(|q| (q.as_str(), QueryKind::Cpp)))
            .chain(self.ppr_ncpp_queries.iter().map(|q| (q.as_str(), QueryKind::Ncpp)))
    }

    pub fn len(&self) -> usize {
        self.tir_queries.len() + self.ppr_cpp_queries.len() + self.ppr_ncpp_queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Whether a scene is relevant to a query of the given kind.
///
/// TIR: some line reads exactly the query. CPP: some line strictly longer
/// than the query contains it contiguously. NCPP: some line strictly longer
/// than the query contains it as an ordered subsequence.
pub fn is_relevant(scene: &Scene, query: &str, kind: QueryKind) -> bool {
    let qlen = query.chars().count();
    scene.lines.iter().any(|l| match kind {
        QueryKind::Tir => l.transcription == query,
        QueryKind::Cpp => l.len() > qlen && l.transcription.contains(query),
        QueryKind::Ncpp => l.len() > qlen && is_subsequence(&l.transcription, query),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Inclusive range.
    pub lines_per_scene: (usize, usize),
    pub alphabet: String,
    /// Inclusive range of characters per line.
    pub word_length: (usize, usize),
    pub width_jitter: f64,
    pub base_width: f64,
    pub line_height: f64,
    /// Point pairs per line polygon.
    pub k: usize,
    /// Fraction of lines drawn as arcs rather than straight bands.
    pub curved_fraction: f64,
    pub n_tir: usize,
    pub n_cpp: usize,
    pub n_ncpp: usize,
    /// Shortest continuous partial query.
    pub cpp_min_len: usize,
    /// Shortest non-continuous partial query after gap removal.
    pub ncpp_min_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 11,
            n_scenes: 200,
            lines_per_scene: (1, 3),
            alphabet: LOWERCASE.to_string(),
            word_length: (4, 10),
            width_jitter: 0.5,
            base_width: 1.0,
            line_height: 1.2,
            k: DEFAULT_K,
            curved_fraction: 0.5,
            n_tir: 40,
            n_cpp: 40,
            n_ncpp: 40,
            cpp_min_len: 3,
            ncpp_min_len: 3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_scenes == 0 {
            return bad("n_scenes must be at least 1".into());
        }
        if self.alphabet.is_empty() {
            return bad("alphabet must not be empty".into());
        }
        if self.word_length.0 < 2 {
            return bad(format!(
                "minimum word length must be at least 2, got {} (a 1-character line has no partial patch)",
                self.word_length.0
            ));
        }
        if self.word_length.0 > self.word_length.1 {
            return bad(format!("word length range {:?} is empty", self.word_length));
        }
        if self.lines_per_scene.0 == 0 || self.lines_per_scene.0 > self.lines_per_scene.1 {
            return bad(format!("lines per scene range {:?} is invalid", self.lines_per_scene));
        }
        if !(0.0..1.0).contains(&self.width_jitter) {
            return bad(format!("width jitter must lie in [0, 1), got {}", self.width_jitter));
        }
        if !(self.base_width > 0.0 && self.line_height > 0.0) {
            return bad("base width and line height must be positive".into());
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.curved_fraction) {
            return bad("curved fraction must lie in [0, 1]".into());
        }
        if self.cpp_min_len < 2 || self.ncpp_min_len < 2 {
            return bad("partial queries need at least 2 characters".into());
        }
        Ok(())
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn make_polygon(rng: &mut ChaCha8Rng, total: f64, cfg: &CorpusConfig) -> BoundaryPolygon {
    let k = cfg.k;
    let chord = total / (k - 1) as f64;
    let curved = rng.random::<f64>() < cfg.curved_fraction;
    let turn = if curved { rng.random_range(-0.12..0.12) } else { 0.0 };
    let heading0: f64 = rng.random_range(-0.3..0.3);
    let origin = [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)];

    // Equal chords, so the upper polyline is exactly `total` long.
    let mut upper: Vec<Point> = Vec::with_capacity(k);
    let mut headings = Vec::with_capacity(k - 1);
    upper.push(origin);
    for i in 0..k - 1 {
        let h = heading0 + turn * i as f64;
        headings.push(h);
        let p = upper[i];
        upper.push([p[0] + chord * h.cos(), p[1] + chord * h.sin()]);
    }
    let lower = upper
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let h = match i {
                0 => headings[0],
                i if i == k - 1 => headings[k - 2],
                i => (headings[i - 1] + headings[i]) / 2.0,
            };
            [p[0] - cfg.line_height * h.sin(), p[1] + cfg.line_height * h.cos()]
        })
        .collect();
    BoundaryPolygon { upper, lower }
}

fn make_line(rng: &mut ChaCha8Rng, alphabet: &[char], cfg: &CorpusConfig) -> TextLine {
    let len = rng.random_range(cfg.word_length.0..=cfg.word_length.1);
    let transcription: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
    let char_widths: Vec<f64> = (0..len)
        .map(|_| {
            let j = if cfg.width_jitter > 0.0 { rng.random_range(-cfg.width_jitter..cfg.width_jitter) } else { 0.0 };
            cfg.base_width * (1.0 + j)
        })
        .collect();
    let total = char_widths.iter().sum();
    let polygon = make_polygon(rng, total, cfg);
    TextLine { transcription, char_widths, polygon }
}

/// Generates scenes and a query set. Deterministic in `cfg`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(Vec<Scene>, QuerySet)> {
    cfg.validate()?;
    let alphabet: Vec<char> = cfg.alphabet.chars().collect();
    let scenes: Vec<Scene> = (0..cfg.n_scenes)
        .map(|i| {
            let mut rng = scene_rng(cfg.seed, i as u64 + 1);
            let n = rng.random_range(cfg.lines_per_scene.0..=cfg.lines_per_scene.1);
            Scene {
                scene_id: format!("scene-{i:05}"),
                lines: (0..n).map(|_| make_line(&mut rng, &alphabet, cfg)).collect(),
            }
        })
        .collect();
    let queries = sample_queries(&scenes, cfg);
    Ok((scenes, queries))
}

fn sample_queries(scenes: &[Scene], cfg: &CorpusConfig) -> QuerySet {
    let mut rng = scene_rng(cfg.seed, 0);
    let lines: Vec<&str> = scenes.iter().flat_map(|s| s.lines.iter().map(|l| l.transcription.as_str())).collect();
    let line_set: HashSet<&str> = lines.iter().copied().collect();
    let mut taken: HashSet<String> = HashSet::new();

    let mut distinct: Vec<&str> = line_set.iter().copied().collect();
    distinct.sort_unstable();
    distinct.shuffle(&mut rng);
    let tir: Vec<String> = distinct.iter().take(cfg.n_tir).map(|s| s.to_string()).collect();
    taken.extend(tir.iter().cloned());

    let attempts = 200 * (cfg.n_cpp + cfg.n_ncpp + 1);
    let mut cpp = Vec::new();
    for _ in 0..attempts {
        if cpp.len() >= cfg.n_cpp {
            break;
        }
        let src: Vec<char> = lines[rng.random_range(0..lines.len())].chars().collect();
        if src.len() <= cfg.cpp_min_len {
            continue;
        }
        let len = rng.random_range(cfg.cpp_min_len..src.len());
        let start = rng.random_range(0..=src.len() - len);
        let q: String = src[start..start + len].iter().collect();
        if line_set.contains(q.as_str()) || !taken.insert(q.clone()) {
            continue;
        }
        cpp.push(q);
    }

    let mut ncpp = Vec::new();
    for _ in 0..attempts {
        if ncpp.len() >= cfg.n_ncpp {
            break;
        }
        let src_str = lines[rng.random_range(0..lines.len())];
        let src: Vec<char> = src_str.chars().collect();
        if let Some(q) = non_continuous_query(&mut rng, &src, cfg.ncpp_min_len) {
            if src_str.contains(q.as_str()) || line_set.contains(q.as_str()) || !taken.insert(q.clone()) {
                continue;
            }
            ncpp.push(q);
        }
    }

    let mut relevance = BTreeMap::new();
    for (queries, kind) in [(&tir, QueryKind::Tir), (&cpp, QueryKind::Cpp), (&ncpp, QueryKind::Ncpp)] {
        for q in queries.iter() {
            let hits: BTreeSet<String> =
                scenes.iter().filter(|s| is_relevant(s, q, kind)).map(|s| s.scene_id.clone()).collect();
            relevance.insert(q.clone(), hits);
        }
    }
    QuerySet { tir_queries: tir, ppr_cpp_queries: cpp, ppr_ncpp_queries: ncpp, relevance }
}

/// Samples a substring of length >= 4 and removes one or two interior runs.
fn non_continuous_query(rng: &mut ChaCha8Rng, src: &[char], min_len: usize) -> Option<String> {
    if src.len() < 4 {
        return None;
    }
    let len = rng.random_range(4..=src.len());
    let start = rng.random_range(0..=src.len() - len);
    let window = &src[start..start + len];
    // interior positions are 1..len-1; the window's ends are always kept
    let mut keep = vec![true; len];
    let runs = if len >= 5 { rng.random_range(1..=2) } else { 1 };
    for _ in 0..runs {
        let run = rng.random_range(1..=2usize).min(len - 2);
        let at = rng.random_range(1..=len - 1 - run);
        // never merge two runs into one contiguous gap
        if keep[at - 1] && keep[at + run] && keep[at..at + run].iter().all(|k| *k) {
            keep[at..at + run].iter_mut().for_each(|k| *k = false);
        }
    }
    let q: String = window.iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| *c).collect();
    let kept = q.chars().count();
    (kept < len && kept >= min_len).then_some(q)
}

/// Path of the query file that accompanies a corpus file:
/// `c.jsonl` becomes `c.queries.json`.
pub fn queries_path_for(corpus: &Path) -> PathBuf {
    corpus.with_extension("queries.json")
}

/// Writes one JSON scene record per line, and the query set next to it.
pub fn save_corpus(scenes: &[Scene], queries: &QuerySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(fs::File::create(path)?);
    for scene in scenes {
        serde_json::to_writer(&mut out, scene).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let q = serde_json::to_vec_pretty(queries).map_err(std::io::Error::from)?;
    fs::write(queries_path_for(path), q)?;
    Ok(())
}

/// Loads a corpus and its query file. Either everything parses and
/// validates, or nothing is returned.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Vec<Scene>, QuerySet)> {
    let path = path.as_ref();
    let scenes = load_scenes(path)?;
    let qpath = queries_path_for(path);
    let queries = load_queries(&qpath, &scenes)?;
    Ok((scenes, queries))
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut scenes = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::parse(path, lineno, field, e.into_inner().to_string())
        })?;
        if scene.lines.is_empty() {
            return Err(Error::parse(path, lineno, "lines", "a scene needs at least one line"));
        }
        for (i, l) in scene.lines.iter().enumerate() {
            l.validate().map_err(|(field, msg)| Error::parse(path, lineno, format!("lines[{i}].{field}"), msg))?;
        }
        if !ids.insert(scene.scene_id.clone()) {
            return Err(Error::parse(path, lineno, "scene_id", format!("duplicate id {:?}", scene.scene_id)));
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn load_queries(path: &Path, scenes: &[Scene]) -> Result<QuerySet> {
    let text = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let qs: QuerySet = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let (line, msg) = (e.inner().line(), e.into_inner().to_string());
        Error::parse(path, line, field, msg)
    })?;
    let ids: HashSet<&str> = scenes.iter().map(|s| s.scene_id.as_str()).collect();
    for (q, _) in qs.all() {
        let rel = qs
            .relevance
            .get(q)
            .ok_or_else(|| Error::parse(path, 0, format!("relevance.{q}"), "query has no relevance entry"))?;
        if rel.is_empty() {
            return Err(Error::parse(path, 0, format!("relevance.{q}"), "relevance set is empty"));
        }
        if let Some(bad) = rel.iter().find(|id| !ids.contains(id.as_str())) {
            return Err(Error::parse(path, 0, format!("relevance.{q}"), format!("unknown scene id {bad:?}")));
        }
    }
    Ok(qs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CorpusConfig {
        CorpusConfig {
            seed: 7,
            n_scenes: 3,
            lines_per_scene: (1, 1),
            alphabet: "ab".into(),
            word_length: (3, 3),
            width_jitter: 0.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn zero_jitter_gives_uniform_widths() {
        let (scenes, _) = generate_corpus(&tiny()).unwrap();
        assert_eq!(scenes.len(), 3);
        for s in &scenes {
            assert_eq!(s.lines.len(), 1);
            assert_eq!(s.lines[0].len(), 3);
            assert!(s.lines[0].char_widths.iter().all(|w| *w == 1.0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&tiny()).unwrap();
        let b = generate_corpus(&tiny()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_errors() {
        let mut cfg = tiny();
        cfg.alphabet.clear();
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.word_length = (1, 3);
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn polygon_length_matches_widths() {
        let (scenes, _) = generate_corpus(&CorpusConfig { n_scenes: 20, ..CorpusConfig::default() }).unwrap();
        for l in scenes.iter().flat_map(|s| &s.lines) {
            assert!((l.polygon.arc_length() - l.total_width()).abs() < 1e-6);
            assert!(l.polygon.validate().is_ok());
        }
    }

    #[test]
    fn relevance_rules() {
        let line = TextLine::straight("abcdef", vec![1.0; 6], 1.0).unwrap();
        let scene = Scene { scene_id: "s".into(), lines: vec![line] };
        assert!(is_relevant(&scene, "abcdef", QueryKind::Tir));
        assert!(!is_relevant(&scene, "abcde", QueryKind::Tir));
        assert!(is_relevant(&scene, "bcd", QueryKind::Cpp));
        assert!(!is_relevant(&scene, "abcdef", QueryKind::Cpp));
        assert!(is_relevant(&scene, "bdf", QueryKind::Ncpp));
        assert!(!is_relevant(&scene, "fdb", QueryKind::Ncpp));
    }
}
