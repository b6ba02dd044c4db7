//! Bags of partial proposals, max aggregation, and the two bag losses.

use serde::{Deserialize, Serialize};

use crate::corpus::TextLine;
use crate::encoder::SequenceFeature;
use crate::error::{Error, Result};
use crate::featsim::sim_f;
use crate::geometry::{slice_window, BoundaryPolygon};

pub const DEFAULT_N_MIN: usize = 2;

/// One sliding window of `n` characters starting at character `start`,
/// under the equal-width assumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: usize,
    pub n: usize,
    pub start_frac: f64,
    pub end_frac: f64,
}

/// Windows for a line assumed to hold `n_chars` equal-width characters,
/// ordered by `n` then by start.
pub fn windows(n_chars: usize, n_min: usize, n_max: usize) -> Result<Vec<Window>> {
    if n_chars < 2 {
        return Err(Error::Bag(format!("a bag needs a line of at least 2 characters, got {n_chars}")));
    }
    if n_min < 2 || n_min > n_max || n_max > n_chars {
        return Err(Error::Bag(format!(
            "window sizes must satisfy 2 <= n_min <= n_max <= {n_chars}, got [{n_min}, {n_max}]"
        )));
    }
    let len = n_chars as f64;
    let mut out = Vec::new();
    for n in n_min..=n_max {
        for start in 0..=n_chars - n {
            out.push(Window { start, n, start_frac: start as f64 / len, end_frac: (start + n) as f64 / len });
        }
    }
    Ok(out)
}

/// Number of windows `windows` emits: `sum_n (n_chars - n + 1)`.
pub fn window_count(n_chars: usize, n_min: usize, n_max: usize) -> usize {
    (n_min..=n_max.min(n_chars)).map(|n| n_chars - n + 1).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub polygon: BoundaryPolygon,
    pub window: Window,
}

/// Partial proposals of one line with their pseudo-labels.
#[derive(Debug, Clone)]
pub struct Bag<'a> {
    pub line: &'a TextLine,
    pub proposals: Vec<Proposal>,
    pub pseudo_labels: Vec<String>,
}

impl Bag<'_> {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    /// Whether `query` is a substring of some pseudo-label.
    pub fn contains(&self, query: &str) -> bool {
        self.pseudo_labels.iter().any(|l| l.contains(query))
    }
}

/// Sliding windows over the line's characters, each sliced out of the
/// polygon and labelled with the characters it is assumed to cover.
pub fn construct_bag(line: &TextLine, n_min: usize, n_max: usize) -> Result<Bag<'_>> {
    let chars: Vec<char> = line.transcription.chars().collect();
    let wins = windows(chars.len(), n_min, n_max)?;
    let mut proposals = Vec::with_capacity(wins.len());
    let mut pseudo_labels = Vec::with_capacity(wins.len());
    for w in wins {
        let polygon = slice_window(&line.polygon, w.start_frac, w.end_frac)?;
        proposals.push(Proposal { polygon, window: w });
        pseudo_labels.push(chars[w.start..w.start + w.n].iter().collect());
    }
    Ok(Bag { line, proposals, pseudo_labels })
}

/// Index and similarity of the proposal closest to the query; the first
/// one wins ties.
pub fn aggregate(bag_features: &[SequenceFeature], query_f: &SequenceFeature) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in bag_features.iter().enumerate() {
        let s = sim_f(query_f, f);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| Error::Argument("cannot aggregate an empty bag".into()))
}

/// How a ranking sample was treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankStatus {
    /// Query not found in the bag labels.
    NotContained,
    /// Best proposal no closer than the whole line; dropped as noise.
    Filtered,
    /// Inside the margin; contributes loss and gradient.
    Active,
    /// Already beyond the margin.
    Satisfied,
}

/// Ranking loss as a function of `delta = sim(query, best) - sim(query, line)`.
pub fn rank_loss(delta: f64, contained: bool, margin: f64) -> (f64, RankStatus) {
    if !contained {
        (0.0, RankStatus::NotContained)
    } else if delta <= 0.0 {
        (0.0, RankStatus::Filtered)
    } else if delta < margin {
        (margin - delta, RankStatus::Active)
    } else {
        (0.0, RankStatus::Satisfied)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOutcome {
    pub loss: f64,
    pub theta: usize,
    pub delta: f64,
    pub status: RankStatus,
}

pub fn rankmil_loss(
    query: &str,
    query_f: &SequenceFeature,
    line_f: &SequenceFeature,
    bag: &Bag<'_>,
    bag_features: &[SequenceFeature],
    margin: f64,
) -> Result<RankOutcome> {
    check_bag(bag, bag_features)?;
    let (theta, best) = aggregate(bag_features, query_f)?;
    let delta = best - sim_f(query_f, line_f);
    let (loss, status) = rank_loss(delta, bag.contains(query), margin);
    Ok(RankOutcome { loss, theta, delta, status })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilOutcome {
    pub loss: f64,
    pub theta: usize,
    pub similarity: f64,
    pub contained: bool,
}

/// `|sim(query, best) - 1|` for bags whose labels contain the query,
/// `|sim(query, best)|` otherwise.
pub fn mil_loss(
    query: &str,
    query_f: &SequenceFeature,
    bag: &Bag<'_>,
    bag_features: &[SequenceFeature],
) -> Result<MilOutcome> {
    check_bag(bag, bag_features)?;
    let (theta, similarity) = aggregate(bag_features, query_f)?;
    let contained = bag.contains(query);
    let target = if contained { 1.0 } else { 0.0 };
    Ok(MilOutcome { loss: (similarity - target).abs(), theta, similarity, contained })
}

fn check_bag(bag: &Bag<'_>, features: &[SequenceFeature]) -> Result<()> {
    if bag.len() != features.len() {
        return Err(Error::Argument(format!("bag has {} proposals but {} features", bag.len(), features.len())));
    }
    Ok(())
}
