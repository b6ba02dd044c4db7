//! Boundary-point polygons for text lines.
//!
//! A text line is described by two chains of points running along its long
//! sides; `upper[i]` pairs with `lower[i]`. Both chains are treated as
//! piecewise-linear curves and parameterized by their own arc length, so a
//! fractional position `f` maps to `f * len(upper)` on the upper chain and
//! `f * len(lower)` on the lower chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of point pairs per polygon.
pub const DEFAULT_K: usize = 7;

pub type Point = [f64; 2];

const SIMPLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPolygon {
    pub upper: Vec<Point>,
    pub lower: Vec<Point>,
}

impl BoundaryPolygon {
    /// Builds a polygon after checking pairing, finiteness and that neither
    /// chain crosses itself.
    pub fn new(upper: Vec<Point>, lower: Vec<Point>) -> Result<Self> {
        let poly = BoundaryPolygon { upper, lower };
        poly.validate()?;
        Ok(poly)
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper.len() != self.lower.len() {
            return Err(Error::Geometry(format!(
                "upper chain has {} points but lower chain has {}",
                self.upper.len(),
                self.lower.len()
            )));
        }
        if self.upper.len() < 2 {
            return Err(Error::Geometry(format!(
                "a boundary polygon needs at least 2 point pairs, got {}",
                self.upper.len()
            )));
        }
        for (name, chain) in [("upper", &self.upper), ("lower", &self.lower)] {
            if chain.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Geometry(format!("{name} chain has a non-finite coordinate")));
            }
            if !is_simple(chain) {
                return Err(Error::Geometry(format!("{name} chain intersects itself")));
            }
        }
        Ok(())
    }

    /// Number of point pairs.
    pub fn k(&self) -> usize {
        self.upper.len()
    }

    /// Arc length of the upper chain, the reference length for slicing.
    pub fn arc_length(&self) -> f64 {
        chain_length(&self.upper)
    }

    pub fn lower_arc_length(&self) -> f64 {
        chain_length(&self.lower)
    }
}

pub fn chain_length(chain: &[Point]) -> f64 {
    chain.windows(2).map(|w| dist(w[0], w[1])).sum()
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Cumulative arc length at every vertex of a chain.
fn cumulative(chain: &[Point]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(chain.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in chain.windows(2) {
        total += dist(w[0], w[1]);
        acc.push(total);
    }
    acc
}

/// Samples a chain at the given arc-length fractions (each in `[0, 1]`).
fn sample_chain(chain: &[Point], fracs: impl Iterator<Item = f64>) -> Result<Vec<Point>> {
    let cum = cumulative(chain);
    let total = *cum.last().expect("chain has at least two points");
    if total <= 0.0 {
        return Err(Error::Geometry("degenerate chain of zero length".into()));
    }
    let last = chain.len() - 1;
    let out = fracs
        .map(|f| {
            if f <= 0.0 {
                return chain[0];
            }
            if f >= 1.0 {
                return chain[last];
            }
            let s = f * total;
            // first segment whose end reaches s
            let seg = cum.partition_point(|&c| c < s).clamp(1, last) - 1;
            let seg_len = cum[seg + 1] - cum[seg];
            if seg_len == 0.0 {
                return chain[seg];
            }
            let t = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
            let (a, b) = (chain[seg], chain[seg + 1]);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect();
    Ok(out)
}

fn even_fracs(start: f64, end: f64, k: usize) -> impl Iterator<Item = f64> {
    let span = end - start;
    (0..k).map(move |i| if i + 1 == k { end } else { start + span * i as f64 / (k - 1) as f64 })
}

/// Resamples both chains to `k_out` point pairs spaced equally in arc length
/// along each chain. The first and last pairs are the input endpoints.
pub fn tpga_resample(poly: &BoundaryPolygon, k_out: usize) -> Result<BoundaryPolygon> {
    resample_range(poly, 0.0, 1.0, k_out)
}

/// Sub-band between two arc-length fractions, resampled to the input's K.
pub fn slice_window(poly: &BoundaryPolygon, start_frac: f64, end_frac: f64) -> Result<BoundaryPolygon> {
    if !(0.0..=1.0).contains(&start_frac) || !(0.0..=1.0).contains(&end_frac) {
        return Err(Error::Argument(format!("slice fractions must lie in [0, 1], got ({start_frac}, {end_frac})")));
    }
    if end_frac <= start_frac {
        return Err(Error::Argument(format!("slice end {end_frac} must be greater than start {start_frac}")));
    }
    resample_range(poly, start_frac, end_frac, poly.k())
}

fn resample_range(poly: &BoundaryPolygon, start: f64, end: f64, k_out: usize) -> Result<BoundaryPolygon> {
    if k_out < 2 {
        return Err(Error::Argument(format!("k_out must be at least 2, got {k_out}")));
    }
    if poly.upper.len() != poly.lower.len() || poly.upper.len() < 2 {
        return Err(Error::Geometry("malformed boundary polygon".into()));
    }
    let upper = sample_chain(&poly.upper, even_fracs(start, end, k_out))?;
    let lower = sample_chain(&poly.lower, even_fracs(start, end, k_out))?;
    Ok(BoundaryPolygon { upper, lower })
}

/// Arc-length position of `p` along `chain`, measured from its first point.
/// `p` is projected onto the nearest segment.
pub fn arc_position(chain: &[Point], p: Point) -> f64 {
    let cum = cumulative(chain);
    let mut best = (f64::INFINITY, 0.0);
    for (i, w) in chain.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) };
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        let off = dist(p, q);
        if off < best.0 {
            best = (off, cum[i] + t * len2.sqrt());
        }
    }
    best.1
}

fn is_simple(chain: &[Point]) -> bool {
    let n = chain.len();
    if n < 4 {
        return true;
    }
    for i in 0..n - 1 {
        for j in i + 2..n - 1 {
            if segments_cross(chain[i], chain[i + 1], chain[j], chain[j + 1]) {
                return false;
            }
        }
    }
    true
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Proper crossing test; touching within tolerance does not count.
fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > SIMPLE_TOL && d2 < -SIMPLE_TOL) || (d1 < -SIMPLE_TOL && d2 > SIMPLE_TOL))
        && ((d3 > SIMPLE_TOL && d4 < -SIMPLE_TOL) || (d3 < -SIMPLE_TOL && d4 > SIMPLE_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(len: f64, k: usize) -> BoundaryPolygon {
        let upper = (0..k).map(|i| [len * i as f64 / (k - 1) as f64, 0.0]).collect();
        let lower = (0..k).map(|i| [len * i as f64 / (k - 1) as f64, 1.0]).collect();
        BoundaryPolygon::new(upper, lower).unwrap()
    }

    #[test]
    fn rectangle_resamples_to_thirds() {
        let poly = BoundaryPolygon::new(vec![[0.0, 0.0], [10.0, 0.0]], vec![[0.0, 1.0], [10.0, 1.0]]).unwrap();
        let out = tpga_resample(&poly, 3).unwrap();
        let xs: Vec<f64> = out.upper.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 5.0, 10.0]);
        assert_eq!(out.lower[1], [5.0, 1.0]);
    }

    #[test]
    fn equidistant_polygon_is_a_fixed_point() {
        let poly = rect(6.0, 7);
        let out = tpga_resample(&poly, 7).unwrap();
        for (a, b) in out.upper.iter().zip(&poly.upper) {
            assert!(dist(*a, *b) < 1e-9);
        }
    }

    #[test]
    fn zero_length_chain_is_rejected() {
        let poly = BoundaryPolygon { upper: vec![[1.0, 1.0], [1.0, 1.0]], lower: vec![[1.0, 2.0], [3.0, 2.0]] };
        assert!(matches!(tpga_resample(&poly, 4), Err(Error::Geometry(_))));
    }

    #[test]
    fn k_out_below_two_is_rejected() {
        assert!(tpga_resample(&rect(1.0, 2), 1).is_err());
    }

    #[test]
    fn straight_slice_spans_expected_interval() {
        let poly = rect(10.0, 7);
        let s = slice_window(&poly, 0.2, 0.5).unwrap();
        assert_eq!(s.k(), 7);
        assert!((s.upper[0][0] - 2.0).abs() < 1e-12);
        assert!((s.upper[6][0] - 5.0).abs() < 1e-12);
        assert!((s.arc_length() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn whole_slice_is_identity() {
        let poly = rect(4.0, 5);
        let s = slice_window(&poly, 0.0, 1.0).unwrap();
        for (a, b) in s.upper.iter().zip(&poly.upper) {
            assert!(dist(*a, *b) < 1e-9);
        }
    }

    #[test]
    fn reversed_slice_is_an_argument_error() {
        let poly = rect(4.0, 5);
        assert!(matches!(slice_window(&poly, 0.5, 0.5), Err(Error::Argument(_))));
        assert!(matches!(slice_window(&poly, 0.6, 0.2), Err(Error::Argument(_))));
    }

    #[test]
    fn self_intersecting_chain_is_rejected() {
        let upper = vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]];
        let lower = vec![[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        assert!(BoundaryPolygon::new(upper, lower).is_err());
    }

    #[test]
    fn mismatched_chains_are_rejected() {
        assert!(BoundaryPolygon::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![[0.0, 1.0]]).is_err());
    }

    #[test]
    fn arc_position_walks_the_chain() {
        let chain = vec![[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]];
        assert!((arc_position(&chain, [3.0, 2.0]) - 5.0).abs() < 1e-12);
        assert!((arc_position(&chain, [1.5, 0.0]) - 1.5).abs() < 1e-12);
    }
}
