//! Splitting geometries: the decomposition of the chain into alternating
//! overlapping segments A_1, B_1, A_2, B_2, ... with A = U A_i, B = U B_i,
//! plus the interval cover X_i used by the local quasi-factorization step.

use serde::Serialize;

use crate::chain::Boundary;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct SplittingGeometry {
    pub n: usize,
    pub segment_len: usize,
    pub overlap: usize,
    pub boundary: Boundary,
    pub m: usize,
    pub a_segments: Vec<Vec<usize>>,
    pub b_segments: Vec<Vec<usize>>,
}

impl SplittingGeometry {
    pub fn a_sites(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.a_segments.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn b_sites(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.b_segments.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn a_complement(&self) -> Vec<usize> {
        let a = self.a_sites();
        (0..self.n).filter(|s| !a.contains(s)).collect()
    }

    pub fn b_complement(&self) -> Vec<usize> {
        let b = self.b_sites();
        (0..self.n).filter(|s| !b.contains(s)).collect()
    }

    /// The interval cover `{X_i}`: the A and B segments interleaved, which
    /// cover the chain because `A u B = Lambda`.
    pub fn x_cover(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(2 * self.m);
        for i in 0..self.m {
            out.push(self.a_segments[i].clone());
            out.push(self.b_segments[i].clone());
        }
        out
    }

    /// Checks all structural invariants, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        let disjoint = |segs: &[Vec<usize>], name: &str| -> Result<()> {
            let mut seen = vec![false; self.n];
            for seg in segs {
                for &s in seg {
                    if s >= self.n {
                        return Err(Error::InfeasibleGeometry(format!("site {s} out of range")));
                    }
                    if seen[s] {
                        return Err(Error::InfeasibleGeometry(format!(
                            "{name} segments overlap at site {s}"
                        )));
                    }
                    seen[s] = true;
                }
            }
            Ok(())
        };
        disjoint(&self.a_segments, "A")?;
        disjoint(&self.b_segments, "B")?;
        if self.a_segments.len() != self.m || self.b_segments.len() != self.m {
            return Err(Error::InfeasibleGeometry("segment count mismatch".into()));
        }
        let mut covered = vec![false; self.n];
        for &s in self.a_sites().iter().chain(self.b_sites().iter()) {
            covered[s] = true;
        }
        if covered.iter().any(|&cv| !cv) {
            return Err(Error::InfeasibleGeometry("A u B does not cover the chain".into()));
        }
        let intersects = |x: &[usize], y: &[usize]| x.iter().any(|s| y.contains(s));
        for i in 0..self.m {
            if !intersects(&self.a_segments[i], &self.b_segments[i]) {
                return Err(Error::InfeasibleGeometry(format!("A_{i} and B_{i} do not overlap")));
            }
            let next_a = if i + 1 < self.m {
                Some(&self.a_segments[i + 1])
            } else if self.boundary == Boundary::Periodic {
                Some(&self.a_segments[0])
            } else {
                None
            };
            if let Some(na) = next_a {
                if !intersects(&self.b_segments[i], na) {
                    return Err(Error::InfeasibleGeometry(format!(
                        "B_{i} does not overlap the next A segment"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tiles the chain left to right with alternating A/B segments of length
/// `ell` overlapping by `w`. The last segment absorbs the remainder; if the
/// raw tiling ends on an A segment it is merged into the preceding B. On
/// periodic chains the final B segment wraps by `w` sites so the cover
/// closes cyclically.
pub fn build_geometry(
    n: usize,
    ell: usize,
    w: usize,
    boundary: Boundary,
) -> Result<SplittingGeometry> {
    if w < 1 || 2 * w >= ell {
        return Err(Error::InfeasibleGeometry(format!(
            "need 1 <= w < ell/2, got ell={ell}, w={w}"
        )));
    }
    if n < 2 * ell {
        return Err(Error::InfeasibleGeometry(format!("need n >= 2*ell, got n={n}, ell={ell}")));
    }
    let step = ell - w;
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut start = 0usize;
    while start < n {
        let end = (start + ell).min(n);
        segments.push((start..end).collect());
        if end == n {
            break;
        }
        start += step;
    }
    // extend the последний segment to the chain end (absorbs the remainder)
    if let Some(last) = segments.last_mut() {
        let hi = *last.last().expect("nonempty");
        last.extend(hi + 1..n);
    }
    if segments.len() % 2 == 1 {
        // merge the trailing A-labeled segment into the previous B
        let tail = segments.pop().expect("nonempty");
        let prev = segments.last_mut().ok_or_else(|| {
            Error::InfeasibleGeometry("tiling produced a single segment".into())
        })?;
        for s in tail {
            if !prev.contains(&s) {
                prev.push(s);
            }
        }
    }
    if boundary == Boundary::Periodic {
        if let Some(last) = segments.last_mut() {
            for s in 0..w {
                if !last.contains(&s) {
                    last.push(s);
                }
            }
        }
    }
    let m = segments.len() / 2;
    let mut a_segments = Vec::with_capacity(m);
    let mut b_segments = Vec::with_capacity(m);
    for (i, seg) in segments.into_iter().enumerate() {
        if i % 2 == 0 {
            a_segments.push(seg);
        } else {
            b_segments.push(seg);
        }
    }
    let geo = SplittingGeometry { n, segment_len: ell, overlap: w, boundary, m, a_segments, b_segments };
    geo.validate()?;
    Ok(geo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_tiling_n16() {
        let g = build_geometry(16, 5, 1, Boundary::Periodic).unwrap();
        assert_eq!(g.m, 2);
        assert_eq!(g.a_segments[0], vec![0, 1, 2, 3, 4]);
        assert_eq!(g.b_segments[0], vec![4, 5, 6, 7, 8]);
        assert_eq!(g.a_segments[1], vec![8, 9, 10, 11, 12]);
        // last B absorbs the remainder and wraps by w
        assert_eq!(g.b_segments[1], vec![12, 13, 14, 15, 0]);
        g.validate().unwrap();
    }

    #[test]
    fn minimal_split_two_segments() {
        let g = build_geometry(6, 3, 1, Boundary::Periodic).unwrap();
        assert_eq!(g.m, 1);
        assert_eq!(g.a_segments[0], vec![0, 1, 2]);
        assert_eq!(g.b_segments[0], vec![2, 3, 4, 5, 0]);
        let ac = g.a_complement();
        let bc = g.b_complement();
        assert_eq!(ac, vec![3, 4, 5]);
        assert_eq!(bc, vec![1]);
    }

    #[test]
    fn wide_overlap_rejected() {
        assert!(build_geometry(12, 4, 2, Boundary::Periodic).is_err());
        assert!(build_geometry(5, 3, 1, Boundary::Periodic).is_err());
    }

    #[test]
    fn x_cover_covers_chain() {
        let g = build_geometry(16, 5, 1, Boundary::Periodic).unwrap();
        let mut covered = vec![false; 16];
        for x in g.x_cover() {
            for s in x {
                covered[s] = true;
            }
        }
        assert!(covered.iter().all(|&cv| cv));
    }

    #[test]
    fn open_boundary_skips_wrap() {
        let g = build_geometry(16, 5, 1, Boundary::Open).unwrap();
        assert_eq!(g.b_segments[1], vec![12, 13, 14, 15]);
        g.validate().unwrap();
    }
}
