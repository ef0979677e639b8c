//! Structural similarity between a participant structure and a prototype.
//!
//! A structure `s` is scored against a prototype `p` by its best placement
//! over the 24 rotations and all integer translations: matched cubes count
//! for, unmatched ("extra") cubes count against, and the result is normalized
//! by the prototype size:
//!
//! `100 * (|i| / |p| - (|s| - |i|) / |p|)`
//!
//! Scores are kept as exact rationals with denominator `|p|` so that argmax
//! ties are decided without floating point noise.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_group, CubeCoord, Polycube, Rotation};
use crate::measures::{replay, ReplayError, TaskRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("prototype has no cells")]
    EmptyPrototype,
    #[error("intersection size {i} is outside 0..=min({s}, {p})")]
    InvalidOverlap { i: usize, s: usize, p: usize },
}

/// A rigid placement of the structure: rotate about the origin, then shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub rotation: Rotation,
    pub offset: CubeCoord,
}

impl Placement {
    pub const IDENTITY: Placement = Placement { rotation: Rotation::IDENTITY, offset: CubeCoord::ORIGIN };

    pub fn apply(&self, c: CubeCoord) -> CubeCoord {
        self.rotation.apply(c) + self.offset
    }

    pub fn apply_all(&self, poly: &Polycube) -> Polycube {
        poly.transform(&self.rotation, self.offset)
    }
}

/// Exact similarity: `100 * (2|i| - |s|) / |p|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityScore {
    pub intersection_size: usize,
    pub structure_size: usize,
    pub prototype_size: usize,
    pub achieved_placement: Placement,
}

impl SimilarityScore {
    /// Numerator over `|p|`, in cube units: `|i| - (|s| - |i|)`.
    pub fn net_cubes(&self) -> i64 {
        2 * self.intersection_size as i64 - self.structure_size as i64
    }

    pub fn ratio(&self) -> Ratio<i64> {
        exact_score(self.intersection_size, self.structure_size, self.prototype_size)
    }

    /// Percent value as a float, for display and downstream statistics.
    pub fn value(&self) -> f64 {
        ratio_to_f64(self.ratio())
    }

    pub fn is_perfect(&self) -> bool {
        self.intersection_size == self.prototype_size && self.structure_size == self.prototype_size
    }
}

impl PartialOrd for SimilarityScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.ratio().cmp(&other.ratio()))
    }
}

pub(crate) fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn exact_score(i: usize, s: usize, p: usize) -> Ratio<i64> {
    Ratio::new(100 * (2 * i as i64 - s as i64), p as i64)
}

/// Exact rational form of the score for given cube counts.
pub fn score_ratio(i_size: usize, s_size: usize, p_size: usize) -> Result<Ratio<i64>, SimilarityError> {
    if p_size == 0 {
        return Err(SimilarityError::EmptyPrototype);
    }
    if i_size > s_size.min(p_size) {
        return Err(SimilarityError::InvalidOverlap { i: i_size, s: s_size, p: p_size });
    }
    Ok(exact_score(i_size, s_size, p_size))
}

pub fn score_given_overlap(i_size: usize, s_size: usize, p_size: usize) -> Result<f64, SimilarityError> {
    score_ratio(i_size, s_size, p_size).map(ratio_to_f64)
}

/// Number of cells of `s`, once placed, that land on `p`.
pub fn overlap(s: &Polycube, placement: &Placement, p: &Polycube) -> usize {
    s.iter().filter(|&c| p.contains(placement.apply(c))).count()
}

/// Best score of `s` against `p` over every rotation and translation.
///
/// Ties go to the first placement in (rotation index, offset) order, with
/// offsets compared lexicographically as `(x, y, z)`. An empty structure
/// scores zero under the identity placement.
///
/// For each rotation the overlap at every offset is obtained by voting: each
/// pair (structure cell, prototype cell) votes for the single offset that
/// superimposes them, so the vote count at an offset is exactly its overlap.
/// Offsets with no votes have zero overlap and can never be optimal because
/// any offset that superimposes one pair already scores higher.
pub fn best_similarity(s: &Polycube, p: &Polycube) -> Result<SimilarityScore, SimilarityError> {
    if p.is_empty() {
        return Err(SimilarityError::EmptyPrototype);
    }
    let mut best = SimilarityScore {
        intersection_size: 0,
        structure_size: s.len(),
        prototype_size: p.len(),
        achieved_placement: Placement::IDENTITY,
    };
    if s.is_empty() {
        return Ok(best);
    }
    let ceiling = s.len().min(p.len());
    let s_cells = s.to_vec();
    let p_cells = p.to_vec();
    let mut votes: HashMap<CubeCoord, usize> = HashMap::with_capacity(s_cells.len() * p_cells.len());
    for rotation in rotation_group() {
        votes.clear();
        for &a in &s_cells {
            let ra = rotation.apply(a);
            for &b in &p_cells {
                *votes.entry(b - ra).or_insert(0) += 1;
            }
        }
        let Some((offset, count)) = votes
            .iter()
            .map(|(&o, &n)| (o, n))
            .max_by(|(oa, na), (ob, nb)| na.cmp(nb).then_with(|| ob.cmp(oa)))
        else {
            continue;
        };
        if count > best.intersection_size {
            best.intersection_size = count;
            best.achieved_placement = Placement { rotation: *rotation, offset };
            if count == ceiling {
                break;
            }
        }
    }
    Ok(best)
}

/// Similarity after each state of a task: one point at t = 0 for the initial
/// structure, then one per event.
pub fn similarity_trace(record: &TaskRecord, p: &Polycube) -> Result<Vec<TracePoint>, TraceError> {
    let states = replay(record)?;
    let times = std::iter::once(0.0).chain(record.events.iter().map(|e| e.t));
    states
        .iter()
        .zip(times)
        .map(|(state, t)| Ok(TracePoint { t, score: best_similarity(state, p)? }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub score: SimilarityScore,
}

impl TracePoint {
    pub fn value(&self) -> f64 {
        self.score.value()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// A trace point flattened for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub similarity: f64,
}

impl From<&TracePoint> for TraceSample {
    fn from(tp: &TracePoint) -> Self {
        TraceSample { t: tp.t, similarity: tp.value() }
    }
}
