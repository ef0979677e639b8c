//! Random prototype generation.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CubeCoord, Polycube, ShapeType};

/// Largest prototype a participant is asked to build.
pub const MAX_PROTOTYPE_CUBES: usize = 10;

const ATTEMPTS_PER_SHAPE: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("prototypes are limited to {MAX_PROTOTYPE_CUBES} cubes, {0} requested")]
    TooManyCubes(usize),
    #[error("a prototype needs at least one cube")]
    NoCubes,
    #[error("only {found} distinct {shape} shapes of {cells} cubes found, {requested} requested")]
    Exhausted { found: usize, requested: usize, cells: usize, shape: ShapeType },
}

/// A random face-connected polycube of `n` cells grown from the origin.
pub fn random_polycube(n: usize, seed: u64) -> Polycube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grow(n, false, &mut rng)
}

fn grow(n: usize, flat: bool, rng: &mut ChaCha8Rng) -> Polycube {
    let mut shape = Polycube::base();
    while shape.len() < n {
        let candidates: BTreeSet<CubeCoord> =
            shape.frontier().into_iter().filter(|c| !flat || c.z == 0).collect();
        let next = candidates.into_iter().choose(rng).expect("frontier is never empty");
        shape.insert(next);
    }
    shape
}

/// Distinct (up to rotation) connected prototypes of the requested size and
/// type, each containing the base cell.
pub fn gen_prototypes(count: usize, cells: usize, shape: ShapeType, seed: u64) -> Result<Vec<Polycube>, GenerateError> {
    if cells > MAX_PROTOTYPE_CUBES {
        return Err(GenerateError::TooManyCubes(cells));
    }
    if cells == 0 {
        return Err(GenerateError::NoCubes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = ATTEMPTS_PER_SHAPE * count.max(1);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let candidate = grow(cells, shape == ShapeType::TwoD, &mut rng);
        if candidate.shape_type().ok() != Some(shape) {
            continue;
        }
        if seen.insert(candidate.canonical_form().expect("non-empty")) {
            out.push(candidate);
        }
    }
    if out.len() < count {
        return Err(GenerateError::Exhausted { found: out.len(), requested: count, cells, shape });
    }
    Ok(out)
}
