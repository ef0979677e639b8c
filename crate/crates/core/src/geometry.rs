//! Exact integer polycube geometry.
//!
//! Cells live on the unit grid; the base cube sits at the origin and every
//! other coordinate is measured from it. Orientation handling is restricted to
//! the 24 proper rotations of the cube (no reflections).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("shape has no cells")]
    EmptyShape,
}

/// A cell on the integer grid, in units of one cube edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct CubeCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl CubeCoord {
    pub const ORIGIN: CubeCoord = CubeCoord { x: 0, y: 0, z: 0 };

    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// The six face neighbours, in +X, -X, +Y, -Y, +Z, -Z order.
    pub fn neighbors(self) -> [CubeCoord; 6] {
        let CubeCoord { x, y, z } = self;
        [
            CubeCoord::new(x + 1, y, z),
            CubeCoord::new(x - 1, y, z),
            CubeCoord::new(x, y + 1, z),
            CubeCoord::new(x, y - 1, z),
            CubeCoord::new(x, y, z + 1),
            CubeCoord::new(x, y, z - 1),
        ]
    }

    pub fn is_adjacent(self, other: CubeCoord) -> bool {
        (self.x - other.x).abs() + (self.y - other.y).abs() + (self.z - other.z).abs() == 1
    }

    /// Ordering key used for guidance: height first, then depth, then width.
    pub fn zyx_key(self) -> (i32, i32, i32) {
        (self.z, self.y, self.x)
    }
}

impl From<[i32; 3]> for CubeCoord {
    fn from([x, y, z]: [i32; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<CubeCoord> for [i32; 3] {
    fn from(c: CubeCoord) -> Self {
        c.to_array()
    }
}

impl Add for CubeCoord {
    type Output = CubeCoord;
    fn add(self, o: CubeCoord) -> CubeCoord {
        CubeCoord::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for CubeCoord {
    type Output = CubeCoord;
    fn sub(self, o: CubeCoord) -> CubeCoord {
        CubeCoord::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for CubeCoord {
    type Output = CubeCoord;
    fn neg(self) -> CubeCoord {
        CubeCoord::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for CubeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// A proper rotation of the cube, stored as a signed axis permutation:
/// output axis `i` takes `signs[i] * input[perm[i]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rotation {
    perm: [u8; 3],
    signs: [i8; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { perm: [0, 1, 2], signs: [1, 1, 1] };

    /// Builds a rotation from a 3x3 matrix, returning `None` unless the matrix
    /// is a signed permutation with determinant +1.
    pub fn from_matrix(m: [[i32; 3]; 3]) -> Option<Rotation> {
        let mut perm = [0u8; 3];
        let mut signs = [0i8; 3];
        for (row, entries) in m.iter().enumerate() {
            let nonzero: Vec<usize> = (0..3).filter(|&c| entries[c] != 0).collect();
            if nonzero.len() != 1 || entries[nonzero[0]].abs() != 1 {
                return None;
            }
            perm[row] = nonzero[0] as u8;
            signs[row] = entries[nonzero[0]] as i8;
        }
        let r = Rotation { perm, signs };
        let mut seen = [false; 3];
        for &p in &perm {
            if seen[p as usize] {
                return None;
            }
            seen[p as usize] = true;
        }
        (r.determinant() == 1).then_some(r)
    }

    pub fn matrix(&self) -> [[i32; 3]; 3] {
        let mut m = [[0; 3]; 3];
        for row in 0..3 {
            m[row][self.perm[row] as usize] = self.signs[row] as i32;
        }
        m
    }

    pub fn determinant(&self) -> i32 {
        let parity = permutation_parity(self.perm);
        let sign_product: i32 = self.signs.iter().map(|&s| s as i32).product();
        parity * sign_product
    }

    pub fn apply(&self, c: CubeCoord) -> CubeCoord {
        let v = c.to_array();
        CubeCoord::new(
            self.signs[0] as i32 * v[self.perm[0] as usize],
            self.signs[1] as i32 * v[self.perm[1] as usize],
            self.signs[2] as i32 * v[self.perm[2] as usize],
        )
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(&self, other: &Rotation) -> Rotation {
        let mut perm = [0u8; 3];
        let mut signs = [0i8; 3];
        for row in 0..3 {
            let mid = other.perm[row] as usize;
            perm[row] = self.perm[mid];
            signs[row] = other.signs[row] * self.signs[mid];
        }
        Rotation { perm, signs }
    }

    pub fn inverse(&self) -> Rotation {
        let mut perm = [0u8; 3];
        let mut signs = [0i8; 3];
        for row in 0..3 {
            let col = self.perm[row] as usize;
            perm[col] = row as u8;
            signs[col] = self.signs[row];
        }
        Rotation { perm, signs }
    }

    /// Position of this rotation in [`rotation_group`].
    pub fn index(&self) -> usize {
        rotation_group()
            .iter()
            .position(|r| r == self)
            .expect("every proper rotation is in the group")
    }
}

fn permutation_parity(p: [u8; 3]) -> i32 {
    let mut inversions = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 { 1 } else { -1 }
}

/// The 24 proper rotations of the cube, identity first, in a fixed order.
pub fn rotation_group() -> &'static [Rotation; 24] {
    static GROUP: OnceLock<[Rotation; 24]> = OnceLock::new();
    GROUP.get_or_init(|| {
        const PERMS: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(24);
        for perm in PERMS {
            for bits in 0..8u8 {
                let signs = [
                    if bits & 4 == 0 { 1 } else { -1 },
                    if bits & 2 == 0 { 1 } else { -1 },
                    if bits & 1 == 0 { 1 } else { -1 },
                ];
                let r = Rotation { perm, signs };
                if r.determinant() == 1 {
                    out.push(r);
                }
            }
        }
        out.try_into().expect("exactly 24 proper rotations")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeType {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "3D")]
    ThreeD,
}

impl fmt::Display for ShapeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeType::TwoD => "2D",
            ShapeType::ThreeD => "3D",
        })
    }
}

/// Inclusive axis-aligned bounds of a set of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: CubeCoord,
    pub max: CubeCoord,
}

impl BoundingBox {
    pub fn extent(&self) -> [i32; 3] {
        let d = self.max - self.min;
        [d.x + 1, d.y + 1, d.z + 1]
    }
}

/// A finite set of distinct grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polycube {
    cells: BTreeSet<CubeCoord>,
}

impl Polycube {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn base() -> Self {
        Self::from_cells([CubeCoord::ORIGIN])
    }

    pub fn from_cells<I: IntoIterator<Item = CubeCoord>>(cells: I) -> Self {
        Self { cells: cells.into_iter().collect() }
    }

    pub fn from_triples<I: IntoIterator<Item = (i32, i32, i32)>>(cells: I) -> Self {
        Self::from_cells(cells.into_iter().map(|(x, y, z)| CubeCoord::new(x, y, z)))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: CubeCoord) -> bool {
        self.cells.contains(&c)
    }

    pub fn insert(&mut self, c: CubeCoord) -> bool {
        self.cells.insert(c)
    }

    pub fn remove(&mut self, c: CubeCoord) -> bool {
        self.cells.remove(&c)
    }

    /// Cells in ascending `(x, y, z)` order.
    pub fn iter(&self) -> impl Iterator<Item = CubeCoord> + '_ {
        self.cells.iter().copied()
    }

    pub fn cells(&self) -> &BTreeSet<CubeCoord> {
        &self.cells
    }

    pub fn to_vec(&self) -> Vec<CubeCoord> {
        self.iter().collect()
    }

    pub fn bounding_box(&self) -> Result<BoundingBox, GeometryError> {
        let mut it = self.iter();
        let first = it.next().ok_or(GeometryError::EmptyShape)?;
        let (mut min, mut max) = (first, first);
        for c in it {
            min = CubeCoord::new(min.x.min(c.x), min.y.min(c.y), min.z.min(c.z));
            max = CubeCoord::new(max.x.max(c.x), max.y.max(c.y), max.z.max(c.z));
        }
        Ok(BoundingBox { min, max })
    }

    pub fn transform(&self, r: &Rotation, t: CubeCoord) -> Polycube {
        Polycube::from_cells(self.iter().map(|c| r.apply(c) + t))
    }

    pub fn translate(&self, t: CubeCoord) -> Polycube {
        Polycube::from_cells(self.iter().map(|c| c + t))
    }

    pub fn is_connected(&self) -> Result<bool, GeometryError> {
        let start = self.iter().next().ok_or(GeometryError::EmptyShape)?;
        Ok(self.reachable_from(start).len() == self.len())
    }

    /// Cells reachable from `start` through face adjacency within this set.
    pub fn reachable_from(&self, start: CubeCoord) -> BTreeSet<CubeCoord> {
        let mut seen = BTreeSet::new();
        if !self.contains(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(c) = queue.pop_front() {
            for n in c.neighbors() {
                if self.contains(n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Whether `c` is absent and touches at least one cell.
    pub fn is_attachable(&self, c: CubeCoord) -> bool {
        !self.contains(c) && c.neighbors().iter().any(|&n| self.contains(n))
    }

    /// Free cells touching the shape, ascending `(x, y, z)`.
    pub fn frontier(&self) -> BTreeSet<CubeCoord> {
        self.iter()
            .flat_map(|c| c.neighbors())
            .filter(|n| !self.contains(*n))
            .collect()
    }

    /// Whether removing `c` leaves a non-empty connected shape.
    pub fn can_remove(&self, c: CubeCoord) -> bool {
        if !self.contains(c) || self.len() == 1 {
            return false;
        }
        let mut rest = self.clone();
        rest.remove(c);
        rest.is_connected().unwrap_or(false)
    }

    pub fn normalize(&self) -> Result<Polycube, GeometryError> {
        let bb = self.bounding_box()?;
        Ok(self.translate(-bb.min))
    }

    pub fn canonical_form(&self) -> Result<Polycube, GeometryError> {
        if self.is_empty() {
            return Err(GeometryError::EmptyShape);
        }
        let mut best: Option<Vec<CubeCoord>> = None;
        for r in rotation_group() {
            let rotated: Vec<CubeCoord> = self.transform(r, CubeCoord::ORIGIN).normalize()?.to_vec();
            if best.as_ref().is_none_or(|b| rotated < *b) {
                best = Some(rotated);
            }
        }
        Ok(Polycube::from_cells(best.unwrap_or_default()))
    }

    pub fn shape_type(&self) -> Result<ShapeType, GeometryError> {
        let extent = self.bounding_box()?.extent();
        Ok(if extent.contains(&1) { ShapeType::TwoD } else { ShapeType::ThreeD })
    }

    pub fn intersection_len(&self, other: &Polycube) -> usize {
        self.cells.intersection(&other.cells).count()
    }

    pub fn difference(&self, other: &Polycube) -> Polycube {
        Polycube { cells: self.cells.difference(&other.cells).copied().collect() }
    }
}

impl FromIterator<CubeCoord> for Polycube {
    fn from_iter<I: IntoIterator<Item = CubeCoord>>(iter: I) -> Self {
        Polycube::from_cells(iter)
    }
}

impl<'a> IntoIterator for &'a Polycube {
    type Item = &'a CubeCoord;
    type IntoIter = std::collections::btree_set::Iter<'a, CubeCoord>;
    fn into_iter(self) -> Self::IntoIter {
        self.cells.iter()
    }
}

impl fmt::Display for Polycube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("}")
    }
}

pub fn transform(poly: &Polycube, r: &Rotation, t: CubeCoord) -> Polycube {
    poly.transform(r, t)
}

pub fn is_connected(poly: &Polycube) -> Result<bool, GeometryError> {
    poly.is_connected()
}

pub fn normalize(poly: &Polycube) -> Result<Polycube, GeometryError> {
    poly.normalize()
}

pub fn canonical_form(poly: &Polycube) -> Result<Polycube, GeometryError> {
    poly.canonical_form()
}

pub fn shape_type(poly: &Polycube) -> Result<ShapeType, GeometryError> {
    poly.shape_type()
}
