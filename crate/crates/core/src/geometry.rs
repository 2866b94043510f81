//! Dyadic cells, 2^D-tree partitions of the unit cube and set distances.
//!
//! Cells are stored as `(level, integer index)` pairs so that partition
//! bookkeeping is exact; floating-point corners are derived on demand.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest dyadic level a cell may reach. Vertex keys are integers at this scale.
pub const MAX_LEVEL: u32 = 62;

/// Integer vertex coordinates at scale `2^-MAX_LEVEL`.
pub type VertexKey = Vec<u64>;

/// A cube `index * 2^-level + 2^-level [0,1]^D` inside `[0,1]^D`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCell {
    level: u32,
    index: Vec<u64>,
}

impl DyadicCell {
    /// The unit cube `[0,1]^dim`.
    pub fn root(dim: usize) -> Self {
        Self {
            level: 0,
            index: vec![0; dim],
        }
    }

    pub fn new(level: u32, index: Vec<u64>) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Capacity {
                level,
                max: MAX_LEVEL,
            });
        }
        if index.is_empty() {
            return Err(Error::Domain("cell must have dimension >= 1".into()));
        }
        let bound = 1u64 << level;
        if let Some(i) = index.iter().find(|&&i| i >= bound) {
            return Err(Error::Domain(format!(
                "index component {i} out of range for level {level}"
            )));
        }
        Ok(Self { level, index })
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> &[u64] {
        &self.index
    }

    /// `2^-level`, exact in binary floating point.
    pub fn edge_length(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn diam(&self) -> f64 {
        (self.dim() as f64).sqrt() * self.edge_length()
    }

    pub fn corner(&self) -> Vec<f64> {
        let h = self.edge_length();
        self.index.iter().map(|&i| i as f64 * h).collect()
    }

    /// Lower and upper corner along each axis.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.edge_length();
        let lo = self.corner();
        let hi = lo.iter().map(|c| c + h).collect();
        (lo, hi)
    }

    /// The 2^D corners; vertex `b` takes the upper coordinate on axis `i` when bit `i` of `b` is set.
    pub fn vertices(&self) -> PointSet {
        let (lo, hi) = self.bounds();
        let d = self.dim();
        let mut coords = Vec::with_capacity(d << d);
        for b in 0..(1usize << d) {
            for i in 0..d {
                coords.push(if b >> i & 1 == 1 { hi[i] } else { lo[i] });
            }
        }
        PointSet { dim: d, coords }
    }

    /// Exact integer keys of the vertices, in the same order as [`DyadicCell::vertices`].
    pub fn vertex_keys(&self) -> Vec<VertexKey> {
        let d = self.dim();
        let shift = MAX_LEVEL - self.level;
        (0..(1usize << d))
            .map(|b| {
                self.index
                    .iter()
                    .enumerate()
                    .map(|(i, &ix)| (ix + (b as u64 >> i & 1)) << shift)
                    .collect()
            })
            .collect()
    }

    /// The 2^D children at `level + 1`, ordered like the vertices.
    pub fn subdivide(&self) -> Result<Vec<DyadicCell>> {
        if self.level >= MAX_LEVEL {
            return Err(Error::Capacity {
                level: self.level + 1,
                max: MAX_LEVEL,
            });
        }
        let d = self.dim();
        Ok((0..(1usize << d))
            .map(|b| DyadicCell {
                level: self.level + 1,
                index: self
                    .index
                    .iter()
                    .enumerate()
                    .map(|(i, &ix)| 2 * ix + (b as u64 >> i & 1))
                    .collect(),
            })
            .collect())
    }

    pub fn parent(&self) -> Option<DyadicCell> {
        (self.level > 0).then(|| DyadicCell {
            level: self.level - 1,
            index: self.index.iter().map(|i| i / 2).collect(),
        })
    }

    /// True when `other` is a strict descendant of `self`.
    pub fn is_ancestor_of(&self, other: &DyadicCell) -> bool {
        if other.level <= self.level || other.dim() != self.dim() {
            return false;
        }
        let shift = other.level - self.level;
        self.index
            .iter()
            .zip(&other.index)
            .all(|(&a, &b)| b >> shift == a)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        x.iter()
            .zip(lo.iter().zip(&hi))
            .all(|(&xi, (&l, &h))| xi >= l && xi <= h)
    }

    /// Euclidean distance from `x` to the closed cube (componentwise clamping).
    pub fn dist_to_point(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.bounds();
        x.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&xi, (&l, &h))| {
                let c = xi.clamp(l, h);
                (xi - c) * (xi - c)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Distance from a point to a cell. Zero iff `x` lies in the cell.
pub fn dist_point_cell(x: &[f64], cell: &DyadicCell) -> f64 {
    cell.dist_to_point(x)
}

/// A finite list of points in `[0,1]^D`, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    /// Builds a set from flat coordinates; every coordinate must be finite and in `[0,1]`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Domain(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Domain(format!("coordinate {c} outside [0,1]")));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<I, P>(dim: usize, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[f64]>,
    {
        let mut coords = Vec::new();
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::Domain(format!(
                    "point of dimension {} in a set of dimension {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::Domain("point dimension mismatch".into()));
        }
        if p.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain(format!("point {p:?} outside [0,1]^D")));
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn nonempty(x: &PointSet, name: &str) -> Result<()> {
    if x.is_empty() {
        Err(Error::Domain(format!("{name} is empty")))
    } else {
        Ok(())
    }
}

/// Distance from a point to the nearest member of a nonempty set.
pub fn dist_point_set(x: &[f64], set: &PointSet) -> Result<f64> {
    nonempty(set, "point set")?;
    Ok(set.iter().map(|p| euclid(x, p)).fold(f64::INFINITY, f64::min))
}

/// `min_{x1 in X1, x2 in X2} |x1 - x2|`.
pub fn dist_sets(x1: &PointSet, x2: &PointSet) -> Result<f64> {
    nonempty(x1, "first set")?;
    nonempty(x2, "second set")?;
    Ok(x2
        .iter()
        .map(|b| x1.iter().map(|a| euclid(a, b)).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min))
}

/// Asymmetric Hausdorff distance `sup_{x2 in X2} min_{x1 in X1} |x1 - x2|`.
///
/// Table columns use `hausdorff(V_k, X*)`: the worst distance from a reference
/// spike to its nearest vertex.
pub fn hausdorff(x1: &PointSet, x2: &PointSet) -> Result<f64> {
    nonempty(x1, "first set")?;
    nonempty(x2, "second set")?;
    Ok(x2
        .iter()
        .map(|b| x1.iter().map(|a| euclid(a, b)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// The leaves of a 2^D-tree covering `[0,1]^D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    dim: usize,
    leaves: BTreeSet<DyadicCell>,
}

impl CellPartition {
    /// The trivial partition `{[0,1]^D}`.
    pub fn unit(dim: usize) -> Self {
        Self {
            dim,
            leaves: BTreeSet::from([DyadicCell::root(dim)]),
        }
    }

    /// Uniform partition into `2^(D*level)` cells.
    pub fn uniform(dim: usize, level: u32) -> Result<Self> {
        let mut p = Self::unit(dim);
        for _ in 0..level {
            let all: Vec<_> = p.leaves.iter().cloned().collect();
            p.refine(&all)?;
        }
        Ok(p)
    }

    /// Builds a partition from explicit leaves and validates the tree invariants.
    pub fn from_leaves(dim: usize, leaves: impl IntoIterator<Item = DyadicCell>) -> Result<Self> {
        let p = Self {
            dim,
            leaves: leaves.into_iter().collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &DyadicCell> + '_ {
        self.leaves.iter()
    }

    pub fn contains_leaf(&self, cell: &DyadicCell) -> bool {
        self.leaves.contains(cell)
    }

    pub fn max_level(&self) -> u32 {
        self.leaves.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Replaces each listed leaf by its 2^D children.
    pub fn refine(&mut self, cells: &[DyadicCell]) -> Result<()> {
        for c in cells {
            if !self.leaves.contains(c) {
                return Err(Error::Consistency(format!(
                    "cell (level {}, index {:?}) is not a leaf of the partition",
                    c.level, c.index
                )));
            }
        }
        // Validate capacity before mutating anything.
        let children = cells
            .iter()
            .map(|c| c.subdivide())
            .collect::<Result<Vec<_>>>()?;
        for (c, kids) in cells.iter().zip(children) {
            if self.leaves.remove(c) {
                self.leaves.extend(kids);
            }
        }
        Ok(())
    }

    /// Non-mutating variant of [`CellPartition::refine`].
    pub fn refined(&self, cells: &[DyadicCell]) -> Result<CellPartition> {
        let mut p = self.clone();
        p.refine(cells)?;
        Ok(p)
    }

    /// Deduplicated vertex keys of all leaves, sorted lexicographically.
    pub fn vertex_keys(&self) -> BTreeSet<VertexKey> {
        self.leaves.iter().flat_map(|c| c.vertex_keys()).collect()
    }

    /// The vertex set `V` of the partition, ordered by exact key.
    pub fn vertices(&self) -> PointSet {
        key_points(self.dim, self.vertex_keys().iter())
    }

    /// The leaf containing `x` with the deepest level (any one when `x` lies on a face).
    pub fn locate(&self, x: &[f64]) -> Option<&DyadicCell> {
        self.leaves
            .iter()
            .filter(|c| c.contains(x))
            .max_by_key(|c| c.level)
    }

    /// Checks that leaf volumes sum to exactly one and no leaf is an ancestor of another.
    pub fn validate(&self) -> Result<()> {
        if self.leaves.iter().any(|c| c.dim() != self.dim) {
            return Err(Error::Consistency("leaf dimension mismatch".into()));
        }
        if !self.volume_is_unit() {
            return Err(Error::Consistency("leaf volumes do not sum to 1".into()));
        }
        for c in &self.leaves {
            let mut cur = c.parent();
            while let Some(p) = cur {
                if self.leaves.contains(&p) {
                    return Err(Error::Consistency(format!(
                        "leaf at level {} is nested in another leaf",
                        c.level
                    )));
                }
                cur = p.parent();
            }
        }
        Ok(())
    }

    /// Exact test of `sum 2^(-D * level) == 1` by carrying leaf counts upward.
    pub fn volume_is_unit(&self) -> bool {
        let mut counts: BTreeMap<u32, u128> = BTreeMap::new();
        for c in &self.leaves {
            *counts.entry(c.level).or_default() += 1;
        }
        let fan = 1u128 << self.dim;
        let mut carry = 0u128;
        let deepest = counts.keys().next_back().copied().unwrap_or(0);
        for level in (1..=deepest).rev() {
            let n = counts.get(&level).copied().unwrap_or(0) + carry;
            if !n.is_multiple_of(fan) {
                return false;
            }
            carry = n / fan;
        }
        counts.get(&0).copied().unwrap_or(0) + carry == 1
    }
}

/// Free-function form of [`CellPartition::vertices`].
pub fn partition_vertices(partition: &CellPartition) -> PointSet {
    partition.vertices()
}

/// Converts exact vertex keys to floating coordinates.
pub fn key_points<'a>(dim: usize, keys: impl Iterator<Item = &'a VertexKey>) -> PointSet {
    let scale = (-(MAX_LEVEL as f64)).exp2();
    let coords = keys.flat_map(|k| k.iter().map(|&i| i as f64 * scale)).collect();
    PointSet { dim, coords }
}
