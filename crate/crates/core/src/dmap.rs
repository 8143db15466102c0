//! Parallel maps: how the dimensions of a global array are divided among
//! process ids, and the index arithmetic between global and local positions.
//!
//! A [`Map`] is a processor grid (one slot count per dimension), a
//! distribution per dimension, the ordered list of participating pids and an
//! optional block overlap. Pids are laid onto the grid in row-major order of
//! the `pids` list, so the pid at list position `k` of a `[r, c]` grid sits at
//! grid coordinates `(k / c, k % c)`.
//!
//! Arrays are rank 2 (a row vector is `1 x N`). All index math is done per
//! dimension through [`IndexSet`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Array rank supported by maps and distributed arrays.
pub const RANK: usize = 2;

pub type Index = [usize; RANK];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("grid holds {grid_slots} slots but {pids} pids were given")]
    GridPidMismatch { grid_slots: usize, pids: usize },
    #[error("pid {0} appears more than once in the pid list")]
    DuplicatePid(usize),
    #[error("overlap is only defined for block distributions (dimension {dim} is {kind})")]
    OverlapOnNonBlock { dim: usize, kind: DistKind },
    #[error("map rank mismatch: grid has {grid}, dists {dists}, overlap {overlap} entries; expected {RANK}")]
    RankMismatch { grid: usize, dists: usize, overlap: usize },
    #[error("grid dimension {dim} has zero slots")]
    EmptyGrid { dim: usize },
    #[error("block-cyclic distribution on dimension {dim} needs block_size >= 1")]
    ZeroBlockSize { dim: usize },
    #[error("pid {0} is not part of this map")]
    UnknownPid(usize),
    #[error("dimension {dim} has {len} elements, fewer than its {slots} grid slots")]
    DimensionTooSmall { dim: usize, len: usize, slots: usize },
    #[error("index {index:?} is outside global dimensions {dims:?}")]
    IndexOutOfBounds { index: Index, dims: Index },
    #[error("global index {index:?} is not stored on pid {pid}")]
    NotLocal { pid: usize, index: Index },
    #[error("local index {index:?} is outside pid {pid}'s local shape {shape:?}")]
    LocalIndexOutOfBounds { pid: usize, index: Index, shape: Index },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Block,
    Cyclic,
    #[serde(rename = "blockcyclic")]
    BlockCyclic,
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistKind::Block => "block",
            DistKind::Cyclic => "cyclic",
            DistKind::BlockCyclic => "blockcyclic",
        })
    }
}

impl FromStr for DistKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "block" => Ok(DistKind::Block),
            "cyclic" => Ok(DistKind::Cyclic),
            "blockcyclic" | "block-cyclic" | "block_cyclic" => Ok(DistKind::BlockCyclic),
            other => Err(format!("unknown distribution '{other}' (expected block, cyclic or blockcyclic)")),
        }
    }
}

/// Distribution of one dimension. `block_size` only matters for
/// [`DistKind::BlockCyclic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistSpec {
    pub kind: DistKind,
    #[serde(default = "one")]
    pub block_size: usize,
}

fn one() -> usize {
    1
}

impl DistSpec {
    pub const BLOCK: DistSpec = DistSpec { kind: DistKind::Block, block_size: 1 };
    pub const CYCLIC: DistSpec = DistSpec { kind: DistKind::Cyclic, block_size: 1 };

    pub fn block_cyclic(block_size: usize) -> Self {
        DistSpec { kind: DistKind::BlockCyclic, block_size }
    }

    pub fn new(kind: DistKind, block_size: usize) -> Self {
        DistSpec { kind, block_size }
    }
}

impl Default for DistSpec {
    fn default() -> Self {
        DistSpec::BLOCK
    }
}

/// A finite, ordered set of global indices along one dimension.
///
/// `Blocked` describes `count` indices taken from blocks of `block`
/// consecutive indices starting at `start`, `start + stride`, ... (the last
/// block may be partial). Cyclic is the `block == 1` case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexSet {
    Range { lo: usize, hi: usize },
    Blocked { start: usize, stride: usize, block: usize, count: usize },
}

impl IndexSet {
    pub fn len(&self) -> usize {
        match *self {
            IndexSet::Range { lo, hi } => hi - lo,
            IndexSet::Blocked { count, .. } => count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Local position of global index `g`, if the set contains it.
    pub fn position(&self, g: usize) -> Option<usize> {
        match *self {
            IndexSet::Range { lo, hi } => (lo..hi).contains(&g).then(|| g - lo),
            IndexSet::Blocked { start, stride, block, count } => {
                if g < start {
                    return None;
                }
                let off = g - start;
                let within = off % stride;
                if within >= block {
                    return None;
                }
                let local = (off / stride) * block + within;
                (local < count).then_some(local)
            }
        }
    }

    pub fn contains(&self, g: usize) -> bool {
        self.position(g).is_some()
    }

    /// Global index at local position `l`.
    pub fn nth(&self, l: usize) -> Option<usize> {
        if l >= self.len() {
            return None;
        }
        Some(match *self {
            IndexSet::Range { lo, .. } => lo + l,
            IndexSet::Blocked { start, stride, block, .. } => start + (l / block) * stride + l % block,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(move |l| self.nth(l).expect("position within len"))
    }
}

/// Index sets of one pid along one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimExtent {
    pub owned: IndexSet,
    /// Owned indices plus the halo. Equal to `owned` unless the dimension is
    /// block distributed with nonzero overlap.
    pub with_overlap: IndexSet,
}

/// Where one pid's piece of a global array lives.
///
/// Local buffers are laid out owned-first: the owned block in row-major order
/// occupies positions `0..owned_len()`, followed by the halo elements in
/// row-major order of the with-overlap extent. Since halos only extend toward
/// higher indices, the owned block is the leading corner of the with-overlap
/// extent in local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalExtent {
    pub dims: [DimExtent; RANK],
}

impl LocalExtent {
    pub fn owned_shape(&self) -> Index {
        [self.dims[0].owned.len(), self.dims[1].owned.len()]
    }

    pub fn with_overlap_shape(&self) -> Index {
        [self.dims[0].with_overlap.len(), self.dims[1].with_overlap.len()]
    }

    pub fn owned_len(&self) -> usize {
        let [r, c] = self.owned_shape();
        r * c
    }

    pub fn with_overlap_len(&self) -> usize {
        let [r, c] = self.with_overlap_shape();
        r * c
    }

    pub fn halo_len(&self) -> usize {
        self.with_overlap_len() - self.owned_len()
    }

    /// Whether local index `l` (in with-overlap coordinates) is an owned element.
    pub fn is_owned_local(&self, l: Index) -> bool {
        let [or, oc] = self.owned_shape();
        l[0] < or && l[1] < oc
    }

    /// Buffer position of local index `l` (with-overlap coordinates).
    pub fn buffer_offset(&self, l: Index) -> Option<usize> {
        let [or, oc] = self.owned_shape();
        let [wr, wc] = self.with_overlap_shape();
        if l[0] >= wr || l[1] >= wc {
            return None;
        }
        if l[0] < or && l[1] < oc {
            return Some(l[0] * oc + l[1]);
        }
        let halo_cols = wc - oc;
        let halo_pos = if l[0] < or {
            l[0] * halo_cols + (l[1] - oc)
        } else {
            or * halo_cols + (l[0] - or) * wc + l[1]
        };
        Some(or * oc + halo_pos)
    }

    /// Local index (with-overlap coordinates) stored at buffer position `pos`.
    pub fn local_at_offset(&self, pos: usize) -> Option<Index> {
        let [or, oc] = self.owned_shape();
        let [_, wc] = self.with_overlap_shape();
        if pos >= self.with_overlap_len() {
            return None;
        }
        let owned = or * oc;
        if pos < owned {
            return Some([pos / oc, pos % oc]);
        }
        let h = pos - owned;
        let halo_cols = wc - oc;
        if h < or * halo_cols {
            Some([h / halo_cols, oc + h % halo_cols])
        } else {
            let rest = h - or * halo_cols;
            Some([or + rest / wc, rest % wc])
        }
    }

    /// Global index stored at buffer position `pos`.
    pub fn global_at_offset(&self, pos: usize) -> Option<Index> {
        let l = self.local_at_offset(pos)?;
        Some([self.dims[0].with_overlap.nth(l[0])?, self.dims[1].with_overlap.nth(l[1])?])
    }

    /// Global indices of the halo, in buffer order.
    pub fn halo_globals(&self) -> Vec<Index> {
        (self.owned_len()..self.with_overlap_len())
            .map(|pos| self.global_at_offset(pos).expect("halo position in range"))
            .collect()
    }
}

/// Unvalidated map description, the serialized form of [`Map`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSpec {
    pub grid: Vec<usize>,
    pub dists: Vec<DistSpec>,
    pub pids: Vec<usize>,
    pub overlap: Vec<usize>,
}

/// A validated, immutable parallel map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MapSpec", into = "MapSpec")]
pub struct Map {
    grid: Index,
    dists: [DistSpec; RANK],
    pids: Vec<usize>,
    overlap: Index,
}

impl TryFrom<MapSpec> for Map {
    type Error = MapError;

    fn try_from(spec: MapSpec) -> Result<Self, Self::Error> {
        Map::new(&spec.grid, &spec.dists, &spec.pids, &spec.overlap)
    }
}

impl From<Map> for MapSpec {
    fn from(map: Map) -> Self {
        MapSpec {
            grid: map.grid.to_vec(),
            dists: map.dists.to_vec(),
            pids: map.pids,
            overlap: map.overlap.to_vec(),
        }
    }
}

impl Map {
    pub fn new(grid: &[usize], dists: &[DistSpec], pids: &[usize], overlap: &[usize]) -> Result<Self, MapError> {
        if grid.len() != RANK || dists.len() != RANK || overlap.len() != RANK {
            return Err(MapError::RankMismatch { grid: grid.len(), dists: dists.len(), overlap: overlap.len() });
        }
        if let Some(dim) = grid.iter().position(|&g| g == 0) {
            return Err(MapError::EmptyGrid { dim });
        }
        let slots: usize = grid.iter().product();
        if slots != pids.len() {
            return Err(MapError::GridPidMismatch { grid_slots: slots, pids: pids.len() });
        }
        let mut seen = HashSet::with_capacity(pids.len());
        for &pid in pids {
            if !seen.insert(pid) {
                return Err(MapError::DuplicatePid(pid));
            }
        }
        for dim in 0..RANK {
            let dist = dists[dim];
            if dist.kind == DistKind::BlockCyclic && dist.block_size == 0 {
                return Err(MapError::ZeroBlockSize { dim });
            }
            if overlap[dim] > 0 && dist.kind != DistKind::Block {
                return Err(MapError::OverlapOnNonBlock { dim, kind: dist.kind });
            }
        }
        Ok(Map {
            grid: [grid[0], grid[1]],
            dists: [dists[0], dists[1]],
            pids: pids.to_vec(),
            overlap: [overlap[0], overlap[1]],
        })
    }

    /// The `1 x np` row map over pids `0..np` used for distributed vectors.
    pub fn row(np: usize, dist: DistSpec, overlap: usize) -> Result<Self, MapError> {
        let pids: Vec<usize> = (0..np).collect();
        Map::new(&[1, np], &[DistSpec::BLOCK, dist], &pids, &[0, overlap])
    }

    /// Single-pid map; every index is owned by pid 0.
    pub fn serial() -> Self {
        Map::new(&[1, 1], &[DistSpec::BLOCK; RANK], &[0], &[0, 0]).expect("serial map is valid")
    }

    pub fn grid(&self) -> Index {
        self.grid
    }

    pub fn dists(&self) -> [DistSpec; RANK] {
        self.dists
    }

    pub fn pids(&self) -> &[usize] {
        &self.pids
    }

    pub fn overlap(&self) -> Index {
        self.overlap
    }

    pub fn np(&self) -> usize {
        self.pids.len()
    }

    pub fn has_overlap(&self) -> bool {
        self.overlap.iter().any(|&o| o > 0)
    }

    pub fn grid_coords(&self, pid: usize) -> Result<Index, MapError> {
        let pos = self.pids.iter().position(|&p| p == pid).ok_or(MapError::UnknownPid(pid))?;
        Ok([pos / self.grid[1], pos % self.grid[1]])
    }

    /// Inverse of [`Map::grid_coords`].
    pub fn pid_at(&self, coords: Index) -> Option<usize> {
        if coords[0] >= self.grid[0] || coords[1] >= self.grid[1] {
            return None;
        }
        self.pids.get(coords[0] * self.grid[1] + coords[1]).copied()
    }

    fn check_dims(&self, dims: Index) -> Result<(), MapError> {
        for dim in 0..RANK {
            if dims[dim] < self.grid[dim] {
                return Err(MapError::DimensionTooSmall { dim, len: dims[dim], slots: self.grid[dim] });
            }
        }
        Ok(())
    }

    fn dim_extent(&self, dim: usize, n: usize, slot: usize) -> DimExtent {
        let p = self.grid[dim];
        let dist = self.dists[dim];
        match dist.kind {
            DistKind::Block => {
                let chunk = n.div_ceil(p);
                let lo = (slot * chunk).min(n);
                let hi = ((slot + 1) * chunk).min(n);
                let halo_hi = if lo < hi { (hi + self.overlap[dim]).min(n) } else { hi };
                DimExtent { owned: IndexSet::Range { lo, hi }, with_overlap: IndexSet::Range { lo, hi: halo_hi } }
            }
            DistKind::Cyclic => {
                let count = if slot < n { (n - slot).div_ceil(p) } else { 0 };
                let set = IndexSet::Blocked { start: slot, stride: p, block: 1, count };
                DimExtent { owned: set, with_overlap: set }
            }
            DistKind::BlockCyclic => {
                let b = dist.block_size;
                let cycle = b * p;
                let full = n / cycle;
                let rem = n % cycle;
                let count = full * b + rem.saturating_sub(slot * b).min(b);
                let set = IndexSet::Blocked { start: slot * b, stride: cycle, block: b, count };
                DimExtent { owned: set, with_overlap: set }
            }
        }
    }

    pub fn local_extent(&self, dims: Index, pid: usize) -> Result<LocalExtent, MapError> {
        let coords = self.grid_coords(pid)?;
        self.check_dims(dims)?;
        Ok(LocalExtent {
            dims: [self.dim_extent(0, dims[0], coords[0]), self.dim_extent(1, dims[1], coords[1])],
        })
    }

    fn owner_slot(&self, dim: usize, n: usize, g: usize) -> usize {
        let p = self.grid[dim];
        match self.dists[dim].kind {
            DistKind::Block => g / n.div_ceil(p),
            DistKind::Cyclic => g % p,
            DistKind::BlockCyclic => (g / self.dists[dim].block_size) % p,
        }
    }

    /// Pid whose owned (non-halo) piece contains `index`.
    pub fn owner(&self, dims: Index, index: Index) -> Result<usize, MapError> {
        if index[0] >= dims[0] || index[1] >= dims[1] {
            return Err(MapError::IndexOutOfBounds { index, dims });
        }
        self.check_dims(dims)?;
        let coords = [self.owner_slot(0, dims[0], index[0]), self.owner_slot(1, dims[1], index[1])];
        Ok(self.pid_at(coords).expect("owner slot within grid"))
    }

    /// Local index (with-overlap coordinates) of a global index stored on `pid`.
    pub fn global_to_local(&self, dims: Index, pid: usize, index: Index) -> Result<Index, MapError> {
        let ext = self.local_extent(dims, pid)?;
        let r = ext.dims[0].with_overlap.position(index[0]);
        let c = ext.dims[1].with_overlap.position(index[1]);
        match (r, c) {
            (Some(r), Some(c)) => Ok([r, c]),
            _ => Err(MapError::NotLocal { pid, index }),
        }
    }

    pub fn local_to_global(&self, dims: Index, pid: usize, local: Index) -> Result<Index, MapError> {
        let ext = self.local_extent(dims, pid)?;
        let r = ext.dims[0].with_overlap.nth(local[0]);
        let c = ext.dims[1].with_overlap.nth(local[1]);
        match (r, c) {
            (Some(r), Some(c)) => Ok([r, c]),
            _ => Err(MapError::LocalIndexOutOfBounds { pid, index: local, shape: ext.with_overlap_shape() }),
        }
    }
}
