//! Planar geometry over geographic degrees and a hierarchical hexagonal grid.
//!
//! Degrees are treated as a flat distance unit: no spherical correction and no
//! longitude wrap. The grid is an aperture-7 hexagonal lattice. Level 0 has
//! center spacing `base_size`; every level below shrinks the spacing by `√7`
//! and rotates the lattice by `atan(√3/5)`, alternating direction per level so
//! that every level-`L` lattice contains the level-`L-1` lattice exactly.
//!
//! Cells are addressed by integer lattice coordinates per level, so cell
//! identity never depends on floating point rounding.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default center-to-center spacing of level-0 cells, in degrees.
pub const DEFAULT_BASE_SIZE: f64 = 5.0;

/// Deepest subdivision level the grid will produce.
pub const MAX_LEVEL: u8 = 16;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const SQRT_7: f64 = 2.645_751_311_064_590_7;

/// Neighbor offsets in lattice coordinates, counter-clockwise from the `u` axis.
const DIRECTIONS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    OutOfRange { lon: f64, lat: f64 },
    #[error("nearest query over an empty set")]
    EmptyInput,
    #[error("cell level {0} exceeds the maximum grid level")]
    LevelTooDeep(u8),
}

/// A position in the degree plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lon: f64,
    pub lat: f64,
}

impl GeoCoordinate {
    /// Range-checked constructor: `lon` in [-180, 180], `lat` in [-90, 90].
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::OutOfRange { lon, lat });
        }
        Ok(Self { lon, lat })
    }

    /// Unchecked point in the unbounded plane, used for lattice arithmetic.
    pub const fn planar(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn distance(&self, other: &GeoCoordinate) -> f64 {
        distance(*self, *other)
    }

    /// Clamps into the valid lon/lat ranges.
    pub fn clamped(self) -> Self {
        Self {
            lon: self.lon.clamp(-180.0, 180.0),
            lat: self.lat.clamp(-90.0, 90.0),
        }
    }

    fn offset(self, dx: f64, dy: f64) -> Self {
        Self::planar(self.lon + dx, self.lat + dy)
    }
}

impl fmt::Display for GeoCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lon, self.lat)
    }
}

/// Euclidean distance in the degree plane.
pub fn distance(a: GeoCoordinate, b: GeoCoordinate) -> f64 {
    (a.lon - b.lon).hypot(a.lat - b.lat)
}

/// Lexicographic (lon, then lat) order used for every geometric tie-break.
fn lexicographic(a: &GeoCoordinate, b: &GeoCoordinate) -> Ordering {
    a.lon.total_cmp(&b.lon).then(a.lat.total_cmp(&b.lat))
}

/// Returns the id of the item nearest to `p`; ties go to the lower id.
pub fn nearest<I>(items: &[(I, GeoCoordinate)], p: GeoCoordinate) -> Result<I, GeoError>
where
    I: Ord + Copy,
{
    nearest_by(items.iter().copied(), p).ok_or(GeoError::EmptyInput)
}

/// Iterator form of [`nearest`]; `None` on an empty iterator.
pub fn nearest_by<I, It>(items: It, p: GeoCoordinate) -> Option<I>
where
    I: Ord + Copy,
    It: IntoIterator<Item = (I, GeoCoordinate)>,
{
    let mut best: Option<(f64, I)> = None;
    for (id, c) in items {
        let d = distance(c, p);
        best = match best {
            None => Some((d, id)),
            Some((bd, bid)) if d < bd || (d == bd && id < bid) => Some((d, id)),
            keep => keep,
        };
    }
    best.map(|(_, id)| id)
}

/// Integer address of a cell: subdivision level plus lattice coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub level: u8,
    pub i: i64,
    pub j: i64,
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}:{}", self.level, self.i, self.j)
    }
}

/// A hexagonal geofence. Equality and hashing use the [`CellId`] only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HexCell {
    pub id: CellId,
    pub center: GeoCoordinate,
    /// Center-to-center distance to neighbors at this level.
    pub size: f64,
}

impl HexCell {
    pub fn level(&self) -> u8 {
        self.id.level
    }

    /// Distance from the center to a vertex of the hexagon.
    pub fn circumradius(&self) -> f64 {
        self.size / SQRT_3
    }

    /// The six vertices, counter-clockwise, for drawing.
    pub fn vertices(&self, grid: &HexGrid) -> [GeoCoordinate; 6] {
        // Vertices sit between neighbor directions, rotated 30 degrees from them.
        let phi = grid.orientation(self.id.level) + std::f64::consts::FRAC_PI_6;
        let r = self.circumradius();
        std::array::from_fn(|k| {
            let a = phi + k as f64 * std::f64::consts::FRAC_PI_3;
            self.center.offset(r * a.cos(), r * a.sin())
        })
    }
}

impl PartialEq for HexCell {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for HexCell {}

impl Hash for HexCell {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

/// The global hexagonal grid, parameterized by the level-0 spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexGrid {
    base_size: f64,
}

impl Default for HexGrid {
    fn default() -> Self {
        Self::new(DEFAULT_BASE_SIZE)
    }
}

impl HexGrid {
    pub fn new(base_size: f64) -> Self {
        assert!(base_size > 0.0 && base_size.is_finite(), "base size must be positive");
        Self { base_size }
    }

    pub fn base_size(&self) -> f64 {
        self.base_size
    }

    /// Spacing at `level`: `base_size / √7^level`.
    pub fn size(&self, level: u8) -> f64 {
        self.base_size / SQRT_7.powi(i32::from(level))
    }

    /// Lattice rotation at `level`: 0 on even levels, `-atan(√3/5)` on odd ones.
    pub fn orientation(&self, level: u8) -> f64 {
        if level % 2 == 0 {
            0.0
        } else {
            -(SQRT_3 / 5.0).atan()
        }
    }

    fn basis(&self, level: u8) -> ((f64, f64), (f64, f64)) {
        let s = self.size(level);
        let phi = self.orientation(level);
        let psi = phi + std::f64::consts::FRAC_PI_3;
        ((s * phi.cos(), s * phi.sin()), (s * psi.cos(), s * psi.sin()))
    }

    fn lattice_offset(&self, level: u8, a: i64, b: i64) -> (f64, f64) {
        let ((ux, uy), (vx, vy)) = self.basis(level);
        let (a, b) = (a as f64, b as f64);
        (a * ux + b * vx, a * uy + b * vy)
    }

    /// Builds the cell for an address. Centers are computed by walking down
    /// from the level-0 ancestor, so a center child shares its parent's
    /// center bit for bit.
    pub fn cell(&self, id: CellId) -> Result<HexCell, GeoError> {
        if id.level > MAX_LEVEL {
            return Err(GeoError::LevelTooDeep(id.level));
        }
        Ok(HexCell { id, center: self.center_of(id), size: self.size(id.level) })
    }

    fn center_of(&self, id: CellId) -> GeoCoordinate {
        if id.level == 0 {
            let (x, y) = self.lattice_offset(0, id.i, id.j);
            return GeoCoordinate::planar(x, y);
        }
        let (parent, (da, db)) = parent_and_digit(id);
        let (dx, dy) = self.lattice_offset(id.level, da, db);
        self.center_of(parent).offset(dx, dy)
    }

    /// The level-0 cell whose center is nearest to `p`.
    pub fn base_cell_of(&self, p: GeoCoordinate) -> HexCell {
        let s = self.base_size;
        let jf = p.lat / (s * SQRT_3 / 2.0);
        let i_f = p.lon / s - jf / 2.0;
        let (i0, j0) = (i_f.floor() as i64, jf.floor() as i64);
        let mut best: Option<(f64, HexCell)> = None;
        for i in i0 - 1..=i0 + 2 {
            for j in j0 - 1..=j0 + 2 {
                let cell = self.cell(CellId { level: 0, i, j }).expect("level 0");
                best = pick_nearest(best, cell, p);
            }
        }
        best.expect("candidate window is never empty").1
    }

    /// The parent of a cell at level > 0.
    pub fn parent(&self, cell: &HexCell) -> Option<HexCell> {
        if cell.id.level == 0 {
            return None;
        }
        let (parent, _) = parent_and_digit(cell.id);
        self.cell(parent).ok()
    }

    /// The 7 children of `cell`; the first one shares the parent's center.
    pub fn subdivide(&self, cell: &HexCell) -> Result<[HexCell; 7], GeoError> {
        let level = cell.id.level + 1;
        if level > MAX_LEVEL {
            return Err(GeoError::LevelTooDeep(level));
        }
        let (ci, cj) = child_center_coords(cell.id);
        let size = self.size(level);
        let digits = std::iter::once((0, 0)).chain(DIRECTIONS);
        let mut out = [*cell; 7];
        for (slot, (da, db)) in out.iter_mut().zip(digits) {
            let (dx, dy) = self.lattice_offset(level, da, db);
            *slot = HexCell {
                id: CellId { level, i: ci + da, j: cj + db },
                center: cell.center.offset(dx, dy),
                size,
            };
        }
        Ok(out)
    }

    /// The child of `cell` whose center is nearest to `p`.
    pub fn child_containing(&self, cell: &HexCell, p: GeoCoordinate) -> Result<HexCell, GeoError> {
        let children = self.subdivide(cell)?;
        let mut best = None;
        for child in children {
            best = pick_nearest(best, child, p);
        }
        Ok(best.expect("seven children").1)
    }

    /// Descends from the base cell to `level` by nearest-child steps.
    pub fn cell_at(&self, p: GeoCoordinate, level: u8) -> Result<HexCell, GeoError> {
        let mut cell = self.base_cell_of(p);
        while cell.id.level < level {
            cell = self.child_containing(&cell, p)?;
        }
        Ok(cell)
    }

    /// The 6 same-level cells at center distance `cell.size`.
    pub fn neighbors(&self, cell: &HexCell) -> [HexCell; 6] {
        DIRECTIONS.map(|(di, dj)| {
            self.cell(CellId { level: cell.id.level, i: cell.id.i + di, j: cell.id.j + dj })
                .expect("same level as an existing cell")
        })
    }
}

fn pick_nearest(best: Option<(f64, HexCell)>, cand: HexCell, p: GeoCoordinate) -> Option<(f64, HexCell)> {
    let d = distance(cand.center, p);
    match best {
        None => Some((d, cand)),
        Some((bd, b)) => {
            if d < bd || (d == bd && lexicographic(&cand.center, &b.center) == Ordering::Less) {
                Some((d, cand))
            } else {
                Some((bd, b))
            }
        }
    }
}

/// Coordinates, in the child lattice, of the center child of `id`.
fn child_center_coords(id: CellId) -> (i64, i64) {
    let (i, j) = (id.i, id.j);
    if id.level % 2 == 0 {
        (2 * i - j, i + 3 * j)
    } else {
        (3 * i + j, -i + 2 * j)
    }
}

/// Inverse of [`child_center_coords`] plus the digit offset of `id` within
/// its parent. The 7 digit offsets form a complete residue system modulo the
/// parent sublattice, so exactly one of them divides out.
fn parent_and_digit(id: CellId) -> (CellId, (i64, i64)) {
    debug_assert!(id.level > 0);
    let parent_level = id.level - 1;
    for (da, db) in std::iter::once((0, 0)).chain(DIRECTIONS) {
        let (a, b) = (id.i - da, id.j - db);
        let (ni, nj) = if parent_level % 2 == 0 { (3 * a + b, -a + 2 * b) } else { (2 * a - b, a + 3 * b) };
        if ni.rem_euclid(7) == 0 && nj.rem_euclid(7) == 0 {
            return (CellId { level: parent_level, i: ni / 7, j: nj / 7 }, (da, db));
        }
    }
    unreachable!("aperture-7 digits cover every residue class")
}
