//! Grid maps: cell kinds, the ASCII map format, and geodesic distances.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("malformed map at line {line}: {reason}")]
    MalformedMap { line: usize, reason: String },
    #[error("accessible region is not 4-connected ({components} components)")]
    DisconnectedMap { components: usize },
}

/// Terrain of a single cell.
///
/// Buildings are inaccessible to ground agents and block ground-level sight.
/// Foliage is accessible and hides whatever stands beneath it from the
/// overhead pursuer, but not from ground-level cameras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Open,
    Building,
    Foliage,
}

impl CellKind {
    pub fn glyph(self) -> char {
        match self {
            CellKind::Open => '.',
            CellKind::Building => '#',
            CellKind::Foliage => '~',
        }
    }

    pub fn from_glyph(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellKind::Open),
            '#' => Some(CellKind::Building),
            '~' => Some(CellKind::Foliage),
            _ => None,
        }
    }

    pub fn is_accessible(self) -> bool {
        !matches!(self, CellKind::Building)
    }
}

/// Cell coordinate. Row 0 is the northern edge, column 0 the western edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: i32,
    pub row: i32,
}

impl Cell {
    pub const fn new(col: i32, row: i32) -> Self {
        Self { col, row }
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.col - other.col).abs().max((self.row - other.row).abs())
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.col - other.col).abs() + (self.row - other.row).abs()
    }

    pub fn offset(self, dcol: i32, drow: i32) -> Cell {
        Cell::new(self.col + dcol, self.row + drow)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
}

impl GridMap {
    /// Builds a map from row-major cells and checks size and connectivity.
    pub fn new(width: usize, height: usize, cells: Vec<CellKind>) -> Result<Self, MapError> {
        if width < 2 || height < 2 {
            return Err(MapError::MalformedMap {
                line: 0,
                reason: format!("map must be at least 2x2, got {width}x{height}"),
            });
        }
        if cells.len() != width * height {
            return Err(MapError::MalformedMap {
                line: 0,
                reason: format!("expected {} cells, got {}", width * height, cells.len()),
            });
        }
        let map = Self { width, height, cells };
        let components = map.accessible_components();
        if components == 0 {
            return Err(MapError::MalformedMap { line: 0, reason: "no accessible cells".into() });
        }
        if components > 1 {
            return Err(MapError::DisconnectedMap { components });
        }
        Ok(map)
    }

    /// An all-open map, used mostly in tests.
    pub fn open(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![CellKind::Open; width * height]).expect("open map is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.col >= 0 && c.row >= 0 && (c.col as usize) < self.width && (c.row as usize) < self.height
    }

    /// Row-major index of an on-map cell.
    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.in_bounds(c));
        c.row as usize * self.width + c.col as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn kind(&self, c: Cell) -> CellKind {
        self.cells[self.index(c)]
    }

    /// Off-map cells are never accessible.
    pub fn is_accessible(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.kind(c).is_accessible()
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, CellKind)> + '_ {
        self.cells.iter().enumerate().map(move |(i, k)| (self.cell_at(i), *k))
    }

    pub fn accessible_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|(_, k)| k.is_accessible()).map(|(c, _)| c)
    }

    pub fn accessible_count(&self) -> usize {
        self.cells.iter().filter(|k| k.is_accessible()).count()
    }

    /// Returns a copy with one cell replaced, skipping the connectivity check.
    /// Used for occlusion-monotonicity experiments where the modified map may
    /// not be a legal game map.
    pub fn with_cell_unchecked(&self, c: Cell, kind: CellKind) -> Self {
        let mut out = self.clone();
        let i = out.index(c);
        out.cells[i] = kind;
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                s.push(self.cells[row * self.width + col].glyph());
            }
            s.push('\n');
        }
        s
    }

    /// SHA-256 over the canonical text form.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// In-bounds 4-neighbours in N, S, E, W order.
    pub fn neighbors4(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        [(0, -1), (0, 1), (1, 0), (-1, 0)]
            .into_iter()
            .map(move |(dc, dr)| c.offset(dc, dr))
            .filter(move |n| self.in_bounds(*n))
    }

    fn accessible_components(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.cells.len() {
            if seen[start] || !self.cells[start].is_accessible() {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(self.cell_at(start));
            while let Some(c) = queue.pop_front() {
                for n in self.neighbors4(c) {
                    let i = self.index(n);
                    if !seen[i] && self.cells[i].is_accessible() {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        components
    }
}

/// The bundled 20x20 map used by the default configuration.
pub const DEFAULT_MAP: &str = include_str!("../maps/default.map");

/// Parses the ASCII map format: one row per line, `.` open, `#` building,
/// `~` foliage. A single trailing newline is allowed.

pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut width = None;
    let mut height = 0;
    let mut cells = Vec::new();
    for (i, line) in body.split('\n').enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            return Err(MapError::MalformedMap { line: line_no, reason: "empty row".into() });
        }
        let mut row_len = 0;
        for ch in line.chars() {
            let kind = CellKind::from_glyph(ch).ok_or_else(|| MapError::MalformedMap {
                line: line_no,
                reason: format!("unknown glyph {ch:?}"),
            })?;
            cells.push(kind);
            row_len += 1;
        }
        match width {
            None => width = Some(row_len),
            Some(w) if w != row_len => {
                return Err(MapError::MalformedMap {
                    line: line_no,
                    reason: format!("ragged row: expected {w} cells, got {row_len}"),
                })
            }
            _ => {}
        }
        height += 1;
    }
    GridMap::new(width.unwrap_or(0), height, cells)
}

/// All-pairs geodesic distances over accessible cells (4-adjacency, unit
/// cost). Inaccessible cells have no distance to anything.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<u16>,
}

impl DistanceTable {
    pub const UNREACHABLE: u16 = u16::MAX;

    pub fn new(map: &GridMap) -> Self {
        let n = map.len();
        let mut dist = vec![Self::UNREACHABLE; n * n];
        let mut queue = VecDeque::with_capacity(n);
        for src in 0..n {
            if !map.cells[src].is_accessible() {
                continue;
            }
            let row = &mut dist[src * n..(src + 1) * n];
            row[src] = 0;
            queue.clear();
            queue.push_back(src);
            while let Some(i) = queue.pop_front() {
                let d = row[i];
                for nb in map.neighbors4(map.cell_at(i)) {
                    let j = map.index(nb);
                    if row[j] == Self::UNREACHABLE && map.cells[j].is_accessible() {
                        row[j] = d + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        Self { n, dist }
    }

    pub fn get(&self, map: &GridMap, a: Cell, b: Cell) -> Option<u32> {
        let d = self.dist[map.index(a) * self.n + map.index(b)];
        (d != Self::UNREACHABLE).then_some(d as u32)
    }

    pub fn by_index(&self, a: usize, b: usize) -> Option<u32> {
        let d = self.dist[a * self.n + b];
        (d != Self::UNREACHABLE).then_some(d as u32)
    }
}
