//! Shared, read-only game context: map, distance table, view radii, horizon.

use std::sync::Arc;

use crate::game::DEFAULT_HORIZON;
use crate::map::{Cell, CellKind, DistanceTable, GridMap};
use crate::visibility::FovConfig;

#[derive(Debug, Clone)]
pub struct Arena {
    map: Arc<GridMap>,
    distances: Arc<DistanceTable>,
    pub fov: FovConfig,
    pub horizon: u32,
    foliage: Arc<Vec<Cell>>,
    center: Cell,
}

impl Arena {
    pub fn new(map: GridMap, fov: FovConfig, horizon: u32) -> Self {
        let distances = DistanceTable::new(&map);
        let foliage = map.cells().filter(|(_, k)| *k == CellKind::Foliage).map(|(c, _)| c).collect();
        let center = ground_median(&map, &distances);
        Self { map: Arc::new(map), distances: Arc::new(distances), fov, horizon, foliage: Arc::new(foliage), center }
    }

    pub fn with_defaults(map: GridMap) -> Self {
        Self::new(map, FovConfig::default(), DEFAULT_HORIZON)
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn distances(&self) -> &DistanceTable {
        &self.distances
    }

    /// Accessible cell with the least total ground distance to all others
    /// (first in row-major order on ties).
    pub fn center(&self) -> Cell {
        self.center
    }

    pub fn foliage_cells(&self) -> &[Cell] {
        &self.foliage
    }

    /// Geodesic distance between accessible cells, `None` when either is a
    /// building.
    pub fn ground_distance(&self, a: Cell, b: Cell) -> Option<u32> {
        self.distances.get(&self.map, a, b)
    }
}

fn ground_median(map: &GridMap, distances: &DistanceTable) -> Cell {
    let cells: Vec<Cell> = map.accessible_cells().collect();
    let total = |a: Cell| -> u64 { cells.iter().filter_map(|b| distances.get(map, a, *b)).map(u64::from).sum() };
    let mut best = cells[0];
    let mut best_total = total(best);
    for &c in &cells[1..] {
        let t = total(c);
        if t < best_total {
            best = c;
            best_total = t;
        }
    }
    best
}
