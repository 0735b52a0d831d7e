//! A* search over accessible cells.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::game::Action;
use crate::map::{Cell, GridMap};

/// Shortest path from `start` to `goal` over accessible cells with
/// 4-adjacency. Entering a cell costs `1 + extra_cost(cell)`; the Manhattan
/// heuristic stays admissible because every step costs at least one.
/// Returns the cell sequence including both endpoints and its total cost.
pub fn astar(
    map: &GridMap,
    start: Cell,
    goal: Cell,
    extra_cost: impl Fn(Cell) -> u32,
) -> Option<(Vec<Cell>, u32)> {
    if !map.is_accessible(start) || !map.is_accessible(goal) {
        return None;
    }
    let n = map.len();
    let mut g = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let si = map.index(start);
    g[si] = 0;
    open.push(Reverse((start.manhattan(goal) as u32, start.manhattan(goal) as u32, seq, si)));
    while let Some(Reverse((_, _, _, i))) = open.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        let c = map.cell_at(i);
        if c == goal {
            let mut path = vec![c];
            let mut j = i;
            while parent[j] != usize::MAX {
                j = parent[j];
                path.push(map.cell_at(j));
            }
            path.reverse();
            return Some((path, g[i]));
        }
        for nb in map.neighbors4(c) {
            if !map.is_accessible(nb) {
                continue;
            }
            let j = map.index(nb);
            let cand = g[i] + 1 + extra_cost(nb);
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                seq += 1;
                let h = nb.manhattan(goal) as u32;
                open.push(Reverse((cand + h, h, seq, j)));
            }
        }
    }
    None
}

/// Action that moves from `from` to the 4-adjacent (or equal) cell `to`.
pub fn action_towards(from: Cell, to: Cell) -> Action {
    match (to.col - from.col, to.row - from.row) {
        (0, -1) => Action::MoveN,
        (0, 1) => Action::MoveS,
        (1, 0) => Action::MoveE,
        (-1, 0) => Action::MoveW,
        _ => Action::Stay,
    }
}
