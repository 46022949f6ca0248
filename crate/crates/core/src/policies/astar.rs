use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::sim::{Cell, TerrainGrid};

use super::PolicyError;

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// A planned cell path and its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub cost: f64,
}

/// Cost of stepping into `to`: move length times `1 + w * (1 - forest)`, so
/// dense forest is cheap and open ground is expensive when `w > 0`.
pub fn edge_cost(terrain: &TerrainGrid, to: Cell, diagonal: bool, forest_weight: f64) -> f64 {
    let len = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
    len * (1.0 + forest_weight * (1.0 - terrain.forest_at(to)))
}

/// Octile distance: exact path length on an empty 8-connected grid, and a
/// lower bound on cost because every edge multiplier is at least 1.
fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    hi - lo + std::f64::consts::SQRT_2 * lo
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (f, cell) with (y, x) lexicographic tie-break
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn neighbours(terrain: &TerrainGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
        let x = c.x.checked_add_signed(dx)?;
        let y = c.y.checked_add_signed(dy)?;
        let n = Cell::new(x, y);
        terrain.traversable(n).then_some((n, dx != 0 && dy != 0))
    })
}

/// Minimum-cost 8-connected path from `start` to `goal`.
pub fn astar_plan(terrain: &TerrainGrid, start: Cell, goal: Cell, forest_weight: f64) -> Result<Path, PolicyError> {
    search(terrain, start, forest_weight, |c| c == goal, |c| octile(c, goal))
        .ok_or(PolicyError::NoPath { start, goal })
}

/// Cheapest-to-reach cell among `candidates` (multi-target Dijkstra); this
/// returns the same cost as taking the argmin of per-candidate A* runs.
pub fn nearest_by_cost(
    terrain: &TerrainGrid,
    start: Cell,
    candidates: &[Cell],
    forest_weight: f64,
) -> Option<Path> {
    if candidates.is_empty() {
        return None;
    }
    let mut is_target = vec![false; terrain.width * terrain.height];
    for &c in candidates {
        if terrain.contains(c) {
            is_target[terrain.index(c)] = true;
        }
    }
    search(terrain, start, forest_weight, |c| is_target[terrain.index(c)], |_| 0.0)
}

fn search(
    terrain: &TerrainGrid,
    start: Cell,
    forest_weight: f64,
    is_goal: impl Fn(Cell) -> bool,
    heuristic: impl Fn(Cell) -> f64,
) -> Option<Path> {
    if !terrain.traversable(start) {
        return None;
    }
    let n = terrain.width * terrain.height;
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[terrain.index(start)] = 0.0;
    heap.push(Entry {
        f: heuristic(start),
        g: 0.0,
        cell: start,
    });
    while let Some(Entry { g, cell, .. }) = heap.pop() {
        let ci = terrain.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if is_goal(cell) {
            let mut cells = vec![cell];
            let mut cur = ci;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push(Cell::new(cur % terrain.width, cur / terrain.width));
            }
            cells.reverse();
            return Some(Path { cells, cost: g });
        }
        for (nb, diag) in neighbours(terrain, cell) {
            let ni = terrain.index(nb);
            if closed[ni] {
                continue;
            }
            let ng = g + edge_cost(terrain, nb, diag, forest_weight);
            if ng < best[ni] {
                best[ni] = ng;
                parent[ni] = ci;
                heap.push(Entry {
                    f: ng + heuristic(nb),
                    g: ng,
                    cell: nb,
                });
            }
        }
    }
    None
}
