//! Occupancy-grid planning: A* over 8-connected cells, discrete action
//! synthesis, frontier extraction, and the exploration budget rule.

use crate::geometry::{normalize_angle, AgentPose};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use thiserror::Error;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// Forward translation per action, meters.
pub const FORWARD_STEP_M: f64 = 0.25;
/// Rotation per turn action, radians (30°).
pub const TURN_STEP_RAD: f64 = std::f64::consts::PI / 6.0;
/// Heading alignment tolerance for action synthesis, radians (15°).
pub const ALIGN_TOL_RAD: f64 = std::f64::consts::PI / 12.0;

const PGM_FREE: u8 = 254;
const PGM_OCCUPIED: u8 = 0;
const PGM_UNKNOWN: u8 = 205;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("map format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// Discrete agent action vocabulary shared by the planner and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

/// Rectangular occupancy grid. Cells are addressed as (row, col); the world
/// position of the (0,0) cell corner is `origin`, rows grow along +y and
/// columns along +x, `resolution` meters per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: u32,
    pub height: u32,
    pub resolution: f64,
    pub origin: (f64, f64),
    cells: Vec<CellState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapSidecar {
    version: u32,
    resolution: f64,
    origin: [f64; 2],
    width: u32,
    height: u32,
}

impl OccupancyGrid {
    pub fn new(width: u32, height: u32, resolution: f64, origin: (f64, f64)) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![CellState::Unknown; (width as usize) * (height as usize)],
        }
    }

    pub fn in_bounds(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && (r as u32) < self.height && (c as u32) < self.width
    }

    pub fn get(&self, r: u32, c: u32) -> CellState {
        assert!(self.in_bounds(r as i64, c as i64), "cell ({r},{c}) out of bounds");
        self.cells[(r * self.width + c) as usize]
    }

    pub fn set(&mut self, r: u32, c: u32, s: CellState) {
        assert!(self.in_bounds(r as i64, c as i64), "cell ({r},{c}) out of bounds");
        self.cells[(r * self.width + c) as usize] = s;
    }

    fn state_or_occupied(&self, r: i64, c: i64) -> CellState {
        if self.in_bounds(r, c) {
            self.cells[(r as u32 * self.width + c as u32) as usize]
        } else {
            CellState::Occupied
        }
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let c = ((x - self.origin.0) / self.resolution).floor();
        let r = ((y - self.origin.1) / self.resolution).floor();
        if c.is_finite() && r.is_finite() && self.in_bounds(r as i64, c as i64) {
            Some((r as u32, c as u32))
        } else {
            None
        }
    }

    pub fn cell_center(&self, r: u32, c: u32) -> (f64, f64) {
        (
            self.origin.0 + (c as f64 + 0.5) * self.resolution,
            self.origin.1 + (r as f64 + 0.5) * self.resolution,
        )
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    /// Writes the grid as a binary PGM (P5) plus a JSON sidecar holding
    /// resolution and origin.
    pub fn save_pgm(&self, pgm: &Path, sidecar: &Path) -> Result<(), PlannerError> {
        let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.cells.iter().map(|c| match c {
            CellState::Free => PGM_FREE,
            CellState::Occupied => PGM_OCCUPIED,
            CellState::Unknown => PGM_UNKNOWN,
        }));
        std::fs::write(pgm, buf)?;
        let meta = MapSidecar {
            version: 1,
            resolution: self.resolution,
            origin: [self.origin.0, self.origin.1],
            width: self.width,
            height: self.height,
        };
        std::fs::write(sidecar, serde_json::to_vec_pretty(&meta).expect("serializable"))?;
        Ok(())
    }

    pub fn load_pgm(pgm: &Path, sidecar: &Path) -> Result<Self, PlannerError> {
        let meta: MapSidecar = serde_json::from_slice(&std::fs::read(sidecar)?)
            .map_err(|e| PlannerError::Format(format!("sidecar: {e}")))?;
        if meta.version != 1 {
            return Err(PlannerError::Format(format!("unsupported map version {}", meta.version)));
        }
        let bytes = std::fs::read(pgm)?;
        let (header_end, dims) = parse_pgm_header(&bytes)?;
        if dims != (meta.width, meta.height) {
            return Err(PlannerError::Format("sidecar/PGM dimension mismatch".into()));
        }
        let expected = (meta.width as usize) * (meta.height as usize);
        let data = &bytes[header_end..];
        if data.len() < expected {
            return Err(PlannerError::Format("PGM truncated".into()));
        }
        let mut grid = OccupancyGrid::new(
            meta.width,
            meta.height,
            meta.resolution,
            (meta.origin[0], meta.origin[1]),
        );
        for (i, &v) in data[..expected].iter().enumerate() {
            grid.cells[i] = if v >= 250 {
                CellState::Free
            } else if v <= 50 {
                CellState::Occupied
            } else {
                CellState::Unknown
            };
        }
        Ok(grid)
    }
}

/// Parses a P5 header, returning (offset of pixel data, (width, height)).
fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, (u32, u32)), PlannerError> {
    let err = |m: &str| PlannerError::Format(m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(err("not a P5 PGM"));
    }
    let mut pos = 2;
    let mut fields: Vec<u64> = Vec::new();
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("malformed PGM header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields.push(text.parse().map_err(|_| err("bad PGM number"))?);
    }
    if fields[2] != 255 {
        return Err(err("PGM maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing PGM header terminator"));
    }
    pos += 1;
    Ok((pos, (fields[0] as u32, fields[1] as u32)))
}

/// A* result: the cell path plus the integer axial/diagonal step counts the
/// cost derives from, so cost comparisons are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub cells: Vec<(u32, u32)>,
    pub axial: u32,
    pub diagonal: u32,
}

impl PlannedPath {
    pub fn cost_cells(&self) -> f64 {
        self.axial as f64 + self.diagonal as f64 * SQRT_2
    }

    pub fn length_meters(&self, resolution: f64) -> f64 {
        self.cost_cells() * resolution
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
];

#[derive(Debug)]
struct HeapNode {
    f: f64,
    idx: u32,
    a: u32,
    d: u32,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    // BinaryHeap is a max-heap: invert so the smallest f pops first, with
    // ties broken toward the lower cell index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

fn octile(a: (u32, u32), b: (u32, u32)) -> f64 {
    let dr = a.0.abs_diff(b.0) as f64;
    let dc = a.1.abs_diff(b.1) as f64;
    let (lo, hi) = if dr < dc { (dr, dc) } else { (dc, dr) };
    (hi - lo) + lo * SQRT_2
}

/// 8-connected A* over free cells: unit axial cost, √2 diagonal cost, octile
/// heuristic. Diagonal steps are forbidden when both adjacent axial cells
/// are occupied. Unknown cells are not traversable. Returns `None` when the
/// goal is unreachable, occupied, or unknown.
///
/// Costs are exact: per-node (axial, diagonal) counts are integers and every
/// cost is recomputed as `a + d·√2`, so equal-cost paths produce bit-equal
/// floats and the result matches a Dijkstra oracle exactly.
pub fn astar(grid: &OccupancyGrid, start: (u32, u32), goal: (u32, u32)) -> Option<PlannedPath> {
    assert!(
        grid.in_bounds(start.0 as i64, start.1 as i64) && grid.get(start.0, start.1) == CellState::Free,
        "astar start must be a free in-bounds cell"
    );
    if !grid.in_bounds(goal.0 as i64, goal.1 as i64) || grid.get(goal.0, goal.1) != CellState::Free {
        return None;
    }
    let idx_of = |r: u32, c: u32| r * grid.width + c;
    if start == goal {
        return Some(PlannedPath { cells: vec![start], axial: 0, diagonal: 0 });
    }

    let n = (grid.width as usize) * (grid.height as usize);
    // best[i] = Some((a, d)) for the cheapest known route to cell i.
    let mut best: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut parent: Vec<u32> = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();

    best[idx_of(start.0, start.1) as usize] = Some((0, 0));
    heap.push(HeapNode { f: octile(start, goal), idx: idx_of(start.0, start.1), a: 0, d: 0 });

    while let Some(node) = heap.pop() {
        let cell = (node.idx / grid.width, node.idx % grid.width);
        match best[node.idx as usize] {
            Some((a, d)) if (a, d) == (node.a, node.d) => {}
            _ => continue, // stale queue entry
        }
        if cell == goal {
            let mut cells = vec![cell];
            let mut cur = node.idx;
            while parent[cur as usize] != u32::MAX {
                cur = parent[cur as usize];
                cells.push((cur / grid.width, cur % grid.width));
            }
            cells.reverse();
            return Some(PlannedPath { cells, axial: node.a, diagonal: node.d });
        }
        for (dr, dc) in NEIGHBORS {
            let (nr, nc) = (cell.0 as i64 + dr, cell.1 as i64 + dc);
            if grid.state_or_occupied(nr, nc) != CellState::Free {
                continue;
            }
            let diagonal = dr != 0 && dc != 0;
            if diagonal {
                let side_a = grid.state_or_occupied(cell.0 as i64 + dr, cell.1 as i64);
                let side_b = grid.state_or_occupied(cell.0 as i64, cell.1 as i64 + dc);
                if side_a == CellState::Occupied && side_b == CellState::Occupied {
                    continue;
                }
            }
            let (na, nd) = if diagonal { (node.a, node.d + 1) } else { (node.a + 1, node.d) };
            let ncost = na as f64 + nd as f64 * SQRT_2;
            let nidx = idx_of(nr as u32, nc as u32);
            let improves = match best[nidx as usize] {
                None => true,
                Some((ba, bd)) => ncost < ba as f64 + bd as f64 * SQRT_2,
            };
            if improves {
                best[nidx as usize] = Some((na, nd));
                parent[nidx as usize] = node.idx;
                heap.push(HeapNode {
                    f: ncost + octile((nr as u32, nc as u32), goal),
                    idx: nidx,
                    a: na,
                    d: nd,
                });
            }
        }
    }
    None
}

/// Greedy path follower: per waypoint, rotate in 30° steps until the heading
/// is within 15° of the bearing, then advance in 0.25 m steps until within
/// one step of the waypoint center; ends with `Stop`.
pub fn path_to_actions(grid: &OccupancyGrid, path: &[(u32, u32)], pose: &AgentPose) -> Vec<Action> {
    assert!(!path.is_empty(), "path must be non-empty");
    assert_eq!(
        grid.world_to_cell(pose.x, pose.y),
        Some(path[0]),
        "path must start at the pose's cell"
    );
    let mut actions = Vec::new();
    let (mut x, mut y, mut yaw) = (pose.x, pose.y, pose.yaw);
    for &(r, c) in path {
        let (wx, wy) = grid.cell_center(r, c);
        loop {
            let dist = ((wx - x).powi(2) + (wy - y).powi(2)).sqrt();
            if dist < FORWARD_STEP_M - 1e-9 {
                break;
            }
            let bearing = (wy - y).atan2(wx - x);
            let diff = normalize_angle(bearing - yaw);
            if diff.abs() > ALIGN_TOL_RAD + 1e-12 {
                if diff > 0.0 {
                    yaw = normalize_angle(yaw + TURN_STEP_RAD);
                    actions.push(Action::TurnLeft);
                } else {
                    yaw = normalize_angle(yaw - TURN_STEP_RAD);
                    actions.push(Action::TurnRight);
                }
            } else {
                x += FORWARD_STEP_M * yaw.cos();
                y += FORWARD_STEP_M * yaw.sin();
                actions.push(Action::Forward);
            }
        }
    }
    actions.push(Action::Stop);
    actions
}

/// Dilates occupied cells by `cells` in Chebyshev distance, leaving other
/// states untouched. Planning on the inflated grid keeps paths clear of
/// walls so a discretized follower cannot clip corners.
pub fn inflate_obstacles(grid: &OccupancyGrid, cells: u32) -> OccupancyGrid {
    let mut out = grid.clone();
    if cells == 0 {
        return out;
    }
    let k = cells as i64;
    for r in 0..grid.height {
        for c in 0..grid.width {
            if grid.get(r, c) != CellState::Occupied {
                continue;
            }
            for dr in -k..=k {
                for dc in -k..=k {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if grid.in_bounds(nr, nc) {
                        out.set(nr as u32, nc as u32, CellState::Occupied);
                    }
                }
            }
        }
    }
    out
}

/// All free cells with at least one unknown 4-neighbor, in row-major order.
pub fn find_frontiers(grid: &OccupancyGrid) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for r in 0..grid.height {
        for c in 0..grid.width {
            if grid.get(r, c) != CellState::Free {
                continue;
            }
            let unknown_neighbor = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dr, dc)| {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                grid.in_bounds(nr, nc) && grid.get(nr as u32, nc as u32) == CellState::Unknown
            });
            if unknown_neighbor {
                out.push((r, c));
            }
        }
    }
    out
}

/// Nearest frontier by Euclidean cell distance, ties broken lexicographically
/// by (row, col).
pub fn select_nearest(frontiers: &[(u32, u32)], from: (u32, u32)) -> Option<(u32, u32)> {
    frontiers
        .iter()
        .copied()
        .min_by_key(|&(r, c)| {
            let dr = (r as i64 - from.0 as i64) as i128;
            let dc = (c as i64 - from.1 as i64) as i128;
            (dr * dr + dc * dc, r, c)
        })
}

/// Maximum frontier visits: half the traversable area, rounded up.
/// Panics when the grid has no free cell (contract violation).
pub fn exploration_budget(grid: &OccupancyGrid) -> u32 {
    let free = grid.count(CellState::Free);
    assert!(free >= 1, "exploration budget requires at least one free cell");
    ((free + 1) / 2) as u32
}
