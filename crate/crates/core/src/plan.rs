//! Occupancy-grid A* over the navigable floor of a scene.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::scene_io::{Scene, Trajectory};
use crate::spatial::KdTree;
use crate::Point;

/// Free/blocked cells on the XZ plane. Cell `(ix, iz)` covers
/// `[origin + i * resolution, origin + (i + 1) * resolution)` on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub nz: usize,
    cells: Vec<bool>,
    pub height_y: f64,
}

pub type Cell = (usize, usize);

const MOVES: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

impl OccupancyGrid {
    /// Grid from an explicit free mask, `cells[iz * nx + ix]`.
    pub fn from_cells(origin: [f64; 2], resolution: f64, nx: usize, nz: usize, cells: Vec<bool>, height_y: f64) -> Self {
        assert_eq!(cells.len(), nx * nz);
        OccupancyGrid {
            origin,
            resolution,
            nx,
            nz,
            cells,
            height_y,
        }
    }

    pub fn is_free(&self, (ix, iz): Cell) -> bool {
        self.cells[iz * self.nx + ix]
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn center(&self, (ix, iz): Cell) -> Point {
        Point::new(
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.height_y,
            self.origin[1] + (iz as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: &Point) -> Option<Cell> {
        let fx = ((p.x - self.origin[0]) / self.resolution).floor();
        let fz = ((p.z - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fz < 0.0 || fx >= self.nx as f64 || fz >= self.nz as f64 {
            return None;
        }
        Some((fx as usize, fz as usize))
    }

    /// Legal 8-connected moves: diagonal steps need both orthogonal
    /// neighbours free.
    fn neighbors(&self, (ix, iz): Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
        MOVES.iter().filter_map(move |&(dx, dz)| {
            let nx = ix as i64 + dx;
            let nz = iz as i64 + dz;
            if nx < 0 || nz < 0 || nx >= self.nx as i64 || nz >= self.nz as i64 {
                return None;
            }
            let next = (nx as usize, nz as usize);
            if !self.is_free(next) {
                return None;
            }
            let diagonal = dx != 0 && dz != 0;
            if diagonal && !(self.is_free((nx as usize, iz)) && self.is_free((ix, nz as usize))) {
                return None;
            }
            Some((next, diagonal))
        })
    }

    /// Nearest free cell centre within `radius` of `p` (XZ), searched ring by
    /// ring outward from the containing cell. Ties go to the smaller `(iz, ix)`.
    pub fn snap(&self, p: &Point, radius: f64) -> Result<Cell> {
        let fx = ((p.x - self.origin[0]) / self.resolution).floor() as i64;
        let fz = ((p.z - self.origin[1]) / self.resolution).floor() as i64;
        let max_ring = (radius / self.resolution).ceil() as i64 + 1;
        let mut best: Option<(f64, Cell)> = None;
        for ring in 0..=max_ring {
            if let Some((d, _)) = best {
                // every cell of this ring is at least (ring - 1) cells away
                if (ring - 1) as f64 * self.resolution > d {
                    break;
                }
            }
            for dz in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dz.abs()) != ring {
                        continue;
                    }
                    let (cx, cz) = (fx + dx, fz + dz);
                    if cx < 0 || cz < 0 || cx >= self.nx as i64 || cz >= self.nz as i64 {
                        continue;
                    }
                    let cell = (cx as usize, cz as usize);
                    if !self.is_free(cell) {
                        continue;
                    }
                    let c = self.center(cell);
                    let d = ((c.x - p.x).powi(2) + (c.z - p.z).powi(2)).sqrt();
                    if d > radius {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bc)) => d < bd || (d == bd && (cell.1, cell.0) < (bc.1, bc.0)),
                    };
                    if better {
                        best = Some((d, cell));
                    }
                }
            }
        }
        best.map(|b| b.1).ok_or(Error::SnapFailed {
            x: p.x,
            z: p.z,
            radius,
        })
    }

    /// Size of the free component containing `start`.
    pub fn component_size(&self, start: Cell) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * self.nx + start.0] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            for (n, _) in self.neighbors(c) {
                let k = n.1 * self.nx + n.0;
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(n);
                }
            }
        }
        count
    }
}

/// Rasterizes the navigable points of `scene`. A cell is free when it holds a
/// navigable point and no object point lies within `inflation` (XZ) of its
/// centre.
pub fn build_grid(scene: &Scene, resolution: f64, inflation: f64) -> Result<OccupancyGrid> {
    if resolution.is_nan() || resolution <= 0.0 || inflation.is_nan() || inflation < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "grid resolution {resolution} / inflation {inflation}"
        )));
    }
    let nav: Vec<Point> = scene.open_space_indices().iter().map(|&i| *scene.point(i)).collect();
    if nav.is_empty() {
        return Err(Error::NoNavigablePoints);
    }
    let objects: Vec<Point> = scene.object_indices().iter().map(|&i| *scene.point(i)).collect();
    let (lo, hi) = crate::scene_io::bounds_of(&nav);
    // half-cell margin: points on a grid of the same spacing land on centres
    let lo = Point::new(lo.x - 0.5 * resolution, lo.y, lo.z - 0.5 * resolution);
    let nx = ((hi.x - lo.x) / resolution).floor() as usize + 1;
    let nz = ((hi.z - lo.z) / resolution).floor() as usize + 1;
    let mut heights: Vec<f64> = nav.iter().map(|p| p.y).collect();
    heights.sort_by(f64::total_cmp);
    let height_y = heights[heights.len() / 2];
    let mut grid = OccupancyGrid::from_cells([lo.x, lo.z], resolution, nx, nz, vec![false; nx * nz], height_y);
    let mut occupied = vec![false; nx * nz];
    for p in &nav {
        let ix = (((p.x - lo.x) / resolution).floor() as usize).min(nx - 1);
        let iz = (((p.z - lo.z) / resolution).floor() as usize).min(nz - 1);
        occupied[iz * nx + ix] = true;
    }
    let tree = KdTree::planar(&objects);
    for (k, _) in occupied.iter().enumerate().filter(|x| *x.1) {
        let c = grid.center((k % nx, k / nx));
        let blocked = tree.nearest_xz(&c).is_some_and(|(_, d2)| d2.sqrt() <= inflation);
        grid.cells[k] = !blocked;
    }
    if grid.free_count() == 0 {
        return Err(Error::NoFreeCells);
    }
    Ok(grid)
}

/// Path cost kept as exact move counts so equal-length paths compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MoveCount {
    pub straight: u64,
    pub diagonal: u64,
}

impl MoveCount {
    /// Length in cell units.
    pub fn length(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            MoveCount {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            MoveCount {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub moves: MoveCount,
}

impl GridPath {
    /// Length in metres.
    pub fn cost(&self, resolution: f64) -> f64 {
        self.moves.length() * resolution
    }
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    bend: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.bend.total_cmp(&self.bend))
            .then(other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest 8-connected path between two free cells. Among equal-length paths
/// the one staying closest to the straight start-goal line is preferred.
pub fn astar_cells(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<GridPath> {
    let n = grid.nx * grid.nz;
    let key = |c: Cell| c.1 * grid.nx + c.0;
    let (sx, sz) = (start.0 as f64, start.1 as f64);
    let (gx, gz) = (goal.0 as f64, goal.1 as f64);
    let line_len = ((gx - sx).powi(2) + (gz - sz).powi(2)).sqrt();
    let deviation = |c: Cell| {
        if line_len == 0.0 {
            return 0.0;
        }
        ((c.0 as f64 - sx) * (gz - sz) - (c.1 as f64 - sz) * (gx - sx)).abs() / line_len
    };
    let h = |c: Cell| ((c.0 as f64 - gx).powi(2) + (c.1 as f64 - gz).powi(2)).sqrt();

    let mut g: Vec<Option<(MoveCount, f64)>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    g[key(start)] = Some((MoveCount::default(), 0.0));
    heap.push(Entry {
        f: h(start),
        bend: 0.0,
        cell: key(start),
    });
    while let Some(Entry { f, bend, cell }) = heap.pop() {
        let (moves, dev) = g[cell].unwrap();
        if f != moves.length() + h((cell % grid.nx, cell / grid.nx)) || bend != dev {
            continue;
        }
        if cell == key(goal) {
            let mut cells = vec![goal];
            let mut k = cell;
            while parent[k] != usize::MAX {
                k = parent[k];
                cells.push((k % grid.nx, k / grid.nx));
            }
            cells.reverse();
            return Ok(GridPath { cells, moves });
        }
        let here = (cell % grid.nx, cell / grid.nx);
        for (next, diagonal) in grid.neighbors(here) {
            let nm = moves.step(diagonal);
            let nd = dev + deviation(next);
            let k = key(next);
            let better = match g[k] {
                None => true,
                Some((om, od)) => {
                    let (a, b) = (nm.length(), om.length());
                    a < b || (a == b && nd < od)
                }
            };
            if better {
                g[k] = Some((nm, nd));
                parent[k] = cell;
                heap.push(Entry {
                    f: nm.length() + h(next),
                    bend: nd,
                    cell: k,
                });
            }
        }
    }
    Err(Error::NoPath {
        start_component: grid.component_size(start),
        goal_component: grid.component_size(goal),
    })
}

/// Plans between two 3D positions: both are snapped to free cells and the
/// result is the list of cell centres at `height_y`.
pub fn astar(grid: &OccupancyGrid, start: &Point, goal: &Point, snap_radius: f64) -> Result<Vec<Point>> {
    let s = grid.snap(start, snap_radius)?;
    let g = grid.snap(goal, snap_radius)?;
    Ok(astar_cells(grid, s, g)?.cells.into_iter().map(|c| grid.center(c)).collect())
}

/// Chains A* segments through `waypoints` in order. Joints are shared between
/// consecutive segments and recorded as waypoint indices; waypoints that snap
/// to the same cell collapse into one.
pub fn plan_through(grid: &OccupancyGrid, waypoints: &[Point], snap_radius: f64) -> Result<Trajectory> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidTrajectory(format!(
            "planning needs >= 2 waypoints, got {}",
            waypoints.len()
        )));
    }
    let cells = waypoints
        .iter()
        .enumerate()
        .map(|(i, w)| {
            grid.snap(w, snap_radius).map_err(|e| Error::Segment {
                from: i.saturating_sub(1),
                to: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = vec![grid.center(cells[0])];
    let mut joints = vec![0];
    for i in 0..cells.len() - 1 {
        let seg = astar_cells(grid, cells[i], cells[i + 1]).map_err(|e| Error::Segment {
            from: i,
            to: i + 1,
            source: Box::new(e),
        })?;
        points.extend(seg.cells[1..].iter().map(|&c| grid.center(c)));
        joints.push(points.len() - 1);
    }
    joints.dedup();
    Trajectory::from_points_dedup(points, Some(joints))
}
