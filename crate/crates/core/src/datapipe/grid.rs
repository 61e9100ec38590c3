//! Occupancy grids over 2D projections of end-effector trajectories.
//!
//! A trajectory is projected onto one of the coordinate planes and rasterized
//! into a boolean grid. Consecutive frames are connected with a grid line
//! traversal so sparse temporal sampling does not fragment the footprint.

use super::{DatapipeError, Episode};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub fn project(&self, v: Vec3) -> (f64, f64) {
        match self {
            Plane::Xy => (v.x, v.y),
            Plane::Xz => (v.x, v.z),
            Plane::Yz => (v.y, v.z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    fn position(&self, frame: &crate::geometry::RobotState) -> Vec3 {
        match self {
            Arm::Left => frame.left.position,
            Arm::Right => frame.right.position,
        }
    }
}

/// Grid extent with the origin snapped to cell-size multiples, so grids built
/// from different episodes over the same bounds align cell-for-cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub min_u: f64,
    pub min_v: f64,
    pub cols: usize,
    pub rows: usize,
    pub cell_size: f64,
}

impl GridBounds {
    pub fn from_points(points: impl Iterator<Item = (f64, f64)>, cell_size: f64) -> Self {
        let (mut min_u, mut min_v) = (f64::INFINITY, f64::INFINITY);
        let (mut max_u, mut max_v) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (u, v) in points {
            min_u = min_u.min(u);
            min_v = min_v.min(v);
            max_u = max_u.max(u);
            max_v = max_v.max(v);
        }
        let snap = |x: f64| (x / cell_size).floor() * cell_size;
        let (ou, ov) = (snap(min_u), snap(min_v));
        let cells = |lo: f64, hi: f64| ((hi - lo) / cell_size).floor() as usize + 1;
        Self {
            min_u: ou,
            min_v: ov,
            cols: cells(ou, max_u),
            rows: cells(ov, max_v),
            cell_size,
        }
    }

    pub fn of_episode(ep: &Episode, arm: Arm, plane: Plane, cell_size: f64) -> Self {
        Self::from_points(
            ep.frames.iter().map(|f| plane.project(arm.position(f))),
            cell_size,
        )
    }

    pub fn union(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cell_size, other.cell_size);
        let min_u = self.min_u.min(other.min_u);
        let min_v = self.min_v.min(other.min_v);
        let max_col = |b: &Self, min: f64| {
            ((b.min_u - min) / b.cell_size).round() as usize + b.cols
        };
        let max_row = |b: &Self, min: f64| {
            ((b.min_v - min) / b.cell_size).round() as usize + b.rows
        };
        Self {
            min_u,
            min_v,
            cols: max_col(self, min_u).max(max_col(other, min_u)),
            rows: max_row(self, min_v).max(max_row(other, min_v)),
            cell_size: self.cell_size,
        }
    }
}

/// Boolean occupancy matrix over a plane projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub plane: Plane,
    pub cell_size: f64,
    /// World-space origin of cell (0, 0); the out-of-plane component is zero.
    pub origin: Vec3,
    pub cols: usize,
    pub rows: usize,
    pub occupied: Vec<bool>,
    pub n_occupied: usize,
}

impl OccupancyGrid {
    fn new(plane: Plane, bounds: &GridBounds) -> Self {
        let origin = match plane {
            Plane::Xy => Vec3::new(bounds.min_u, bounds.min_v, 0.0),
            Plane::Xz => Vec3::new(bounds.min_u, 0.0, bounds.min_v),
            Plane::Yz => Vec3::new(0.0, bounds.min_u, bounds.min_v),
        };
        Self {
            plane,
            cell_size: bounds.cell_size,
            origin,
            cols: bounds.cols,
            rows: bounds.rows,
            occupied: vec![false; bounds.cols * bounds.rows],
            n_occupied: 0,
        }
    }

    fn mark(&mut self, col: usize, row: usize) {
        let idx = row * self.cols + col;
        if !self.occupied[idx] {
            self.occupied[idx] = true;
            self.n_occupied += 1;
        }
    }

    fn cell_of(&self, bounds: &GridBounds, u: f64, v: f64) -> (usize, usize) {
        let col = ((u - bounds.min_u) / self.cell_size).floor() as isize;
        let row = ((v - bounds.min_v) / self.cell_size).floor() as isize;
        (
            col.clamp(0, self.cols as isize - 1) as usize,
            row.clamp(0, self.rows as isize - 1) as usize,
        )
    }
}

/// Rasterize one arm's trajectory with bounds derived from the episode itself.
pub fn rasterize(
    ep: &Episode,
    arm: Arm,
    plane: Plane,
    cell_size: f64,
) -> Result<OccupancyGrid, DatapipeError> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(DatapipeError::InvalidParam(format!(
            "cell_size must be positive, got {cell_size}"
        )));
    }
    ep.validate()?;
    let bounds = GridBounds::of_episode(ep, arm, plane, cell_size);
    Ok(rasterize_with_bounds(ep, arm, plane, &bounds))
}

/// Rasterize against caller-supplied bounds (the de-duplication path, where
/// all grids of a comparison group share one union bounding box).
pub fn rasterize_with_bounds(
    ep: &Episode,
    arm: Arm,
    plane: Plane,
    bounds: &GridBounds,
) -> OccupancyGrid {
    let mut grid = OccupancyGrid::new(plane, bounds);
    let points: Vec<(f64, f64)> = ep
        .frames
        .iter()
        .map(|f| plane.project(arm.position(f)))
        .collect();
    let (c0, r0) = grid.cell_of(bounds, points[0].0, points[0].1);
    grid.mark(c0, r0);
    for pair in points.windows(2) {
        traverse_segment(&mut grid, bounds, pair[0], pair[1]);
    }
    grid
}

/// Amanatides-Woo style traversal marking every cell the segment crosses.
fn traverse_segment(grid: &mut OccupancyGrid, bounds: &GridBounds, a: (f64, f64), b: (f64, f64)) {
    let (mut col, mut row) = grid.cell_of(bounds, a.0, a.1);
    let (end_col, end_row) = grid.cell_of(bounds, b.0, b.1);
    grid.mark(col, row);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let step_c: isize = if dx > 0.0 { 1 } else { -1 };
    let step_r: isize = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |cell: usize, step: isize, min: f64| {
        let edge = if step > 0 { cell as f64 + 1.0 } else { cell as f64 };
        min + edge * grid.cell_size
    };
    let mut t_max_c = if dx == 0.0 {
        f64::INFINITY
    } else {
        (next_boundary(col, step_c, bounds.min_u) - a.0) / dx
    };
    let mut t_max_r = if dy == 0.0 {
        f64::INFINITY
    } else {
        (next_boundary(row, step_r, bounds.min_v) - a.1) / dy
    };
    let t_delta_c = if dx == 0.0 { f64::INFINITY } else { (grid.cell_size / dx).abs() };
    let t_delta_r = if dy == 0.0 { f64::INFINITY } else { (grid.cell_size / dy).abs() };

    let mut guard = grid.cols + grid.rows + 4;
    while (col, row) != (end_col, end_row) && guard > 0 {
        guard -= 1;
        if t_max_c <= t_max_r {
            let next = col as isize + step_c;
            if next < 0 || next >= grid.cols as isize {
                break;
            }
            col = next as usize;
            t_max_c += t_delta_c;
        } else {
            let next = row as isize + step_r;
            if next < 0 || next >= grid.rows as isize {
                break;
            }
            row = next as usize;
            t_max_r += t_delta_r;
        }
        grid.mark(col, row);
    }
    grid.mark(end_col, end_row);
}

/// Normalized occupancy difference: XOR cell count over the larger footprint.
/// Zero for identical grids, at most 2 for disjoint ones. Two empty grids
/// compare as 0.
pub fn grid_distance(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, DatapipeError> {
    if a.plane != b.plane {
        return Err(DatapipeError::GridMismatch("different planes".into()));
    }
    if a.cell_size != b.cell_size {
        return Err(DatapipeError::GridMismatch("different cell sizes".into()));
    }
    if a.origin != b.origin || a.cols != b.cols || a.rows != b.rows {
        return Err(DatapipeError::GridMismatch(
            "grids must share an aligned bounding box".into(),
        ));
    }
    if a.n_occupied == 0 && b.n_occupied == 0 {
        return Ok(0.0);
    }
    let xor = a
        .occupied
        .iter()
        .zip(&b.occupied)
        .filter(|(x, y)| x != y)
        .count();
    Ok(xor as f64 / a.n_occupied.max(b.n_occupied) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, RobotState, Rotation};
    use crate::synth::sample_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn line_episode(points: &[(f64, f64)]) -> Episode {
        let frames = points
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                let pose = Pose::new(crate::geometry::Vec3::new(x, y, 0.0), Rotation::IDENTITY);
                RobotState::new(pose, pose, pose, 0.5, 0.5, k as f64 / 30.0)
            })
            .collect();
        Episode {
            id: "line".into(),
            instruction: "i".into(),
            subtask: "s".into(),
            mirror_flag: false,
            frames,
        }
    }

    /// Dense-sampling oracle: walk the polyline in tiny steps and collect the
    /// visited cells.
    fn sampled_cells(ep: &Episode, arm: Arm, plane: Plane, cell: f64) -> std::collections::BTreeSet<(usize, usize)> {
        let bounds = GridBounds::of_episode(ep, arm, plane, cell);
        let grid = OccupancyGrid::new(plane, &bounds);
        let pts: Vec<(f64, f64)> = ep
            .frames
            .iter()
            .map(|f| {
                plane.project(match arm {
                    Arm::Left => f.left.position,
                    Arm::Right => f.right.position,
                })
            })
            .collect();
        let mut cells = std::collections::BTreeSet::new();
        for pair in pts.windows(2) {
            let steps = 2000;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let u = pair[0].0 + (pair[1].0 - pair[0].0) * t;
                let v = pair[0].1 + (pair[1].1 - pair[0].1) * t;
                cells.insert(grid.cell_of(&bounds, u, v));
            }
        }
        if pts.len() == 1 {
            cells.insert(grid.cell_of(&bounds, pts[0].0, pts[0].1));
        }
        cells
    }

    #[test]
    fn stationary_frame_occupies_one_cell() {
        let ep = line_episode(&[(0.32, 0.17)]);
        let grid = rasterize(&ep, Arm::Left, Plane::Xy, 0.05).unwrap();
        assert_eq!(grid.n_occupied, 1);
    }

    #[test]
    fn axis_aligned_segment_cell_count() {
        // length 0.4 at cell 0.1: cells 0..=4 on one row
        let ep = line_episode(&[(0.0, 0.025), (0.4, 0.025)]);
        let grid = rasterize(&ep, Arm::Left, Plane::Xy, 0.1).unwrap();
        assert_eq!(grid.n_occupied, 5);
        assert_eq!(grid.rows, 1);
    }

    #[test]
    fn traversal_matches_dense_sampling() {
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        for _ in 0..30 {
            let pts: Vec<(f64, f64)> = (0..6)
                .map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
                .collect();
            let ep = line_episode(&pts);
            let grid = rasterize(&ep, Arm::Right, Plane::Xy, 0.05).unwrap();
            let expected = sampled_cells(&ep, Arm::Right, Plane::Xy, 0.05);
            let mut got = std::collections::BTreeSet::new();
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    if grid.occupied[r * grid.cols + c] {
                        got.insert((c, r));
                    }
                }
            }
            // the DDA may touch a corner cell the sampler steps over, but
            // never the other way around
            assert!(got.is_superset(&expected), "traversal must cover the sampled path");
            assert!(got.len() <= expected.len() + 2 * pts.len());
        }
    }

    #[test]
    fn identical_episodes_identical_grids() {
        let eps = sample_dataset(5, 2);
        let a = rasterize(&eps[0], Arm::Left, Plane::Xz, 0.05).unwrap();
        let b = rasterize(&eps[0], Arm::Left, Plane::Xz, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(grid_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn grid_distance_disjoint_equal_footprints() {
        let bounds = GridBounds { min_u: 0.0, min_v: 0.0, cols: 4, rows: 2, cell_size: 0.1 };
        let mut a = OccupancyGrid::new(Plane::Xy, &bounds);
        let mut b = OccupancyGrid::new(Plane::Xy, &bounds);
        for c in 0..3 {
            a.mark(c, 0);
            b.mark(c, 1);
        }
        assert_eq!(grid_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn grid_distance_partial_overlap() {
        // 4 cells each, 3 shared: xor = 2, max(n) = 4
        let bounds = GridBounds { min_u: 0.0, min_v: 0.0, cols: 8, rows: 1, cell_size: 0.1 };
        let mut a = OccupancyGrid::new(Plane::Xy, &bounds);
        let mut b = OccupancyGrid::new(Plane::Xy, &bounds);
        for c in 0..4 {
            a.mark(c, 0);
        }
        for c in 1..5 {
            b.mark(c, 0);
        }
        assert_eq!(grid_distance(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn grid_distance_empty_grids() {
        let bounds = GridBounds { min_u: 0.0, min_v: 0.0, cols: 2, rows: 2, cell_size: 0.1 };
        let a = OccupancyGrid::new(Plane::Xy, &bounds);
        let b = OccupancyGrid::new(Plane::Xy, &bounds);
        assert_eq!(grid_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn grid_distance_symmetry_and_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(73);
        let bounds = GridBounds { min_u: 0.0, min_v: 0.0, cols: 10, rows: 10, cell_size: 0.1 };
        for _ in 0..100 {
            let mut a = OccupancyGrid::new(Plane::Yz, &bounds);
            let mut b = OccupancyGrid::new(Plane::Yz, &bounds);
            for _ in 0..rng.gen_range(1..30) {
                a.mark(rng.gen_range(0..10), rng.gen_range(0..10));
            }
            for _ in 0..rng.gen_range(1..30) {
                b.mark(rng.gen_range(0..10), rng.gen_range(0..10));
            }
            let d_ab = grid_distance(&a, &b).unwrap();
            let d_ba = grid_distance(&b, &a).unwrap();
            assert_eq!(d_ab, d_ba);
            assert!((0.0..=2.0).contains(&d_ab));
        }
    }

    #[test]
    fn grid_distance_rejects_mismatched_grids() {
        let b1 = GridBounds { min_u: 0.0, min_v: 0.0, cols: 2, rows: 2, cell_size: 0.1 };
        let b2 = GridBounds { min_u: 0.0, min_v: 0.0, cols: 3, rows: 2, cell_size: 0.1 };
        let a = OccupancyGrid::new(Plane::Xy, &b1);
        let b = OccupancyGrid::new(Plane::Xy, &b2);
        assert!(grid_distance(&a, &b).is_err());
        let c = OccupancyGrid::new(Plane::Xz, &b1);
        assert!(grid_distance(&a, &c).is_err());
    }
}
