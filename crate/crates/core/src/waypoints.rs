//! Waypoint extraction: decompose a trajectory into the shortest subsequence
//! of frames whose interpolation reconstructs every channel within an error
//! budget.
//!
//! A single shared index set serves all channels (torso, left EE, right EE,
//! both grippers): a segment between two candidate waypoints is admissible
//! only if every channel stays within its threshold, so a waypoint triggered
//! by any one channel samples all of them. Minimality is guaranteed by a
//! shortest-path dynamic program over admissible segments.

use crate::geometry::{
    point_to_line_distance, rotation_distance, slerp, Pose, RobotState,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaypointError {
    #[error("thresholds must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("trajectory has {len} frames, need at least 2")]
    TooShort { len: usize },
    #[error("segment indices ({i}, {j}) invalid for {len} frames")]
    BadSegment { i: usize, j: usize, len: usize },
    #[error("waypoint indices invalid: {0}")]
    BadIndexSet(String),
    #[error("expected {expected} waypoint poses, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Reconstruction-error budget. Position error uses point-to-line distance,
/// rotation error uses geodesic distance after slerp interpolation, and
/// gripper error uses deviation from linear interpolation so open/close
/// events are never interpolated away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointThresholds {
    /// Position budget in meters.
    pub pos_eps: f64,
    /// Rotation budget in radians.
    pub rot_eps: f64,
    /// Gripper-level budget (unitless, gripper range is [0, 1]).
    pub grip_eps: f64,
}

impl Default for WaypointThresholds {
    fn default() -> Self {
        Self { pos_eps: 0.01, rot_eps: 0.05, grip_eps: 0.1 }
    }
}

impl WaypointThresholds {
    pub fn validate(&self) -> Result<(), WaypointError> {
        for v in [self.pos_eps, self.rot_eps, self.grip_eps] {
            if !(v.is_finite() && v > 0.0) {
                return Err(WaypointError::InvalidThreshold(v));
            }
        }
        Ok(())
    }
}

/// Sorted frame indices forming the waypoint subsequence. Always contains the
/// first and last frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaypointIndexSet {
    indices: Vec<usize>,
}

impl WaypointIndexSet {
    pub fn new(indices: Vec<usize>, traj_len: usize) -> Result<Self, WaypointError> {
        if indices.first() != Some(&0) {
            return Err(WaypointError::BadIndexSet("first index must be 0".into()));
        }
        if indices.last() != Some(&(traj_len - 1)) {
            return Err(WaypointError::BadIndexSet(format!(
                "last index must be {}",
                traj_len - 1
            )));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(WaypointError::BadIndexSet("indices must strictly increase".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Consecutive waypoint index pairs.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.indices.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Maximum interpolation error of the open interval (i, j) for one pose
/// channel: position against the chord through the endpoints, rotation
/// against the slerp path.
pub fn channel_error(poses: &[Pose], i: usize, j: usize) -> Result<(f64, f64), WaypointError> {
    if i >= j || j >= poses.len() {
        return Err(WaypointError::BadSegment { i, j, len: poses.len() });
    }
    let mut pos_err: f64 = 0.0;
    let mut rot_err: f64 = 0.0;
    for k in (i + 1)..j {
        let t = (k - i) as f64 / (j - i) as f64;
        pos_err = pos_err.max(point_to_line_distance(
            poses[k].position,
            poses[i].position,
            poses[j].position,
        ));
        let target = slerp(poses[i].orientation, poses[j].orientation, t)
            .expect("t within (0, 1) by construction");
        rot_err = rot_err.max(rotation_distance(poses[k].orientation, target));
    }
    Ok((pos_err, rot_err))
}

fn pose_of(state: &RobotState, channel: usize) -> &Pose {
    match channel {
        0 => &state.torso,
        1 => &state.left,
        _ => &state.right,
    }
}

fn gripper_of(state: &RobotState, channel: usize) -> f64 {
    if channel == 0 {
        state.left_gripper
    } else {
        state.right_gripper
    }
}

/// Check a candidate segment against every channel, bailing out as soon as a
/// threshold is exceeded. Returns the summed per-channel maxima for
/// tie-breaking when admissible.
fn segment_within(
    frames: &[RobotState],
    i: usize,
    j: usize,
    th: &WaypointThresholds,
) -> Option<f64> {
    let mut total = 0.0;
    for ch in 0..3 {
        let (mut pos_err, mut rot_err) = (0.0f64, 0.0f64);
        let (pi, pj) = (pose_of(&frames[i], ch), pose_of(&frames[j], ch));
        for k in (i + 1)..j {
            let pk = pose_of(&frames[k], ch);
            let d = point_to_line_distance(pk.position, pi.position, pj.position);
            if d > th.pos_eps {
                return None;
            }
            pos_err = pos_err.max(d);
            let t = (k - i) as f64 / (j - i) as f64;
            let target =
                slerp(pi.orientation, pj.orientation, t).expect("t within (0, 1)");
            let a = rotation_distance(pk.orientation, target);
            if a > th.rot_eps {
                return None;
            }
            rot_err = rot_err.max(a);
        }
        total += pos_err + rot_err;
    }
    for ch in 0..2 {
        let mut grip_err = 0.0f64;
        let (gi, gj) = (gripper_of(&frames[i], ch), gripper_of(&frames[j], ch));
        for k in (i + 1)..j {
            let t = (k - i) as f64 / (j - i) as f64;
            let e = (gripper_of(&frames[k], ch) - (gi + (gj - gi) * t)).abs();
            if e > th.grip_eps {
                return None;
            }
            grip_err = grip_err.max(e);
        }
        total += grip_err;
    }
    Some(total)
}

/// Extract the minimal waypoint index set for a trajectory.
///
/// Dynamic program over frame pairs: `dp[j]` holds the fewest waypoints for
/// the prefix ending at `j`, where a transition `i -> j` is allowed only if
/// [`segment_within`] passes for all channels. Ties on count are broken by
/// the smaller sum of segment maximum errors, then by the earlier
/// predecessor, so results are deterministic.
pub fn extract_waypoints(
    frames: &[RobotState],
    th: &WaypointThresholds,
) -> Result<WaypointIndexSet, WaypointError> {
    th.validate()?;
    let n = frames.len();
    if n < 2 {
        return Err(WaypointError::TooShort { len: n });
    }

    // (count, error sum, predecessor)
    let mut dp: Vec<(usize, f64, usize)> = vec![(usize::MAX, f64::INFINITY, usize::MAX); n];
    dp[0] = (1, 0.0, usize::MAX);
    for j in 1..n {
        for i in 0..j {
            if let Some(err) = segment_within(frames, i, j, th) {
                let count = dp[i].0 + 1;
                let err_sum = dp[i].1 + err;
                if count < dp[j].0 || (count == dp[j].0 && err_sum < dp[j].1) {
                    dp[j] = (count, err_sum, i);
                }
            }
        }
    }

    let mut indices = Vec::with_capacity(dp[n - 1].0);
    let mut cur = n - 1;
    while cur != usize::MAX {
        indices.push(cur);
        cur = dp[cur].2;
    }
    indices.reverse();
    WaypointIndexSet::new(indices, n)
}

/// Linear/slerp interpolation of waypoint poses back to a full pose sequence.
/// Exact at the waypoints themselves.
pub fn reconstruct(
    traj_len: usize,
    wps: &WaypointIndexSet,
    poses_at_wps: &[Pose],
) -> Result<Vec<Pose>, WaypointError> {
    if traj_len < 2 {
        return Err(WaypointError::TooShort { len: traj_len });
    }
    if wps.indices.first() != Some(&0) || wps.indices.last() != Some(&(traj_len - 1)) {
        return Err(WaypointError::BadIndexSet(format!(
            "index set does not span a trajectory of {traj_len} frames"
        )));
    }
    if poses_at_wps.len() != wps.len() {
        return Err(WaypointError::LengthMismatch {
            expected: wps.len(),
            got: poses_at_wps.len(),
        });
    }

    let mut out = Vec::with_capacity(traj_len);
    for (s, (i, j)) in wps.segments().enumerate() {
        let (pa, pb) = (&poses_at_wps[s], &poses_at_wps[s + 1]);
        let upper = if s + 2 == wps.len() { j + 1 } else { j };
        for k in i..upper {
            let t = (k - i) as f64 / (j - i) as f64;
            out.push(Pose::new(
                pa.position.lerp(pb.position, t),
                slerp(pa.orientation, pb.orientation, t).expect("t within [0, 1]"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::synth::{random_state, random_walk_episode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn straight_line_states(n: usize) -> Vec<RobotState> {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let start = random_state(&mut rng, 0.0);
        let dir = Vec3::new(0.01, 0.002, -0.004);
        (0..n)
            .map(|k| {
                let mut s = start;
                let offset = dir.scale(k as f64);
                s.torso.position = s.torso.position + offset;
                s.left.position = s.left.position + offset;
                s.right.position = s.right.position + offset;
                s.timestamp = k as f64 / 30.0;
                s
            })
            .collect()
    }

    /// Independent layered breadth-first search for the minimum subsequence
    /// size, with segment admissibility recomputed from scratch.
    fn brute_force_min_waypoints(frames: &[RobotState], th: &WaypointThresholds) -> usize {
        let n = frames.len();
        let mut admissible = vec![vec![false; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                admissible[i][j] = segment_admissible_oracle(frames, i, j, th);
            }
        }
        // layer s = frames reachable from 0 using s admissible hops
        let mut reachable = vec![false; n];
        reachable[0] = true;
        for hops in 1..n {
            let mut next = vec![false; n];
            for i in 0..n {
                if reachable[i] {
                    for j in (i + 1)..n {
                        if admissible[i][j] {
                            next[j] = true;
                        }
                    }
                }
            }
            if next[n - 1] {
                return hops + 1;
            }
            reachable = next;
        }
        unreachable!("adjacent segments are always admissible");
    }

    fn segment_admissible_oracle(
        frames: &[RobotState],
        i: usize,
        j: usize,
        th: &WaypointThresholds,
    ) -> bool {
        for ch in 0..3 {
            let poses: Vec<Pose> = frames.iter().map(|f| *pose_of(f, ch)).collect();
            let (p, r) = channel_error(&poses, i, j).unwrap();
            if p > th.pos_eps || r > th.rot_eps {
                return false;
            }
        }
        for ch in 0..2 {
            let (gi, gj) = (gripper_of(&frames[i], ch), gripper_of(&frames[j], ch));
            for k in (i + 1)..j {
                let t = (k - i) as f64 / (j - i) as f64;
                if (gripper_of(&frames[k], ch) - (gi + (gj - gi) * t)).abs() > th.grip_eps {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn channel_error_zero_for_uniform_motion() {
        let mut poses = Vec::new();
        let axis = Vec3::new(0.0, 0.0, 1.0);
        for k in 0..10 {
            poses.push(Pose::new(
                Vec3::new(0.1 * k as f64, 0.0, 0.0),
                crate::geometry::Rotation::from_axis_angle(axis, 0.05 * k as f64),
            ));
        }
        let (p, r) = channel_error(&poses, 0, 9).unwrap();
        assert!(p < 1e-12);
        assert!(r < 1e-9);
    }

    #[test]
    fn channel_error_captures_outlier_height() {
        let mut poses: Vec<Pose> = (0..7)
            .map(|k| Pose::new(Vec3::new(k as f64 * 0.1, 0.0, 0.0), crate::geometry::Rotation::IDENTITY))
            .collect();
        poses[3].position.y = 0.25;
        let (p, _) = channel_error(&poses, 0, 6).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn channel_error_matches_per_frame_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let poses: Vec<Pose> = (0..12)
                .map(|_| crate::synth::random_pose(&mut rng, 0.3))
                .collect();
            let (p, r) = channel_error(&poses, 0, 11).unwrap();
            let mut exp_p: f64 = 0.0;
            let mut exp_r: f64 = 0.0;
            for k in 1..11 {
                let t = k as f64 / 11.0;
                exp_p = exp_p.max(point_to_line_distance(
                    poses[k].position,
                    poses[0].position,
                    poses[11].position,
                ));
                let target = slerp(poses[0].orientation, poses[11].orientation, t).unwrap();
                exp_r = exp_r.max(rotation_distance(poses[k].orientation, target));
            }
            assert_eq!(p, exp_p);
            assert_eq!(r, exp_r);
        }
    }

    #[test]
    fn channel_error_rejects_bad_segment() {
        let poses = vec![Pose::IDENTITY; 5];
        assert!(channel_error(&poses, 3, 3).is_err());
        assert!(channel_error(&poses, 4, 2).is_err());
        assert!(channel_error(&poses, 0, 5).is_err());
    }

    #[test]
    fn straight_line_needs_only_endpoints() {
        let frames = straight_line_states(20);
        let wps = extract_waypoints(&frames, &WaypointThresholds::default()).unwrap();
        assert_eq!(wps.indices(), &[0, 19]);
    }

    #[test]
    fn loose_thresholds_need_only_endpoints() {
        let ep = random_walk_episode("e", "", "", &mut ChaCha20Rng::seed_from_u64(9), 15, 0.01, 0.05);
        let th = WaypointThresholds { pos_eps: 1e9, rot_eps: 1e9, grip_eps: 1e9 };
        let wps = extract_waypoints(&ep.frames, &th).unwrap();
        assert_eq!(wps.indices(), &[0, 14]);
    }

    #[test]
    fn l_shaped_path_yields_corner_waypoint() {
        // 20 frames: straight along x, corner at frame 10, then straight
        // along y. The corner deviation far exceeds pos_eps.
        let mut frames = straight_line_states(20);
        for (k, f) in frames.iter_mut().enumerate() {
            let p = if k <= 10 {
                Vec3::new(0.02 * k as f64, 0.0, 0.0)
            } else {
                Vec3::new(0.2, 0.02 * (k - 10) as f64, 0.0)
            };
            f.torso.position = p;
            f.left.position = p;
            f.right.position = p;
            f.torso.orientation = crate::geometry::Rotation::IDENTITY;
            f.left.orientation = crate::geometry::Rotation::IDENTITY;
            f.right.orientation = crate::geometry::Rotation::IDENTITY;
            f.left_gripper = 0.5;
            f.right_gripper = 0.5;
        }
        let th = WaypointThresholds::default();
        let wps = extract_waypoints(&frames, &th).unwrap();
        assert_eq!(wps.indices(), &[0, 10, 19]);
        assert_eq!(brute_force_min_waypoints(&frames, &th), 3);
    }

    #[test]
    fn minimality_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for case in 0..40 {
            let n = rng.gen_range(5..=20);
            let ep = random_walk_episode(
                &format!("e{case}"),
                "",
                "",
                &mut rng,
                n,
                0.006,
                0.03,
            );
            let th = WaypointThresholds { pos_eps: 0.008, rot_eps: 0.04, grip_eps: 0.1 };
            let wps = extract_waypoints(&ep.frames, &th).unwrap();
            assert_eq!(wps.len(), brute_force_min_waypoints(&ep.frames, &th));
        }
    }

    #[test]
    fn loosening_thresholds_is_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        for _ in 0..20 {
            let ep = random_walk_episode("e", "", "", &mut rng, 18, 0.006, 0.03);
            let tight = WaypointThresholds { pos_eps: 0.005, rot_eps: 0.02, grip_eps: 0.05 };
            let loose = WaypointThresholds { pos_eps: 0.02, rot_eps: 0.08, grip_eps: 0.2 };
            let n_tight = extract_waypoints(&ep.frames, &tight).unwrap().len();
            let n_loose = extract_waypoints(&ep.frames, &loose).unwrap().len();
            assert!(n_loose <= n_tight);
        }
    }

    #[test]
    fn gripper_step_forces_waypoint() {
        let mut frames = straight_line_states(12);
        for (k, f) in frames.iter_mut().enumerate() {
            f.left_gripper = if k < 6 { 0.0 } else { 1.0 };
            f.right_gripper = 0.5;
        }
        let wps = extract_waypoints(&frames, &WaypointThresholds::default()).unwrap();
        // interpolating straight across the jump would err by ~0.5 mid-way
        assert!(wps.len() > 2, "gripper event must not be interpolated away");
    }

    #[test]
    fn too_short_rejected() {
        let frames = straight_line_states(1);
        assert!(matches!(
            extract_waypoints(&frames, &WaypointThresholds::default()),
            Err(WaypointError::TooShort { len: 1 })
        ));
    }

    #[test]
    fn reconstruct_identity_when_all_frames_are_waypoints() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let poses: Vec<Pose> = (0..8).map(|_| crate::synth::random_pose(&mut rng, 0.4)).collect();
        let wps = WaypointIndexSet::new((0..8).collect(), 8).unwrap();
        let rec = reconstruct(8, &wps, &poses).unwrap();
        for (a, b) in rec.iter().zip(&poses) {
            assert!((a.position - b.position).norm() < 1e-15);
            assert_eq!(a.orientation, b.orientation);
        }
    }

    #[test]
    fn reconstruct_midpoint_between_two_waypoints() {
        let a = Pose::new(Vec3::ZERO, crate::geometry::Rotation::IDENTITY);
        let b = Pose::new(
            Vec3::new(1.0, 0.0, 0.0),
            crate::geometry::Rotation::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 1.0),
        );
        let wps = WaypointIndexSet::new(vec![0, 2], 3).unwrap();
        let rec = reconstruct(3, &wps, &[a, b]).unwrap();
        assert!((rec[1].position - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let expected = slerp(a.orientation, b.orientation, 0.5).unwrap();
        assert!(rotation_distance(rec[1].orientation, expected) < 1e-12);
    }

    #[test]
    fn reconstruct_rejects_mismatched_lengths() {
        let wps = WaypointIndexSet::new(vec![0, 2], 3).unwrap();
        assert!(matches!(
            reconstruct(3, &wps, &[Pose::IDENTITY]),
            Err(WaypointError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn extraction_is_sound_per_channel() {
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        for _ in 0..20 {
            let ep = random_walk_episode("e", "", "", &mut rng, 25, 0.006, 0.03);
            let th = WaypointThresholds::default();
            let wps = extract_waypoints(&ep.frames, &th).unwrap();
            for ch in 0..3 {
                let poses: Vec<Pose> = ep.frames.iter().map(|f| *pose_of(f, ch)).collect();
                // every retained segment stays inside the budget
                for (i, j) in wps.segments() {
                    let (p, r) = channel_error(&poses, i, j).unwrap();
                    assert!(p <= th.pos_eps + 1e-12);
                    assert!(r <= th.rot_eps + 1e-12);
                }
                // the slerp path of the reconstruction tracks every frame's
                // rotation within the budget
                let wp_poses: Vec<Pose> = wps.indices().iter().map(|&i| poses[i]).collect();
                let rec = reconstruct(poses.len(), &wps, &wp_poses).unwrap();
                for (got, want) in rec.iter().zip(&poses) {
                    assert!(
                        rotation_distance(got.orientation, want.orientation)
                            <= th.rot_eps + 1e-12
                    );
                }
            }
        }
    }
}
