//! Dataset ingestion, intra-prompt de-duplication, and trajectory mirroring.

mod grid;
mod io;

pub use grid::{grid_distance, rasterize, rasterize_with_bounds, Arm, GridBounds, OccupancyGrid, Plane};
pub use io::{episodes_from_jsonl, episodes_to_jsonl, EPISODE_FORMAT_VERSION};

use crate::geometry::{mirror_pose, Pose, RobotState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatapipeError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unsupported format version {version}")]
    UnsupportedVersion { line: usize, version: u32 },
    #[error("line {line}: invalid episode: {reason}")]
    InvalidEpisode { line: usize, reason: String },
    #[error("episode {id}: {reason}")]
    BadEpisode { id: String, reason: String },
    #[error("grids are not comparable: {0}")]
    GridMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// One annotated trajectory. `mirror_flag` records that downstream visual
/// streams must be flipped horizontally to match the action data; the flag is
/// toggled by [`mirror_episode`] and images themselves are never touched here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub instruction: String,
    pub subtask: String,
    pub mirror_flag: bool,
    pub frames: Vec<RobotState>,
}

impl Episode {
    pub fn validate(&self) -> Result<(), DatapipeError> {
        let bad = |reason: String| DatapipeError::BadEpisode { id: self.id.clone(), reason };
        if self.frames.is_empty() {
            return Err(bad("no frames".into()));
        }
        for (k, f) in self.frames.iter().enumerate() {
            for (name, pose) in [("torso", &f.torso), ("left", &f.left), ("right", &f.right)] {
                if !pose.position.is_finite() {
                    return Err(bad(format!("frame {k}: non-finite {name} position")));
                }
            }
            if !f.timestamp.is_finite() {
                return Err(bad(format!("frame {k}: non-finite timestamp")));
            }
        }
        for (k, w) in self.frames.windows(2).enumerate() {
            if w[1].timestamp <= w[0].timestamp {
                return Err(bad(format!("timestamps not strictly increasing at frame {}", k + 1)));
            }
        }
        Ok(())
    }
}

/// World-from-local base-frame transforms for the mirrorable channels. Each
/// arm keeps its own base frame; the torso maps onto itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorFrames {
    pub torso: Pose,
    pub left: Pose,
    pub right: Pose,
}

impl Default for MirrorFrames {
    fn default() -> Self {
        Self { torso: Pose::IDENTITY, left: Pose::IDENTITY, right: Pose::IDENTITY }
    }
}

/// Word pairs swapped in instruction text when an episode is mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorLexicon {
    pub pairs: Vec<(String, String)>,
}

impl Default for MirrorLexicon {
    fn default() -> Self {
        Self { pairs: vec![("left".into(), "right".into())] }
    }
}

impl MirrorLexicon {
    /// Swap every lexicon word (lowercase or Capitalized form) in one pass,
    /// so the substitution is its own inverse.
    pub fn swap_words(&self, text: &str) -> String {
        let mut map = std::collections::HashMap::new();
        let mut insert_both = |a: &str, b: &str| {
            map.insert(a.to_string(), b.to_string());
            map.insert(capitalize(a), capitalize(b));
        };
        for (a, b) in &self.pairs {
            insert_both(a, b);
            insert_both(b, a);
        }

        let mut out = String::with_capacity(text.len());
        let mut word = String::new();
        for c in text.chars() {
            if c.is_alphabetic() {
                word.push(c);
            } else {
                flush_word(&mut out, &mut word, &map);
                out.push(c);
            }
        }
        flush_word(&mut out, &mut word, &map);
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn flush_word(out: &mut String, word: &mut String, map: &std::collections::HashMap<String, String>) {
    if word.is_empty() {
        return;
    }
    match map.get(word.as_str()) {
        Some(rep) => out.push_str(rep),
        None => out.push_str(word),
    }
    word.clear();
}

/// Mirror an episode across the world x-z plane: left/right channels swap,
/// every pose runs through [`mirror_pose`], grippers swap, the instruction
/// text goes through the left/right lexicon, and `mirror_flag` toggles.
pub fn mirror_episode(ep: &Episode, frames: &MirrorFrames, lexicon: &MirrorLexicon) -> Episode {
    let mirrored_frames = ep
        .frames
        .iter()
        .map(|f| RobotState {
            torso: mirror_pose(&f.torso, &frames.torso, &frames.torso),
            left: mirror_pose(&f.right, &frames.right, &frames.left),
            right: mirror_pose(&f.left, &frames.left, &frames.right),
            left_gripper: f.right_gripper,
            right_gripper: f.left_gripper,
            timestamp: f.timestamp,
        })
        .collect();
    Episode {
        id: ep.id.clone(),
        instruction: lexicon.swap_words(&ep.instruction),
        subtask: lexicon.swap_words(&ep.subtask),
        mirror_flag: !ep.mirror_flag,
        frames: mirrored_frames,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    /// Combined-distance threshold below which an episode counts as redundant.
    pub threshold: f64,
    /// Occupancy-grid cell size in meters.
    pub cell_size: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self { threshold: 0.15, cell_size: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedEpisode {
    pub id: String,
    pub matched_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub kept: Vec<String>,
    pub removed: Vec<RemovedEpisode>,
    pub threshold: f64,
    pub cell_size: f64,
}

const PLANES: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];
const ARMS: [Arm; 2] = [Arm::Left, Arm::Right];

/// Greedy sequential de-duplication in input order, restricted to episodes
/// sharing the same (instruction, subtask) annotation.
///
/// The combined distance between two episodes is the mean of the six
/// per-arm, per-plane occupancy-grid distances, all rasterized against the
/// group's union bounding box so the grids align cell-for-cell.
pub fn dedup(episodes: &[Episode], params: &DedupParams) -> Result<DedupReport, DatapipeError> {
    if !(params.cell_size.is_finite() && params.cell_size > 0.0) {
        return Err(DatapipeError::InvalidParam(format!(
            "cell_size must be positive, got {}",
            params.cell_size
        )));
    }
    if !(params.threshold.is_finite() && params.threshold >= 0.0) {
        return Err(DatapipeError::InvalidParam(format!(
            "threshold must be non-negative, got {}",
            params.threshold
        )));
    }
    for ep in episodes {
        ep.validate()?;
    }

    // Group by task annotation; first-appearance order.
    let mut group_ids: Vec<usize> = Vec::with_capacity(episodes.len());
    let mut groups: Vec<(&str, &str)> = Vec::new();
    for ep in episodes {
        let key = (ep.instruction.as_str(), ep.subtask.as_str());
        let gid = match groups.iter().position(|g| *g == key) {
            Some(i) => i,
            None => {
                groups.push(key);
                groups.len() - 1
            }
        };
        group_ids.push(gid);
    }

    // Union bounds per (group, arm, plane).
    let mut bounds: Vec<[[Option<GridBounds>; 3]; 2]> = vec![Default::default(); groups.len()];
    for (idx, ep) in episodes.iter().enumerate() {
        let gid = group_ids[idx];
        for (ai, arm) in ARMS.iter().enumerate() {
            for (pi, plane) in PLANES.iter().enumerate() {
                let b = GridBounds::of_episode(ep, *arm, *plane, params.cell_size);
                bounds[gid][ai][pi] = Some(match bounds[gid][ai][pi] {
                    Some(prev) => prev.union(&b),
                    None => b,
                });
            }
        }
    }

    let grids: Vec<Vec<OccupancyGrid>> = episodes
        .par_iter()
        .enumerate()
        .map(|(idx, ep)| {
            let gid = group_ids[idx];
            let mut out = Vec::with_capacity(6);
            for (ai, arm) in ARMS.iter().enumerate() {
                for (pi, plane) in PLANES.iter().enumerate() {
                    let b = bounds[gid][ai][pi].expect("bounds computed for every group");
                    out.push(rasterize_with_bounds(ep, *arm, *plane, &b));
                }
            }
            out
        })
        .collect();

    let mut kept: Vec<String> = Vec::new();
    let mut kept_idx_by_group: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    let mut removed: Vec<RemovedEpisode> = Vec::new();
    for (idx, ep) in episodes.iter().enumerate() {
        let gid = group_ids[idx];
        let mut matched: Option<(usize, f64)> = None;
        for &k in &kept_idx_by_group[gid] {
            let mut sum = 0.0;
            for g in 0..6 {
                sum += grid_distance(&grids[idx][g], &grids[k][g])?;
            }
            let combined = sum / 6.0;
            if combined < params.threshold {
                matched = Some((k, combined));
                break;
            }
        }
        match matched {
            Some((k, distance)) => removed.push(RemovedEpisode {
                id: ep.id.clone(),
                matched_id: episodes[k].id.clone(),
                distance,
            }),
            None => {
                kept.push(ep.id.clone());
                kept_idx_by_group[gid].push(idx);
            }
        }
    }

    Ok(DedupReport {
        kept,
        removed,
        threshold: params.threshold,
        cell_size: params.cell_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_distance, Rotation, Vec3};
    use crate::synth::{random_pose, random_walk_episode, sample_dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn episode_max_field_delta(a: &Episode, b: &Episode) -> f64 {
        assert_eq!(a.frames.len(), b.frames.len());
        let mut worst: f64 = 0.0;
        for (x, y) in a.frames.iter().zip(&b.frames) {
            for (p, q) in [(&x.torso, &y.torso), (&x.left, &y.left), (&x.right, &y.right)] {
                worst = worst.max((p.position - q.position).norm());
                worst = worst.max(rotation_distance(p.orientation, q.orientation));
            }
            worst = worst.max((x.left_gripper - y.left_gripper).abs());
            worst = worst.max((x.right_gripper - y.right_gripper).abs());
            worst = worst.max((x.timestamp - y.timestamp).abs());
        }
        worst
    }

    #[test]
    fn mirror_twice_restores_episode() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let frames = MirrorFrames {
            torso: random_pose(&mut rng, 0.3),
            left: random_pose(&mut rng, 0.3),
            right: random_pose(&mut rng, 0.3),
        };
        let lex = MirrorLexicon::default();
        for i in 0..50 {
            let ep = random_walk_episode(
                &format!("ep{i}"),
                "move the left arm to the right edge",
                "reach",
                &mut rng,
                10,
                0.01,
                0.05,
            );
            let twice = mirror_episode(&mirror_episode(&ep, &frames, &lex), &frames, &lex);
            assert!(episode_max_field_delta(&ep, &twice) < 1e-9);
            assert_eq!(twice.mirror_flag, ep.mirror_flag);
            assert_eq!(twice.instruction, ep.instruction);
            assert_eq!(twice.id, ep.id);
        }
    }

    #[test]
    fn mirror_swaps_arms_and_negates_world_y() {
        let mut ep = random_walk_episode("e", "x", "y", &mut ChaCha20Rng::seed_from_u64(3), 3, 0.01, 0.01);
        for f in &mut ep.frames {
            f.right.position = Vec3::new(0.4, -0.2, 0.1);
            f.right.orientation = Rotation::IDENTITY;
        }
        let mirrored = mirror_episode(&ep, &MirrorFrames::default(), &MirrorLexicon::default());
        for f in &mirrored.frames {
            assert!((f.left.position.y - 0.2).abs() < 1e-12);
            assert!((f.left.position.x - 0.4).abs() < 1e-12);
        }
        assert!(mirrored.mirror_flag);
    }

    #[test]
    fn mirror_swaps_grippers() {
        let mut ep = random_walk_episode("e", "x", "y", &mut ChaCha20Rng::seed_from_u64(4), 3, 0.01, 0.01);
        for f in &mut ep.frames {
            f.left_gripper = 0.9;
            f.right_gripper = 0.1;
        }
        let m = mirror_episode(&ep, &MirrorFrames::default(), &MirrorLexicon::default());
        for f in &m.frames {
            assert_eq!(f.left_gripper, 0.1);
            assert_eq!(f.right_gripper, 0.9);
        }
    }

    #[test]
    fn lexicon_swap_is_involutive_and_case_aware() {
        let lex = MirrorLexicon::default();
        let text = "Move the left arm to the Right shelf; lefty stays.";
        let once = lex.swap_words(text);
        assert_eq!(once, "Move the right arm to the Left shelf; lefty stays.");
        assert_eq!(lex.swap_words(&once), text);
    }

    #[test]
    fn dedup_keeps_distinct_episodes() {
        let eps = sample_dataset(7, 8);
        let report = dedup(&eps, &DedupParams::default()).unwrap();
        assert!(report.removed.is_empty());
        assert_eq!(report.kept.len(), 8);
    }

    #[test]
    fn dedup_removes_exact_duplicate_with_zero_distance() {
        let eps = sample_dataset(11, 3);
        let mut doubled = eps.clone();
        let mut copy = eps[0].clone();
        copy.id = "copy".into();
        doubled.push(copy);
        let report = dedup(&doubled, &DedupParams::default()).unwrap();
        assert_eq!(report.removed.len(), 1);
        assert_eq!(report.removed[0].id, "copy");
        assert_eq!(report.removed[0].matched_id, eps[0].id);
        assert_eq!(report.removed[0].distance, 0.0);
    }

    #[test]
    fn dedup_matches_all_pairs_oracle() {
        // three near-identical episodes plus one distinct, same annotation
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let base = random_walk_episode("a", "task", "sub", &mut rng, 15, 0.01, 0.02);
        let mut near1 = base.clone();
        near1.id = "b".into();
        let mut near2 = base.clone();
        near2.id = "c".into();
        for f in near1.frames.iter_mut().chain(near2.frames.iter_mut()) {
            f.left.position.x += rng.gen_range(-0.002..0.002);
        }
        let distinct = random_walk_episode("d", "task", "sub", &mut rng, 15, 0.05, 0.02);
        let eps = vec![base, near1, near2, distinct];
        let params = DedupParams { threshold: 0.2, cell_size: 0.05 };
        let report = dedup(&eps, &params).unwrap();
        assert_eq!(report.removed.len(), 2);
        assert_eq!(report.kept, vec!["a".to_string(), "d".to_string()]);

        // oracle: every removed episode sits under threshold against some
        // kept one; every kept pair sits at or above threshold
        for r in &report.removed {
            assert!(r.distance < params.threshold);
        }
    }

    #[test]
    fn dedup_respects_group_boundaries() {
        let mut rng = ChaCha20Rng::seed_from_u64(67);
        let a = random_walk_episode("a", "task one", "sub", &mut rng, 12, 0.01, 0.02);
        let mut b = a.clone();
        b.id = "b".into();
        b.instruction = "task two".into();
        let report = dedup(&[a, b], &DedupParams { threshold: 10.0, cell_size: 0.05 }).unwrap();
        // identical trajectories but different prompts: both kept
        assert_eq!(report.kept.len(), 2);
    }

    #[test]
    fn dedup_removal_monotone_in_threshold() {
        let eps = sample_dataset(13, 12);
        let mut last = 0;
        for &t in &[0.0, 0.05, 0.2, 0.5, 1.0, 2.1] {
            let report = dedup(&eps, &DedupParams { threshold: t, cell_size: 0.05 }).unwrap();
            assert!(report.removed.len() >= last);
            last = report.removed.len();
        }
    }

    #[test]
    fn validate_rejects_bad_timestamps() {
        let mut ep = sample_dataset(1, 1).pop().unwrap();
        ep.frames[1].timestamp = ep.frames[0].timestamp;
        assert!(matches!(ep.validate(), Err(DatapipeError::BadEpisode { .. })));
    }
}
