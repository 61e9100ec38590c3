//! Seeded synthetic-trajectory generators.
//!
//! Used by the `gen-sample` CLI command to produce a try-it-out dataset and
//! by the test suites to build controlled corpora. Everything is driven by a
//! caller-supplied RNG so identical seeds give identical data.

use crate::datapipe::Episode;
use crate::geometry::{Pose, RobotState, Rotation, Vec3};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

pub use crate::tokenizer::FRAME_RATE_HZ;

/// Uniform random unit quaternion (Shoemake's method), canonical hemisphere.
pub fn random_unit_quaternion(rng: &mut impl Rng) -> Rotation {
    let r1: f64 = rng.gen();
    let r2: f64 = rng.gen();
    let r3: f64 = rng.gen();
    let s1 = (1.0 - r1).sqrt();
    let s2 = r1.sqrt();
    let tau = std::f64::consts::TAU;
    Rotation::new(
        s1 * (tau * r2).cos(),
        s1 * (tau * r2).sin(),
        s2 * (tau * r3).cos(),
        s2 * (tau * r3).sin(),
    )
    .expect("Shoemake samples are unit quaternions")
}

/// Random rotation with angle uniform in `[0, max_angle]` about a uniform axis.
pub fn random_small_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let axis = Vec3::new(r * phi.cos(), r * phi.sin(), z);
    Rotation::from_axis_angle(axis, rng.gen_range(0.0..max_angle))
}

pub fn random_vec3(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

pub fn random_pose(rng: &mut impl Rng, pos_scale: f64) -> Pose {
    Pose::new(random_vec3(rng, pos_scale), random_unit_quaternion(rng))
}

pub fn random_state(rng: &mut impl Rng, timestamp: f64) -> RobotState {
    RobotState::new(
        random_pose(rng, 0.5),
        random_pose(rng, 0.5),
        random_pose(rng, 0.5),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        timestamp,
    )
}

/// A finite motion vocabulary used to build piecewise-primitive episodes.
#[derive(Debug, Clone)]
pub struct PrimitiveVocab {
    pub translations: Vec<Vec3>,
    pub rotations: Vec<Rotation>,
}

pub fn random_vocab(
    rng: &mut impl Rng,
    n_trans: usize,
    trans_scale: f64,
    n_rot: usize,
    max_angle: f64,
) -> PrimitiveVocab {
    PrimitiveVocab {
        translations: (0..n_trans).map(|_| random_vec3(rng, trans_scale)).collect(),
        rotations: (0..n_rot)
            .map(|_| random_small_rotation(rng, max_angle))
            .collect(),
    }
}

fn interpolate_channel(start: &Pose, end: &Pose, t: f64) -> Pose {
    Pose::new(
        start.position.lerp(end.position, t),
        crate::geometry::slerp(start.orientation, end.orientation, t)
            .expect("t within [0,1] by construction"),
    )
}

/// Episode built from `segments` constant-velocity segments whose per-channel
/// deltas are drawn from a primitive vocabulary. Positions get an optional
/// perpendicular jitter on interior frames; segment endpoints stay exact so
/// the vocabulary deltas are recoverable.
pub fn primitive_episode<R: Rng>(
    id: &str,
    instruction: &str,
    subtask: &str,
    rng: &mut R,
    vocab: &PrimitiveVocab,
    segments: usize,
    frames_per_segment: usize,
    pos_jitter: f64,
) -> Episode {
    assert!(segments >= 1 && frames_per_segment >= 1);
    let mut anchors: Vec<RobotState> = Vec::with_capacity(segments + 1);
    let left_grip = rng.gen_range(0.0..1.0);
    let right_grip = rng.gen_range(0.0..1.0);
    let mut state = RobotState::new(
        random_pose(rng, 0.3),
        random_pose(rng, 0.3),
        random_pose(rng, 0.3),
        left_grip,
        right_grip,
        0.0,
    );
    anchors.push(state);
    for _ in 0..segments {
        let step = |pose: &Pose, rng: &mut R| {
            let dp = vocab.translations[rng.gen_range(0..vocab.translations.len())];
            let dr = vocab.rotations[rng.gen_range(0..vocab.rotations.len())];
            crate::geometry::apply_delta(pose, &crate::geometry::DeltaAction::new(dp, dr))
        };
        let torso = step(&state.torso, rng);
        let left = step(&state.left, rng);
        let right = step(&state.right, rng);
        state = RobotState::new(torso, left, right, left_grip, right_grip, 0.0);
        anchors.push(state);
    }

    let mut frames = Vec::with_capacity(segments * frames_per_segment + 1);
    for (seg, pair) in anchors.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        for k in 0..frames_per_segment {
            let t = k as f64 / frames_per_segment as f64;
            let interior = k > 0 && pos_jitter > 0.0;
            let mut torso = interpolate_channel(&a.torso, &b.torso, t);
            let mut left = interpolate_channel(&a.left, &b.left, t);
            let mut right = interpolate_channel(&a.right, &b.right, t);
            if interior {
                torso.position = torso.position + random_vec3(rng, pos_jitter);
                left.position = left.position + random_vec3(rng, pos_jitter);
                right.position = right.position + random_vec3(rng, pos_jitter);
            }
            let idx = seg * frames_per_segment + k;
            frames.push(RobotState::new(
                torso,
                left,
                right,
                left_grip,
                right_grip,
                idx as f64 / FRAME_RATE_HZ,
            ));
        }
    }
    let last = anchors.last().unwrap();
    frames.push(RobotState::new(
        last.torso,
        last.left,
        last.right,
        left_grip,
        right_grip,
        (segments * frames_per_segment) as f64 / FRAME_RATE_HZ,
    ));

    Episode {
        id: id.to_string(),
        instruction: instruction.to_string(),
        subtask: subtask.to_string(),
        mirror_flag: false,
        frames,
    }
}

/// Wiggly random-walk episode; every frame moves by an independent small step.
pub fn random_walk_episode<R: Rng>(
    id: &str,
    instruction: &str,
    subtask: &str,
    rng: &mut R,
    n_frames: usize,
    pos_step: f64,
    rot_step: f64,
) -> Episode {
    assert!(n_frames >= 2);
    let mut frames = Vec::with_capacity(n_frames);
    let mut state = random_state(rng, 0.0);
    frames.push(state);
    for k in 1..n_frames {
        let walk = |pose: &Pose, rng: &mut R| {
            crate::geometry::apply_delta(
                pose,
                &crate::geometry::DeltaAction::new(
                    random_vec3(rng, pos_step),
                    random_small_rotation(rng, rot_step),
                ),
            )
        };
        let torso = walk(&state.torso, rng);
        let left = walk(&state.left, rng);
        let right = walk(&state.right, rng);
        state = RobotState::new(
            torso,
            left,
            right,
            (state.left_gripper + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0),
            (state.right_gripper + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0),
            k as f64 / FRAME_RATE_HZ,
        );
        frames.push(state);
    }
    Episode {
        id: id.to_string(),
        instruction: instruction.to_string(),
        subtask: subtask.to_string(),
        mirror_flag: false,
        frames,
    }
}

const INSTRUCTIONS: &[(&str, &str)] = &[
    ("pick up the red cup with the left arm", "grasp the cup"),
    ("place the bottle into the bin with the right arm", "move to the bin"),
    ("put the green block on the shelf", "lift the block"),
    ("hand the towel from the right arm to the left arm", "transfer the towel"),
    ("sweep the crumbs off the table", "sweep"),
    ("pour water into the glass", "tilt the bottle"),
];

/// Deterministic mixed sample dataset: smooth piecewise-primitive episodes
/// plus a few wiggly ones, with task annotations drawn from a fixed template
/// list. Intended as a starting point for trying the CLI pipeline.
pub fn sample_dataset(seed: u64, n_episodes: usize) -> Vec<Episode> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vocab = random_vocab(&mut rng, 24, 0.05, 24, 0.25);
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let (instruction, subtask) = INSTRUCTIONS[i % INSTRUCTIONS.len()];
        let id = format!("ep-{i:04}");
        let ep = if i % 5 == 4 {
            random_walk_episode(&id, instruction, subtask, &mut rng, 36, 0.004, 0.02)
        } else {
            primitive_episode(&id, instruction, subtask, &mut rng, &vocab, 3, 12, 0.002)
        };
        episodes.push(ep);
    }
    episodes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_dataset_is_deterministic() {
        let a = sample_dataset(42, 6);
        let b = sample_dataset(42, 6);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.frames.len(), y.frames.len());
            for (fx, fy) in x.frames.iter().zip(&y.frames) {
                assert_eq!(fx, fy);
            }
        }
    }

    #[test]
    fn timestamps_strictly_increase() {
        for ep in sample_dataset(1, 10) {
            for pair in ep.frames.windows(2) {
                assert!(pair[1].timestamp > pair[0].timestamp);
            }
        }
    }
}
