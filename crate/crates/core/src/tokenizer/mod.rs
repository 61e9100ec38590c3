//! Spatial action tokenizer: fit a motion token library by clustering
//! waypoint deltas, encode trajectories into 8-slot token steps, and decode
//! tokens back into robot states.
//!
//! Every step is one group of eight tokens covering the unified action
//! layout (torso translation/rotation, left arm translation/rotation/gripper,
//! right arm translation/rotation/gripper), so sequences are always a
//! multiple of eight tokens. Encoding greedily picks the motion primitive
//! whose application lands the simulated state closest to the next waypoint
//! and updates the simulated state after every step, so quantization errors
//! do not compound. Because each token is a fitted motion primitive, any
//! token sequence decodes into a valid motion.

mod binning;
mod kmeans;

pub use binning::{binning_decode, binning_encode, fit_binning_spec, BinningSpec};

use crate::datapipe::Episode;
use crate::geometry::{
    apply_delta, delta_between, rotation_distance, DeltaAction, RobotState, Rotation, Vec3,
};
use crate::waypoints::{extract_waypoints, WaypointError, WaypointThresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Assumed control rate; a 40-frame horizon spans 1.33 s.
pub const FRAME_RATE_HZ: f64 = 30.0;
/// Maximum number of frames one encoded window may cover.
pub const MAX_HORIZON_FRAMES: usize = 40;
/// Maximum number of 8-token steps per encoded window.
pub const MAX_STEPS: usize = 5;
/// Slots per step in the unified action layout.
pub const TOKENS_PER_STEP: usize = 8;
/// Library file schema version.
pub const LIBRARY_FORMAT_VERSION: u32 = 1;
/// Delta rotations apply on the left in the world frame. Stored in the
/// library file so decoding never guesses the composition side.
pub const COMPOSITION_CONVENTION: &str = "world-frame-left-multiply";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("fitting {required} clusters needs at least {required} delta actions, got {provided}")]
    InsufficientData { required: usize, provided: usize },
    #[error("invalid motion token library: {0}")]
    InvalidLibrary(String),
    #[error("encode window has {len} frames, need at least 2")]
    WindowTooShort { len: usize },
    #[error("token index {index} out of range for channel {channel} (size {size})")]
    TokenOutOfRange { channel: &'static str, index: usize, size: usize },
    #[error("library format version {got} unsupported (expected {expected})")]
    UnsupportedVersion { got: u32, expected: u32 },
    #[error("unknown composition convention {0:?}")]
    UnsupportedConvention(String),
    #[error("ranked token query needs m >= 1")]
    BadQuery,
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid binning spec: {0}")]
    InvalidBinning(String),
    #[error(transparent)]
    Waypoint(#[from] WaypointError),
    #[error("library JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// The eight slots of one action step, in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    TorsoXyz,
    TorsoRot,
    LeftXyz,
    LeftRot,
    LeftGrip,
    RightXyz,
    RightRot,
    RightGrip,
}

pub const CHANNEL_LAYOUT: [Channel; TOKENS_PER_STEP] = [
    Channel::TorsoXyz,
    Channel::TorsoRot,
    Channel::LeftXyz,
    Channel::LeftRot,
    Channel::LeftGrip,
    Channel::RightXyz,
    Channel::RightRot,
    Channel::RightGrip,
];

impl Channel {
    pub fn tag(self) -> &'static str {
        match self {
            Channel::TorsoXyz => "torso_xyz",
            Channel::TorsoRot => "torso_rot",
            Channel::LeftXyz => "left_xyz",
            Channel::LeftRot => "left_rot",
            Channel::LeftGrip => "left_grip",
            Channel::RightXyz => "right_xyz",
            Channel::RightRot => "right_rot",
            Channel::RightGrip => "right_grip",
        }
    }

    fn library_size(self, lib: &MotionTokenLibrary) -> usize {
        match self {
            Channel::TorsoXyz | Channel::LeftXyz | Channel::RightXyz => lib.trans_centroids.len(),
            Channel::TorsoRot | Channel::LeftRot | Channel::RightRot => lib.rot_centroids.len(),
            Channel::LeftGrip | Channel::RightGrip => lib.gripper_bins as usize,
        }
    }
}

/// One token: a slot and a centroid index (or quantized gripper level).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenId {
    pub channel: Channel,
    pub index: usize,
}

/// One 8-slot step, serialized as a plain index array in [`CHANNEL_LAYOUT`]
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 8]", into = "[usize; 8]")]
pub struct TokenStep {
    indices: [usize; TOKENS_PER_STEP],
}

impl TokenStep {
    pub fn new(indices: [usize; TOKENS_PER_STEP]) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> [usize; TOKENS_PER_STEP] {
        self.indices
    }

    pub fn token_ids(&self) -> [TokenId; TOKENS_PER_STEP] {
        let mut out = [TokenId { channel: Channel::TorsoXyz, index: 0 }; TOKENS_PER_STEP];
        for (i, (&idx, &ch)) in self.indices.iter().zip(CHANNEL_LAYOUT.iter()).enumerate() {
            out[i] = TokenId { channel: ch, index: idx };
        }
        out
    }

    pub fn get(&self, channel: Channel) -> usize {
        let slot = CHANNEL_LAYOUT.iter().position(|&c| c == channel).unwrap();
        self.indices[slot]
    }
}

impl From<[usize; 8]> for TokenStep {
    fn from(indices: [usize; 8]) -> Self {
        Self { indices }
    }
}

impl From<TokenStep> for [usize; 8] {
    fn from(s: TokenStep) -> Self {
        s.indices
    }
}

/// Encoded window: up to [`MAX_STEPS`] steps covering `horizon_frames`
/// trajectory frames (including the start frame).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTokenSequence {
    pub steps: Vec<TokenStep>,
    pub horizon_frames: usize,
}

impl ActionTokenSequence {
    pub fn token_count(&self) -> usize {
        self.steps.len() * TOKENS_PER_STEP
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        if self.steps.len() > MAX_STEPS {
            return Err(TokenizerError::InvalidSequence(format!(
                "{} steps exceed the maximum of {MAX_STEPS}",
                self.steps.len()
            )));
        }
        if self.horizon_frames > MAX_HORIZON_FRAMES {
            return Err(TokenizerError::InvalidSequence(format!(
                "horizon of {} frames exceeds the maximum of {MAX_HORIZON_FRAMES}",
                self.horizon_frames
            )));
        }
        if !self.steps.is_empty() && self.horizon_frames < 2 {
            return Err(TokenizerError::InvalidSequence(
                "non-empty sequence must cover at least 2 frames".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted motion primitive codebook plus the metadata needed to reproduce and
/// apply it: waypoint thresholds, the fit seed, the rotation-composition
/// convention, and the measured quantization radii (the largest distance from
/// any fitted delta to its nearest centroid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTokenLibrary {
    pub format_version: u32,
    pub fit_seed: u64,
    pub composition_convention: String,
    pub thresholds: WaypointThresholds,
    pub k_trans: usize,
    pub k_rot: usize,
    pub gripper_bins: u32,
    pub trans_centroids: Vec<Vec3>,
    pub rot_centroids: Vec<Rotation>,
    pub quant_radius_trans: f64,
    pub quant_radius_rot: f64,
}

impl MotionTokenLibrary {
    pub fn validate(&self) -> Result<(), TokenizerError> {
        if self.trans_centroids.is_empty() || self.rot_centroids.is_empty() {
            return Err(TokenizerError::InvalidLibrary("empty centroid list".into()));
        }
        if self.k_trans != self.trans_centroids.len() || self.k_rot != self.rot_centroids.len() {
            return Err(TokenizerError::InvalidLibrary(
                "centroid counts do not match k_trans/k_rot".into(),
            ));
        }
        if self.gripper_bins < 2 {
            return Err(TokenizerError::InvalidLibrary("gripper_bins must be >= 2".into()));
        }
        for r in &self.rot_centroids {
            if !r.is_unit() || r.w() < 0.0 {
                return Err(TokenizerError::InvalidLibrary(
                    "rotation centroid off the canonical hemisphere".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes infallibly")
    }

    pub fn from_json(data: &str) -> Result<Self, TokenizerError> {
        let lib: Self = serde_json::from_str(data)?;
        if lib.format_version != LIBRARY_FORMAT_VERSION {
            return Err(TokenizerError::UnsupportedVersion {
                got: lib.format_version,
                expected: LIBRARY_FORMAT_VERSION,
            });
        }
        if lib.composition_convention != COMPOSITION_CONVENTION {
            return Err(TokenizerError::UnsupportedConvention(lib.composition_convention));
        }
        lib.validate()?;
        Ok(lib)
    }
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-8;

/// Fit the motion token library.
///
/// Translation deltas are clustered with plain k-means in R^3; rotation
/// deltas with spherical k-means (chordal distance on the canonical
/// quaternion hemisphere, centroids renormalized each iteration). Both runs
/// are seeded, so identical inputs give identical libraries.
pub fn fit_library(
    deltas: &[DeltaAction],
    k_trans: usize,
    k_rot: usize,
    seed: u64,
    thresholds: WaypointThresholds,
    gripper_bins: u32,
) -> Result<MotionTokenLibrary, TokenizerError> {
    let required = k_trans.max(k_rot).max(1);
    if deltas.len() < required {
        return Err(TokenizerError::InsufficientData { required, provided: deltas.len() });
    }

    let trans_points: Vec<[f64; 3]> = deltas.iter().map(|d| d.d_pos.into()).collect();
    let rot_points: Vec<[f64; 4]> = deltas.iter().map(|d| d.d_rot.as_wxyz()).collect();

    let trans_centroids: Vec<Vec3> = kmeans::run(
        &trans_points,
        &kmeans::KMeansOptions {
            k: k_trans,
            max_iters: KMEANS_MAX_ITERS,
            tol: KMEANS_TOL,
            spherical: false,
        },
        seed,
    )
    .into_iter()
    .map(Vec3::from)
    .collect();

    let rot_centroids: Vec<Rotation> = kmeans::run(
        &rot_points,
        &kmeans::KMeansOptions {
            k: k_rot,
            max_iters: KMEANS_MAX_ITERS,
            tol: KMEANS_TOL,
            spherical: true,
        },
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )
    .into_iter()
    .map(|c| Rotation::from_unnormalized(c[0], c[1], c[2], c[3]).unwrap_or(Rotation::IDENTITY))
    .collect();

    // Quantization radii, measured with the same metrics encoding uses.
    let mut quant_radius_trans: f64 = 0.0;
    let mut quant_radius_rot: f64 = 0.0;
    for d in deltas {
        let t = trans_centroids
            .iter()
            .map(|c| (*c - d.d_pos).norm())
            .fold(f64::INFINITY, f64::min);
        quant_radius_trans = quant_radius_trans.max(t);
        let r = rot_centroids
            .iter()
            .map(|c| rotation_distance(*c, d.d_rot))
            .fold(f64::INFINITY, f64::min);
        quant_radius_rot = quant_radius_rot.max(r);
    }

    let lib = MotionTokenLibrary {
        format_version: LIBRARY_FORMAT_VERSION,
        fit_seed: seed,
        composition_convention: COMPOSITION_CONVENTION.to_string(),
        thresholds,
        k_trans,
        k_rot,
        gripper_bins,
        trans_centroids,
        rot_centroids,
        quant_radius_trans,
        quant_radius_rot,
    };
    lib.validate()?;
    Ok(lib)
}

/// Candidate tokens for one delta action, ranked per channel. Translation
/// ranks by Euclidean distance, rotation by geodesic distance; ties break on
/// the lower centroid index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTokens {
    pub translation: Vec<(usize, f64)>,
    pub rotation: Vec<(usize, f64)>,
}

fn rank(distances: impl Iterator<Item = f64>, m: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = distances.enumerate().collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(m);
    all
}

pub fn nearest_trans(lib: &MotionTokenLibrary, target: Vec3, m: usize) -> Vec<(usize, f64)> {
    rank(lib.trans_centroids.iter().map(|c| (*c - target).norm()), m)
}

pub fn nearest_rot(lib: &MotionTokenLibrary, target: Rotation, m: usize) -> Vec<(usize, f64)> {
    rank(lib.rot_centroids.iter().map(|c| rotation_distance(*c, target)), m)
}

/// Rank the `m` closest library tokens for a delta action, translation and
/// rotation independently. `m` larger than the library clamps to its size.
pub fn nearest_tokens(
    lib: &MotionTokenLibrary,
    target: &DeltaAction,
    m: usize,
) -> Result<RankedTokens, TokenizerError> {
    lib.validate()?;
    if m == 0 {
        return Err(TokenizerError::BadQuery);
    }
    Ok(RankedTokens {
        translation: nearest_trans(lib, target.d_pos, m),
        rotation: nearest_rot(lib, target.d_rot, m),
    })
}

/// Token-selection mode: `Greedy` always takes the closest primitive, `Top3`
/// samples uniformly among the three closest with the given seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Greedy,
    Top3 { seed: u64 },
}

fn pick(ranked: &[(usize, f64)], rng: &mut Option<ChaCha20Rng>) -> usize {
    match rng {
        None => ranked[0].0,
        Some(r) => ranked[r.gen_range(0..ranked.len().min(3))].0,
    }
}

pub fn quantize_gripper(level: f64, bins: u32) -> usize {
    let idx = (level.clamp(0.0, 1.0) * bins as f64).floor() as usize;
    idx.min(bins as usize - 1)
}

pub fn dequantize_gripper(index: usize, bins: u32) -> f64 {
    (index as f64 + 0.5) / bins as f64
}

/// Encode the leading window (at most [`MAX_HORIZON_FRAMES`] frames) of a
/// trajectory.
///
/// Waypoints are extracted with the library's thresholds; each inter-waypoint
/// segment becomes one 8-slot step. Per channel the selected token is the one
/// whose application moves the simulated state closest to the next waypoint,
/// and the simulated state is updated after every step. If the window needs
/// more than [`MAX_STEPS`] segments it is truncated at the fifth waypoint and
/// the horizon shrinks accordingly.
pub fn encode(
    frames: &[RobotState],
    lib: &MotionTokenLibrary,
    mode: EncodeMode,
) -> Result<ActionTokenSequence, TokenizerError> {
    lib.validate()?;
    let window = &frames[..frames.len().min(MAX_HORIZON_FRAMES)];
    if window.len() < 2 {
        return Err(TokenizerError::WindowTooShort { len: window.len() });
    }
    let wps = extract_waypoints(window, &lib.thresholds)?;
    let n_steps = (wps.len() - 1).min(MAX_STEPS);
    let horizon_frames = wps.indices()[n_steps] + 1;

    let mut rng = match mode {
        EncodeMode::Greedy => None,
        EncodeMode::Top3 { seed } => Some(ChaCha20Rng::seed_from_u64(seed)),
    };

    let mut sim = window[0];
    let mut steps = Vec::with_capacity(n_steps);
    for s in 0..n_steps {
        let target = &window[wps.indices()[s + 1]];

        let mut chosen_trans = [0usize; 3];
        let mut chosen_rot = [0usize; 3];
        for (ch, (sim_pose, target_pose)) in [
            (&sim.torso, &target.torso),
            (&sim.left, &target.left),
            (&sim.right, &target.right),
        ]
        .into_iter()
        .enumerate()
        {
            let want = delta_between(sim_pose, target_pose);
            chosen_trans[ch] = pick(&nearest_trans(lib, want.d_pos, 3), &mut rng);
            chosen_rot[ch] = pick(&nearest_rot(lib, want.d_rot, 3), &mut rng);
        }
        let left_grip = quantize_gripper(target.left_gripper, lib.gripper_bins);
        let right_grip = quantize_gripper(target.right_gripper, lib.gripper_bins);

        steps.push(TokenStep::new([
            chosen_trans[0],
            chosen_rot[0],
            chosen_trans[1],
            chosen_rot[1],
            left_grip,
            chosen_trans[2],
            chosen_rot[2],
            right_grip,
        ]));

        // advance the simulated state by what the tokens actually encode
        let delta_of = |ch: usize| DeltaAction {
            d_pos: lib.trans_centroids[chosen_trans[ch]],
            d_rot: lib.rot_centroids[chosen_rot[ch]],
        };
        sim = RobotState {
            torso: apply_delta(&sim.torso, &delta_of(0)),
            left: apply_delta(&sim.left, &delta_of(1)),
            right: apply_delta(&sim.right, &delta_of(2)),
            left_gripper: dequantize_gripper(left_grip, lib.gripper_bins),
            right_gripper: dequantize_gripper(right_grip, lib.gripper_bins),
            timestamp: sim.timestamp,
        };
    }

    let seq = ActionTokenSequence { steps, horizon_frames };
    seq.validate()?;
    Ok(seq)
}

/// Deterministic per-window seed derived from the batch seed, episode id,
/// and window start.
pub fn mix_seed(base: u64, episode_id: &str, window_start: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in episode_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h ^ (window_start as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Encode a whole episode as consecutive windows. Each window advances to the
/// last frame the previous one covered, so decoded windows chain state to
/// state. In `Top3` mode every window gets its own seed via [`mix_seed`].
pub fn encode_episode(
    ep: &Episode,
    lib: &MotionTokenLibrary,
    mode: EncodeMode,
) -> Result<Vec<(usize, ActionTokenSequence)>, TokenizerError> {
    let n = ep.frames.len();
    if n < 2 {
        return Err(TokenizerError::WindowTooShort { len: n });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < n {
        let window_mode = match mode {
            EncodeMode::Greedy => EncodeMode::Greedy,
            EncodeMode::Top3 { seed } => EncodeMode::Top3 { seed: mix_seed(seed, &ep.id, start) },
        };
        let seq = encode(&ep.frames[start..], lib, window_mode)?;
        let advance = seq.horizon_frames - 1;
        out.push((start, seq));
        start += advance;
    }
    Ok(out)
}

/// Apply an encoded sequence to a start state, yielding one state per step
/// (plus the start). Every decode is a valid motion: each token indexes a
/// fitted primitive, and out-of-range indices are rejected up front.
pub fn decode(
    seq: &ActionTokenSequence,
    lib: &MotionTokenLibrary,
    start: &RobotState,
) -> Result<Vec<RobotState>, TokenizerError> {
    lib.validate()?;
    if lib.composition_convention != COMPOSITION_CONVENTION {
        return Err(TokenizerError::UnsupportedConvention(lib.composition_convention.clone()));
    }
    seq.validate()?;
    for step in &seq.steps {
        for token in step.token_ids() {
            let size = token.channel.library_size(lib);
            if token.index >= size {
                return Err(TokenizerError::TokenOutOfRange {
                    channel: token.channel.tag(),
                    index: token.index,
                    size,
                });
            }
        }
    }

    let mut states = vec![*start];
    if seq.steps.is_empty() {
        return Ok(states);
    }
    let step_dt = (seq.horizon_frames - 1) as f64 / seq.steps.len() as f64 / FRAME_RATE_HZ;
    for step in &seq.steps {
        let prev = *states.last().unwrap();
        let idx = step.indices();
        let delta_of = |t: usize, r: usize| DeltaAction {
            d_pos: lib.trans_centroids[idx[t]],
            d_rot: lib.rot_centroids[idx[r]],
        };
        states.push(RobotState {
            torso: apply_delta(&prev.torso, &delta_of(0, 1)),
            left: apply_delta(&prev.left, &delta_of(2, 3)),
            right: apply_delta(&prev.right, &delta_of(5, 6)),
            left_gripper: dequantize_gripper(idx[4], lib.gripper_bins),
            right_gripper: dequantize_gripper(idx[7], lib.gripper_bins),
            timestamp: prev.timestamp + step_dt,
        });
    }
    Ok(states)
}

/// Token-cost comparison for one encoded window: the spatial tokenizer's
/// count against the `8 * window_frames` a uniform binning baseline spends on
/// the same window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub episode_id: String,
    pub window_start: usize,
    pub window_frames: usize,
    pub spatial_tokens: usize,
    pub binning_tokens: usize,
    pub ratio: f64,
}

pub fn compression_report(
    episodes: &[Episode],
    lib: &MotionTokenLibrary,
) -> Result<Vec<CompressionRecord>, TokenizerError> {
    let mut records = Vec::new();
    for ep in episodes {
        for (start, seq) in encode_episode(ep, lib, EncodeMode::Greedy)? {
            let window_frames = (ep.frames.len() - start).min(MAX_HORIZON_FRAMES);
            let spatial = seq.token_count();
            let binning = TOKENS_PER_STEP * window_frames;
            records.push(CompressionRecord {
                episode_id: ep.id.clone(),
                window_start: start,
                window_frames,
                spatial_tokens: spatial,
                binning_tokens: binning,
                ratio: binning as f64 / spatial as f64,
            });
        }
    }
    Ok(records)
}
