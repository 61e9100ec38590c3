//! Reward suite for reasoning-action training: visual rewards (bounding box,
//! keypoint, waypoint), action reward, format reward, consistency reward via
//! a pluggable judge, plus aggregation into a total.
//!
//! Every component reward lies in [0, 1] for valid inputs.

mod grpo;
mod judge;

pub use grpo::{
    filter_by_reward_variance, grpo_advantages, grpo_objective, nsr, DEFAULT_EPSILON_HIGH,
    DEFAULT_EPSILON_LOW, DEFAULT_KL_COEFFICIENT,
};
pub use judge::{ConsistencyJudge, FixedJudge, HeuristicJudge, JudgeError, JudgeRequest, JudgeScores};

use crate::geometry::{rotation_distance, Rotation, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid bounding box: ({x_min}, {y_min}) to ({x_max}, {y_max})")]
    InvalidBBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("keypoint ({u}, {v}) outside the normalized [0, 1] range")]
    KeypointOutOfRange { u: f64, v: f64 },
    #[error("empty keypoint list")]
    NoKeypoints,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("prediction has {pred} arm trajectories but ground truth has {gt}")]
    ArmCountMismatch { pred: usize, gt: usize },
    #[error("invalid format template: {0}")]
    BadTemplate(String),
    #[error("reward weights: {0}")]
    BadWeights(String),
    #[error("component {0} required by this mode is missing")]
    MissingComponent(&'static str),
    #[error("component {name} = {value} outside [0, 1]")]
    ComponentOutOfRange { name: &'static str, value: f64 },
    #[error("advantage group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("mismatched lengths: {0}")]
    LengthMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("gripper value {0} outside [0, 1]")]
    GripperOutOfRange(f64),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

/// Axis-aligned bounding box; coordinates may be pixels or normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, RewardError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(RewardError::InvalidBBox { x_min, y_min, x_max, y_max });
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    fn intersection_area(&self, o: &BBox) -> f64 {
        let w = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let h = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        w * h
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: &Keypoint2D) -> bool {
        p.u >= self.x_min && p.u <= self.x_max && p.v >= self.y_min && p.v <= self.y_max
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = RewardError;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Image point normalized to [0, 1] per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
}

/// Trajectory points share the keypoint representation.
pub type Waypoint2D = Keypoint2D;

impl Keypoint2D {
    pub fn new(u: f64, v: f64) -> Result<Self, RewardError> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(RewardError::KeypointOutOfRange { u, v });
        }
        Ok(Self { u, v })
    }

    fn dist(&self, o: &Keypoint2D) -> f64 {
        ((self.u - o.u).powi(2) + (self.v - o.v).powi(2)).sqrt()
    }

    fn dist_squared(&self, o: &Keypoint2D) -> f64 {
        (self.u - o.u).powi(2) + (self.v - o.v).powi(2)
    }
}

impl TryFrom<[f64; 2]> for Keypoint2D {
    type Error = RewardError;
    fn try_from(a: [f64; 2]) -> Result<Self, Self::Error> {
        Keypoint2D::new(a[0], a[1])
    }
}

impl From<Keypoint2D> for [f64; 2] {
    fn from(k: Keypoint2D) -> Self {
        [k.u, k.v]
    }
}

/// Final-timestep action in the unified 8-slot layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVector8 {
    pub torso_dpos: Vec3,
    pub torso_drot: Rotation,
    pub left_dpos: Vec3,
    pub left_drot: Rotation,
    pub left_grip: f64,
    pub right_dpos: Vec3,
    pub right_drot: Rotation,
    pub right_grip: f64,
}

impl ActionVector8 {
    pub fn validate(&self) -> Result<(), RewardError> {
        for g in [self.left_grip, self.right_grip] {
            if !(0.0..=1.0).contains(&g) {
                return Err(RewardError::GripperOutOfRange(g));
            }
        }
        Ok(())
    }
}

/// All tunable reward weights and decay coefficients. The action weights
/// follow the 8-slot layout order and must sum to 1 so a perfect prediction
/// scores exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub waypoint_goal_weight: f64,
    pub waypoint_traj_weight: f64,
    pub consistency_text_weight: f64,
    pub consistency_spatial_weight: f64,
    pub action_weights: [f64; 8],
    pub action_decay: [f64; 8],
    pub format_weight: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            waypoint_goal_weight: 0.5,
            waypoint_traj_weight: 0.5,
            consistency_text_weight: 0.5,
            consistency_spatial_weight: 0.5,
            action_weights: [0.125; 8],
            // translation decays per meter, rotation per radian, gripper per
            // unit level, in layout order
            action_decay: [10.0, 2.0, 10.0, 2.0, 5.0, 10.0, 2.0, 5.0],
            format_weight: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let non_negative = self
            .action_weights
            .iter()
            .chain(self.action_decay.iter())
            .chain([
                &self.waypoint_goal_weight,
                &self.waypoint_traj_weight,
                &self.consistency_text_weight,
                &self.consistency_spatial_weight,
                &self.format_weight,
            ])
            .all(|w| w.is_finite() && *w >= 0.0);
        if !non_negative {
            return Err(RewardError::BadWeights("weights must be finite and non-negative".into()));
        }
        let sum: f64 = self.action_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::BadWeights(format!(
                "action weights sum to {sum}, expected 1"
            )));
        }
        if self.format_weight >= 1.0 {
            return Err(RewardError::BadWeights("format weight must stay below 1".into()));
        }
        Ok(())
    }
}

/// Intersection-over-union. Zero for disjoint boxes and for a zero-area union.
pub fn r_bbox(pred: &BBox, gt: &BBox) -> f64 {
    let inter = pred.intersection_area(gt);
    let union = pred.area() + gt.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Fraction of predicted keypoints falling inside the target region,
/// boundary inclusive.
pub fn r_keypoint(preds: &[Keypoint2D], region: &BBox) -> Result<f64, RewardError> {
    if preds.is_empty() {
        return Err(RewardError::NoKeypoints);
    }
    let inside = preds.iter().filter(|k| region.contains(k)).count();
    Ok(inside as f64 / preds.len() as f64)
}

/// Dynamic-time-warping distance between two point sequences, normalized by
/// the optimal alignment's length so the result is a mean per-step distance
/// (at most sqrt(2) for points in the unit square).
///
/// Among minimum-cost alignments the shortest one defines the normalization,
/// which keeps the result deterministic.
pub fn dtw(a: &[Waypoint2D], b: &[Waypoint2D]) -> Result<f64, RewardError> {
    if a.is_empty() || b.is_empty() {
        return Err(RewardError::EmptyTrajectory);
    }
    let (n, m) = (a.len(), b.len());
    // (cost, alignment length), lexicographically minimized
    let inf = (f64::INFINITY, usize::MAX);
    let mut dp = vec![inf; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    dp[at(0, 0)] = (0.0, 0);
    for i in 1..=n {
        for j in 1..=m {
            let mut best = dp[at(i - 1, j - 1)];
            for prev in [dp[at(i - 1, j)], dp[at(i, j - 1)]] {
                if prev < best {
                    best = prev;
                }
            }
            if best.0.is_finite() {
                dp[at(i, j)] = (best.0 + a[i - 1].dist(&b[j - 1]), best.1 + 1);
            }
        }
    }
    let (cost, len) = dp[at(n, m)];
    Ok(cost / len as f64)
}

/// Waypoint reward: the mean over arms of
/// `0.5 * r_goal + 0.5 * r_traj`, where `r_goal` clips squared start/end
/// deviations and `r_traj` clips the normalized DTW distance.
/// Trajectories must be normalized to the unit square.
pub fn r_waypoint(
    pred: &[Vec<Waypoint2D>],
    gt: &[Vec<Waypoint2D>],
    weights: &RewardWeights,
) -> Result<f64, RewardError> {
    if pred.len() != gt.len() {
        return Err(RewardError::ArmCountMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.is_empty() {
        return Err(RewardError::EmptyInput("no arm trajectories"));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.is_empty() || g.is_empty() {
            return Err(RewardError::EmptyTrajectory);
        }
        let start = (1.0 - g[0].dist_squared(&p[0])).max(0.0);
        let end = (1.0 - g[g.len() - 1].dist_squared(&p[p.len() - 1])).max(0.0);
        let r_goal = 0.5 * (start + end);
        let r_traj = (1.0 - dtw(g, p)?).max(0.0);
        total += weights.waypoint_goal_weight * r_goal + weights.waypoint_traj_weight * r_traj;
    }
    Ok(total / pred.len() as f64)
}

fn action_component_errors(pred: &ActionVector8, gt: &ActionVector8) -> [f64; 8] {
    [
        (pred.torso_dpos - gt.torso_dpos).norm(),
        rotation_distance(pred.torso_drot, gt.torso_drot),
        (pred.left_dpos - gt.left_dpos).norm(),
        rotation_distance(pred.left_drot, gt.left_drot),
        (pred.left_grip - gt.left_grip).abs(),
        (pred.right_dpos - gt.right_dpos).norm(),
        rotation_distance(pred.right_drot, gt.right_drot),
        (pred.right_grip - gt.right_grip).abs(),
    ]
}

/// Action reward: weighted sum of exponentially decayed per-component errors,
/// `sum_i w_i * exp(-k_i * f_i)`. Position errors are Euclidean, rotation
/// errors geodesic, gripper errors absolute differences. Equals 1 exactly
/// when prediction and ground truth match.
pub fn r_action(pred: &ActionVector8, gt: &ActionVector8, weights: &RewardWeights) -> f64 {
    let errors = action_component_errors(pred, gt);
    errors
        .iter()
        .zip(weights.action_weights.iter().zip(weights.action_decay.iter()))
        .map(|(f, (w, k))| w * (-k * f).exp())
        .sum()
}

/// Compiled output-format template. The pattern must match the whole output.
#[derive(Debug, Clone)]
pub struct FormatTemplate {
    regex: regex::Regex,
}

impl FormatTemplate {
    pub fn compile(pattern: &str) -> Result<Self, RewardError> {
        let anchored = format!(r"\A(?:{pattern})\z");
        let regex =
            regex::Regex::new(&anchored).map_err(|e| RewardError::BadTemplate(e.to_string()))?;
        Ok(Self { regex })
    }

    pub fn matches(&self, output: &str) -> bool {
        self.regex.is_match(output)
    }
}

/// Binary structural-compliance reward.
pub fn r_format(output: &str, template: &FormatTemplate) -> f64 {
    if template.matches(output) {
        1.0
    } else {
        0.0
    }
}

/// Consistency reward: equal split between the judge's text-reasonableness
/// and text-spatial scores. Judge failures propagate; they are never silently
/// scored as zero.
pub fn r_consistency(
    judge: &dyn ConsistencyJudge,
    request: &JudgeRequest,
    weights: &RewardWeights,
) -> Result<f64, RewardError> {
    let scores = judge.judge(request)?;
    Ok(weights.consistency_text_weight * scores.text
        + weights.consistency_spatial_weight * scores.text_spatial)
}

/// Scoring mode: `Full` covers every component; `Partial` (no visual
/// reasoning emitted) scores action and format only, plus consistency when a
/// judge was consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Full,
    Partial,
}

/// Component rewards present for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub bbox: Option<f64>,
    pub keypoint: Option<f64>,
    pub waypoint: Option<f64>,
    pub consistency: Option<f64>,
    pub action: Option<f64>,
    pub format: Option<f64>,
}

/// Per-sample reward record: components, aggregate, and the group-relative
/// advantage once a group has been scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    #[serde(flatten)]
    pub components: RewardComponents,
    pub total: f64,
    pub advantage: Option<f64>,
}

fn require(c: Option<f64>, name: &'static str) -> Result<f64, RewardError> {
    let v = c.ok_or(RewardError::MissingComponent(name))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(RewardError::ComponentOutOfRange { name, value: v });
    }
    Ok(v)
}

/// Aggregate component rewards: format contributes its fixed weight and the
/// remaining mass is shared equally by the present non-format components.
pub fn total_reward(
    components: &RewardComponents,
    weights: &RewardWeights,
    mode: RewardMode,
) -> Result<f64, RewardError> {
    weights.validate()?;
    let format = require(components.format, "format")?;
    let mut others: Vec<f64> = Vec::with_capacity(5);
    match mode {
        RewardMode::Full => {
            others.push(require(components.bbox, "bbox")?);
            others.push(require(components.keypoint, "keypoint")?);
            others.push(require(components.waypoint, "waypoint")?);
            others.push(require(components.consistency, "consistency")?);
            others.push(require(components.action, "action")?);
        }
        RewardMode::Partial => {
            others.push(require(components.action, "action")?);
            if components.consistency.is_some() {
                others.push(require(components.consistency, "consistency")?);
            }
        }
    }
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    Ok(weights.format_weight * format + (1.0 - weights.format_weight) * mean)
}
