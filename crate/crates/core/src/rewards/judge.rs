//! Consistency-judge contract and deterministic local implementations.
//!
//! The real judge is an external vision-language model behind this trait.
//! The toolkit pins the request/response schema and ships two local
//! implementations: [`FixedJudge`] for tests and [`HeuristicJudge`], a
//! deterministic string/geometry stand-in usable in offline pipelines.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge returned score {score} outside [0, 1] for {field}")]
    InvalidScore { field: &'static str, score: f64 },
    #[error("judge failed: {0}")]
    Failed(String),
}

/// Everything a judge sees for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    /// Opaque reference to the observation image (path, URL, or id).
    pub image_ref: String,
    pub instruction: String,
    pub ground_truth_text: String,
    /// The model output after structural parsing.
    pub parsed_output: String,
}

/// Two scores in [0, 1]: text reasonableness and text-spatial consistency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub text: f64,
    pub text_spatial: f64,
}

impl JudgeScores {
    pub fn new(text: f64, text_spatial: f64) -> Result<Self, JudgeError> {
        if !(0.0..=1.0).contains(&text) {
            return Err(JudgeError::InvalidScore { field: "text", score: text });
        }
        if !(0.0..=1.0).contains(&text_spatial) {
            return Err(JudgeError::InvalidScore { field: "text_spatial", score: text_spatial });
        }
        Ok(Self { text, text_spatial })
    }
}

/// Synchronous judge contract. Implementations must either be safe for
/// concurrent requests or declare themselves single-flight, in which case
/// batch scoring falls back to sequential calls.
pub trait ConsistencyJudge: Sync {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeScores, JudgeError>;

    fn single_flight(&self) -> bool {
        false
    }
}

/// Returns the same scores for every request.
#[derive(Debug, Clone, Copy)]
pub struct FixedJudge {
    scores: JudgeScores,
}

impl FixedJudge {
    pub fn new(text: f64, text_spatial: f64) -> Self {
        Self {
            scores: JudgeScores::new(text, text_spatial).expect("fixed scores must be in [0, 1]"),
        }
    }
}

impl ConsistencyJudge for FixedJudge {
    fn judge(&self, _request: &JudgeRequest) -> Result<JudgeScores, JudgeError> {
        Ok(self.scores)
    }
}

/// Always fails; exercises error propagation.
#[derive(Debug, Clone, Copy)]
pub struct FailingJudge;

impl ConsistencyJudge for FailingJudge {
    fn judge(&self, _request: &JudgeRequest) -> Result<JudgeScores, JudgeError> {
        Err(JudgeError::Failed("judge backend unavailable".into()))
    }
}

/// Deterministic heuristic judge.
///
/// Text score: exact match scores 1, otherwise the Jaccard similarity of the
/// lowercase word sets. Spatial score: bracketed coordinate tuples are
/// extracted from both texts and greedily matched within a small tolerance;
/// the score is the matched fraction of the larger tuple set (1 when neither
/// text contains coordinates).
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicJudge;

const COORD_TOLERANCE: f64 = 0.05;

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn extract_tuples(text: &str) -> Vec<Vec<f64>> {
    let mut tuples = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('[') {
        let Some(end_rel) = rest[start + 1..].find(']') else { break };
        let inner = &rest[start + 1..start + 1 + end_rel];
        let nums: Option<Vec<f64>> = inner
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok())
            .collect();
        if let Some(nums) = nums {
            if !nums.is_empty() {
                tuples.push(nums);
            }
        }
        rest = &rest[start + 1 + end_rel + 1..];
    }
    tuples
}

fn tuples_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= COORD_TOLERANCE)
}

impl ConsistencyJudge for HeuristicJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeScores, JudgeError> {
        let text = if request.parsed_output == request.ground_truth_text {
            1.0
        } else {
            let a = word_set(&request.parsed_output);
            let b = word_set(&request.ground_truth_text);
            let inter = a.intersection(&b).count();
            let union = a.union(&b).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        };

        let gt_tuples = extract_tuples(&request.ground_truth_text);
        let out_tuples = extract_tuples(&request.parsed_output);
        let text_spatial = if gt_tuples.is_empty() && out_tuples.is_empty() {
            1.0
        } else {
            let mut used = vec![false; gt_tuples.len()];
            let mut matched = 0usize;
            for out in &out_tuples {
                if let Some(pos) = gt_tuples
                    .iter()
                    .enumerate()
                    .position(|(i, gt)| !used[i] && tuples_match(out, gt))
                {
                    used[pos] = true;
                    matched += 1;
                }
            }
            matched as f64 / gt_tuples.len().max(out_tuples.len()) as f64
        };

        JudgeScores::new(text, text_spatial)
    }
}
