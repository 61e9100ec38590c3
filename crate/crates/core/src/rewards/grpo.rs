//! Group-relative policy-optimization arithmetic: z-scored group advantages,
//! the clipped surrogate objective, the net-superiority comparison metric,
//! and a reward-variance pre-filter.

use super::RewardError;

/// KL penalty coefficient default.
pub const DEFAULT_KL_COEFFICIENT: f64 = 0.04;
/// Lower clipping offset default (ratio clipped below at `1 - eps_low`).
pub const DEFAULT_EPSILON_LOW: f64 = 0.2;
/// Upper clipping offset default; raised above the lower bound to keep
/// low-probability exploratory tokens alive.
pub const DEFAULT_EPSILON_HIGH: f64 = 0.28;

const STD_GUARD: f64 = 1e-8;

/// Z-score rewards within a group: `(r_i - mean) / std` with the population
/// standard deviation. A near-zero spread yields all-zero advantages instead
/// of dividing by noise.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    let g = rewards.len();
    if g < 2 {
        return Err(RewardError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < STD_GUARD {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clipped surrogate objective over one group:
/// `mean(min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A) - beta * kl)`.
/// Infinite clip bounds recover the plain unclipped objective.
pub fn grpo_objective(
    ratios: &[f64],
    advantages: &[f64],
    kl: &[f64],
    beta: f64,
    clip: (f64, f64),
) -> Result<f64, RewardError> {
    if ratios.len() != advantages.len() || ratios.len() != kl.len() {
        return Err(RewardError::LengthMismatch(format!(
            "{} ratios, {} advantages, {} kl terms",
            ratios.len(),
            advantages.len(),
            kl.len()
        )));
    }
    if ratios.is_empty() {
        return Err(RewardError::EmptyInput("objective over zero samples"));
    }
    let (eps_low, eps_high) = clip;
    let mut total = 0.0;
    for i in 0..ratios.len() {
        let clipped = ratios[i].clamp(1.0 - eps_low, 1.0 + eps_high);
        let surrogate = (ratios[i] * advantages[i]).min(clipped * advantages[i]);
        total += surrogate - beta * kl[i];
    }
    Ok(total / ratios.len() as f64)
}

/// Net superiority rate over paired scores `(candidate, baseline)`:
/// `(wins - losses) / total`, ties counting only in the denominator.
pub fn nsr(paired: &[(f64, f64)]) -> Result<f64, RewardError> {
    if paired.is_empty() {
        return Err(RewardError::EmptyInput("paired score list"));
    }
    let mut wins = 0i64;
    let mut losses = 0i64;
    for &(candidate, baseline) in paired {
        if candidate > baseline {
            wins += 1;
        } else if candidate < baseline {
            losses += 1;
        }
    }
    Ok((wins - losses) as f64 / paired.len() as f64)
}

/// Indices of reward groups with enough spread to carry gradient signal.
/// Groups whose population standard deviation falls at or below `min_std`
/// (all-identical rewards being the extreme case) are dropped.
pub fn filter_by_reward_variance(groups: &[Vec<f64>], min_std: f64) -> Vec<usize> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| {
            if g.len() < 2 {
                return false;
            }
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            let var = g.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g.len() as f64;
            var.sqrt() > min_std
        })
        .map(|(i, _)| i)
        .collect()
}
