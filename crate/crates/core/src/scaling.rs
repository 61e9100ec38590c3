//! Data-constrained scaling law over (unique tokens, repetitions, loss)
//! observations.
//!
//! The loss model is `L = B / D'^beta + E` with effective data
//! `D' = U + U * R* * (1 - exp(-R / R*))`: repeated data contributes with
//! exponentially diminishing value, saturating at `U * (1 + R*)`.
//!
//! Fitting is deterministic: a log-spaced grid over `(beta, R*)` seeds the
//! nonlinear parameters (with `B` and `E` solved by linear least squares in
//! each cell), and a damped Gauss-Newton refinement polishes the best cell.
//! Steps are only accepted when the residual improves, so refinement never
//! regresses below the grid solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("need at least {required} observations spanning >= 2 distinct repetition counts, got {provided} over {distinct} distinct")]
    InsufficientData { required: usize, provided: usize, distinct: usize },
    #[error("degenerate observations: {0}")]
    DegenerateData(String),
    #[error("observation {index}: {reason}")]
    BadObservation { index: usize, reason: String },
}

/// Fitted law parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Loss-scale coefficient, > 0.
    pub b: f64,
    /// Scaling exponent, > 0.
    pub beta: f64,
    /// Asymptotic loss floor, >= 0.
    pub e: f64,
    /// Repetition-decay constant, > 0.
    pub r_star: f64,
}

impl ScalingParams {
    pub fn validate(&self) -> Result<(), ScalingError> {
        let ok = self.b.is_finite()
            && self.b > 0.0
            && self.beta.is_finite()
            && self.beta > 0.0
            && self.e.is_finite()
            && self.e >= 0.0
            && self.r_star.is_finite()
            && self.r_star > 0.0;
        if !ok {
            return Err(ScalingError::InvalidParam(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One training run: unique-token count, repetition count, final loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingObservation {
    pub unique_tokens: f64,
    pub repetitions: f64,
    pub loss: f64,
}

impl ScalingObservation {
    fn validate(&self, index: usize) -> Result<(), ScalingError> {
        let bad = |reason: &str| ScalingError::BadObservation { index, reason: reason.into() };
        if !(self.unique_tokens.is_finite() && self.unique_tokens > 0.0) {
            return Err(bad("unique token count must be positive"));
        }
        if !(self.repetitions.is_finite() && self.repetitions >= 0.0) {
            return Err(bad("repetition count must be non-negative"));
        }
        if !self.loss.is_finite() {
            return Err(bad("loss must be finite"));
        }
        Ok(())
    }
}

/// Effective data after discounting repetitions:
/// `U + U * R* * (1 - exp(-R / R*))`. Monotone increasing in `R`, bounded by
/// `U * (1 + R*)`.
pub fn effective_data(unique_tokens: f64, repetitions: f64, r_star: f64) -> Result<f64, ScalingError> {
    if !(unique_tokens.is_finite() && unique_tokens > 0.0) {
        return Err(ScalingError::InvalidParam(format!("unique_tokens = {unique_tokens}")));
    }
    if !(repetitions.is_finite() && repetitions >= 0.0) {
        return Err(ScalingError::InvalidParam(format!("repetitions = {repetitions}")));
    }
    if !(r_star.is_finite() && r_star > 0.0) {
        return Err(ScalingError::InvalidParam(format!("r_star = {r_star}")));
    }
    Ok(unique_tokens + unique_tokens * r_star * (1.0 - (-repetitions / r_star).exp()))
}

/// Predicted loss at one configuration: `B / D'^beta + E`.
pub fn predict_loss(params: &ScalingParams, unique_tokens: f64, repetitions: f64) -> f64 {
    let d = effective_data(unique_tokens, repetitions, params.r_star)
        .expect("valid params and inputs");
    params.b / d.powf(params.beta) + params.e
}

/// Seeding-grid and refinement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub beta_range: (f64, f64),
    pub r_star_range: (f64, f64),
    pub grid_cells: (usize, usize),
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            beta_range: (0.01, 2.0),
            r_star_range: (0.1, 100.0),
            grid_cells: (50, 50),
            max_iterations: 200,
        }
    }
}

/// Fit result: parameters plus diagnostics. `residual_norm` is the L2 norm
/// of the loss residuals; `grid_residual_norm` is the best seeding-cell
/// residual before refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub params: ScalingParams,
    pub residual_norm: f64,
    pub grid_residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Linear least squares for (B, E) at fixed basis values `x_i = D'_i^-beta`,
/// with B > 0 and E >= 0 enforced by constrained fallbacks.
fn solve_linear(xs: &[f64], losses: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sy: f64 = losses.iter().sum();
    let sxy: f64 = xs.iter().zip(losses).map(|(x, y)| x * y).sum();
    let det = sxx * n - sx * sx;
    let (mut b, mut e) = if det.abs() > 1e-300 {
        ((sxy * n - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    } else {
        return None;
    };
    if e < 0.0 {
        e = 0.0;
        if sxx <= 0.0 {
            return None;
        }
        b = sxy / sxx;
    }
    if b <= 0.0 || !b.is_finite() || !e.is_finite() {
        return None;
    }
    Some((b, e))
}

fn residual_norm(params: &ScalingParams, obs: &[ScalingObservation]) -> f64 {
    obs.iter()
        .map(|o| {
            let r = predict_loss(params, o.unique_tokens, o.repetitions) - o.loss;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Solve the 4x4 system `m x = rhs` by Gaussian elimination with partial
/// pivoting. Returns `None` for singular systems.
fn solve4(mut m: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..4 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Residuals and Jacobian in the internal parameterization
/// `[ln B, ln beta, E, ln R*]` (positivity of B, beta, R* by construction).
fn residuals_and_jacobian(
    p: &[f64; 4],
    obs: &[ScalingObservation],
) -> (Vec<f64>, Vec<[f64; 4]>) {
    let (b, beta, e, r_star) = (p[0].exp(), p[1].exp(), p[2], p[3].exp());
    let mut res = Vec::with_capacity(obs.len());
    let mut jac = Vec::with_capacity(obs.len());
    for o in obs {
        let decay = (-o.repetitions / r_star).exp();
        let d = o.unique_tokens + o.unique_tokens * r_star * (1.0 - decay);
        let d_pow = d.powf(-beta);
        let pred = b * d_pow + e;
        res.push(pred - o.loss);
        // dD'/dR* = U * [(1 - exp(-R/R*)) - (R/R*) exp(-R/R*)]
        let dd_drstar =
            o.unique_tokens * ((1.0 - decay) - (o.repetitions / r_star) * decay);
        let dpred_db = d_pow; // d/dB
        let dpred_dbeta = -b * d_pow * d.ln(); // d/dbeta
        let dpred_de = 1.0;
        let dpred_drstar = -b * beta * d.powf(-beta - 1.0) * dd_drstar;
        // chain through the log parameterization
        jac.push([
            dpred_db * b,
            dpred_dbeta * beta,
            dpred_de,
            dpred_drstar * r_star,
        ]);
    }
    (res, jac)
}

pub fn fit(observations: &[ScalingObservation]) -> Result<ScalingFit, ScalingError> {
    fit_with_options(observations, &FitOptions::default())
}

pub fn fit_with_options(
    observations: &[ScalingObservation],
    options: &FitOptions,
) -> Result<ScalingFit, ScalingError> {
    for (i, o) in observations.iter().enumerate() {
        o.validate(i)?;
    }
    let mut distinct: Vec<u64> = observations.iter().map(|o| o.repetitions.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if observations.len() < 4 || distinct.len() < 2 {
        return Err(ScalingError::InsufficientData {
            required: 4,
            provided: observations.len(),
            distinct: distinct.len(),
        });
    }

    let losses: Vec<f64> = observations.iter().map(|o| o.loss).collect();
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let spread = losses
        .iter()
        .map(|l| (l - mean_loss).abs())
        .fold(0.0f64, f64::max);
    if spread <= 1e-12 * mean_loss.abs().max(1.0) {
        return Err(ScalingError::DegenerateData(
            "losses are constant; the exponent is unidentifiable".into(),
        ));
    }

    // Grid seeding: linear least squares for (B, E) in every (beta, R*) cell.
    let betas = log_space(options.beta_range.0, options.beta_range.1, options.grid_cells.0);
    let r_stars = log_space(options.r_star_range.0, options.r_star_range.1, options.grid_cells.1);
    let mut best: Option<(ScalingParams, f64)> = None;
    for &r_star in &r_stars {
        let dprimes: Vec<f64> = observations
            .iter()
            .map(|o| effective_data(o.unique_tokens, o.repetitions, r_star).expect("validated"))
            .collect();
        for &beta in &betas {
            let xs: Vec<f64> = dprimes.iter().map(|d| d.powf(-beta)).collect();
            let Some((b, e)) = solve_linear(&xs, &losses) else { continue };
            let params = ScalingParams { b, beta, e, r_star };
            let r = residual_norm(&params, observations);
            if r.is_finite() && best.as_ref().map_or(true, |(_, br)| r < *br) {
                best = Some((params, r));
            }
        }
    }
    let (seed_params, grid_residual) = best.ok_or_else(|| {
        ScalingError::DegenerateData("no admissible grid cell; losses may not follow a decaying power law".into())
    })?;

    // Damped Gauss-Newton refinement in log space.
    let mut p = [
        seed_params.b.ln(),
        seed_params.beta.ln(),
        seed_params.e,
        seed_params.r_star.ln(),
    ];
    let mut current = grid_residual;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        let (res, jac) = residuals_and_jacobian(&p, observations);
        // normal equations J^T J + lambda I, J^T r
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (r, row) in res.iter().zip(&jac) {
            for a in 0..4 {
                jtr[a] += row[a] * r;
                for b in 0..4 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj;
            for d in 0..4 {
                damped[d][d] += lambda * (1.0 + jtj[d][d]);
            }
            let Some(step) = solve4(damped, [-jtr[0], -jtr[1], -jtr[2], -jtr[3]]) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = [0.0f64; 4];
            for d in 0..4 {
                trial[d] = p[d] + step[d];
            }
            trial[2] = trial[2].max(0.0);
            let trial_params = ScalingParams {
                b: trial[0].exp(),
                beta: trial[1].exp(),
                e: trial[2],
                r_star: trial[3].exp(),
            };
            if trial_params.validate().is_err() {
                lambda *= 10.0;
                continue;
            }
            let r = residual_norm(&trial_params, observations);
            if r.is_finite() && r < current {
                let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                let improvement = current - r;
                p = trial;
                current = r;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if step_norm < 1e-13 || improvement < 1e-15 * current.max(1e-30) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no further improvement possible at any damping
            converged = current.is_finite();
            break;
        }
        if converged {
            break;
        }
    }

    let params = ScalingParams { b: p[0].exp(), beta: p[1].exp(), e: p[2], r_star: p[3].exp() };
    params.validate().map_err(|_| {
        ScalingError::DegenerateData("refinement left the admissible parameter region".into())
    })?;
    Ok(ScalingFit {
        params,
        residual_norm: current,
        grid_residual_norm: grid_residual,
        converged,
        iterations,
    })
}
