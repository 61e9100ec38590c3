//! Uniform per-dimension binning, the baseline discretization scheme.
//!
//! A flattened action chunk of `D` dimensions over `H` timesteps always costs
//! `D * H` tokens; this is the count the spatial tokenizer is measured
//! against.

use super::TokenizerError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub bins_per_dim: u32,
    /// Per-dimension (min, max) value ranges.
    pub ranges: Vec<(f64, f64)>,
}

impl BinningSpec {
    pub fn validate(&self) -> Result<(), TokenizerError> {
        if self.bins_per_dim < 2 {
            return Err(TokenizerError::InvalidBinning(format!(
                "need at least 2 bins, got {}",
                self.bins_per_dim
            )));
        }
        if self.ranges.is_empty() {
            return Err(TokenizerError::InvalidBinning("no dimension ranges".into()));
        }
        for (i, &(lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(TokenizerError::InvalidBinning(format!(
                    "dimension {i}: invalid range ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }
}

/// Fit per-dimension ranges as the data min/max widened by a relative margin.
pub fn fit_binning_spec(
    values: &[f64],
    dims: usize,
    bins_per_dim: u32,
    margin: f64,
) -> Result<BinningSpec, TokenizerError> {
    if dims == 0 || values.is_empty() || values.len() % dims != 0 {
        return Err(TokenizerError::InvalidBinning(format!(
            "{} values do not form complete {dims}-dimensional frames",
            values.len()
        )));
    }
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dims];
    for (i, &v) in values.iter().enumerate() {
        let d = i % dims;
        ranges[d].0 = ranges[d].0.min(v);
        ranges[d].1 = ranges[d].1.max(v);
    }
    let ranges = ranges
        .into_iter()
        .map(|(lo, hi)| {
            let pad = ((hi - lo).abs()).max(1e-9) * margin;
            (lo - pad, hi + pad)
        })
        .collect();
    let spec = BinningSpec { bins_per_dim, ranges };
    spec.validate()?;
    Ok(spec)
}

/// Quantize a flattened chunk; out-of-range values clamp to the range edges.
pub fn binning_encode(chunk: &[f64], spec: &BinningSpec) -> Result<Vec<u32>, TokenizerError> {
    spec.validate()?;
    let dims = spec.dims();
    if chunk.len() % dims != 0 {
        return Err(TokenizerError::InvalidBinning(format!(
            "chunk of {} values does not divide into {dims}-dimensional frames",
            chunk.len()
        )));
    }
    let bins = spec.bins_per_dim as f64;
    Ok(chunk
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = spec.ranges[i % dims];
            let x = v.clamp(lo, hi);
            let idx = ((x - lo) / (hi - lo) * bins).floor();
            (idx as u32).min(spec.bins_per_dim - 1)
        })
        .collect())
}

/// Inverse of [`binning_encode`]: every token maps to its bin center.
pub fn binning_decode(tokens: &[u32], spec: &BinningSpec) -> Result<Vec<f64>, TokenizerError> {
    spec.validate()?;
    let dims = spec.dims();
    if tokens.len() % dims != 0 {
        return Err(TokenizerError::InvalidBinning(format!(
            "token stream of {} does not divide into {dims}-dimensional frames",
            tokens.len()
        )));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for (i, &t) in tokens.iter().enumerate() {
        if t >= spec.bins_per_dim {
            return Err(TokenizerError::InvalidBinning(format!(
                "token {t} out of range for {} bins",
                spec.bins_per_dim
            )));
        }
        let (lo, hi) = spec.ranges[i % dims];
        let width = (hi - lo) / spec.bins_per_dim as f64;
        out.push(lo + (t as f64 + 0.5) * width);
    }
    Ok(out)
}
