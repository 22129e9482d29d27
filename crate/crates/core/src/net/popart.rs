//! PopArt output normalization: running mean/second-moment statistics per
//! critic head, with the head's weights and bias rewritten on every statistic
//! update so denormalized predictions are preserved.

use super::{Dense, NetError};

pub const POPART_SIGMA_MIN: f64 = 1e-4;
pub const POPART_SIGMA_MAX: f64 = 1e6;

/// Running target statistics for one head. Before the first update
/// `mu = 0` and `sigma = 1`, i.e. the identity normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopArtStats {
    pub mu: f64,
    /// Running second moment of the raw targets.
    pub nu: f64,
    pub beta: f64,
    pub sigma_min: f64,
}

impl PopArtStats {
    pub fn identity(beta: f64) -> Self {
        PopArtStats { mu: 0.0, nu: 1.0, beta, sigma_min: POPART_SIGMA_MIN }
    }

    pub fn sigma(&self) -> f64 {
        let variance = (self.nu - self.mu * self.mu).max(self.sigma_min * self.sigma_min);
        variance.sqrt().clamp(self.sigma_min, POPART_SIGMA_MAX)
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mu) / self.sigma()
    }

    pub fn denormalize(&self, normalized: f64) -> f64 {
        self.sigma() * normalized + self.mu
    }
}

/// Outcome flags of one statistics update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PopArtUpdate {
    /// Target variance fell below `sigma_min^2`, so `sigma` is clamped; the
    /// update proceeds but callers may want to surface a warning.
    pub sigma_clamped: bool,
}

/// Moves the statistics towards the batch (`mu' = mu + beta (mean - mu)`,
/// likewise for the second moment) and rewrites the head so that
/// `sigma' * y' + mu' == sigma * y + mu` for every input: weights scale by
/// `sigma/sigma'`, bias becomes `(sigma * b + mu - mu') / sigma'`.
pub fn update_and_rescale(
    stats: &mut PopArtStats,
    head: &mut Dense,
    raw_targets: &[f64],
) -> Result<PopArtUpdate, NetError> {
    if raw_targets.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let n = raw_targets.len() as f64;
    let mean = raw_targets.iter().sum::<f64>() / n;
    let mean_sq = raw_targets.iter().map(|t| t * t).sum::<f64>() / n;

    // Delta form keeps the fixed point exact: a batch whose statistics match
    // the running ones contributes deltas of exactly zero.
    let new = PopArtStats {
        mu: stats.mu + stats.beta * (mean - stats.mu),
        nu: stats.nu + stats.beta * (mean_sq - stats.nu),
        ..*stats
    };
    let (sigma_old, sigma_new) = (stats.sigma(), new.sigma());
    let update = PopArtUpdate {
        sigma_clamped: new.nu - new.mu * new.mu < new.sigma_min * new.sigma_min,
    };
    if new.mu == stats.mu && sigma_new == sigma_old {
        *stats = new;
        return Ok(update);
    }

    let scale = sigma_old / sigma_new;
    head.w *= scale;
    for b in head.b.iter_mut() {
        *b = (sigma_old * *b + stats.mu - new.mu) / sigma_new;
    }
    *stats = new;
    Ok(update)
}
