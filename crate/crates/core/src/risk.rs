//! Confidence bounds for nonconvex scenario programs with scenario discarding.
//!
//! For `S` drawn scenarios of which `R` are discarded (`P = S - R` kept), the
//! probability that the scenario solution violates its chance constraint by
//! more than `eps(s*)` is bounded by
//!
//! ```text
//!     beta(S, P) = C(S, P) * sum_{s=0}^{P-1} C(P, s) * (1 - eps(s))^(P - s)
//! ```
//!
//! with `eps(P) = 1`. Without discarding (`R = 0`) the leading factor is one.
//! Every binomial coefficient is handled in log space: `C(53457, 53407)`
//! is far outside the range of any fixed-width type.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Largest sample size `solve_sample_size` will consider by default.
pub const DEFAULT_SAMPLE_CEILING: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("no sample size up to {ceiling} reaches eps = {eps_target} (eps at ceiling: {eps_at_ceiling})")]
    Capacity {
        ceiling: u64,
        eps_target: f64,
        eps_at_ceiling: f64,
    },
}

/// Per-stage risk specification together with the sample size it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    /// Acceptable violation probability per stage.
    pub eps: f64,
    /// Confidence parameter (probability that the bound itself fails).
    pub beta: f64,
    /// Upper bound on the number of supporting scenarios.
    pub s_bar: usize,
    /// Scenarios removed by the discarding rule.
    pub discard: usize,
    /// Scenarios kept after discarding among the nearest `keep + discard`.
    pub keep: usize,
    /// Number of scenarios drawn per stage.
    pub sample_size: usize,
}

impl RiskProfile {
    /// Builds a profile and computes the smallest admissible sample size.
    pub fn derive(
        eps: f64,
        beta: f64,
        s_bar: usize,
        discard: usize,
        keep: usize,
    ) -> Result<Self, RiskError> {
        if s_bar == 0 {
            return Err(RiskError::InvalidArgument("s_bar must be at least 1".into()));
        }
        let sample_size =
            solve_sample_size(eps, beta, s_bar as u64, discard as u64, DEFAULT_SAMPLE_CEILING)?;
        let profile = Self {
            eps,
            beta,
            s_bar,
            discard,
            keep,
            sample_size: sample_size as usize,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        check_probability("eps", self.eps)?;
        check_probability("beta", self.beta)?;
        if self.s_bar == 0 {
            return Err(RiskError::InvalidArgument("s_bar must be at least 1".into()));
        }
        if self.sample_size <= self.discard || self.sample_size - self.discard < self.s_bar {
            return Err(RiskError::InvalidArgument(format!(
                "sample size {} leaves fewer than s_bar = {} scenarios after discarding {}",
                self.sample_size, self.s_bar, self.discard
            )));
        }
        Ok(())
    }

    /// Scenarios considered by the optimization after discarding.
    pub fn kept_after_discard(&self) -> usize {
        self.sample_size - self.discard
    }

    /// Violation level certified when `support` scenarios are supporting.
    pub fn certified_eps(&self, support: usize) -> Result<f64, RiskError> {
        eps_allocation(
            self.sample_size as u64,
            self.kept_after_discard() as u64,
            support as u64,
            self.beta,
        )
    }
}

fn check_probability(name: &str, p: f64) -> Result<(), RiskError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RiskError::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Natural log of the binomial coefficient `C(n, k)`.
///
/// Small `min(k, n - k)` is accumulated as a product of ratios, which keeps
/// full precision; larger arguments go through `ln_gamma`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n, "ln_choose({n}, {k}) with k > n");
    let k = k.min(n - k);
    if k == 0 {
        return 0.0;
    }
    if k <= 64 {
        let base = (n - k) as f64;
        (1..=k).map(|i| ((base + i as f64) / i as f64).ln()).sum()
    } else {
        ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
    }
}

/// Violation level `eps(s)` under the uniform budget split: each of the `P`
/// terms of the confidence sum receives `beta / (P * C(S, P))`.
///
/// Requires `0 <= s <= P <= S`, `P >= 1` and `0 < beta < 1`.
pub fn eps_allocation(
    sample_size: u64,
    kept: u64,
    support: u64,
    beta: f64,
) -> Result<f64, RiskError> {
    check_probability("beta", beta)?;
    if kept == 0 || kept > sample_size || support > kept {
        return Err(RiskError::InvalidArgument(format!(
            "need 0 <= s <= P <= S and P >= 1, got S = {sample_size}, P = {kept}, s = {support}"
        )));
    }
    if support == kept {
        return Ok(1.0);
    }
    let log_share = beta.ln()
        - (kept as f64).ln()
        - ln_choose(sample_size, kept)
        - ln_choose(kept, support);
    let exponent = log_share / (kept - support) as f64;
    // Rounded up: near 1 a single ulp of eps moves (1 - eps)^(P - s) by orders of
    // magnitude, and only the upward direction keeps the share below beta / P.
    let eps = (-exponent.exp_m1()).next_up().min(1.0);
    if !eps.is_finite() || eps <= 0.0 || eps > 1.0 {
        return Err(RiskError::Numeric(format!(
            "eps({support}) = {eps} left (0, 1] for S = {sample_size}, P = {kept}, beta = {beta} \
             (log share {log_share}, exponent {exponent})"
        )));
    }
    Ok(eps)
}

/// `eps(s)` for `s = 0..=max_support`, clipped at `P`.
pub fn eps_table(
    sample_size: u64,
    kept: u64,
    max_support: u64,
    beta: f64,
) -> Result<Vec<f64>, RiskError> {
    (0..=max_support.min(kept))
        .map(|s| eps_allocation(sample_size, kept, s, beta))
        .collect()
}

/// Evaluates `C(S, P) * sum_{s<P} C(P, s) (1 - eps(s))^(P - s)` with
/// log-sum-exp accumulation.
pub fn confidence_of<F>(sample_size: u64, kept: u64, eps_fn: F) -> Result<f64, RiskError>
where
    F: Fn(u64) -> f64,
{
    if kept > sample_size {
        return Err(RiskError::InvalidArgument(format!(
            "P = {kept} exceeds S = {sample_size}"
        )));
    }
    let lead = ln_choose(sample_size, kept);
    let mut logs = Vec::with_capacity(kept as usize);
    for s in 0..kept {
        let eps = eps_fn(s);
        if !(0.0..=1.0).contains(&eps) {
            return Err(RiskError::InvalidArgument(format!(
                "eps({s}) = {eps} outside [0, 1]"
            )));
        }
        if eps == 1.0 {
            continue;
        }
        logs.push(lead + ln_choose(kept, s) + (kept - s) as f64 * (-eps).ln_1p());
    }
    Ok(log_sum_exp(&logs).exp())
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Smallest `S` with `eps_allocation(S, S - R, s_bar, beta) <= eps_target`.
///
/// Doubles an upper bracket, then bisects. The bound is monotone in `S` once
/// `P > s_bar`, so the result satisfies the target at `S` and misses it at
/// `S - 1`.
pub fn solve_sample_size(
    eps_target: f64,
    beta: f64,
    s_bar: u64,
    discard: u64,
    ceiling: u64,
) -> Result<u64, RiskError> {
    check_probability("eps_target", eps_target)?;
    check_probability("beta", beta)?;
    let meets = |s: u64| -> Result<bool, RiskError> {
        Ok(eps_allocation(s, s - discard, s_bar, beta)? <= eps_target)
    };

    // P = s_bar gives eps = 1, which never meets a target below one.
    let mut lo = (discard + s_bar).max(discard + 1);
    if meets(lo)? {
        return Ok(lo);
    }
    let mut hi = lo + 1;
    while !meets(hi)? {
        if hi >= ceiling {
            return Err(RiskError::Capacity {
                ceiling,
                eps_target,
                eps_at_ceiling: eps_allocation(ceiling, ceiling - discard, s_bar, beta)?,
            });
        }
        lo = hi;
        hi = (hi * 2).min(ceiling);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
