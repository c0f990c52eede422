//! Expected-MSE utility formulas for federated mean estimation, plus the
//! pluggable oracle utility.
//!
//! All arithmetic is plain `f64`. Join decisions elsewhere compare these
//! values against costs with exact `>=`, so the evaluation order here is
//! fixed and must not be reshuffled.

use crate::model::OracleSpec;

/// Expected MSE of the purely local estimator: `1/n_i + sigma2`.
pub fn local_mse(n_i: u64, sigma2: f64) -> f64 {
    1.0 / n_i as f64 + sigma2
}

/// Expected MSE of the coalition estimator for member `i`, exactly as derived
/// in the coalition-MSE lemma:
/// `1/N + ((sum_{j!=i} n_j^2 + (N - n_i)^2)/N^2 + 2 n_i/N - 1) * sigma2`.
///
/// Note that `local_mse - coalition_mse` does not reproduce
/// [`utility_gain`]: the sign of the `(N - n_i)^2` term differs. The
/// utility-gain expression is the canonical one.
pub fn coalition_mse(samples: &[u64], i: usize, sigma2: f64) -> f64 {
    let n_i = samples[i] as f64;
    let total = samples.iter().sum::<u64>() as f64;
    let others_sq = others_square_sum(samples, i);
    let rest = total - n_i;
    1.0 / total + ((others_sq + rest * rest) / (total * total) + 2.0 * n_i / total - 1.0) * sigma2
}

fn others_square_sum(samples: &[u64], i: usize) -> f64 {
    samples
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &n)| (n * n) as f64)
        .sum()
}

/// Utility gain of member `i` of a coalition with the given sample counts:
/// `-1/N + 1/n_i - ((sum_{j!=i} n_j^2 - (N - n_i)^2)/N^2 - 2(N - n_i)/N) * sigma2`.
pub fn utility_gain(samples: &[u64], i: usize, sigma2: f64) -> f64 {
    let n_i = samples[i] as f64;
    let total = samples.iter().sum::<u64>() as f64;
    let others_sq = others_square_sum(samples, i);
    let rest = total - n_i;
    -1.0 / total + 1.0 / n_i
        - ((others_sq - rest * rest) / (total * total) - 2.0 * rest / total) * sigma2
}

/// Homogeneous utility gain with `k` clients of `n` samples each:
/// `(K-1)/(K n) + (3K^2 - 5K + 2)/K^2 * sigma2`, and zero for `K <= 1`.
pub fn utility_gain_homogeneous(k: u64, n: u64, sigma2: f64) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    homogeneous_formula(k as f64, n as f64, sigma2)
}

fn homogeneous_formula(k: f64, n: f64, sigma2: f64) -> f64 {
    (k - 1.0) / (k * n) + (3.0 * k * k - 5.0 * k + 2.0) / (k * k) * sigma2
}

/// Fixed/additional decomposition of a member's utility gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSplit {
    /// Gain from the other members' data; the same for every member.
    pub fixed_gain: f64,
    /// Gain attributable to the member's own samples.
    pub additional_gain: f64,
    /// `additional_gain - cost`; the ordering key for inferred coalitions.
    pub z_score: f64,
}

impl GainSplit {
    pub fn total(&self) -> f64 {
        self.fixed_gain + self.additional_gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("coalition total {total} is smaller than the member's own samples {own}")]
pub struct SplitError {
    pub own: u64,
    pub total: u64,
}

/// Splits the utility gain of a member with `n_i` samples in a coalition of
/// `total` samples whose squared sizes sum to `all_sq_sum` (member included).
pub fn gain_split(
    n_i: u64,
    total: u64,
    all_sq_sum: f64,
    sigma2: f64,
    cost: f64,
) -> Result<GainSplit, SplitError> {
    if total < n_i || n_i == 0 {
        return Err(SplitError { own: n_i, total });
    }
    let additional_gain = additional_gain(n_i, total as f64, sigma2);
    let t = total as f64;
    let fixed_gain = -1.0 / t - (all_sq_sum / (t * t) - 3.0) * sigma2;
    Ok(GainSplit {
        fixed_gain,
        additional_gain,
        z_score: additional_gain - cost,
    })
}

/// `1/n_i + (2 n_i^2/N^2 - 4 n_i/N) * sigma2` with `N` given as a real.
pub fn additional_gain(n_i: u64, total: f64, sigma2: f64) -> f64 {
    let n = n_i as f64;
    1.0 / n + (2.0 * n * n / (total * total) - 4.0 * n / total) * sigma2
}

/// Oracle utility at a coalition holding `total` samples.
///
/// `sigma2` is only used by the built-in homogeneous oracle.
pub fn oracle_utility(spec: &OracleSpec, total: u64, sigma2: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    match spec {
        OracleSpec::BuiltinHomogeneous { n_ref } => {
            // The formula blows up for K < 1, so everything up to one full
            // client is clamped to the K = 1 value of zero.
            if total <= *n_ref {
                0.0
            } else {
                let k = total as f64 / *n_ref as f64;
                homogeneous_formula(k, *n_ref as f64, sigma2)
            }
        }
        OracleSpec::Table { points } => points
            .iter()
            .take_while(|(n, _)| *n <= total)
            .last()
            .map_or(0.0, |&(_, u)| u),
        OracleSpec::LogSaturating { scale, rate } => scale * (rate * total as f64).ln_1p(),
    }
}
