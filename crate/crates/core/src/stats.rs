//! Small statistics helpers shared by the bootstrap code paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for bootstrap replica `replica` of a run seeded with `seed`.
///
/// ChaCha8 keyed by `seed_from_u64(seed)` with the stream id set to the replica
/// index. Each replica owns an independent stream, so results do not depend on
/// evaluation order or thread count, and the algorithm is fixed across
/// platforms.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

pub const RNG_ALGORITHM: &str = "ChaCha8 seed_from_u64(seed), stream = replica index";

/// Quantile of an ascending-sorted sample with linear interpolation between
/// order statistics (Hyndman-Fan type 7, the R/NumPy default).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Central interval holding `level` of the sample mass.
pub fn percentile_interval(samples: &mut [f64], level: f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(samples, tail), quantile_sorted(samples, 1.0 - tail))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample Pearson correlation; `None` when either vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
