use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shared robust-estimation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold in pixels.
    pub threshold_px: f64,
    /// Iteration cap; adaptive termination may stop earlier.
    pub iterations: usize,
    pub seed: u64,
    /// Minimum consensus size for a model to be accepted.
    pub min_inliers: usize,
    /// Success probability used for adaptive termination.
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { threshold_px: 1.5, iterations: 2000, seed: 42, min_inliers: 15, confidence: 0.999 }
    }
}

impl RansacParams {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Copy with a seed derived from `stream`, so that independent tasks
    /// (e.g. image pairs) get independent but reproducible sequences.
    pub fn for_stream(&self, stream: u64) -> Self {
        Self { seed: derive_seed(self.seed, stream), ..*self }
    }
}

/// splitmix64 of the combined value.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn sample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k).into_vec()
}

/// Iterations needed to draw one all-inlier sample with probability `confidence`.
pub(crate) fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    let p_good = inlier_ratio.powi(sample_size as i32);
    if p_good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_and_repeat() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(42, 8));
        assert_ne!(derive_seed(42, 7), derive_seed(43, 7));
    }

    #[test]
    fn iteration_count_formula() {
        assert_eq!(required_iterations(1.0, 8, 0.99), 1);
        // 0.5^2 = 0.25 -> ln(0.01)/ln(0.75) = 16.008
        assert_eq!(required_iterations(0.5, 2, 0.99), 17);
        assert_eq!(required_iterations(0.0, 8, 0.99), usize::MAX);
    }
}
