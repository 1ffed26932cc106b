//! Statistical oracles shared by the property and acceptance tests.

use inpaint_core::latent::{stochastic_split, SplitBounds, SplitSpec};
use inpaint_core::nn::RngStream;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson χ² goodness of fit of `counts` against the uniform distribution.
/// Returns `(statistic, p-value)`.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

pub struct SplitSample {
    pub draws: usize,
    pub violations: Vec<SplitSpec>,
    /// Counts of `n_i` for `min..=max`.
    pub n_i_counts: Vec<u64>,
}

/// Draw `draws` splits of a `total`-measure window from one stream and
/// tally partition-law violations and the `n_i` histogram.
pub fn sample_splits(total: usize, bounds: &SplitBounds, draws: usize, seed: u64) -> SplitSample {
    let mut rng = RngStream::new(seed);
    let mut counts = vec![0u64; bounds.max_inpaint - bounds.min_inpaint + 1];
    let mut violations = Vec::new();
    for _ in 0..draws {
        let s = stochastic_split(total, bounds, &mut rng).expect("feasible bounds");
        let ok = s.n_p + s.n_i + s.n_f == total
            && s.n_p >= 1
            && s.n_f >= 1
            && (bounds.min_inpaint..=bounds.max_inpaint).contains(&s.n_i);
        if ok {
            counts[s.n_i - bounds.min_inpaint] += 1;
        } else {
            violations.push(s);
        }
    }
    SplitSample {
        draws,
        violations,
        n_i_counts: counts,
    }
}
