mod common;

use common::stats::{chi_square_uniform, sample_splits};
use inpaint_core::latent::{evaluation_split, stochastic_split, SplitBounds};
use inpaint_core::nn::{RngStream, Tensor};
use inpaint_core::vae::{kl_divergence, reparameterize, Posterior};
use proptest::prelude::*;

fn posterior(mu: Vec<f64>, sigma: Vec<f64>) -> Posterior<f64> {
    let d = mu.len();
    Posterior {
        mu: Tensor::matrix(1, d, mu),
        sigma: Tensor::matrix(1, d, sigma),
    }
}

#[test]
fn reparameterized_sample_mean_is_within_four_standard_errors() {
    let mut init = RngStream::new(21);
    let d = 16;
    let mu: Vec<f64> = (0..d).map(|_| init.uniform(-2.0, 2.0)).collect();
    let sigma: Vec<f64> = (0..d).map(|_| init.uniform(0.1, 2.0)).collect();
    let p = posterior(mu.clone(), sigma.clone());
    let draws = 10_000;
    let mut rng = RngStream::new(5);
    let mut sum = vec![0.0; d];
    for _ in 0..draws {
        let z = reparameterize(&p, &mut rng);
        for (s, v) in sum.iter_mut().zip(z.data()) {
            *s += v;
        }
    }
    for j in 0..d {
        let mean = sum[j] / draws as f64;
        assert!(
            (mean - mu[j]).abs() <= 4.0 * sigma[j] / 100.0,
            "dim {j}: mean {mean}, mu {}, sigma {}",
            mu[j],
            sigma[j]
        );
    }
}

#[test]
fn reparameterization_is_reproducible_per_seed() {
    let p = posterior(vec![0.5, -1.0, 2.0], vec![1.0, 0.3, 0.01]);
    assert_eq!(reparameterize(&p, &mut RngStream::new(9)), reparameterize(&p, &mut RngStream::new(9)));
    assert_ne!(reparameterize(&p, &mut RngStream::new(9)), reparameterize(&p, &mut RngStream::new(10)));
}

/// `E_q[log q(z) − log p(z)]` estimated from `n` draws of `q`.
fn kl_monte_carlo(p: &Posterior<f64>, n: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (mu, sigma) = (p.mu.data(), p.sigma.data());
    let mut total = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for j in 0..mu.len() {
            let eps: f64 = rng.normal();
            let z = mu[j] + sigma[j] * eps;
            log_ratio += -sigma[j].ln() - 0.5 * eps * eps + 0.5 * z * z;
        }
        total += log_ratio;
    }
    total / n as f64
}

#[test]
fn analytic_kl_matches_monte_carlo_within_two_percent() {
    let mut init = RngStream::new(17);
    let d = 8;
    let mu: Vec<f64> = (0..d).map(|_| init.uniform(-1.5, 1.5)).collect();
    let sigma: Vec<f64> = (0..d).map(|_| init.uniform(0.3, 1.8)).collect();
    let p = posterior(mu, sigma);
    let exact = kl_divergence(&p);
    let mc = kl_monte_carlo(&p, 1_000_000, 3);
    assert!(((mc - exact) / exact).abs() < 0.02, "analytic {exact}, Monte Carlo {mc}");
}

#[test]
fn chi_square_oracle_flags_a_skewed_histogram() {
    let (_, p) = chi_square_uniform(&[2000, 2000, 2000, 2000, 2300]);
    assert!(p < 0.01, "p = {p}");
    let (stat, p) = chi_square_uniform(&[1000; 5]);
    assert_eq!(stat, 0.0);
    assert!((p - 1.0).abs() < 1e-12);
}

#[test]
fn gap_lengths_are_uniform_and_the_partition_law_holds() {
    let s = sample_splits(16, &SplitBounds::default(), 100_000, 1);
    assert!(s.violations.is_empty(), "{:?}", &s.violations[..s.violations.len().min(5)]);
    let (stat, p) = chi_square_uniform(&s.n_i_counts);
    assert!(p > 0.01, "chi2 {stat}, p {p}, counts {:?}", s.n_i_counts);
}

#[test]
fn fixed_gap_of_six_leaves_past_lengths_one_to_nine() {
    let bounds = SplitBounds {
        min_inpaint: 6,
        max_inpaint: 6,
    };
    let mut rng = RngStream::new(4);
    let mut seen = [0u32; 10];
    for _ in 0..5000 {
        let s = stochastic_split(16, &bounds, &mut rng).unwrap();
        assert!((1..=9).contains(&s.n_p), "{s:?}");
        seen[s.n_p] += 1;
    }
    assert!(seen[1..].iter().all(|&c| c > 0));
}

#[test]
fn infeasible_bounds_are_errors() {
    let mut rng = RngStream::new(0);
    assert!(stochastic_split(3, &SplitBounds::default(), &mut rng).is_err());
    let empty = SplitBounds {
        min_inpaint: 5,
        max_inpaint: 4,
    };
    assert!(stochastic_split(16, &empty, &mut rng).is_err());
    let zero = SplitBounds {
        min_inpaint: 0,
        max_inpaint: 4,
    };
    assert!(stochastic_split(16, &zero, &mut rng).is_err());
}

proptest! {
    #[test]
    fn splits_partition_any_window(total in 4usize..64, lo in 1usize..8, extra in 0usize..8, seed in any::<u64>()) {
        let bounds = SplitBounds { min_inpaint: lo, max_inpaint: lo + extra };
        let mut rng = RngStream::new(seed);
        match stochastic_split(total, &bounds, &mut rng) {
            Ok(s) => {
                prop_assert_eq!(s.n_p + s.n_i + s.n_f, total);
                prop_assert!(s.n_p >= 1 && s.n_f >= 1);
                prop_assert!(s.n_i >= lo && s.n_i <= (lo + extra).min(total - 2));
            }
            Err(_) => prop_assert!(total < lo + 2),
        }
    }

    #[test]
    fn evaluation_splits_depend_only_on_seed_and_index(seed in any::<u64>(), a in 0usize..1000, b in 0usize..1000) {
        let bounds = SplitBounds::default();
        let first = evaluation_split(16, &bounds, seed, a).unwrap();
        let _ = evaluation_split(16, &bounds, seed, b).unwrap();
        prop_assert_eq!(first, evaluation_split(16, &bounds, seed, a).unwrap());
    }
}
