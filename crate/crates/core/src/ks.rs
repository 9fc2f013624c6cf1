//! Two-sample Kolmogorov–Smirnov test.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value with the Stephens small-sample correction.
    pub p_value: f64,
    /// Asymptotic critical value at the 5% level, `1.358 √((n+m)/(nm))`.
    pub critical_5pct: f64,
    pub reject_5pct: bool,
}

/// `sup_x |F_a(x) - F_b(x)|` over the pooled sample.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `Q_KS(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs two nonempty samples");
    let d = ks_statistic(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let ne = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d);
    let critical_5pct = 1.358 / ne;
    KsResult { statistic: d, p_value, critical_5pct, reject_5pct: d > critical_5pct }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn brute(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn statistic_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a: Vec<f64> = (0..rng.random_range(1..40)).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
            let b: Vec<f64> = (0..rng.random_range(1..40)).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
            assert!((ks_statistic(&a, &b) - brute(&a, &b)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert!(!ks_two_sample(&a, &a).reject_5pct);
        let b = [10.0, 11.0, 12.0];
        assert_eq!(ks_statistic(&a, &b), 1.0);
    }

    #[test]
    fn survival_reference_values() {
        // Q_KS(1.358) ≈ 0.05 and Q_KS(1.224) ≈ 0.10.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_survival(1.2238) - 0.10).abs() < 5e-4);
    }

    #[test]
    fn size_under_null() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let trials = 400;
        let rejects = (0..trials)
            .filter(|_| {
                let a: Vec<f64> = (0..200).map(|_| rng.random()).collect();
                let b: Vec<f64> = (0..200).map(|_| rng.random()).collect();
                ks_two_sample(&a, &b).reject_5pct
            })
            .count();
        let rate = rejects as f64 / trials as f64;
        assert!(rate < 0.05 + 3.0 * (0.05f64 * 0.95 / trials as f64).sqrt(), "{rate}");
    }
}
