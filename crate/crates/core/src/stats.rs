//! Goodness-of-fit tests used to validate samplers.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    /// `sup |F_n - F|`.
    pub statistic: f64,
    /// Asymptotic Kolmogorov p-value.
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsTest> {
    if samples.is_empty() {
        return Err(Error::Contract("KS test needs at least one sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let statistic = xs.iter().enumerate().fold(0.0_f64, |d, (i, x)| {
        let f = cdf(*x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    let sn = n.sqrt();
    let p_value = kolmogorov_survival((sn + 0.12 + 0.11 / sn) * statistic);
    Ok(KsTest { statistic, p_value })
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic upper quantiles `(level, critical value)` of the two-sample
/// Cramér–von Mises `T` statistic.
pub const CVM_CRITICAL: [(f64, f64); 4] = [(0.10, 0.34730), (0.05, 0.46136), (0.01, 0.74346), (0.001, 1.16786)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvmTest {
    pub statistic: f64,
}

impl CvmTest {
    /// Whether the null is rejected at one of the tabulated levels.
    pub fn rejects_at(&self, level: f64) -> Result<bool> {
        CVM_CRITICAL
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-12)
            .map(|(_, c)| self.statistic > *c)
            .ok_or_else(|| Error::Contract(format!("no tabulated CvM critical value at level {level}")))
    }
}

/// Two-sample Cramér–von Mises test,
/// `T = nm/(n+m)² Σ_z (F_n(z) - G_m(z))²` over the pooled sample.
pub fn cvm_two_sample(x: &[f64], y: &[f64]) -> Result<CvmTest> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Contract("CvM test needs two nonempty samples".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < n || j < m {
        let z = match (xs.get(i), ys.get(j)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        let (mut ci, mut cj) = (0, 0);
        while i < n && xs[i] == z {
            i += 1;
            ci += 1;
        }
        while j < m && ys[j] == z {
            j += 1;
            cj += 1;
        }
        let diff = i as f64 / nf - j as f64 / mf;
        sum += (ci + cj) as f64 * diff * diff;
    }
    Ok(CvmTest {
        statistic: nf * mf / ((nf + mf) * (nf + mf)) * sum,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn ks_uniform_accepts_and_shift_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let t = ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(t.p_value > 0.01);
        let shifted: Vec<f64> = u.iter().map(|x| x * 0.9).collect();
        assert!(ks_one_sample(&shifted, |x| x.clamp(0.0, 1.0)).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ks_statistic_small_case() {
        let t = ks_one_sample(&[0.5], |x| x).unwrap();
        assert_eq!(t.statistic, 0.5);
    }

    #[test]
    fn kolmogorov_known_quantile() {
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn cvm_matches_rank_formula_without_ties() {
        let x = [0.1, 0.5, 0.9, 1.3];
        let y = [0.2, 0.3, 1.1];
        let (n, m) = (4.0, 3.0);
        let pooled = {
            let mut p: Vec<(f64, bool)> = x.iter().map(|v| (*v, true)).chain(y.iter().map(|v| (*v, false))).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            p
        };
        let (mut u, mut i, mut j) = (0.0, 0.0, 0.0);
        for (rank, (_, from_x)) in pooled.iter().enumerate() {
            let r = rank as f64 + 1.0;
            if *from_x {
                i += 1.0;
                u += n * (r - i) * (r - i);
            } else {
                j += 1.0;
                u += m * (r - j) * (r - j);
            }
        }
        let anderson = u / (n * m * (n + m)) - (4.0 * m * n - 1.0) / (6.0 * (m + n));
        let ours = cvm_two_sample(&x, &y).unwrap().statistic;
        assert!((ours - anderson).abs() < 1e-12, "{ours} {anderson}");
    }

    #[test]
    fn cvm_same_law_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        assert!(!cvm_two_sample(&x, &y).unwrap().rejects_at(0.01).unwrap());
        let z: Vec<f64> = y.iter().map(|v| v + 0.2).collect();
        assert!(cvm_two_sample(&x, &z).unwrap().rejects_at(0.001).unwrap());
        assert!(cvm_two_sample(&x, &x).unwrap().statistic == 0.0);
    }
}
