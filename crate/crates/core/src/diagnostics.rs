//! Chain diagnostics: effective sample size and error norms.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::check_len;
use crate::{Error, Matrix, Result, Vector};

/// Minimum chain length accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 10;

/// Relative spread under which a coordinate counts as constant.
const CONSTANT_REL_TOL: f64 = 1e-9;

/// Autocorrelations `ρ̂_0..ρ̂_{n-1}` by zero-padded FFT; `None` for a
/// constant chain.
pub fn autocorrelation(chain: &[f64]) -> Option<Vec<f64>> {
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = chain
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 0.0) || !c0.is_finite() {
        return None;
    }
    Some(buf[..n].iter().map(|z| z.re / c0).collect())
}

/// Effective sample size `N / (1 + 2 Σ ρ̂_t)` with Geyer's initial positive
/// sequence truncation, clamped to `[1, N]`. A constant chain has ESS 1.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < MIN_ESS_LEN {
        return Err(Error::Contract(format!("ESS needs at least {MIN_ESS_LEN} draws, got {n}")));
    }
    let Some(rho) = autocorrelation(chain) else {
        return Ok(1.0);
    };
    // τ = -1 + 2 Σ_m Γ_m, Γ_m = ρ_{2m} + ρ_{2m+1}, while Γ_m > 0
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho[2 * m] + rho[2 * m + 1];
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// Per-coordinate ESS of a chain stored as `d × N` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EssSummary {
    /// `None` for coordinates that are constant along the chain.
    pub per_coordinate: Vec<Option<f64>>,
    pub median: f64,
    pub min: f64,
}

/// ESS of every non-constant coordinate with their median and minimum.
/// Chains shorter than [`MIN_ESS_LEN`] report their length; a chain with
/// no moving coordinate reports 1.
pub fn ess_summary(states: &Matrix) -> EssSummary {
    let (d, n) = states.shape();
    if n < MIN_ESS_LEN {
        let v = n as f64;
        return EssSummary {
            per_coordinate: vec![Some(v); d],
            median: v,
            min: v,
        };
    }
    let per_coordinate: Vec<Option<f64>> = (0..d)
        .map(|i| {
            let row: Vec<f64> = states.row(i).iter().copied().collect();
            if is_constant(&row) {
                None
            } else {
                ess(&row).ok()
            }
        })
        .collect();
    let mut vals: Vec<f64> = per_coordinate.iter().flatten().copied().collect();
    if vals.is_empty() {
        return EssSummary {
            per_coordinate,
            median: 1.0,
            min: 1.0,
        };
    }
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    EssSummary {
        median: median(&mut vals),
        min,
        per_coordinate,
    }
}

fn is_constant(xs: &[f64]) -> bool {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    hi - lo <= CONSTANT_REL_TOL * hi.abs().max(lo.abs()).max(1.0)
}

/// Median; sorts its input.
pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Euclidean distance between an estimate and a reference.
pub fn l2_error(estimate: &Vector, truth: &Vector) -> Result<f64> {
    check_len("reference", estimate.len(), truth.len())?;
    Ok((estimate - truth).norm())
}
