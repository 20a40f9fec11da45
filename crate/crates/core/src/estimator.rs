//! Weak+vacuum decoy-state estimation.
//!
//! Poisson photon statistics, gain series, the lower bound on the
//! single-photon yield, the upper bound on the single-photon QBER and the
//! asymptotic key rate. Everything here is a pure function of its inputs.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::attacks::YieldProfile;
use crate::error::{check_range, Error, Result};

/// Default photon-number cutoff of the gain series.
pub const DEFAULT_N_MAX: u32 = 600;

const DEGENERATE_GAP: f64 = 1e-6;

/// Signal and weak-decoy mean photon numbers. The vacuum decoy is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoyParams {
    mu: f64,
    nu: f64,
}

impl DecoyParams {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        check_range("mu", mu, mu > 0.0 && mu.is_finite(), "(0, inf)")?;
        check_range("nu", nu, nu > 0.0 && nu.is_finite(), "(0, inf)")?;
        if nu >= mu {
            return Err(Error::DecoyOrder { mu, nu });
        }
        if mu - nu < DEGENERATE_GAP {
            return Err(Error::Degenerate { gap: mu - nu });
        }
        Ok(Self { mu, nu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Warning text for intensities outside the usual operating range
    /// (mu > 1.5 or nu > 1.0). Such values are still accepted.
    pub fn diagnostic(&self) -> Option<String> {
        if self.mu > 1.5 || self.nu > 1.0 {
            Some(format!(
                "warning: protocol-atypical intensities (mu = {}, nu = {}); expected mu <= 1.5, nu <= 1.0",
                self.mu, self.nu
            ))
        } else {
            None
        }
    }
}

/// Measured gains of signal, decoy and vacuum pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainSet {
    pub q_mu: f64,
    pub q_nu: f64,
    pub q_0: f64,
}

impl GainSet {
    pub fn new(q_mu: f64, q_nu: f64, q_0: f64) -> Result<Self> {
        for (name, q) in [("q_mu", q_mu), ("q_nu", q_nu), ("q_0", q_0)] {
            check_range(name, q, (0.0..=1.0).contains(&q), "[0, 1]")?;
        }
        Ok(Self { q_mu, q_nu, q_0 })
    }
}

/// QBER of decoy and vacuum pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSet {
    pub e_nu: f64,
    pub e_0: f64,
}

impl ErrorSet {
    pub fn new(e_nu: f64, e_0: f64) -> Result<Self> {
        for (name, e) in [("e_nu", e_nu), ("e_0", e_0)] {
            check_range(name, e, (0.0..=0.5).contains(&e), "[0, 0.5]")?;
        }
        Ok(Self { e_nu, e_0 })
    }

    /// Error-free decoy pulses, uniformly random vacuum clicks.
    pub fn noiseless() -> Self {
        Self { e_nu: 0.0, e_0: 0.5 }
    }
}

impl Default for ErrorSet {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// Upper bound on the single-photon QBER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum E1Upper {
    /// `Y1^L <= 0`: the bound carries no information.
    Vacuous,
    /// `value = min(raw, 0.5)`.
    Bound { value: f64, raw: f64 },
}

impl E1Upper {
    pub fn value(&self) -> Option<f64> {
        match *self {
            E1Upper::Vacuous => None,
            E1Upper::Bound { value, .. } => Some(value),
        }
    }

    /// True when the raw bound exceeded 0.5 and was capped.
    pub fn is_capped(&self) -> bool {
        matches!(*self, E1Upper::Bound { raw, .. } if raw > 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyRate {
    pub raw: f64,
    pub clamped: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoyEstimate {
    /// Raw lower bound, negative below the attack threshold.
    pub y1_lower: f64,
    /// `y1_lower * mu * exp(-mu)`, unclamped.
    pub q1: f64,
    pub e1_upper: E1Upper,
    pub key_rate: KeyRate,
}

/// Binary Shannon entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_range("x", x, (0.0..=1.0).contains(&x), "[0, 1]")?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Natural log of the Poisson pmf; `-inf` when the probability is zero.
pub fn ln_poisson_pmf(n: u32, mean: f64) -> Result<f64> {
    check_range("mean", mean, mean >= 0.0 && mean.is_finite(), "[0, inf)")?;
    if mean == 0.0 {
        return Ok(if n == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let n = f64::from(n);
    Ok(-mean + n * mean.ln() - ln_gamma(n + 1.0))
}

/// Poisson pmf evaluated through log-gamma so large `n` stays finite.
pub fn poisson_pmf(n: u32, mean: f64) -> Result<f64> {
    ln_poisson_pmf(n, mean).map(f64::exp)
}

/// Truncated gain series `sum_{n=0}^{n_max} pmf(n, mean) * yield(n)`.
///
/// The pmf is advanced by the recurrence `p(n) = p(n-1) * mean / n` and
/// re-anchored through log-gamma every 64 terms so the product never drifts.
pub fn gain_series<F>(yield_of: F, mean: f64, n_max: u32) -> Result<f64>
where
    F: Fn(u32) -> f64,
{
    check_range("n_max", f64::from(n_max), n_max >= 1, "[1, inf)")?;
    check_range("mean", mean, mean >= 0.0 && mean.is_finite(), "[0, inf)")?;
    let mut total = 0.0;
    let mut p = poisson_pmf(0, mean)?;
    for n in 0..=n_max {
        if n > 0 {
            p = if n % 64 == 0 {
                poisson_pmf(n, mean)?
            } else {
                p * mean / f64::from(n)
            };
        }
        let y = yield_of(n);
        if y != 0.0 {
            total += p * y;
        }
    }
    Ok(total)
}

/// Gain of pulses with the given mean under a tabulated yield profile.
pub fn gain_from_yields(yields: &YieldProfile, mean: f64) -> Result<f64> {
    gain_series(|n| yields.get(n), mean, yields.n_max())
}

/// Lower bound on the single-photon yield. May be negative.
pub fn y1_lower(gains: &GainSet, params: &DecoyParams) -> f64 {
    let (mu, nu) = (params.mu, params.nu);
    let prefactor = mu / (nu * (mu - nu));
    prefactor
        * (gains.q_nu * nu.exp()
            - (nu * nu) / (mu * mu) * gains.q_mu * mu.exp()
            - (mu * mu - nu * nu) / (mu * mu) * gains.q_0)
}

/// Upper bound on the single-photon QBER, capped at 0.5.
pub fn e1_upper(gains: &GainSet, errors: &ErrorSet, y1_lower: f64, params: &DecoyParams) -> E1Upper {
    if y1_lower <= 0.0 {
        return E1Upper::Vacuous;
    }
    let nu = params.nu;
    let raw = (errors.e_nu * gains.q_nu * nu.exp() - errors.e_0 * gains.q_0) / (nu * y1_lower);
    E1Upper::Bound {
        value: raw.clamp(0.0, 0.5),
        raw,
    }
}

/// Asymptotic key rate per signal detection, `q1/q_mu * (1 - h(e1)) - leak`.
///
/// Sifting and error-verification costs are not included.
pub fn key_rate(q1: f64, q_mu: f64, e1: f64, leak: f64) -> Result<KeyRate> {
    if q_mu <= 0.0 {
        return Err(Error::NoSignal);
    }
    let raw = q1 / q_mu * (1.0 - binary_entropy(e1)?) - leak;
    Ok(KeyRate {
        raw,
        clamped: raw.max(0.0),
    })
}

/// Error-correction leakage `f_ec * h(e_mu)`; `f_ec = 1` is the Shannon limit.
pub fn leak_from_qber(e_mu: f64, f_ec: f64) -> Result<f64> {
    check_range("f_ec", f_ec, f_ec >= 1.0 && f_ec.is_finite(), "[1, inf)")?;
    Ok(f_ec * binary_entropy(e_mu)?)
}

/// Runs the full estimation chain for one set of observed statistics.
///
/// When the QBER bound is vacuous the key rate is evaluated with `e1 = 0.5`.
pub fn estimate(
    gains: &GainSet,
    errors: &ErrorSet,
    params: &DecoyParams,
    leak: f64,
) -> Result<DecoyEstimate> {
    let y1 = y1_lower(gains, params);
    let q1 = y1 * params.mu * (-params.mu).exp();
    let e1 = e1_upper(gains, errors, y1, params);
    let key_rate = key_rate(q1, gains.q_mu, e1.value().unwrap_or(0.5), leak)?;
    Ok(DecoyEstimate {
        y1_lower: y1,
        q1,
        e1_upper: e1,
        key_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(mu: f64, nu: f64) -> DecoyParams {
        DecoyParams::new(mu, nu).unwrap()
    }

    #[test]
    fn decoy_params_validation() {
        assert!(matches!(DecoyParams::new(0.1, 0.1), Err(Error::DecoyOrder { .. })));
        assert!(matches!(DecoyParams::new(0.1, 0.2), Err(Error::DecoyOrder { .. })));
        assert!(matches!(DecoyParams::new(0.1, 0.1 - 1e-8), Err(Error::Degenerate { .. })));
        assert!(DecoyParams::new(0.0, 0.0).is_err());
        assert!(DecoyParams::new(f64::NAN, 0.1).is_err());
        assert!(params(0.5, 0.1).diagnostic().is_none());
        assert!(params(2.0, 0.1).diagnostic().is_some());
        assert!(params(1.5, 1.0 - 1e-3).diagnostic().is_none());
    }

    #[test]
    fn gain_and_error_sets_are_validated() {
        assert!(GainSet::new(1.1, 0.0, 0.0).is_err());
        assert!(GainSet::new(0.1, -0.1, 0.0).is_err());
        assert!(ErrorSet::new(0.6, 0.5).is_err());
        assert_eq!(ErrorSet::default().e_0, 0.5);
    }

    #[test]
    fn binary_entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // 30-digit evaluation of the closed form.
        assert_relative_eq!(binary_entropy(0.11).unwrap(), 0.499_915_958_164_528, epsilon = 1e-14);
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(1.01).is_err());
    }

    #[test]
    fn binary_entropy_symmetry() {
        for i in 0..=10_000 {
            let x = f64::from(i) / 10_000.0;
            let d = binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap();
            assert!(d.abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn poisson_pmf_values() {
        assert_relative_eq!(poisson_pmf(0, 2.0).unwrap(), (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(poisson_pmf(3, 6.44).unwrap(), 0.071_064_039_130_369_74, max_relative = 1e-12);
        assert!(poisson_pmf(1, -1.0).is_err());
        assert_eq!(poisson_pmf(0, 0.0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn poisson_pmf_far_tail_is_finite() {
        // ln p(600; 20) is about -1465: far below 1e-8 and below the smallest
        // positive double, so the linear value underflows to zero.
        let ln_p = ln_poisson_pmf(600, 20.0).unwrap();
        assert!(ln_p.is_finite());
        assert!(ln_p < 1e-8f64.ln());
        let p = poisson_pmf(600, 20.0).unwrap();
        assert!((0.0..1e-8).contains(&p));
        // Still representable at the cutoff for a moderately large mean.
        let p = poisson_pmf(600, 400.0).unwrap();
        assert!(p > 0.0 && p < 1e-8);
        assert!(poisson_pmf(600, 50.0).unwrap().is_finite());
    }

    #[test]
    fn pmf_sums_to_one() {
        for mean in [0.0, 0.1, 1.0, 5.0, 10.0, 20.0] {
            let total = gain_series(|_| 1.0, mean, DEFAULT_N_MAX).unwrap();
            assert!((total - 1.0).abs() < 1e-8, "mean = {mean}: {total}");
        }
    }

    #[test]
    fn series_zero_yields() {
        assert_eq!(gain_series(|_| 0.0, 6.44, DEFAULT_N_MAX).unwrap(), 0.0);
        assert!(gain_series(|_| 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn recurrence_matches_direct_pmf() {
        for mean in [0.3, 7.0, 20.0] {
            let direct: f64 = (0..=600).map(|n| poisson_pmf(n, mean).unwrap() * f64::from(n % 7) / 7.0).sum();
            let series = gain_series(|n| f64::from(n % 7) / 7.0, mean, 600).unwrap();
            assert!((direct - series).abs() < 1e-14);
        }
    }

    #[test]
    fn y1_lower_threshold_condition() {
        let p = params(0.5, 0.1);
        let q_mu = 0.2;
        let q_nu = (0.1f64 * 0.1) / (0.5 * 0.5) * q_mu * (0.5f64).exp() / (0.1f64).exp();
        let g = GainSet::new(q_mu, q_nu, 0.0).unwrap();
        assert!(y1_lower(&g, &p).abs() < 1e-15);
        let zero = GainSet::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(y1_lower(&zero, &p), 0.0);
    }

    #[test]
    fn y1_lower_partial_derivative_signs() {
        let p = params(0.5, 0.1);
        let base = GainSet::new(0.3, 0.1, 0.01).unwrap();
        let h = 1e-6;
        let f0 = y1_lower(&base, &p);
        let d_mu = (y1_lower(&GainSet { q_mu: base.q_mu + h, ..base }, &p) - f0) / h;
        let d_nu = (y1_lower(&GainSet { q_nu: base.q_nu + h, ..base }, &p) - f0) / h;
        let d_0 = (y1_lower(&GainSet { q_0: base.q_0 + h, ..base }, &p) - f0) / h;
        assert!(d_mu < 0.0 && d_nu > 0.0 && d_0 < 0.0);
        // Linearity: the finite difference equals the analytic coefficient.
        let k = 0.5 / (0.1 * 0.4);
        assert_relative_eq!(d_nu, k * (0.1f64).exp(), max_relative = 1e-6);
        assert_relative_eq!(d_mu, -k * 0.04 * (0.5f64).exp(), max_relative = 1e-6);
        assert_relative_eq!(d_0, -k * (0.25 - 0.01) / 0.25, max_relative = 1e-6);
    }

    #[test]
    fn e1_upper_cases() {
        let p = params(0.5, 0.1);
        let g = GainSet::new(0.1, 0.036, 0.0).unwrap();
        let noiseless = ErrorSet::new(0.0, 0.5).unwrap();
        assert_eq!(e1_upper(&g, &noiseless, 0.01, &p), E1Upper::Bound { value: 0.0, raw: 0.0 });
        assert_eq!(e1_upper(&g, &noiseless, 0.0, &p), E1Upper::Vacuous);
        assert_eq!(e1_upper(&g, &noiseless, -0.3, &p).value(), None);

        let noisy = ErrorSet::new(0.02, 0.5).unwrap();
        let b = e1_upper(&g, &noisy, 0.01, &p);
        assert!(b.is_capped());
        assert_eq!(b.value(), Some(0.5));
        match b {
            E1Upper::Bound { raw, .. } => assert_relative_eq!(raw, 0.795_723_061_014_466_3, max_relative = 1e-12),
            E1Upper::Vacuous => unreachable!(),
        }
    }

    #[test]
    fn key_rate_cases() {
        let r = key_rate(0.2, 0.2, 0.0, 0.0).unwrap();
        assert_eq!((r.raw, r.clamped), (1.0, 1.0));
        let r = key_rate(0.0, 0.2, 0.0, 0.1).unwrap();
        assert_eq!((r.raw, r.clamped), (-0.1, 0.0));
        let r = key_rate(0.1, 0.2, 0.11, 0.3).unwrap();
        assert_relative_eq!(r.raw, -0.049_957_979_082_264, max_relative = 1e-10);
        assert_eq!(r.clamped, 0.0);
        assert_eq!(key_rate(0.1, 0.0, 0.0, 0.0), Err(Error::NoSignal));
    }

    #[test]
    fn leak_helper() {
        assert_eq!(leak_from_qber(0.5, 1.0).unwrap(), 1.0);
        assert_relative_eq!(leak_from_qber(0.11, 1.16).unwrap(), 1.16 * binary_entropy(0.11).unwrap());
        assert!(leak_from_qber(0.1, 0.9).is_err());
    }

    #[test]
    fn estimate_chain() {
        let p = params(0.5, 0.1);
        let g = GainSet::new(0.02, 0.004, 0.0).unwrap();
        let est = estimate(&g, &ErrorSet::default(), &p, 0.0).unwrap();
        assert_eq!(est.q1, est.y1_lower * 0.5 * (-0.5f64).exp());
        assert!(est.key_rate.clamped >= 0.0);
    }
}
