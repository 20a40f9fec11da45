//! Attack models.
//!
//! Laser damage scales both of Alice's intensities by the same factor
//! `kappa`. Eve then measures every pulse with a copy of Bob's passive-basis
//! receiver and resends only on a conclusive result: the correct-basis
//! detector and both wrong-basis detectors fired. The tapped variant puts a
//! beam splitter of transmittance `t` in front of the receiver and discards
//! any pulse that lost a photon to the tap monitor. The 3-photon PNS model
//! keeps only the `n = 3` component.

use serde::Serialize;

use crate::error::{check_range, check_unit_open_closed, Result};
use crate::estimator::{DecoyParams, GainSet, DEFAULT_N_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackVariant {
    StandardUsd,
    /// USD behind a tap of transmittance `t`.
    ModifiedUsd { t: f64 },
    /// Blocks every photon number except three, forwarded with yield `y3`.
    Pns3 { y3: f64 },
}

impl AttackVariant {
    pub fn validate(self) -> Result<Self> {
        match self {
            AttackVariant::StandardUsd => {}
            AttackVariant::ModifiedUsd { t } => {
                check_unit_open_closed("t", t)?;
            }
            AttackVariant::Pns3 { y3 } => {
                check_unit_open_closed("y3", y3)?;
            }
        }
        Ok(self)
    }

    pub fn label(&self) -> &'static str {
        match self {
            AttackVariant::StandardUsd => "usd",
            AttackVariant::ModifiedUsd { .. } => "musd",
            AttackVariant::Pns3 { .. } => "pns3",
        }
    }

    /// Closed-form gain for pulses whose mean at Eve's receiver is `mean`.
    pub fn gain(&self, mean: f64) -> Result<f64> {
        match *self {
            AttackVariant::StandardUsd => usd_gain_closed(mean),
            AttackVariant::ModifiedUsd { t } => modified_usd_gain_closed(mean, t),
            AttackVariant::Pns3 { y3 } => pns3_gain_closed(mean, y3),
        }
    }

    pub fn yield_profile(&self, n_max: u32) -> Result<YieldProfile> {
        match *self {
            AttackVariant::StandardUsd => Ok(YieldProfile::usd(n_max)),
            AttackVariant::ModifiedUsd { t } => YieldProfile::modified_usd(t, n_max),
            AttackVariant::Pns3 { y3 } => pns3_yield_profile(y3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackConfig {
    kappa: f64,
    variant: AttackVariant,
    eta_eve: f64,
    channel_transmittance: f64,
}

impl AttackConfig {
    /// Ideal detectors and no channel between Alice and Eve.
    pub fn new(kappa: f64, variant: AttackVariant) -> Result<Self> {
        Self::with_losses(kappa, variant, 1.0, 1.0)
    }

    pub fn with_losses(
        kappa: f64,
        variant: AttackVariant,
        eta_eve: f64,
        channel_transmittance: f64,
    ) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self {
            kappa,
            variant: variant.validate()?,
            eta_eve: check_unit_open_closed("eta_eve", eta_eve)?,
            channel_transmittance: check_unit_open_closed("channel_transmittance", channel_transmittance)?,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn variant(&self) -> AttackVariant {
        self.variant
    }

    pub fn eta_eve(&self) -> f64 {
        self.eta_eve
    }

    pub fn channel_transmittance(&self) -> f64 {
        self.channel_transmittance
    }

    /// Same losses and variant, different alteration factor.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self { kappa, ..*self })
    }

    /// Fraction of Alice's photons that reach Eve's detectors and register.
    pub fn thinning(&self) -> f64 {
        self.eta_eve * self.channel_transmittance
    }
}

fn check_kappa(kappa: f64) -> Result<f64> {
    check_range("kappa", kappa, kappa >= 1.0 && kappa.is_finite(), "[1, inf)")
}

/// Conclusive-outcome probability per photon number, `y(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldProfile {
    values: Vec<f64>,
}

impl YieldProfile {
    /// Validates `values[0] == 0` and every entry in `[0, 1]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        check_range("n_max", values.len() as f64, values.len() >= 2, "[1, inf)")?;
        check_range("y(0)", values[0], values[0] == 0.0, "{0}")?;
        for &y in &values {
            check_range("y(n)", y, (0.0..=1.0).contains(&y), "[0, 1]")?;
        }
        Ok(Self { values })
    }

    pub fn usd(n_max: u32) -> Self {
        Self {
            values: (0..=n_max).map(usd_yield).collect(),
        }
    }

    pub fn modified_usd(t: f64, n_max: u32) -> Result<Self> {
        let values = (0..=n_max)
            .map(|n| modified_usd_yield(n, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values })
    }

    /// Yield of the `n`-photon component; zero beyond the table.
    pub fn get(&self, n: u32) -> f64 {
        self.values.get(n as usize).copied().unwrap_or(0.0)
    }

    pub fn n_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Maps Alice's nominal intensities to the damaged ones, `(kappa*mu, kappa*nu)`.
pub fn lda_transform(params: &DecoyParams, kappa: f64) -> Result<(f64, f64)> {
    check_kappa(kappa)?;
    Ok((kappa * params.mu(), kappa * params.nu()))
}

/// Probability that `n` photons give a conclusive USD outcome.
///
/// Equals `1 - (3^n - 1) / 2^(2n-1)` for `n >= 1`, evaluated as
/// `1 - 2 (3/4)^n + 2 (1/4)^n`. The vacuum yield is zero.
pub fn usd_yield(n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as i32;
    1.0 - 2.0 * 0.75f64.powi(n) + 2.0 * 0.25f64.powi(n)
}

/// USD yield behind the tap: every one of the `n` photons must pass.
pub fn modified_usd_yield(n: u32, t: f64) -> Result<f64> {
    check_unit_open_closed("t", t)?;
    Ok(t.powi(n as i32) * usd_yield(n))
}

/// `(1 - e^{-m/2}) (1 - e^{-m/4})^2`.
pub fn usd_gain_closed(mean_tilde: f64) -> Result<f64> {
    check_mean(mean_tilde)?;
    let a = -(-mean_tilde / 2.0).exp_m1();
    let b = -(-mean_tilde / 4.0).exp_m1();
    Ok(a * b * b)
}

/// `e^{-(1-t) m} (1 - e^{-t m/2}) (1 - e^{-t m/4})^2`.
pub fn modified_usd_gain_closed(mean_tilde: f64, t: f64) -> Result<f64> {
    check_unit_open_closed("t", t)?;
    check_mean(mean_tilde)?;
    Ok((-(1.0 - t) * mean_tilde).exp() * usd_gain_closed(t * mean_tilde)?)
}

/// `y3 m^3 e^{-m} / 6`, exact for a profile with only the 3-photon term.
pub fn pns3_gain_closed(mean_tilde: f64, y3: f64) -> Result<f64> {
    check_unit_open_closed("y3", y3)?;
    check_mean(mean_tilde)?;
    Ok(y3 * mean_tilde.powi(3) * (-mean_tilde).exp() / 6.0)
}

pub fn pns3_yield_profile(y3: f64) -> Result<YieldProfile> {
    check_unit_open_closed("y3", y3)?;
    let mut values = vec![0.0; 4];
    values[3] = y3;
    Ok(YieldProfile { values })
}

/// Gains seen by the decoy-state analysis while the attack runs.
///
/// Alice's intensities are scaled by `kappa`, then thinned by Eve's
/// detection efficiency and the channel before the variant's gain formula.
/// Vacuum pulses never produce a resend, so `q_0 = 0`.
pub fn attack_gains(params: &DecoyParams, config: &AttackConfig) -> Result<GainSet> {
    let (mu_tilde, nu_tilde) = lda_transform(params, config.kappa)?;
    let thin = config.thinning();
    let variant = config.variant;
    GainSet::new(variant.gain(mu_tilde * thin)?, variant.gain(nu_tilde * thin)?, 0.0)
}

/// Series route for the same gains, summing the yield profile to `n_max`.
pub fn attack_gains_series(params: &DecoyParams, config: &AttackConfig, n_max: u32) -> Result<GainSet> {
    let (mu_tilde, nu_tilde) = lda_transform(params, config.kappa)?;
    let thin = config.thinning();
    let profile = config.variant.yield_profile(n_max)?;
    GainSet::new(
        crate::estimator::gain_from_yields(&profile, mu_tilde * thin)?,
        crate::estimator::gain_from_yields(&profile, nu_tilde * thin)?,
        0.0,
    )
}

fn check_mean(mean: f64) -> Result<f64> {
    check_range("mean_tilde", mean, mean >= 0.0 && !mean.is_nan(), "[0, inf)")
}

impl Default for YieldProfile {
    fn default() -> Self {
        Self::usd(DEFAULT_N_MAX)
    }
}
