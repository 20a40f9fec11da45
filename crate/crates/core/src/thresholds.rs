//! Critical attenuation alteration.
//!
//! The threshold is the smallest `kappa` at which the decoy-state lower
//! bound `Y1^L` turns positive while Eve holds every resent bit. With
//! `Q_0 = 0` that is the root of
//!
//! ```text
//! Q_nu(kappa nu) e^nu = (nu/mu)^2 Q_mu(kappa mu) e^mu
//! ```
//!
//! Numerical roots are found by scanning `kappa` in dB over `[0, 40]` and
//! bisecting the first sign change of the log of the ratio of the two sides.

use serde::Serialize;

use crate::attacks::{attack_gains, AttackConfig, AttackVariant};
use crate::error::{check_unit_open_closed, Error, Result};
use crate::estimator::DecoyParams;
use crate::roots::{bisect, scan_bracket};

/// Scan window in dB and step.
pub const SCAN_LO_DB: f64 = 0.0;
pub const SCAN_HI_DB: f64 = 40.0;
pub const SCAN_STEP_DB: f64 = 0.01;

/// Largest accepted `|LHS - 1|` at a numerical root.
pub const ROOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    NumericalRoot,
    AnalyticApprox,
}

impl ThresholdMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ThresholdMethod::NumericalRoot => "numeric",
            ThresholdMethod::AnalyticApprox => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub kappa_linear: f64,
    pub kappa_db: f64,
    pub method: ThresholdMethod,
    pub variant: AttackVariant,
    /// `|LHS - 1|` at the root; `None` for closed forms.
    pub residual: Option<f64>,
    /// Corrections applied by [`realistic_threshold`]; 1 when ideal.
    pub eta_eve: f64,
    pub channel_transmittance: f64,
}

impl ThresholdResult {
    fn new(kappa: f64, method: ThresholdMethod, variant: AttackVariant, residual: Option<f64>) -> Self {
        Self {
            kappa_linear: kappa,
            kappa_db: to_db(kappa),
            method,
            variant,
            residual,
            eta_eve: 1.0,
            channel_transmittance: 1.0,
        }
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Channel transmittance for a loss given in dB.
pub fn transmittance_from_loss_db(loss_db: f64) -> Result<f64> {
    crate::error::check_range("channel loss", loss_db, loss_db >= 0.0 && loss_db.is_finite(), "[0, inf) dB")?;
    Ok(from_db(-loss_db))
}

/// Truncates a dB value to `decimals` places, the presentation rule of the
/// threshold tables (e.g. 11.155 -> 11.1, 17.257 -> 17.2).
pub fn truncate_db(db: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    // Absorb representation error so that e.g. 21.1 stays 21.1.
    (db * scale + 1e-9).floor() / scale
}

/// `ln(sinh x)` without overflow for large `x`.
fn ln_sinh(x: f64) -> f64 {
    x + (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2
}

/// Log of the left-hand side of the standard-USD threshold equation
///
/// ```text
/// sinh(k nu/4) sinh^2(k nu/8) / [sinh(k mu/4) sinh^2(k mu/8)] (mu/nu)^2 e^{(k-2)(mu-nu)/2}
/// ```
pub fn usd_equation_ln(kappa: f64, params: &DecoyParams) -> f64 {
    let (mu, nu) = (params.mu(), params.nu());
    ln_sinh(kappa * nu / 4.0) + 2.0 * ln_sinh(kappa * nu / 8.0)
        - ln_sinh(kappa * mu / 4.0)
        - 2.0 * ln_sinh(kappa * mu / 8.0)
        + 2.0 * (mu / nu).ln()
        + (kappa - 2.0) * (mu - nu) / 2.0
}

/// Log of the left-hand side of the tapped-USD threshold equation, with
/// sinh arguments `t k x / 4` and `t k x / 8` and exponent
/// `(k - 1 - t k / 2)(mu - nu)`. Reduces to [`usd_equation_ln`] at `t = 1`.
pub fn modified_equation_ln(kappa: f64, params: &DecoyParams, t: f64) -> f64 {
    let (mu, nu) = (params.mu(), params.nu());
    let tk = t * kappa;
    ln_sinh(tk * nu / 4.0) + 2.0 * ln_sinh(tk * nu / 8.0)
        - ln_sinh(tk * mu / 4.0)
        - 2.0 * ln_sinh(tk * mu / 8.0)
        + 2.0 * (mu / nu).ln()
        + (kappa - 1.0 - tk / 2.0) * (mu - nu)
}

/// `ln[Q_nu e^nu mu^2 / (nu^2 Q_mu e^mu)]` from the attack gains; positive
/// exactly when `Y1^L > 0` (with `Q_0 = 0`).
pub fn gains_ratio_ln(kappa: f64, params: &DecoyParams, variant: AttackVariant) -> Result<f64> {
    let g = attack_gains(params, &AttackConfig::new(kappa, variant)?)?;
    let (mu, nu) = (params.mu(), params.nu());
    Ok(g.q_nu.ln() + nu - g.q_mu.ln() - mu + 2.0 * (mu / nu).ln())
}

fn solve_ln_equation<F>(ln_lhs: F, variant: AttackVariant) -> Result<ThresholdResult>
where
    F: Fn(f64) -> f64,
{
    let in_db = |db: f64| ln_lhs(from_db(db));
    let (a, b) = scan_bracket(in_db, SCAN_LO_DB, SCAN_HI_DB, SCAN_STEP_DB).ok_or(Error::NoThreshold {
        lo_db: SCAN_LO_DB,
        hi_db: SCAN_HI_DB,
    })?;
    let db = bisect(in_db, a, b);
    let kappa = from_db(db);
    let residual = ln_lhs(kappa).exp_m1().abs();
    if residual.is_nan() || residual >= ROOT_TOLERANCE {
        return Err(Error::SolverResidual { residual });
    }
    let mut result = ThresholdResult::new(kappa, ThresholdMethod::NumericalRoot, variant, Some(residual));
    result.kappa_db = db;
    Ok(result)
}

/// Root of the standard-USD transcendental equation.
pub fn solve_usd_threshold(params: &DecoyParams) -> Result<ThresholdResult> {
    solve_ln_equation(|k| usd_equation_ln(k, params), AttackVariant::StandardUsd)
}

/// Root of the tapped-USD transcendental equation.
pub fn solve_modified_threshold(params: &DecoyParams, t: f64) -> Result<ThresholdResult> {
    check_unit_open_closed("t", t)?;
    solve_ln_equation(|k| modified_equation_ln(k, params, t), AttackVariant::ModifiedUsd { t })
}

/// Zero of `Y1^L` evaluated directly on the attack gains of `variant`.
pub fn solve_from_gains(params: &DecoyParams, variant: AttackVariant) -> Result<ThresholdResult> {
    let variant = variant.validate()?;
    solve_ln_equation(
        |k| gains_ratio_ln(k, params, variant).unwrap_or(f64::NAN),
        variant,
    )
}

/// Root of `Q_nu e^nu = (nu/mu)^2 Q_mu e^mu` under 3-photon PNS gains.
pub fn solve_pns3_threshold(params: &DecoyParams) -> Result<ThresholdResult> {
    solve_from_gains(params, AttackVariant::Pns3 { y3: 1.0 })
}

/// `ln(mu/nu) / (mu - nu)`.
fn log_ratio_slope(params: &DecoyParams) -> f64 {
    let (mu, nu) = (params.mu(), params.nu());
    (mu / nu).ln() / (mu - nu)
}

/// `1 + ln(mu/nu) / (mu - nu)`. Exact for the 3-photon PNS attack.
pub fn analytic_pns3_threshold(params: &DecoyParams) -> ThresholdResult {
    ThresholdResult::new(
        1.0 + log_ratio_slope(params),
        ThresholdMethod::AnalyticApprox,
        AttackVariant::Pns3 { y3: 1.0 },
        None,
    )
}

/// `2 + 2 ln(mu/nu) / (mu - nu)`, twice the 3-photon threshold.
pub fn analytic_usd_threshold(params: &DecoyParams) -> ThresholdResult {
    ThresholdResult::new(
        2.0 * (1.0 + log_ratio_slope(params)),
        ThresholdMethod::AnalyticApprox,
        AttackVariant::StandardUsd,
        None,
    )
}

/// `2 / (2 - t) * (1 + ln(mu/nu) / (mu - nu))`.
pub fn analytic_modified_threshold(params: &DecoyParams, t: f64) -> Result<ThresholdResult> {
    check_unit_open_closed("t", t)?;
    Ok(ThresholdResult::new(
        2.0 * (1.0 + log_ratio_slope(params)) / (2.0 - t),
        ThresholdMethod::AnalyticApprox,
        AttackVariant::ModifiedUsd { t },
        None,
    ))
}

/// Threshold for a lossy Eve: the damage must also make up for her
/// detector efficiency and the channel, `kappa / (eta_eve * eta_ch)`.
pub fn realistic_threshold(
    base: &ThresholdResult,
    eta_eve: f64,
    channel_transmittance: f64,
) -> Result<ThresholdResult> {
    check_unit_open_closed("eta_eve", eta_eve)?;
    check_unit_open_closed("channel_transmittance", channel_transmittance)?;
    let factor = eta_eve * channel_transmittance;
    let kappa = base.kappa_linear / factor;
    Ok(ThresholdResult {
        kappa_linear: kappa,
        kappa_db: base.kappa_db - to_db(factor),
        eta_eve: base.eta_eve * eta_eve,
        channel_transmittance: base.channel_transmittance * channel_transmittance,
        ..*base
    })
}
