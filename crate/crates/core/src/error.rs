use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} must be in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("nu must be < mu (mu = {mu}, nu = {nu})")]
    DecoyOrder { mu: f64, nu: f64 },

    #[error("mu and nu are degenerate (|mu - nu| = {gap:e} < 1e-6)")]
    Degenerate { gap: f64 },

    #[error("signal gain is zero, key rate undefined")]
    NoSignal,

    #[error("no sign change of the threshold equation between {lo_db} dB and {hi_db} dB")]
    NoThreshold { lo_db: f64, hi_db: f64 },

    #[error("threshold solver residual {residual:e} exceeds tolerance")]
    SolverResidual { residual: f64 },

    #[error("target gain {target} is not attainable (untapped gain is {max})")]
    Unattainable { target: f64, max: f64 },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    ok: bool,
    range: &'static str,
) -> Result<f64> {
    if ok && !value.is_nan() {
        Ok(value)
    } else {
        Err(Error::OutOfRange { name, value, range })
    }
}

/// Checks `0 < value <= 1`.
pub(crate) fn check_unit_open_closed(name: &'static str, value: f64) -> Result<f64> {
    check_range(name, value, value > 0.0 && value <= 1.0, "(0, 1]")
}
