//! Security analysis of weak+vacuum decoy-state BB84 under a combined
//! laser-damage and unambiguous-state-discrimination attack.
//!
//! * [`estimator`]: decoy-state bounds and key rate.
//! * [`attacks`]: yields and gains under the attack variants.
//! * [`thresholds`]: critical attenuation alteration, numerical and closed form.
//! * [`montecarlo`]: photon-routing simulation of Eve's receiver.
//! * [`experiments`]: sweeps and threshold tables, CSV/JSON output.
//! * [`cli`]: the `qkdlab` command line.

pub mod attacks;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod montecarlo;
pub mod roots;
pub mod thresholds;

pub use error::{Error, Result};
