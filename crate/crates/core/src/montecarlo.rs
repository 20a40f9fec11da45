//! Photon-routing simulation of Eve's USD receiver.
//!
//! Each trial routes photons one by one: through the tap (if any), then to
//! the correct-basis detector with probability 1/2 or to either wrong-basis
//! detector with probability 1/4. A trial is conclusive when exactly the
//! three detectors (correct, wrong A, wrong B) fired and no photon was lost
//! to the tap monitor.
//!
//! Trials are split into fixed-size shards. Shard `i` draws from ChaCha8
//! seeded with the master seed on stream `i`, so results depend only on
//! `(seed, trials, inputs)` and not on how many threads run the shards.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_range, check_unit_open_closed, Result};

/// Trials per shard.
pub const SHARD_TRIALS: u64 = 1 << 16;

/// Means below this use CDF inversion.
const INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    /// Tap transmittance; 1 means no tap.
    pub tap_t: f64,
}

impl McConfig {
    pub fn new(trials: u64, seed: u64, tap_t: f64) -> Result<Self> {
        check_range("trials", trials as f64, trials >= 1, "[1, inf)")?;
        check_unit_open_closed("tap_t", tap_t)?;
        Ok(Self { trials, seed, tap_t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub trials: u64,
    pub hits: u64,
}

impl McEstimate {
    fn from_hits(hits: u64, trials: u64) -> Self {
        let p_hat = hits as f64 / trials as f64;
        Self {
            p_hat,
            std_err: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
            trials,
            hits,
        }
    }

    /// `(p_hat - reference) / std_err`. A zero standard error gives 0 on an
    /// exact match and infinity otherwise.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.p_hat - reference;
        if self.std_err > 0.0 {
            d / self.std_err
        } else if d.abs() <= f64::EPSILON {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        }
    }

    pub fn agrees_with(&self, reference: f64, sigmas: f64) -> bool {
        self.z_score(reference).abs() <= sigmas
    }
}

fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

/// Runs `trial` `cfg.trials` times across shards and counts successes.
fn run_sharded<F>(cfg: &McConfig, trial: F) -> McEstimate
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    let shards = cfg.trials.div_ceil(SHARD_TRIALS);
    let hits: u64 = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(cfg.seed, shard);
            let len = SHARD_TRIALS.min(cfg.trials - shard * SHARD_TRIALS);
            (0..len).filter(|_| trial(&mut rng)).count() as u64
        })
        .sum();
    McEstimate::from_hits(hits, cfg.trials)
}

/// One pass of `n` photons through the (tapped) receiver.
pub fn conclusive_trial<R: Rng + ?Sized>(n: u64, tap_t: f64, rng: &mut R) -> bool {
    if n < 3 {
        return false;
    }
    let mut fired = [false; 3];
    for _ in 0..n {
        if tap_t < 1.0 && rng.random::<f64>() >= tap_t {
            return false;
        }
        // 0, 1: correct basis; 2, 3: the two wrong-basis outputs.
        match rng.random_range(0..4u8) {
            0 | 1 => fired[0] = true,
            2 => fired[1] = true,
            _ => fired[2] = true,
        }
    }
    fired.iter().all(|&f| f)
}

/// Poisson variate by CDF inversion for small means.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean >= INVERSION_LIMIT {
        return Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
    }
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

/// Frequency of conclusive outcomes for exactly `n` photons.
pub fn mc_conclusive_prob(n: u64, cfg: &McConfig) -> McEstimate {
    run_sharded(cfg, |rng| conclusive_trial(n, cfg.tap_t, rng))
}

/// Frequency of conclusive outcomes for Poisson pulses of the given mean.
pub fn mc_gain(mean_tilde: f64, cfg: &McConfig) -> Result<McEstimate> {
    check_range("mean_tilde", mean_tilde, mean_tilde >= 0.0 && mean_tilde.is_finite(), "[0, inf)")?;
    Ok(run_sharded(cfg, |rng| {
        let n = sample_poisson(mean_tilde, rng);
        conclusive_trial(n, cfg.tap_t, rng)
    }))
}

/// Sample mean of `draws` Poisson variates, for sampler validation.
pub fn poisson_sample_mean(mean: f64, draws: u64, seed: u64) -> f64 {
    let shards = draws.div_ceil(SHARD_TRIALS);
    let total: u64 = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, shard);
            let len = SHARD_TRIALS.min(draws - shard * SHARD_TRIALS);
            (0..len).map(|_| sample_poisson(mean, &mut rng)).sum::<u64>()
        })
        .sum();
    total as f64 / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{modified_usd_gain_closed, modified_usd_yield, usd_gain_closed, usd_yield};

    #[test]
    fn impossible_events() {
        let cfg = McConfig::new(1000, 1, 1.0).unwrap();
        assert_eq!(mc_conclusive_prob(2, &cfg).hits, 0);
        assert_eq!(mc_conclusive_prob(0, &cfg).p_hat, 0.0);
        assert_eq!(mc_gain(0.0, &cfg).unwrap().hits, 0);
    }

    #[test]
    fn three_photons() {
        let cfg = McConfig::new(200_000, 42, 1.0).unwrap();
        let est = mc_conclusive_prob(3, &cfg);
        assert!(est.agrees_with(usd_yield(3), 4.0), "{est:?}");
        let cfg = McConfig::new(400_000, 43, 0.5).unwrap();
        let est = mc_conclusive_prob(3, &cfg);
        assert!(est.agrees_with(modified_usd_yield(3, 0.5).unwrap(), 4.0), "{est:?}");
    }

    #[test]
    fn gains() {
        let cfg = McConfig::new(200_000, 7, 1.0).unwrap();
        let est = mc_gain(6.44, &cfg).unwrap();
        assert!(est.agrees_with(usd_gain_closed(6.44).unwrap(), 4.0), "{est:?}");
        let cfg = McConfig::new(200_000, 8, 0.15).unwrap();
        let est = mc_gain(10.0, &cfg).unwrap();
        assert!(est.agrees_with(modified_usd_gain_closed(10.0, 0.15).unwrap(), 4.0), "{est:?}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = McConfig::new(300_001, 99, 0.7).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_gain(5.0, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
        assert_eq!(mc_gain(5.0, &cfg).unwrap(), mc_gain(5.0, &cfg).unwrap());
    }

    #[test]
    fn poisson_sampler_mean() {
        for mean in [0.5, 6.44, 20.0, 45.0] {
            let draws = 1_000_000;
            let m = poisson_sample_mean(mean, draws, 5);
            let sigma = (mean / draws as f64).sqrt();
            assert!((m - mean).abs() <= 4.0 * sigma, "mean {mean}: {m}");
        }
    }

    #[test]
    fn z_score_edges() {
        let e = McEstimate::from_hits(0, 10);
        assert_eq!(e.z_score(0.0), 0.0);
        assert!(e.z_score(0.5).is_infinite());
        assert!(McConfig::new(0, 1, 1.0).is_err());
        assert!(McConfig::new(10, 1, 0.0).is_err());
    }
}
