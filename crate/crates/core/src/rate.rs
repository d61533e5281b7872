//! Classical rate-based byte sampling: a geometric countdown equivalent to a
//! per-byte Bernoulli trial with probability `1/rate`.
//!
//! Used as the comparison baseline against the threshold sampler and as the
//! engine behind copy-volume sampling. Deterministic mode (no RNG) resets the
//! countdown to exactly `rate` every time; it exists for reproducible tests
//! and is not uniform statistical sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RateError {
    #[error("sampling rate must be >= 1 byte")]
    ZeroRate,
}

#[derive(Debug, Clone)]
pub struct RateSampler {
    rate: u64,
    countdown: i64,
    rng: Option<ChaCha8Rng>,
    samples_emitted: u64,
}

impl RateSampler {
    /// Deterministic mode when `rng` is `None`, geometric draws otherwise.
    /// The initial countdown is drawn the same way as every re-draw.
    pub fn new(rate: u64, rng: Option<ChaCha8Rng>) -> Result<Self, RateError> {
        if rate == 0 {
            return Err(RateError::ZeroRate);
        }
        let mut sampler = RateSampler {
            rate,
            countdown: 0,
            rng,
            samples_emitted: 0,
        };
        sampler.countdown = sampler.draw() as i64;
        Ok(sampler)
    }

    /// `None` seed selects deterministic mode.
    pub fn from_seed(rate: u64, seed: Option<u64>) -> Result<Self, RateError> {
        Self::new(rate, seed.map(ChaCha8Rng::seed_from_u64))
    }

    /// Feeds `n` bytes of allocator (or copy) activity. Each time the
    /// countdown reaches zero a sample is emitted and a fresh countdown is
    /// added to the residual, so a single large `n` can emit several samples.
    pub fn record_bytes(&mut self, n: u64) -> u64 {
        self.countdown = self.countdown.saturating_sub_unsigned(n);
        let mut emitted = 0u64;
        while self.countdown <= 0 {
            emitted += 1;
            self.countdown = self.countdown.saturating_add_unsigned(self.draw());
        }
        self.samples_emitted += emitted;
        emitted
    }

    fn draw(&mut self) -> u64 {
        match &mut self.rng {
            None => self.rate,
            Some(rng) => geometric_draw(rng, self.rate),
        }
    }

    pub fn rate(&self) -> u64 {
        self.rate
    }

    pub fn samples_emitted(&self) -> u64 {
        self.samples_emitted
    }

    pub fn countdown(&self) -> i64 {
        self.countdown
    }
}

/// Number of Bernoulli(p = 1/rate) trials up to and including the first
/// success, via inverse-CDF: support {1, 2, ...}, mean `rate`.
fn geometric_draw(rng: &mut ChaCha8Rng, rate: u64) -> u64 {
    if rate == 1 {
        return 1;
    }
    let p = 1.0 / rate as f64;
    let u: f64 = rng.random(); // [0, 1)
    let k = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
    (k as u64).saturating_add(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_init_equals_rate() {
        let s = RateSampler::from_seed(100, None).unwrap();
        assert_eq!(s.countdown(), 100);
        assert_eq!(
            RateSampler::from_seed(0, None).unwrap_err(),
            RateError::ZeroRate
        );
    }

    #[test]
    fn residual_arithmetic_matches_the_decrement_rule() {
        let mut s = RateSampler::from_seed(100, None).unwrap();
        assert_eq!(s.record_bytes(250), 2);
        assert_eq!(s.countdown(), 50);
        assert_eq!(s.record_bytes(0), 0);
        assert_eq!(s.samples_emitted(), 2);
    }

    #[test]
    fn rate_one_triggers_on_every_byte() {
        let mut det = RateSampler::from_seed(1, None).unwrap();
        assert_eq!(det.record_bytes(7), 7);
        let mut seeded = RateSampler::from_seed(1, Some(9)).unwrap();
        assert_eq!(seeded.record_bytes(7), 7);
    }

    #[test]
    fn deterministic_total_is_floor_of_bytes_over_rate() {
        // Independent of how the byte stream is split into events.
        let rate = 97u64;
        let total = 100_000u64;
        let splits: Vec<Vec<u64>> = vec![
            vec![total],
            vec![1; total as usize],
            vec![300, 99_700],
            vec![50_000, 49_999, 1],
        ];
        for split in splits {
            let mut s = RateSampler::from_seed(rate, None).unwrap();
            let emitted: u64 = split.iter().map(|&n| s.record_bytes(n)).sum();
            assert_eq!(emitted, total / rate);
        }
    }

    #[test]
    fn geometric_draws_fit_the_distribution() {
        // Chi-square goodness of fit over 1e5 draws against Geometric(1/100),
        // binned into 20 equal-probability bins. Critical value for df=19 at
        // the 0.999 quantile is 43.82; the seed is fixed so this is stable.
        let rate = 100u64;
        let p = 1.0 / rate as f64;
        let n_draws = 100_000usize;
        let n_bins = 20usize;

        // Bin edges at the geometric quantiles: k <= edge[i] with prob (i+1)/20.
        let mut edges = Vec::with_capacity(n_bins - 1);
        for i in 1..n_bins {
            let q = i as f64 / n_bins as f64;
            let k = ((1.0 - q).ln() / (1.0 - p).ln()).ceil().max(1.0) as u64;
            edges.push(k);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = vec![0u64; n_bins];
        for _ in 0..n_draws {
            let draw = geometric_draw(&mut rng, rate);
            let bin = edges.partition_point(|&e| draw > e);
            counts[bin] += 1;
        }

        // Exact bin probabilities from the geometric CDF.
        let cdf = |k: u64| 1.0 - (1.0 - p).powi(k as i32);
        let mut chi2 = 0.0;
        let mut lo = 0u64;
        for (i, &count) in counts.iter().enumerate() {
            let hi_cdf = if i + 1 == n_bins { 1.0 } else { cdf(edges[i]) };
            let prob = hi_cdf - cdf(lo);
            let expected = prob * n_draws as f64;
            chi2 += (count as f64 - expected).powi(2) / expected;
            if i + 1 != n_bins {
                lo = edges[i];
            }
        }
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn seeded_sample_count_is_within_three_sigma_of_binomial() {
        let rate = 1000u64;
        let total_bytes = 10_000_000u64;
        let mut s = RateSampler::from_seed(rate, Some(7)).unwrap();
        let mut emitted = 0u64;
        let mut fed = 0u64;
        while fed < total_bytes {
            let chunk = 4096.min(total_bytes - fed);
            emitted += s.record_bytes(chunk);
            fed += chunk;
        }
        let p = 1.0 / rate as f64;
        let mean = total_bytes as f64 * p;
        let sigma = (total_bytes as f64 * p * (1.0 - p)).sqrt();
        let diff = (emitted as f64 - mean).abs();
        assert!(diff < 3.0 * sigma, "emitted {emitted}, mean {mean}, sigma {sigma}");
    }
}
