use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::Time;

/// Synchronous bound on honest message delay, in ticks.
pub const DEFAULT_DELTA: Time = 100_000;
pub const DEFAULT_MIN_LATENCY: Time = 5_000;
pub const DEFAULT_MAX_LATENCY: Time = 50_000;

/// Uniform one-way delay for prompt links, `min..=max` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub min: Time,
    pub max: Time,
}

impl Default for Latency {
    fn default() -> Self {
        Latency {
            min: DEFAULT_MIN_LATENCY,
            max: DEFAULT_MAX_LATENCY,
        }
    }
}

impl Latency {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        rng.gen_range(self.min..=self.max.max(self.min))
    }
}

/// Delay for a message leaving a node while it is sluggish: strictly
/// more than `delta`, at most `max`.
pub fn sluggish_delay<R: Rng + ?Sized>(delta: Time, max: Time, rng: &mut R) -> Time {
    rng.gen_range(delta + 1..=max.max(delta + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Latency::default();
        for _ in 0..10_000 {
            let d = l.sample(&mut rng);
            assert!((DEFAULT_MIN_LATENCY..=DEFAULT_MAX_LATENCY).contains(&d));
            let s = sluggish_delay(DEFAULT_DELTA, 3 * DEFAULT_DELTA, &mut rng);
            assert!(s > DEFAULT_DELTA && s <= 3 * DEFAULT_DELTA);
        }
    }
}
