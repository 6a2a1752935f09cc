//! Fan-scaled uniform weight initialization.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(±sqrt(6 / fan_in))`; for layers feeding rectifiers.
    He,
    /// `U(±sqrt(6 / (fan_in + fan_out)))`; for linear/sigmoid outputs.
    Xavier,
}

impl Init {
    /// Draws in f64 and rounds to the target precision, so f32 and f64 nets
    /// seeded identically start from the same weights.
    pub fn sample<T: super::Scalar>(self, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> T {
        let bound = match self {
            Init::He => (6.0 / fan_in as f64).sqrt(),
            Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        T::from_f64(rng.random_range(-bound..bound))
    }
}
