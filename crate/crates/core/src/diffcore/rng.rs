//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed on
//! `(seed, domain)` and positioned by a stream index (draw, example, epoch...).
//! Two calls with the same triple see the same numbers no matter which thread
//! runs them or in what order.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::{Error, Result};

/// Separates independent uses of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ParamNoise = 1,
    Probe = 2,
    InputMask = 3,
    Shuffle = 4,
    Init = 5,
    Generate = 6,
    Data = 7,
    Sample = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream for `(seed, domain, index)` at word position zero.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ (domain as u64).rotate_left(32);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform in the open-closed interval (0, 1].
fn unit_open_closed(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [0, 1).
pub fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller pair from exactly two `u64` words.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open_closed(rng);
    let u2 = unit_f64(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (r * angle.cos(), r * angle.sin())
}

/// Fills `out` with standard normals. Coordinates `2k` and `2k + 1` always
/// come from the k-th Box-Muller pair of the stream.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = normal_pair(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(rng).0;
    }
}

/// Random access to coordinate `coord` of the normal sequence of a stream.
pub fn standard_normal_at(seed: u64, domain: Domain, index: u64, coord: usize) -> f64 {
    let mut rng = stream(seed, domain, index);
    // one pair = two u64 = four 32-bit words
    rng.set_word_pos((coord / 2) as u128 * 4);
    let (a, b) = normal_pair(&mut rng);
    if coord.is_multiple_of(2) {
        a
    } else {
        b
    }
}

/// Rademacher (+1/-1) fill, one bit per coordinate.
pub fn fill_rademacher(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for chunk in out.chunks_mut(64) {
        let bits = rng.next_u64();
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

/// Isotropic Gaussian parameter noise: `n_draws` independent draws of
/// `N(0, sigma^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma: f64,
    n_draws: u64,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, n_draws: u64, seed: u64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if n_draws == 0 {
            return Err(Error::invalid("n_draws must be at least 1"));
        }
        Ok(Self {
            sigma,
            n_draws,
            seed,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_draws(&self) -> u64 {
        self.n_draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, draw_index: u64) -> Result<()> {
        if draw_index >= self.n_draws {
            return Err(Error::DrawOutOfRange {
                index: draw_index,
                n_draws: self.n_draws,
            });
        }
        Ok(())
    }

    /// Writes draw `draw_index` (already scaled by sigma) into `out`.
    pub fn noise_into(&self, draw_index: u64, out: &mut [f64]) -> Result<()> {
        self.check(draw_index)?;
        let mut rng = stream(self.seed, Domain::ParamNoise, draw_index);
        fill_standard_normal(&mut rng, out);
        for v in out.iter_mut() {
            *v *= self.sigma;
        }
        Ok(())
    }
}

/// `theta + eps` for draw `draw_index`; `theta` is left untouched.
pub fn gaussian_perturb(
    theta: &ParamVector,
    spec: &NoiseSpec,
    draw_index: u64,
) -> Result<ParamVector> {
    let mut noise = vec![0.0; theta.len()];
    spec.noise_into(draw_index, &mut noise)?;
    for (n, t) in noise.iter_mut().zip(theta.values()) {
        *n += t;
    }
    theta.with_values(noise)
}
