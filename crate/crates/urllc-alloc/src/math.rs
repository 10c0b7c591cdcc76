//! Scalar numerics used throughout the crate: complementary error function,
//! Gaussian tail function and its inverse, compensated summation, and seed
//! derivation for independent random streams.

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6; // 2/sqrt(pi)
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Complementary error function, accurate to ~1 ulp over the range used here.
///
/// Small arguments use the positive-term series
/// `erf(x) = (2x/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n / (2n+1)!!`
/// (no cancellation); large arguments use the classical continued fraction
/// for `erfc`, evaluated with the modified Lentz scheme.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = (2x/sqrt(pi)) * e^{-x^2} * sum_{n>=0} (2x^2)^n / (1*3*...*(2n+1))
    let x2 = x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * f64::from(n) + 1.0);
        sum += term;
        if term < sum * 1e-18 || n > 200 {
            break;
        }
    }
    FRAC_2_SQRT_PI * x * (-x2).exp() * sum
}

fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
    // Modified Lentz evaluation of the continued fraction part.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0f64;
    for n in 1..200 {
        let a = 0.5 * n as f64; // numerator a_n = n/2
        // b_n = x for every level.
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

/// Standard normal density.
pub fn gaussian_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Gaussian tail probability `Q(z) = Pr{N(0,1) > z}`.
pub fn gaussian_q(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Inverse Gaussian tail function: the `z` with `Q(z) = p`.
///
/// Valid for `p` in (0, 1); the decoding error targets used here live deep in
/// the upper tail (`p` around 1e-5 .. 1e-7). An asymptotic first guess is
/// polished with Newton steps on `Q(z) - p` (derivative `-pdf(z)`), which
/// lands within ~1e-14 relative of the true root.
pub fn gaussian_q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "gaussian_q_inv requires 0 < p < 1, got {p}"
        )));
    }
    if p > 0.5 {
        return Ok(-gaussian_q_inv(1.0 - p)?);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Hastings-style rational approximation for the initial guess.
    let t = (-2.0 * p.ln()).sqrt();
    let mut z = t
        - (2.515_517 + t * (0.802_853 + t * 0.010_328))
            / (1.0 + t * (1.432_788 + t * (0.189_269 + t * 0.001_308)));
    // Newton refinement: f(z) = Q(z) - p, f'(z) = -pdf(z).
    for _ in 0..6 {
        let f = gaussian_q(z) - p;
        let step = f / gaussian_pdf(z);
        z += step;
        if step.abs() <= 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    Ok(z)
}

/// Compensated (Neumaier) summation: order-independent-grade accuracy while
/// keeping a strictly sequential, deterministic reduction.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean of a slice via compensated summation. Empty input yields NaN.
pub fn stable_mean(values: &[f64]) -> f64 {
    stable_sum(values) / values.len() as f64
}

/// Streaming Neumaier accumulator for reductions that cross buffer
/// boundaries. Feeding the same values in the same order always produces
/// the same total, bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct StableAcc {
    sum: f64,
    comp: f64,
}

impl StableAcc {
    pub fn new() -> Self {
        StableAcc::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// splitmix64 step, used to derive independent sub-seeds from one master
/// seed so that channel sampling, network init, and evaluation never share
/// a stream.
pub fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
}

/// Finalizer of splitmix64: maps the counter state to a well-mixed output.
fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Distinct purposes a random stream can serve within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Fading draws consumed by training batches.
    Channel,
    /// Fading draws consumed by held-out evaluation.
    Eval,
    /// Network weight initialization.
    Init,
    /// Scenario-level randomness (user positions).
    Scenario,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel => 0x6368_616e,
            Stream::Eval => 0x6576_616c,
            Stream::Init => 0x696e_6974,
            Stream::Scenario => 0x7363_656e,
        }
    }
}

/// Derive a sub-seed from a master seed, a purpose, and an index (e.g. trial
/// number). The same inputs always give the same output; different purposes
/// or indices give uncorrelated streams.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let mut s = master;
    splitmix64(&mut s);
    let a = splitmix64_mix(s ^ stream.tag());
    let mut s2 = a;
    splitmix64(&mut s2);
    splitmix64_mix(s2 ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
