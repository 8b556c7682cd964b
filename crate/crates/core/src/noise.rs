//! Noise primitives and the Laplace mechanism for counting queries.
//!
//! Laplace draws use the inverse-CDF transform: a fair sign bit and an
//! exponential magnitude `-b * ln(U)` with `U` uniform on `(0, 1]` at 53-bit
//! resolution. In snapped mode every draw is clamped and rounded to a
//! power-of-two grid, which removes the low-order bit patterns that leak the
//! un-noised value in naive floating-point Laplace samplers.
//!
//! Every logical task obtains its own [`NoiseSource`] via
//! [`NoiseSource::substream`], keyed by a stable label, so outputs do not
//! depend on how work is scheduled across threads.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Snapping grid used for release mode.
pub const RELEASE_SNAP_RESOLUTION: f64 = 1.0 / 1_048_576.0; // 2^-20
/// Clamp bound used for release mode.
pub const RELEASE_SNAP_CLAMP: f64 = 1_099_511_627_776.0; // 2^40

/// An `(epsilon, delta)` privacy parameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget", into = "RawBudget")]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBudget {
    epsilon: f64,
    delta: f64,
}

impl TryFrom<RawBudget> for PrivacyBudget {
    type Error = Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        PrivacyBudget::new(raw.epsilon, raw.delta)
    }
}

impl From<PrivacyBudget> for RawBudget {
    fn from(b: PrivacyBudget) -> Self {
        RawBudget {
            epsilon: b.epsilon,
            delta: b.delta,
        }
    }
}

impl PrivacyBudget {
    /// Requires `epsilon > 0` and `0 <= delta < 1`, both finite.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidBudget(format!(
                "epsilon must be a positive finite number, got {epsilon}"
            )));
        }
        if !(delta.is_finite() && (0.0..1.0).contains(&delta)) {
            return Err(Error::InvalidBudget(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(ε={}, δ={:e})", self.epsilon, self.delta)
    }
}

/// Scale parameter `b` of a zero-mean Laplace distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceScale(f64);

impl LaplaceScale {
    pub fn new(b: f64) -> Result<Self> {
        if b.is_finite() && b > 0.0 {
            Ok(LaplaceScale(b))
        } else {
            Err(Error::InvalidScale(b))
        }
    }

    /// Scale `sensitivity / epsilon` used by the Laplace mechanism.
    pub fn for_query(sensitivity: f64, epsilon: f64) -> Result<Self> {
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(Error::InvalidScale(sensitivity));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidBudget(format!(
                "epsilon must be a positive finite number, got {epsilon}"
            )));
        }
        LaplaceScale::new(sensitivity / epsilon)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Reproducible streams from a caller-supplied seed. Not for publication.
    SeededTest,
    /// Keyed from operating-system entropy; the key is never exposed.
    SecureRelease,
}

/// Post-processing applied to each Laplace draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snapping {
    Off,
    Snapped { resolution: f64, clamp: f64 },
}

impl Snapping {
    /// The resolution must be a power of two so that multiples of it are
    /// exactly representable and rounding to the grid is exact.
    pub fn snapped(resolution: f64, clamp: f64) -> Result<Self> {
        let is_pow2 = resolution.is_finite()
            && resolution > 0.0
            && resolution.log2().fract() == 0.0
            && 2f64.powi(resolution.log2() as i32) == resolution;
        if !is_pow2 {
            return Err(Error::InvalidSnapping(format!(
                "resolution must be a positive power of two, got {resolution}"
            )));
        }
        if !(clamp.is_finite() && clamp >= resolution) {
            return Err(Error::InvalidSnapping(format!(
                "clamp bound must be finite and at least the resolution, got {clamp}"
            )));
        }
        // Keep the clamp bound on the grid.
        let clamp = (clamp / resolution).floor() * resolution;
        Ok(Snapping::Snapped { resolution, clamp })
    }

    pub fn release_default() -> Self {
        Snapping::Snapped {
            resolution: RELEASE_SNAP_RESOLUTION,
            clamp: RELEASE_SNAP_CLAMP,
        }
    }

    /// Clamp to `[-clamp, clamp]` and round to the nearest grid multiple.
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Snapping::Off => x,
            Snapping::Snapped { resolution, clamp } => {
                let clamped = x.clamp(-clamp, clamp);
                (clamped / resolution).round() * resolution
            }
        }
    }
}

/// A keyed, splittable source of randomness.
///
/// The key is a 256-bit value. Substreams are derived by hashing the parent
/// key with a label, so two sources with the same key and label path produce
/// identical streams regardless of the order in which they were derived.
pub struct NoiseSource {
    key: [u8; 32],
    rng: ChaCha20Rng,
    mode: NoiseMode,
    snapping: Snapping,
}

impl NoiseSource {
    /// Deterministic source for tests and reproducible desk runs.
    pub fn seeded(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"tripdp/seeded/");
        hasher.update(seed.to_le_bytes());
        Self::from_key(
            hasher.finalize().into(),
            NoiseMode::SeededTest,
            Snapping::Off,
        )
    }

    /// Source keyed from operating-system entropy, with release snapping.
    pub fn secure() -> Self {
        let mut key = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut key);
        Self::from_key(key, NoiseMode::SecureRelease, Snapping::release_default())
    }

    fn from_key(key: [u8; 32], mode: NoiseMode, snapping: Snapping) -> Self {
        NoiseSource {
            key,
            rng: ChaCha20Rng::from_seed(key),
            mode,
            snapping,
        }
    }

    pub fn with_snapping(mut self, snapping: Snapping) -> Self {
        self.snapping = snapping;
        self
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn snapping(&self) -> Snapping {
        self.snapping
    }

    /// Independent child stream for the task named `label`.
    pub fn substream(&self, label: &str) -> NoiseSource {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(hasher.finalize().into(), self.mode, self.snapping)
    }

    /// Uniform on `(0, 1]` with 53 bits of resolution.
    fn uniform_open_closed(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits + 1) as f64 / (1u64 << 53) as f64
    }

    fn raw_laplace(&mut self, b: f64) -> f64 {
        let magnitude = -b * self.uniform_open_closed().ln();
        if self.rng.gen::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

impl fmt::Debug for NoiseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseSource")
            .field("mode", &self.mode)
            .field("snapping", &self.snapping)
            .finish_non_exhaustive()
    }
}

/// One draw from `Lap(0, b)`, snapped if the source is configured to snap.
pub fn sample_laplace(scale: LaplaceScale, rng: &mut NoiseSource) -> f64 {
    let x = rng.raw_laplace(scale.get());
    rng.snapping.apply(x)
}

/// Exact `P(Lap(b) >= threshold) = exp(-threshold / b) / 2`.
pub fn laplace_tail(scale: LaplaceScale, threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidThreshold(threshold));
    }
    Ok(0.5 * (-threshold / scale.get()).exp())
}

/// Laplace mechanism for a counting query: `count + Lap(sensitivity / epsilon)`.
pub fn noisy_count(
    true_count: u64,
    epsilon: f64,
    sensitivity: f64,
    rng: &mut NoiseSource,
) -> Result<f64> {
    let scale = LaplaceScale::for_query(sensitivity, epsilon)?;
    Ok(true_count as f64 + sample_laplace(scale, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(n: usize, b: f64, seed: u64) -> Vec<f64> {
        let mut rng = NoiseSource::seeded(seed);
        let scale = LaplaceScale::new(b).unwrap();
        (0..n).map(|_| sample_laplace(scale, &mut rng)).collect()
    }

    fn laplace_cdf(x: f64, b: f64) -> f64 {
        if x < 0.0 {
            0.5 * (x / b).exp()
        } else {
            1.0 - 0.5 * (-x / b).exp()
        }
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(1.0, 0.0).is_ok());
        assert!(PrivacyBudget::new(0.0, 0.1).is_err());
        assert!(PrivacyBudget::new(-1.0, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, -0.1).is_err());
        assert!(PrivacyBudget::new(f64::NAN, 0.1).is_err());
        assert!(serde_json::from_str::<PrivacyBudget>(r#"{"epsilon":2,"delta":2}"#).is_err());
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(LaplaceScale::new(0.0).is_err());
        assert!(LaplaceScale::new(-2.0).is_err());
        assert!(LaplaceScale::new(f64::INFINITY).is_err());
    }

    #[test]
    fn mean_is_zero() {
        let xs = draws(1_000_000, 1.0, 1);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn upper_tail_matches_closed_form() {
        let b = 2.0;
        let t = 2f64.ln();
        let xs = draws(1_000_000, b, 2);
        let frac = xs.iter().filter(|&&x| x >= t * b).count() as f64 / xs.len() as f64;
        assert!((frac - 0.25).abs() < 0.01, "tail fraction {frac}");
    }

    #[test]
    fn ks_distance_against_analytic_cdf() {
        let b = 1.5;
        let mut xs = draws(1_000_000, b, 3);
        xs.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = laplace_cdf(x, b);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 0.005, "KS distance {d}");
    }

    #[test]
    fn seeded_streams_repeat() {
        assert_eq!(draws(1000, 1.0, 42), draws(1000, 1.0, 42));
        assert_ne!(draws(1000, 1.0, 42), draws(1000, 1.0, 43));
    }

    #[test]
    fn substreams_depend_only_on_label_path() {
        let root = NoiseSource::seeded(9);
        let scale = LaplaceScale::new(1.0).unwrap();
        let mut a1 = root.substream("a");
        let _ = root.substream("b");
        let mut a2 = NoiseSource::seeded(9).substream("a");
        let mut b = root.substream("b");
        let x1 = sample_laplace(scale, &mut a1);
        assert_eq!(x1, sample_laplace(scale, &mut a2));
        assert_ne!(x1, sample_laplace(scale, &mut b));
    }

    #[test]
    fn tail_identity() {
        for &b in &[0.1, 1.0, 2.0, 37.5] {
            for &t in &[0.0, 0.5, 1.0, 3.0, 10.0] {
                let s = LaplaceScale::new(b).unwrap();
                let got = laplace_tail(s, t * b).unwrap();
                assert!((got - 0.5 * (-t).exp()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tail_examples() {
        let one = LaplaceScale::new(1.0).unwrap();
        assert_eq!(laplace_tail(one, 0.0).unwrap(), 0.5);
        assert!((laplace_tail(one, 4f64.ln()).unwrap() - 0.125).abs() < 1e-15);
        assert!(laplace_tail(one, -1.0).is_err());

        // b = 2/ε, threshold = 2·ln(2/δ)/ε at ε = 1, δ = 0.05: exactly δ/4,
        // inside the δ/2 bad-event bound.
        let delta: f64 = 0.05;
        let got = laplace_tail(LaplaceScale::new(2.0).unwrap(), 2.0 * (2.0 / delta).ln()).unwrap();
        assert!((got - delta / 4.0).abs() < 1e-15);
        assert!(got <= delta / 2.0);
    }

    #[test]
    fn noisy_count_accuracy() {
        // |out - c| <= ln(1/β)/ε with probability 1 - β.
        let mut rng = NoiseSource::seeded(5);
        let beta: f64 = 0.01;
        let bound = (1.0 / beta).ln();
        let trials = 1_000_000;
        let within = (0..trials)
            .filter(|_| (noisy_count(100, 1.0, 1.0, &mut rng).unwrap() - 100.0).abs() <= bound)
            .count() as f64
            / trials as f64;
        assert!((within - (1.0 - beta)).abs() <= 0.01, "within {within}");
    }

    #[test]
    fn noisy_count_zero_is_centered() {
        let mut rng = NoiseSource::seeded(6);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| noisy_count(0, 1.0, 1.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn noisy_count_deterministic_and_validated() {
        let a = noisy_count(10, 0.5, 1.0, &mut NoiseSource::seeded(8)).unwrap();
        let b = noisy_count(10, 0.5, 1.0, &mut NoiseSource::seeded(8)).unwrap();
        assert_eq!(a, b);
        assert!(noisy_count(10, 0.0, 1.0, &mut NoiseSource::seeded(8)).is_err());
        assert!(noisy_count(10, 1.0, 0.0, &mut NoiseSource::seeded(8)).is_err());
    }

    #[test]
    fn noisy_count_offset_is_laplace() {
        // Two-sample KS between noisy_count(c) - c and direct Lap(1/ε) draws.
        let eps = 0.7;
        let n = 100_000;
        let mut r1 = NoiseSource::seeded(10);
        let mut r2 = NoiseSource::seeded(11);
        let scale = LaplaceScale::new(1.0 / eps).unwrap();
        let mut a: Vec<f64> = (0..n)
            .map(|_| noisy_count(250, eps, 1.0, &mut r1).unwrap() - 250.0)
            .collect();
        let mut b: Vec<f64> = (0..n).map(|_| sample_laplace(scale, &mut r2)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        // Critical value at α = 0.001 is 1.95·sqrt(2/n) ≈ 0.0087.
        assert!(d < 0.0087, "two-sample KS {d}");
    }

    #[test]
    fn snapping_grid_and_idempotence() {
        let snap = Snapping::snapped(1.0 / 1024.0, 8.0).unwrap();
        let mut rng = NoiseSource::seeded(12).with_snapping(snap);
        let scale = LaplaceScale::new(3.0).unwrap();
        for _ in 0..10_000 {
            let x = sample_laplace(scale, &mut rng);
            assert_eq!((x * 1024.0).fract(), 0.0);
            assert!(x.abs() <= 8.0);
            assert_eq!(snap.apply(x), x);
        }
        assert!(Snapping::snapped(0.3, 8.0).is_err());
        assert!(Snapping::snapped(0.0, 8.0).is_err());
    }

    #[test]
    fn release_snapping_defaults() {
        match Snapping::release_default() {
            Snapping::Snapped { resolution, clamp } => {
                assert_eq!(resolution, 2f64.powi(-20));
                assert_eq!(clamp, 2f64.powi(40));
            }
            Snapping::Off => panic!("release snapping must be on"),
        }
        let s = NoiseSource::secure();
        assert_eq!(s.mode(), NoiseMode::SecureRelease);
        assert_eq!(s.snapping(), Snapping::release_default());
        assert!(!format!("{s:?}").contains("key"));
    }
}
