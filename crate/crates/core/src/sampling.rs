//! Temperature transform and categorical sampling primitives.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic pseudorandom stream seeded from a 64-bit value.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for `(master, label, index)`.
    pub fn derive(master: u64, label: &str, index: u64) -> Self {
        Self::new(derive_seed(master, label, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labeled seed derivation: FNV-1a over the label, mixed with the master seed
/// and index through splitmix64.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

fn validate_pmf(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("empty pmf".into()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain("pmf entries must be finite and nonnegative".into()));
    }
    let s: f64 = p.iter().sum();
    if s == 0.0 {
        return Err(Error::Domain("all-zero pmf".into()));
    }
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("pmf sums to {s}")));
    }
    Ok(())
}

/// `base^(1/tau)` renormalized, evaluated in log space.
pub fn temper(base: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("temperature must be > 0, got {tau}")));
    }
    validate_pmf(base)?;
    let scaled: Vec<f64> = base
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / tau } else { f64::NEG_INFINITY })
        .collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// A pmf together with the temperature applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperedDistribution {
    base: Vec<f64>,
    tau: f64,
    tempered: Vec<f64>,
}

impl TemperedDistribution {
    pub fn new(base: Vec<f64>, tau: f64) -> Result<Self> {
        let tempered = temper(&base, tau)?;
        Ok(Self { base, tau, tempered })
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tempered(&self) -> &[f64] {
        &self.tempered
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<usize> {
        sample_categorical(&self.tempered, rng)
    }
}

/// Inverse-CDF lookup: first index whose cumulative sum exceeds `u`.
pub fn sample_with_uniform(dist: &[f64], u: f64) -> Result<usize> {
    validate_pmf(dist)?;
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if acc > u && *p > 0.0 {
            return Ok(i);
        }
    }
    // rounding left the total just below u
    Ok(dist.iter().rposition(|p| *p > 0.0).unwrap_or(0))
}

pub fn sample_categorical(dist: &[f64], rng: &mut SeededRng) -> Result<usize> {
    validate_pmf(dist)?;
    sample_with_uniform(dist, rng.uniform())
}

/// Argmax with ties broken toward the lowest index.
pub fn greedy(dist: &[f64]) -> Result<usize> {
    validate_pmf(dist)?;
    Ok(argmax(dist))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn temper_examples() {
        assert_eq!(temper(&[0.5, 0.5], 2.0).unwrap(), vec![0.5, 0.5]);
        let t = temper(&[0.9, 0.1], 2.0).unwrap();
        assert!((t[0] - 0.75).abs() < 1e-12 && (t[1] - 0.25).abs() < 1e-12);
        let t = temper(&[0.9, 0.1], 1.0).unwrap();
        assert!((t[0] - 0.9).abs() < 1e-12 && (t[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn temper_errors() {
        assert!(matches!(temper(&[0.5, 0.5], 0.0), Err(Error::Domain(_))));
        assert!(matches!(temper(&[0.5, 0.5], -1.0), Err(Error::Domain(_))));
        assert!(matches!(temper(&[0.0, 0.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tiny_probabilities_do_not_underflow() {
        let t = temper(&[1.0 - 1e-300, 1e-300], 0.01).unwrap();
        assert_eq!(t[0], 1.0);
        let t = temper(&[0.5, 0.5 - 1e-200, 1e-200], 50.0).unwrap();
        assert!(t.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn inverse_cdf_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(sample_with_uniform(&p, 0.49).unwrap(), 1);
        assert_eq!(sample_with_uniform(&p, 0.51).unwrap(), 2);
        assert_eq!(sample_with_uniform(&p, 0.0).unwrap(), 0);
        assert_eq!(sample_with_uniform(&[0.0, 1.0, 0.0], 0.0).unwrap(), 1);
        let mut rng = SeededRng::new(0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
        }
        assert!(sample_categorical(&[], &mut rng).is_err());
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy(&[0.2, 0.7, 0.1]).unwrap(), 1);
        assert_eq!(greedy(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(greedy(&[1.0]).unwrap(), 0);
    }

    #[test]
    fn derived_streams_differ() {
        let a = derive_seed(7, "world", 0);
        assert_ne!(a, derive_seed(7, "world", 1));
        assert_ne!(a, derive_seed(7, "init", 0));
        assert_ne!(a, derive_seed(8, "world", 0));
        let mut x = SeededRng::new(5);
        let mut y = SeededRng::new(5);
        assert!((0..100).all(|_| x.next_u64() == y.next_u64()));
    }

    fn pmf_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..12).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn tempered_is_normalized(p in pmf_strategy(), tau in 0.1f64..10.0) {
            let t = temper(&p, tau).unwrap();
            prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(t.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn argmax_is_invariant(p in pmf_strategy(), tau in 0.05f64..20.0) {
            prop_assert_eq!(greedy(&temper(&p, tau).unwrap()).unwrap(), greedy(&p).unwrap());
        }

        #[test]
        fn entropy_grows_with_tau(p in pmf_strategy(), t1 in 1.0f64..5.0, dt in 0.0f64..5.0) {
            let lo = entropy(&temper(&p, t1).unwrap());
            let hi = entropy(&temper(&p, t1 + dt).unwrap());
            prop_assert!(hi >= lo - 1e-12);
        }
    }
}
