//! Chance of an unrelated model passing verification.
//!
//! Between independent fair bit strings of length `n_w` the Hamming
//! similarity is approximately `N(0.5, 1/(4 n_w))`, so a threshold `tau`
//! admits a false match with probability `alpha = 1 - Phi((tau - 0.5) * 2 sqrt(n_w))`.

use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Printed whenever a registry holds bits that were not drawn as fair coins.
pub const STRUCTURED_BITS_CAVEAT: &str = "watermark bits are not independent fair coin flips; the normal \
approximation does not hold and a higher similarity threshold is needed, so no collision probability is certified";

/// Upper tail of the standard normal, `1 - Phi(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.15e-9), polished by one Halley step.
pub fn probit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("probit needs 0 < p < 1, got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    // Halley refinement against the lower-tail CDF
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

fn check_nw(n_w: usize) -> Result<()> {
    if n_w == 0 {
        return Err(Error::Config("N_w must be at least 1".into()));
    }
    Ok(())
}

/// Smallest threshold whose collision probability is at most `alpha`.
pub fn collision_threshold(n_w: usize, alpha: f64) -> Result<f64> {
    check_nw(n_w)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    // -probit(alpha) keeps precision for tiny alpha where 1 - alpha rounds
    let z = -probit(alpha)?;
    Ok(0.5 + z * (1.0 / (4.0 * n_w as f64)).sqrt())
}

/// Collision probability implied by a threshold.
pub fn collision_alpha(n_w: usize, tau: f64) -> Result<f64> {
    check_nw(n_w)?;
    if !tau.is_finite() {
        return Err(Error::Config(format!("tau must be finite, got {tau}")));
    }
    Ok(normal_sf((tau - 0.5) * 2.0 * (n_w as f64).sqrt()))
}

/// Number of matching bits needed for `HMS >= tau`.
pub fn matches_needed(n_w: usize, tau: f64) -> u64 {
    // guard against tau * n_w landing a hair above an integer
    ((tau * n_w as f64) - 1e-9).ceil().max(0.0) as u64
}

/// Exact `P(HMS >= tau)` for independent fair strings.
pub fn exact_binomial_tail(n_w: usize, tau: f64) -> Result<f64> {
    check_nw(n_w)?;
    let k = matches_needed(n_w, tau);
    if k == 0 {
        return Ok(1.0);
    }
    let bin = Binomial::new(0.5, n_w as u64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(bin.sf(k - 1))
}

/// Empirical `P(HMS >= tau)` over `trials` random string pairs.
pub fn monte_carlo_tail(n_w: usize, tau: f64, trials: usize, seed: u64) -> Result<f64> {
    check_nw(n_w)?;
    let words = n_w.div_ceil(64);
    let tail_mask = if n_w % 64 == 0 { u64::MAX } else { (1u64 << (n_w % 64)) - 1 };
    let k = matches_needed(n_w, tau) as u32;
    let mut rng = seeded(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut matches = 0u32;
        for w in 0..words {
            let mask = if w + 1 == words { tail_mask } else { u64::MAX };
            let diff = (rng.random::<u64>() ^ rng.random::<u64>()) & mask;
            matches += mask.count_ones() - diff.count_ones();
        }
        if matches >= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// Collision probability if the registry's bits allow one to be certified.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub alpha: Option<f64>,
    pub caveat: Option<&'static str>,
}

pub fn certify(n_w: usize, tau: f64, bernoulli_bits: bool) -> Result<Certificate> {
    let alpha = collision_alpha(n_w, tau)?;
    Ok(if bernoulli_bits {
        Certificate { alpha: Some(alpha), caveat: None }
    } else {
        Certificate { alpha: None, caveat: Some(STRUCTURED_BITS_CAVEAT) }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probit_known_values() {
        assert_eq!(probit(0.5).unwrap(), 0.0);
        let z = probit(0.975).unwrap();
        assert!((z - 1.959963984540054).abs() < 1e-10, "{z:e}");
        assert!((probit(0.025).unwrap() + 1.959963984540054).abs() < 1e-10);
        assert!((probit(1e-10).unwrap() + 6.361340902404056).abs() < 1e-9);
        assert!(probit(0.0).is_err() && probit(1.0).is_err());
    }

    #[test]
    fn probit_inverts_sf() {
        for &p in &[1e-15, 1e-9, 1e-4, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-9] {
            let z = probit(p).unwrap();
            let back = 1.0 - normal_sf(z);
            let low = normal_sf(-z);
            assert!(((if p < 0.5 { low } else { back }) - p).abs() / p.min(1.0 - p) < 1e-9, "{p}");
        }
    }

    #[test]
    fn threshold_edge_cases() {
        assert!((collision_threshold(200, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let m1 = collision_threshold(50, 1e-6).unwrap() - 0.5;
        let m4 = collision_threshold(200, 1e-6).unwrap() - 0.5;
        assert!((m1 / m4 - 2.0).abs() < 1e-12);
        assert!(collision_threshold(200, 0.0).is_err());
        assert!(collision_threshold(200, 1.0).is_err());
        assert!(collision_threshold(0, 0.1).is_err());
    }

    #[test]
    fn alpha_for_default_setup() {
        let a = collision_alpha(200, 0.75).unwrap();
        assert!((a / 7.69e-13 - 1.0).abs() < 0.05, "{a}");
        assert_eq!(collision_alpha(64, 0.5).unwrap(), 0.5);
        assert!(collision_alpha(64, f64::NAN).is_err());
    }

    #[test]
    fn round_trip() {
        for &a in &[1e-12, 1e-9, 3e-7, 1e-4, 0.01, 0.1, 0.4] {
            for n in [20, 64, 200, 1000] {
                let back = collision_alpha(n, collision_threshold(n, a).unwrap()).unwrap();
                assert!((back / a - 1.0).abs() < 1e-6, "{n} {a} {back}");
            }
        }
    }

    #[test]
    fn tails_agree() {
        let exact = exact_binomial_tail(200, 0.6).unwrap();
        let normal = collision_alpha(200, 0.6).unwrap();
        assert!(exact / normal < 2.0 && normal / exact < 2.0, "{exact} {normal}");
        let mc = monte_carlo_tail(200, 0.6, 200_000, 1).unwrap();
        assert!(mc / exact < 1.3 && exact / mc < 1.3, "{mc} {exact}");
        assert_eq!(exact_binomial_tail(10, 0.0).unwrap(), 1.0);
        assert!((exact_binomial_tail(1, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn structured_bits_get_no_certificate() {
        let c = certify(200, 0.75, false).unwrap();
        assert!(c.alpha.is_none() && c.caveat.is_some());
        assert!(certify(200, 0.75, true).unwrap().alpha.is_some());
    }
}
