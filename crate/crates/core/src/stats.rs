//! Scalar distribution helpers: standard normal, truncated normal, log-gamma.

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Φ(x), accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// 1 − Φ(x) without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Probability mass of the standard normal on [a, b].
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a > 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln()
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Normal(mean, sd) restricted to [lo, hi] (either bound may be infinite).
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(sd > 0.0 && lo < hi);
        Self { mean, sd, lo, hi }
    }

    fn bounds(&self) -> (f64, f64) {
        ((self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd)
    }

    /// Normalizing mass of the untruncated law on [lo, hi].
    pub fn mass(&self) -> f64 {
        let (a, b) = self.bounds();
        std_normal_mass(a, b)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        normal_log_pdf(x, self.mean, self.sd) - self.mass().ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Inverse-CDF draw, working on the upper tail when the interval lies
    /// above the mean so that far-tail intervals keep their precision.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.bounds();
        let u: f64 = rng.random();
        let z = if a > 0.0 {
            let (qa, qb) = (std_normal_sf(a), std_normal_sf(b));
            let p = qa - u * (qa - qb);
            if p <= 0.0 {
                a
            } else {
                std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
            }
        } else if b < 0.0 {
            let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
            let p = pa + u * (pb - pa);
            if p <= 0.0 {
                b
            } else {
                -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
            }
        } else {
            let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
            let p = pa + u * (pb - pa);
            if p <= 0.0 {
                a
            } else if p >= 1.0 {
                b
            } else {
                -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
            }
        };
        (self.mean + self.sd * z.clamp(a, b)).clamp(self.lo, self.hi)
    }
}

/// Linear-interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(1.0 - std_normal_cdf(-1.0), 0.841_344_746_068_542_9, epsilon = 1e-10);
        assert_relative_eq!(std_normal_sf(8.0), 6.220_960_574_271_784e-16, max_relative = 1e-9);
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let tn = TruncatedNormal::new(0.3, 0.7, -0.2, 2.5);
        let n = 20_000;
        let h = (tn.hi - tn.lo) / n as f64;
        let s: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * tn.pdf(tn.lo + i as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert_relative_eq!(s, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn truncated_samples_stay_inside_and_match_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let tn = TruncatedNormal::new(0.0, 1.0, 0.0, f64::INFINITY);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = tn.sample(&mut rng);
            assert!(x >= 0.0);
            acc += x;
        }
        // half-normal mean sqrt(2/pi)
        assert_relative_eq!(acc / n as f64, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 5e-3);
    }

    #[test]
    fn far_tail_interval_is_sampled() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let tn = TruncatedNormal::new(0.0, 1.0, 9.0, 9.5);
        for _ in 0..1000 {
            let x = tn.sample(&mut rng);
            assert!((9.0..=9.5).contains(&x));
        }
    }

    #[test]
    fn quantiles_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_relative_eq!(quantile_sorted(&v, 0.25), 25.75);
        assert_relative_eq!(quantile_sorted(&v, 0.75), 75.25);
        assert_relative_eq!(quantile_sorted(&v, 0.5), 50.5);
    }
}
