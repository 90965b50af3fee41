//! Numerical building blocks shared by the rest of the crate.

mod hermite;
mod integrate;

pub use hermite::{gauss_hermite, GaussHermite};
pub use integrate::{adaptive_simpson, half_line_integral, HalfLine};

/// Neumaier's compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Running mean and second central moment (Welford / Chan et al.).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningMoments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Pairwise merge; merging in a fixed order makes the result independent
    /// of how the chunks were scheduled.
    pub fn merge(&self, other: &RunningMoments) -> RunningMoments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        RunningMoments { count, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Probabilists' Hermite polynomial `He_m(x)` for `m ≤ 4`.
#[inline]
pub fn hermite_he(m: usize, x: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => x,
        2 => x * x - 1.0,
        3 => x * (x * x - 3.0),
        4 => {
            let x2 = x * x;
            x2 * x2 - 6.0 * x2 + 3.0
        }
        _ => panic!("hermite_he: order {m} > 4"),
    }
}

/// `He_m` with every coefficient replaced by its absolute value, evaluated at
/// `r ≥ 0`; bounds `|He_m(x)|` for `|x| ≤ r`.
#[inline]
pub fn hermite_he_abs(m: usize, r: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => r,
        2 => r * r + 1.0,
        3 => r * (r * r + 3.0),
        4 => {
            let r2 = r * r;
            r2 * r2 + 6.0 * r2 + 3.0
        }
        _ => panic!("hermite_he_abs: order {m} > 4"),
    }
}

/// `P(|ξ| ≥ ρ)` bound for `ξ ~ N(0, C)` in `dim` dimensions with largest
/// eigenvalue `lambda_max`, through `|ξ|² ≤ λ_max χ²_d`.
pub fn gaussian_norm_tail(dim: usize, lambda_max: f64, rho: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if rho <= 0.0 {
        return 1.0;
    }
    if lambda_max <= 0.0 {
        return 0.0;
    }
    let chi = ChiSquared::new(dim as f64).expect("positive degrees of freedom");
    chi.sf(rho * rho / lambda_max).clamp(0.0, 1.0)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..10_000 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-12).abs() < 1e-24);
    }

    #[test]
    fn running_moments_merge_matches_serial() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut all = RunningMoments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (a, b) = xs.split_at(313);
        let mut ma = RunningMoments::default();
        let mut mb = RunningMoments::default();
        a.iter().for_each(|&x| ma.push(x));
        b.iter().for_each(|&x| mb.push(x));
        let merged = ma.merge(&mb);
        assert_eq!(merged.count, all.count);
        assert!((merged.mean - all.mean).abs() < 1e-12);
        assert!((merged.variance() - all.variance()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_tail_one_dimensional() {
        // P(|Z| ≥ 1.96) ≈ 0.05
        let p = gaussian_norm_tail(1, 1.0, 1.959963984540054);
        assert!((p - 0.05).abs() < 1e-9, "{p}");
        assert_eq!(gaussian_norm_tail(2, 1.0, 0.0), 1.0);
    }

    #[test]
    fn hermite_matches_recurrence() {
        for &x in &[-2.5, -0.3, 0.0, 0.7, 3.1] {
            let mut prev = 1.0;
            let mut cur = x;
            assert_eq!(hermite_he(0, x), 1.0);
            assert_eq!(hermite_he(1, x), x);
            for m in 1..4 {
                let next = x * cur - m as f64 * prev;
                assert!((hermite_he(m + 1, x) - next).abs() < 1e-12);
                prev = cur;
                cur = next;
            }
        }
    }
}
