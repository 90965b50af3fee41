//! One-dimensional building blocks of separable test functions.

use serde::Serialize;

use crate::numeric::{binomial, hermite_he, hermite_he_abs};

/// A scalar factor `φ(x)` with analytic derivatives up to order 4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "factor", rename_all = "snake_case")]
pub enum Factor {
    /// `exp(-x² / (2a²))`
    Gauss { a: f64 },
    /// `sin(ωx) exp(-x²/2)`
    SineGauss { omega: f64 },
    /// `(1 - x²)₊³`, twice continuously differentiable.
    CubicBump,
}

impl Factor {
    /// Highest derivative order that exists and is continuous (capped at 4).
    pub fn smoothness(&self) -> u8 {
        match self {
            Factor::CubicBump => 2,
            _ => 4,
        }
    }

    pub fn deriv(&self, m: usize, x: f64) -> f64 {
        match *self {
            Factor::Gauss { a } => {
                let u = x / a;
                let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * a.powi(-(m as i32)) * hermite_he(m, u) * (-0.5 * u * u).exp()
            }
            Factor::SineGauss { omega } => {
                let g = (-0.5 * x * x).exp();
                let phase = omega * x;
                let mut acc = 0.0;
                for j in 0..=m {
                    // j-th derivative of sin(ωx) is ω^j sin(ωx + jπ/2)
                    let trig = match j % 4 {
                        0 => phase.sin(),
                        1 => phase.cos(),
                        2 => -phase.sin(),
                        _ => -phase.cos(),
                    };
                    let sign = if (m - j).is_multiple_of(2) { 1.0 } else { -1.0 };
                    acc +=
                        binomial(m, j) * omega.powi(j as i32) * trig * sign * hermite_he(m - j, x);
                }
                acc * g
            }
            Factor::CubicBump => {
                if x.abs() >= 1.0 {
                    return 0.0;
                }
                let x2 = x * x;
                match m {
                    0 => {
                        let s = 1.0 - x2;
                        s * s * s
                    }
                    1 => -6.0 * x * (1.0 - x2) * (1.0 - x2),
                    2 => -6.0 + 36.0 * x2 - 30.0 * x2 * x2,
                    3 => 72.0 * x - 120.0 * x2 * x,
                    4 => 72.0 - 360.0 * x2,
                    _ => panic!("derivative order {m} > 4"),
                }
            }
        }
    }

    /// Bound on `sup_{|x| ≥ r} |φ^{(m)}(x)|`; `+∞` where no bound is offered.
    pub fn envelope(&self, m: usize, r: f64) -> f64 {
        match *self {
            Factor::Gauss { a } => {
                let u = r / a;
                if m == 0 {
                    return (-0.5 * u * u).exp();
                }
                // |He_m| e^{-u²/2} with absolute coefficients is decreasing past 3
                if u < 3.0 {
                    return f64::INFINITY;
                }
                a.powi(-(m as i32)) * hermite_he_abs(m, u) * (-0.5 * u * u).exp()
            }
            Factor::SineGauss { omega } => {
                if m == 0 {
                    return (-0.5 * r * r).exp();
                }
                if r < 3.0 {
                    return f64::INFINITY;
                }
                let w = omega.abs();
                (0..=m)
                    .map(|j| binomial(m, j) * w.powi(j as i32) * hermite_he_abs(m - j, r))
                    .sum::<f64>()
                    * (-0.5 * r * r).exp()
            }
            Factor::CubicBump => {
                if r >= 1.0 {
                    0.0
                } else if m == 0 {
                    (1.0 - r * r).powi(3)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Natural length scale, used to size certification grids.
    pub fn scale(&self) -> f64 {
        match *self {
            Factor::Gauss { a } => a,
            Factor::SineGauss { .. } | Factor::CubicBump => 1.0,
        }
    }

    /// Radius beyond which the order-`m` envelope is negligible.
    pub fn radius(&self, m: usize) -> f64 {
        if let Factor::CubicBump = self {
            return 1.0;
        }
        let s = self.scale();
        let reference = self.envelope(m, 3.0 * s);
        let mut r = 3.0 * s;
        while self.envelope(m, r) > 1e-17 * reference && r < 60.0 * s {
            r += 0.5 * s;
        }
        r
    }

    /// Certified `sup |φ^{(m)}|` on a uniform grid, with the largest jump
    /// between neighbouring grid values as the slack.
    pub fn sup_abs(&self, m: usize) -> (f64, f64) {
        let r = self.radius(m);
        let step = 1e-3 * self.scale().min(1.0);
        let count = (r / step).ceil() as i64;
        let mut best = 0.0_f64;
        let mut slack = 0.0_f64;
        let mut prev: Option<f64> = None;
        for i in -count..=count {
            let v = self.deriv(m, i as f64 * step);
            best = best.max(v.abs());
            if let Some(p) = prev {
                slack = slack.max((v - p).abs());
            }
            prev = Some(v);
        }
        (best, slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: &Factor, m: usize, x: f64) -> f64 {
        let h = 1e-4;
        (f.deriv(m, x + h) - f.deriv(m, x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_central_differences() {
        let factors = [
            Factor::Gauss { a: 1.0 },
            Factor::Gauss { a: 0.7 },
            Factor::SineGauss { omega: 2.0 },
            Factor::CubicBump,
        ];
        for f in &factors {
            let top = f.smoothness().min(4) as usize;
            for m in 0..top {
                for &x in &[-1.7, -0.4, 0.0, 0.3, 0.95, 2.2] {
                    let fd = central(f, m, x);
                    let exact = f.deriv(m + 1, x);
                    assert!(
                        (fd - exact).abs() < 1e-6 * exact.abs().max(1.0),
                        "{f:?} m={m} x={x}: {fd} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn gauss_values() {
        let g = Factor::Gauss { a: 1.0 };
        assert_eq!(g.deriv(0, 0.0), 1.0);
        assert_eq!(g.deriv(2, 0.0), -1.0);
        // sup |x e^{-x²/2}| = e^{-1/2} at x = 1
        let (s, slack) = g.sup_abs(1);
        assert!((s - (-0.5f64).exp()).abs() < 1e-6);
        assert!(slack < 2e-3);
    }

    #[test]
    fn envelope_dominates_far_values() {
        let f = Factor::SineGauss { omega: 3.0 };
        for m in 0..=4 {
            let env = f.envelope(m, 4.0);
            for i in 0..200 {
                let x = 4.0 + i as f64 * 0.05;
                assert!(f.deriv(m, x).abs() <= env + 1e-300);
                assert!(f.deriv(m, -x).abs() <= env + 1e-300);
            }
        }
    }
}
