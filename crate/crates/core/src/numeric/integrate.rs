//! One-dimensional adaptive integration, including half-line integrals whose
//! convergence is decided numerically.

use crate::error::{Error, Result};

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut evals = 3usize;
    let v = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48, &mut evals)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integration(format!(
            "non-finite integral on [{a}, {b}]"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    if *evals > 5_000_000 {
        return Err(Error::Integration("evaluation budget exhausted".into()));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        if depth == 0 && delta.abs() > 15.0 * tol.max(1e-300) * 1e6 {
            return Err(Error::Integration(format!(
                "recursion limit reached on [{a}, {b}] with error {:e}",
                delta.abs()
            )));
        }
        return Ok(left + right + delta / 15.0);
    }
    Ok(
        simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, evals)?
            + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, evals)?,
    )
}

/// Outcome of a half-line integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HalfLine {
    Finite(f64),
    Divergent,
}

/// `∫_{start}^∞ f` for non-negative `f`.
///
/// The half line is cut into segments of geometrically growing length
/// `[start + w(2^j - 1), start + w(2^{j+1} - 1)]`. Exponentially decaying
/// integrands give vanishing segment masses. Power-law tails give a constant
/// ratio `ρ` between consecutive segments: `ρ ≥ 1` means divergence and
/// `ρ < 1` sums the geometric remainder `I_j ρ / (1 - ρ)`.
pub fn half_line_integral<F: Fn(f64) -> f64>(
    f: &F,
    start: f64,
    width: f64,
    rel_tol: f64,
) -> Result<HalfLine> {
    if !(width > 0.0) {
        return Err(Error::Integration("segment width must be positive".into()));
    }
    let mut total: f64 = 0.0;
    let mut prev: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    for j in 0..400 {
        let a = start + width * (2f64.powi(j) - 1.0);
        let b = start + width * (2f64.powi(j + 1) - 1.0);
        // the tolerance follows whichever is larger: the running total or a
        // three-point guess at this segment
        let guess = (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        let tol = (rel_tol * total.max(guess.abs())).max(1e-300);
        let seg = adaptive_simpson(f, a, b, tol.max(1e-18 * (b - a)))?;
        if seg < 0.0 {
            return Err(Error::Integration("negative integrand on half line".into()));
        }
        total += seg;
        if total > 0.0 && seg <= 1e-17 * total && j >= 2 {
            return Ok(HalfLine::Finite(total));
        }
        if let Some(p) = prev {
            if p > 0.0 {
                ratios.push(seg / p);
            }
        }
        prev = Some(seg);
        let r = ratios.len();
        if r >= 6 {
            let last = &ratios[r - 4..];
            let mean = last.iter().sum::<f64>() / 4.0;
            let spread = last.iter().fold(0.0_f64, |m, v| m.max((v - mean).abs()));
            if spread <= 1e-6 * mean.max(1e-12) {
                if mean >= 1.0 - 1e-9 {
                    return Ok(HalfLine::Divergent);
                }
                if mean > 0.0 {
                    return Ok(HalfLine::Finite(total + seg * mean / (1.0 - mean)));
                }
            }
        }
        if !total.is_finite() {
            return Ok(HalfLine::Divergent);
        }
    }
    Err(Error::Integration(
        "half-line integral did not settle".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_and_smooth() {
        let v = adaptive_simpson(&|x: f64| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-10);
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn half_line_exponential_tail() {
        // ∫_0^∞ x² e^{-x} = 2
        match half_line_integral(&|x: f64| x * x * (-x).exp(), 0.0, 1.0, 1e-12).unwrap() {
            HalfLine::Finite(v) => assert!((v - 2.0).abs() < 1e-9, "{v}"),
            HalfLine::Divergent => panic!("should converge"),
        }
    }

    #[test]
    fn half_line_power_tail() {
        // ∫_1^∞ x^{-1.5} = 2, ∫_1^∞ x^{-0.5} = ∞, ∫_1^∞ x^{-1} = ∞
        match half_line_integral(&|x: f64| x.powf(-1.5), 1.0, 1.0, 1e-12).unwrap() {
            HalfLine::Finite(v) => assert!((v - 2.0).abs() < 1e-6, "{v}"),
            HalfLine::Divergent => panic!("should converge"),
        }
        assert_eq!(
            half_line_integral(&|x: f64| x.powf(-0.5), 1.0, 1.0, 1e-12).unwrap(),
            HalfLine::Divergent
        );
        assert_eq!(
            half_line_integral(&|x: f64| 1.0 / x, 1.0, 1.0, 1e-12).unwrap(),
            HalfLine::Divergent
        );
    }
}
