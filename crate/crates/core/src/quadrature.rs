//! Adaptive Simpson quadrature.

use crate::error::{BsqrError, Result};

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    /// Panels that hit the depth cap before meeting their tolerance.
    pub unconverged: usize,
}

/// Integrates `f` over `[a, b]` with adaptive Simpson refinement.
///
/// The interval is first cut into `panels` equal pieces. Each piece is bisected
/// until the Richardson error estimate drops below its share of `abs_tol`
/// (proportional to its length) or `max_depth` levels are reached.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: u32,
    panels: usize,
) -> Quadrature {
    let mut out = Quadrature {
        value: 0.0,
        error_estimate: 0.0,
        evaluations: 0,
        unconverged: 0,
    };
    if b <= a {
        return out;
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    for k in 0..panels {
        let lo = a + width * k as f64;
        let hi = if k + 1 == panels { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        out.evaluations += 3;
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        let tol = abs_tol * (hi - lo) / (b - a);
        out.value += refine(f, lo, hi, flo, fmid, fhi, whole, tol, max_depth, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    acc: &mut Quadrature,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    acc.evaluations += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        acc.error_estimate += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        acc.unconverged += 1;
        acc.error_estimate += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, acc)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, acc)
}

/// Like [`adaptive_simpson`] but with a relative tolerance: a coarse pass
/// estimates the magnitude, then the integral is recomputed at
/// `rel_tol * |estimate|`. Non-finite results are reported as errors.
pub fn integrate_relative<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_depth: u32,
    panels: usize,
) -> Result<Quadrature> {
    let coarse = adaptive_simpson(f, a, b, f64::INFINITY, 0, panels);
    let scale = coarse.value.abs().max(f64::MIN_POSITIVE);
    let q = adaptive_simpson(f, a, b, rel_tol * scale, max_depth, panels);
    if !q.value.is_finite() {
        return Err(BsqrError::Numeric(format!(
            "quadrature on [{a}, {b}] produced a non-finite value after {} evaluations",
            q.evaluations
        )));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 10, 1);
        assert!((q.value - 0.0).abs() < 1e-14);
        let q = adaptive_simpson(&|x: f64| x * x, -1.0, 2.0, 1e-12, 10, 4);
        assert!((q.value - 3.0).abs() < 1e-13);
    }

    #[test]
    fn smooth_integrands() {
        let q = integrate_relative(&|x: f64| (-x * x).exp(), -8.0, 8.0, 1e-12, 20, 32).unwrap();
        assert!((q.value - std::f64::consts::PI.sqrt()).abs() < 1e-11);
        assert_eq!(q.unconverged, 0);
        let q = integrate_relative(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12, 20, 8).unwrap();
        assert!((q.value - 2.0).abs() < 1e-11);
    }

    #[test]
    fn kink_needs_refinement() {
        let q = integrate_relative(&|x: f64| x.abs(), -1.0, 3.0, 1e-12, 30, 3).unwrap();
        assert!((q.value - 5.0).abs() < 1e-10);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(adaptive_simpson(&|_| 1.0, 1.0, 1.0, 1e-8, 5, 4).value, 0.0);
    }
}
