//! Check loss and its kernel-smoothed counterpart.
//!
//! The smoothed loss is the convolution `L_h = ρ_τ * K_h` of the check loss with a
//! scaled kernel `K_h(v) = K(v/h)/h`. Its derivative (the smoothed score) is
//! `Ψ_h(e) = F_K(e/h) - (1 - τ)` and its second derivative is `K(e/h)/h`.
//! Closed forms are provided for four kernels; the three compact kernels live on
//! `[-1, 1]`, which makes `L_h` coincide with `ρ_τ` once `|e| >= h`.

use crate::error::{check_positive, check_tau, BsqrError, Result};
use crate::normal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Smoothing kernel. Compact kernels are supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Uniform,
    Epanechnikov,
    Triangular,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [
        Kernel::Gaussian,
        Kernel::Uniform,
        Kernel::Epanechnikov,
        Kernel::Triangular,
    ];

    pub fn is_compact(self) -> bool {
        !matches!(self, Kernel::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Triangular => "triangular",
        }
    }

    /// Kernel density `K(v)`.
    pub fn pdf(self, v: f64) -> f64 {
        match self {
            Kernel::Gaussian => normal::pdf(v),
            _ if v.abs() > 1.0 => 0.0,
            Kernel::Uniform => 0.5,
            Kernel::Epanechnikov => 0.75 * (1.0 - v * v),
            Kernel::Triangular => 1.0 - v.abs(),
        }
    }

    /// Kernel distribution function `F_K(u)`.
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => normal::cdf(u),
            _ if u < -1.0 => 0.0,
            _ if u > 1.0 => 1.0,
            Kernel::Uniform => 0.5 * (u + 1.0),
            Kernel::Epanechnikov => 0.75 * u - 0.25 * u * u * u + 0.5,
            Kernel::Triangular => {
                if u < 0.0 {
                    0.5 * (1.0 + u) * (1.0 + u)
                } else {
                    1.0 - 0.5 * (1.0 - u) * (1.0 - u)
                }
            }
        }
    }

    /// First absolute moment `M_K = ∫ |u| K(u) du`.
    pub fn first_abs_moment(self) -> f64 {
        match self {
            Kernel::Gaussian => (2.0 / std::f64::consts::PI).sqrt(),
            Kernel::Uniform => 0.5,
            Kernel::Epanechnikov => 0.375,
            Kernel::Triangular => 1.0 / 3.0,
        }
    }

    /// `E[K(ε/h)]`-style peakedness at zero, i.e. `K(0)`.
    pub fn peak(self) -> f64 {
        self.pdf(0.0)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = BsqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            "uniform" => Ok(Kernel::Uniform),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "triangular" => Ok(Kernel::Triangular),
            other => Err(BsqrError::Domain(format!(
                "unknown kernel '{other}' (expected gaussian|uniform|epanechnikov|triangular)"
            ))),
        }
    }
}

/// Smoothing configuration of a single fit: quantile level, bandwidth and kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub tau: f64,
    pub h: f64,
    pub kernel: Kernel,
}

impl QuantileSpec {
    pub fn new(tau: f64, h: f64, kernel: Kernel) -> Result<Self> {
        check_tau(tau)?;
        check_positive("bandwidth h", h)?;
        Ok(Self { tau, h, kernel })
    }

    /// Smoothed check loss `L_h(e; τ)`.
    #[inline]
    pub fn loss(&self, e: f64) -> f64 {
        smoothed_loss_unchecked(self.tau, self.h, self.kernel, e)
    }

    /// Smoothed score `Ψ_h(e; τ) = ∂L_h/∂e`.
    #[inline]
    pub fn score(&self, e: f64) -> f64 {
        let u = e / self.h;
        // exact plateaus outside a compact band; `1 - (1 - τ)` need not round to τ
        if self.kernel.is_compact() && u.abs() >= 1.0 {
            return if u > 0.0 { self.tau } else { self.tau - 1.0 };
        }
        self.kernel.cdf(u) - (1.0 - self.tau)
    }

    /// `∂Ψ_h/∂e = K(e/h)/h`.
    #[inline]
    pub fn curvature(&self, e: f64) -> f64 {
        self.kernel.pdf(e / self.h) / self.h
    }
}

/// Check (pinball) loss `ρ_τ(u) = u (τ - 1{u < 0})`.
pub fn check_loss(tau: f64, u: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(tau, u))
}

#[inline]
pub(crate) fn rho(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn kernel_pdf(kernel: Kernel, v: f64) -> f64 {
    kernel.pdf(v)
}

pub fn kernel_cdf(kernel: Kernel, u: f64) -> f64 {
    kernel.cdf(u)
}

pub fn smoothed_score(spec: &QuantileSpec, e: f64) -> f64 {
    spec.score(e)
}

pub fn smoothed_loss(spec: &QuantileSpec, e: f64) -> f64 {
    spec.loss(e)
}

pub fn loss_curvature(spec: &QuantileSpec, e: f64) -> f64 {
    spec.curvature(e)
}

fn smoothed_loss_unchecked(tau: f64, h: f64, kernel: Kernel, e: f64) -> f64 {
    let u = e / h;
    match kernel {
        Kernel::Gaussian => e * (normal::cdf(u) - (1.0 - tau)) + h * normal::pdf(u),
        _ if u <= -1.0 => e * (tau - 1.0),
        _ if u >= 1.0 => e * tau,
        Kernel::Uniform => e * e / (4.0 * h) + e * (tau - 0.5) + h / 4.0,
        Kernel::Epanechnikov => {
            3.0 * e * e / (8.0 * h) - e.powi(4) / (16.0 * h * h * h) + e * (tau - 0.5)
                + 3.0 * h / 16.0
        }
        Kernel::Triangular => {
            if u < 0.0 {
                h / 6.0 * (1.0 + u).powi(3) - e * (1.0 - tau)
            } else {
                e * tau + h / 6.0 * (1.0 - u).powi(3)
            }
        }
    }
}

/// Location and value of the global minimum of `L_h(·; τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMinimum {
    pub argmin: f64,
    pub value: f64,
}

/// Unique minimiser of the smoothed loss, i.e. the root of the smoothed score.
///
/// Uniform and Gaussian kernels have closed forms; Epanechnikov and Triangular
/// are solved by bisection on the monotone score over `[-h, h]`.
pub fn loss_minimum(spec: &QuantileSpec) -> LossMinimum {
    let QuantileSpec { tau, h, kernel } = *spec;
    let argmin = match kernel {
        Kernel::Uniform => h * (1.0 - 2.0 * tau),
        Kernel::Gaussian => h * normal::inv_cdf(1.0 - tau),
        Kernel::Epanechnikov | Kernel::Triangular => {
            let (mut lo, mut hi) = (-h, h);
            while hi - lo > 1e-12 * h {
                let mid = 0.5 * (lo + hi);
                if spec.score(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };
    let value = match kernel {
        Kernel::Uniform => h * tau * (1.0 - tau),
        Kernel::Gaussian => h * normal::pdf(argmin / h),
        _ => spec.loss(argmin),
    };
    LossMinimum { argmin, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAUS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
    const HS: [f64; 3] = [0.1, 1.0, 5.0];

    fn spec(tau: f64, h: f64, k: Kernel) -> QuantileSpec {
        QuantileSpec::new(tau, h, k).unwrap()
    }

    /// Composite Simpson on [a, b] with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let step = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * step);
        }
        acc * step / 3.0
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.5, 2.0).unwrap(), 1.0);
        assert_eq!(check_loss(0.25, -2.0).unwrap(), 1.5);
        assert_eq!(check_loss(0.9, 0.0).unwrap(), 0.0);
        assert!(check_loss(1.0, 1.0).is_err());
        assert!(check_loss(0.0, 1.0).is_err());
        assert!(check_loss(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn pdf_and_cdf_examples() {
        assert!((kernel_pdf(Kernel::Gaussian, 0.0) - 0.398_942_3).abs() < 1e-7);
        assert_eq!(kernel_pdf(Kernel::Uniform, 0.5), 0.5);
        assert_eq!(kernel_pdf(Kernel::Epanechnikov, 0.0), 0.75);
        assert_eq!(kernel_pdf(Kernel::Triangular, 2.0), 0.0);
        assert_eq!(kernel_cdf(Kernel::Uniform, 0.0), 0.5);
        assert_eq!(kernel_cdf(Kernel::Triangular, -0.5), 0.125);
        assert_eq!(kernel_cdf(Kernel::Epanechnikov, 1.0), 1.0);
    }

    #[test]
    fn kernels_are_symmetric_densities() {
        for k in Kernel::ALL {
            let (a, b) = if k.is_compact() { (-1.0, 1.0) } else { (-40.0, 40.0) };
            let mass = simpson(|v| k.pdf(v), a, b, 200_000);
            assert!((mass - 1.0).abs() < 1e-10, "{k}: mass {mass}");
            for i in 0..200 {
                let v = -3.0 + 0.03 * i as f64;
                assert!(k.pdf(v) >= 0.0);
                assert_eq!(k.pdf(v), k.pdf(-v));
            }
        }
    }

    #[test]
    fn cdf_is_monotone_with_correct_limits() {
        for k in Kernel::ALL {
            let mut prev = 0.0;
            for i in 0..=4000 {
                let u = -10.0 + 0.005 * i as f64;
                let c = k.cdf(u);
                assert!(c >= prev - 1e-16, "{k} not monotone at {u}");
                prev = c;
            }
            assert!(k.cdf(-40.0) < 1e-300 + f64::MIN_POSITIVE);
            assert_eq!(k.cdf(40.0), 1.0);
            if k.is_compact() {
                assert_eq!(k.cdf(-1.0), 0.0);
                assert_eq!(k.cdf(-1.5), 0.0);
                assert_eq!(k.cdf(1.0), 1.0);
                assert_eq!(k.cdf(1.5), 1.0);
            }
        }
    }

    #[test]
    fn first_abs_moment_matches_quadrature() {
        for k in Kernel::ALL {
            let (a, b) = if k.is_compact() { (-1.0, 1.0) } else { (-40.0, 40.0) };
            // integrate each half separately so the kink of |u| sits on a node
            let m = 2.0 * simpson(|u| u * k.pdf(u), 0.0, b, 200_000);
            let _ = a;
            assert!((m - k.first_abs_moment()).abs() < 1e-10, "{k}: {m}");
        }
    }

    #[test]
    fn score_examples() {
        for k in Kernel::ALL {
            assert!(smoothed_score(&spec(0.5, 1.0, k), 0.0).abs() < 1e-15);
        }
        assert_eq!(smoothed_score(&spec(0.25, 1.0, Kernel::Uniform), 2.0), 0.25);
        let g = smoothed_score(&spec(0.9, 2.0, Kernel::Gaussian), 0.0);
        assert!((g - 0.4).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        for &h in &HS {
            for &tau in &TAUS {
                assert!((smoothed_loss(&spec(tau, h, Kernel::Uniform), 0.0) - h / 4.0).abs() < 1e-15);
                assert!(
                    (smoothed_loss(&spec(tau, h, Kernel::Epanechnikov), 0.0) - 3.0 * h / 16.0).abs()
                        < 1e-15
                );
                assert!((smoothed_loss(&spec(tau, h, Kernel::Triangular), 0.0) - h / 6.0).abs() < 1e-15);
            }
        }
        let g = smoothed_loss(&spec(0.5, 1.0, Kernel::Gaussian), 0.0);
        assert!((g - 0.398_942_3).abs() < 1e-7);
        assert_eq!(smoothed_loss(&spec(0.3, 0.5, Kernel::Uniform), 10.0), 3.0);
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(loss_curvature(&spec(0.5, 2.0, Kernel::Uniform), 0.0), 0.25);
        assert!((loss_curvature(&spec(0.5, 1.0, Kernel::Gaussian), 0.0) - 0.398_942_3).abs() < 1e-7);
        assert_eq!(loss_curvature(&spec(0.5, 1.0, Kernel::Triangular), 5.0), 0.0);
    }

    #[test]
    fn compact_tails_equal_check_loss() {
        for k in [Kernel::Uniform, Kernel::Epanechnikov, Kernel::Triangular] {
            for &tau in &TAUS {
                for &h in &HS {
                    let s = spec(tau, h, k);
                    for i in 0..200 {
                        let mag = h * (1.0 + 0.05 * i as f64);
                        for e in [mag, -mag] {
                            let diff = (s.loss(e) - rho(tau, e)).abs();
                            assert!(diff <= 1e-12, "{k} tau={tau} h={h} e={e} diff={diff}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn branches_agree_at_boundaries() {
        // evaluate the interior polynomials exactly at the band edges and at zero
        for &tau in &TAUS {
            for &h in &HS {
                let u_int = |e: f64| e * e / (4.0 * h) + e * (tau - 0.5) + h / 4.0;
                assert!((u_int(h) - tau * h).abs() < 1e-12 * h.max(1.0));
                assert!((u_int(-h) - (tau - 1.0) * -h).abs() < 1e-12 * h.max(1.0));
                let e_int = |e: f64| {
                    3.0 * e * e / (8.0 * h) - e.powi(4) / (16.0 * h.powi(3)) + e * (tau - 0.5)
                        + 3.0 * h / 16.0
                };
                assert!((e_int(h) - tau * h).abs() < 1e-12 * h.max(1.0));
                assert!((e_int(-h) - (1.0 - tau) * h).abs() < 1e-12 * h.max(1.0));
                let t_left = |e: f64| h / 6.0 * (1.0 + e / h).powi(3) - e * (1.0 - tau);
                let t_right = |e: f64| e * tau + h / 6.0 * (1.0 - e / h).powi(3);
                assert!((t_left(0.0) - t_right(0.0)).abs() < 1e-15);
                assert!((t_left(-h) - (1.0 - tau) * h).abs() < 1e-12 * h.max(1.0));
                assert!((t_right(h) - tau * h).abs() < 1e-12 * h.max(1.0));
            }
        }
    }

    #[test]
    fn gaussian_gap_bounded_by_peak() {
        for &tau in &TAUS {
            for &h in &[1e-3, 0.1, 1.0] {
                let s = spec(tau, h, Kernel::Gaussian);
                let mut sup: f64 = 0.0;
                for i in 0..=2000 {
                    let e = -10.0 * h + 0.01 * h * i as f64;
                    sup = sup.max((s.loss(e) - rho(tau, e)).abs());
                }
                assert!(sup <= 0.4 * h, "sup gap {sup} h={h}");
                assert!((sup - h * normal::INV_SQRT_2PI).abs() < 1e-12 * h.max(1.0));
            }
        }
    }

    #[test]
    fn loss_is_convex_and_score_bounded() {
        for k in Kernel::ALL {
            for &tau in &TAUS {
                for &h in &HS {
                    let s = spec(tau, h, k);
                    let step = 0.01 * h;
                    let vals: Vec<f64> = (0..=800).map(|i| s.loss(-4.0 * h + step * i as f64)).collect();
                    for w in vals.windows(3) {
                        assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10);
                    }
                    for i in 0..=800 {
                        let e = -4.0 * h + step * i as f64;
                        let psi = s.score(e);
                        assert!(psi >= -(1.0 - tau) - 1e-15 && psi <= tau + 1e-15);
                    }
                    if k.is_compact() {
                        assert!((s.score(1.5 * h) - tau).abs() < 1e-15);
                        assert!((s.score(-1.5 * h) + (1.0 - tau)).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_growth_lower_bound() {
        for k in Kernel::ALL {
            for &tau in &TAUS {
                for &h in &HS {
                    let s = spec(tau, h, k);
                    let c = tau.min(1.0 - tau);
                    for i in 0..=2000 {
                        let e = -50.0 * h + 0.05 * h * i as f64;
                        let bound = c * (e.abs() - h * k.first_abs_moment());
                        assert!(s.loss(e) >= bound - 1e-12, "{k} tau={tau} e={e}");
                    }
                }
            }
        }
    }

    #[test]
    fn minimum_matches_grid_search() {
        for k in Kernel::ALL {
            for &tau in &TAUS {
                for &h in &[0.1, 1.0, 5.0] {
                    let s = spec(tau, h, k);
                    let m = loss_minimum(&s);
                    let step = h * 1e-4;
                    let (mut best_e, mut best_v) = (0.0, f64::INFINITY);
                    let span = if k.is_compact() { 1.0 } else { 3.0 };
                    let count = (2.0 * span * h / step) as usize;
                    for i in 0..=count {
                        let e = -span * h + step * i as f64;
                        let v = s.loss(e);
                        if v < best_v {
                            best_v = v;
                            best_e = e;
                        }
                    }
                    assert!((m.argmin - best_e).abs() <= step, "{k} tau={tau} h={h}");
                    assert!(m.value <= best_v + 1e-12);
                    assert!((m.value - best_v).abs() < 1e-8 * h);
                    assert!(s.score(m.argmin).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn minimum_closed_forms() {
        let s = spec(0.5, 2.0, Kernel::Uniform);
        let m = loss_minimum(&s);
        assert_eq!(m.argmin, 0.0);
        assert_eq!(m.value, 0.5);
        let s = spec(0.2, 1.5, Kernel::Gaussian);
        let m = loss_minimum(&s);
        let z = normal::inv_cdf(0.8);
        assert!((m.argmin - 1.5 * z).abs() < 1e-14);
        assert!((m.value - 1.5 * normal::pdf(z)).abs() < 1e-14);
    }

    #[test]
    fn parses_kernel_names() {
        assert_eq!("Uniform".parse::<Kernel>().unwrap(), Kernel::Uniform);
        assert!("cosine".parse::<Kernel>().is_err());
        assert!(QuantileSpec::new(0.5, 0.0, Kernel::Uniform).is_err());
        assert!(QuantileSpec::new(1.2, 1.0, Kernel::Uniform).is_err());
    }
}
