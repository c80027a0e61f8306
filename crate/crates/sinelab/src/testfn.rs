//! Test functions φ̄ (C⁴, compactly supported), their rescalings φ_ℓ,
//! seminorms and the H^{1/2} norm.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad;

/// A compactly supported function with exact derivatives up to order 4.
///
/// This is the plugin point for custom test functions: implement it and wrap
/// the value with [`TestFunction::custom`].
pub trait Profile: Debug + Send + Sync {
    /// Derivative of order `k ≤ 4` at `x`; must vanish for |x| ≥ `support_radius()`.
    fn eval_k(&self, k: usize, x: f64) -> f64;
    fn support_radius(&self) -> f64;
    fn name(&self) -> &str;
}

/// Anything with derivative data and a support radius (φ̄, φ_ℓ, amplitude multiples).
pub trait Smooth: Send + Sync {
    fn eval_k(&self, k: usize, x: f64) -> f64;
    fn support_radius(&self) -> f64;

    fn eval(&self, x: f64) -> f64 {
        self.eval_k(0, x)
    }
}

/// x ↦ exp(−1/(1−x²)) on |x| < 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bump;

impl Profile for Bump {
    fn eval_k(&self, k: usize, x: f64) -> f64 {
        bump_k(k, x)
    }
    fn support_radius(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &str {
        "bump"
    }
}

pub(crate) fn bump_k(k: usize, x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - x * x;
    let b = (-1.0 / s).exp();
    if b == 0.0 {
        return 0.0;
    }
    // derivatives of g = −1/s
    let s2 = s * s;
    let s3 = s2 * s;
    let g1 = -2.0 * x / s2;
    match k {
        0 => b,
        1 => g1 * b,
        2 => {
            let g2 = -2.0 / s2 - 8.0 * x * x / s3;
            (g2 + g1 * g1) * b
        }
        3 => {
            let s4 = s3 * s;
            let g2 = -2.0 / s2 - 8.0 * x * x / s3;
            let g3 = -24.0 * x / s3 - 48.0 * x * x * x / s4;
            (g3 + 3.0 * g1 * g2 + g1 * g1 * g1) * b
        }
        4 => {
            let s4 = s3 * s;
            let s5 = s4 * s;
            let x2 = x * x;
            let g2 = -2.0 / s2 - 8.0 * x2 / s3;
            let g3 = -24.0 * x / s3 - 48.0 * x2 * x / s4;
            let g4 = -24.0 / s3 - 288.0 * x2 / s4 - 384.0 * x2 * x2 / s5;
            (g4 + 4.0 * g1 * g3 + 3.0 * g2 * g2 + 6.0 * g1 * g1 * g2 + g1.powi(4)) * b
        }
        _ => panic!("derivative order {k} > 4"),
    }
}

/// x ↦ x·exp(−1/(1−x²)): an odd C^∞ profile.
#[derive(Debug, Clone, Copy, Default)]
pub struct OddBump;

impl Profile for OddBump {
    fn eval_k(&self, k: usize, x: f64) -> f64 {
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let lower = if k == 0 { 0.0 } else { k as f64 * bump_k(k - 1, x) };
        x * bump_k(k, x) + lower
    }
    fn support_radius(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &str {
        "oddbump"
    }
}

/// x ↦ (1−x²)⁵: a polynomial profile that is exactly C⁴ at ±1.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolyBump;

const POLY5: [f64; 11] = [1.0, 0.0, -5.0, 0.0, 10.0, 0.0, -10.0, 0.0, 5.0, 0.0, -1.0];

impl Profile for PolyBump {
    fn eval_k(&self, k: usize, x: f64) -> f64 {
        if x.abs() >= 1.0 {
            return 0.0;
        }
        assert!(k <= 4, "derivative order {k} > 4");
        // Horner on the k-th derivative of Σ cⱼ xʲ
        let mut acc = 0.0;
        for j in (k..POLY5.len()).rev() {
            let falling: f64 = (0..k).map(|i| (j - i) as f64).product();
            acc = acc * x + POLY5[j] * falling;
        }
        acc
    }
    fn support_radius(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &str {
        "poly"
    }
}

/// A base test function φ̄: a profile times an amplitude.
#[derive(Debug, Clone)]
pub struct TestFunction {
    profile: Arc<dyn Profile>,
    amplitude: f64,
}

impl TestFunction {
    pub fn custom(profile: Arc<dyn Profile>, amplitude: f64) -> Self {
        TestFunction { profile, amplitude }
    }

    /// Built-in test functions: "bump", "oddbump", "poly".
    pub fn by_name(name: &str, amplitude: f64) -> Result<Self> {
        let profile: Arc<dyn Profile> = match name {
            "bump" => Arc::new(Bump),
            "oddbump" => Arc::new(OddBump),
            "poly" => Arc::new(PolyBump),
            other => return Err(Error::Invalid(format!("unknown test function {other:?}"))),
        };
        Ok(TestFunction { profile, amplitude })
    }

    pub fn name(&self) -> &str {
        self.profile.name()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn scaled(&self, c: f64) -> Self {
        TestFunction { profile: self.profile.clone(), amplitude: self.amplitude * c }
    }

    pub fn rescale(&self, ell: f64) -> RescaledTestFunction {
        RescaledTestFunction { base: self.clone(), ell }
    }
}

impl Smooth for TestFunction {
    #[inline]
    fn eval_k(&self, k: usize, x: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * self.profile.eval_k(k, x)
    }
    fn support_radius(&self) -> f64 {
        self.profile.support_radius()
    }
}

/// The reference bump φ̄ with amplitude 1.
pub fn make_bump() -> TestFunction {
    TestFunction::custom(Arc::new(Bump), 1.0)
}

/// φ_ℓ(x) = φ̄(x/ℓ).
#[derive(Debug, Clone)]
pub struct RescaledTestFunction {
    pub base: TestFunction,
    pub ell: f64,
}

impl Smooth for RescaledTestFunction {
    #[inline]
    fn eval_k(&self, k: usize, x: f64) -> f64 {
        self.base.eval_k(k, x / self.ell) / self.ell.powi(k as i32)
    }
    fn support_radius(&self) -> f64 {
        self.base.support_radius() * self.ell
    }
}

/// Default grid step of the seminorm sup: 10⁻³·max(1, support radius).
pub fn seminorm_step(f: &dyn Smooth) -> f64 {
    1e-3 * f.support_radius().max(1.0)
}

/// |f|_{k, V_x}: sup of |f^{(k)}| over V_x = [x−3, x+3], on a grid of step
/// 10⁻³·max(1, support radius).
pub fn local_seminorm(f: &dyn Smooth, k: usize, x: f64) -> f64 {
    local_seminorm_with_step(f, k, x, seminorm_step(f))
}

/// As [`local_seminorm`] with an explicit grid step (refinement for tests).
pub fn local_seminorm_with_step(f: &dyn Smooth, k: usize, x: f64, step: f64) -> f64 {
    assert!(k <= 4);
    let r = f.support_radius();
    let (lo, hi) = (x - 3.0, x + 3.0);
    if hi <= -r || lo >= r {
        return 0.0;
    }
    let n = ((hi - lo) / step).ceil() as usize;
    (0..=n)
        .map(|i| f.eval_k(k, (lo + i as f64 * step).min(hi)).abs())
        .fold(0.0, f64::max)
}

/// |f|_k: sup of |f^{(k)}| over the support, on a grid of step 10⁻³·radius.
pub fn seminorm(f: &dyn Smooth, k: usize) -> f64 {
    let r = f.support_radius();
    let n = 2000;
    (0..=n)
        .map(|i| f.eval_k(k, -r + 2.0 * r * i as f64 / n as f64).abs())
        .fold(0.0, f64::max)
}

/// ∫ f by adaptive quadrature (absolute accuracy ≈ 10⁻¹²).
pub fn integral(f: &dyn Smooth) -> Result<f64> {
    let r = f.support_radius();
    quad::adaptive(|x| f.eval(x), -r, r, 1e-13, 1e-15, 2_000_000)
}

/// ‖f‖²_{H^{1/2}} = (1/2π)² ∬ ((f(x)−f(y))/(x−y))² dx dy.
///
/// The square [−r, r]² is integrated by nested adaptive quadrature with the
/// difference quotient replaced by its Taylor expansion near the diagonal;
/// the part with one variable outside the support is integrated in closed
/// form in that variable: ∫_{|y|>r} dy/(x−y)² = 1/(r−x) + 1/(r+x).
pub fn h_half_norm_sq(f: &dyn Smooth) -> Result<f64> {
    let r = f.support_radius();
    let diag = 1e-5 * r;
    let q = |x: f64, y: f64| -> f64 {
        let d = x - y;
        if d.abs() < diag {
            let m = 0.5 * (x + y);
            f.eval_k(1, m) + f.eval_k(3, m) * d * d / 24.0
        } else {
            (f.eval(x) - f.eval(y)) / d
        }
    };
    let mut inner_err: Option<Error> = None;
    let square = quad::adaptive(
        |x| {
            match quad::adaptive_breaks(|y| q(x, y).powi(2), &[-r, x, r], 1e-15, 1e-12, 400_000) {
                Ok(v) => v,
                Err(e) => {
                    inner_err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        -r,
        r,
        1e-14,
        1e-11,
        200_000,
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    let square = square?;
    let outside = quad::adaptive(
        |x| {
            let v = f.eval(x);
            if v == 0.0 {
                0.0
            } else {
                2.0 * v * v * (1.0 / (r - x) + 1.0 / (r + x))
            }
        },
        -r,
        r,
        1e-15,
        1e-12,
        400_000,
    )?;
    let v = (square + outside) / (4.0 * PI * PI);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("H^1/2 norm".into()))
    }
}
