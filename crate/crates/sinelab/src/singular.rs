//! Cauchy principal values, the weighted finite Hilbert transform 𝔥_{λ,φ}
//! and the semicircle-weight identities it relies on.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::quad::{self, PiecewiseChebyshev};
use crate::testfn::{RescaledTestFunction, Smooth};

/// Absolute tolerance used for smooth principal values.
pub const PV_ABS_TOL: f64 = 1e-13;
/// Below this u (relative to the support bound) the PV integrand uses its limit 2g′(x).
pub const PV_DIAG_REL: f64 = 1e-9;
/// Below this u the difference quotient is replaced by an average of g′.
pub const PV_NEAR_REL: f64 = 0.02;
/// Near-endpoint tolerance of the weighted PV identity (|x| within 1% of λ).
pub const WEIGHTED_PV_ENDPOINT_TOL: f64 = 1e-6;

/// A C¹ function g vanishing outside [−support, support], with its derivative.
pub struct PVIntegrand<'a> {
    pub g: &'a (dyn Fn(f64) -> f64 + Sync),
    pub dg: &'a (dyn Fn(f64) -> f64 + Sync),
    pub support: f64,
}

/// PV∫ g(t)/(t−x) dt = ∫_0^U (g(x+u) − g(x−u))/u du, U = |x| + support + 1.
pub fn cauchy_pv(g: &PVIntegrand, x: f64) -> Result<f64> {
    cauchy_pv_tol(g, x, PV_ABS_TOL)
}

pub fn cauchy_pv_tol(g: &PVIntegrand, x: f64, abs_tol: f64) -> Result<f64> {
    let s = g.support;
    let big_u = x.abs() + s + 1.0;
    let small = PV_DIAG_REL * s;
    let near = PV_NEAR_REL * s;
    let rule = quad::gl(10);
    let f = |u: f64| {
        if u < small {
            2.0 * (g.dg)(x)
        } else if u < near {
            // (g(x+u) − g(x−u))/u = ∫_{−1}^{1} g′(x+uτ) dτ, free of cancellation
            let mut acc = 0.0;
            for (&t, &w) in rule.nodes.iter().zip(&rule.weights).filter(|(t, _)| **t > 0.0) {
                acc += w * ((g.dg)(x + u * t) + (g.dg)(x - u * t));
            }
            acc
        } else {
            ((g.g)(x + u) - (g.g)(x - u)) / u
        }
    };
    // the integrand has kinks where x ± u crosses ±support
    let mut breaks = vec![0.0, big_u];
    for b in [(x - s).abs(), (x + s).abs(), near] {
        if b > 0.0 && b < big_u {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let v = quad::adaptive_breaks(f, &breaks, abs_tol, 1e-14, 200_000)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("principal value at {x}")))
    }
}

/// Residual of PV∫_{−λ}^{λ} dt / (√(λ²−t²)(t−x)) = 0, computed in θ with
/// t = λ sin θ after subtracting the pole 1/(λ cos θ_x (θ−θ_x)).
pub fn weighted_pv_zero_identity(lambda: f64, x: f64) -> f64 {
    assert!(x.abs() < lambda, "weighted PV identity needs |x| < λ");
    if x == 0.0 {
        // the integrand is odd; the two halves cancel exactly
        return 0.0;
    }
    let tx = (x / lambda).asin();
    let c = tx.cos();
    let sx = tx.sin();
    let g = |t: f64| {
        let d = t - tx;
        if d.abs() < 1e-6 {
            // limit of 1/(λ(sin t − sin t_x)) − 1/(λ c d)
            sx / (2.0 * lambda * c * c) + d * (1.0 / (6.0 * lambda * c) + sx * sx / (4.0 * lambda * c * c * c))
        } else {
            1.0 / (lambda * (t.sin() - sx)) - 1.0 / (lambda * c * d)
        }
    };
    // graded toward both endpoints, where the remainder varies fastest
    let rule = quad::gl(24);
    let half = |a: f64, b: f64| {
        let mut pts = vec![a, b];
        for k in 1..40 {
            let h = (b - a) * 0.5f64.powi(k);
            pts.push(a + h);
            pts.push(b - h);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        quad::integrate_breaks(&pts, rule, g)
    };
    let left = half(-FRAC_PI_2, tx);
    let right = half(tx, FRAC_PI_2);
    let log_term = ((FRAC_PI_2 - tx) / (FRAC_PI_2 + tx)).ln() / (lambda * c);
    left + right + log_term
}

/// Scale regime: the pipeline regime 100 < ℓ < λ/1000, or the relaxed test
/// regime ℓ < λ/4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Strict,
    Relaxed,
}

impl Regime {
    pub fn check(self, ell: f64, lambda: f64) -> Result<()> {
        let ok = match self {
            Regime::Strict => ell > 100.0 && ell < lambda / 1000.0,
            Regime::Relaxed => ell > 0.0 && ell < lambda / 4.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ScaleSeparationViolated {
                ell,
                lambda,
                reason: match self {
                    Regime::Strict => "need 100 < ell < lambda/1000",
                    Regime::Relaxed => "need 0 < ell < lambda/4",
                },
            })
        }
    }
}

/// Number of multipole terms (convergence ratio ≤ 1/2).
const N_MULTIPOLE: usize = 64;

/// Evaluates 𝔥_{λ,φ}(x) = (1/π) PV∫ φ_Λ(t)/(t−x) dt and its first two
/// derivatives, φ_Λ(t) = √(λ²−t²) φ′(t).
///
/// Far from the support (|x| ≥ 2ρ, ρ the support radius of φ) a multipole
/// expansion is used; inside, piecewise Chebyshev interpolants of direct
/// principal values are cached at construction.
#[derive(Debug, Clone)]
pub struct HilbertEvaluator {
    lambda: f64,
    phi: RescaledTestFunction,
    rho: f64,
    /// M_j^{(k)} = ∫ φ_Λ^{(k)}(t) (t/ρ)^j dt
    moments: [Vec<f64>; 3],
    near: [PiecewiseChebyshev; 3],
}

impl HilbertEvaluator {
    pub fn new(lambda: f64, phi: RescaledTestFunction, regime: Regime) -> Result<Self> {
        regime.check(phi.ell, lambda)?;
        let rho = phi.support_radius();
        if rho >= lambda {
            return Err(Error::ScaleSeparationViolated { ell: phi.ell, lambda, reason: "support reaches the endpoints" });
        }
        let mut h = HilbertEvaluator {
            lambda,
            phi,
            rho,
            moments: [Vec::new(), Vec::new(), Vec::new()],
            near: std::array::from_fn(|_| PiecewiseChebyshev { breaks: vec![0.0, 0.0], pieces: Vec::new() }),
        };
        let panels = 256;
        let breaks: Vec<f64> = (0..=panels).map(|i| -rho + 2.0 * rho * i as f64 / panels as f64).collect();
        let rule = quad::gl(20);
        for k in 0..3 {
            let mut m = vec![0.0; N_MULTIPOLE];
            for w in breaks.windows(2) {
                for (t, wt) in rule.mapped(w[0], w[1]) {
                    let g = h.phi_lambda(k, t) * wt;
                    let r = t / rho;
                    let mut p = 1.0;
                    for mj in m.iter_mut() {
                        *mj += g * p;
                        p *= r;
                    }
                }
            }
            h.moments[k] = m;
        }
        for k in 0..3 {
            let scale = (0..=8)
                .map(|i| h.direct(-2.0 * rho + 0.5 * rho * i as f64, k).map(f64::abs))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let mut err = None;
            let cheb = PiecewiseChebyshev::build(
                |x| match h.direct(x, k) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                },
                -2.0 * rho,
                2.0 * rho,
                28,
                2e-12 * scale,
                rho / 512.0,
            );
            if let Some(e) = err {
                return Err(e);
            }
            h.near[k] = cheb;
        }
        Ok(h)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ell(&self) -> f64 {
        self.phi.ell
    }

    pub fn phi(&self) -> &RescaledTestFunction {
        &self.phi
    }

    /// Support radius of φ.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// φ_Λ^{(k)}(t), k ≤ 3, by the product rule with w = √(λ²−t²):
    /// w′ = −t/w, w″ = −λ²/w³, w‴ = −3λ²t/w⁵.
    pub fn phi_lambda(&self, k: usize, t: f64) -> f64 {
        if t.abs() >= self.rho {
            return 0.0;
        }
        let l2 = self.lambda * self.lambda;
        let w = (l2 - t * t).sqrt();
        let p = |j| self.phi.eval_k(j, t);
        match k {
            0 => w * p(1),
            1 => -t / w * p(1) + w * p(2),
            2 => {
                let w1 = -t / w;
                let w2 = -l2 / (w * w * w);
                w2 * p(1) + 2.0 * w1 * p(2) + w * p(3)
            }
            3 => {
                let w1 = -t / w;
                let w2 = -l2 / (w * w * w);
                let w3 = -3.0 * l2 * t / w.powi(5);
                w3 * p(1) + 3.0 * w2 * p(2) + 3.0 * w1 * p(3) + w * p(4)
            }
            _ => panic!("phi_lambda derivative order {k} > 3"),
        }
    }

    /// Uncached 𝔥^{(k)}(x) by direct principal-value quadrature.
    pub fn direct(&self, x: f64, k: usize) -> Result<f64> {
        assert!(k <= 2);
        let g = |t: f64| self.phi_lambda(k, t);
        let dg = |t: f64| self.phi_lambda(k + 1, t);
        let scale = self.lambda / self.phi.ell.powi(k as i32 + 1);
        let pv = PVIntegrand { g: &g, dg: &dg, support: self.rho };
        Ok(cauchy_pv_tol(&pv, x, 1e-13 * scale)? / PI)
    }

    fn multipole(&self, x: f64, k: usize) -> f64 {
        let r = self.rho / x;
        let m = &self.moments[k];
        let mut s = 0.0;
        for mj in m.iter().rev() {
            s = s * r + mj;
        }
        -s / (PI * x)
    }

    /// 𝔥^{(k)}(x) for k ∈ {0, 1, 2}.
    #[inline]
    pub fn eval(&self, x: f64, k: usize) -> f64 {
        if x.abs() >= 2.0 * self.rho {
            self.multipole(x, k)
        } else {
            self.near[k].eval(x)
        }
    }
}

/// 𝔥^{(k)}(x), k ∈ {0,1,2}.
pub fn hilbert_transform(h: &HilbertEvaluator, x: f64, derivative: usize) -> Result<f64> {
    if derivative > 2 {
        return Err(Error::Invalid(format!("derivative order {derivative} > 2")));
    }
    let v = h.eval(x, derivative);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("hilbert transform at {x}")))
    }
}

/// φ_Λ(t) = λφ′(t) + Er(t): returns (λφ′(t), Er(t)).
pub fn phi_lambda_decomposition(h: &HilbertEvaluator, t: f64) -> (f64, f64) {
    if t.abs() >= h.rho {
        return (0.0, 0.0);
    }
    let main = h.lambda * h.phi.eval_k(1, t);
    (main, h.phi_lambda(0, t) - main)
}

/// ∫_{−a}^{a} 𝔥(y) dy (integral average diagnostic).
pub fn hilbert_integral(h: &HilbertEvaluator, a: f64) -> f64 {
    let rho = h.rho;
    let mut breaks = vec![-a, a];
    for b in [-2.0 * rho, -rho, 0.0, rho, 2.0 * rho] {
        if b > -a && b < a {
            breaks.push(b);
        }
    }
    let mut x = 2.0 * rho;
    while x * 1.5 < a {
        x *= 1.5;
        breaks.push(x);
        breaks.push(-x);
    }
    breaks.sort_by(f64::total_cmp);
    quad::integrate_breaks(&breaks, quad::gl(20), |y| h.eval(y, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::{make_bump, TestFunction};

    fn bump_pv() -> (impl Fn(f64) -> f64 + Sync, impl Fn(f64) -> f64 + Sync) {
        let b = make_bump();
        let b2 = b.clone();
        (move |t| b.eval(t), move |t| b2.eval_k(1, t))
    }

    #[test]
    fn pv_of_even_function_at_zero() {
        let (g, dg) = bump_pv();
        let pv = PVIntegrand { g: &g, dg: &dg, support: 1.0 };
        assert_eq!(cauchy_pv(&pv, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn pv_outside_support_is_plain_integral() {
        let (g, dg) = bump_pv();
        let pv = PVIntegrand { g: &g, dg: &dg, support: 1.0 };
        let v = cauchy_pv(&pv, 10.0).unwrap();
        let naive = quad::adaptive(|t| g(t) / (t - 10.0), -1.0, 1.0, 1e-15, 1e-14, 1_000_000).unwrap();
        assert!((v - naive).abs() <= 1e-9, "{v} {naive}");
    }

    #[test]
    fn pv_matches_excision_oracle() {
        let (g, dg) = bump_pv();
        let pv = PVIntegrand { g: &g, dg: &dg, support: 1.0 };
        let x = 0.5;
        let v = cauchy_pv(&pv, x).unwrap();
        let excised = |eps: f64| {
            let a = quad::adaptive(|t| g(t) / (t - x), -1.0, x - eps, 1e-15, 1e-14, 1_000_000).unwrap();
            let b = quad::adaptive(|t| g(t) / (t - x), x + eps, 1.0, 1e-15, 1e-14, 1_000_000).unwrap();
            a + b
        };
        // the excision error is odd in ε: E(ε) = c₁ε + c₃ε³ + …
        let (e1, e2, e3) = (excised(1e-2), excised(1e-3), excised(1e-4));
        let r1 = (10.0 * e2 - e1) / 9.0;
        let r2 = (10.0 * e3 - e2) / 9.0;
        let extrap = (1000.0 * r2 - r1) / 999.0;
        assert!((v - extrap).abs() <= 1e-6, "{v} {extrap}");
    }

    #[test]
    fn pv_is_linear() {
        let (g, dg) = bump_pv();
        let g2 = |t: f64| 3.0 * g(t) - 0.5 * g(2.0 * t);
        let dg2 = |t: f64| 3.0 * dg(t) - dg(2.0 * t);
        let p1 = PVIntegrand { g: &g, dg: &dg, support: 1.0 };
        let half = |t: f64| g(2.0 * t);
        let dhalf = |t: f64| 2.0 * dg(2.0 * t);
        let p2 = PVIntegrand { g: &half, dg: &dhalf, support: 1.0 };
        let p = PVIntegrand { g: &g2, dg: &dg2, support: 1.0 };
        for &x in &[-0.7, 0.1, 0.3, 2.0] {
            let lhs = cauchy_pv(&p, x).unwrap();
            let rhs = 3.0 * cauchy_pv(&p1, x).unwrap() - 0.5 * cauchy_pv(&p2, x).unwrap();
            assert!((lhs - rhs).abs() < 1e-11);
        }
    }

    #[test]
    fn weighted_identity_examples() {
        assert_eq!(weighted_pv_zero_identity(100.0, 0.0), 0.0);
        assert!(weighted_pv_zero_identity(100.0, 37.2).abs() <= 1e-8);
        assert!(weighted_pv_zero_identity(400.0, -399.0).abs() <= WEIGHTED_PV_ENDPOINT_TOL);
        for i in 0..50 {
            let x = -99.0 + 198.0 * (i as f64 + 0.5) / 50.0;
            let r = weighted_pv_zero_identity(100.0, x);
            assert!(r.abs() <= 1e-8, "x={x}: {r}");
        }
    }

    fn evaluator(lambda: f64, ell: f64) -> HilbertEvaluator {
        HilbertEvaluator::new(lambda, make_bump().rescale(ell), Regime::Relaxed).unwrap()
    }

    #[test]
    fn regime_checks() {
        assert!(HilbertEvaluator::new(2000.0, make_bump().rescale(10.0), Regime::Strict).is_err());
        assert!(HilbertEvaluator::new(30.0, make_bump().rescale(10.0), Regime::Relaxed).is_err());
        assert!(Regime::Strict.check(150.0, 200_000.0).is_ok());
    }

    #[test]
    fn hilbert_is_even_for_even_phi() {
        let h = evaluator(2000.0, 10.0);
        for &x in &[0.0, 30.0, 1000.0, 5.0, 17.3] {
            let a = h.eval(x, 0);
            let b = h.eval(-x, 0);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300), "{x}: {a} {b}");
        }
    }

    #[test]
    fn cached_matches_direct() {
        let h = evaluator(2000.0, 10.0);
        for k in 0..3 {
            for &x in &[0.0, 3.3, -9.9, 10.5, 19.9, 20.0, 25.0, 150.0, -1999.0] {
                let c = h.eval(x, k);
                let d = h.direct(x, k).unwrap();
                let scale = 2000.0 / 10f64.powi(k as i32 + 1);
                assert!((c - d).abs() <= 1e-11 * scale, "k={k} x={x}: {c} {d}");
            }
        }
    }

    #[test]
    fn hilbert_at_zero_matches_excision() {
        let h = evaluator(2000.0, 10.0);
        let g = |t: f64| h.phi_lambda(0, t);
        let x = 0.0;
        let excised = |eps: f64| {
            let a = quad::adaptive(|t| g(t) / (t - x), -10.0, x - eps, 1e-13, 1e-14, 1_000_000).unwrap();
            let b = quad::adaptive(|t| g(t) / (t - x), x + eps, 10.0, 1e-13, 1e-14, 1_000_000).unwrap();
            (a + b) / PI
        };
        let (e1, e2) = (excised(1e-2), excised(1e-3));
        let extrap = (10.0 * e2 - e1) / 9.0;
        let v = hilbert_transform(&h, 0.0, 0).unwrap();
        assert!((v - extrap).abs() <= 1e-6, "{v} {extrap}");
    }

    #[test]
    fn derivative_commutes_with_pv() {
        let h = evaluator(2000.0, 10.0);
        let step = 1e-3;
        for k in 0..2 {
            for &x in &[0.7, 4.0, 9.5, 12.0, 40.0, 600.0] {
                let fd = (h.eval(x + step, k) - h.eval(x - step, k)) / (2.0 * step);
                let ex = h.eval(x, k + 1);
                assert!((fd - ex).abs() <= 1e-4 * ex.abs(), "k={k} x={x}: {fd} {ex}");
            }
        }
    }

    #[test]
    fn decay_envelope_is_slowly_varying() {
        let (lambda, ell) = (2000.0, 10.0);
        let h = evaluator(lambda, ell);
        let ratios: Vec<f64> = [40.0, 80.0, 160.0, 320.0, 640.0, 1000.0]
            .iter()
            .map(|&x| h.eval(x, 0).abs() * x * x / (lambda * ell))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo < 3.0, "{ratios:?}");
    }

    #[test]
    fn integral_average_is_bounded() {
        let (lambda, ell) = (2000.0, 10.0);
        let h = evaluator(lambda, ell);
        for &a in &[100.0, 300.0, 1000.0] {
            let v = hilbert_integral(&h, a).abs() * a / (ell * lambda);
            assert!(v.is_finite() && v < 10.0, "a={a}: {v}");
        }
    }

    #[test]
    fn decomposition_examples() {
        let h = evaluator(1000.0, 10.0);
        assert_eq!(phi_lambda_decomposition(&h, 12.0), (0.0, 0.0));
        assert_eq!(phi_lambda_decomposition(&h, 0.0), (0.0, 0.0));
        let (m, e) = phi_lambda_decomposition(&h, 5.0);
        assert!((m + e - h.phi_lambda(0, 5.0)).abs() <= 1e-15 * m.abs());
        // envelope: |Er| ≤ C ℓ/λ · |φ′|-scale
        assert!(e.abs() <= 10.0 / 1000.0 * m.abs());
    }

    #[test]
    fn odd_phi_gives_odd_transform() {
        let phi = TestFunction::by_name("oddbump", 1.0).unwrap().rescale(8.0);
        let h = HilbertEvaluator::new(500.0, phi, Regime::Relaxed).unwrap();
        for &x in &[1.0, 7.0, 30.0] {
            assert!((h.eval(x, 0) + h.eval(-x, 0)).abs() <= 1e-9 * h.eval(x, 0).abs());
        }
    }
}
