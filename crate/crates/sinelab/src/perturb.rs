//! The perturbation measure 𝔪 = −𝔥/(π√(λ²−x²)), its C² modification 𝔪̃
//! near the endpoints, logarithmic potentials and the variance term.
//!
//! Every integral over Λ = [−λ, λ] is taken in θ with x = λ sin θ, so the
//! (λ−|x|)^{−1/2} endpoint behaviour of 𝔪 never reaches the quadrature:
//! 𝔪(x)dx = −𝔥(λ sin θ)/π dθ.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, PanelRule};
use crate::singular::{HilbertEvaluator, Regime};
use crate::testfn::{bump_k, h_half_norm_sq, make_bump, RescaledTestFunction, Smooth};

/// Nodes per θ-panel.
pub const PANEL_NODES: usize = 20;
/// Relative distance to ±λ below which 𝔪 is reported as singular.
pub const ENDPOINT_REL: f64 = 1e-9;

/// Which logarithmic potential to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// LP(x) = ∫ −log|x−y| 𝔪(y) dy
    FullM,
    /// ∫ −log|x−y| (𝔪̃ − 𝔪)(y) dy over the strip at −λ
    ErrorLeft,
    /// same over the strip at +λ
    ErrorRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Patch data at one endpoint, in the coordinate z = distance to the endpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EndpointPatch {
    /// z-derivatives of 𝔪 at z = ℓ (orders 0, 1, 2)
    pub d: [f64; 3],
    /// ∫ 𝔪 over the strip z ∈ [0, ℓ]
    pub strip_mass: f64,
    /// ∫ 𝖱 over [ℓ/2, ℓ]
    pub r_mass: f64,
    /// mass carried by the hump 𝖳 on [ℓ/4, ℓ/2]
    pub t_mass: f64,
}

/// ψ(t) = g(t)/(g(t)+g(1−t)), g(t) = e^{−1/t}: a C^∞ step from 0 (t ≤ 0) to 1
/// (t ≥ 1), flat to all orders at both ends. Returns the k-th derivative.
pub fn flat_step(t: f64, k: usize) -> f64 {
    if t <= 2e-3 {
        return 0.0;
    }
    if t >= 1.0 - 2e-3 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    // ψ = 1/(1+e^q), q = 1/t − 1/(1−t)
    let q = 1.0 / t - 1.0 / (1.0 - t);
    let p = 1.0 / (1.0 + q.exp());
    let pq = p * (1.0 - p);
    let q1 = -1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t));
    match k {
        0 => p,
        1 => -pq * q1,
        2 => {
            let q2 = 2.0 / (t * t * t) - 2.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t));
            let p1 = -pq * q1;
            -(1.0 - 2.0 * p) * p1 * q1 - pq * q2
        }
        _ => panic!("flat_step derivative order {k} > 2"),
    }
}

/// ∫_{−1}^{1} exp(−1/(1−v²)) dv.
fn bump_mass() -> f64 {
    static M: OnceLock<f64> = OnceLock::new();
    *M.get_or_init(|| crate::testfn::integral(&make_bump()).expect("bump integral"))
}

/// S_d(u) = c·exp(−1/(1−(2u+1)²)) on [−1, 0], ∫S_d = 1; k-th derivative in u.
pub fn mass_hump(u: f64, k: usize) -> f64 {
    let v = 2.0 * u + 1.0;
    2.0 / bump_mass() * bump_k(k, v) * 2f64.powi(k as i32)
}

#[derive(Debug, Clone)]
pub struct PerturbationBundle {
    lambda: f64,
    ell: f64,
    hilbert: HilbertEvaluator,
    left: EndpointPatch,
    right: EndpointPatch,
    patched: bool,
    x_breaks: Vec<f64>,
    rule: PanelRule,
    /// 𝔪̃(λ sin θ)·λ cos θ at the θ-nodes
    mt_theta: Vec<f64>,
    /// −𝔥(λ sin θ)/π at the θ-nodes
    m_theta: Vec<f64>,
    left_rule: PanelRule,
    right_rule: PanelRule,
    left_delta: Vec<f64>,
    right_delta: Vec<f64>,
    phi_norm_sq: f64,
    background: OnceLock<Background>,
}

/// s-independent pairings shared by the energy identities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Background {
    /// ∫_Λ LP dx
    pub lp_integral: f64,
    /// ∫_Λ ErrorLog dx
    pub errorlog_integral: f64,
    /// ∫ 𝔪̃(y) U(y) dy with U(y) = ∫_Λ −log|x−y| dx
    pub mt_u: f64,
    pub variance: VarianceTerm,
}

/// ∫ −log|u| du = u − u log|u| (zero at 0).
pub fn log_antiderivative(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u - u * u.abs().ln()
    }
}

/// Second antiderivative of −log|u|: 3u²/4 − u² log|u| / 2.
pub fn log_antiderivative2(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        0.75 * u * u - 0.5 * u * u * u.abs().ln()
    }
}

/// ∫_a^b −log|x−y| dy.
pub fn lebesgue_potential(x: f64, a: f64, b: f64) -> f64 {
    log_antiderivative(x - a) - log_antiderivative(x - b)
}

/// ∫_a^b ∫_c^d −log|x−y| dy dx.
pub fn lebesgue_energy(a: f64, b: f64, c: f64, d: f64) -> f64 {
    log_antiderivative2(b - c) - log_antiderivative2(a - c) - log_antiderivative2(b - d) + log_antiderivative2(a - d)
}

/// x-breakpoints adapted to 𝔪̃: uniform across the support of φ, geometric
/// outward, geometric in the distance to ±λ, and the junctions of the patch.
pub fn default_x_breaks(lambda: f64, ell: f64, rho: f64) -> Vec<f64> {
    let mut half = Vec::new();
    for i in 0..=32 {
        half.push(rho * i as f64 / 16.0);
    }
    let mut x = 2.0 * rho;
    loop {
        x *= 1.3;
        if x > lambda / 2.0 / 1.15 {
            break;
        }
        half.push(x);
    }
    let mut d = lambda / 2.0;
    while d > 1.3 * ell {
        half.push(lambda - d);
        d /= 1.4;
    }
    for z in [1.0, 0.875, 0.75, 0.625, 0.5, 0.4375, 0.375, 0.3125, 0.25, 0.125, 0.0625, 0.0] {
        half.push(lambda - z * ell);
    }
    half.retain(|&v| v >= 0.0 && v <= lambda);
    let mut b: Vec<f64> = half.iter().map(|&v| -v).chain(half.iter().copied()).collect();
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

fn theta_of(x: f64, lambda: f64) -> f64 {
    (x / lambda).clamp(-1.0, 1.0).asin()
}

impl PerturbationBundle {
    /// Builds 𝔪, the patched 𝔪̃ and the cached quadrature data.
    pub fn new(lambda: f64, phi: RescaledTestFunction, regime: Regime) -> Result<Self> {
        Self::with_nodes(lambda, phi, regime, PANEL_NODES)
    }

    pub fn with_nodes(lambda: f64, phi: RescaledTestFunction, regime: Regime, nodes: usize) -> Result<Self> {
        let ell = phi.ell;
        let phi_norm_sq = h_half_norm_sq(&phi.base)?;
        let hilbert = HilbertEvaluator::new(lambda, phi, regime)?;
        if hilbert.rho() > lambda - 2.0 * ell {
            return Err(Error::ScaleSeparationViolated { ell, lambda, reason: "support meets the endpoint strips" });
        }
        let x_breaks = default_x_breaks(lambda, ell, hilbert.rho());
        let theta_breaks: Vec<f64> = x_breaks.iter().map(|&x| theta_of(x, lambda)).collect();
        let rule = PanelRule::new(theta_breaks, nodes);
        let strip_rule = |side: Side| {
            let b: Vec<f64> = x_breaks
                .iter()
                .copied()
                .filter(|&x| match side {
                    Side::Left => x <= -lambda + ell,
                    Side::Right => x >= lambda - ell,
                })
                .map(|x| theta_of(x, lambda))
                .collect();
            PanelRule::new(b, nodes)
        };
        let left_rule = strip_rule(Side::Left);
        let right_rule = strip_rule(Side::Right);
        let empty = EndpointPatch { d: [0.0; 3], strip_mass: 0.0, r_mass: 0.0, t_mass: 0.0 };
        let mut b = PerturbationBundle {
            lambda,
            ell,
            hilbert,
            left: empty,
            right: empty,
            patched: true,
            x_breaks,
            rule,
            mt_theta: Vec::new(),
            m_theta: Vec::new(),
            left_rule,
            right_rule,
            left_delta: Vec::new(),
            right_delta: Vec::new(),
            phi_norm_sq,
            background: OnceLock::new(),
        };
        b.left = b.build_patch(Side::Left)?;
        b.right = b.build_patch(Side::Right)?;
        b.fill_caches();
        Ok(b)
    }

    fn build_patch(&self, side: Side) -> Result<EndpointPatch> {
        let (lambda, ell) = (self.lambda, self.ell);
        let (p, sgn) = match side {
            Side::Left => (-lambda + ell, 1.0),
            Side::Right => (lambda - ell, -1.0),
        };
        let mut d = [0.0; 3];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = self.m_k(p, k)? * sgn_pow(sgn, k);
        }
        let strip = &match side {
            Side::Left => &self.left_rule,
            Side::Right => &self.right_rule,
        };
        let strip_mass = strip.integrate(|th| -self.hilbert.eval(self.lambda * th.sin(), 0) / PI);
        let mut patch = EndpointPatch { d, strip_mass, r_mass: 0.0, t_mass: 0.0 };
        let rb: Vec<f64> = (0..=32).map(|i| 0.5 * ell + 0.5 * ell * i as f64 / 32.0).collect();
        patch.r_mass = quad::integrate_breaks(&rb, quad::gl(20), |z| r_piece(&patch, ell, z, 0));
        patch.t_mass = strip_mass - patch.r_mass;
        if !patch.t_mass.is_finite() {
            return Err(Error::NonFinite("endpoint patch mass".into()));
        }
        Ok(patch)
    }

    fn fill_caches(&mut self) {
        let l = self.lambda;
        self.mt_theta = self.rule.nodes.iter().map(|&th| self.mt_theta_fn(th)).collect();
        self.m_theta = self.rule.nodes.iter().map(|&th| -self.hilbert.eval(l * th.sin(), 0) / PI).collect();
        self.left_delta = self.left_rule.nodes.iter().map(|&th| self.delta_theta(th)).collect();
        self.right_delta = self.right_rule.nodes.iter().map(|&th| self.delta_theta(th)).collect();
    }

    /// Diagnostic copy with 𝔪̃ replaced by 𝔪 (no endpoint patch).
    pub fn unpatched(&self) -> Self {
        let mut b = self.clone();
        b.patched = false;
        b.background = OnceLock::new();
        b.fill_caches();
        b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn hilbert(&self) -> &HilbertEvaluator {
        &self.hilbert
    }
    pub fn phi(&self) -> &RescaledTestFunction {
        self.hilbert.phi()
    }
    pub fn patch(&self, side: Side) -> &EndpointPatch {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
    /// ‖φ̄‖²_{H^{1/2}}.
    pub fn phi_norm_sq(&self) -> f64 {
        self.phi_norm_sq
    }
    /// Breakpoints in x used by all quadratures over Λ.
    pub fn x_breaks(&self) -> &[f64] {
        &self.x_breaks
    }
    /// The θ-panel rule over [−π/2, π/2].
    pub fn theta_rule(&self) -> &PanelRule {
        &self.rule
    }
    /// 𝔪̃(λ sin θ)·λ cos θ at the nodes of [`Self::theta_rule`].
    pub fn mt_theta_nodes(&self) -> &[f64] {
        &self.mt_theta
    }

    /// The junctions −λ+ℓ/4, −λ+ℓ/2, −λ+ℓ, λ−ℓ, λ−ℓ/2, λ−ℓ/4.
    pub fn junctions(&self) -> [f64; 6] {
        let (l, e) = (self.lambda, self.ell);
        [-l + e / 4.0, -l + e / 2.0, -l + e, l - e, l - e / 2.0, l - e / 4.0]
    }

    /// 𝔪^{(k)}(x), k ≤ 2, unchecked.
    fn m_k(&self, x: f64, k: usize) -> Result<f64> {
        let l = self.lambda;
        if x.abs() >= l * (1.0 - ENDPOINT_REL) {
            return Err(Error::EndpointSingularity { x, lambda: l });
        }
        let w = ((l - x) * (l + x)).sqrt();
        let h = &self.hilbert;
        let w3 = w * w * w;
        let v = match k {
            0 => -h.eval(x, 0) / (PI * w),
            1 => -(h.eval(x, 1) / w + h.eval(x, 0) * x / w3) / PI,
            2 => {
                let w5 = w3 * w * w;
                -(h.eval(x, 2) / w + 2.0 * h.eval(x, 1) * x / w3 + h.eval(x, 0) * (1.0 / w3 + 3.0 * x * x / w5)) / PI
            }
            _ => return Err(Error::Invalid(format!("derivative order {k} > 2"))),
        };
        Ok(v)
    }

    /// Endpoint strip containing x (and z = distance to that endpoint), if any.
    fn strip(&self, x: f64) -> Option<(Side, f64)> {
        if x <= -self.lambda + self.ell {
            Some((Side::Left, self.lambda + x))
        } else if x >= self.lambda - self.ell {
            Some((Side::Right, self.lambda - x))
        } else {
            None
        }
    }

    /// 𝔪̃^{(k)}(x) for k ≤ 2; zero outside (−λ, λ).
    pub fn m_tilde(&self, x: f64, k: usize) -> f64 {
        if x.abs() >= self.lambda {
            return 0.0;
        }
        match self.strip(x) {
            Some((side, z)) if self.patched => {
                let sgn = if side == Side::Left { 1.0 } else { -1.0 };
                sgn_pow(sgn, k) * patch_value(self.patch(side), self.ell, z, k)
            }
            _ => self.m_k(x, k).unwrap_or(0.0),
        }
    }

    /// 𝔪̃ in θ-form: 𝔪̃(λ sin θ)·λ cos θ.
    fn mt_theta_fn(&self, th: f64) -> f64 {
        let x = self.lambda * th.sin();
        match self.strip(x) {
            Some((side, z)) if self.patched => patch_value(self.patch(side), self.ell, z, 0) * self.lambda * th.cos(),
            _ => -self.hilbert.eval(x, 0) / PI,
        }
    }

    /// (𝔪̃ − 𝔪) in θ-form.
    fn delta_theta(&self, th: f64) -> f64 {
        let x = self.lambda * th.sin();
        match self.strip(x) {
            Some((side, z)) if self.patched => {
                patch_value(self.patch(side), self.ell, z, 0) * self.lambda * th.cos() + self.hilbert.eval(x, 0) / PI
            }
            _ => 0.0,
        }
    }

    fn sing_points(&self, x: f64) -> Vec<f64> {
        if x.abs() < self.lambda {
            let t = theta_of(x, self.lambda);
            vec![t, t.signum() * PI - t]
        } else {
            vec![FRAC_PI_2.copysign(x)]
        }
    }

    /// θ ↦ −log|x − λ sin θ|, written as a product near the diagonal so the
    /// difference keeps full precision where sin is flat.
    fn log_kernel(&self, x: f64) -> impl Fn(f64) -> f64 + '_ {
        let l = self.lambda;
        let inside = x.abs() < l;
        let tx = theta_of(x, l);
        move |th: f64| {
            if inside {
                -(2.0 * l * (0.5 * (tx + th)).cos() * (0.5 * (tx - th)).sin()).abs().ln()
            } else {
                -(x - l * th.sin()).abs().ln()
            }
        }
    }

    /// P̃(x) = ∫ −log|x−y| 𝔪̃(y) dy.
    pub fn potential_tilde(&self, x: f64) -> f64 {
        let sing = self.sing_points(x);
        self.rule.integrate_product(&self.mt_theta, &sing, self.log_kernel(x), |th| self.mt_theta_fn(th))
    }

    fn potential(&self, x: f64, which: PotentialKind) -> f64 {
        let l = self.lambda;
        let sing = self.sing_points(x);
        let kern = self.log_kernel(x);
        match which {
            PotentialKind::FullM => {
                self.rule.integrate_product(&self.m_theta, &sing, kern, |th| -self.hilbert.eval(l * th.sin(), 0) / PI)
            }
            PotentialKind::ErrorLeft => {
                self.left_rule.integrate_product(&self.left_delta, &sing, kern, |th| self.delta_theta(th))
            }
            PotentialKind::ErrorRight => {
                self.right_rule.integrate_product(&self.right_delta, &sing, kern, |th| self.delta_theta(th))
            }
        }
    }

    /// The requested potential at x (no finiteness check).
    pub fn potential_at(&self, x: f64, which: PotentialKind) -> f64 {
        self.potential(x, which)
    }

    /// ErrorLog(x) = error_left + error_right.
    pub fn error_log(&self, x: f64) -> f64 {
        self.potential(x, PotentialKind::ErrorLeft) + self.potential(x, PotentialKind::ErrorRight)
    }

    /// d/dx of the one-sided error potential, for x outside that strip.
    pub fn error_log_derivative(&self, x: f64, side: Side) -> Result<f64> {
        let l = self.lambda;
        let (rule, cache) = match side {
            Side::Left => (&self.left_rule, &self.left_delta),
            Side::Right => (&self.right_rule, &self.right_delta),
        };
        if let Some((s, _)) = self.strip(x) {
            if s == side && x.abs() < l {
                return Err(Error::Invalid(format!("{x} lies in the strip")));
            }
        }
        // d/dx ∫ −log|x−y| δ(y) dy = ∫ δ(y)/(y−x) dy
        let sing = self.sing_points(x);
        Ok(rule.integrate_product(cache, &sing, |th| 1.0 / (l * th.sin() - x), |th| self.delta_theta(th)))
    }

    /// ∫_a^b 𝔪̃, a ≤ b, by θ-quadrature.
    pub fn mass_tilde(&self, a: f64, b: f64) -> f64 {
        let (ta, tb) = (theta_of(a, self.lambda), theta_of(b, self.lambda));
        let mut br: Vec<f64> = self.rule.breaks.iter().copied().filter(|&t| t > ta && t < tb).collect();
        br.insert(0, ta);
        br.push(tb);
        quad::integrate_breaks(&br, &self.rule.rule, |th| self.mt_theta_fn(th))
    }

    /// ∫ 𝔪 over Λ.
    pub fn total_mass(&self) -> f64 {
        self.rule.sum(&self.m_theta)
    }

    /// ∫ 𝔪̃ over Λ.
    pub fn total_mass_tilde(&self) -> f64 {
        self.rule.sum(&self.mt_theta)
    }

    /// ‖𝔪̃‖_{L¹}.
    pub fn l1_norm_tilde(&self) -> f64 {
        self.rule.weights.iter().zip(&self.mt_theta).map(|(w, v)| w * v.abs()).sum()
    }

    /// sup |𝔪̃| sampled on the θ-nodes and a fine grid of the strips.
    pub fn sup_norm_tilde(&self) -> f64 {
        let mut m = 0.0f64;
        for &th in &self.rule.nodes {
            m = m.max(self.m_tilde(self.lambda * th.sin(), 0).abs());
        }
        for &x in &self.grid(4000) {
            m = m.max(self.m_tilde(x, 0).abs());
        }
        m
    }

    /// The s-independent pairings, computed on first use.
    pub fn background(&self) -> Result<&Background> {
        if let Some(b) = self.background.get() {
            return Ok(b);
        }
        let l = self.lambda;
        let mut lp = 0.0;
        let mut el = 0.0;
        let mut mt_u = 0.0;
        for ((&th, &w), &mt) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.mt_theta) {
            let x = l * th.sin();
            let jac = w * l * th.cos();
            lp += jac * self.potential(x, PotentialKind::FullM);
            el += jac * self.error_log(x);
            mt_u += w * mt * lebesgue_potential(x, -l, l);
        }
        let variance = variance_term(self)?;
        if !(lp.is_finite() && el.is_finite() && mt_u.is_finite()) {
            return Err(Error::NonFinite("background pairings".into()));
        }
        let _ = self.background.set(Background { lp_integral: lp, errorlog_integral: el, mt_u, variance });
        Ok(self.background.get().expect("just set"))
    }

    /// ∫ φ 𝔪.
    pub fn phi_m_pairing(&self) -> f64 {
        let l = self.lambda;
        let phi = self.hilbert.phi();
        self.rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .zip(&self.m_theta)
            .map(|((&th, w), m)| w * m * phi.eval(l * th.sin()))
            .sum()
    }

    /// ∫ 𝔪·LP, the variance built from 𝔪 instead of 𝔪̃.
    pub fn variance_via_m(&self) -> f64 {
        let l = self.lambda;
        let mut s = 0.0;
        for ((&th, w), m) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.m_theta) {
            s += w * m * self.potential(l * th.sin(), PotentialKind::FullM);
        }
        s
    }

    /// Grid of n points across [−λ, λ] dense in the strips and the bulk.
    fn grid(&self, n: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * n);
        let (l, e) = (self.lambda, self.ell);
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            v.push(-l + e * u);
            v.push(l - e * u);
            v.push(-l + 2.0 * l * u);
        }
        v
    }
}

#[inline]
fn sgn_pow(s: f64, k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        s
    }
}

/// 𝖱^{(k)}(z) = [S_a((z−ℓ)/(ℓ/2))·(𝖣₀ + 𝖣₁h + 𝖣₂h²/2)]^{(k)}, h = z − ℓ.
fn r_piece(p: &EndpointPatch, ell: f64, z: f64, k: usize) -> f64 {
    if z <= 0.5 * ell || z > ell {
        return 0.0;
    }
    let t = (z - 0.5 * ell) / (0.5 * ell);
    let c = 2.0 / ell;
    let s0 = flat_step(t, 0);
    let h = z - ell;
    let q0 = p.d[0] + p.d[1] * h + 0.5 * p.d[2] * h * h;
    match k {
        0 => s0 * q0,
        1 => flat_step(t, 1) * c * q0 + s0 * (p.d[1] + p.d[2] * h),
        _ => {
            let q1 = p.d[1] + p.d[2] * h;
            flat_step(t, 2) * c * c * q0 + 2.0 * flat_step(t, 1) * c * q1 + s0 * p.d[2]
        }
    }
}

/// 𝖳^{(k)}(z) = (mass/(ℓ/4))·S_d((z − ℓ/2)/(ℓ/4)), supported on [ℓ/4, ℓ/2].
fn t_piece(p: &EndpointPatch, ell: f64, z: f64, k: usize) -> f64 {
    if z <= 0.25 * ell || z >= 0.5 * ell {
        return 0.0;
    }
    let q = 0.25 * ell;
    p.t_mass / q * mass_hump((z - 0.5 * ell) / q, k) / q.powi(k as i32)
}

/// 𝔪̃^{(k)} in the strip, as a function of the endpoint distance z ∈ [0, ℓ].
fn patch_value(p: &EndpointPatch, ell: f64, z: f64, k: usize) -> f64 {
    r_piece(p, ell, z, k) + t_piece(p, ell, z, k)
}

/// V = ∬ −log|x−y| 𝔪̃(x)𝔪̃(y), target 2‖φ̄‖², errvar = V − target.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceTerm {
    pub v: f64,
    pub target: f64,
    pub errvar: f64,
}

/// 𝔪^{(k)}(x) (k ≤ 2).
pub fn perturbation_density(b: &PerturbationBundle, x: f64, derivative: usize) -> Result<f64> {
    let v = b.m_k(x, derivative)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("perturbation density at {x}")))
    }
}

/// Builds the bundle in the pipeline regime 100 < ℓ < λ/1000.
pub fn build_approx_measure(lambda: f64, phi: RescaledTestFunction) -> Result<PerturbationBundle> {
    PerturbationBundle::new(lambda, phi, Regime::Strict)
}

pub fn log_potential(b: &PerturbationBundle, x: f64, which: PotentialKind) -> Result<f64> {
    let v = b.potential(x, which);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("log potential at {x}")))
    }
}

pub fn variance_term(b: &PerturbationBundle) -> Result<VarianceTerm> {
    let l = b.lambda;
    let mut v = 0.0;
    for ((&th, w), m) in b.rule.nodes.iter().zip(&b.rule.weights).zip(&b.mt_theta) {
        if *m != 0.0 {
            v += w * m * b.potential_tilde(l * th.sin());
        }
    }
    if !v.is_finite() {
        return Err(Error::NonFinite("variance term".into()));
    }
    let target = 2.0 * b.phi_norm_sq;
    Ok(VarianceTerm { v, target, errvar: v - target })
}

/// The piecewise envelopes bounding |𝔪̃^{(k)}|, without constants.
pub fn envelope(lambda: f64, ell: f64, x: f64, k: usize) -> f64 {
    let ax = x.abs();
    let kf = k as i32;
    let l32 = lambda.powf(1.5);
    if ax <= 2.0 * ell {
        1.0 / ell.powi(kf + 1)
    } else if ax <= lambda / 2.0 {
        ell / ax.powi(kf + 2)
    } else if ax <= lambda - ell {
        ell / (l32 * (lambda - ax).powf(0.5 + kf as f64))
    } else {
        ell / (l32 * ell.powf(0.5 + kf as f64))
    }
}

/// Observed constants sup |𝔪̃^{(k)}|/envelope_k and ‖𝔪̃‖_{L¹}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub ratio: [f64; 3],
    pub l1_norm: f64,
}

pub fn envelope_report(b: &PerturbationBundle) -> EnvelopeReport {
    let mut ratio = [0.0f64; 3];
    let mut xs: Vec<f64> = b.rule.nodes.iter().map(|&th| b.lambda * th.sin()).collect();
    xs.extend(b.grid(2000));
    for &x in &xs {
        for (k, r) in ratio.iter_mut().enumerate() {
            *r = r.max(b.m_tilde(x, k).abs() / envelope(b.lambda, b.ell, x, k));
        }
    }
    EnvelopeReport { ratio, l1_norm: b.l1_norm_tilde() }
}
