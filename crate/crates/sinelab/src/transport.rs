//! The perturbed density μ_s = 1 + s𝔪̃, the transport Φ_s pushing dx onto
//! μ_s, and the energy identities along it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{lebesgue_energy, lebesgue_potential, PerturbationBundle, PotentialKind};
use crate::pointproc::PointConfiguration;
use crate::quad::{self, PanelRule};

/// Nodes per x-panel for the smooth transport integrals.
pub const X_NODES: usize = 12;
/// Below this separation (relative to ℓ) Δ_s uses ψ_s′ at the midpoint.
pub const DIAG_REL: f64 = 1e-6;

/// s_max = ½·max(1, |𝔪̃|₀, ‖𝔪̃‖_{L¹})^{−1}.
pub fn s_max(b: &PerturbationBundle) -> f64 {
    0.5 / 1f64.max(b.sup_norm_tilde()).max(b.l1_norm_tilde())
}

#[derive(Debug, Clone)]
pub struct TransportBundle {
    s: f64,
    bundle: Arc<PerturbationBundle>,
    /// cumulative ∫_{−λ}^{θ_i} 𝔪̃ at the θ-breakpoints
    cum: Vec<f64>,
    /// mass defect spread linearly over [−λ+ℓ, λ−ℓ]
    defect: f64,
    xrule: PanelRule,
    psi_nodes: Vec<f64>,
    dpsi_nodes: Vec<f64>,
}

impl TransportBundle {
    pub fn new(bundle: Arc<PerturbationBundle>, s: f64) -> Result<Self> {
        let smax = s_max(&bundle);
        if !(s.abs() <= smax) {
            return Err(Error::Invalid(format!("|s| = {} exceeds s_max = {smax}", s.abs())));
        }
        let rule = bundle.theta_rule();
        let n = rule.n_per_panel();
        let mt = bundle.mt_theta_nodes();
        let mut cum = Vec::with_capacity(rule.breaks.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 0..rule.breaks.len() - 1 {
            let r = i * n..(i + 1) * n;
            for (w, m) in rule.weights[r.clone()].iter().zip(&mt[r]) {
                acc += w * m;
            }
            cum.push(acc);
        }
        let xrule = PanelRule::new(bundle.x_breaks().to_vec(), X_NODES);
        let mut t = TransportBundle { s, bundle, cum, defect: acc, xrule, psi_nodes: Vec::new(), dpsi_nodes: Vec::new() };
        let psi: Vec<f64> = t.xrule.nodes.iter().map(|&x| t.psi(x)).collect::<Result<_>>()?;
        let dpsi: Vec<f64> = t.xrule.nodes.iter().zip(&psi).map(|(&x, &p)| t.dpsi_at_image(x + p)).collect();
        t.psi_nodes = psi;
        t.dpsi_nodes = dpsi;
        Ok(t)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn bundle(&self) -> &PerturbationBundle {
        &self.bundle
    }

    pub fn lambda(&self) -> f64 {
        self.bundle.lambda()
    }

    /// μ_s(x) = 1 + s𝔪̃(x).
    pub fn mu(&self, x: f64) -> f64 {
        1.0 + self.s * self.bundle.m_tilde(x, 0)
    }

    /// M(x) = ∫_{−λ}^x 𝔪̃, with the quadrature mass defect removed linearly
    /// across the bulk so that M vanishes identically on both strips.
    pub fn cumulative(&self, x: f64) -> f64 {
        let l = self.lambda();
        let e = self.bundle.ell();
        if x <= -l {
            return 0.0;
        }
        if x >= l {
            return 0.0;
        }
        let rule = self.bundle.theta_rule();
        let th = (x / l).asin();
        let i = match rule.breaks.binary_search_by(|b| b.total_cmp(&th)) {
            Ok(i) => i.min(rule.breaks.len() - 2),
            Err(i) => i.saturating_sub(1).min(rule.breaks.len() - 2),
        };
        let a = rule.breaks[i];
        let mut v = self.cum[i];
        if th > a {
            v += rule.rule.integrate(a, th, |t| self.bundle.m_tilde(l * t.sin(), 0) * l * t.cos());
        }
        let w = ((x + l - e) / (2.0 * (l - e))).clamp(0.0, 1.0);
        v - self.defect * w
    }

    /// F_s(x) = ∫_{−λ}^x μ_s.
    pub fn cdf(&self, x: f64) -> f64 {
        let l = self.lambda();
        x.clamp(-l, l) + l + self.s * self.cumulative(x)
    }

    /// ψ_s(x) = Φ_s(x) − x, solving ψ + s·M(x + ψ) = 0.
    pub fn psi(&self, x: f64) -> Result<f64> {
        let l = self.lambda();
        if self.s == 0.0 || x.abs() >= l {
            return Ok(0.0);
        }
        let g = |p: f64| p + self.s * self.cumulative(x + p);
        // bracket: Φ_s(x) ∈ [−λ, λ]
        let (mut lo, mut hi) = (-l - x, l - x);
        let mut p = 0.0;
        for _ in 0..100 {
            let v = g(p);
            if v == 0.0 {
                return Ok(p);
            }
            if v > 0.0 {
                hi = hi.min(p);
            } else {
                lo = lo.max(p);
            }
            let d = 1.0 + self.s * self.bundle.m_tilde(x + p, 0);
            let mut next = p - v / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - p).abs() <= 1e-15 * (l + x.abs()) || next == p {
                return Ok(next);
            }
            p = next;
        }
        Err(Error::RootNotBracketed(x))
    }

    /// Φ_s(x).
    pub fn phi(&self, x: f64) -> Result<f64> {
        Ok(x + self.psi(x)?)
    }

    /// ψ_s′ at the preimage of y: 1/μ_s(y) − 1.
    fn dpsi_at_image(&self, y: f64) -> f64 {
        let m = self.s * self.bundle.m_tilde(y, 0);
        -m / (1.0 + m)
    }

    /// ψ_s′(x) = 1/μ_s(Φ_s(x)) − 1.
    pub fn dpsi(&self, x: f64) -> Result<f64> {
        Ok(self.dpsi_at_image(self.phi(x)?))
    }

    /// Δ_s(x, y) = (ψ_s(y) − ψ_s(x))/(y − x), ψ_s′ near the diagonal.
    pub fn delta(&self, x: f64, y: f64) -> Result<f64> {
        if (x - y).abs() < DIAG_REL * self.bundle.ell() {
            return self.dpsi(0.5 * (x + y));
        }
        Ok((self.psi(y)? - self.psi(x)?) / (y - x))
    }

    fn delta_cached(&self, x: f64, px: f64, j: usize) -> Result<f64> {
        let y = self.xrule.nodes[j];
        if (x - y).abs() < DIAG_REL * self.bundle.ell() {
            return self.dpsi(0.5 * (x + y));
        }
        Ok((self.psi_nodes[j] - px) / (y - x))
    }

    /// ∫ −log(1 + Δ_s(p, y)) dy over Λ.
    fn main_row(&self, p: f64) -> Result<f64> {
        let pp = self.psi(p)?;
        let mut s = 0.0;
        for j in 0..self.xrule.nodes.len() {
            s += self.xrule.weights[j] * -(1.0 + self.delta_cached(p, pp, j)?).ln();
        }
        Ok(s)
    }

    /// ∬ −log(1 + Δ_s(x, y)) dx dy over Λ×Λ.
    fn main_continuous(&self) -> f64 {
        let (nodes, w) = (&self.xrule.nodes, &self.xrule.weights);
        let mut total = 0.0;
        for i in 0..nodes.len() {
            let mut row = w[i] * -(1.0 + self.dpsi_nodes[i]).ln();
            for j in (i + 1)..nodes.len() {
                let d = (self.psi_nodes[j] - self.psi_nodes[i]) / (nodes[j] - nodes[i]);
                row += 2.0 * w[j] * -(1.0 + d).ln();
            }
            total += w[i] * row;
        }
        total
    }
}

/// ψ_s envelope report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiReport {
    pub sup_psi: f64,
    /// max over the grid of |ψ_s(x)| / (|s|·‖𝔪̃‖_{L¹}) (≤ 1)
    pub l1_ratio: f64,
    /// observed constants against s·1, s·ℓ/|x|, s·ℓ√(λ−|x|)/λ^{3/2}
    pub envelope_ratio: [f64; 3],
    /// max |Φ_s′(x)(1 + s𝔪̃(Φ_s(x))) − 1| with Φ_s′ from finite differences
    pub jacobian_residual: f64,
    pub monotone: bool,
}

pub fn psi_bounds_check(t: &TransportBundle) -> Result<PsiReport> {
    let l = t.lambda();
    let e = t.bundle.ell();
    let s = t.s;
    let l1 = t.bundle.l1_norm_tilde();
    let n = 1000;
    let mut r = PsiReport { sup_psi: 0.0, l1_ratio: 0.0, envelope_ratio: [0.0; 3], jacobian_residual: 0.0, monotone: true };
    let mut prev = f64::NEG_INFINITY;
    let h = 1e-2 * e.min(1.0);
    for i in 0..=n {
        let x = -l + 2.0 * l * i as f64 / n as f64;
        let p = t.psi(x)?;
        let phi = x + p;
        if phi <= prev && i > 0 {
            r.monotone = false;
        }
        prev = phi;
        r.sup_psi = r.sup_psi.max(p.abs());
        if s != 0.0 {
            r.l1_ratio = r.l1_ratio.max(p.abs() / (s.abs() * l1));
            let ax = x.abs();
            let (k, env) = if ax <= 10.0 * e {
                (0, 1.0)
            } else if ax <= l / 2.0 {
                (1, e / ax)
            } else {
                (2, e * (l - ax).sqrt() / l.powf(1.5))
            };
            if env > 0.0 {
                r.envelope_ratio[k] = r.envelope_ratio[k].max(p.abs() / (s.abs() * env));
            }
        }
        if x.abs() < l - 2.0 * h {
            let c1 = (t.psi(x + h)? - t.psi(x - h)?) / (2.0 * h);
            let c2 = (t.psi(x + 0.5 * h)? - t.psi(x - 0.5 * h)?) / h;
            let d = 1.0 + (4.0 * c2 - c1) / 3.0;
            r.jacobian_residual = r.jacobian_residual.max((d * t.mu(phi) - 1.0).abs());
        }
    }
    Ok(r)
}

/// A signed measure made of weighted atoms and uniform densities.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SignedMeasure {
    /// (position, weight)
    pub atoms: Vec<(f64, f64)>,
    /// (a, b, c): density c on [a, b]
    pub uniform: Vec<(f64, f64, f64)>,
}

impl SignedMeasure {
    pub fn points(points: &[f64]) -> Self {
        SignedMeasure { atoms: points.iter().map(|&p| (p, 1.0)).collect(), uniform: Vec::new() }
    }

    pub fn lebesgue(a: f64, b: f64, c: f64) -> Self {
        SignedMeasure { atoms: Vec::new(), uniform: vec![(a, b, c)] }
    }

    fn clipped(&self, (lo, hi): (f64, f64)) -> SignedMeasure {
        SignedMeasure {
            atoms: self.atoms.iter().copied().filter(|&(p, _)| p >= lo && p <= hi).collect(),
            uniform: self
                .uniform
                .iter()
                .map(|&(a, b, c)| (a.max(lo), b.min(hi), c))
                .filter(|&(a, b, _)| b > a)
                .collect(),
        }
    }
}

/// ∬_{(W×W)∖⋄} −log|x−y| dA(x) dB(y). Atom pairs at the same position are
/// the diagonal: skipped when `exclude_diagonal`, an error otherwise.
pub fn interaction_energy(a: &SignedMeasure, b: &SignedMeasure, window: (f64, f64), exclude_diagonal: bool) -> Result<f64> {
    let (a, b) = (a.clipped(window), b.clipped(window));
    let mut e = 0.0;
    for &(x, wx) in &a.atoms {
        for &(y, wy) in &b.atoms {
            if x == y {
                if exclude_diagonal {
                    continue;
                }
                return Err(Error::CoincidentPoints(x));
            }
            e += wx * wy * -(x - y).abs().ln();
        }
        for &(lo, hi, c) in &b.uniform {
            e += wx * c * lebesgue_potential(x, lo, hi);
        }
    }
    for &(lo, hi, c) in &a.uniform {
        for &(y, wy) in &b.atoms {
            e += wy * c * lebesgue_potential(y, lo, hi);
        }
        for &(lo2, hi2, c2) in &b.uniform {
            e += c * c2 * lebesgue_energy(lo, hi, lo2, hi2);
        }
    }
    Ok(e)
}

/// Σ_{i≠j} −log|pᵢ − pⱼ|.
pub fn pair_energy(points: &[f64]) -> Result<f64> {
    let mut e = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = (points[i] - points[j]).abs();
            if d == 0.0 {
                return Err(Error::CoincidentPoints(points[i]));
            }
            e -= 2.0 * d.ln();
        }
    }
    Ok(e)
}

/// Both sides of an energy identity and its named terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub main_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flu_re: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// named pieces of the two sides
    pub terms: Vec<(String, f64)>,
    /// scale of the s-dependent terms (the part not shared by both sides)
    pub correction_scale: f64,
}

impl EnergyReport {
    /// The acceptance contract |residual| ≤ 10⁻⁵·max(|lhs|, 1).
    pub fn within(&self, rel: f64) -> bool {
        self.residual.abs() <= rel * self.lhs.abs().max(1.0)
    }
}

fn check_inside(t: &TransportBundle, eta: &PointConfiguration) -> Result<()> {
    let l = t.lambda();
    for &p in eta.points() {
        if !(p.abs() < l) {
            return Err(Error::OutOfWindow { a: p, b: p, w_lo: -l, w_hi: l });
        }
    }
    Ok(())
}

/// Energy of (C − μ_s): pp − 2Σ(U + sP̃) + LL + 2s⟨𝔪̃,U⟩ + s²V.
fn energy_around_mu(t: &TransportBundle, points: &[f64], pp: f64) -> Result<(f64, f64)> {
    let b = &t.bundle;
    let l = t.lambda();
    let s = t.s;
    let bg = b.background()?;
    let ll = lebesgue_energy(-l, l, -l, l);
    let mut cross = 0.0;
    for &p in points {
        cross += lebesgue_potential(p, -l, l) + s * b.potential_tilde(p);
    }
    let e = pp - 2.0 * cross + ll + 2.0 * s * bg.mt_u + s * s * bg.variance.v;
    let corr = (2.0 * s * points.iter().map(|&p| b.potential_tilde(p)).sum::<f64>()).abs()
        + (2.0 * s * bg.mt_u).abs()
        + (s * s * bg.variance.v).abs();
    Ok((e, corr))
}

/// Energy splitting around μ_s.
pub fn verify_energy_splitting(t: &TransportBundle, eta: &PointConfiguration) -> Result<EnergyReport> {
    check_inside(t, eta)?;
    let b = &t.bundle;
    let l = t.lambda();
    let s = t.s;
    let pts = eta.points();
    let pp = pair_energy(pts)?;
    let ll = lebesgue_energy(-l, l, -l, l);
    let lhs = pp - 2.0 * pts.iter().map(|&p| lebesgue_potential(p, -l, l)).sum::<f64>() + ll;
    let (e_mu, corr) = energy_around_mu(t, pts, pp)?;
    let bg = b.background()?;
    let mut lp_sum = 0.0;
    let mut el_sum = 0.0;
    for &p in pts {
        lp_sum += b.potential_at(p, PotentialKind::FullM);
        el_sum += b.error_log(p);
    }
    let lp_term = 2.0 * s * (lp_sum - bg.lp_integral);
    let el_term = 2.0 * s * (el_sum - bg.errorlog_integral);
    let norm_term = -2.0 * s * s * b.phi_norm_sq();
    let errvar_term = -s * s * bg.variance.errvar;
    let rhs = e_mu + lp_term + el_term + norm_term + errvar_term;
    Ok(EnergyReport {
        main_s: None,
        re_s: None,
        flu_re: None,
        lhs,
        rhs,
        residual: lhs - rhs,
        terms: vec![
            ("energy_mu_s".into(), e_mu),
            ("lp_term".into(), lp_term),
            ("errorlog_term".into(), el_term),
            ("norm_term".into(), norm_term),
            ("errvar_term".into(), errvar_term),
        ],
        correction_scale: corr + lp_term.abs() + el_term.abs() + norm_term.abs() + errvar_term.abs(),
    })
}

/// Energy expansion along Φ_s.
pub fn verify_energy_expansion(t: &TransportBundle, eta: &PointConfiguration) -> Result<EnergyReport> {
    check_inside(t, eta)?;
    let l = t.lambda();
    let pts = eta.points();
    let pushed: Vec<f64> = pts.iter().map(|&p| t.phi(p)).collect::<Result<_>>()?;
    let pp_s = pair_energy(&pushed)?;
    let (lhs, corr) = energy_around_mu(t, &pushed, pp_s)?;

    let pp = pair_energy(pts)?;
    let ll = lebesgue_energy(-l, l, -l, l);
    let e0 = pp - 2.0 * pts.iter().map(|&p| lebesgue_potential(p, -l, l)).sum::<f64>() + ll;

    // Main_s over Λ×Λ, atom diagonal included
    let mut atoms = 0.0;
    for (i, &p) in pts.iter().enumerate() {
        atoms += -(1.0 + t.dpsi(p)?).ln();
        for &q in &pts[i + 1..] {
            atoms += 2.0 * -(1.0 + t.delta(p, q)?).ln();
        }
    }
    let mut rows = 0.0;
    for &p in pts {
        rows += t.main_row(p)?;
    }
    let cont = t.main_continuous();
    let main = atoms - 2.0 * rows + cont;

    let mut re = 0.0;
    let mut log_mu_phi = 0.0;
    for (j, (&x, &w)) in t.xrule.nodes.iter().zip(&t.xrule.weights).enumerate() {
        let m = t.mu(x);
        re -= w * m * m.ln();
        log_mu_phi += w * -(1.0 + t.dpsi_nodes[j]).ln();
    }
    let mut flu = log_mu_phi;
    for &q in &pushed {
        flu -= t.mu(q).ln();
    }
    let rhs = e0 + main + re + flu;
    Ok(EnergyReport {
        main_s: Some(main),
        re_s: Some(re),
        flu_re: Some(flu),
        lhs,
        rhs,
        residual: lhs - rhs,
        terms: vec![
            ("energy_eta".into(), e0),
            ("main_atoms".into(), atoms),
            ("main_rows".into(), -2.0 * rows),
            ("main_continuous".into(), cont),
        ],
        correction_scale: corr + main.abs() + re.abs() + flu.abs() + (pp_s - pp).abs(),
    })
}

/// DF_s(η)(x) and its decomposition s·LP + s·ErrorLog + ErrorDF.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DifferenceField {
    pub df: f64,
    pub lp_part: f64,
    pub errorlog_part: f64,
    pub errordf: f64,
}

impl DifferenceField {
    pub fn residual(&self, s: f64) -> f64 {
        self.df - s * self.lp_part - s * self.errorlog_part - self.errordf
    }
}

pub fn difference_field(t: &TransportBundle, eta: &PointConfiguration, x: f64) -> Result<DifferenceField> {
    check_inside(t, eta)?;
    let l = t.lambda();
    if x.abs() <= l {
        return Err(Error::Invalid(format!("difference field needs |x| > λ, got {x}")));
    }
    let b = &t.bundle;
    let mut df = 0.0;
    let mut atoms = 0.0;
    for &p in eta.points() {
        let q = t.phi(p)?;
        df += -(x - q).abs().ln() + (x - p).abs().ln();
        atoms += (1.0 - t.psi(p)? / (x - p)).ln();
    }
    let mut bulk = 0.0;
    for (j, (&y, &w)) in t.xrule.nodes.iter().zip(&t.xrule.weights).enumerate() {
        bulk += w * (1.0 - t.psi_nodes[j] / (x - y)).ln();
    }
    Ok(DifferenceField {
        df,
        lp_part: b.potential_at(x, PotentialKind::FullM),
        errorlog_part: b.error_log(x),
        errordf: -atoms + bulk,
    })
}

/// ∫ f∘Φ_s dx over Λ (tensor of the x-panels with `n` nodes per panel).
pub fn pushforward_integral<F: Fn(f64) -> f64>(t: &TransportBundle, f: F, breaks: &[f64], n: usize) -> Result<f64> {
    let rule = quad::gl(n);
    let mut s = 0.0;
    for w in breaks.windows(2) {
        for (x, wt) in rule.mapped(w[0], w[1]) {
            s += wt * f(t.phi(x)?);
        }
    }
    Ok(s)
}
