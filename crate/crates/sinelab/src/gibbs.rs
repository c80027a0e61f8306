//! Finite-volume DLR energies and a Metropolis sampler of the conditional
//! Gibbs law in Λ = [−λ, λ] given an exterior configuration.
//!
//! The target is exp(−β(H̃_Λ(η) + M̃_Λ(η, γ))) against i.i.d. uniform points
//! in Λ; the partition function is never needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::lebesgue_potential;
use crate::pointproc::PointConfiguration;
use crate::transport::{interaction_energy, SignedMeasure};

/// Inverse temperature, box, exterior configuration and truncation radius.
#[derive(Debug, Clone)]
pub struct GibbsSpec {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: PointConfiguration,
    pub p: f64,
}

impl GibbsSpec {
    pub fn new(beta: f64, lambda: f64, gamma: PointConfiguration, p: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("beta = {beta}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda = {lambda}")));
        }
        let spec = GibbsSpec { beta, lambda, gamma, p };
        let hw = spec.half_width();
        if hw < lambda {
            return Err(Error::Invalid(format!("window {:?} does not contain the box", spec.gamma.window())));
        }
        if !(p >= lambda) {
            return Err(Error::Invalid(format!("truncation p = {p} smaller than lambda = {lambda}")));
        }
        if p > hw {
            return Err(Error::TruncationExceedsWindow { p, half_width: hw });
        }
        Ok(spec)
    }

    /// Largest symmetric truncation the window supports.
    pub fn half_width(&self) -> f64 {
        let (lo, hi) = self.gamma.window();
        (-lo).min(hi)
    }

    /// γ_Λ, the reference configuration inside the open box.
    pub fn interior(&self) -> Vec<f64> {
        self.gamma.points().iter().copied().filter(|x| x.abs() < self.lambda).collect()
    }

    pub fn n_interior(&self) -> usize {
        self.interior().len()
    }

    /// The exterior field at truncation p.
    pub fn exterior_field(&self, p: f64) -> Result<ExteriorField> {
        let hw = self.half_width();
        if p > hw {
            return Err(Error::TruncationExceedsWindow { p, half_width: hw });
        }
        let points = self.gamma.points().iter().copied().filter(|x| x.abs() >= self.lambda && x.abs() <= p).collect();
        Ok(ExteriorField { lambda: self.lambda, p, points })
    }
}

/// W(y) = Σ_{x ∈ γ ∩ [−p,p]∖Λ} −log|x−y| − ∫_{[−p,p]∖Λ} −log|x−y| dx.
#[derive(Debug, Clone)]
pub struct ExteriorField {
    lambda: f64,
    p: f64,
    points: Vec<f64>,
}

impl ExteriorField {
    pub fn eval(&self, y: f64) -> f64 {
        let mut s = 0.0;
        for &x in &self.points {
            s -= (x - y).abs().ln();
        }
        s - lebesgue_potential(y, -self.p, -self.lambda) - lebesgue_potential(y, self.lambda, self.p)
    }

    pub fn total(&self, ys: &[f64]) -> f64 {
        ys.iter().map(|&y| self.eval(y)).sum()
    }
}

fn check_inside(eta: &[f64], lambda: f64) -> Result<()> {
    if let Some(&x) = eta.iter().find(|x| !(x.abs() <= lambda)) {
        return Err(Error::OutOfWindow { a: x, b: x, w_lo: -lambda, w_hi: lambda });
    }
    Ok(())
}

fn check_distinct(eta: &[f64]) -> Result<()> {
    let mut v = eta.to_vec();
    v.sort_by(f64::total_cmp);
    for w in v.windows(2) {
        if w[0] == w[1] {
            return Err(Error::CoincidentPoints(w[0]));
        }
    }
    Ok(())
}

/// H̃_Λ(η) = ½∬_{(Λ×Λ)∖⋄} −log|x−y| (dη−dx)(dη−dy).
pub fn interior_energy(eta: &PointConfiguration, lambda: f64) -> Result<f64> {
    interior_energy_points(eta.points(), lambda)
}

pub fn interior_energy_points(eta: &[f64], lambda: f64) -> Result<f64> {
    check_inside(eta, lambda)?;
    check_distinct(eta)?;
    let mut m = SignedMeasure::points(eta);
    m.uniform.push((-lambda, lambda, -1.0));
    Ok(0.5 * interaction_energy(&m, &m, (-lambda, lambda), true)?)
}

/// M̃_Λ at truncation `spec.p`, with the values at p ∈ {2λ, 4λ, 8λ} that fit
/// in the window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoveEnergy {
    pub value: f64,
    pub p: f64,
    /// (p, M̃ truncated at p)
    pub convergence: Vec<(f64, f64)>,
    /// differences between consecutive truncations
    pub cauchy: Vec<f64>,
}

pub fn move_energy(eta: &PointConfiguration, spec: &GibbsSpec) -> Result<MoveEnergy> {
    let eta = eta.points();
    check_inside(eta, spec.lambda)?;
    let reference = spec.interior();
    if eta.len() != reference.len() {
        return Err(Error::Invalid(format!("|eta| = {} but |gamma_Lambda| = {}", eta.len(), reference.len())));
    }
    let at = |p: f64| -> Result<f64> {
        let w = spec.exterior_field(p)?;
        Ok(w.total(eta) - w.total(&reference))
    };
    let value = at(spec.p)?;
    let hw = spec.half_width();
    let mut convergence = Vec::new();
    for m in [2.0, 4.0, 8.0] {
        let p = m * spec.lambda;
        if p <= hw {
            convergence.push((p, at(p)?));
        }
    }
    let cauchy = convergence.windows(2).map(|w| w[1].1 - w[0].1).collect();
    Ok(MoveEnergy { value, p: spec.p, convergence, cauchy })
}

/// Proposal family of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// a uniformly chosen particle jumps to a uniform point of Λ
    Continuous,
    /// the same on the midpoints of `sites` equal cells of Λ; occupied targets are rejected
    Lattice { sites: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcOptions {
    pub thin: usize,
    pub burn_in: usize,
    pub proposal: Proposal,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions { thin: 1, burn_in: 0, proposal: Proposal::Continuous }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcRun {
    /// labelled particle positions, one row per retained sample
    pub samples: Vec<Vec<f64>>,
    pub steps: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub final_energy: f64,
    /// largest |incremental − recomputed| energy seen at the sample checkpoints
    pub max_energy_drift: f64,
}

impl McmcRun {
    pub fn configurations(&self, lambda: f64) -> Vec<PointConfiguration> {
        self.samples
            .iter()
            .map(|s| PointConfiguration::new(s.clone(), (-lambda, lambda)).expect("samples stay in the box"))
            .collect()
    }
}

/// Metropolis acceptance probability min(1, e^{−βΔE}).
pub fn acceptance(beta: f64, de: f64) -> f64 {
    if beta == 0.0 || de <= 0.0 {
        1.0
    } else {
        (-beta * de).exp()
    }
}

/// Energy H̃ + M̃ of labelled interior positions, with the pieces that change
/// under one-particle moves precomputed.
struct EnergyModel {
    lambda: f64,
    field: ExteriorField,
    w_ref: f64,
}

impl EnergyModel {
    fn new(spec: &GibbsSpec) -> Result<Self> {
        let field = spec.exterior_field(spec.p)?;
        let w_ref = field.total(&spec.interior());
        Ok(EnergyModel { lambda: spec.lambda, field, w_ref })
    }

    fn background(&self, y: f64) -> f64 {
        lebesgue_potential(y, -self.lambda, self.lambda)
    }

    fn total(&self, x: &[f64]) -> Result<f64> {
        Ok(interior_energy_points(x, self.lambda)? + self.field.total(x) - self.w_ref)
    }

    /// ΔE for moving particle i to y.
    fn delta(&self, x: &[f64], i: usize, y: f64) -> f64 {
        let a = x[i];
        let mut d = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                d += ((a - xj).abs() / (y - xj).abs()).ln();
            }
        }
        d - (self.background(y) - self.background(a)) + self.field.eval(y) - self.field.eval(a)
    }
}

pub(crate) fn lattice_sites(lambda: f64, sites: usize) -> Vec<f64> {
    let h = 2.0 * lambda / sites as f64;
    (0..sites).map(|k| -lambda + (k as f64 + 0.5) * h).collect()
}

/// Single-site Metropolis chain with default options (thin = 1, no burn-in).
pub fn gibbs_mcmc(spec: &GibbsSpec, steps: u64, seed: u64) -> Result<McmcRun> {
    gibbs_mcmc_with(spec, steps, seed, McmcOptions::default())
}

pub fn gibbs_mcmc_with(spec: &GibbsSpec, steps: u64, seed: u64, opts: McmcOptions) -> Result<McmcRun> {
    let model = EnergyModel::new(spec)?;
    let mut x = spec.interior();
    if x.is_empty() {
        return Err(Error::Invalid("no reference points inside the box".into()));
    }
    let sites = match opts.proposal {
        Proposal::Continuous => None,
        Proposal::Lattice { sites } => {
            if sites < x.len() {
                return Err(Error::Invalid(format!("{sites} sites for {} particles", x.len())));
            }
            let s = lattice_sites(spec.lambda, sites);
            // start from the leftmost free sites
            for (k, xi) in x.iter_mut().enumerate() {
                *xi = s[k];
            }
            Some(s)
        }
    };
    let n = x.len();
    let thin = opts.thin.max(1) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut energy = model.total(&x)?;
    let mut accepted = 0u64;
    let mut drift: f64 = 0.0;
    let mut samples = Vec::new();
    let total_steps = opts.burn_in as u64 + steps;
    for step in 0..total_steps {
        let i = rng.random_range(0..n);
        let y = match &sites {
            None => rng.random_range(-spec.lambda..spec.lambda),
            Some(s) => s[rng.random_range(0..s.len())],
        };
        let u: f64 = rng.random();
        let proposed_ok = if y == x[i] {
            Some(0.0)
        } else if x.contains(&y) {
            None
        } else {
            Some(model.delta(&x, i, y))
        };
        if let Some(de) = proposed_ok {
            if u < acceptance(spec.beta, de) {
                x[i] = y;
                energy += de;
                if step >= opts.burn_in as u64 {
                    accepted += 1;
                }
            }
        }
        if step >= opts.burn_in as u64 && (step - opts.burn_in as u64 + 1).is_multiple_of(thin) {
            samples.push(x.clone());
            if samples.len() % 64 == 1 {
                let full = model.total(&x)?;
                drift = drift.max((full - energy).abs());
                energy = full;
            }
        }
    }
    let full = model.total(&x)?;
    drift = drift.max((full - energy).abs());
    Ok(McmcRun {
        samples,
        steps,
        accepted,
        acceptance_rate: if steps > 0 { accepted as f64 / steps as f64 } else { 0.0 },
        final_energy: full,
        max_energy_drift: drift,
    })
}

/// Exact Gibbs law of `n` particles on the lattice sites, over unordered site
/// sets (ascending index tuples), normalized.
pub fn lattice_gibbs_law(spec: &GibbsSpec, sites: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let model = EnergyModel::new(spec)?;
    let s = lattice_sites(spec.lambda, sites);
    let n = spec.n_interior();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    if n > sites {
        return Err(Error::Invalid(format!("{sites} sites for {n} particles")));
    }
    let mut energies = Vec::new();
    loop {
        let x: Vec<f64> = idx.iter().map(|&k| s[k]).collect();
        energies.push(model.total(&x)?);
        out.push((idx.clone(), 0.0));
        // next combination
        let mut k = n;
        loop {
            if k == 0 {
                let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
                let w: Vec<f64> = energies.iter().map(|e| (-spec.beta * (e - e0)).exp()).collect();
                let z: f64 = w.iter().sum();
                for (o, wi) in out.iter_mut().zip(w) {
                    o.1 = wi / z;
                }
                return Ok(out);
            }
            k -= 1;
            if idx[k] < sites - n + k {
                idx[k] += 1;
                for j in k + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}
