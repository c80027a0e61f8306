//! Approximate Sine_β samples from the tridiagonal β-Hermite model.
//!
//! The matrix has N(0, 1/β) diagonal and χ_{β(n−k)}/√(2β) off-diagonal
//! entries, so its eigenvalues have joint density ∝ Π|xᵢ−xⱼ|^β e^{−βΣxᵢ²/2}.
//! Eigenvalues come from Sturm-sequence bisection, optionally restricted to a
//! central window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointproc::PointConfiguration;

/// Bisection accuracy relative to the spectral radius.
pub const EIG_REL_TOL: f64 = 1e-10;
/// Fewest points a bulk window may hold.
pub const MIN_BULK_POINTS: usize = 10;

/// Independent stream for replica `replica` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone)]
pub struct TridiagonalModel {
    beta: f64,
    diag: Vec<f64>,
    off: Vec<f64>,
    off_sq: Vec<f64>,
}

impl TridiagonalModel {
    pub fn sample<R: rand::Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if n == 0 || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("n = {n}, beta = {beta}")));
        }
        let sd = beta.recip().sqrt();
        let diag: Vec<f64> = (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        }).collect();
        let scale = (2.0 * beta).sqrt().recip();
        let off: Vec<f64> = (1..n)
            .map(|k| {
                // χ_d = √(Gamma(d/2, 2))
                let d = beta * (n - k) as f64;
                let g = Gamma::new(0.5 * d, 2.0).expect("positive shape");
                scale * g.sample(rng).sqrt()
            })
            .collect();
        Ok(Self::from_entries(beta, diag, off))
    }

    /// Builds a model from explicit entries (off-diagonals must be positive).
    pub fn from_entries(beta: f64, diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len());
        let off_sq = off.iter().map(|e| e * e).collect();
        TridiagonalModel { beta, diag, off, off_sq }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    /// Number of eigenvalues strictly below x.
    pub fn sturm_count(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        let tiny = f64::MIN_POSITIVE.sqrt();
        for i in 0..self.diag.len() {
            if i > 0 {
                q = self.diag[i] - x - self.off_sq[i - 1] / q;
            }
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    pub fn tolerance(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        EIG_REL_TOL * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
    }

    /// Counts below each of `xs` in one sweep over the matrix; the shifts are
    /// independent, so the inner loop vectorizes.
    pub fn sturm_counts(&self, xs: &[f64]) -> Vec<usize> {
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut q: Vec<f64> = xs.iter().map(|&x| self.diag[0] - x).collect();
        let mut c: Vec<u32> = vec![0; xs.len()];
        for j in 0..xs.len() {
            if q[j] == 0.0 {
                q[j] = -tiny;
            }
            c[j] = (q[j] < 0.0) as u32;
        }
        for i in 1..self.diag.len() {
            let (d, e2) = (self.diag[i], self.off_sq[i - 1]);
            for ((qj, cj), &x) in q.iter_mut().zip(c.iter_mut()).zip(xs) {
                let v = d - x - e2 / *qj;
                let v = if v == 0.0 { -tiny } else { v };
                *cj += (v < 0.0) as u32;
                *qj = v;
            }
        }
        c.into_iter().map(|v| v as usize).collect()
    }

    /// Eigenvalues with indices `ks` (0-based, ascending), all known to lie in
    /// [a, b], bisected in lockstep.
    pub fn eigenvalues_by_index(&self, ks: std::ops::Range<usize>, a: f64, b: f64) -> Vec<f64> {
        let tol = self.tolerance();
        let m = ks.len();
        let mut lo = vec![a; m];
        let mut hi = vec![b; m];
        let mut mid = vec![0.0; m];
        loop {
            let mut active = false;
            for j in 0..m {
                mid[j] = 0.5 * (lo[j] + hi[j]);
                active |= hi[j] - lo[j] > tol && mid[j] > lo[j] && mid[j] < hi[j];
            }
            if !active {
                break;
            }
            let counts = self.sturm_counts(&mid);
            for (j, k) in ks.clone().enumerate() {
                if hi[j] - lo[j] <= tol {
                    continue;
                }
                if counts[j] > k {
                    hi[j] = mid[j];
                } else {
                    lo[j] = mid[j];
                }
            }
        }
        mid
    }

    /// k-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (lo, hi) = self.gershgorin();
        let tol = self.tolerance();
        self.eigenvalues_by_index(k..k + 1, lo - tol, hi + tol)[0]
    }

    /// Smallest and largest eigenvalue.
    pub fn extremes(&self) -> (f64, f64) {
        let n = self.n();
        if n == 1 {
            return (self.diag[0], self.diag[0]);
        }
        let (lo, hi) = self.gershgorin();
        let tol = self.tolerance();
        let mut both = self.eigenvalues_by_index(0..2, lo - tol, hi + tol);
        // index n−1 needs its own bracket when n > 2
        if n > 2 {
            both[1] = self.eigenvalues_by_index(n - 1..n, lo - tol, hi + tol)[0];
        }
        (both[0], both[1])
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let (lo, hi) = self.gershgorin();
        let tol = self.tolerance();
        self.eigenvalues_by_index(0..self.n(), lo - tol, hi + tol)
    }

    /// Eigenvalues in [a, b), ascending, each to within the bisection tolerance.
    pub fn eigenvalues_in(&self, a: f64, b: f64) -> Vec<f64> {
        if !(b > a) {
            return Vec::new();
        }
        let c = self.sturm_counts(&[a, b]);
        self.eigenvalues_by_index(c[0]..c[1], a, b)
    }
}

/// All n eigenvalues of one tridiagonal sample (replica 0 of `seed`).
pub fn sample_tridiagonal_eigs(n: usize, beta: f64, seed: u64) -> Result<Vec<f64>> {
    Ok(TridiagonalModel::sample(n, beta, &mut replica_rng(seed, 0))?.eigenvalues())
}

/// A unit-intensity bulk window of one tridiagonal sample.
#[derive(Debug, Clone)]
pub struct BulkSample {
    pub config: PointConfiguration,
    pub n_source: usize,
    pub beta: f64,
    pub seed: u64,
    pub replica: u64,
    pub window_fraction: f64,
    /// eigenvalue density at 0 used for the rescaling
    pub density: f64,
}

fn bulk_half_width(min: f64, max: f64, density: f64, window_fraction: f64) -> Result<f64> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::Invalid(format!("window fraction {window_fraction} not in (0, 1)")));
    }
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::Invalid(format!("density {density}")));
    }
    Ok(window_fraction * 0.5 * (max - min) * density)
}

/// Multiplies by `density` and keeps the central `window_fraction` of the
/// rescaled spectrum, as a configuration on a window centered at 0.
pub fn rescale_bulk(eigs: &[f64], density: f64, window_fraction: f64) -> Result<PointConfiguration> {
    let (min, max) = eigs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if eigs.is_empty() {
        return Err(Error::InsufficientBulk("no eigenvalues".into()));
    }
    let h = bulk_half_width(min, max, density, window_fraction)?;
    let pts: Vec<f64> = eigs.iter().map(|x| x * density).filter(|x| x.abs() <= h).collect();
    if pts.len() < MIN_BULK_POINTS {
        return Err(Error::InsufficientBulk(format!("{} points in the window [-{h}, {h}]", pts.len())));
    }
    PointConfiguration::new(pts, (-h, h))
}

/// One bulk sample; only the extreme and the windowed eigenvalues are computed.
pub fn sample_bulk(
    n: usize,
    beta: f64,
    seed: u64,
    replica: u64,
    window_fraction: f64,
    density: f64,
) -> Result<BulkSample> {
    let model = TridiagonalModel::sample(n, beta, &mut replica_rng(seed, replica))?;
    let (min, max) = model.extremes();
    let h = bulk_half_width(min, max, density, window_fraction)?;
    let r = h / density;
    // closed interval [−r, r]
    let pts: Vec<f64> = model.eigenvalues_in(-r, r.next_up()).iter().map(|x| x * density).filter(|x| x.abs() <= h).collect();
    if pts.len() < MIN_BULK_POINTS {
        return Err(Error::InsufficientBulk(format!("{} points in the window [-{h}, {h}]", pts.len())));
    }
    Ok(BulkSample {
        config: PointConfiguration::new(pts, (-h, h))?,
        n_source: n,
        beta,
        seed,
        replica,
        window_fraction,
        density,
    })
}

/// Draws (x₁, x₂) from the two-point density ∝ |x₁−x₂|^β e^{−β(x₁²+x₂²)/2}
/// by rejection from independent N(0, 2/β) proposals.
pub fn two_point_rejection<R: rand::Rng + ?Sized>(beta: f64, rng: &mut R) -> (f64, f64) {
    // target/proposal = |s|^β e^{−β(x₁²+x₂²)/4} ≤ |s|^β e^{−βs²/8} ≤ 2^β e^{−β/2}
    let sd = (2.0 / beta).sqrt();
    let log_bound = beta * (2f64.ln() - 0.5);
    loop {
        let x1: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let x2: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let log_r = beta * (x1 - x2).abs().ln() - 0.25 * beta * (x1 * x1 + x2 * x2);
        let u: f64 = rng.random();
        if u.ln() < log_r - log_bound {
            return (x1, x2);
        }
    }
}

/// Spacings |λ₂ − λ₁| from the tridiagonal model (n = 2) and from rejection
/// sampling, `count` of each.
pub fn two_point_spacings(beta: f64, count: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tri = Vec::with_capacity(count);
    for r in 0..count as u64 {
        let ev = TridiagonalModel::sample(2, beta, &mut replica_rng(seed, r))?.eigenvalues();
        tri.push(ev[1] - ev[0]);
    }
    let mut rng = replica_rng(seed, u64::MAX);
    let rej = (0..count)
        .map(|_| {
            let (a, b) = two_point_rejection(beta, &mut rng);
            (a - b).abs()
        })
        .collect();
    Ok((tri, rej))
}

/// Eigenvalue density at 0 measured from replicas, with the semicircle value
/// √(2n)/π for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityCalibration {
    pub n: usize,
    pub beta: f64,
    pub replicas: usize,
    /// half-width of the counting window as a fraction of the spectral half-extent
    pub fraction: f64,
    pub density: f64,
    pub std_error: f64,
    pub semicircle: f64,
}

/// Counts eigenvalues in [−r, r], r = fraction·(max−min)/2, over replicas
/// drawn from a dedicated seed.
pub fn calibrate_density(n: usize, beta: f64, replicas: usize, fraction: f64, seed: u64) -> Result<DensityCalibration> {
    if replicas < 2 {
        return Err(Error::Invalid("calibration needs at least two replicas".into()));
    }
    let mut d = Vec::with_capacity(replicas);
    for rep in 0..replicas as u64 {
        let model = TridiagonalModel::sample(n, beta, &mut replica_rng(seed, rep))?;
        let (min, max) = model.extremes();
        let r = fraction * 0.5 * (max - min);
        let c = model.sturm_count(r.next_up()) - model.sturm_count(-r);
        d.push(c as f64 / (2.0 * r));
    }
    Ok(DensityCalibration {
        n,
        beta,
        replicas,
        fraction,
        density: crate::stats::mean(&d),
        std_error: crate::stats::std_error(&d),
        semicircle: (2.0 * n as f64).sqrt() / std::f64::consts::PI,
    })
}
