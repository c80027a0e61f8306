//! Small statistics toolkit: moments, Kolmogorov–Smirnov tests, bootstrap
//! and jackknife errors, exact Spearman permutation tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Asymptotic Kolmogorov survival function Q(t) = 2Σ(−1)^{k−1} e^{−2k²t²}.
pub fn kolmogorov_q(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        // the alternating series converges slowly here; Q is 1 to double precision
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// p-value with Stephens' finite-n correction.
fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS test against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    KsResult { statistic: d, p_value: ks_pvalue(d, nf), n }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult { statistic: d, p_value: ks_pvalue(d, na * nb / (na + nb)), n: a.len().min(b.len()) }
}

/// Estimate with a two-sided confidence interval and a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
}

impl Estimate {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let h = (x.len() - 1) as f64 * q;
    let i = h.floor() as usize;
    let j = (i + 1).min(x.len() - 1);
    x[i] + (h - i as f64) * (x[j] - x[i])
}

/// Percentile bootstrap of `stat` with `resamples` resamples at confidence `level`.
pub fn bootstrap<S: Fn(&[f64]) -> f64>(data: &[f64], stat: S, resamples: usize, level: f64, seed: u64) -> Estimate {
    bootstrap_many(data, |x| vec![stat(x)], resamples, level, seed)[0]
}

/// Bootstrap of a vector-valued statistic; every component shares the resamples.
pub fn bootstrap_many<S: Fn(&[f64]) -> Vec<f64>>(
    data: &[f64],
    stat: S,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Vec<Estimate> {
    let value = stat(data);
    let k = value.len();
    let n = data.len();
    if n == 0 || resamples < 2 {
        return value.iter().map(|&v| Estimate { value: v, lo: v, hi: v, se: 0.0 }).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = vec![Vec::with_capacity(resamples); k];
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = data[rng.random_range(0..n)];
        }
        for (r, v) in reps.iter_mut().zip(stat(&buf)) {
            r.push(v);
        }
    }
    let a = 0.5 * (1.0 - level);
    value
        .iter()
        .zip(reps.iter_mut())
        .map(|(&v, r)| {
            let se = variance(r).sqrt();
            r.sort_by(f64::total_cmp);
            Estimate { value: v, lo: quantile_sorted(r, a), hi: quantile_sorted(r, 1.0 - a), se }
        })
        .collect()
}

/// Jackknife estimate and standard error of `stat`.
pub fn jackknife<S: Fn(&[f64]) -> f64>(data: &[f64], stat: S) -> (f64, f64) {
    let n = data.len();
    let full = stat(data);
    if n < 2 {
        return (full, f64::NAN);
    }
    let mut buf = Vec::with_capacity(n - 1);
    let mut loo = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&data[..i]);
        buf.extend_from_slice(&data[i + 1..]);
        loo.push(stat(&buf));
    }
    let m = mean(&loo);
    let nf = n as f64;
    let var = (nf - 1.0) / nf * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (full, var.sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// P(ρ ≤ observed) under exchangeability, by full enumeration
    pub p_lower: f64,
}

/// Exact one-sided (negative trend) permutation test; n ≤ 10.
pub fn spearman_test_lower(x: &[f64], y: &[f64]) -> SpearmanTest {
    assert!(x.len() == y.len() && x.len() <= 10, "exact permutation test needs n ≤ 10");
    let rho = spearman(x, y);
    let ry = ranks(y);
    let rx = ranks(x);
    let mut perm: Vec<usize> = (0..x.len()).collect();
    let mut total = 0usize;
    let mut below = 0usize;
    let mut permuted = vec![0.0; x.len()];
    loop {
        for (k, &p) in perm.iter().enumerate() {
            permuted[k] = ry[p];
        }
        total += 1;
        if pearson(&rx, &permuted) <= rho + 1e-12 {
            below += 1;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    SpearmanTest { rho, p_lower: below as f64 / total as f64 }
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
