//! Quadrature building blocks: Gauss–Legendre panels, adaptive Gauss–Kronrod,
//! singularity-aware panel refinement and piecewise Chebyshev interpolation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on [−1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre(n, x);
                    dp = d;
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫_a^b f.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, w * h))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const MAX_CACHED: usize = 64;
static GL_CACHE: [OnceLock<GaussLegendre>; MAX_CACHED + 1] = [const { OnceLock::new() }; MAX_CACHED + 1];

/// Shared Gauss–Legendre rule with `n` nodes (cached for n ≤ 64).
pub fn gl(n: usize) -> &'static GaussLegendre {
    assert!((1..=MAX_CACHED).contains(&n), "gl: n = {n} not cached");
    GL_CACHE[n].get_or_init(|| GaussLegendre::new(n))
}

/// Composite Gauss–Legendre over consecutive panels given by `breaks`.
pub fn integrate_breaks<F: FnMut(f64) -> f64>(breaks: &[f64], rule: &GaussLegendre, mut f: F) -> f64 {
    breaks
        .windows(2)
        .map(|w| rule.integrate(w[0], w[1], &mut f))
        .sum()
}

// Kronrod 15 / Gauss 7 (abscissae on [0,1], symmetric).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut rabs = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        let s = f1 + f2;
        rk += WGK[j] * s;
        rabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    let err = ((rk - rg) * h).abs();
    // below the rounding floor the estimate is noise; refining cannot help
    let floor = 50.0 * f64::EPSILON * rabs * h.abs();
    (rk * h, if err <= floor { 0.0 } else { err })
}

struct Seg {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Seg {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Seg {}
impl PartialOrd for Seg {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Seg {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of `f` over [a, b].
///
/// Converges when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`;
/// fails with `NonFinite` after `max_evals` integrand evaluations.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_evals: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Seg { a, b, val: v, err: e });
    let mut total = v;
    let mut total_err = e;
    let mut evals = 15;
    loop {
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("non-finite integral on [{a}, {b}]")));
        }
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            // re-sum to limit cancellation drift
            return Ok(heap.iter().map(|s| s.val).sum());
        }
        if evals % 960 == 0 || total_err <= 4.0 * abs_tol.max(rel_tol * total.abs()) {
            // running sum drifts under cancellation; recompute exactly
            total_err = heap.iter().map(|s| s.err).sum();
            if total_err <= abs_tol.max(rel_tol * total.abs()) {
                continue;
            }
        }
        if evals + 30 > max_evals {
            return Err(Error::NonFinite(format!(
                "adaptive quadrature on [{a}, {b}] exceeded {max_evals} evaluations (error estimate {total_err:.3e})"
            )));
        }
        let s = heap.pop().expect("non-empty heap");
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            // interval cannot be split further; accept as is
            heap.push(Seg { err: 0.0, ..s });
            total_err = heap.iter().map(|s| s.err).sum();
            continue;
        }
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        evals += 30;
        total += v1 + v2 - s.val;
        total_err += e1 + e2 - s.err;
        heap.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        heap.push(Seg { a: m, b: s.b, val: v2, err: e2 });
    }
}

/// Adaptive quadrature over consecutive panels (breakpoints are kept).
pub fn adaptive_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_evals: usize,
) -> Result<f64> {
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    let mut s = 0.0;
    for w in breaks.windows(2) {
        s += adaptive(&mut f, w[0], w[1], abs_tol / n, rel_tol, max_evals)?;
    }
    Ok(s)
}

/// Splits [a, b] into panels on which every point of `sing` is at normalized
/// distance ≥ 2 from the panel center (or the panel is shorter than `min_len`).
/// Points inside the interval become breakpoints.
pub fn refine_panels(a: f64, b: f64, sing: &[f64], min_len: f64, out: &mut Vec<(f64, f64)>) {
    let len = b - a;
    if len <= min_len {
        out.push((a, b));
        return;
    }
    for &c in sing {
        if c > a && c < b {
            refine_panels(a, c, sing, min_len, out);
            refine_panels(c, b, sing, min_len, out);
            return;
        }
    }
    // nearest singular point
    let mut best: Option<(f64, bool)> = None; // (distance, on the left)
    for &c in sing {
        let (d, left) = if c <= a { (a - c, true) } else { (c - b, false) };
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, left));
        }
    }
    let Some((d, left)) = best else {
        out.push((a, b));
        return;
    };
    if d >= 0.5 * len {
        out.push((a, b));
        return;
    }
    let step = if d > 0.0 { d } else { 0.25 * len };
    let m = if left { a + step } else { b - step };
    refine_panels(a, m, sing, min_len, out);
    refine_panels(m, b, sing, min_len, out);
}

/// Whether a panel needs refinement with respect to the singular points.
#[inline]
pub fn panel_is_clean(a: f64, b: f64, sing: &[f64]) -> bool {
    let len = b - a;
    sing.iter().all(|&c| {
        let d = if c <= a {
            a - c
        } else if c >= b {
            c - b
        } else {
            -1.0
        };
        d >= 0.5 * len
    })
}

/// Composite rule over `breaks` with graded refinement around the points in
/// `sing` (integrable log-type singularities or nearby poles of the integrand).
pub fn integrate_singular<F: FnMut(f64) -> f64>(
    breaks: &[f64],
    sing: &[f64],
    rule: &GaussLegendre,
    mut f: F,
) -> f64 {
    let scale = (breaks[breaks.len() - 1] - breaks[0]).abs();
    let mut s = 0.0;
    let mut panels = Vec::new();
    for w in breaks.windows(2) {
        if panel_is_clean(w[0], w[1], sing) {
            s += rule.integrate(w[0], w[1], &mut f);
        } else {
            panels.clear();
            refine_panels(w[0], w[1], sing, 1e-11 * scale, &mut panels);
            for &(a, b) in &panels {
                s += rule.integrate(a, b, &mut f);
            }
        }
    }
    s
}

/// Fixed panel rule with precomputed nodes: lets callers reuse cached
/// integrand values on the clean panels while refining the others.
#[derive(Debug, Clone)]
pub struct PanelRule {
    pub breaks: Vec<f64>,
    pub rule: GaussLegendre,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(breaks: Vec<f64>, n: usize) -> Self {
        let rule = GaussLegendre::new(n);
        let mut nodes = Vec::with_capacity(n * breaks.len());
        let mut weights = Vec::with_capacity(n * breaks.len());
        for w in breaks.windows(2) {
            for (x, wt) in rule.mapped(w[0], w[1]) {
                nodes.push(x);
                weights.push(wt);
            }
        }
        PanelRule { breaks, rule, nodes, weights }
    }

    pub fn n_per_panel(&self) -> usize {
        self.rule.len()
    }

    /// Σ wᵢ vᵢ for values tabulated at `self.nodes`.
    pub fn sum(&self, vals: &[f64]) -> f64 {
        self.weights.iter().zip(vals).map(|(w, v)| w * v).sum()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }

    /// Integral using cached node values on clean panels and graded
    /// refinement (fresh evaluations of `f`) on the panels near `sing`.
    pub fn integrate_cached<F: FnMut(f64) -> f64>(&self, cached: &[f64], sing: &[f64], mut f: F) -> f64 {
        let n = self.rule.len();
        let scale = (self.breaks[self.breaks.len() - 1] - self.breaks[0]).abs();
        let mut s = 0.0;
        let mut panels = Vec::new();
        for (i, w) in self.breaks.windows(2).enumerate() {
            if panel_is_clean(w[0], w[1], sing) {
                let k = i * n;
                for (w, c) in self.weights[k..k + n].iter().zip(&cached[k..k + n]) {
                    s += w * c;
                }
            } else {
                panels.clear();
                refine_panels(w[0], w[1], sing, 1e-11 * scale, &mut panels);
                for &(a, b) in &panels {
                    s += self.rule.integrate(a, b, &mut f);
                }
            }
        }
        s
    }
}

impl PanelRule {
    /// ∫ d(t)·k(t) dt where `d` is tabulated at the nodes (`cached`) and the
    /// kernel `k` is singular near the points of `sing`; refined panels call
    /// `dens` for fresh density values.
    pub fn integrate_product<K, D>(&self, cached: &[f64], sing: &[f64], mut kern: K, mut dens: D) -> f64
    where
        K: FnMut(f64) -> f64,
        D: FnMut(f64) -> f64,
    {
        let n = self.rule.len();
        let scale = (self.breaks[self.breaks.len() - 1] - self.breaks[0]).abs();
        let mut s = 0.0;
        let mut panels = Vec::new();
        for (i, w) in self.breaks.windows(2).enumerate() {
            let k = i * n;
            if panel_is_clean(w[0], w[1], sing) {
                let panel = self.weights[k..k + n].iter().zip(&cached[k..k + n]).zip(&self.nodes[k..k + n]);
                for ((w, &c), &x) in panel {
                    if c != 0.0 {
                        s += w * c * kern(x);
                    }
                }
            } else if cached[k..k + n].iter().any(|&v| v != 0.0) {
                panels.clear();
                refine_panels(w[0], w[1], sing, 1e-11 * scale, &mut panels);
                for &(a, b) in &panels {
                    s += self.rule.integrate(a, b, |t| {
                        let d = dens(t);
                        if d == 0.0 {
                            0.0
                        } else {
                            d * kern(t)
                        }
                    });
                }
            }
        }
        s
    }
}

/// Chebyshev interpolant of degree `coeffs.len() − 1` on [a, b].
#[derive(Debug, Clone)]
pub struct Chebyshev {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Chebyshev {
    /// Interpolates `f` at the Chebyshev points of the first kind.
    pub fn fit<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, degree: usize) -> Self {
        let n = degree + 1;
        let pi = std::f64::consts::PI;
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let t = (pi * (k as f64 + 0.5) / n as f64).cos();
                f(0.5 * (a + b) + 0.5 * (b - a) * t)
            })
            .collect();
        let coeffs = (0..n)
            .map(|j| {
                let s: f64 = vals
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (pi * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                    .sum();
                s * if j == 0 { 1.0 } else { 2.0 } / n as f64
            })
            .collect();
        Chebyshev { a, b, coeffs }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let t2 = 2.0 * t;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = c + t2 * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + t * b1 - b2
    }

    /// Magnitude of the trailing coefficients relative to the leading scale.
    fn tail(&self) -> f64 {
        let n = self.coeffs.len();
        self.coeffs[n - 4..].iter().map(|c| c.abs()).fold(0.0, f64::max)
    }
}

/// Piecewise Chebyshev interpolant, built by bisection until the trailing
/// coefficients fall below `tol`.
#[derive(Debug, Clone)]
pub struct PiecewiseChebyshev {
    pub breaks: Vec<f64>,
    pub pieces: Vec<Chebyshev>,
}

impl PiecewiseChebyshev {
    pub fn build<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, degree: usize, tol: f64, min_width: f64) -> Self {
        let mut pieces = Vec::new();
        let mut stack = vec![(a, b)];
        while let Some((lo, hi)) = stack.pop() {
            let c = Chebyshev::fit(&mut f, lo, hi, degree);
            if c.tail() <= tol || hi - lo <= min_width {
                pieces.push(c);
            } else {
                let m = 0.5 * (lo + hi);
                stack.push((m, hi));
                stack.push((lo, m));
            }
        }
        pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
        let mut breaks: Vec<f64> = pieces.iter().map(|p| p.a).collect();
        breaks.push(b);
        PiecewiseChebyshev { breaks, pieces }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let i = match self.breaks.binary_search_by(|b| b.total_cmp(&x)) {
            Ok(i) => i.min(self.pieces.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.pieces.len() - 1),
        };
        self.pieces[i].eval(x)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.breaks[0] && x <= self.breaks[self.breaks.len() - 1]
    }
}
