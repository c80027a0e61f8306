//! Point configurations, fluctuations of linear statistics, discrepancies and
//! the a-priori fluctuation bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::testfn::{self, Smooth};

/// Finite sorted configuration observed in a window [w_lo, w_hi].
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration {
    points: Vec<f64>,
    window: (f64, f64),
}

impl PointConfiguration {
    /// Sorts `points`; fails if a point is non-finite or outside the window.
    pub fn new(mut points: Vec<f64>, window: (f64, f64)) -> Result<Self> {
        if !(window.0 <= window.1) {
            return Err(Error::Invalid(format!("empty window {window:?}")));
        }
        if let Some(&p) = points.iter().find(|p| !p.is_finite() || **p < window.0 || **p > window.1) {
            return Err(Error::Invalid(format!("point {p} outside window {window:?}")));
        }
        points.sort_by(f64::total_cmp);
        Ok(PointConfiguration { points, window })
    }

    pub fn empty(window: (f64, f64)) -> Self {
        PointConfiguration { points: Vec::new(), window }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points in the half-open interval [a, b).
    pub fn count(&self, a: f64, b: f64) -> usize {
        if b <= a {
            return 0;
        }
        let i = self.points.partition_point(|&p| p < a);
        let j = self.points.partition_point(|&p| p < b);
        j - i
    }

    /// Points in [a, b], with window [a, b] ∩ window.
    pub fn restrict(&self, a: f64, b: f64) -> PointConfiguration {
        let i = self.points.partition_point(|&p| p < a);
        let j = self.points.partition_point(|&p| p <= b);
        PointConfiguration {
            points: self.points[i..j].to_vec(),
            window: (a.max(self.window.0), b.min(self.window.1)),
        }
    }

    /// Points outside the open interval (a, b); the window is unchanged.
    pub fn exclude(&self, a: f64, b: f64) -> PointConfiguration {
        PointConfiguration {
            points: self.points.iter().copied().filter(|&p| p <= a || p >= b).collect(),
            window: self.window,
        }
    }

    /// Image under a map (re-sorted); the window is mapped endpoint-wise.
    pub fn push_forward<F: Fn(f64) -> f64>(&self, f: F) -> Result<PointConfiguration> {
        let (a, b) = (f(self.window.0), f(self.window.1));
        PointConfiguration::new(self.points.iter().map(|&p| f(p)).collect(), (a.min(b), a.max(b)))
    }

    pub fn translate(&self, h: f64) -> PointConfiguration {
        PointConfiguration {
            points: self.points.iter().map(|p| p + h).collect(),
            window: (self.window.0 + h, self.window.1 + h),
        }
    }

    fn check_inside(&self, a: f64, b: f64) -> Result<()> {
        let (lo, hi) = (a.min(b), a.max(b));
        if lo < self.window.0 || hi > self.window.1 {
            return Err(Error::OutOfWindow { a: lo, b: hi, w_lo: self.window.0, w_hi: self.window.1 });
        }
        Ok(())
    }
}

/// Fluct[φ](C) = Σ_{p∈C} φ(p) − ∫φ.
pub fn fluct(phi: &dyn Smooth, config: &PointConfiguration) -> Result<f64> {
    let integral = testfn::integral(phi)?;
    fluct_with_integral(phi, integral, config)
}

/// As [`fluct`] with a precomputed ∫φ (for repeated evaluation).
pub fn fluct_with_integral(phi: &dyn Smooth, integral: f64, config: &PointConfiguration) -> Result<f64> {
    let r = phi.support_radius();
    let (w_lo, w_hi) = config.window();
    if -r < w_lo || r > w_hi {
        return Err(Error::SupportExceedsWindow { lo: -r, hi: r, w_lo, w_hi });
    }
    let s: f64 = config.restrict(-r, r).points().iter().map(|&p| phi.eval(p)).sum();
    Ok(s - integral)
}

/// Discr_{[a,b]} = |C ∩ [a,b)| − (b − a), with Discr_{[a,b]} = −Discr_{[b,a]} for a > b.
pub fn discrepancy(config: &PointConfiguration, a: f64, b: f64) -> Result<f64> {
    config.check_inside(a, b)?;
    Ok(signed_discr(config, a, b))
}

fn signed_discr(config: &PointConfiguration, a: f64, b: f64) -> f64 {
    if a <= b {
        config.count(a, b) as f64 - (b - a)
    } else {
        -(config.count(b, a) as f64 - (a - b))
    }
}

/// Tabulated D̃_i (anchored at 0) and D̃^{Left}_i, D̃^{Right}_i (anchored at ∓λ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyProfile {
    pub lambda: f64,
    /// integer indices i with [min(0,i), i+1] inside the window
    pub indices: Vec<i64>,
    pub center: Vec<f64>,
    /// integer indices i ∈ [−λ, λ] with [i, i+1] inside the window
    pub lr_indices: Vec<i64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl DiscrepancyProfile {
    pub fn center_at(&self, i: i64) -> Option<f64> {
        let k = self.indices.binary_search(&i).ok()?;
        Some(self.center[k])
    }
    pub fn left_at(&self, i: i64) -> Option<f64> {
        let k = self.lr_indices.binary_search(&i).ok()?;
        Some(self.left[k])
    }
    pub fn right_at(&self, i: i64) -> Option<f64> {
        let k = self.lr_indices.binary_search(&i).ok()?;
        Some(self.right[k])
    }
}

pub fn discrepancy_profile(config: &PointConfiguration, lambda: f64) -> Result<DiscrepancyProfile> {
    config.check_inside(-lambda, lambda)?;
    let (w_lo, w_hi) = config.window();
    let mut indices = Vec::new();
    let mut center = Vec::new();
    if w_lo <= 0.0 && w_hi >= 0.0 {
        let lo = w_lo.ceil() as i64;
        let hi = (w_hi - 1.0).floor() as i64;
        for i in lo..=hi {
            let x = i as f64;
            let d = signed_discr(config, 0.0, x).abs() + signed_discr(config, x, x + 1.0).abs() + 1.0;
            indices.push(i);
            center.push(d);
        }
    }
    let mut lr_indices = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    let lo = (-lambda).ceil() as i64;
    let hi = lambda.floor() as i64;
    for i in lo..=hi {
        let x = i as f64;
        if x + 1.0 > w_hi {
            break;
        }
        let cell = signed_discr(config, x, x + 1.0).abs() + 1.0;
        lr_indices.push(i);
        left.push(signed_discr(config, -lambda, x).abs() + cell);
        right.push(signed_discr(config, x, lambda).abs() + cell);
    }
    Ok(DiscrepancyProfile { lambda, indices, center, lr_indices, left, right })
}

/// Anchor of the cumulative discrepancy in the a-priori bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Center,
    Left,
    Right,
}

/// Exact terms of the summation-by-parts decomposition of ∫g(dC − dx).
#[derive(Debug, Clone)]
pub struct AprioriDecomposition {
    /// Σ_k (a_{k−1} − a_k)·S_k with S_k the anchored cumulative discrepancy
    pub by_parts: f64,
    /// Σ_k Σ_{p∈[k,k+1)} (g(p) − a_k)
    pub remainder: f64,
    /// Σ_k |g|_{1,V_k}·D̃_k
    pub bound: f64,
}

/// Right-hand side of the a-priori bound: Σ_k |g|_{1,V_k}·D̃_k (or the
/// Left/Right variant), valid with constant 1:
///
/// with cell averages a_k = ∫_k^{k+1} g, one has
/// ∫g(dC−dx) = Σ_k (a_{k−1}−a_k)·S_k + Σ_k Σ_{p∈[k,k+1)} (g(p)−a_k),
/// where |a_{k−1}−a_k| ≤ |g|_{1,V_k} and |g(p)−a_k| ≤ |g|_{1,V_k}.
pub fn apriori_bound_rhs(g: &dyn Smooth, config: &PointConfiguration, flavor: Flavor, lambda: f64) -> Result<f64> {
    Ok(apriori_decomposition(g, config, flavor, lambda)?.bound)
}

pub fn apriori_decomposition(
    g: &dyn Smooth,
    config: &PointConfiguration,
    flavor: Flavor,
    lambda: f64,
) -> Result<AprioriDecomposition> {
    let r = g.support_radius();
    // indices whose neighbourhood V_k = [k−3, k+3] meets the support
    let k_lo = (-r - 3.0).floor() as i64 + 1;
    let k_hi = (r + 3.0).ceil() as i64 - 1;
    let (w_lo, w_hi) = config.window();
    if (k_lo as f64) < w_lo || (k_hi + 1) as f64 > w_hi {
        return Err(Error::SupportExceedsWindow { lo: k_lo as f64, hi: (k_hi + 1) as f64, w_lo, w_hi });
    }
    let anchor = match flavor {
        Flavor::Center => 0.0,
        Flavor::Left => -lambda,
        Flavor::Right => lambda,
    };
    if flavor != Flavor::Center && ((k_lo as f64) < -lambda || (k_hi as f64) > lambda) {
        return Err(Error::OutOfWindow { a: k_lo as f64, b: k_hi as f64, w_lo: -lambda, w_hi: lambda });
    }
    let cell = |k: i64| -> Result<f64> {
        let a = k as f64;
        quad::adaptive(|x| g.eval(x), a, a + 1.0, 1e-15, 1e-13, 1_000_000)
    };
    let mut by_parts = 0.0;
    let mut remainder = 0.0;
    let mut bound = 0.0;
    let mut a_prev = cell(k_lo - 1)?;
    for k in k_lo..=k_hi {
        let x = k as f64;
        let a_k = cell(k)?;
        // S_k = Discr_{[anchor, k]}, sign chosen so that Discr(I_k) = S_{k+1} − S_k
        let s_k = signed_discr(config, anchor, x);
        by_parts += (a_prev - a_k) * s_k;
        let cell_pts = config.restrict(x, x + 1.0);
        remainder += cell_pts.points().iter().filter(|&&p| p < x + 1.0).map(|&p| g.eval(p) - a_k).sum::<f64>();
        let dk = s_k.abs() + signed_discr(config, x, x + 1.0).abs() + 1.0;
        bound += testfn::local_seminorm(g, 1, x) * dk;
        a_prev = a_k;
    }
    Ok(AprioriDecomposition { by_parts, remainder, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::make_bump;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_integer_grid(n: i64) -> PointConfiguration {
        PointConfiguration::new((-n..n).map(|i| i as f64 + 0.5).collect(), (-n as f64, n as f64)).unwrap()
    }

    #[test]
    fn fluct_examples() {
        let b = make_bump();
        let int = testfn::integral(&b).unwrap();
        assert!((int - 0.443_993_816_168_078_65).abs() < 1e-12);
        let empty = PointConfiguration::empty((-2.0, 2.0));
        assert!((fluct(&b, &empty).unwrap() + int).abs() < 1e-12);
        let one = PointConfiguration::new(vec![0.0], (-2.0, 2.0)).unwrap();
        assert!((fluct(&b, &one).unwrap() - ((-1f64).exp() - int)).abs() < 1e-12);
        let narrow = PointConfiguration::empty((-0.5, 0.5));
        assert!(matches!(fluct(&b, &narrow), Err(Error::SupportExceedsWindow { .. })));
    }

    #[test]
    fn fluct_on_large_grid_matches_direct_sum() {
        let phi = make_bump().rescale(50.0);
        let pts: Vec<f64> = (0..10_000).map(|i| -5000.0 + i as f64 + 0.25).collect();
        let c = PointConfiguration::new(pts.clone(), (-5000.0, 5000.0)).unwrap();
        let direct: f64 = pts.iter().map(|&p| phi.eval(p)).sum::<f64>() - testfn::integral(&phi).unwrap();
        assert!((fluct(&phi, &c).unwrap() - direct).abs() <= 1e-9);
    }

    #[test]
    fn discrepancy_examples() {
        let c = PointConfiguration::new(vec![0.5], (-5.0, 5.0)).unwrap();
        assert_eq!(discrepancy(&c, 0.0, 1.0).unwrap(), 0.0);
        let e = PointConfiguration::empty((-5.0, 5.0));
        assert_eq!(discrepancy(&e, 0.0, 3.0).unwrap(), -3.0);
        let c = PointConfiguration::new(vec![0.1, 0.2, 0.9], (-5.0, 5.0)).unwrap();
        assert_eq!(discrepancy(&c, 1.0, 0.0).unwrap(), -2.0);
        assert!(matches!(discrepancy(&c, 0.0, 6.0), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn profile_examples() {
        let g = half_integer_grid(20);
        let p = discrepancy_profile(&g, 10.0).unwrap();
        assert!(p.center.iter().chain(&p.left).chain(&p.right).all(|&d| d == 1.0));
        let e = PointConfiguration::empty((-20.0, 20.0));
        let p = discrepancy_profile(&e, 10.0).unwrap();
        assert_eq!(p.center_at(5), Some(7.0));
        assert_eq!(p.left_at(5), Some(15.0 + 1.0 + 1.0));
        assert_eq!(p.right_at(5), Some(5.0 + 1.0 + 1.0));
    }

    #[test]
    fn profile_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<f64> = (0..200).map(|_| rng.random_range(-50.0..50.0)).collect();
        let c = PointConfiguration::new(pts, (-50.0, 50.0)).unwrap();
        let p = discrepancy_profile(&c, 40.0).unwrap();
        for (k, &i) in p.indices.iter().enumerate() {
            let x = i as f64;
            let want = discrepancy(&c, 0.0, x).unwrap().abs() + discrepancy(&c, x, x + 1.0).unwrap().abs() + 1.0;
            assert_eq!(p.center[k], want);
        }
        for (k, &i) in p.lr_indices.iter().enumerate() {
            let x = i as f64;
            let cell = discrepancy(&c, x, x + 1.0).unwrap().abs() + 1.0;
            assert_eq!(p.left[k], discrepancy(&c, -40.0, x).unwrap().abs() + cell);
            assert_eq!(p.right[k], discrepancy(&c, x, 40.0).unwrap().abs() + cell);
        }
    }

    #[test]
    fn apriori_examples() {
        let z = make_bump().scaled(0.0).rescale(5.0);
        let g = half_integer_grid(30);
        assert_eq!(apriori_bound_rhs(&z, &g, Flavor::Center, 20.0).unwrap(), 0.0);
        let b = make_bump();
        let rhs = apriori_bound_rhs(&b, &g, Flavor::Center, 20.0).unwrap();
        let sum: f64 = (-3..=3).map(|k| testfn::local_seminorm(&b, 1, k as f64)).sum();
        assert!((rhs - sum).abs() < 1e-15);
    }

    #[test]
    fn apriori_decomposition_is_exact_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = make_bump().rescale(5.0);
        for _ in 0..50 {
            let n = rng.random_range(0..80);
            let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let c = PointConfiguration::new(pts, (-20.0, 20.0)).unwrap();
            let f = fluct(&phi, &c).unwrap();
            for flavor in [Flavor::Center, Flavor::Left, Flavor::Right] {
                let d = apriori_decomposition(&phi, &c, flavor, 15.0).unwrap();
                assert!((d.by_parts + d.remainder - f).abs() < 1e-10, "{flavor:?}");
                assert!(f.abs() <= d.bound);
            }
        }
    }

    proptest! {
        #[test]
        fn discrepancy_additivity(
            pts in proptest::collection::vec(-10.0f64..10.0, 0..40),
            a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0,
        ) {
            let cfg = PointConfiguration::new(pts, (-10.0, 10.0)).unwrap();
            let lhs = discrepancy(&cfg, a, c).unwrap();
            let rhs = discrepancy(&cfg, a, b).unwrap() + discrepancy(&cfg, b, c).unwrap();
            // lengths cancel exactly up to rounding of (c−a) vs (b−a)+(c−b)
            prop_assert!((lhs - rhs).abs() <= 1e-13);
        }

        #[test]
        fn fluct_linear_and_translation_covariant(
            pts in proptest::collection::vec(-30.0f64..30.0, 0..40),
            c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, h in -5.0f64..5.0,
        ) {
            let cfg = PointConfiguration::new(pts, (-30.0, 30.0)).unwrap();
            let b = make_bump();
            let f1 = b.scaled(c1).rescale(4.0);
            let f2 = b.scaled(c2).rescale(4.0);
            let sum = b.scaled(c1 + c2).rescale(4.0);
            let lhs = fluct(&sum, &cfg).unwrap();
            let rhs = fluct(&f1, &cfg).unwrap() + fluct(&f2, &cfg).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
            // shifting config and φ together
            let shifted = ShiftedFn { f: &f1, h };
            let a = fluct(&f1, &cfg).unwrap();
            let moved = cfg.translate(h);
            let int = testfn::integral(&f1).unwrap();
            let s: f64 = moved.points().iter().map(|&p| shifted.eval(p)).sum();
            prop_assert!((a - (s - int)).abs() <= 1e-10);
        }

        #[test]
        fn fluct_additive_over_disjoint_supports(pts in proptest::collection::vec(-30.0f64..30.0, 0..60)) {
            let cfg = PointConfiguration::new(pts, (-30.0, 30.0)).unwrap();
            let f = make_bump().rescale(4.0);
            let left = ShiftedFn { f: &f, h: -10.0 };
            let right = ShiftedFn { f: &f, h: 10.0 };
            let fl = fluct_shifted(&left, &cfg);
            let fr = fluct_shifted(&right, &cfg);
            let both: f64 = cfg.points().iter().map(|&p| left.eval(p) + right.eval(p)).sum::<f64>()
                - 2.0 * testfn::integral(&f).unwrap();
            prop_assert!((fl + fr - both).abs() <= 1e-10);
        }
    }

    struct ShiftedFn<'a> {
        f: &'a dyn Smooth,
        h: f64,
    }

    impl ShiftedFn<'_> {
        fn eval(&self, x: f64) -> f64 {
            self.f.eval(x - self.h)
        }
    }

    fn fluct_shifted(s: &ShiftedFn, cfg: &PointConfiguration) -> f64 {
        cfg.points().iter().map(|&p| s.eval(p)).sum::<f64>() - testfn::integral(s.f).unwrap()
    }
}
