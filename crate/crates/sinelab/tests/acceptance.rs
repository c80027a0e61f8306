//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails. Run with `cargo test -p sinelab --test acceptance`.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinelab::gibbs::{self, GibbsSpec, McmcOptions, Proposal};
use sinelab::harness::{run_clt_experiment, CLTReport, ExperimentConfig};
use sinelab::perturb::{self, PerturbationBundle, PotentialKind, Side};
use sinelab::pointproc::{self, Flavor, PointConfiguration};
use sinelab::quad;
use sinelab::sampler;
use sinelab::singular::{weighted_pv_zero_identity, Regime};
use sinelab::stats;
use sinelab::testfn::{self, make_bump, Smooth, TestFunction};
use sinelab::transport::{self, TransportBundle};

// pinned tolerances
const CLT_VARIANCE_REL: f64 = 0.15;
const CLT_MEAN_SE: f64 = 3.0;
const KS_ALPHA: f64 = 0.01;
const MGF_T_MAX: f64 = 0.5;
const AIRFOIL_TOL: f64 = 1e-4;
const TOTAL_MASS_TOL: f64 = 1e-6;
const STRIP_MASS_TOL: f64 = 1e-8;
const JUNCTION_FD_TOL: f64 = 1e-6;
const WEIGHTED_PV_TOL: f64 = 1e-8;
const ENERGY_REL_TOL: f64 = 1e-5;
const DIFFERENCE_FIELD_TOL: f64 = 1e-7;
const ERRVAR_RATIO: (f64, f64) = (2.5, 6.0);
const PUSHFORWARD_TOL: f64 = 1e-8;
const SPEARMAN_ALPHA: f64 = 0.05;
const GIBBS_TV_TOL: f64 = 0.02;
const NORM_ORACLE_TOL: f64 = 1e-8;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bundle(lambda: f64, ell: f64) -> Result<Arc<PerturbationBundle>, String> {
    Ok(Arc::new(PerturbationBundle::new(lambda, make_bump().rescale(ell), Regime::Relaxed).map_err(err)?))
}

fn random_config(lambda: f64, n: usize, seed: u64) -> PointConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-lambda * 0.999..lambda * 0.999)).collect();
    PointConfiguration::new(pts, (-lambda, lambda)).unwrap()
}

/// ‖φ̄‖² = ∫|ν||φ̂(ν)|²dν with φ̂(ν) = ∫φ̄(x)e^{−2πiνx}dx (φ̄ even: cosine transform).
fn fourier_norm_sq(f: &TestFunction) -> f64 {
    let r = f.support_radius();
    let xs: Vec<f64> = (0..=400).map(|i| -r + 2.0 * r * i as f64 / 400.0).collect();
    let xr = quad::gl(20);
    let mut nodes = Vec::new();
    for w in xs.windows(2) {
        for (x, wt) in xr.mapped(w[0], w[1]) {
            nodes.push((x, wt * f.eval(x)));
        }
    }
    let transform = |nu: f64| -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for &(x, w) in &nodes {
            c += w * (2.0 * PI * nu * x).cos();
            s += w * (2.0 * PI * nu * x).sin();
        }
        c * c + s * s
    };
    let nb: Vec<f64> = (0..=600).map(|i| 150.0 * i as f64 / 600.0).collect();
    2.0 * quad::integrate_breaks(&nb, quad::gl(10), |nu| nu * transform(nu))
}

fn clt(beta: f64) -> Result<CLTReport, String> {
    let cfg = ExperimentConfig::new(beta, 10.0, 4096, 2000, 20_240 + beta as u64);
    run_clt_experiment(&cfg).map_err(err)
}

fn c1(reports: &[CLTReport]) -> Outcome {
    let bump = make_bump();
    let q = testfn::h_half_norm_sq(&bump).map_err(err)?;
    let f = fourier_norm_sq(&bump);
    let mut ok = (q - f).abs() <= NORM_ORACLE_TOL;
    let mut detail = format!("norm² {q:.10} (Fourier {f:.10});");
    for r in reports {
        let rel = r.variance_rel_error;
        let pass = rel.abs() <= CLT_VARIANCE_REL && r.mean_ok(CLT_MEAN_SE) && (r.norm_sq - q).abs() <= 1e-12;
        ok &= pass;
        detail += &format!(
            " β={}: var {:.5} vs {:.5} ({:+.1}%), mean {:+.4} ± {:.4}",
            r.config.beta,
            r.variance.value,
            r.target_variance,
            100.0 * rel,
            r.mean.value,
            r.mean.se
        );
        detail += if pass { ";" } else { " [FAIL];" };
    }
    Ok((ok, detail))
}

fn c2(r: &CLTReport) -> Outcome {
    Ok((r.ks.passes(KS_ALPHA), format!("β=2 KS D = {:.4}, p = {:.3} (n = {})", r.ks.statistic, r.ks.p_value, r.ks.n)))
}

fn c3(r: &CLTReport) -> Outcome {
    let pts: Vec<_> = r.mgf.iter().filter(|p| p.t.abs() <= MGF_T_MAX + 1e-12).collect();
    let ok = !pts.is_empty() && pts.iter().all(|p| p.target_in_band());
    let detail = pts
        .iter()
        .map(|p| format!("t={:+.2}: {:.5} in [{:.5}, {:.5}] vs {:.5}", p.t, p.log_mgf.value, p.log_mgf.lo, p.log_mgf.hi, p.target))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, detail))
}

fn c4(b: &PerturbationBundle) -> Outcome {
    let phi = make_bump().rescale(20.0);
    let h = 1e-2;
    let mut worst: f64 = 0.0;
    for i in 0..=120 {
        let x = -360.0 + 720.0 * i as f64 / 120.0;
        let lp = |y: f64| perturb::log_potential(b, y, PotentialKind::FullM);
        let fd = (lp(x + h).map_err(err)? - lp(x - h).map_err(err)?) / (2.0 * h);
        worst = worst.max((fd - phi.eval_k(1, x)).abs());
    }
    Ok((worst <= AIRFOIL_TOL, format!("max |LP' − φ'| = {worst:.2e} on 121 points of [−360, 360]")))
}

fn c5(b: &PerturbationBundle) -> Outcome {
    let (l, e) = (400.0, 20.0);
    let total = b.total_mass();
    let dl = (b.mass_tilde(-l, -l + e) - b.patch(Side::Left).strip_mass).abs();
    let dr = (b.mass_tilde(l - e, l) - b.patch(Side::Right).strip_mass).abs();
    let h = 1e-3;
    let mut junction: f64 = 0.0;
    for &x in &b.junctions() {
        for k in 0..3 {
            let (left, right) = if k == 0 {
                (b.m_tilde(x - 1e-9, 0), b.m_tilde(x + 1e-9, 0))
            } else {
                (
                    (3.0 * b.m_tilde(x - 1e-9, k - 1) - 4.0 * b.m_tilde(x - h, k - 1) + b.m_tilde(x - 2.0 * h, k - 1)) / (2.0 * h),
                    (-3.0 * b.m_tilde(x + 1e-9, k - 1) + 4.0 * b.m_tilde(x + h, k - 1) - b.m_tilde(x + 2.0 * h, k - 1)) / (2.0 * h),
                )
            };
            junction = junction.max((left - right).abs());
        }
    }
    let ok = total.abs() <= TOTAL_MASS_TOL && dl <= STRIP_MASS_TOL && dr <= STRIP_MASS_TOL && junction <= JUNCTION_FD_TOL;
    Ok((ok, format!("|∫m| = {:.2e}, strip mass gaps {dl:.2e}/{dr:.2e}, junction FD gap {junction:.2e}", total.abs())))
}

fn c6() -> Outcome {
    let lambda = 400.0;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x = -lambda * 0.98 + 2.0 * lambda * 0.98 * i as f64 / 49.0;
        worst = worst.max(weighted_pv_zero_identity(lambda, x).abs());
    }
    Ok((worst <= WEIGHTED_PV_TOL, format!("max |PV| = {worst:.2e} on 50 points")))
}

fn energy_criterion(b: &Arc<PerturbationBundle>, splitting: bool) -> Outcome {
    let s = transport::s_max(b) / 2.0;
    let t = TransportBundle::new(b.clone(), s).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for seed in 0..20 {
        let eta = random_config(400.0, 20, 1000 + seed + if splitting { 0 } else { 500 });
        let r = if splitting {
            transport::verify_energy_splitting(&t, &eta)
        } else {
            transport::verify_energy_expansion(&t, &eta)
        }
        .map_err(err)?;
        ok &= r.within(ENERGY_REL_TOL);
        worst = worst.max(r.residual.abs() / r.lhs.abs().max(1.0));
    }
    Ok((ok, format!("s = {s}, max relative residual {worst:.2e} over 20 configurations")))
}

fn c9(b: &Arc<PerturbationBundle>) -> Outcome {
    let s = transport::s_max(b) / 2.0;
    let t = TransportBundle::new(b.clone(), s).map_err(err)?;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let eta = random_config(400.0, 20, 2000 + seed);
        for x in [600.0, 800.0, -600.0, -800.0] {
            let d = transport::difference_field(&t, &eta, x).map_err(err)?;
            worst = worst.max(d.residual(s).abs());
        }
    }
    Ok((worst <= DIFFERENCE_FIELD_TOL, format!("max residual {worst:.2e} at x ∈ {{±1.5λ, ±2λ}}, 10 configurations")))
}

fn c10() -> Outcome {
    let ev: Vec<f64> = [400.0, 800.0]
        .iter()
        .map(|&l| Ok(perturb::variance_term(bundle(l, 10.0)?.as_ref()).map_err(err)?.errvar))
        .collect::<Result<_, String>>()?;
    let r = ev[0] / ev[1];
    Ok((r >= ERRVAR_RATIO.0 && r <= ERRVAR_RATIO.1, format!("errvar(400) = {:.3e}, errvar(800) = {:.3e}, ratio {r:.3}", ev[0], ev[1])))
}

fn c11(b: &Arc<PerturbationBundle>) -> Outcome {
    let s = transport::s_max(b) / 2.0;
    let t = TransportBundle::new(b.clone(), s).map_err(err)?;
    let f = make_bump().rescale(30.0);
    let g = |x: f64| f.eval(x - 10.0);
    let breaks: Vec<f64> = (0..=64).map(|i| -25.0 + 70.0 * i as f64 / 64.0).collect();
    let lhs = transport::pushforward_integral(&t, g, &breaks, 20).map_err(err)?;
    let rhs = quad::integrate_breaks(&breaks, quad::gl(20), |x| g(x) * t.mu(x));
    let push = (lhs - rhs).abs() / rhs.abs();
    let mut identity = true;
    // 𝔪̃ vanishes within ℓ/4 of the endpoints
    for i in 0..=40 {
        let z = 5.0 * i as f64 / 40.0;
        for x in [-400.0 + z, 400.0 - z] {
            identity &= t.phi(x).map_err(err)? == x;
        }
    }
    let mut sup: f64 = 0.0;
    for sv in [-2.0 * s, -s, s, 2.0 * s] {
        let ts = TransportBundle::new(b.clone(), sv).map_err(err)?;
        sup = sup.max(transport::psi_bounds_check(&ts).map_err(err)?.sup_psi);
    }
    let ok = push <= PUSHFORWARD_TOL && identity && sup <= 1.0;
    Ok((ok, format!("push-forward rel. error {push:.2e}, Φ_s = Id at 82 strip nodes: {identity}, sup|ψ_s| = {sup:.3e}")))
}

fn c12() -> Outcome {
    let gs: Vec<(&str, _)> = ["bump", "oddbump", "poly"]
        .iter()
        .map(|n| (*n, TestFunction::by_name(n, 1.0).unwrap().rescale(5.0)))
        .collect();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let n = rng.random_range(20..100);
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
        let c = PointConfiguration::new(pts, (-30.0, 30.0)).unwrap();
        for (_, g) in &gs {
            let f = pointproc::fluct(g, &c).map_err(err)?;
            for flavor in [Flavor::Center, Flavor::Left, Flavor::Right] {
                let rhs = pointproc::apriori_bound_rhs(g, &c, flavor, 15.0).map_err(err)?;
                ok &= f.abs() <= rhs;
                worst = worst.max(f.abs() / rhs);
            }
        }
    }
    Ok((ok, format!("max |fluct|/bound = {worst:.3} over 50 configurations × 3 functions × 3 anchors")))
}

fn c13(r: &CLTReport) -> Outcome {
    let t = r.discrepancy.trend.ok_or("no trend test")?;
    let ok = t.rho < 0.0 && t.p_lower <= SPEARMAN_ALPHA;
    let rows = r.discrepancy.rows.iter().map(|d| format!("R={}: {:.4}±{:.4}", d.r, d.var_over_r, d.var_over_r_err)).collect::<Vec<_>>();
    Ok((ok, format!("Var/R {}; Spearman ρ = {:.2}, p = {:.4}", rows.join(", "), t.rho, t.p_lower)))
}

fn grid_gamma(lambda: f64, half: f64, interior: &[f64]) -> PointConfiguration {
    let mut pts = interior.to_vec();
    let mut k = -half.floor();
    while k <= half {
        if k.abs() >= lambda {
            pts.push(k);
        }
        k += 1.0;
    }
    PointConfiguration::new(pts, (-half, half)).unwrap()
}

fn c14() -> Outcome {
    let l = 3.0;
    let spec = GibbsSpec::new(0.0, l, grid_gamma(l, 12.0, &[-1.0, 0.5, 2.0]), 12.0).map_err(err)?;
    let run = gibbs::gibbs_mcmc_with(&spec, 200_000, 17, McmcOptions { thin: 20, burn_in: 100, proposal: Proposal::Continuous })
        .map_err(err)?;
    let mut min_p: f64 = 1.0;
    for k in 0..3 {
        let col: Vec<f64> = run.samples.iter().map(|s| s[k]).collect();
        min_p = min_p.min(stats::ks_test(&col, |x| ((x + l) / (2.0 * l)).clamp(0.0, 1.0)).p_value);
    }
    let spec = GibbsSpec::new(2.0, 2.0, grid_gamma(2.0, 10.0, &[-0.4, 0.9]), 10.0).map_err(err)?;
    let exact = gibbs::lattice_gibbs_law(&spec, 16).map_err(err)?;
    let run = gibbs::gibbs_mcmc_with(&spec, 1_000_000, 99, McmcOptions { thin: 1, burn_in: 1000, proposal: Proposal::Lattice { sites: 16 } })
        .map_err(err)?;
    let h = 2.0 * spec.lambda / 16.0;
    let mut counts = std::collections::HashMap::new();
    for s in &run.samples {
        let mut k: Vec<usize> = s.iter().map(|&x| ((x + spec.lambda) / h - 0.5).round() as usize).collect();
        k.sort();
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let n = run.samples.len() as f64;
    let tv = 0.5 * exact.iter().map(|(k, p)| (*counts.get(k).unwrap_or(&0) as f64 / n - p).abs()).sum::<f64>();
    let ok = min_p >= KS_ALPHA && tv <= GIBBS_TV_TOL;
    Ok((ok, format!("β=0 KS min p = {min_p:.3} (3 coordinates, 10⁴ samples); lattice TV = {tv:.4}")))
}

fn c15() -> Outcome {
    let (tri, rej) = sampler::two_point_spacings(2.0, 10_000, 77).map_err(err)?;
    let ks = stats::ks_two_sample(&tri, &rej);
    Ok((ks.passes(KS_ALPHA), format!("n=2 β=2 spacing KS D = {:.4}, p = {:.3} (10⁴ vs 10⁴)", ks.statistic, ks.p_value)))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let b400 = bundle(400.0, 20.0);

    let reports: Result<Vec<CLTReport>, String> = [1.0, 2.0, 4.0].iter().map(|&b| clt(b)).collect();
    let beta2 = reports.as_ref().ok().map(|r| r[1].clone());
    let with2 = |f: fn(&CLTReport) -> Outcome| -> Outcome {
        match &beta2 {
            Some(r) => f(r),
            None => Err(reports.as_ref().err().cloned().unwrap_or_default()),
        }
    };
    results.push((1, "CLT variance and mean", reports.as_ref().map_err(Clone::clone).and_then(|r| c1(r))));
    results.push((2, "Gaussianity (KS)", with2(c2)));
    results.push((3, "Laplace transform", with2(c3)));
    let with_b = |f: &dyn Fn(&Arc<PerturbationBundle>) -> Outcome| -> Outcome {
        match &b400 {
            Ok(b) => f(b),
            Err(e) => Err(e.clone()),
        }
    };
    results.push((4, "Airfoil identity", with_b(&|b| c4(b))));
    results.push((5, "Mass and construction", with_b(&|b| c5(b))));
    results.push((6, "Weighted PV null identity", c6()));
    results.push((7, "Energy splitting", with_b(&|b| energy_criterion(b, true))));
    results.push((8, "Energy expansion", with_b(&|b| energy_criterion(b, false))));
    results.push((9, "Difference field decomposition", with_b(&|b| c9(b))));
    results.push((10, "Variance-term convergence", c10()));
    results.push((11, "Transport correctness", with_b(&|b| c11(b))));
    results.push((12, "A-priori bound", c12()));
    results.push((13, "Discrepancy sublinearity", with2(c13)));
    results.push((14, "Gibbs sampler", c14()));
    results.push((15, "Sampler calibration gate", c15()));

    let mut failed = 0;
    for (i, name, outcome) in &results {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i);
    }
    println!("acceptance: {} passed, {failed} failed ({:.0} s)", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
