use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use sinelab::gibbs::{self, GibbsSpec, McmcOptions, Proposal};
use sinelab::harness::{self, CLTReport, ExperimentConfig, CALIBRATION_SALT};
use sinelab::io;
use sinelab::perturb::{self, PerturbationBundle, PotentialKind};
use sinelab::pointproc::PointConfiguration;
use sinelab::sampler;
use sinelab::singular::{HilbertEvaluator, Regime};
use sinelab::testfn::TestFunction;
use sinelab::transport::{self, EnergyReport, TransportBundle};

/// Relative tolerance of the energy identities.
const ENERGY_REL_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "sinelab", version, about = "Numerical lab for linear statistics of Sine_β")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// CLT experiments
    Clt {
        #[command(subcommand)]
        cmd: CltCmd,
    },
    /// Tabulate 𝔥_{λ,φ} = (1/π) PV∫ √(λ²−t²) φ′(t)/(t−x) dt and its derivatives as CSV (x,k,value)
    HilbertTab {
        #[command(flatten)]
        f: FnArgs,
        /// highest derivative, at most 2
        #[arg(long, default_value_t = 2)]
        max_k: usize,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// tabulate on [−extent·λ, extent·λ]
        #[arg(long, default_value_t = 0.99)]
        extent: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump 𝔪, 𝔪̃, the log potential of 𝔪 and ErrorLog on a grid
    PerturbDump {
        #[command(flatten)]
        f: FnArgs,
        #[arg(long, default_value_t = 401)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the energy splitting and expansion identities for the transport at parameter s
    TransportVerify {
        #[command(flatten)]
        f: FnArgs,
        #[arg(long, default_value_t = 0.25)]
        s: f64,
        /// configurations in point-file format; a jittered lattice is used when absent
        #[arg(long)]
        eta: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metropolis sampling of the conditional Gibbs measure in [−λ, λ]
    GibbsSample {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// boundary condition in point-file format
        #[arg(long)]
        exterior: PathBuf,
        /// truncation radius of the exterior field (default: the window half-width)
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        /// use the lattice proposal on this many cells
        #[arg(long)]
        lattice: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bulk-rescaled tridiagonal β-ensemble samples
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        #[arg(long, default_value_t = 0.015)]
        window_fraction: f64,
        #[arg(long, default_value_t = 200)]
        calibration_replicas: usize,
        #[arg(long, default_value_t = 0.02)]
        calibration_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CltCmd {
    /// Run an experiment from a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "clt-out")]
        out: PathBuf,
    },
    /// Summarize a report directory
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(clap::Args)]
struct FnArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    ell: f64,
    #[arg(long, default_value = "bump")]
    function: String,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// enforce 100 < ℓ < λ/1000 instead of ℓ < λ/4
    #[arg(long)]
    strict: bool,
}

impl FnArgs {
    fn regime(&self) -> Regime {
        if self.strict {
            Regime::Strict
        } else {
            Regime::Relaxed
        }
    }

    fn bundle(&self) -> Result<PerturbationBundle> {
        let phi = TestFunction::by_name(&self.function, self.amplitude)?.rescale(self.ell);
        Ok(PerturbationBundle::new(self.lambda, phi, self.regime())?)
    }

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda": self.lambda,
            "ell": self.ell,
            "function": self.function,
            "amplitude": self.amplitude,
            "regime": self.regime(),
        })
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Clt { cmd: CltCmd::Run { config, out } } => clt_run(&config, &out),
        Cmd::Clt { cmd: CltCmd::Report { input } } => clt_report(&input),
        Cmd::HilbertTab { f, max_k, points, extent, out } => hilbert_tab(&f, max_k, points, extent, out.as_deref()),
        Cmd::PerturbDump { f, points, out } => perturb_dump(&f, points, out.as_deref()),
        Cmd::TransportVerify { f, s, eta, out } => transport_verify(&f, s, &eta, out.as_deref()),
        Cmd::GibbsSample { beta, lambda, steps, seed, exterior, p, thin, burn_in, lattice, out } => {
            let proposal = match lattice {
                Some(sites) => Proposal::Lattice { sites },
                None => Proposal::Continuous,
            };
            gibbs_sample(beta, lambda, steps, seed, &exterior, p, McmcOptions { thin, burn_in, proposal }, &out)
        }
        Cmd::Sample { n, beta, seed, replicas, window_fraction, calibration_replicas, calibration_fraction, out } => {
            sample(n, beta, seed, replicas, window_fraction, calibration_replicas, calibration_fraction, &out)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn clt_run(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing config")?;
    let run = harness::run_clt_experiment_full(&cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;

    let mut csv = String::from("replica,fluct\n");
    for (i, f) in run.fluctuations.iter().enumerate() {
        writeln!(csv, "{i},{f:e}")?;
    }
    fs::write(out.join("fluctuations.csv"), csv)?;

    let r = &run.report;
    let mut csv = String::from("t,log_mgf,lo,hi,target\n");
    for m in &r.mgf {
        writeln!(csv, "{},{:e},{:e},{:e},{:e}", m.t, m.log_mgf.value, m.log_mgf.lo, m.log_mgf.hi, m.target)?;
    }
    fs::write(out.join("mgf.csv"), csv)?;

    let mut csv = String::from("r,variance,variance_err,var_over_r,var_over_r_err\n");
    for d in &r.discrepancy.rows {
        writeln!(csv, "{},{:e},{:e},{:e},{:e}", d.r, d.variance, d.variance_err, d.var_over_r, d.var_over_r_err)?;
    }
    fs::write(out.join("discrepancy.csv"), csv)?;

    print!("{}", summary(r));
    Ok(())
}

fn clt_report(input: &Path) -> Result<()> {
    let path = input.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let r: CLTReport = serde_json::from_str(&text).context("parsing report")?;
    print!("{}", summary(&r));
    Ok(())
}

fn summary(r: &CLTReport) -> String {
    let c = &r.config;
    let mut s = String::new();
    let _ = writeln!(s, "beta {}  ell {}  n {}  replicas {}  seed {}", c.beta, c.ell, c.n, c.replicas, c.seed);
    let _ = writeln!(
        s,
        "density {:.4} ± {:.4} (semicircle {:.4}), {:.1} points per window",
        r.calibration.density, r.calibration.std_error, r.calibration.semicircle, r.mean_points_in_window
    );
    let _ = writeln!(s, "norm² {:.10}  target variance {:.6}", r.norm_sq, r.target_variance);
    let _ = writeln!(
        s,
        "variance {:.6} [{:.6}, {:.6}]  rel. error {:+.2}%",
        r.variance.value,
        r.variance.lo,
        r.variance.hi,
        100.0 * r.variance_rel_error
    );
    let _ = writeln!(s, "mean {:+.5} ± {:.5}", r.mean.value, r.mean.se);
    let _ = writeln!(s, "KS D {:.4}  p {:.3}", r.ks.statistic, r.ks.p_value);
    for m in &r.mgf {
        let mark = if m.target_in_band() { "ok" } else { "out" };
        let _ = writeln!(s, "  t {:+.2}: log E e^(tX) {:.5} [{:.5}, {:.5}] vs {:.5} {mark}", m.t, m.log_mgf.value, m.log_mgf.lo, m.log_mgf.hi, m.target);
    }
    for d in &r.discrepancy.rows {
        let _ = writeln!(s, "  R {:>5}: Var/R {:.4} ± {:.4}", d.r, d.var_over_r, d.var_over_r_err);
    }
    if let Some(t) = &r.discrepancy.trend {
        let _ = writeln!(s, "Spearman ρ {:+.3}  p {:.4}", t.rho, t.p_lower);
    }
    let _ = writeln!(s, "runtime {:.1} s on {} threads", r.meta.runtime_secs, r.meta.threads);
    s
}

fn hilbert_tab(f: &FnArgs, max_k: usize, points: usize, extent: f64, out: Option<&Path>) -> Result<()> {
    if !(extent > 0.0 && extent < 1.0) {
        bail!("extent must lie in (0, 1)");
    }
    if max_k > 2 {
        bail!("derivatives up to order 2 are tabulated");
    }
    let phi = TestFunction::by_name(&f.function, f.amplitude)?.rescale(f.ell);
    let h = HilbertEvaluator::new(f.lambda, phi, f.regime())?;
    let mut csv = String::from("x,k,value\n");
    for x in grid(-extent * f.lambda, extent * f.lambda, points) {
        for k in 0..=max_k {
            writeln!(csv, "{x:e},{k},{:e}", h.eval(x, k))?;
        }
    }
    emit(out, &csv)
}

fn perturb_dump(f: &FnArgs, points: usize, out: Option<&Path>) -> Result<()> {
    let b = f.bundle()?;
    let mut header = f.header();
    header["points"] = points.into();
    header["total_mass_tilde"] = b.total_mass_tilde().into();
    header["phi_norm_sq"] = b.phi_norm_sq().into();
    let mut csv = format!("# {header}\nx,m,m_tilde,log_potential,error_log\n");
    // the open box; 𝔪 is singular at ±λ
    let l = f.lambda;
    for x in grid(-l, l, points + 2).into_iter().skip(1).take(points) {
        let m = perturb::perturbation_density(&b, x, 0)?;
        let lp = perturb::log_potential(&b, x, PotentialKind::FullM)?;
        writeln!(csv, "{x:e},{m:e},{:e},{lp:e},{:e}", b.m_tilde(x, 0), b.error_log(x))?;
    }
    emit(out, &csv)
}

/// Points k + ½ + 0.3·sin(k·golden) inside the open box.
fn jittered_lattice(lambda: f64, phase: f64) -> Result<PointConfiguration> {
    let g = 0.5 * (1.0 + 5f64.sqrt());
    let m = lambda.floor() as i64 + 1;
    let pts: Vec<f64> = (-m..m)
        .map(|k| k as f64 + 0.5 + 0.3 * (k as f64 * g + phase).sin())
        .filter(|x| x.abs() < lambda)
        .collect();
    Ok(PointConfiguration::new(pts, (-lambda, lambda))?)
}

#[derive(Serialize)]
struct VerifyEntry {
    source: String,
    points: usize,
    splitting: EnergyReport,
    splitting_ok: bool,
    expansion: EnergyReport,
    expansion_ok: bool,
}

fn transport_verify(f: &FnArgs, s: f64, eta: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let b = Arc::new(f.bundle()?);
    let s_max = transport::s_max(&b);
    let t = TransportBundle::new(b, s)?;
    let configs: Vec<(String, PointConfiguration)> = if eta.is_empty() {
        (0..3).map(|i| Ok((format!("lattice:{i}"), jittered_lattice(f.lambda, i as f64)?))).collect::<Result<_>>()?
    } else {
        eta.iter()
            .map(|p| {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok((p.display().to_string(), io::from_text(&text)?))
            })
            .collect::<Result<_>>()?
    };
    let mut entries = Vec::new();
    for (source, c) in configs {
        let splitting = transport::verify_energy_splitting(&t, &c)?;
        let expansion = transport::verify_energy_expansion(&t, &c)?;
        entries.push(VerifyEntry {
            source,
            points: c.len(),
            splitting_ok: splitting.within(ENERGY_REL_TOL),
            expansion_ok: expansion.within(ENERGY_REL_TOL),
            splitting,
            expansion,
        });
    }
    let all_ok = entries.iter().all(|e| e.splitting_ok && e.expansion_ok);
    let mut doc = f.header();
    doc["s"] = s.into();
    doc["s_max"] = s_max.into();
    doc["tolerance"] = ENERGY_REL_TOL.into();
    doc["ok"] = all_ok.into();
    doc["reports"] = serde_json::to_value(&entries)?;
    emit(out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    if !all_ok {
        bail!("energy identities violated beyond {ENERGY_REL_TOL:e}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gibbs_sample(
    beta: f64,
    lambda: f64,
    steps: u64,
    seed: u64,
    exterior: &Path,
    p: Option<f64>,
    opts: McmcOptions,
    out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(exterior).with_context(|| format!("reading {}", exterior.display()))?;
    let gamma = io::from_text(&text)?;
    let (lo, hi) = gamma.window();
    let p = p.unwrap_or(lo.abs().min(hi.abs()));
    let spec = GibbsSpec::new(beta, lambda, gamma, p)?;
    let run = gibbs::gibbs_mcmc_with(&spec, steps, seed, opts)?;
    fs::create_dir_all(out)?;
    for (i, c) in run.configurations(lambda).iter().enumerate() {
        fs::write(out.join(format!("sample_{i:05}.txt")), io::to_text(c))?;
    }
    let meta = serde_json::json!({
        "beta": beta,
        "lambda": lambda,
        "p": p,
        "seed": seed,
        "options": opts,
        "exterior": exterior.display().to_string(),
        "samples": run.samples.len(),
        "steps": run.steps,
        "accepted": run.accepted,
        "acceptance_rate": run.acceptance_rate,
        "final_energy": run.final_energy,
        "max_energy_drift": run.max_energy_drift,
    });
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
    println!("{} samples, acceptance rate {:.3}", run.samples.len(), run.acceptance_rate);
    Ok(())
}

#[derive(Serialize)]
struct SampleMeta {
    n_source: usize,
    beta: f64,
    seed: u64,
    replica: u64,
    window_fraction: f64,
    density: f64,
    points: usize,
    window: (f64, f64),
}

#[allow(clippy::too_many_arguments)]
fn sample(
    n: usize,
    beta: f64,
    seed: u64,
    replicas: u64,
    window_fraction: f64,
    calibration_replicas: usize,
    calibration_fraction: f64,
    out: &Path,
) -> Result<()> {
    let cal = sampler::calibrate_density(n, beta, calibration_replicas, calibration_fraction, seed ^ CALIBRATION_SALT)?;
    let pool = harness::thread_pool()?;
    let samples = pool.install(|| {
        (0..replicas)
            .into_par_iter()
            .map(|r| sampler::sample_bulk(n, beta, seed, r, window_fraction, cal.density))
            .collect::<sinelab::Result<Vec<_>>>()
    })?;
    fs::create_dir_all(out)?;
    for b in &samples {
        let stem = format!("config_{:05}", b.replica);
        fs::write(out.join(format!("{stem}.txt")), io::to_text(&b.config))?;
        let meta = SampleMeta {
            n_source: b.n_source,
            beta: b.beta,
            seed: b.seed,
            replica: b.replica,
            window_fraction: b.window_fraction,
            density: b.density,
            points: b.config.len(),
            window: b.config.window(),
        };
        fs::write(out.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    }
    fs::write(out.join("calibration.json"), serde_json::to_string_pretty(&cal)?)?;
    println!("{} samples, density {:.4} ± {:.4}", samples.len(), cal.density, cal.std_error);
    Ok(())
}
