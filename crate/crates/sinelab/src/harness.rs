//! Experiment orchestration: CLT runs over tridiagonal replicas, empirical
//! Laplace transforms and discrepancy scans.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointproc::{self, PointConfiguration};
use crate::sampler::{self, DensityCalibration};
use crate::singular::Regime;
use crate::stats::{self, Estimate, KsResult, SpearmanTest};
use crate::testfn::{self, Smooth, TestFunction};

/// Environment variable fixing the worker thread count.
pub const THREADS_ENV: &str = "SINELAB_THREADS";

fn default_window_fraction() -> f64 {
    0.015
}
fn default_test_function() -> String {
    "bump".into()
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_t_grid() -> Vec<f64> {
    vec![-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_r_grid() -> Vec<f64> {
    vec![4.0, 8.0, 16.0, 32.0]
}
fn default_bootstrap() -> usize {
    1000
}
fn default_level() -> f64 {
    0.99
}
fn default_calibration_replicas() -> usize {
    200
}
fn default_calibration_fraction() -> f64 {
    0.02
}

/// Parameters of a CLT experiment (JSON; fields with defaults may be omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub beta: f64,
    pub ell: f64,
    /// matrix size of the tridiagonal model
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
    #[serde(default = "default_test_function")]
    pub test_function: String,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_level")]
    pub confidence: f64,
    #[serde(default = "default_calibration_replicas")]
    pub calibration_replicas: usize,
    #[serde(default = "default_calibration_fraction")]
    pub calibration_fraction: f64,
    /// box half-width for transport diagnostics; checked against ℓ when set
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub s: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(beta: f64, ell: f64, n: usize, replicas: usize, seed: u64) -> Self {
        ExperimentConfig {
            beta,
            ell,
            n,
            replicas,
            seed,
            window_fraction: default_window_fraction(),
            test_function: default_test_function(),
            amplitude: default_amplitude(),
            t_grid: default_t_grid(),
            r_grid: default_r_grid(),
            bootstrap_resamples: default_bootstrap(),
            confidence: default_level(),
            calibration_replicas: default_calibration_replicas(),
            calibration_fraction: default_calibration_fraction(),
            lambda: None,
            s: None,
        }
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        TestFunction::by_name(&self.test_function, self.amplitude)
    }

    /// Expected half-width of the rescaled bulk window, from the semicircle.
    pub fn nominal_half_width(&self) -> f64 {
        self.window_fraction * 2.0 * self.n as f64 / std::f64::consts::PI
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Invalid(format!("beta = {}", self.beta)));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::Invalid(format!("ell = {}", self.ell)));
        }
        if self.n < 2 || self.replicas < 2 {
            return Err(Error::Invalid("need n ≥ 2 and at least two replicas".into()));
        }
        if !(self.window_fraction > 0.0 && self.window_fraction < 1.0) {
            return Err(Error::Invalid(format!("window fraction {}", self.window_fraction)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Invalid(format!("confidence {}", self.confidence)));
        }
        let phi = self.test_function()?.rescale(self.ell);
        let hw = self.nominal_half_width();
        let need = phi.support_radius() + 2.0 * self.ell;
        if need > hw {
            return Err(Error::SupportExceedsWindow { lo: -need, hi: need, w_lo: -hw, w_hi: hw });
        }
        if let Some(&r) = self.r_grid.iter().find(|&&r| !(r > 0.0) || r > hw) {
            return Err(Error::OutOfWindow { a: -r, b: r, w_lo: -hw, w_hi: hw });
        }
        if let Some(lambda) = self.lambda {
            Regime::Strict.check(self.ell, lambda)?;
        }
        Ok(())
    }
}

/// One point of the empirical log-Laplace transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfPoint {
    pub t: f64,
    pub log_mgf: Estimate,
    /// t²σ²/2 for the target variance σ²
    pub target: f64,
}

impl MgfPoint {
    pub fn target_in_band(&self) -> bool {
        self.log_mgf.contains(self.target)
    }
}

/// log mean exp(t·F) on the grid, with bootstrap bands; `target_variance`
/// gives the Gaussian overlay.
pub fn empirical_mgf(values: &[f64], t_grid: &[f64], target_variance: f64, resamples: usize, level: f64, seed: u64) -> Vec<MgfPoint> {
    let log_mgf = |x: &[f64]| -> Vec<f64> {
        t_grid
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    return 0.0;
                }
                // log-sum-exp
                let m = x.iter().map(|v| t * v).fold(f64::NEG_INFINITY, f64::max);
                m + (x.iter().map(|v| (t * v - m).exp()).sum::<f64>() / x.len() as f64).ln()
            })
            .collect()
    };
    stats::bootstrap_many(values, log_mgf, resamples, level, seed)
        .into_iter()
        .zip(t_grid)
        .map(|(e, &t)| MgfPoint { t, log_mgf: e, target: 0.5 * t * t * target_variance })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub r: f64,
    pub variance: f64,
    pub variance_err: f64,
    pub var_over_r: f64,
    pub var_over_r_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyScan {
    pub rows: Vec<DiscrepancyRow>,
    /// negative-trend test of Var/R against R
    pub trend: Option<SpearmanTest>,
}

/// Var(Discr_{[−R,R]}) per R with jackknife errors.
pub fn discrepancy_scan(configs: &[PointConfiguration], r_grid: &[f64]) -> Result<DiscrepancyScan> {
    let mut table = vec![Vec::with_capacity(configs.len()); r_grid.len()];
    for c in configs {
        for (col, &r) in table.iter_mut().zip(r_grid) {
            col.push(pointproc::discrepancy(c, -r, r)?);
        }
    }
    Ok(discrepancy_table(&table, r_grid))
}

/// As [`discrepancy_scan`] from precomputed columns (one per R).
pub fn discrepancy_table(columns: &[Vec<f64>], r_grid: &[f64]) -> DiscrepancyScan {
    let rows: Vec<DiscrepancyRow> = columns
        .iter()
        .zip(r_grid)
        .map(|(col, &r)| {
            let (v, e) = stats::jackknife(col, stats::variance);
            let (v, e) = if col.iter().all(|&x| x == col[0]) { (0.0, 0.0) } else { (v, e) };
            DiscrepancyRow { r, variance: v, variance_err: e, var_over_r: v / r, var_over_r_err: e / r }
        })
        .collect();
    let trend = (rows.len() >= 2 && rows.len() <= 10).then(|| {
        let rs: Vec<f64> = rows.iter().map(|r| r.r).collect();
        let vr: Vec<f64> = rows.iter().map(|r| r.var_over_r).collect();
        stats::spearman_test_lower(&rs, &vr)
    });
    DiscrepancyScan { rows, trend }
}

/// Timing and environment of a run; excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub runtime_secs: f64,
    pub threads: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CLTReport {
    pub config: ExperimentConfig,
    pub calibration: DensityCalibration,
    /// ‖φ̄‖²_{H^{1/2}} of the base function
    pub norm_sq: f64,
    /// (2/β)‖φ̄‖²_{H^{1/2}}
    pub target_variance: f64,
    pub mean: Estimate,
    pub variance: Estimate,
    /// variance / target − 1
    pub variance_rel_error: f64,
    /// fluctuations standardized by the target variance vs N(0, 1)
    pub ks: KsResult,
    pub mgf: Vec<MgfPoint>,
    pub discrepancy: DiscrepancyScan,
    pub mean_points_in_window: f64,
    pub meta: RunMeta,
}

impl CLTReport {
    /// |mean| within `k` standard errors of 0.
    pub fn mean_ok(&self, k: f64) -> bool {
        self.mean.value.abs() <= k * self.mean.se
    }

    /// The report with timing fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> CLTReport {
        CLTReport { meta: RunMeta { runtime_secs: 0.0, threads: 0, version: String::new() }, ..self.clone() }
    }
}

/// Output of a run: the report and the per-replica fluctuations (replica order).
#[derive(Debug, Clone)]
pub struct CLTRun {
    pub report: CLTReport,
    pub fluctuations: Vec<f64>,
}

/// Thread pool honouring `SINELAB_THREADS` (rayon's default otherwise).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::Invalid(format!("{THREADS_ENV}={v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Invalid(e.to_string()))
}

/// Replica seeds are streams of `seed`; the density calibration uses the
/// independent seed `seed ^ CALIBRATION_SALT`.
pub const CALIBRATION_SALT: u64 = 0x5eed_ca1b;

pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<CLTReport> {
    Ok(run_clt_experiment_full(cfg)?.report)
}

pub fn run_clt_experiment_full(cfg: &ExperimentConfig) -> Result<CLTRun> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = thread_pool()?;
    let base = cfg.test_function()?;
    let phi = base.rescale(cfg.ell);
    let norm_sq = testfn::h_half_norm_sq(&base)?;
    let target_variance = 2.0 / cfg.beta * norm_sq;
    let integral = testfn::integral(&phi)?;
    let calibration = pool.install(|| {
        sampler::calibrate_density(cfg.n, cfg.beta, cfg.calibration_replicas, cfg.calibration_fraction, cfg.seed ^ CALIBRATION_SALT)
    })?;
    let per_replica: Vec<(f64, Vec<f64>, usize)> = pool.install(|| {
        (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|rep| -> Result<(f64, Vec<f64>, usize)> {
                let b = sampler::sample_bulk(cfg.n, cfg.beta, cfg.seed, rep, cfg.window_fraction, calibration.density)?;
                let f = pointproc::fluct_with_integral(&phi, integral, &b.config)?;
                let d = cfg.r_grid.iter().map(|&r| pointproc::discrepancy(&b.config, -r, r)).collect::<Result<_>>()?;
                Ok((f, d, b.config.len()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let fluctuations: Vec<f64> = per_replica.iter().map(|r| r.0).collect();
    let mut columns = vec![Vec::with_capacity(cfg.replicas); cfg.r_grid.len()];
    for (_, d, _) in &per_replica {
        for (c, v) in columns.iter_mut().zip(d) {
            c.push(*v);
        }
    }
    let mean_points = per_replica.iter().map(|r| r.2 as f64).sum::<f64>() / cfg.replicas as f64;

    let (mean, variance) = if fluctuations.iter().all(|&f| f == 0.0) {
        let zero = Estimate { value: 0.0, lo: 0.0, hi: 0.0, se: 0.0 };
        (zero, zero)
    } else {
        let mut mean = stats::bootstrap(&fluctuations, stats::mean, cfg.bootstrap_resamples, cfg.confidence, cfg.seed ^ 1);
        mean.se = stats::std_error(&fluctuations);
        let variance = stats::bootstrap(&fluctuations, stats::variance, cfg.bootstrap_resamples, cfg.confidence, cfg.seed ^ 2);
        (mean, variance)
    };
    let sd = target_variance.sqrt();
    let standardized: Vec<f64> = fluctuations.iter().map(|f| if sd > 0.0 { f / sd } else { 0.0 }).collect();
    let ks = stats::ks_test(&standardized, stats::normal_cdf);
    let mgf = empirical_mgf(&fluctuations, &cfg.t_grid, target_variance, cfg.bootstrap_resamples, cfg.confidence, cfg.seed ^ 3);
    let discrepancy = discrepancy_table(&columns, &cfg.r_grid);
    let variance_rel_error = if target_variance > 0.0 { variance.value / target_variance - 1.0 } else { variance.value };
    let report = CLTReport {
        config: cfg.clone(),
        calibration,
        norm_sq,
        target_variance,
        mean,
        variance,
        variance_rel_error,
        ks,
        mgf,
        discrepancy,
        mean_points_in_window: mean_points,
        meta: RunMeta {
            runtime_secs: start.elapsed().as_secs_f64(),
            threads: pool.current_num_threads(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    };
    Ok(CLTRun { report, fluctuations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(beta: f64, seed: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(beta, 3.0, 512, 40, seed);
        c.window_fraction = 0.1;
        c.bootstrap_resamples = 200;
        c.calibration_replicas = 20;
        c.r_grid = vec![2.0, 4.0, 8.0];
        c
    }

    #[test]
    fn deterministic_payload() {
        let a = run_clt_experiment(&small(2.0, 11)).unwrap();
        let b = run_clt_experiment(&small(2.0, 11)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.without_timing()).unwrap(),
            serde_json::to_string(&b.without_timing()).unwrap()
        );
        assert!(a.mgf.iter().all(|p| p.t != 0.0 || p.log_mgf.value == 0.0));
    }

    #[test]
    fn zero_function_has_zero_fluctuations() {
        let mut c = small(2.0, 3);
        c.amplitude = 0.0;
        let run = run_clt_experiment_full(&c).unwrap();
        assert!(run.fluctuations.iter().all(|&f| f == 0.0));
        assert_eq!(run.report.variance.value, 0.0);
        assert_eq!(run.report.target_variance, 0.0);
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"beta":2,"ell":10,"n":4096,"replicas":100,"seed":1}"#).unwrap();
        assert_eq!(c, ExperimentConfig::new(2.0, 10.0, 4096, 100, 1));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"beta":2,"ell":10,"n":4096,"replicas":100,"seed":1,"x":0}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::new(2.0, 10.0, 4096, 100, 1);
        c.validate().unwrap();
        c.ell = 100.0;
        assert!(matches!(c.validate(), Err(Error::SupportExceedsWindow { .. })));
        let mut c = ExperimentConfig::new(2.0, 10.0, 4096, 100, 1);
        c.lambda = Some(5000.0);
        assert!(matches!(c.validate(), Err(Error::ScaleSeparationViolated { .. })));
    }

    #[test]
    fn unit_grid_discrepancy_is_zero() {
        let cfgs: Vec<PointConfiguration> = (0..5)
            .map(|_| PointConfiguration::new((-50..50).map(|k| k as f64 + 0.5).collect(), (-50.0, 50.0)).unwrap())
            .collect();
        let scan = discrepancy_scan(&cfgs, &[4.0, 8.0, 16.0, 32.0]).unwrap();
        assert!(scan.rows.iter().all(|r| r.variance == 0.0 && r.variance_err == 0.0));
    }

    #[test]
    fn mgf_of_gaussian_sample() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let nd = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| nd.sample(&mut rng)).collect();
        let m = empirical_mgf(&x, &[-0.5, 0.0, 0.5], 0.25, 500, 0.99, 1);
        assert_eq!(m[1].log_mgf.value, 0.0);
        assert!(m.iter().all(|p| p.target_in_band()));
        // near-even curve
        assert!((m[0].log_mgf.value - m[2].log_mgf.value).abs() < m[0].log_mgf.width().max(m[2].log_mgf.width()));
    }
}
