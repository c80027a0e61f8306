//! DLR consistency diagnostic: Gibbs resampling of the interior of
//! tridiagonal samples reproduces their interior statistics. Reported, with
//! only a loose sanity bound, since the exterior itself is approximate.

use sinelab::gibbs::{gibbs_mcmc_with, GibbsSpec, McmcOptions, Proposal};
use sinelab::sampler::{calibrate_density, sample_bulk};
use sinelab::stats;

#[test]
fn gibbs_interior_matches_direct_samples() {
    let (n, beta, lambda) = (1024, 2.0, 4.0);
    let cal = calibrate_density(n, beta, 50, 0.05, 3).unwrap();
    let mut direct = Vec::new();
    let mut resampled = Vec::new();
    for rep in 0..60 {
        let b = sample_bulk(n, beta, 44, rep, 0.05, cal.density).unwrap();
        let c = &b.config;
        if c.count(-lambda, lambda) < 2 {
            continue;
        }
        let p = c.window().1.min(8.0 * lambda);
        direct.push(c.count(-lambda / 2.0, lambda / 2.0) as f64);
        let spec = GibbsSpec::new(beta, lambda, c.clone(), p).unwrap();
        let run = gibbs_mcmc_with(&spec, 20_000, rep, McmcOptions { thin: 2000, burn_in: 2000, proposal: Proposal::Continuous }).unwrap();
        for s in &run.samples {
            resampled.push(s.iter().filter(|x| x.abs() < lambda / 2.0).count() as f64);
        }
    }
    let (md, mr) = (stats::mean(&direct), stats::mean(&resampled));
    let se = (stats::variance(&direct) / direct.len() as f64 + stats::variance(&resampled) / resampled.len() as f64).sqrt();
    println!("count in [−λ/2, λ/2]: direct {md:.3}, Gibbs {mr:.3}, combined se {se:.3}");
    println!("variance: direct {:.3}, Gibbs {:.3}", stats::variance(&direct), stats::variance(&resampled));
    assert!((md - mr).abs() < 6.0 * se + 0.2);
}
