//! CLT report schema and estimator scaling.

use std::collections::BTreeSet;

use serde_json::Value;
use sinelab::harness::{run_clt_experiment, ExperimentConfig};

fn keys(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(p.clone());
                keys(x, &p, out);
            }
        }
        Value::Array(a) => {
            if let Some(x) = a.first() {
                keys(x, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

fn small(replicas: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(2.0, 3.0, 512, replicas, 8);
    c.window_fraction = 0.1;
    c.calibration_replicas = 20;
    c.r_grid = vec![2.0, 4.0, 8.0];
    c
}

const GOLDEN: &str = include_str!("golden/report_keys.txt");

#[test]
fn report_schema_is_stable() {
    let r = run_clt_experiment(&small(30)).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    let mut got = BTreeSet::new();
    keys(&v, "", &mut got);
    let want: BTreeSet<String> = GOLDEN.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect();
    assert_eq!(got, want, "schema drift:\n{}", got.iter().cloned().collect::<Vec<_>>().join("\n"));
}

#[test]
fn variance_interval_shrinks_like_root_n() {
    let a = run_clt_experiment(&small(400)).unwrap();
    let b = run_clt_experiment(&small(800)).unwrap();
    let ratio = b.variance.width() / a.variance.width();
    let expected = 0.5f64.sqrt();
    assert!((ratio / expected - 1.0).abs() <= 0.2, "width ratio {ratio}");
}
