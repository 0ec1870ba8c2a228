//! Trains the pseudo-outcome model and both baselines on one draw of the
//! temporal benchmark and prints out-of-sample PEHE.
//!
//! cargo run --release --example temporal_comparison -- [seed] [n] [K] [key=value ...]
//!
//! Trailing `key=value` pairs override the configuration of every method.

use std::time::Instant;

use pipcfr::config::{Config, Experiment};

fn main() -> pipcfr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map_or("0", String::as_str);
    let n = args.get(1).map_or("4000", String::as_str);
    let k = args.get(2).map_or("20", String::as_str);
    let extra: Vec<(&str, &str)> = args.iter().skip(3).filter_map(|a| a.split_once('=')).collect();
    for method in ["PIPCFR_WASS", "CFRNET_WASS", "TARNET"] {
        let mut cfg = Config::default();
        for (key, v) in [("seed", seed), ("data.kind", "temporal"), ("n", n), ("K", k), ("method", method)] {
            cfg.set(key, v)?;
        }
        for (key, v) in &extra {
            cfg.set(key, v)?;
        }
        let start = Instant::now();
        let out = Experiment::from_config(&cfg)?.run()?;
        println!(
            "{method:<12} pehe_in {:.3}  pehe_out {:.3}  best epoch {:>3}/{:<3}  {:.1}s",
            out.metrics.pehe_in,
            out.metrics.pehe_out,
            out.trace.best_epoch,
            out.trace.records.len(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
