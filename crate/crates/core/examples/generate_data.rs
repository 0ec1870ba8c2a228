//! Draws every built-in generator once, writes the splits as CSV and
//! prints shapes, treated fractions and the true effect.
//!
//! cargo run --release --example generate_data -- [out_dir]

use pipcfr::config::{Config, Experiment};
use pipcfr::data::save_csv;

fn main() -> pipcfr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipcfr-out/generate_data".into());
    for kind in ["example1", "temporal", "sequential", "ar"] {
        let mut cfg = Config::default();
        cfg.set("kind", kind)?;
        cfg.set("n", "2000")?;
        cfg.set("K", "20")?;
        let (train, val, test) = Experiment::from_config(&cfg)?.splits()?;
        let dir = std::path::Path::new(&out).join(kind);
        std::fs::create_dir_all(&dir).map_err(|e| pipcfr::Error::io(&dir, e))?;
        for (name, ds) in [("train", &train), ("val", &val), ("test", &test)] {
            save_csv(ds, dir.join(format!("{name}.csv")))?;
        }
        let tau = train.tau_true.as_deref().unwrap_or_default();
        let mean_tau = tau.iter().sum::<f64>() / tau.len().max(1) as f64;
        println!(
            "{kind:<10} x_dim {:>3}  s_dim {:>4}  rows {}/{}/{}  treated {:.2}  mean tau {mean_tau:.3}",
            train.x_dim(),
            train.s_dim(),
            train.len(),
            val.len(),
            test.len(),
            train.treated_fraction(),
        );
    }
    println!("wrote {out}");
    Ok(())
}
