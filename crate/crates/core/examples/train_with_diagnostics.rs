//! Trains the pseudo-outcome model on the linear post-treatment example
//! and prints the residual diagnostics next to the training trace.
//!
//! cargo run --release --example train_with_diagnostics -- [sigma_u] [kl_sign]

use pipcfr::config::{Config, Experiment};

fn main() -> pipcfr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = Config::default();
    cfg.set("kind", "example1")?;
    cfg.set("n", "4000")?;
    cfg.set("sigma_u", args.first().map_or("2", String::as_str))?;
    cfg.set("kl_sign", args.get(1).map_or("as_written", String::as_str))?;
    let out = Experiment::from_config(&cfg)?.run()?;

    for r in out.trace.records.iter().step_by(10) {
        println!(
            "epoch {:>3}  L_pip {:>8.4}  val selection {:>8.4}",
            r.epoch,
            r.l_pip.unwrap_or(f64::NAN),
            r.val_selection
        );
    }
    println!("best epoch {}", out.trace.best_epoch);
    let m = &out.metrics;
    println!("pehe in/out {:.4} / {:.4}  counterfactual error var {:.4}", m.pehe_in, m.pehe_out, m.cf_error_var);
    if let Some(d) = &out.diagnostics {
        println!("eps_ITE {:.4}  eps_F + eps_CF - 2 cross {:.4}", d.eps_ITE, d.decomposition());
        println!("eps_PIP {:.4}  Q0 {:.4}  Q1 {:.4}  ipm(phi) {:.4}", d.eps_PIP, d.Q0, d.Q1, d.ipm_phi);
    }
    Ok(())
}
