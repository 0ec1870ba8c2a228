//! Least-squares counterfactual errors on the linear post-treatment
//! example: ignoring S, conditioning on the observed S, and conditioning
//! on its exogenous noise.
//!
//! cargo run --release --example oracle_study -- [n_mc]

use pipcfr::datagen::Example1Config;
use pipcfr::eval::example1_oracle;

fn main() -> pipcfr::Result<()> {
    let n_mc = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(1_000_000);
    for sigma_u in [1.0, 2.0, 3.0] {
        let cfg = Example1Config { sigma_u, ..Example1Config::default() };
        let study = example1_oracle(&cfg, n_mc)?;
        println!("sigma_u = {sigma_u}");
        for case in &study.cases {
            for arm in &case.arms {
                println!(
                    "  ({}) Y ~ {:<10} t={}  mean {:+.3} (target {:+.1})  var {:.3} (target {:.1})",
                    case.name, case.regressors, arm.arm, arm.mean, arm.target_mean, arm.var, arm.target_var
                );
            }
        }
    }
    Ok(())
}
