//! Conditional-independence bound on random families: the IPM between
//! `φ | t = 0, x` and `φ | t = 1, x` against the KL-based bound.

use pipcfr::eval::{prop2_check, prop2_family, Prop2Kind};

fn main() -> pipcfr::Result<()> {
    for kind in [Prop2Kind::Independent, Prop2Kind::Gaussian, Prop2Kind::Strong] {
        for seed in 0..3 {
            let r = prop2_check(&prop2_family(kind, 10_000, seed)?)?;
            println!(
                "{:<12} seed {seed}  ipm {:.4}  bound {:.4}  cells {}  holds {}",
                format!("{kind:?}"),
                r.lhs_ipm,
                r.rhs_bound,
                r.cells.len(),
                r.holds
            );
        }
    }
    Ok(())
}
