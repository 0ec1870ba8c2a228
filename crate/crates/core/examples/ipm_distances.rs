//! MMD and Sinkhorn distances between two Gaussian clouds as one of them
//! slides away, plus the gradient the distance sends back to the points.

use numgrad::{Tape, Tensor};
use pipcfr::ipm::{self, IpmConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cloud(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let v = (0..n * 2).map(|i| Distribution::<f64>::sample(&StandardNormal, rng) + if i % 2 == 0 { shift } else { 0.0 }).collect();
    Tensor::from_vec(n, 2, v).expect("shape")
}

fn main() -> pipcfr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // raw clouds need more iterations than standardized minibatches
    let wass_cfg = IpmConfig { sinkhorn_iters: 5000, ..IpmConfig::wass() };
    let a = cloud(200, 0.0, &mut rng);
    println!("shift    mmd2    mmd2(unbiased)  sinkhorn");
    for shift in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
        let b = cloud(150, shift, &mut rng);
        let biased = ipm::mmd2(&a, &b, &IpmConfig::mmd())?;
        let unbiased = ipm::mmd2(&a, &b, &IpmConfig { unbiased_mmd: true, ..IpmConfig::mmd() })?;
        let wass = ipm::sinkhorn(&a, &b, &wass_cfg)?;
        println!("{shift:<6} {biased:>8.4} {unbiased:>14.4} {:>9.4}{}", wass.value, if wass.converged { "" } else { " (not converged)" });
    }

    let b = cloud(150, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone(), true), tape.leaf(b, false));
    let (d, _) = ipm::ipm_tape(&mut tape, va, vb, &wass_cfg)?;
    tape.backward(d)?;
    let g = tape.grad_or_zeros(va);
    let mean_dx = (0..g.rows()).map(|i| g.get(i, 0)).sum::<f64>() / g.rows() as f64;
    println!("mean d(sinkhorn)/dx over the first cloud: {mean_dx:+.5} (negative: moving right closes the gap)");
    Ok(())
}
