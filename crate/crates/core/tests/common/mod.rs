//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance runner.
//!
//! Smooth activations and a fixed RBF width keep the objectives
//! differentiable; Sinkhorn runs to a tight tolerance so the fixed-plan
//! gradient is exact.
#![allow(dead_code)]

use numgrad::{Tape, Tensor};
use pipcfr::data::Scaler;
use pipcfr::ipm::{Bandwidth, IpmConfig};
use pipcfr::losses::{self, Batch, BatchVars, KlSign, LossConfig};
use pipcfr::nets::{Activation, Architecture, Bound, Method, ModelBundle, NetId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub enum Objective {
    P,
    Kl(KlSign),
    YMmd,
    YWass,
    Pip,
    Factual,
    CfrMmd,
    CfrWass,
}

impl Objective {
    pub const ALL: [Objective; 9] = [
        Objective::P,
        Objective::Kl(KlSign::AsWritten),
        Objective::Kl(KlSign::Flipped),
        Objective::YMmd,
        Objective::YWass,
        Objective::Pip,
        Objective::Factual,
        Objective::CfrMmd,
        Objective::CfrWass,
    ];

    pub fn updates(self) -> &'static [NetId] {
        match self {
            Objective::P => losses::update_set("p"),
            Objective::Kl(_) => losses::update_set("kl"),
            Objective::YMmd | Objective::YWass => losses::update_set("y"),
            Objective::Pip | Objective::Factual | Objective::CfrMmd | Objective::CfrWass => &NetId::F,
        }
    }
}

pub fn ipm(kind_wass: bool, rng: &mut ChaCha8Rng) -> IpmConfig {
    if kind_wass {
        IpmConfig {
            sinkhorn_epsilon: rng.random_range(0.5..2.0),
            sinkhorn_iters: 5000,
            sinkhorn_tol: 1e-13,
            ..IpmConfig::wass()
        }
    } else {
        IpmConfig {
            rbf_bandwidth: Bandwidth::Fixed(rng.random_range(0.5..2.0)),
            unbiased_mmd: rng.random_bool(0.5),
            ..IpmConfig::mmd()
        }
    }
}

pub struct Case {
    pub bundle: ModelBundle,
    pub batch: Batch,
    pub cfg: LossConfig,
    pub objective: Objective,
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objective = Objective::ALL[seed as usize % Objective::ALL.len()];
    let arch = Architecture {
        rep_layers: rng.random_range(1..=2),
        rep_width: rng.random_range(2..=4),
        head_layers: rng.random_range(1..=2),
        head_width: rng.random_range(2..=4),
        eta_layers: rng.random_range(1..=2),
        eta_width: rng.random_range(2..=4),
        phi_dim: rng.random_range(1..=3),
        prop_layers: rng.random_range(1..=2),
        prop_width: rng.random_range(2..=4),
        activation: Activation::Elu,
    };
    let x_dim = rng.random_range(1..=3);
    let s_dim = rng.random_range(1..=2);
    let method = if matches!(objective, Objective::Factual | Objective::CfrMmd | Objective::CfrWass) {
        Method::CfrnetWass
    } else {
        Method::PipcfrWass
    };
    let bundle = ModelBundle::init(method, x_dim, s_dim, &arch, Scaler::identity(x_dim, s_dim), seed).unwrap();
    let n = rng.random_range(6..=10);
    let mut t: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    t[0] = 0;
    t[1] = 1;
    let mut mat = |rows: usize, cols: usize| {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    };
    let x = mat(n, x_dim);
    let s = mat(n, s_dim);
    let y = mat(n, 1).into_data();
    let wass = matches!(objective, Objective::YWass | Objective::CfrWass);
    let cfg = LossConfig {
        ipm: ipm(wass, &mut rng),
        gamma: rng.random_range(0.1..2.0),
        kl_sign: match objective {
            Objective::Kl(s) => s,
            _ => KlSign::AsWritten,
        },
        joint: false,
    };
    let batch = Batch { x, t, s: method.uses_post_treatment().then_some(s), y };
    Case { bundle, batch, cfg, objective }
}

fn value_and_grads(c: &Case, bundle: &ModelBundle, trainable: &[NetId]) -> (f64, Tape, Bound) {
    let mut tape = Tape::new();
    let nets = bundle.bind_all(&mut tape, trainable).unwrap();
    let bv = BatchVars::new(&mut tape, &c.batch).unwrap();
    let loss = match c.objective {
        Objective::P => losses::loss_p(&mut tape, &nets, &bv, &c.cfg).unwrap(),
        Objective::Kl(_) => losses::loss_kl(&mut tape, &nets, &bv, &c.cfg).unwrap(),
        Objective::YMmd | Objective::YWass => losses::loss_y(&mut tape, &nets, &bv, &c.cfg).unwrap().0,
        Objective::Pip => losses::loss_pip(&mut tape, &nets, &bv, &c.cfg).unwrap(),
        Objective::Factual => losses::loss_factual(&mut tape, &nets, &bv).unwrap(),
        Objective::CfrMmd | Objective::CfrWass => losses::loss_cfr(&mut tape, &nets, &bv, &c.cfg.ipm).unwrap().0,
    };
    let v = tape.value(loss).item().unwrap();
    if !trainable.is_empty() {
        tape.backward(loss).unwrap();
    }
    (v, tape, nets)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Worst relative error `|a - n| / max(|a|, |n|)` over the updated
/// networks of one case, with each network's gradient treated as a vector.
pub fn worst_relative_error(c: &Case) -> f64 {
    let ids = c.objective.updates();
    let (_, tape, nets) = value_and_grads(c, &c.bundle, ids);
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic: Vec<f64> = nets.grads(&tape, id).iter().flat_map(|g| g.data().to_vec()).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        let n_tensors = c.bundle.net(id).unwrap().params().len();
        for k in 0..n_tensors {
            for e in 0..c.bundle.net(id).unwrap().params()[k].len() {
                let shifted = |delta: f64| {
                    let mut b = c.bundle.clone();
                    b.net_mut(id).unwrap().params_mut()[k].data_mut()[e] += delta;
                    value_and_grads(c, &b, &[]).0
                };
                numeric.push((shifted(H) - shifted(-H)) / (2.0 * H));
            }
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale < 1e-9 { norm(&diff) } else { norm(&diff) / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Worst relative error of `ipm_tape` point gradients over `trials`
/// random point sets, alternating MMD and Sinkhorn.
pub fn ipm_point_check(trials: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for trial in 0..trials {
        let cfg = ipm(trial % 2 == 1, &mut rng);
        let dim = rng.random_range(1..=3);
        let (na, nb) = (rng.random_range(3..=7), rng.random_range(3..=7));
        let mut mat = |rows: usize| {
            Tensor::from_vec(rows, dim, (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (a, b) = (mat(na), mat(nb));
        let f = |a: &Tensor, b: &Tensor, grad: bool| {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone(), grad);
            let vb = tape.leaf(b.clone(), grad);
            let (d, _) = pipcfr::ipm::ipm_tape(&mut tape, va, vb, &cfg).unwrap();
            let v = tape.value(d).item().unwrap();
            if grad {
                tape.backward(d).unwrap();
            }
            (v, tape.grad_or_zeros(va), tape.grad_or_zeros(vb))
        };
        let (_, ga, gb) = f(&a, &b, true);
        for (which, analytic) in [(0, ga), (1, gb)] {
            let mut numeric = Vec::new();
            let base = if which == 0 { &a } else { &b };
            for e in 0..base.len() {
                let shifted = |delta: f64| {
                    let mut p = base.clone();
                    p.data_mut()[e] += delta;
                    if which == 0 { f(&p, &b, false).0 } else { f(&a, &p, false).0 }
                };
                numeric.push((shifted(H) - shifted(-H)) / (2.0 * H));
            }
            let diff: Vec<f64> = analytic.data().iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let scale = norm(analytic.data()).max(norm(&numeric)).max(1e-9);
            let rel = norm(&diff) / scale;
            if !(rel <= TOL) {
                failures.push(format!("trial {trial} set {which}: rel {rel:.2e}"));
            }
        }
    }
    failures
}

/// Failure lines of the network-gradient check over seeds `0..n`.
pub fn network_check(n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in 0..n {
        let c = case(seed);
        let rel = worst_relative_error(&c);
        if !(rel <= TOL) {
            failures.push(format!("seed {seed} {:?}: rel {rel:.2e}", c.objective));
        }
    }
    failures
}
