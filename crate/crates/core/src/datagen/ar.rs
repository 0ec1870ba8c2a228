use numgrad::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{laplace, last_three_mean};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Vector autoregression `s_k = C2 (base + t·shift) + A s_{k-1} + ε` with
/// `s_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    pub n_units: usize,
    pub m: usize,
    pub k: usize,
    pub c2: f64,
    /// Row-major `m x m` transfer matrix.
    pub transfer: Vec<f64>,
    pub laplace_scale: f64,
    pub seed: u64,
}

impl ArConfig {
    /// Random symmetric transfer matrix rescaled to spectral radius
    /// `radius`. Symmetry keeps `||A^k|| = radius^k`, so no transient growth.
    pub fn random_transfer(m: usize, radius: f64, seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::stream(seed, "ar/transfer");
        let g: Vec<f64> = (0..m * m).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let a: Vec<f64> = (0..m * m).map(|i| 0.5 * (g[i] + g[(i % m) * m + i / m])).collect();
        let rho = spectral_radius(&Tensor::from_vec(m, m, a.clone())?)?;
        Ok(if rho > 0.0 { a.iter().map(|v| v * radius / rho).collect() } else { a })
    }

    pub fn with_defaults(n_units: usize, m: usize, k: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            n_units,
            m,
            k,
            c2: 1.0,
            transfer: Self::random_transfer(m, 0.5, seed)?,
            laplace_scale: 1.0,
            seed,
        })
    }
}

/// Per-unit covariates, drive signals and treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ArScores {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub base: Vec<f64>,
    pub treat_shift: Vec<f64>,
}

impl ArScores {
    /// Stand-in covariates: `x ~ N(0, I)`, linear base and shift scores,
    /// logistic treatment assignment on a third projection.
    pub fn synthetic(n: usize, x_dim: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "ar/scores");
        let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| r.sample(StandardNormal)).collect() };
        let x = Tensor::from_vec(n, x_dim, normal(n * x_dim))?;
        let scale = 1.0 / (x_dim as f64).sqrt();
        let w = Tensor::from_vec(x_dim, 3, normal(x_dim * 3).iter().map(|v| v * scale).collect())?;
        let proj = x.matmul(&w)?;
        let mut r = rng::stream(seed, "ar/assign");
        let t = (0..n)
            .map(|i| u8::from(r.random::<f64>() < numgrad::sigmoid(proj.get(i, 2))))
            .collect();
        Ok(Self {
            base: (0..n).map(|i| proj.get(i, 0)).collect(),
            treat_shift: (0..n).map(|i| 1.0 + proj.get(i, 1).abs()).collect(),
            x,
            t,
        })
    }
}

/// `lim ||A^k||^(1/k)` evaluated by repeated squaring with renormalisation.
pub fn spectral_radius(a: &Tensor) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            what: "transfer matrix columns",
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let frob = |m: &Tensor| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut log_rho = 0.0;
    let mut weight = 1.0;
    let mut b = a.clone();
    for _ in 0..40 {
        let n = frob(&b);
        if n == 0.0 {
            return Ok(0.0);
        }
        log_rho += weight * n.ln();
        b = b.map(|v| v / n);
        b = b.matmul(&b)?;
        weight *= 0.5;
    }
    Ok(log_rho.exp())
}

pub fn gen_ar(cfg: &ArConfig, scores: &ArScores) -> Result<Dataset> {
    let m = cfg.m;
    if cfg.k < 3 {
        return Err(Error::Config(format!("ar: K must be >= 3, got {}", cfg.k)));
    }
    if cfg.transfer.len() != m * m || m == 0 {
        return Err(Error::Config(format!("ar: transfer matrix must have {} entries", m * m)));
    }
    let a = Tensor::from_vec(m, m, cfg.transfer.clone())?;
    let rho = spectral_radius(&a)?;
    if rho >= 0.9 {
        return Err(Error::Config(format!("ar: spectral radius {rho:.4} must be < 0.9")));
    }
    let n = cfg.n_units;
    if scores.x.rows() != n || scores.t.len() != n || scores.base.len() != n || scores.treat_shift.len() != n {
        return Err(Error::DimensionMismatch {
            what: "ar scores",
            expected: n,
            found: scores.x.rows(),
        });
    }
    let mut r = rng::stream(cfg.seed, "ar");
    let mut s = Vec::with_capacity(n * cfg.k * m);
    let mut y = Vec::with_capacity(n);
    let mut po = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let noise: Vec<Vec<f64>> = (0..cfg.k)
            .map(|_| (0..m).map(|_| laplace(&mut r, cfg.laplace_scale)).collect())
            .collect();
        let replay = |arm: f64| -> Vec<Vec<f64>> {
            let drive = cfg.c2 * (scores.base[i] + arm * scores.treat_shift[i]);
            let mut prev = vec![0.0; m];
            let mut traj = Vec::with_capacity(cfg.k);
            for eps in &noise {
                let next: Vec<f64> = (0..m)
                    .map(|row| {
                        let ar: f64 = (0..m).map(|c| cfg.transfer[row * m + c] * prev[c]).sum();
                        drive + ar + eps[row]
                    })
                    .collect();
                traj.push(next.clone());
                prev = next;
            }
            traj
        };
        let trajs = [replay(0.0), replay(1.0)];
        for arm in 0..2 {
            po[arm].push(last_three_mean(&trajs[arm]));
        }
        let obs = usize::from(scores.t[i]);
        y.push(po[obs][i]);
        s.extend(trajs[obs].iter().flatten());
    }
    let [y0, y1] = po;
    Dataset::new(scores.x.clone(), scores.t.clone(), Some(Tensor::from_vec(n, cfg.k * m, s)?), y)?
        .with_potential_outcomes(y0, y1)
}
