use numgrad::Tensor;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{laplace, last_three_mean};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Finite distribution over coefficient values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpec {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DiscreteSpec {
    pub fn control_default() -> Self {
        Self {
            values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            probs: vec![0.5, 0.2, 0.15, 0.1, 0.05],
        }
    }

    pub fn treated_default() -> Self {
        Self {
            values: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            probs: vec![0.2; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::Config("discrete spec: values and probs must match".into()));
        }
        if self.probs.iter().any(|p| *p < 0.0) || (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "discrete spec: probabilities must be non-negative and sum to 1, got {:?}",
                self.probs
            )));
        }
        Ok(())
    }

    /// `rows x cols` matrix of i.i.d. draws.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> Result<Tensor> {
        self.validate()?;
        let w = WeightedIndex::new(&self.probs)
            .map_err(|e| Error::Config(format!("discrete spec: {e}")))?;
        let data = (0..rows * cols).map(|_| self.values[w.sample(rng)]).collect();
        Ok(Tensor::from_vec(rows, cols, data)?)
    }
}

/// Time series of post-treatment variables driven by covariates and the
/// running mean of earlier steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub n_units: usize,
    pub x_dim: usize,
    pub m: usize,
    pub k: usize,
    pub c1: f64,
    pub beta0_spec: DiscreteSpec,
    pub beta1_spec: DiscreteSpec,
    pub laplace_scale: f64,
    /// Treatment probability for the stand-in covariates.
    pub treat_prob: f64,
    pub seed: u64,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            n_units: 747,
            x_dim: 25,
            m: 4,
            k: 10,
            c1: 0.5,
            beta0_spec: DiscreteSpec::control_default(),
            beta1_spec: DiscreteSpec::treated_default(),
            laplace_scale: 1.0,
            treat_prob: 0.19,
            seed: 0,
        }
    }
}

/// Generates the sequence dataset. When `x` is `None`, covariates are drawn
/// standard normal and treatment is Bernoulli(`treat_prob`) tilted by the
/// first covariate. `s` holds the flattened `K x m` trajectory.
pub fn gen_sequential(cfg: &SequentialConfig, x: Option<(&Tensor, &[u8])>) -> Result<Dataset> {
    if cfg.k < 3 {
        return Err(Error::Config(format!("sequential: K must be >= 3, got {}", cfg.k)));
    }
    if cfg.n_units == 0 || cfg.x_dim == 0 || cfg.m == 0 {
        return Err(Error::Config("sequential: dimensions must be positive".into()));
    }
    if !(cfg.laplace_scale >= 0.0) {
        return Err(Error::Config("sequential: laplace_scale must be >= 0".into()));
    }
    let mut coef_rng = rng::stream(cfg.seed, "sequential/coef");
    let beta = [
        cfg.beta0_spec.sample_matrix(cfg.x_dim, cfg.m, &mut coef_rng)?,
        cfg.beta1_spec.sample_matrix(cfg.x_dim, cfg.m, &mut coef_rng)?,
    ];
    let mut r = rng::stream(cfg.seed, "sequential");
    let (x, t) = match x {
        Some((x, t)) => {
            if x.rows() != cfg.n_units || t.len() != cfg.n_units || x.cols() != cfg.x_dim {
                return Err(Error::DimensionMismatch {
                    what: "sequential covariates",
                    expected: cfg.n_units,
                    found: x.rows(),
                });
            }
            (x.clone(), t.to_vec())
        }
        None => {
            let data: Vec<f64> = (0..cfg.n_units * cfg.x_dim).map(|_| r.sample(StandardNormal)).collect();
            let x = Tensor::from_vec(cfg.n_units, cfg.x_dim, data)?;
            let logit0 = (cfg.treat_prob / (1.0 - cfg.treat_prob)).ln();
            let t = (0..cfg.n_units)
                .map(|i| u8::from(r.random::<f64>() < numgrad::sigmoid(logit0 + x.get(i, 0))))
                .collect();
            (x, t)
        }
    };
    let xb = [x.matmul(&beta[0])?, x.matmul(&beta[1])?];

    let n = cfg.n_units;
    let mut s = Vec::with_capacity(n * cfg.k * cfg.m);
    let mut y = Vec::with_capacity(n);
    let mut po = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let init: Vec<f64> = (0..cfg.m).map(|_| r.sample(StandardNormal)).collect();
        let noise: Vec<Vec<f64>> = (1..cfg.k)
            .map(|_| (0..cfg.m).map(|_| laplace(&mut r, cfg.laplace_scale)).collect())
            .collect();
        let replay = |arm: usize| -> Vec<Vec<f64>> {
            let mut traj = vec![init.clone()];
            let mut running = init.clone();
            for k in 1..cfg.k {
                let step: Vec<f64> = (0..cfg.m)
                    .map(|j| xb[arm].get(i, j) + cfg.c1 / k as f64 * running[j] + noise[k - 1][j])
                    .collect();
                running.iter_mut().zip(&step).for_each(|(a, b)| *a += b);
                traj.push(step);
            }
            traj
        };
        let trajs = [replay(0), replay(1)];
        for arm in 0..2 {
            po[arm].push(last_three_mean(&trajs[arm]));
        }
        let obs = usize::from(t[i]);
        y.push(po[obs][i]);
        s.extend(trajs[obs].iter().flatten());
    }
    let [y0, y1] = po;
    Dataset::new(x, t, Some(Tensor::from_vec(n, cfg.k * cfg.m, s)?), y)?.with_potential_outcomes(y0, y1)
}
