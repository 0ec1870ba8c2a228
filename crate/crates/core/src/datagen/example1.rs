use numgrad::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// The linear SEM with one exogenous post-treatment noise `u_s`:
///
/// ```text
/// X ~ N(0, σx²), T* = X + N(0, σt²), T = 1(T* > 0)
/// u_s ~ N(0, σu²), S = X + α1 T + u_s, Y = X + α2 T + S + N(0, 1)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Config {
    pub sigma_x: f64,
    pub sigma_t: f64,
    pub sigma_u: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for Example1Config {
    fn default() -> Self {
        Self {
            sigma_x: 1.0,
            sigma_t: 1.0,
            sigma_u: 1.0,
            alpha1: 2.0,
            alpha2: 1.0,
            n: 1000,
            seed: 0,
        }
    }
}

impl Example1Config {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("example1: n must be positive".into()));
        }
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_t", self.sigma_t),
            ("sigma_u", self.sigma_u),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("example1: {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Raw columns of one Example-1 draw, kept separate for the OLS oracle.
#[derive(Debug, Clone)]
pub(crate) struct Example1Draw {
    pub x: Vec<f64>,
    pub t: Vec<u8>,
    pub u_s: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

pub(crate) fn draw_example1(cfg: &Example1Config) -> Result<Example1Draw> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, "example1");
    let n = cfg.n;
    let mut d = Example1Draw {
        x: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        u_s: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let z: [f64; 4] = [
            r.sample(StandardNormal),
            r.sample(StandardNormal),
            r.sample(StandardNormal),
            r.sample(StandardNormal),
        ];
        let x = cfg.sigma_x * z[0];
        let t_star = x + cfg.sigma_t * z[1];
        let t = u8::from(t_star > 0.0);
        let u_s = cfg.sigma_u * z[2];
        let s = x + cfg.alpha1 * f64::from(t) + u_s;
        let y = x + cfg.alpha2 * f64::from(t) + s + z[3];
        d.x.push(x);
        d.t.push(t);
        d.u_s.push(u_s);
        d.s.push(s);
        d.y.push(y);
    }
    Ok(d)
}

/// Draws the SEM. `u_s` is recorded next to `s`; the noiseless potential
/// outcomes are `2X + (α1 + α2) t + u_s`, so `tau_true = α1 + α2`.
pub fn gen_example1(cfg: &Example1Config) -> Result<Dataset> {
    let d = draw_example1(cfg)?;
    let n = cfg.n;
    let po = |t: f64| -> Vec<f64> {
        d.x.iter()
            .zip(&d.u_s)
            .map(|(x, u)| 2.0 * x + (cfg.alpha1 + cfg.alpha2) * t + u)
            .collect()
    };
    let (y0, y1) = (po(0.0), po(1.0));
    let mut ds = Dataset::new(
        Tensor::from_vec(n, 1, d.x.clone())?,
        d.t.clone(),
        Some(Tensor::from_vec(n, 1, d.s.clone())?),
        d.y.clone(),
    )?
    .with_potential_outcomes(y0, y1)?;
    ds.u_s = Some(d.u_s);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_is_alpha_sum() {
        let ds = gen_example1(&Example1Config { n: 500, ..Default::default() }).unwrap();
        assert!(ds.tau_true.unwrap().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn balanced_assignment_when_x_vanishes() {
        let cfg = Example1Config {
            sigma_x: 1e-9,
            sigma_t: 1e-9,
            n: 100_000,
            ..Default::default()
        };
        let ds = gen_example1(&cfg).unwrap();
        assert!((ds.treated_fraction() - 0.5).abs() < 0.01);
    }

    #[test]
    fn post_treatment_noise_is_centered() {
        let cfg = Example1Config { n: 50_000, sigma_u: 2.0, ..Default::default() };
        let ds = gen_example1(&cfg).unwrap();
        let s = ds.s.as_ref().unwrap();
        let mean = (0..cfg.n)
            .map(|i| s.get(i, 0) - ds.x.get(i, 0) - cfg.alpha1 * f64::from(ds.t[i]))
            .sum::<f64>()
            / cfg.n as f64;
        assert!(mean.abs() < 3.0 * cfg.sigma_u / (cfg.n as f64).sqrt());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(gen_example1(&Example1Config { n: 0, ..Default::default() }).is_err());
        assert!(gen_example1(&Example1Config { sigma_u: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn observed_outcome_is_factual_potential_outcome_plus_noise() {
        let ds = gen_example1(&Example1Config { n: 20_000, ..Default::default() }).unwrap();
        let (y0, y1) = (ds.y0_true.as_ref().unwrap(), ds.y1_true.as_ref().unwrap());
        let resid: Vec<f64> = (0..ds.len())
            .map(|i| ds.y[i] - if ds.t[i] == 1 { y1[i] } else { y0[i] })
            .collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
