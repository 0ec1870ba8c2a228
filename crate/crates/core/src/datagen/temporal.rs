use numgrad::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::laplace;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Structural coefficients of the temporal system. Matrices are row-major
/// `N x N` and act on row vectors (`x · B`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCoefficients {
    pub feat_dim: usize,
    pub a_x: Vec<f64>,
    pub beta_t_assign: Vec<f64>,
    pub beta_v: Vec<f64>,
    pub beta_m: Vec<f64>,
    pub beta_a: Vec<f64>,
    pub gamma_v: Vec<f64>,
    pub gamma_m: Vec<f64>,
    pub beta_y: Vec<f64>,
    pub beta_m_out: Vec<f64>,
    pub beta_a_out: Vec<f64>,
    pub beta_t_out: f64,
}

impl TemporalCoefficients {
    /// Gaussian draws with `1/N` variance for every linear map, so each
    /// block keeps unit scale as `N` changes.
    pub fn random(feat_dim: usize, seed: u64) -> Self {
        let n = feat_dim;
        let mut r = rng::stream(seed, "temporal/coef");
        let mut draw = |len: usize, sd: f64| -> Vec<f64> {
            (0..len).map(|_| sd * r.sample::<f64, _>(StandardNormal)).collect()
        };
        let unit = 1.0 / (n as f64).sqrt();
        Self {
            feat_dim: n,
            a_x: draw(n, 0.1),
            beta_t_assign: draw(n, unit),
            beta_v: draw(n * n, unit),
            beta_m: draw(n * n, unit),
            beta_a: draw(n * n, unit),
            gamma_v: draw(n, 1.0),
            gamma_m: draw(n, 0.25),
            beta_y: draw(n, unit),
            beta_m_out: draw(n, unit),
            beta_a_out: draw(n, unit),
            beta_t_out: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.feat_dim;
        let vecs = [
            ("a_x", &self.a_x),
            ("beta_t_assign", &self.beta_t_assign),
            ("gamma_v", &self.gamma_v),
            ("gamma_m", &self.gamma_m),
            ("beta_y", &self.beta_y),
            ("beta_m_out", &self.beta_m_out),
            ("beta_a_out", &self.beta_a_out),
        ];
        for (name, v) in vecs {
            if v.len() != n {
                return Err(Error::Config(format!("temporal: {name} must have {n} entries, has {}", v.len())));
            }
        }
        for (name, v) in [("beta_v", &self.beta_v), ("beta_m", &self.beta_m), ("beta_a", &self.beta_a)] {
            if v.len() != n * n {
                return Err(Error::Config(format!("temporal: {name} must have {} entries", n * n)));
            }
        }
        Ok(())
    }
}

/// Temporal causal system with a state `x`, per-step treatments and three
/// post-treatment blocks `v` (treatment-affected, outcome-irrelevant),
/// `m` (mediator) and `a` (adjustment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub n_samples: usize,
    pub feat_dim: usize,
    pub k: usize,
    pub gamma_y: f64,
    pub alpha_window: f64,
    pub c: f64,
    /// Laplace scale of the post-treatment noises in `v`, `m` and `a`.
    pub eps_u: f64,
    /// Laplace scale of the multiplicative outcome noise.
    pub outcome_noise_scale: f64,
    pub state_noise_scale: f64,
    pub assign_noise_scale: f64,
    /// Seed for the structural coefficients when `coefficients` is unset.
    pub coef_seed: u64,
    pub coefficients: Option<TemporalCoefficients>,
    pub seed: u64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            feat_dim: 5,
            k: 60,
            gamma_y: 0.99,
            alpha_window: 0.5,
            c: 1.0,
            eps_u: 1.0,
            outcome_noise_scale: 0.1,
            state_noise_scale: 0.1,
            assign_noise_scale: 0.1,
            coef_seed: 0,
            coefficients: None,
            seed: 0,
        }
    }
}

impl TemporalConfig {
    /// First step of the outcome window, `K - floor(alpha K)`.
    pub fn k0(&self) -> usize {
        self.k - (self.alpha_window * self.k as f64).floor() as usize
    }

    pub fn window_len(&self) -> usize {
        self.k - self.k0() + 1
    }

    pub fn s_dim(&self) -> usize {
        self.window_len() * 3 * self.feat_dim
    }

    pub fn coefficients(&self) -> TemporalCoefficients {
        self.coefficients
            .clone()
            .unwrap_or_else(|| TemporalCoefficients::random(self.feat_dim, self.coef_seed))
    }

    /// Noiseless treatment effect, identical for every unit.
    pub fn tau(&self) -> f64 {
        let co = self.coefficients();
        let mediated: f64 = co.gamma_m.iter().zip(&co.beta_m_out).map(|(g, b)| g * b).sum();
        (mediated + co.beta_t_out) / self.c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.feat_dim == 0 || self.k == 0 {
            return Err(Error::Config("temporal: n_samples, feat_dim and K must be positive".into()));
        }
        if !(self.alpha_window > 0.0 && self.alpha_window <= 1.0) {
            return Err(Error::Config(format!("temporal: alpha_window must lie in (0,1], got {}", self.alpha_window)));
        }
        let k0 = self.k0();
        if k0 < 1 || k0 > self.k {
            return Err(Error::Config(format!("temporal: window start {k0} outside [1, {}]", self.k)));
        }
        if !(self.gamma_y > 0.0 && self.gamma_y <= 1.0) {
            return Err(Error::Config(format!("temporal: gamma_y must lie in (0,1], got {}", self.gamma_y)));
        }
        if self.c == 0.0 || !self.c.is_finite() {
            return Err(Error::Config("temporal: C must be finite and non-zero".into()));
        }
        for (name, v) in [
            ("eps_u", self.eps_u),
            ("outcome_noise_scale", self.outcome_noise_scale),
            ("state_noise_scale", self.state_noise_scale),
            ("assign_noise_scale", self.assign_noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("temporal: {name} must be >= 0, got {v}")));
            }
        }
        if let Some(co) = &self.coefficients {
            if co.feat_dim != self.feat_dim {
                return Err(Error::Config("temporal: coefficient dimension differs from feat_dim".into()));
            }
            co.validate()?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · B` for a row vector and row-major `N x N` matrix.
fn vecmat(x: &[f64], b: &[f64], out: &mut [f64]) {
    let n = x.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, xi) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xi * b[i * n + j];
        }
    }
}

/// The sample's `x` is the final state `x_K`; `s` is `[v; m; a]` for every
/// step of the outcome window `k0..=K`, flattened step by step.
pub fn gen_temporal(cfg: &TemporalConfig) -> Result<Dataset> {
    cfg.validate()?;
    let co = cfg.coefficients();
    let n = cfg.feat_dim;
    let (k0, kk) = (cfg.k0(), cfg.k);
    let mut r = rng::stream(cfg.seed, "temporal");

    let rows = cfg.n_samples;
    let mut xs = Vec::with_capacity(rows * n);
    let mut ss = Vec::with_capacity(rows * cfg.s_dim());
    let mut ts = Vec::with_capacity(rows);
    let mut ys = Vec::with_capacity(rows);
    let mut po = [Vec::with_capacity(rows), Vec::with_capacity(rows)];

    let mut x: Vec<f64> = vec![0.0; n];
    let (mut v, mut m, mut a) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut ev, mut em, mut ea) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut window: Vec<f64> = Vec::with_capacity(cfg.s_dim());
    for _ in 0..rows {
        x.iter_mut().for_each(|xi| *xi = r.sample(StandardNormal));
        window.clear();
        // Outcome sum over the window, excluding the final step's mediator.
        let mut acc_pre = 0.0;
        let mut t_prev = 0.0;
        let mut final_t = 0u8;
        let mut final_m_base = vec![0.0; n];
        for k in 0..=kk {
            if k > 0 {
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj += co.a_x[j] * t_prev + laplace(&mut r, cfg.state_noise_scale);
                }
            }
            let logit = dot(&x, &co.beta_t_assign) + laplace(&mut r, cfg.assign_noise_scale);
            let t = u8::from(r.random::<f64>() < numgrad::sigmoid(logit));
            for j in 0..n {
                ev[j] = laplace(&mut r, cfg.eps_u);
                em[j] = laplace(&mut r, cfg.eps_u);
                ea[j] = laplace(&mut r, cfg.eps_u);
            }
            let tf = f64::from(t);
            vecmat(&x, &co.beta_v, &mut v);
            vecmat(&x, &co.beta_m, &mut m);
            vecmat(&x, &co.beta_a, &mut a);
            for j in 0..n {
                v[j] += co.gamma_v[j] * tf + ev[j];
                m[j] += em[j];
                a[j] += ea[j];
            }
            if k >= k0 {
                let w = cfg.gamma_y.powi((kk - k) as i32);
                if k < kk {
                    for j in 0..n {
                        m[j] += co.gamma_m[j] * tf;
                    }
                    acc_pre += w * (dot(&x, &co.beta_y) + dot(&m, &co.beta_m_out) + dot(&a, &co.beta_a_out));
                    window.extend_from_slice(&v);
                    window.extend_from_slice(&m);
                    window.extend_from_slice(&a);
                } else {
                    // Final step: keep the treatment-free part for replay.
                    acc_pre += dot(&x, &co.beta_y) + dot(&a, &co.beta_a_out);
                    final_m_base.copy_from_slice(&m);
                    final_t = t;
                    for j in 0..n {
                        m[j] += co.gamma_m[j] * tf;
                    }
                    window.extend_from_slice(&v);
                    window.extend_from_slice(&m);
                    window.extend_from_slice(&a);
                }
            } else {
                for j in 0..n {
                    m[j] += co.gamma_m[j] * tf;
                }
            }
            t_prev = tf;
        }
        let outcome_noise = laplace(&mut r, cfg.outcome_noise_scale);
        let replay = |arm: f64, noise: f64| -> f64 {
            let m_final: f64 = (0..n).map(|j| (final_m_base[j] + co.gamma_m[j] * arm) * co.beta_m_out[j]).sum();
            ((acc_pre + m_final) * (1.0 + noise) + arm * co.beta_t_out) / cfg.c
        };
        po[0].push(replay(0.0, 0.0));
        po[1].push(replay(1.0, 0.0));
        ys.push(replay(f64::from(final_t), outcome_noise));
        ts.push(final_t);
        xs.extend_from_slice(&x);
        ss.extend_from_slice(&window);
    }
    let [y0, y1] = po;
    Dataset::new(
        Tensor::from_vec(rows, n, xs)?,
        ts,
        Some(Tensor::from_vec(rows, cfg.s_dim(), ss)?),
        ys,
    )?
    .with_potential_outcomes(y0, y1)
}
