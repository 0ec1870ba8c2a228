use numgrad::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ipm::{self, IpmConfig};
use crate::nets::ModelBundle;

/// Cap on per-group points fed to the pooled `φ` distance.
const IPM_SUBSAMPLE: usize = 2000;

/// Empirical error functionals in original outcome units. The `se_*`
/// fields are standard errors of the corresponding Monte-Carlo means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Diagnostics {
    pub n: usize,
    pub eps_F: f64,
    pub eps_CF: f64,
    pub eps_CF_tilde: f64,
    pub eps_CF_ddot: f64,
    pub eps_ITE: f64,
    pub eps_PIP: f64,
    pub ipm_phi: f64,
    pub Q0: f64,
    pub Q1: f64,
    pub bound_gap: f64,
    /// `Ê[r_t r_{1-t}]`.
    pub cross: f64,
    pub delta: f64,
    pub se_eps_F: f64,
    pub se_eps_CF: f64,
    pub se_eps_CF_tilde: f64,
    pub se_eps_CF_ddot: f64,
    pub se_eps_ITE: f64,
    pub se_eps_PIP: f64,
    pub se_cross: f64,
}

impl Diagnostics {
    /// `ε_F + ε_CF - 2 Ê[r_t r_{1-t}]`.
    pub fn decomposition(&self) -> f64 {
        self.eps_F + self.eps_CF - 2.0 * self.cross
    }

    /// Decomposition agrees with `ε_ITE` within `k` standard errors.
    pub fn decomposition_holds(&self, k: f64) -> bool {
        (self.eps_ITE - self.decomposition()).abs() <= k * self.se_eps_ITE
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn group_mean(v: &[f64], t: &[u8], arm: u8) -> f64 {
    let (s, c) = v.iter().zip(t).filter(|(_, &ti)| ti == arm).fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
    if c == 0 { 0.0 } else { s / c as f64 }
}

/// Residual functionals of a pseudo-outcome bundle against the noiseless
/// potential outcomes of `ds` (raw units).
pub fn diagnostics(bundle: &ModelBundle, ds: &Dataset) -> Result<Diagnostics> {
    let (Some(y0), Some(y1)) = (&ds.y0_true, &ds.y1_true) else {
        return Err(Error::Data("diagnostics need noiseless potential outcomes".into()));
    };
    let s = ds
        .s
        .as_ref()
        .ok_or_else(|| Error::Data("diagnostics need post-treatment variables".into()))?;
    let n = ds.len();
    let zeros = vec![0u8; n];
    let ones = vec![1u8; n];
    let f = [bundle.predict_f(&ds.x, &zeros)?, bundle.predict_f(&ds.x, &ones)?];
    let q = [bundle.predict_q(&ds.x, &zeros, s)?, bundle.predict_q(&ds.x, &ones, s)?];
    let fs = [y0, y1];

    let mut e_f = Vec::with_capacity(n);
    let mut e_cf = Vec::with_capacity(n);
    let mut e_cft = Vec::with_capacity(n);
    let mut e_cfd = Vec::with_capacity(n);
    let mut e_ite = Vec::with_capacity(n);
    let mut e_pip = Vec::with_capacity(n);
    let mut cross = Vec::with_capacity(n);
    let mut r_rdd = Vec::with_capacity(n);
    for i in 0..n {
        let t = usize::from(ds.t[i]);
        let c = 1 - t;
        let r = |a: usize| f[a][i] - fs[a][i];
        let r_tilde_c = q[c][i] - fs[c][i];
        let r_ddot_c = f[c][i] - q[c][i];
        e_f.push(r(t).powi(2));
        e_cf.push(r(c).powi(2));
        e_cft.push(r_tilde_c.powi(2));
        e_cfd.push(r_ddot_c.powi(2));
        e_ite.push((r(1) - r(0)).powi(2));
        e_pip.push((r(t) - r_ddot_c).powi(2));
        cross.push(r(t) * r(c));
        r_rdd.push(r(t) * r_ddot_c);
    }
    let (eps_f, se_f) = mean_se(&e_f);
    let (eps_cf, se_cf) = mean_se(&e_cf);
    let (eps_cft, se_cft) = mean_se(&e_cft);
    let (eps_cfd, se_cfd) = mean_se(&e_cfd);
    let (eps_ite, se_ite) = mean_se(&e_ite);
    let (eps_pip, se_pip) = mean_se(&e_pip);
    let (cross_m, se_cross) = mean_se(&cross);

    let q_t = [group_mean(&e_cft, &ds.t, 0), group_mean(&e_cft, &ds.t, 1)];
    let eps_f_t = [group_mean(&e_f, &ds.t, 0), group_mean(&e_f, &ds.t, 1)];
    let u1 = ds.treated_fraction();
    let u = [1.0 - u1, u1];

    let phi = bundle.phi(s)?;
    let pick = |arm: u8| -> Result<Tensor> {
        let idx: Vec<usize> = (0..n).filter(|&i| ds.t[i] == arm).take(IPM_SUBSAMPLE).collect();
        Ok(phi.select_rows(&idx)?)
    };
    let ipm_phi = if u1 > 0.0 && u1 < 1.0 {
        ipm::mmd_from_samples_conditional(&pick(0)?, &pick(1)?, &IpmConfig::mmd())?.max(0.0).sqrt()
    } else {
        0.0
    };

    let delta = if eps_cft > 0.0 { (r_rdd.iter().sum::<f64>() / n as f64 / eps_cft).max(0.0) } else { 0.0 };
    let rhs = eps_pip
        + ipm_phi
        + (2.0 * delta + 1.0) * eps_cft
        + 2.0 * (0..2).map(|a| u[a] * (eps_f_t[a] * q_t[a]).sqrt()).sum::<f64>();

    Ok(Diagnostics {
        n,
        eps_F: eps_f,
        eps_CF: eps_cf,
        eps_CF_tilde: eps_cft,
        eps_CF_ddot: eps_cfd,
        eps_ITE: eps_ite,
        eps_PIP: eps_pip,
        ipm_phi,
        Q0: q_t[0],
        Q1: q_t[1],
        bound_gap: rhs - eps_ite,
        cross: cross_m,
        delta,
        se_eps_F: se_f,
        se_eps_CF: se_cf,
        se_eps_CF_tilde: se_cft,
        se_eps_CF_ddot: se_cfd,
        se_eps_ITE: se_ite,
        se_eps_PIP: se_pip,
        se_cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scaler;
    use crate::datagen::{gen_example1, Example1Config};
    use crate::nets::{Architecture, Method, NetId};

    fn small() -> Architecture {
        Architecture { rep_width: 4, head_width: 4, eta_width: 4, phi_dim: 2, prop_width: 4, ..Architecture::default() }
    }

    #[test]
    fn decomposition_is_exact_per_sample() {
        let ds = gen_example1(&Example1Config { n: 500, ..Default::default() }).unwrap();
        let b = ModelBundle::init(Method::PipcfrMmd, 1, 1, &small(), Scaler::identity(1, 1), 3).unwrap();
        let d = diagnostics(&b, &ds).unwrap();
        assert!((d.eps_ITE - d.decomposition()).abs() < 1e-9);
        assert!(d.decomposition_holds(3.0));
        assert!(d.eps_F > 0.0 && d.eps_CF > 0.0);
    }

    #[test]
    fn perfect_outcome_model_has_zero_errors() {
        let mut ds = gen_example1(&Example1Config { n: 50, ..Default::default() }).unwrap();
        let x: Vec<f64> = ds.x.data().to_vec();
        ds.y0_true = Some(x.iter().map(|v| 2.0 * v).collect());
        ds.y1_true = Some(x.iter().map(|v| 2.0 * v + 3.0).collect());
        let mut b = ModelBundle::init(Method::PipcfrMmd, 1, 1, &small(), Scaler::identity(1, 1), 3).unwrap();
        for id in [NetId::FTrunk, NetId::F0, NetId::F1] {
            for p in b.net_mut(id).unwrap().params_mut() {
                p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // trunk: relu(x), relu(-x) through identity-like weights; heads recombine.
        b.f_trunk.weights[0].set(0, 0, 1.0);
        b.f_trunk.weights[0].set(0, 1, -1.0);
        for w in &mut b.f_trunk.weights[1..] {
            w.set(0, 0, 1.0);
            w.set(1, 1, 1.0);
        }
        for (head, level) in [(&mut b.f0, 0.0), (&mut b.f1, 3.0)] {
            let last = head.weights.len() - 1;
            for w in &mut head.weights[..last] {
                w.set(0, 0, 1.0);
                w.set(1, 1, 1.0);
            }
            head.weights[last].set(0, 0, 2.0);
            head.weights[last].set(1, 0, -2.0);
            head.biases[last].data_mut()[0] = level;
        }
        let d = diagnostics(&b, &ds).unwrap();
        assert!(d.eps_F < 1e-20 && d.eps_CF < 1e-20 && d.eps_ITE < 1e-20, "{d:?}");
    }

    #[test]
    fn missing_truth_is_an_error() {
        let mut ds = gen_example1(&Example1Config { n: 20, ..Default::default() }).unwrap();
        ds.y0_true = None;
        ds.y1_true = None;
        let b = ModelBundle::init(Method::PipcfrMmd, 1, 1, &small(), Scaler::identity(1, 1), 3).unwrap();
        assert!(diagnostics(&b, &ds).is_err());
    }
}
