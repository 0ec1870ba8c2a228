//! Effect-estimation metrics, the Example-1 least-squares oracle, and the
//! IPM-versus-KL inequality check.

use std::collections::BTreeMap;

use numgrad::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::datagen::{draw_example1, Example1Config};
use crate::error::{Error, Result};
use crate::ipm::{self, Bandwidth, IpmConfig, IpmKind};
use crate::nets::ModelBundle;
use crate::rng;

/// Root-mean-square of `τ̂ - τ*` in original outcome units.
pub fn pehe(bundle: &ModelBundle, ds: &Dataset) -> Result<f64> {
    let tau = ds
        .tau_true
        .as_ref()
        .ok_or_else(|| Error::Data("pehe needs tau_true".into()))?;
    let est = bundle.predict_ite(&ds.x)?;
    pehe_from(&est, tau)
}

pub fn pehe_from(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::DimensionMismatch { what: "effect vector", expected: truth.len(), found: est.len() });
    }
    let mse = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / est.len() as f64;
    Ok(mse.sqrt())
}

/// Mean and unbiased variance of a sample.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

/// `(mean, variance)` of `f(x, 1 - t) - y_{1-t}` against the noiseless
/// potential outcomes.
pub fn counterfactual_variance(bundle: &ModelBundle, ds: &Dataset) -> Result<(f64, f64)> {
    let (Some(y0), Some(y1)) = (&ds.y0_true, &ds.y1_true) else {
        return Err(Error::Data("counterfactual variance needs both potential outcomes".into()));
    };
    let flipped: Vec<u8> = ds.t.iter().map(|t| 1 - t).collect();
    let pred = bundle.predict_f(&ds.x, &flipped)?;
    let resid: Vec<f64> = pred
        .iter()
        .zip(&flipped)
        .enumerate()
        .map(|(i, (p, &c))| p - if c == 1 { y1[i] } else { y0[i] })
        .collect();
    Ok(mean_var(&resid))
}

/// Ridge-stabilised least squares via the normal equations.
pub fn ols(design: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = design.first().map_or(0, Vec::len);
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in design.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += ridge;
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Singular("normal equations"));
        }
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * beta[j]).sum();
        beta[i] = (a[i][p] - s) / a[i][i];
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    /// Observed treatment of the units; the prediction is for `1 - arm`.
    pub arm: u8,
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub target_mean: f64,
    pub target_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub name: String,
    pub regressors: String,
    pub coefficients: Vec<f64>,
    pub arms: Vec<ArmStats>,
    pub pooled_mean: f64,
    pub pooled_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStudy {
    pub config: Example1Config,
    pub n_mc: usize,
    pub cases: Vec<OracleCase>,
}

/// Fits `Y` on `(X, T)`, `(X, T, S)` and `(X, T, u_s)`, predicts the
/// counterfactual by flipping `T` (keeping the observed `S`), and compares
/// with a fresh draw of the counterfactual outcome.
pub fn example1_oracle(cfg: &Example1Config, n_mc: usize) -> Result<OracleStudy> {
    if n_mc < 100_000 {
        return Err(Error::Config(format!("oracle needs n_mc >= 100000, got {n_mc}")));
    }
    let cfg = Example1Config { n: n_mc, ..*cfg };
    let d = draw_example1(&cfg)?;
    let mut noise = rng::stream(cfg.seed, "example1/counterfactual");
    let y_cf: Vec<f64> = (0..n_mc)
        .map(|i| {
            let c = 1.0 - f64::from(d.t[i]);
            let s_cf = d.x[i] + cfg.alpha1 * c + d.u_s[i];
            d.x[i] + cfg.alpha2 * c + s_cf + noise.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let a1 = cfg.alpha1;
    let cases: [(&str, &str, Box<dyn Fn(usize, f64) -> Vec<f64>>, [(f64, f64); 2]); 3] = [
        ("a", "1,X,T", Box::new(|i, t| vec![1.0, d.x[i], t]), [(0.0, cfg.sigma_u.powi(2) + 1.0); 2]),
        ("b", "1,X,T,S", Box::new(|i, t| vec![1.0, d.x[i], t, d.s[i]]), [(-a1, 1.0), (a1, 1.0)]),
        ("c", "1,X,T,u_s", Box::new(|i, t| vec![1.0, d.x[i], t, d.u_s[i]]), [(0.0, 1.0); 2]),
    ];
    let mut out = Vec::new();
    for (name, regs, row, targets) in cases {
        let design: Vec<Vec<f64>> = (0..n_mc).map(|i| row(i, f64::from(d.t[i]))).collect();
        let beta = ols(&design, &d.y, 1e-10)?;
        let err: Vec<f64> = (0..n_mc)
            .map(|i| {
                let r = row(i, 1.0 - f64::from(d.t[i]));
                r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() - y_cf[i]
            })
            .collect();
        let arms = (0..2u8)
            .map(|arm| {
                let e: Vec<f64> = err.iter().zip(&d.t).filter(|(_, &t)| t == arm).map(|(e, _)| *e).collect();
                let (mean, var) = mean_var(&e);
                let (tm, tv) = targets[usize::from(arm)];
                ArmStats { arm, n: e.len(), mean, var, target_mean: tm, target_var: tv }
            })
            .collect();
        let (pooled_mean, pooled_var) = mean_var(&err);
        out.push(OracleCase {
            name: name.into(),
            regressors: regs.into(),
            coefficients: beta,
            arms,
            pooled_mean,
            pooled_var,
        });
    }
    Ok(OracleStudy { config: cfg, n_mc, cases: out })
}

/// Joint samples with known treatment probabilities. `x` holds discrete
/// covariate cells; conditioning on `x` is exact within a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Sample {
    pub x: Vec<usize>,
    pub t: Vec<u8>,
    pub phi: Tensor,
    /// `P(t = 1 | x)` per sample.
    pub p_t_x: Vec<f64>,
    /// `P(t = 1 | x, φ)` per sample.
    pub p_t_x_phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Cell {
    pub x: usize,
    pub weight: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of `lhs² - rhs²`.
    pub std: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Result {
    /// `E_x` of the per-cell MMD estimate.
    pub lhs_ipm: f64,
    /// `E_x` of the per-cell bound.
    pub rhs_bound: f64,
    pub std: f64,
    pub holds: bool,
    pub cells: Vec<Prop2Cell>,
}

const PROP2_FOLDS: usize = 20;

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    // rounding can leave a tiny negative when p is close to q
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// Per covariate cell: unit-bandwidth RBF MMD between `φ | t = 0` and
/// `φ | t = 1` against `sqrt(2 / (π0 π1) E[KL(p(t|x,φ) | p(t|x))])`.
/// The comparison runs on the squared scale, where the fold-averaged
/// U-statistic is unbiased: `holds` requires `lhs² <= rhs² + 3 std` in
/// every cell.
pub fn prop2_check(sample: &Prop2Sample) -> Result<Prop2Result> {
    let n = sample.t.len();
    if sample.x.len() != n || sample.p_t_x.len() != n || sample.p_t_x_phi.len() != n || sample.phi.rows() != n {
        return Err(Error::DimensionMismatch { what: "prop2 sample columns", expected: n, found: sample.x.len() });
    }
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &x) in sample.x.iter().enumerate() {
        cells.entry(x).or_default().push(i);
    }
    let cfg = IpmConfig {
        kind: IpmKind::Mmd,
        rbf_bandwidth: Bandwidth::Fixed(1.0),
        unbiased_mmd: true,
        ..IpmConfig::default()
    };
    let mut out = Vec::new();
    for (x, idx) in cells {
        let pi1 = sample.p_t_x[idx[0]];
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::Data(format!("overlap violated in cell {x}: P(t=1|x) = {pi1}")));
        }
        let kl: Vec<f64> = idx.iter().map(|&i| bernoulli_kl(sample.p_t_x_phi[i], pi1)).collect();
        let (kl_mean, kl_var) = mean_var(&kl);
        let scale = 2.0 / (pi1 * (1.0 - pi1));
        let rhs2 = scale * kl_mean;
        let rhs2_se = scale * (kl_var / kl.len() as f64).sqrt();

        let g0: Vec<usize> = idx.iter().copied().filter(|&i| sample.t[i] == 0).collect();
        let g1: Vec<usize> = idx.iter().copied().filter(|&i| sample.t[i] == 1).collect();
        let folds = PROP2_FOLDS.min(g0.len() / 2).min(g1.len() / 2);
        if folds == 0 {
            return Err(Error::Data(format!("cell {x} needs at least two samples per treatment group")));
        }
        let mut est = Vec::with_capacity(folds);
        for f in 0..folds {
            let a: Vec<usize> = g0.iter().copied().skip(f).step_by(folds).collect();
            let b: Vec<usize> = g1.iter().copied().skip(f).step_by(folds).collect();
            est.push(ipm::mmd2(&sample.phi.select_rows(&a)?, &sample.phi.select_rows(&b)?, &cfg)?);
        }
        let (u_mean, u_var) = mean_var(&est);
        let u_se = (u_var / folds as f64).sqrt();
        let std = (u_se.powi(2) + rhs2_se.powi(2)).sqrt();
        out.push(Prop2Cell {
            x,
            weight: idx.len() as f64 / n as f64,
            lhs: u_mean.max(0.0).sqrt(),
            rhs: rhs2.sqrt(),
            std,
            holds: u_mean <= rhs2 + 3.0 * std,
        });
    }
    let wsum = |f: &dyn Fn(&Prop2Cell) -> f64| out.iter().map(|c| c.weight * f(c)).sum::<f64>();
    Ok(Prop2Result {
        lhs_ipm: wsum(&|c| c.lhs),
        rhs_bound: wsum(&|c| c.rhs),
        std: wsum(&|c| c.std.powi(2)).sqrt(),
        holds: out.iter().all(|c| c.holds),
        cells: out,
    })
}

/// Shape of a randomized check family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prop2Kind {
    /// `φ` independent of `t` within each cell.
    Independent,
    /// Gaussian `φ | t, x` with random, cell-specific means.
    Gaussian,
    /// `φ = t + N(0, 0.1²)`.
    Strong,
}

/// Random family: discrete `x` cells with random propensities and
/// `φ | t, x ~ N(μ_{t,x}, I)`.
pub fn prop2_family(kind: Prop2Kind, n: usize, seed: u64) -> Result<Prop2Sample> {
    let mut r = rng::stream(seed, "prop2");
    let n_cells = r.random_range(1..=3usize);
    let dim = r.random_range(1..=3usize);
    let pis: Vec<f64> = (0..n_cells).map(|_| r.random_range(0.2..0.8)).collect();
    let sd = if kind == Prop2Kind::Strong { 0.1 } else { 1.0 };
    let means: Vec<[Vec<f64>; 2]> = (0..n_cells)
        .map(|_| {
            let m0: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let m1: Vec<f64> = match kind {
                Prop2Kind::Independent => m0.clone(),
                Prop2Kind::Gaussian => m0.iter().map(|v| v + r.random_range(-1.5..1.5)).collect(),
                Prop2Kind::Strong => vec![1.0; dim],
            };
            let m0 = if kind == Prop2Kind::Strong { vec![0.0; dim] } else { m0 };
            [m0, m1]
        })
        .collect();
    let mut x = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n * dim);
    let mut p_t_x = Vec::with_capacity(n);
    let mut p_t_x_phi = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..n_cells);
        let ti = u8::from(r.random::<f64>() < pis[c]);
        let mu = &means[c][usize::from(ti)];
        let v: Vec<f64> = mu.iter().map(|m| m + sd * r.sample::<f64, _>(StandardNormal)).collect();
        let log_lik = |m: &[f64]| -> f64 { -m.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * sd * sd) };
        let (l0, l1) = (log_lik(&means[c][0]), log_lik(&means[c][1]));
        let logit = (pis[c] / (1.0 - pis[c])).ln() + l1 - l0;
        x.push(c);
        t.push(ti);
        phi.extend(v);
        p_t_x.push(pis[c]);
        p_t_x_phi.push(numgrad::sigmoid(logit));
    }
    Ok(Prop2Sample { x, t, phi: Tensor::from_vec(n, dim, phi)?, p_t_x, p_t_x_phi })
}

/// Metrics of one trained model on one dataset draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub pehe_in: f64,
    pub pehe_out: f64,
    pub cf_error_mean: f64,
    pub cf_error_var: f64,
}

impl SeedMetrics {
    /// `pehe_in` on the training split, the rest on the test split.
    pub fn compute(bundle: &ModelBundle, seed: u64, train: &Dataset, test: &Dataset) -> Result<Self> {
        let (cf_error_mean, cf_error_var) = counterfactual_variance(bundle, test)?;
        Ok(Self {
            seed,
            pehe_in: pehe(bundle, train)?,
            pehe_out: pehe(bundle, test)?,
            cf_error_mean,
            cf_error_var,
        })
    }
}

/// Seed-aggregated metrics of one method under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub config_fingerprint: String,
    pub pehe_in: f64,
    pub pehe_out: f64,
    pub cf_error_mean: f64,
    pub cf_error_var: f64,
    pub seeds_aggregated: usize,
    pub per_seed: Vec<SeedMetrics>,
}

/// Mean, std across runs and std of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
}

impl Spread {
    pub fn of(v: &[f64]) -> Self {
        let (mean, var) = mean_var(v);
        let std = var.sqrt();
        Self { mean, std, sem: std / (v.len() as f64).sqrt() }
    }
}

impl MetricsReport {
    pub fn aggregate(method: &str, fingerprint: &str, per_seed: Vec<SeedMetrics>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::Data("report needs at least one seed".into()));
        }
        let mean = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
        Ok(Self {
            method: method.into(),
            config_fingerprint: fingerprint.into(),
            pehe_in: mean(|m| m.pehe_in),
            pehe_out: mean(|m| m.pehe_out),
            cf_error_mean: mean(|m| m.cf_error_mean),
            cf_error_var: mean(|m| m.cf_error_var),
            seeds_aggregated: per_seed.len(),
            per_seed,
        })
    }

    pub fn spread(&self, f: fn(&SeedMetrics) -> f64) -> Spread {
        Spread::of(&self.per_seed.iter().map(f).collect::<Vec<_>>())
    }
}

fn cell(s: Spread, sem: bool) -> String {
    format!("{:.2} ± {:.2}", s.mean, if sem { s.sem } else { s.std })
}

/// Text table of `mean ± std` (across runs) and `mean ± sem` cells.
pub fn report_table(reports: &[MetricsReport]) -> String {
    let header = ["method", "runs", "PEHE in (std)", "PEHE out (std)", "PEHE in (sem)", "PEHE out (sem)", "CF var (std)"];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            let pin = r.spread(|m| m.pehe_in);
            let pout = r.spread(|m| m.pehe_out);
            [
                r.method.clone(),
                r.seeds_aggregated.to_string(),
                cell(pin, false),
                cell(pout, false),
                cell(pin, true),
                cell(pout, true),
                cell(r.spread(|m| m.cf_error_var), false),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[&str]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    out.push_str(&format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")));
    for r in &rows {
        out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pehe_hand_values() {
        assert_eq!(pehe_from(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((pehe_from(&[0.0; 4], &[-2.5; 4]).unwrap() - 2.5).abs() < 1e-15);
        assert!((pehe_from(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mean_var_uses_n_minus_one() {
        assert_eq!(mean_var(&[-1.0, 1.0]), (0.0, 2.0));
        assert_eq!(mean_var(&[4.0, 4.0]), (4.0, 0.0));
    }

    #[test]
    fn ols_recovers_exact_line() {
        let design: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 - 0.5 * i as f64).collect();
        let b = ols(&design, &y, 1e-10).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-8 && (b[1] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn ols_singular_design() {
        let design = vec![vec![0.0, 0.0]; 5];
        assert!(ols(&design, &[1.0; 5], 0.0).is_err());
    }

    #[test]
    fn oracle_rejects_small_n() {
        assert!(example1_oracle(&Example1Config::default(), 10).is_err());
    }

    #[test]
    fn kl_of_equal_bernoullis_is_zero() {
        assert_eq!(bernoulli_kl(0.3, 0.3), 0.0);
        assert!(bernoulli_kl(0.9, 0.5) > 0.0);
    }

    #[test]
    fn prop2_identical_conditionals() {
        let s = prop2_family(Prop2Kind::Independent, 2000, 1).unwrap();
        let r = prop2_check(&s).unwrap();
        assert!(r.holds);
        assert!(r.rhs_bound < 1e-6, "{r:?}");
    }

    #[test]
    fn prop2_overlap_violation() {
        let mut s = prop2_family(Prop2Kind::Gaussian, 200, 2).unwrap();
        s.p_t_x.iter_mut().for_each(|p| *p = 1.0);
        assert!(prop2_check(&s).is_err());
    }

    #[test]
    fn table_cells_have_two_decimals() {
        let seeds = (0..3)
            .map(|s| SeedMetrics { seed: s, pehe_in: 1.0 + s as f64, pehe_out: 2.0, cf_error_mean: 0.0, cf_error_var: 1.0 })
            .collect();
        let r = MetricsReport::aggregate("TARNET", "abc", seeds).unwrap();
        let t = report_table(&[r]);
        assert!(t.contains("2.00 ± 1.00"), "{t}");
        assert!(t.contains("2.00 ± 0.00"));
    }
}
