//! Two-sample distances between point clouds: RBF-kernel MMD and entropic
//! optimal transport solved with log-domain Sinkhorn iterations.

use numgrad::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpmKind {
    Mmd,
    Wass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `σ² = median` of pooled pairwise squared distances.
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmConfig {
    pub kind: IpmKind,
    pub rbf_bandwidth: Bandwidth,
    /// U-statistic instead of the (non-negative) V-statistic.
    pub unbiased_mmd: bool,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for IpmConfig {
    fn default() -> Self {
        Self {
            kind: IpmKind::Wass,
            rbf_bandwidth: Bandwidth::MedianHeuristic,
            unbiased_mmd: false,
            sinkhorn_epsilon: 0.1,
            sinkhorn_iters: 100,
            sinkhorn_tol: 1e-4,
        }
    }
}

impl IpmConfig {
    pub fn mmd() -> Self {
        Self { kind: IpmKind::Mmd, ..Self::default() }
    }

    pub fn wass() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sinkhorn_epsilon > 0.0) {
            return Err(Error::Config(format!("sinkhorn_epsilon must be > 0, got {}", self.sinkhorn_epsilon)));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be >= 1".into()));
        }
        if let Bandwidth::Fixed(s) = self.rbf_bandwidth {
            if !(s > 0.0) {
                return Err(Error::Config(format!("rbf bandwidth must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

fn check_sets(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            what: "point set dimension",
            expected: a.cols(),
            found: b.cols(),
        });
    }
    Ok(())
}

/// Kernel width `σ` for the pooled sample.
pub fn bandwidth(a: &Tensor, b: &Tensor, choice: Bandwidth) -> Result<f64> {
    match choice {
        Bandwidth::Fixed(s) => Ok(s),
        Bandwidth::MedianHeuristic => {
            let pooled = Tensor::from_vec(
                a.rows() + b.rows(),
                a.cols(),
                a.data().iter().chain(b.data()).copied().collect(),
            )?;
            let d = numgrad::sq_dist(&pooled, &pooled)?;
            let n = pooled.rows();
            let mut upper: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
            if upper.is_empty() {
                return Ok(1.0);
            }
            let mid = upper.len() / 2;
            let (_, med, _) = upper.select_nth_unstable_by(mid, f64::total_cmp);
            Ok(if *med > 1e-12 { med.sqrt() } else { 1.0 })
        }
    }
}

/// Squared MMD with `k(a, b) = exp(-|a - b|² / (2σ²))`.
pub fn mmd2(a: &Tensor, b: &Tensor, cfg: &IpmConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = mmd2_tape(&mut tape, va, vb, cfg)?;
    Ok(tape.value(out).item()?)
}

/// Differentiable MMD². The bandwidth is a constant of the current values.
pub fn mmd2_tape(tape: &mut Tape, a: Var, b: Var, cfg: &IpmConfig) -> Result<Var> {
    let (ta, tb) = (tape.value(a).clone(), tape.value(b).clone());
    check_sets(&ta, &tb)?;
    let sigma = bandwidth(&ta, &tb, cfg.rbf_bandwidth)?;
    let gamma = -1.0 / (2.0 * sigma * sigma);
    let (n, m) = (ta.rows() as f64, tb.rows() as f64);
    let mut block = |x: Var, y: Var, same: bool, count: f64| -> Result<Var> {
        let d = tape.sq_dist(x, y)?;
        let k = tape.scale(d, gamma);
        let k = tape.exp(k);
        let s = tape.sum(k);
        if same && cfg.unbiased_mmd {
            if count < 2.0 {
                return Err(Error::Data("unbiased MMD needs at least two points per set".into()));
            }
            let s = tape.add_scalar(s, -count);
            Ok(tape.scale(s, 1.0 / (count * (count - 1.0))))
        } else {
            let denom = if same { count * count } else { n * m };
            Ok(tape.scale(s, 1.0 / denom))
        }
    };
    let kaa = block(a, a, true, n)?;
    let kbb = block(b, b, true, m)?;
    let kab = block(a, b, false, 0.0)?;
    let kab = tape.scale(kab, -2.0);
    let s = tape.add(kaa, kbb)?;
    Ok(tape.add(s, kab)?)
}

/// Outcome of a Sinkhorn solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// `<P, C> + ε KL(P | a ⊗ b)`, the entropic transport cost.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// L1 violation of the row marginal at exit.
    pub marginal_error: f64,
    #[serde(skip)]
    pub plan: Option<Tensor>,
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Uniform-marginal entropic OT with squared-Euclidean cost.
pub fn sinkhorn(a: &Tensor, b: &Tensor, cfg: &IpmConfig) -> Result<SinkhornResult> {
    check_sets(a, b)?;
    cfg.validate()?;
    let cost = numgrad::sq_dist(a, b)?;
    Ok(sinkhorn_cost(&cost, cfg))
}

fn sinkhorn_cost(cost: &Tensor, cfg: &IpmConfig) -> SinkhornResult {
    let (n, m) = (cost.rows(), cost.cols());
    let eps = cfg.sinkhorn_epsilon;
    let (log_mu, log_nu) = (-(n as f64).ln(), -(m as f64).ln());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let c = cost.data();
    let mut converged = false;
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut row_buf = vec![0.0; m];
    let mut col_buf = vec![0.0; n];
    for it in 0..cfg.sinkhorn_iters {
        iterations = it + 1;
        for i in 0..n {
            for j in 0..m {
                row_buf[j] = (g[j] - c[i * m + j]) / eps + log_nu;
            }
            f[i] = -eps * log_sum_exp(row_buf.iter().copied());
        }
        for j in 0..m {
            for i in 0..n {
                col_buf[i] = (f[i] - c[i * m + j]) / eps + log_mu;
            }
            g[j] = -eps * log_sum_exp(col_buf.iter().copied());
        }
        // Columns are exact after the g-update; measure the rows.
        marginal_error = (0..n)
            .map(|i| {
                let row: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - c[i * m + j]) / eps + log_mu + log_nu).exp())
                    .sum();
                (row - 1.0 / n as f64).abs()
            })
            .sum();
        if marginal_error < cfg.sinkhorn_tol {
            converged = true;
            break;
        }
    }
    let mut plan = Tensor::zeros(n, m);
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let lp = (f[i] + g[j] - c[i * m + j]) / eps + log_mu + log_nu;
            let p = lp.exp();
            plan.set(i, j, p);
            if p > 0.0 {
                value += p * (c[i * m + j] + eps * (lp - log_mu - log_nu));
            }
        }
    }
    SinkhornResult {
        value: value.max(0.0),
        converged,
        iterations,
        marginal_error,
        plan: Some(plan),
    }
}

/// Differentiable Sinkhorn cost. The gradient holds the plan fixed, which
/// is exact for the converged entropic objective.
pub fn sinkhorn_tape(tape: &mut Tape, a: Var, b: Var, cfg: &IpmConfig) -> Result<(Var, SinkhornResult)> {
    check_sets(tape.value(a), tape.value(b))?;
    cfg.validate()?;
    let c = tape.sq_dist(a, b)?;
    let mut res = sinkhorn_cost(tape.value(c), cfg);
    let plan = res.plan.take().expect("plan is always produced");
    let transport: f64 = plan.data().iter().zip(tape.value(c).data()).map(|(p, c)| p * c).sum();
    let p = tape.constant(plan);
    let pc = tape.mul(c, p)?;
    let s = tape.sum(pc);
    Ok((tape.add_scalar(s, res.value - transport), res))
}

/// Configured distance, as a plain value.
pub fn ipm(a: &Tensor, b: &Tensor, cfg: &IpmConfig) -> Result<f64> {
    match cfg.kind {
        IpmKind::Mmd => mmd2(a, b, cfg),
        IpmKind::Wass => Ok(sinkhorn(a, b, cfg)?.value),
    }
}

/// Configured distance on the tape. The flag reports Sinkhorn convergence
/// and is always true for MMD.
pub fn ipm_tape(tape: &mut Tape, a: Var, b: Var, cfg: &IpmConfig) -> Result<(Var, bool)> {
    match cfg.kind {
        IpmKind::Mmd => Ok((mmd2_tape(tape, a, b, cfg)?, true)),
        IpmKind::Wass => {
            let (v, res) = sinkhorn_tape(tape, a, b, cfg)?;
            Ok((v, res.converged))
        }
    }
}

/// Unconditional distance between pooled `φ` samples of the two groups.
/// Used as a stand-in for the covariate-averaged conditional distance.
pub fn mmd_from_samples_conditional(phi0: &Tensor, phi1: &Tensor, cfg: &IpmConfig) -> Result<f64> {
    ipm(phi0, phi1, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pts(rows: &[f64]) -> Tensor {
        Tensor::column(rows.to_vec()).unwrap()
    }

    fn fixed(s: f64) -> IpmConfig {
        IpmConfig { kind: IpmKind::Mmd, rbf_bandwidth: Bandwidth::Fixed(s), ..IpmConfig::default() }
    }

    fn normal(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Tensor {
        pts(&(0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
    }

    #[test]
    fn mmd_singletons() {
        let v = mmd2(&pts(&[0.0]), &pts(&[1.0]), &fixed(1.0)).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.786939).abs() < 1e-6);
    }

    #[test]
    fn mmd_identity_and_symmetry() {
        let a = pts(&[0.3, -1.0, 2.0]);
        let b = pts(&[2.0, 0.3, -1.0]);
        assert!(mmd2(&a, &b, &IpmConfig::mmd()).unwrap().abs() < 1e-12);
        let c = pts(&[0.0, 5.0]);
        let cfg = IpmConfig::mmd();
        assert_eq!(mmd2(&a, &c, &cfg).unwrap(), mmd2(&c, &a, &cfg).unwrap());
    }

    #[test]
    fn mmd_rejects_mismatched_dims() {
        let a = Tensor::zeros(2, 2);
        let b = Tensor::zeros(2, 3);
        assert!(mmd2(&a, &b, &IpmConfig::mmd()).is_err());
    }

    #[test]
    fn sinkhorn_singletons() {
        let cfg = IpmConfig::wass();
        assert_eq!(sinkhorn(&pts(&[1.0]), &pts(&[1.0]), &cfg).unwrap().value, 0.0);
        let d: f64 = 3.0;
        let cfg = IpmConfig { sinkhorn_epsilon: 1e-3 * d * d, ..IpmConfig::wass() };
        let v = sinkhorn(&pts(&[0.0]), &pts(&[d]), &cfg).unwrap().value;
        assert!((v - d * d).abs() / (d * d) < 0.01, "{v}");
    }

    #[test]
    fn sinkhorn_symmetric_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = normal(20, 0.0, &mut rng);
        let b = normal(20, 1.0, &mut rng);
        let cfg = IpmConfig { sinkhorn_iters: 2000, sinkhorn_tol: 1e-10, ..IpmConfig::wass() };
        let ab = sinkhorn(&a, &b, &cfg).unwrap();
        let ba = sinkhorn(&b, &a, &cfg).unwrap();
        assert!(ab.converged && ab.value >= 0.0);
        assert!((ab.value - ba.value).abs() < 1e-8);
    }

    #[test]
    fn sinkhorn_flags_non_convergence() {
        let a = pts(&[0.0, 1.0, 4.0]);
        let b = pts(&[10.0, 2.0]);
        let cfg = IpmConfig { sinkhorn_epsilon: 0.01, sinkhorn_iters: 1, sinkhorn_tol: 1e-12, ..IpmConfig::wass() };
        let r = sinkhorn(&a, &b, &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.value.is_finite());
    }

    #[test]
    fn conditional_proxy_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = normal(2000, 0.0, &mut rng);
        let b = normal(2000, 0.0, &mut rng);
        assert!(mmd_from_samples_conditional(&a, &b, &fixed(1.0)).unwrap() < 0.01);
        let c = normal(500, 2.0, &mut rng);
        assert!(mmd_from_samples_conditional(&a, &c, &fixed(1.0)).unwrap() > 0.2);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = normal(30, 0.0, &mut rng);
        let b = normal(25, 0.5, &mut rng);
        let perm: Vec<usize> = (0..30).rev().collect();
        let ap = a.select_rows(&perm).unwrap();
        for cfg in [IpmConfig::mmd(), IpmConfig::wass()] {
            let x = ipm(&a, &b, &cfg).unwrap();
            let y = ipm(&ap, &b, &cfg).unwrap();
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn unbiased_mmd_centers_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = IpmConfig { unbiased_mmd: true, ..fixed(1.0) };
        let mut total = 0.0;
        for _ in 0..50 {
            let a = normal(40, 0.0, &mut rng);
            let b = normal(40, 0.0, &mut rng);
            total += mmd2(&a, &b, &cfg).unwrap();
        }
        assert!((total / 50.0).abs() < 0.01);
    }
}
