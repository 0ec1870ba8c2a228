//! Training objectives. Every loss is built on a caller-owned tape from a
//! [`Bound`] set of networks; which networks receive gradient is decided by
//! the stop-gradient placements below and by what the caller binds as
//! trainable.
//!
//! | loss      | updates            |
//! |-----------|--------------------|
//! | `L_p`     | `g`, `g̃`           |
//! | `L_KL`    | `ψ_η`              |
//! | `L_y`     | `h`, `ψ_α`, `ψ_η`  |
//! | `L_pip`   | `f`                |

mod diagnostics;

pub use diagnostics::{diagnostics, Diagnostics};

use numgrad::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ipm::{self, IpmConfig};
use crate::nets::{Bound, NetId};

/// Sign convention for the KL objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlSign {
    /// `γ Σ_t g (log g̃ - log g)`, i.e. `-γ KL(g | g̃)`.
    AsWritten,
    /// `γ KL(g | g̃)`: pulls `g̃` towards `g`.
    Flipped,
}

impl std::str::FromStr for KlSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "as_written" => Ok(KlSign::AsWritten),
            "flipped" => Ok(KlSign::Flipped),
            other => Err(Error::Config(format!("kl_sign must be as_written or flipped, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub ipm: IpmConfig,
    pub gamma: f64,
    pub kl_sign: KlSign,
    /// Ablation: drop every stop-gradient so each loss reaches all inputs.
    pub joint: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ipm: IpmConfig::default(),
            gamma: 1.0,
            kl_sign: KlSign::AsWritten,
            joint: false,
        }
    }
}

/// One minibatch in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub s: Option<Tensor>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, idx: &[usize]) -> Result<Self> {
        let sub = ds.select(idx)?;
        Ok(Self { x: sub.x, t: sub.t, s: sub.s, y: sub.y })
    }

    pub fn full(ds: &Dataset) -> Self {
        Self { x: ds.x.clone(), t: ds.t.clone(), s: ds.s.clone(), y: ds.y.clone() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Relabels treatments `t -> 1 - t`.
    pub fn flipped(&self) -> Self {
        Self { t: self.t.iter().map(|t| 1 - t).collect(), ..self.clone() }
    }
}

/// Batch columns registered as tape constants.
#[derive(Debug, Clone)]
pub struct BatchVars {
    pub x: Var,
    pub s: Option<Var>,
    pub y: Var,
    pub t: Var,
    pub one_minus_t: Var,
    pub t_vals: Vec<u8>,
}

impl BatchVars {
    pub fn new(tape: &mut Tape, b: &Batch) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let tf: Vec<f64> = b.t.iter().map(|&v| f64::from(v)).collect();
        Ok(Self {
            x: tape.constant(b.x.clone()),
            s: b.s.as_ref().map(|s| tape.constant(s.clone())),
            y: tape.constant(Tensor::column(b.y.clone())?),
            t: tape.constant(Tensor::column(tf.clone())?),
            one_minus_t: tape.constant(Tensor::column(tf.iter().map(|v| 1.0 - v).collect())?),
            t_vals: b.t.clone(),
        })
    }

    fn s(&self) -> Result<Var> {
        self.s.ok_or_else(|| Error::Data("batch has no post-treatment variables".into()))
    }

    pub fn len(&self) -> usize {
        self.t_vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_vals.is_empty()
    }
}

/// `β_i = t_i / (2u) + (1 - t_i) / (2(1 - u))` with `u` the treated
/// fraction; `None` when one group is empty.
pub fn balance_weights(t: &[u8]) -> Option<Vec<f64>> {
    let n = t.len() as f64;
    let u = t.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    if u <= 0.0 || u >= 1.0 {
        return None;
    }
    Some(
        t.iter()
            .map(|&v| {
                let v = f64::from(v);
                v / (2.0 * u) + (1.0 - v) / (2.0 * (1.0 - u))
            })
            .collect(),
    )
}

fn group_indices(t: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut g0 = Vec::new();
    let mut g1 = Vec::new();
    for (i, &v) in t.iter().enumerate() {
        if v == 1 { g1.push(i) } else { g0.push(i) }
    }
    (g0, g1)
}

fn one_minus(tape: &mut Tape, p: Var) -> Var {
    let n = tape.neg(p);
    tape.add_scalar(n, 1.0)
}

/// `log P(t_i)` for a Bernoulli probability column.
fn log_prob_of(tape: &mut Tape, bv: &BatchVars, p: Var) -> Result<Var> {
    let q = one_minus(tape, p);
    let pt = Bound::route(tape, bv.t, bv.one_minus_t, p, q)?;
    Ok(tape.log(pt)?)
}

/// Propensity loss `-(1/N) Σ [log g̃(t, x, φ) + log g(t, x)]`; `φ` is
/// detached.
pub fn loss_p(tape: &mut Tape, nets: &Bound, bv: &BatchVars, cfg: &LossConfig) -> Result<Var> {
    let phi = nets.phi(tape, bv.s()?)?;
    let phi = if cfg.joint { phi } else { tape.detach(phi) };
    let pg = nets.g_prob(tape, bv.x)?;
    let pgt = nets.g_tilde_prob(tape, bv.x, phi, false)?;
    let a = log_prob_of(tape, bv, pgt)?;
    let b = log_prob_of(tape, bv, pg)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.neg(m))
}

/// KL objective `(1/N) Σ γ Σ_t g(t) (log g̃(t) - log g(t))`, negated for
/// [`KlSign::Flipped`]. `g` is a fixed target and `g̃` is evaluated with
/// frozen weights, so only `ψ_η` moves.
pub fn loss_kl(tape: &mut Tape, nets: &Bound, bv: &BatchVars, cfg: &LossConfig) -> Result<Var> {
    let phi = nets.phi(tape, bv.s()?)?;
    let pg = nets.g_prob(tape, bv.x)?;
    let pg = if cfg.joint { pg } else { tape.detach(pg) };
    let pgt = nets.g_tilde_prob(tape, bv.x, phi, !cfg.joint)?;
    let qg = one_minus(tape, pg);
    let qgt = one_minus(tape, pgt);
    let mut term = |g: Var, gt: Var| -> Result<Var> {
        let lgt = tape.log(gt)?;
        let lg = tape.log(g)?;
        let d = tape.sub(lgt, lg)?;
        Ok(tape.mul(g, d)?)
    };
    let t1 = term(pg, pgt)?;
    let t0 = term(qg, qgt)?;
    let s = tape.add(t1, t0)?;
    let m = tape.mean(s);
    let sign = match cfg.kl_sign {
        KlSign::AsWritten => 1.0,
        KlSign::Flipped => -1.0,
    };
    Ok(tape.scale(m, sign * cfg.gamma))
}

/// What happened inside one balanced-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BalanceInfo {
    /// One treatment group was empty: IPM dropped, unit weights used.
    pub ipm_skipped: bool,
    pub sinkhorn_converged: bool,
    pub ipm_value: f64,
}

/// `(1/N) Σ β_i (pred_i - y_i)² + IPM(rep_0, rep_1)`.
fn balanced_loss(tape: &mut Tape, bv: &BatchVars, pred: Var, rep: Var, ipm_cfg: &IpmConfig) -> Result<(Var, BalanceInfo)> {
    let e = tape.sub(pred, bv.y)?;
    let e2 = tape.square(e);
    let mut info = BalanceInfo { sinkhorn_converged: true, ..Default::default() };
    let weighted = match balance_weights(&bv.t_vals) {
        Some(w) => {
            let w = tape.constant(Tensor::column(w)?);
            tape.mul(w, e2)?
        }
        None => {
            info.ipm_skipped = true;
            e2
        }
    };
    let mse = tape.mean(weighted);
    if info.ipm_skipped {
        return Ok((mse, info));
    }
    let (g0, g1) = group_indices(&bv.t_vals);
    let r0 = tape.select_rows(rep, &g0)?;
    let r1 = tape.select_rows(rep, &g1)?;
    let (d, converged) = ipm::ipm_tape(tape, r0, r1, ipm_cfg)?;
    info.sinkhorn_converged = converged;
    info.ipm_value = tape.value(d).item()?;
    Ok((tape.add(mse, d)?, info))
}

/// Pseudo-outcome constructor loss: weighted factual error of
/// `q = h_t(ψ_α(x), ψ_η(s))` plus IPM over `ψ_α(x)` between groups.
pub fn loss_y(tape: &mut Tape, nets: &Bound, bv: &BatchVars, cfg: &LossConfig) -> Result<(Var, BalanceInfo)> {
    let rep = nets.rep(tape, bv.x)?;
    let phi = nets.phi(tape, bv.s()?)?;
    let (q0, q1) = nets.q_heads(tape, rep, phi)?;
    let q = Bound::route(tape, bv.t, bv.one_minus_t, q1, q0)?;
    balanced_loss(tape, bv, q, rep, &cfg.ipm)
}

/// PIP loss `(1/N) Σ a² + b² - 2ab` with `a = f(x, t) - y` and
/// `b = f(x, 1 - t) - q(x, 1 - t, φ)`; `q` is detached.
pub fn loss_pip(tape: &mut Tape, nets: &Bound, bv: &BatchVars, cfg: &LossConfig) -> Result<Var> {
    let (f0, f1, _) = nets.f_heads(tape, bv.x)?;
    let rep = nets.rep(tape, bv.x)?;
    let phi = nets.phi(tape, bv.s()?)?;
    let (q0, q1) = nets.q_heads(tape, rep, phi)?;
    let (q0, q1) = if cfg.joint { (q0, q1) } else { (tape.detach(q0), tape.detach(q1)) };
    let f_fact = Bound::route(tape, bv.t, bv.one_minus_t, f1, f0)?;
    let f_cf = Bound::route(tape, bv.t, bv.one_minus_t, f0, f1)?;
    let q_cf = Bound::route(tape, bv.t, bv.one_minus_t, q0, q1)?;
    let a = tape.sub(f_fact, bv.y)?;
    let b = tape.sub(f_cf, q_cf)?;
    let a2 = tape.square(a);
    let b2 = tape.square(b);
    let ab = tape.mul(a, b)?;
    let ab = tape.scale(ab, -2.0);
    let s = tape.add(a2, b2)?;
    let s = tape.add(s, ab)?;
    Ok(tape.mean(s))
}

/// Unweighted factual MSE of `f`.
pub fn loss_factual(tape: &mut Tape, nets: &Bound, bv: &BatchVars) -> Result<Var> {
    let (f0, f1, _) = nets.f_heads(tape, bv.x)?;
    let f = Bound::route(tape, bv.t, bv.one_minus_t, f1, f0)?;
    let e = tape.sub(f, bv.y)?;
    let e2 = tape.square(e);
    Ok(tape.mean(e2))
}

/// Balanced factual loss of `f` with IPM over its own trunk.
pub fn loss_cfr(tape: &mut Tape, nets: &Bound, bv: &BatchVars, ipm_cfg: &IpmConfig) -> Result<(Var, BalanceInfo)> {
    let (f0, f1, rep) = nets.f_heads(tape, bv.x)?;
    let f = Bound::route(tape, bv.t, bv.one_minus_t, f1, f0)?;
    balanced_loss(tape, bv, f, rep, ipm_cfg)
}

/// Networks whose gradients each loss is allowed to produce.
pub fn update_set(loss: &str) -> &'static [NetId] {
    match loss {
        "p" => &[NetId::G, NetId::GTilde],
        "kl" => &[NetId::PsiEta],
        "y" => &[NetId::PsiAlpha, NetId::PsiEta, NetId::H0, NetId::H1],
        "pip" => &[NetId::FTrunk, NetId::F0, NetId::F1],
        _ => &[],
    }
}
