//! Alternating minibatch training for the pseudo-outcome method and the
//! single-network baselines.

mod sweep;

pub use sweep::{run_cell, sweep, CellResult, SweepGrid, SweepOptions, SweepSummary};

use std::path::{Path, PathBuf};
use std::time::Instant;

use numgrad::{AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, Dataset, Scaler};
use crate::error::{Error, Result};
use crate::ipm::IpmConfig;
use crate::losses::{self, Batch, BatchVars, KlSign, LossConfig};
use crate::nets::{Architecture, Bound, Method, ModelBundle, NetId};
use crate::rng;

/// How the four update steps interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// All four steps on each minibatch in turn.
    Batch,
    /// Each step sweeps the whole epoch before the next one starts.
    Epoch,
}

/// Validation quantity driving early stopping and model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `pip` for pseudo-outcome methods, `factual` otherwise.
    Auto,
    /// Factual MSE of `f`.
    Factual,
    /// `L_pip` of `f` on the validation set.
    Pip,
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

parse_enum!(Alternation, "alternation", "batch" => Alternation::Batch, "epoch" => Alternation::Epoch);
parse_enum!(Selection, "selection", "auto" => Selection::Auto, "factual" => Selection::Factual, "pip" => Selection::Pip);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub gamma: f64,
    /// Kernel and Sinkhorn settings; the distance kind comes from `method`.
    pub ipm: IpmConfig,
    pub seed: u64,
    /// Epochs without improvement before stopping; 0 disables.
    pub early_stop_patience: u32,
    pub kl_sign: KlSign,
    pub joint: bool,
    pub alternation: Alternation,
    pub selection: Selection,
    pub arch: Architecture,
    pub checkpoint_path: Option<PathBuf>,
    /// Check the gradient-routing contract every this many batches; 0 = off.
    pub routing_check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PipcfrWass,
            epochs: 300,
            batch_size: 250,
            lr: 0.001,
            lr_decay: 0.95,
            gamma: 1.0,
            ipm: IpmConfig::default(),
            seed: 0,
            early_stop_patience: 30,
            kl_sign: KlSign::AsWritten,
            joint: false,
            alternation: Alternation::Batch,
            selection: Selection::Auto,
            arch: Architecture::default(),
            checkpoint_path: None,
            routing_check_every: if cfg!(debug_assertions) { 50 } else { 0 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch_size must be in 1..={n_train} (training set size), got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        self.ipm.validate()?;
        self.arch.validate()
    }

    /// IPM settings with the distance chosen by the method.
    pub fn effective_ipm(&self) -> IpmConfig {
        IpmConfig { kind: self.method.ipm_kind().unwrap_or(self.ipm.kind), ..self.ipm }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { ipm: self.effective_ipm(), gamma: self.gamma, kl_sign: self.kl_sign, joint: self.joint }
    }

    pub fn effective_selection(&self) -> Selection {
        match self.selection {
            Selection::Auto if self.method.uses_post_treatment() => Selection::Pip,
            Selection::Auto => Selection::Factual,
            s => s,
        }
    }
}

/// Training-set loss means and validation metrics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub l_p: Option<f64>,
    pub l_kl: Option<f64>,
    pub l_y: Option<f64>,
    pub l_pip: Option<f64>,
    /// Baseline objective (factual MSE or balanced loss).
    pub l_f: Option<f64>,
    pub val_factual_mse: f64,
    /// Factual MSE of the pseudo-outcome model `q` on validation data.
    pub val_q_mse: Option<f64>,
    pub val_selection: f64,
    pub ipm_skipped: u32,
    pub sinkhorn_unconverged: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch, kept apart so the CSV is reproducible.
    pub wall_secs: Vec<f64>,
    pub best_epoch: u32,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn ipm_skipped_total(&self) -> u32 {
        self.records.iter().map(|r| r.ipm_skipped).sum()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()?).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn save_timing(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("epoch,wall_secs\n");
        for (r, s) in self.records.iter().zip(&self.wall_secs) {
            out.push_str(&format!("{},{s:.6}\n", r.epoch));
        }
        std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Update groups, in per-batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Propensity,
    Eta,
    Outcome,
    Pip,
    Baseline,
}

impl Step {
    fn index(self) -> usize {
        self as usize
    }

    fn inputs(self) -> &'static [NetId] {
        use NetId::*;
        match self {
            Step::Propensity => &[G, GTilde, PsiEta],
            Step::Eta => &[G, GTilde, PsiEta, PsiAlpha, H0, H1],
            Step::Outcome => &[PsiAlpha, PsiEta, H0, H1],
            Step::Pip => &[FTrunk, F0, F1, PsiAlpha, PsiEta, H0, H1],
            Step::Baseline => &[FTrunk, F0, F1],
        }
    }

    fn updates(self, joint: bool) -> &'static [NetId] {
        use NetId::*;
        if joint {
            return self.inputs();
        }
        match self {
            Step::Propensity => &[G, GTilde],
            Step::Eta => &[PsiEta],
            Step::Outcome => &[PsiAlpha, H0, H1],
            Step::Pip | Step::Baseline => &[FTrunk, F0, F1],
        }
    }

    fn steps_for(method: Method) -> &'static [Step] {
        if method.uses_post_treatment() {
            &[Step::Propensity, Step::Eta, Step::Outcome, Step::Pip]
        } else {
            &[Step::Baseline]
        }
    }
}

#[derive(Default)]
struct EpochSums {
    l: [f64; 5],
    count: [u32; 5],
    l_kl: f64,
    ipm_skipped: u32,
    unconverged: u32,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    loss_cfg: LossConfig,
    bundle: ModelBundle,
    /// One Adam state per (step, network).
    opts: Vec<Vec<Option<AdamState>>>,
    batches_seen: usize,
}

impl<'a> Trainer<'a> {
    fn adam(&mut self, step: Step, id: NetId) -> &mut AdamState {
        let (lr, decay) = (self.cfg.lr, self.cfg.lr_decay);
        self.opts[step.index()][id.index()].get_or_insert_with(|| AdamState::new(lr).with_decay(decay))
    }

    /// One Adam step of `step` on `batch`. Returns the loss value.
    fn run_step(&mut self, step: Step, batch: &Batch, epoch: u32, batch_idx: usize, sums: &mut EpochSums) -> Result<f64> {
        let updates = step.updates(self.cfg.joint);
        let mut tape = Tape::new();
        let nets = self.bundle.bind(&mut tape, step.inputs(), updates)?;
        let bv = BatchVars::new(&mut tape, batch)?;
        let lc = &self.loss_cfg;
        let (loss, name) = match step {
            Step::Propensity => (losses::loss_p(&mut tape, &nets, &bv, lc)?, "L_p"),
            Step::Eta => {
                let kl = losses::loss_kl(&mut tape, &nets, &bv, lc)?;
                let (ly, _) = losses::loss_y(&mut tape, &nets, &bv, lc)?;
                let v = tape.value(kl).item()?;
                sums.l_kl += v;
                (tape.add(kl, ly)?, "L_KL+L_y")
            }
            Step::Outcome => {
                let (ly, info) = losses::loss_y(&mut tape, &nets, &bv, lc)?;
                sums.ipm_skipped += u32::from(info.ipm_skipped);
                sums.unconverged += u32::from(!info.sinkhorn_converged);
                (ly, "L_y")
            }
            Step::Pip => (losses::loss_pip(&mut tape, &nets, &bv, lc)?, "L_pip"),
            Step::Baseline => match self.cfg.method {
                Method::Tarnet => (losses::loss_factual(&mut tape, &nets, &bv)?, "L_f"),
                _ => {
                    let (l, info) = losses::loss_cfr(&mut tape, &nets, &bv, &lc.ipm)?;
                    sums.ipm_skipped += u32::from(info.ipm_skipped);
                    sums.unconverged += u32::from(!info.sinkhorn_converged);
                    (l, "L_f")
                }
            },
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(self.nan_abort(name, epoch, batch_idx, batch, value));
        }
        tape.backward(loss)?;
        let grads: Vec<(NetId, Vec<Tensor>)> = updates.iter().map(|&id| (id, nets.grads(&tape, id))).collect();
        if grads.iter().any(|(_, g)| g.iter().any(|t| !t.all_finite())) {
            return Err(self.nan_abort(name, epoch, batch_idx, batch, f64::NAN));
        }
        let check = self.cfg.routing_check_every > 0 && self.batches_seen % self.cfg.routing_check_every == 0;
        let before = check.then(|| self.bundle.clone());
        for (id, g) in grads {
            let mut opt = self.adam(step, id).clone();
            let net = self.bundle.net_mut(id).expect("bound network exists");
            opt.step(&mut net.params_mut(), &g, epoch)?;
            self.opts[step.index()][id.index()] = Some(opt);
        }
        if let Some(before) = before {
            for id in self.bundle.present_nets() {
                if !updates.contains(&id) && before.net(id) != self.bundle.net(id) {
                    return Err(Error::Config(format!("routing violation: step {step:?} changed {}", id.name())));
                }
            }
        }
        let k = step.index();
        sums.l[k] += value;
        sums.count[k] += 1;
        Ok(value)
    }

    fn nan_abort(&self, loss: &'static str, epoch: u32, batch_idx: usize, batch: &Batch, value: f64) -> Error {
        let snap = serde_json::json!({
            "loss": loss,
            "value": value.to_string(),
            "epoch": epoch,
            "batch": batch_idx,
            "t": batch.t,
            "y": batch.y,
            "x": batch.x.data(),
        });
        let snapshot = match &self.cfg.checkpoint_path {
            Some(p) => {
                let path = p.with_extension("nan.json");
                let body = serde_json::json!({ "batch": snap, "bundle": serde_json::to_value(&self.bundle).ok() });
                match std::fs::write(&path, body.to_string()) {
                    Ok(()) => path.display().to_string(),
                    Err(_) => snap.to_string(),
                }
            }
            None => snap.to_string(),
        };
        Error::NonFinite { loss, epoch, batch: batch_idx, snapshot }
    }

    /// `(factual MSE, q factual MSE, selection metric)` on the standardized
    /// validation set.
    fn validate(&self, val: &Batch) -> Result<(f64, Option<f64>, f64)> {
        let mut tape = Tape::new();
        let nets = self.bundle.bind_all(&mut tape, &[])?;
        let bv = BatchVars::new(&mut tape, val)?;
        let mse = losses::loss_factual(&mut tape, &nets, &bv)?;
        let mse = tape.value(mse).item()?;
        let q_mse = match bv.s {
            Some(s) if nets.is_bound(NetId::H0) => {
                let rep = nets.rep(&mut tape, bv.x)?;
                let phi = nets.phi(&mut tape, s)?;
                let (q0, q1) = nets.q_heads(&mut tape, rep, phi)?;
                let q = Bound::route(&mut tape, bv.t, bv.one_minus_t, q1, q0)?;
                let e = tape.sub(q, bv.y)?;
                let e2 = tape.square(e);
                let m = tape.mean(e2);
                Some(tape.value(m).item()?)
            }
            _ => None,
        };
        let sel = match self.cfg.effective_selection() {
            Selection::Pip => {
                let l = losses::loss_pip(&mut tape, &nets, &bv, &self.loss_cfg)?;
                tape.value(l).item()?
            }
            _ => mse,
        };
        Ok((mse, q_mse, sel))
    }
}

/// Trains on standardized splits. `scaler` is stored in the bundle for
/// predictions in original units.
pub fn train(train: &Dataset, val: &Dataset, scaler: &Scaler, cfg: &TrainConfig) -> Result<(ModelBundle, TrainTrace)> {
    cfg.validate(train.len())?;
    if cfg.method.uses_post_treatment() && (train.s.is_none() || val.s.is_none()) {
        return Err(Error::Data(format!("{} needs post-treatment variables", cfg.method)));
    }
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let s_dim = if cfg.method.uses_post_treatment() { train.s_dim() } else { 0 };
    let bundle = ModelBundle::init(
        cfg.method,
        train.x_dim(),
        s_dim,
        &cfg.arch,
        scaler.clone(),
        rng::derive_seed(cfg.seed, "init"),
    )?;
    let (train, val) = if cfg.method.uses_post_treatment() {
        (train.clone(), val.clone())
    } else {
        (train.without_s(), val.without_s())
    };
    let val_batch = Batch::full(&val);
    let mut tr = Trainer {
        cfg,
        loss_cfg: cfg.loss_config(),
        bundle,
        opts: vec![vec![None; NetId::ALL.len()]; 5],
        batches_seen: 0,
    };
    let steps = Step::steps_for(cfg.method);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_rng = rng::stream(cfg.seed, "batching");
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, ModelBundle)> = None;
    let mut since_best = 0u32;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut batch_rng);
        let batches = order
            .chunks(cfg.batch_size)
            .map(|idx| Batch::from_dataset(&train, idx))
            .collect::<Result<Vec<_>>>()?;
        let mut sums = EpochSums::default();
        match cfg.alternation {
            Alternation::Batch => {
                for (bi, b) in batches.iter().enumerate() {
                    for &s in steps {
                        tr.run_step(s, b, epoch, bi, &mut sums)?;
                    }
                    tr.batches_seen += 1;
                }
            }
            Alternation::Epoch => {
                for &s in steps {
                    for (bi, b) in batches.iter().enumerate() {
                        tr.run_step(s, b, epoch, bi, &mut sums)?;
                        tr.batches_seen += 1;
                    }
                }
            }
        }
        let (val_mse, val_q_mse, val_sel) = tr.validate(&val_batch)?;
        if !val_sel.is_finite() {
            return Err(tr.nan_abort("validation", epoch, 0, &val_batch, val_sel));
        }
        let mean = |s: Step| (sums.count[s.index()] > 0).then(|| sums.l[s.index()] / f64::from(sums.count[s.index()]));
        let eta_count = sums.count[Step::Eta.index()];
        trace.records.push(EpochRecord {
            epoch: epoch + 1,
            l_p: mean(Step::Propensity),
            l_kl: (eta_count > 0).then(|| sums.l_kl / f64::from(eta_count)),
            l_y: mean(Step::Outcome),
            l_pip: mean(Step::Pip),
            l_f: mean(Step::Baseline),
            val_factual_mse: val_mse,
            val_q_mse,
            val_selection: val_sel,
            ipm_skipped: sums.ipm_skipped,
            sinkhorn_unconverged: sums.unconverged,
        });
        trace.wall_secs.push(start.elapsed().as_secs_f64());
        if best.as_ref().is_none_or(|(b, _)| val_sel < *b) {
            best = Some((val_sel, tr.bundle.clone()));
            trace.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                trace.stopped_early = true;
                break;
            }
        }
    }
    let bundle = best.map(|(_, b)| b).expect("at least one epoch ran");
    if let Some(p) = &cfg.checkpoint_path {
        bundle.save(p)?;
    }
    Ok((bundle, trace))
}

/// Standardizes raw splits on the training statistics, then trains.
pub fn fit(train_raw: &Dataset, val_raw: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle, TrainTrace)> {
    let (tr, others, scaler) = standardize(train_raw, &[val_raw])?;
    train(&tr, &others[0], &scaler, cfg)
}
