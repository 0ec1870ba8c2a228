//! Flat `section.key = value` configuration and the experiment pipeline it
//! describes (generate, split, standardize, train, evaluate).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{load_csv, split, standardize, Dataset, SplitSpec};
use crate::datagen::{
    gen_ar, gen_example1, gen_sequential, gen_temporal, ArConfig, ArScores, Example1Config, SequentialConfig,
    TemporalConfig,
};
use crate::error::{Error, Result};
use crate::eval::SeedMetrics;
use crate::ipm::{Bandwidth, IpmConfig};
use crate::losses::{diagnostics, Diagnostics};
use crate::nets::{Activation, Architecture, Method, ModelBundle};
use crate::rng;
use crate::trainer::{train, TrainConfig, TrainTrace};

/// One documented key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    /// `paper` when the default is a published setting, `chosen` otherwise.
    pub source: &'static str,
    pub doc: &'static str,
}

macro_rules! keys {
    ($(($k:literal, $d:literal, $s:literal, $doc:literal)),+ $(,)?) => {
        &[$(KeySpec { key: $k, default: $d, source: $s, doc: $doc }),+]
    };
}

pub const SCHEMA: &[KeySpec] = keys![
    ("seed", "0", "chosen", "root seed; split into data, split, init and batching streams"),
    ("data.kind", "temporal", "chosen", "example1 | temporal | sequential | ar | csv"),
    ("data.n", "10000", "paper", "number of units"),
    ("data.path", "", "chosen", "input file for data.kind = csv"),
    ("example1.sigma_x", "1", "paper", "sd of X"),
    ("example1.sigma_t", "1", "paper", "sd of the treatment-score noise"),
    ("example1.sigma_u", "1", "chosen", "sd of the post-treatment noise u_s"),
    ("example1.alpha1", "2", "chosen", "effect of T on S"),
    ("example1.alpha2", "1", "chosen", "direct effect of T on Y"),
    ("temporal.feat_dim", "5", "chosen", "state dimension N"),
    ("temporal.k", "60", "paper", "sequence length K"),
    ("temporal.gamma_y", "0.99", "paper", "outcome discount"),
    ("temporal.alpha_window", "0.5", "chosen", "fraction of steps in the outcome window"),
    ("temporal.c", "1", "chosen", "outcome normalizing constant"),
    ("temporal.eps_u", "1", "paper", "Laplace scale of the post-treatment noises"),
    ("temporal.outcome_noise", "0.1", "chosen", "Laplace scale of the multiplicative outcome noise"),
    ("temporal.state_noise", "0.1", "chosen", "sd of the state noise"),
    ("temporal.assign_noise", "0.1", "chosen", "sd of the assignment-score noise"),
    ("temporal.coef_seed", "0", "chosen", "seed of the random coefficient draw"),
    ("sequential.x_dim", "25", "paper", "covariate dimension"),
    ("sequential.m", "4", "chosen", "post-treatment dimension"),
    ("sequential.k", "10", "chosen", "sequence length"),
    ("sequential.c1", "0.5", "chosen", "weight of the running mean"),
    ("sequential.laplace_scale", "1", "paper", "noise scale"),
    ("sequential.treat_prob", "0.19", "chosen", "base treatment probability"),
    ("ar.x_dim", "25", "chosen", "covariate dimension of the stand-in scores"),
    ("ar.m", "4", "chosen", "post-treatment dimension"),
    ("ar.k", "10", "chosen", "sequence length"),
    ("ar.c2", "1", "chosen", "drive scale"),
    ("ar.radius", "0.5", "chosen", "spectral radius of the random transfer matrix"),
    ("ar.laplace_scale", "1", "paper", "noise scale"),
    ("split.train", "0.6", "paper", "training fraction"),
    ("split.val", "0.2", "paper", "validation fraction"),
    ("split.test", "0.2", "paper", "test fraction"),
    ("train.method", "PIPCFR_WASS", "chosen", "TARNET | CFRNET_MMD | CFRNET_WASS | PIPCFR_MMD | PIPCFR_WASS"),
    ("train.epochs", "300", "chosen", "maximum epochs"),
    ("train.batch_size", "250", "paper", "minibatch size"),
    ("train.lr", "0.001", "paper", "Adam learning rate"),
    ("train.lr_decay", "0.95", "paper", "per-epoch learning-rate decay"),
    ("train.gamma", "1", "chosen", "KL weight"),
    ("train.kl_sign", "as_written", "chosen", "as_written | flipped"),
    ("train.patience", "30", "chosen", "early-stopping patience, 0 disables"),
    ("train.joint", "false", "chosen", "update every network a loss reaches"),
    ("train.alternation", "batch", "chosen", "batch | epoch"),
    ("train.selection", "auto", "chosen", "auto | factual | pip"),
    ("train.routing_check_every", "0", "chosen", "check update isolation every n batches, 0 disables"),
    ("ipm.bandwidth", "median", "chosen", "median or a fixed RBF width"),
    ("ipm.unbiased", "false", "chosen", "U-statistic MMD"),
    ("ipm.sinkhorn_epsilon", "0.1", "chosen", "entropic regularization"),
    ("ipm.sinkhorn_iters", "100", "chosen", "maximum Sinkhorn iterations"),
    ("ipm.sinkhorn_tol", "0.0001", "chosen", "L1 marginal tolerance"),
    ("arch.rep_layers", "3", "paper", "layers of the covariate representation"),
    ("arch.rep_width", "64", "paper", "width of the covariate representation"),
    ("arch.head_layers", "4", "paper", "layers of each outcome head"),
    ("arch.head_width", "64", "paper", "width of the outcome heads"),
    ("arch.eta_layers", "3", "paper", "layers of the post-treatment representation"),
    ("arch.eta_width", "128", "paper", "width of the post-treatment representation"),
    ("arch.phi_dim", "16", "chosen", "post-treatment representation size"),
    ("arch.prop_layers", "4", "paper", "layers of the propensity models"),
    ("arch.prop_width", "64", "paper", "width of the propensity models"),
    ("arch.activation", "relu", "chosen", "relu | elu"),
];

/// Short names accepted in overrides and sweep grids.
const ALIASES: &[(&str, &str)] = &[
    ("method", "train.method"),
    ("gamma", "train.gamma"),
    ("kl_sign", "train.kl_sign"),
    ("epochs", "train.epochs"),
    ("kind", "data.kind"),
    ("n", "data.n"),
    ("K", "temporal.k"),
    ("eps_u", "temporal.eps_u"),
    ("noise", "temporal.eps_u"),
    ("sigma_u", "example1.sigma_u"),
];

pub fn resolve_key(key: &str) -> Result<&'static str> {
    let key = key.trim();
    if let Some((_, full)) = ALIASES.iter().find(|(a, _)| *a == key) {
        return Ok(full);
    }
    SCHEMA
        .iter()
        .find(|k| k.key == key)
        .map(|k| k.key)
        .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))
}

/// Resolved key-value configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: SCHEMA.iter().map(|k| (k.key, k.default.to_string())).collect() }
    }
}

impl Config {
    /// Defaults overridden by the `key = value` lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.values.insert(resolve_key(key)?, value.trim().to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        let k = resolve_key(key)?;
        Ok(self.values.get(k).map(String::as_str).unwrap_or(""))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))
    }

    /// Sorted `key = value` lines; enough to rerun the experiment.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Config::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }
}

/// Data source of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Example1(Example1Config),
    Temporal(TemporalConfig),
    Sequential(SequentialConfig),
    Ar { cfg: ArConfig, x_dim: usize },
    Csv(PathBuf),
}

impl DataSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let n: usize = c.get("data.n")?;
        let seed = rng::derive_seed(c.seed()?, "data");
        Ok(match c.raw("data.kind")? {
            "example1" => DataSpec::Example1(Example1Config {
                sigma_x: c.get("example1.sigma_x")?,
                sigma_t: c.get("example1.sigma_t")?,
                sigma_u: c.get("example1.sigma_u")?,
                alpha1: c.get("example1.alpha1")?,
                alpha2: c.get("example1.alpha2")?,
                n,
                seed,
            }),
            "temporal" => DataSpec::Temporal(TemporalConfig {
                n_samples: n,
                feat_dim: c.get("temporal.feat_dim")?,
                k: c.get("temporal.k")?,
                gamma_y: c.get("temporal.gamma_y")?,
                alpha_window: c.get("temporal.alpha_window")?,
                c: c.get("temporal.c")?,
                eps_u: c.get("temporal.eps_u")?,
                outcome_noise_scale: c.get("temporal.outcome_noise")?,
                state_noise_scale: c.get("temporal.state_noise")?,
                assign_noise_scale: c.get("temporal.assign_noise")?,
                coef_seed: c.get("temporal.coef_seed")?,
                coefficients: None,
                seed,
            }),
            "sequential" => DataSpec::Sequential(SequentialConfig {
                n_units: n,
                x_dim: c.get("sequential.x_dim")?,
                m: c.get("sequential.m")?,
                k: c.get("sequential.k")?,
                c1: c.get("sequential.c1")?,
                laplace_scale: c.get("sequential.laplace_scale")?,
                treat_prob: c.get("sequential.treat_prob")?,
                seed,
                ..SequentialConfig::default()
            }),
            "ar" => {
                let m: usize = c.get("ar.m")?;
                DataSpec::Ar {
                    cfg: ArConfig {
                        n_units: n,
                        m,
                        k: c.get("ar.k")?,
                        c2: c.get("ar.c2")?,
                        transfer: ArConfig::random_transfer(m, c.get("ar.radius")?, seed)?,
                        laplace_scale: c.get("ar.laplace_scale")?,
                        seed,
                    },
                    x_dim: c.get("ar.x_dim")?,
                }
            }
            "csv" => {
                let p = c.raw("data.path")?;
                if p.is_empty() {
                    return Err(Error::Config("data.kind = csv needs data.path".into()));
                }
                DataSpec::Csv(PathBuf::from(p))
            }
            other => return Err(Error::Config(format!("unknown data.kind {other:?}"))),
        })
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self {
            DataSpec::Example1(c) => gen_example1(c),
            DataSpec::Temporal(c) => gen_temporal(c),
            DataSpec::Sequential(c) => gen_sequential(c, None),
            DataSpec::Ar { cfg, x_dim } => gen_ar(cfg, &ArScores::synthetic(cfg.n_units, *x_dim, cfg.seed)?),
            DataSpec::Csv(p) => load_csv(p),
        }
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got {other:?}"))),
    }
}

/// Typed view of a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub seed: u64,
    pub data: DataSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub fingerprint: String,
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: ModelBundle,
    pub trace: TrainTrace,
    pub metrics: SeedMetrics,
    pub diagnostics: Option<Diagnostics>,
}

impl Experiment {
    pub fn from_config(c: &Config) -> Result<Self> {
        let seed = c.seed()?;
        let bandwidth = match c.raw("ipm.bandwidth")? {
            "median" => Bandwidth::MedianHeuristic,
            v => Bandwidth::Fixed(v.parse().map_err(|_| Error::Config(format!("ipm.bandwidth = {v:?}")))?),
        };
        let activation = match c.raw("arch.activation")? {
            "relu" => Activation::Relu,
            "elu" => Activation::Elu,
            other => return Err(Error::Config(format!("unknown activation {other:?}"))),
        };
        let method: Method = c.get("train.method")?;
        let train = TrainConfig {
            method,
            epochs: c.get("train.epochs")?,
            batch_size: c.get("train.batch_size")?,
            lr: c.get("train.lr")?,
            lr_decay: c.get("train.lr_decay")?,
            gamma: c.get("train.gamma")?,
            ipm: IpmConfig {
                kind: method.ipm_kind().unwrap_or(IpmConfig::default().kind),
                rbf_bandwidth: bandwidth,
                unbiased_mmd: parse_bool(c.raw("ipm.unbiased")?)?,
                sinkhorn_epsilon: c.get("ipm.sinkhorn_epsilon")?,
                sinkhorn_iters: c.get("ipm.sinkhorn_iters")?,
                sinkhorn_tol: c.get("ipm.sinkhorn_tol")?,
            },
            seed,
            early_stop_patience: c.get("train.patience")?,
            kl_sign: c.get("train.kl_sign")?,
            joint: parse_bool(c.raw("train.joint")?)?,
            alternation: c.get("train.alternation")?,
            selection: c.get("train.selection")?,
            arch: Architecture {
                rep_layers: c.get("arch.rep_layers")?,
                rep_width: c.get("arch.rep_width")?,
                head_layers: c.get("arch.head_layers")?,
                head_width: c.get("arch.head_width")?,
                eta_layers: c.get("arch.eta_layers")?,
                eta_width: c.get("arch.eta_width")?,
                phi_dim: c.get("arch.phi_dim")?,
                prop_layers: c.get("arch.prop_layers")?,
                prop_width: c.get("arch.prop_width")?,
                activation,
            },
            checkpoint_path: None,
            routing_check_every: c.get("train.routing_check_every")?,
        };
        let split = SplitSpec {
            train_frac: c.get("split.train")?,
            val_frac: c.get("split.val")?,
            test_frac: c.get("split.test")?,
            seed: rng::derive_seed(seed, "split"),
        };
        split.validate()?;
        Ok(Self { seed, data: DataSpec::from_config(c)?, split, train, fingerprint: c.hash() })
    }

    /// Raw `(train, val, test)`.
    pub fn splits(&self) -> Result<(Dataset, Dataset, Dataset)> {
        split(&self.data.generate()?, &self.split)
    }

    /// Full pipeline. Metrics are in original units; diagnostics only for
    /// pseudo-outcome methods on data with known potential outcomes.
    pub fn run(&self) -> Result<RunOutput> {
        let (tr_raw, va_raw, te_raw) = self.splits()?;
        let (tr, others, scaler) = standardize(&tr_raw, &[&va_raw])?;
        let (bundle, trace) = train(&tr, &others[0], &scaler, &self.train)?;
        let metrics = SeedMetrics::compute(&bundle, self.seed, &tr_raw, &te_raw)?;
        let diagnostics = if self.train.method.uses_post_treatment() && te_raw.y0_true.is_some() {
            Some(diagnostics(&bundle, &te_raw)?)
        } else {
            None
        };
        Ok(RunOutput { bundle, trace, metrics, diagnostics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_overrides_defaults_and_ignores_comments() {
        let c = Config::parse("# comment\ntrain.lr = 0.01\n\ngamma=0.5 # inline\n").unwrap();
        assert_eq!(c.get::<f64>("train.lr").unwrap(), 0.01);
        assert_eq!(c.get::<f64>("train.gamma").unwrap(), 0.5);
        assert_eq!(c.get::<usize>("train.batch_size").unwrap(), 250);
    }

    #[test]
    fn unknown_key_and_bad_line_rejected() {
        assert!(Config::parse("train.lrr = 1").is_err());
        assert!(Config::parse("train.lr 1").is_err());
    }

    #[test]
    fn snapshot_round_trips_and_hash_is_stable() {
        let mut c = Config::default();
        c.set("K", "20").unwrap();
        let back = Config::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(Config::default().hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn every_default_builds_an_experiment() {
        for kind in ["example1", "temporal", "sequential", "ar"] {
            let mut c = Config::default();
            c.set("data.kind", kind).unwrap();
            let e = Experiment::from_config(&c).unwrap();
            assert_eq!(e.train.batch_size, 250);
        }
    }

    #[test]
    fn data_seed_is_independent_of_training_keys() {
        let mut a = Config::default();
        a.set("data.kind", "example1").unwrap();
        let mut b = a.clone();
        b.set("train.lr", "0.5").unwrap();
        let (ea, eb) = (Experiment::from_config(&a).unwrap(), Experiment::from_config(&b).unwrap());
        assert_eq!(ea.data, eb.data);
    }
}
