//! Observational datasets: columnar storage, splitting, standardization
//! and the CSV exchange format.

use std::io::{Read, Write};
use std::path::Path;

use numgrad::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One observational unit `(x, t, s, y)` with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: u8,
    pub s: Vec<f64>,
    pub y: f64,
    pub y0_true: Option<f64>,
    pub y1_true: Option<f64>,
    pub tau_true: Option<f64>,
}

/// Columnar dataset. `s` is absent for data without post-treatment
/// variables. When both potential outcomes are present, `tau_true` is
/// always their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub s: Option<Tensor>,
    pub y: Vec<f64>,
    pub y0_true: Option<Vec<f64>>,
    pub y1_true: Option<Vec<f64>>,
    pub tau_true: Option<Vec<f64>>,
    /// Exogenous noise of `s`, recorded by generators that have one.
    pub u_s: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Tensor, t: Vec<u8>, s: Option<Tensor>, y: Vec<f64>) -> Result<Self> {
        let n = x.rows();
        if t.len() != n || y.len() != n {
            return Err(Error::Data(format!(
                "column lengths differ: x {n}, t {}, y {}",
                t.len(),
                y.len()
            )));
        }
        if let Some(s) = &s {
            if s.rows() != n {
                return Err(Error::Data(format!("s has {} rows, x has {n}", s.rows())));
            }
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("treatment at row {i} is {}, not 0/1", t[i])));
        }
        Ok(Self {
            x,
            t,
            s,
            y,
            y0_true: None,
            y1_true: None,
            tau_true: None,
            u_s: None,
        })
    }

    /// Attaches noiseless potential outcomes and sets `tau_true = y1 - y0`.
    pub fn with_potential_outcomes(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        if y0.len() != self.len() || y1.len() != self.len() {
            return Err(Error::Data("potential outcome length mismatch".into()));
        }
        self.tau_true = Some(y1.iter().zip(&y0).map(|(a, b)| a - b).collect());
        self.y0_true = Some(y0);
        self.y1_true = Some(y1);
        Ok(self)
    }

    pub fn with_tau(mut self, tau: Vec<f64>) -> Result<Self> {
        if tau.len() != self.len() {
            return Err(Error::Data("tau length mismatch".into()));
        }
        self.tau_true = Some(tau);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn s_dim(&self) -> usize {
        self.s.as_ref().map_or(0, Tensor::cols)
    }

    pub fn treated_fraction(&self) -> f64 {
        self.t.iter().map(|&v| f64::from(v)).sum::<f64>() / self.len() as f64
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            x: self.x.row_slice(i).to_vec(),
            t: self.t[i],
            s: self.s.as_ref().map_or_else(Vec::new, |s| s.row_slice(i).to_vec()),
            y: self.y[i],
            y0_true: self.y0_true.as_ref().map(|v| v[i]),
            y1_true: self.y1_true.as_ref().map(|v| v[i]),
            tau_true: self.tau_true.as_ref().map(|v| v[i]),
        }
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("no samples".into()))?;
        let x = Tensor::from_rows(&samples.iter().map(|s| s.x.clone()).collect::<Vec<_>>())?;
        let s = if first.s.is_empty() {
            None
        } else {
            Some(Tensor::from_rows(
                &samples.iter().map(|s| s.s.clone()).collect::<Vec<_>>(),
            )?)
        };
        let mut ds = Dataset::new(
            x,
            samples.iter().map(|s| s.t).collect(),
            s,
            samples.iter().map(|s| s.y).collect(),
        )?;
        let y0: Option<Vec<f64>> = samples.iter().map(|s| s.y0_true).collect();
        let y1: Option<Vec<f64>> = samples.iter().map(|s| s.y1_true).collect();
        match (y0, y1) {
            (Some(y0), Some(y1)) => ds = ds.with_potential_outcomes(y0, y1)?,
            _ => {
                let tau: Option<Vec<f64>> = samples.iter().map(|s| s.tau_true).collect();
                if let Some(tau) = tau {
                    ds = ds.with_tau(tau)?;
                }
            }
        }
        Ok(ds)
    }

    /// Rows `idx` in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            x: self.x.select_rows(idx)?,
            t: idx.iter().map(|&i| self.t[i]).collect(),
            s: self.s.as_ref().map(|s| s.select_rows(idx)).transpose()?,
            y: pick(&self.y),
            y0_true: self.y0_true.as_ref().map(pick),
            y1_true: self.y1_true.as_ref().map(pick),
            tau_true: self.tau_true.as_ref().map(pick),
            u_s: self.u_s.as_ref().map(pick),
        })
    }

    /// Drops the post-treatment variables (what a test-time user sees).
    pub fn without_s(&self) -> Self {
        Self {
            s: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("split fractions must lie in [0,1]: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` cut into train/val/test index sets.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(spec.seed, "split"));
    let n_train = (n as f64 * spec.train_frac).round() as usize;
    let n_val = ((n as f64 * spec.val_frac).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    let parts = [idx, val, test];
    for (name, p) in ["train", "validation", "test"].iter().zip(&parts) {
        if p.is_empty() {
            return Err(Error::Data(format!("{name} split of {n} samples is empty")));
        }
    }
    Ok(parts)
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.len(), spec)?;
    Ok((ds.select(&a)?, ds.select(&b)?, ds.select(&c)?))
}

/// Per-feature affine map `(v - mean) / std`, fit on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-12;

impl FeatureScaler {
    /// Population statistics per column; constant columns pass through.
    pub fn fit(m: &Tensor) -> Self {
        let (n, d) = (m.rows(), m.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (c, mu) in mean.iter_mut().enumerate() {
                *mu += m.get(r, c);
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (c, v) in var.iter_mut().enumerate() {
                let e = m.get(r, c) - mean[c];
                *v += e * e;
            }
        }
        let mut std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        for c in 0..d {
            if std[c] < DEGENERATE_STD {
                mean[c] = 0.0;
                std[c] = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, m: &Tensor) -> Result<Tensor> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                out.set(r, c, (m.get(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, m: &Tensor) -> Result<Tensor> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                out.set(r, c, m.get(r, c) * self.std[c] + self.mean[c]);
            }
        }
        Ok(out)
    }

    fn check(&self, m: &Tensor) -> Result<()> {
        if m.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "scaled features",
                expected: self.dim(),
                found: m.cols(),
            });
        }
        Ok(())
    }
}

/// Standardization of `x`, `s` and `y`, fit on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x: FeatureScaler,
    pub s: Option<FeatureScaler>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Scaler {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit a scaler on an empty dataset".into()));
        }
        let y = Tensor::column(train.y.clone())?;
        let ys = FeatureScaler::fit(&y);
        Ok(Self {
            x: FeatureScaler::fit(&train.x),
            s: train.s.as_ref().map(FeatureScaler::fit),
            y_mean: ys.mean[0],
            y_std: ys.std[0],
        })
    }

    pub fn identity(x_dim: usize, s_dim: usize) -> Self {
        let id = |d: usize| FeatureScaler {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        };
        Self {
            x: id(x_dim),
            s: (s_dim > 0).then(|| id(s_dim)),
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn y_forward(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn y_inverse(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    pub fn transform_s(&self, s: &Tensor) -> Result<Tensor> {
        match &self.s {
            Some(sc) => sc.transform(s),
            None => Err(Error::Data("scaler was fit without post-treatment variables".into())),
        }
    }

    /// Applies the scaler to every column of `ds`, ground truth included.
    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |sc, m| sc.transform(m), |v| self.y_forward(v), 1.0 / self.y_std)
    }

    pub fn inverse_transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |sc, m| sc.inverse(m), |v| self.y_inverse(v), self.y_std)
    }

    fn map(
        &self,
        ds: &Dataset,
        feat: impl Fn(&FeatureScaler, &Tensor) -> Result<Tensor>,
        outcome: impl Fn(f64) -> f64,
        tau_factor: f64,
    ) -> Result<Dataset> {
        let s = match (&ds.s, &self.s) {
            (Some(s), Some(sc)) => Some(feat(sc, s)?),
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::Data("scaler was fit without post-treatment variables".into()))
            }
        };
        let ys = |v: &Vec<f64>| v.iter().map(|&y| outcome(y)).collect::<Vec<_>>();
        let mut out = Dataset {
            x: feat(&self.x, &ds.x)?,
            t: ds.t.clone(),
            s,
            y: ys(&ds.y),
            y0_true: ds.y0_true.as_ref().map(ys),
            y1_true: ds.y1_true.as_ref().map(ys),
            tau_true: ds.tau_true.as_ref().map(|v| v.iter().map(|t| t * tau_factor).collect()),
            u_s: ds.u_s.clone(),
        };
        if let (Some(y0), Some(y1)) = (&out.y0_true, &out.y1_true) {
            out.tau_true = Some(y1.iter().zip(y0).map(|(a, b)| a - b).collect());
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same map to `train` and every other split.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Scaler)> {
    let scaler = Scaler::fit(train)?;
    let tr = scaler.transform(train)?;
    let rest = others
        .iter()
        .map(|d| scaler.transform(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((tr, rest, scaler))
}

// ---------------------------------------------------------------- CSV

/// Writes `x_*, t, s_*, y` and, when present, `y0_true, y1_true` / `tau_true`
/// and `u_s`. Floats use the shortest round-tripping representation.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..ds.x_dim()).map(|i| format!("x_{i}")).collect();
    header.push("t".into());
    header.extend((0..ds.s_dim()).map(|i| format!("s_{i}")));
    header.push("y".into());
    let has_po = ds.y0_true.is_some() && ds.y1_true.is_some();
    if has_po {
        header.push("y0_true".into());
        header.push("y1_true".into());
    } else if ds.tau_true.is_some() {
        header.push("tau_true".into());
    }
    if ds.u_s.is_some() {
        header.push("u_s".into());
    }
    wr.write_record(&header).map_err(csv_io)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        rec.clear();
        rec.extend(ds.x.row_slice(i).iter().map(f64::to_string));
        rec.push(ds.t[i].to_string());
        if let Some(s) = &ds.s {
            rec.extend(s.row_slice(i).iter().map(f64::to_string));
        }
        rec.push(ds.y[i].to_string());
        if has_po {
            rec.push(ds.y0_true.as_ref().unwrap()[i].to_string());
            rec.push(ds.y1_true.as_ref().unwrap()[i].to_string());
        } else if let Some(tau) = &ds.tau_true {
            rec.push(tau[i].to_string());
        }
        if let Some(u) = &ds.u_s {
            rec.push(u[i].to_string());
        }
        wr.write_record(&rec).map_err(csv_io)?;
    }
    wr.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    write_csv(ds, std::io::BufWriter::new(f))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_csv(std::io::BufReader::new(f))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Csv {
        row: e.position().map_or(0, |p| p.record() as usize),
        column: String::new(),
        message: e.to_string(),
    }
}

/// Columns are located by header name; `x_<i>` and `s_<i>` must be
/// numbered `0..d` without gaps. Rows are reported 1-based, header excluded.
pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_io)?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let indexed = |prefix: &str| -> Result<Vec<usize>> {
        let mut cols: Vec<(usize, usize)> = Vec::new();
        for (pos, h) in header.iter().enumerate() {
            if let Some(rest) = h.strip_prefix(prefix) {
                let k: usize = rest.parse().map_err(|_| Error::Csv {
                    row: 0,
                    column: h.to_string(),
                    message: "bad column index".into(),
                })?;
                cols.push((k, pos));
            }
        }
        cols.sort_unstable();
        for (expect, (k, _)) in cols.iter().enumerate() {
            if *k != expect {
                return Err(Error::Csv {
                    row: 0,
                    column: format!("{prefix}{expect}"),
                    message: "missing column".into(),
                });
            }
        }
        Ok(cols.into_iter().map(|(_, p)| p).collect())
    };
    let missing = |name: &str| Error::Csv {
        row: 0,
        column: name.to_string(),
        message: "missing required column".into(),
    };
    let x_cols = indexed("x_")?;
    if x_cols.is_empty() {
        return Err(missing("x_0"));
    }
    let s_cols = indexed("s_")?;
    let t_col = find("t").ok_or_else(|| missing("t"))?;
    let y_col = find("y").ok_or_else(|| missing("y"))?;
    let y0_col = find("y0_true");
    let y1_col = find("y1_true");
    let tau_col = find("tau_true");
    let us_col = find("u_s");

    let mut x = Vec::new();
    let mut s = Vec::new();
    let (mut t, mut y, mut y0, mut y1, mut tau, mut us) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_io)?;
        let num = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Csv {
                row,
                column: header[col].to_string(),
                message: format!("cannot parse {raw:?} as a number"),
            })
        };
        for &c in &x_cols {
            x.push(num(c)?);
        }
        for &c in &s_cols {
            s.push(num(c)?);
        }
        let tv = num(t_col)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::Csv {
                row,
                column: "t".into(),
                message: format!("treatment must be 0 or 1, got {tv}"),
            });
        }
        t.push(tv as u8);
        y.push(num(y_col)?);
        if let Some(c) = y0_col {
            y0.push(num(c)?);
        }
        if let Some(c) = y1_col {
            y1.push(num(c)?);
        }
        if let Some(c) = tau_col {
            tau.push(num(c)?);
        }
        if let Some(c) = us_col {
            us.push(num(c)?);
        }
    }
    let n = t.len();
    if n == 0 {
        return Err(Error::Data("csv has no data rows".into()));
    }
    let x = Tensor::from_vec(n, x_cols.len(), x)?;
    let s = if s_cols.is_empty() {
        None
    } else {
        Some(Tensor::from_vec(n, s_cols.len(), s)?)
    };
    let mut ds = Dataset::new(x, t, s, y)?;
    if y0_col.is_some() && y1_col.is_some() {
        ds = ds.with_potential_outcomes(y0, y1)?;
    } else if tau_col.is_some() {
        ds = ds.with_tau(tau)?;
    }
    if us_col.is_some() {
        ds.u_s = Some(us);
    }
    Ok(ds)
}
