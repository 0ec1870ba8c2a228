use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::{resolve_key, Config, Experiment};
use crate::error::{Error, Result};
use crate::eval::SeedMetrics;
use crate::losses::Diagnostics;

/// Cartesian grid of config overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    /// Parses `key=v1,v2;key2=v3` (also accepts one axis per string via
    /// [`SweepGrid::push_axis`]).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut g = Self::default();
        for axis in spec.split(';').map(str::trim).filter(|a| !a.is_empty()) {
            g.push_axis(axis)?;
        }
        Ok(g)
    }

    pub fn push_axis(&mut self, axis: &str) -> Result<()> {
        let (k, vs) = axis
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis {axis:?} must look like key=v1,v2")))?;
        let key = resolve_key(k)?.to_string();
        let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis {k} has no values")));
        }
        if self.axes.iter().any(|(existing, _)| *existing == key) {
            return Err(Error::Config(format!("grid axis {key} given twice")));
        }
        self.axes.push((key, values));
        Ok(())
    }

    /// Cells in row-major order, last axis fastest.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut out = vec![Vec::new()];
        for (k, vs) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vs.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((k.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Save each cell's trained bundle next to its record.
    pub keep_checkpoints: bool,
}

/// Persisted outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: String,
    pub overrides: Vec<(String, String)>,
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub metrics: Option<SeedMetrics>,
    pub best_epoch: Option<u32>,
    pub epochs_run: Option<u32>,
    pub ipm_skipped: Option<u32>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub cells: Vec<CellResult>,
    pub resumed: usize,
    pub failed: usize,
}

fn cell_config(base: &Config, overrides: &[(String, String)]) -> Result<Config> {
    let mut c = base.clone();
    for (k, v) in overrides {
        c.set(k, v)?;
    }
    Ok(c)
}

/// Runs one configured pipeline and packs the result. Failures become a
/// record with `ok = false`.
pub fn run_cell(cfg: &Config, overrides: &[(String, String)], checkpoint: Option<&Path>) -> CellResult {
    let mut res = CellResult {
        cell_id: cfg.hash(),
        overrides: overrides.to_vec(),
        config_hash: cfg.hash(),
        method: cfg.raw("train.method").unwrap_or("").to_string(),
        seed: cfg.seed().unwrap_or(0),
        ok: false,
        error: None,
        metrics: None,
        best_epoch: None,
        epochs_run: None,
        ipm_skipped: None,
        diagnostics: None,
    };
    let run = || -> Result<_> {
        let exp = Experiment::from_config(cfg)?;
        let out = exp.run()?;
        if let Some(p) = checkpoint {
            out.bundle.save(p)?;
        }
        Ok(out)
    };
    match run() {
        Ok(out) => {
            res.ok = true;
            res.metrics = Some(out.metrics);
            res.best_epoch = Some(out.trace.best_epoch);
            res.epochs_run = Some(out.trace.records.len() as u32);
            res.ipm_skipped = Some(out.trace.ipm_skipped_total());
            res.diagnostics = out.diagnostics;
        }
        Err(e) => res.error = Some(e.to_string()),
    }
    res
}

fn write_atomic(path: &Path, body: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn aggregate_csv(cells: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record([
        "cell_id", "overrides", "method", "seed", "ok", "pehe_in", "pehe_out", "cf_error_mean", "cf_error_var",
        "best_epoch", "error",
    ])
    .map_err(csv_err)?;
    for c in cells {
        let m = c.metrics.as_ref();
        let num = |f: fn(&SeedMetrics) -> f64| m.map(|m| f(m).to_string()).unwrap_or_default();
        let overrides: Vec<String> = c.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.write_record([
            c.cell_id.clone(),
            overrides.join(";"),
            c.method.clone(),
            c.seed.to_string(),
            c.ok.to_string(),
            num(|m| m.pehe_in),
            num(|m| m.pehe_out),
            num(|m| m.cf_error_mean),
            num(|m| m.cf_error_var),
            c.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs every cell of `grid` over `base`. Each finished cell is written to
/// `cells/<id>.json` at once; cells with an existing successful record are
/// not rerun. `results.csv` is rewritten at the end in grid order.
pub fn sweep(base: &Config, grid: &SweepGrid, opts: &SweepOptions) -> Result<SweepSummary> {
    let cell_dir = opts.out_dir.join("cells");
    std::fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
    let cells = grid.cells();
    let configs = cells.iter().map(|o| cell_config(base, o)).collect::<Result<Vec<_>>>()?;
    for c in &configs {
        Experiment::from_config(c)?;
    }
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let resumed = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let worker = || -> Result<()> {
        loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= cells.len() {
                return Ok(());
            }
            let id = configs[i].hash();
            let path = cell_dir.join(format!("{id}.json"));
            if let Ok(text) = std::fs::read_to_string(&path) {
                if let Ok(prev) = serde_json::from_str::<CellResult>(&text) {
                    if prev.ok {
                        resumed.fetch_add(1, Ordering::SeqCst);
                        results.lock().expect("result lock")[i] = Some(prev);
                        continue;
                    }
                }
            }
            let ckpt = opts.keep_checkpoints.then(|| cell_dir.join(format!("{id}.bundle.json")));
            let res = run_cell(&configs[i], &cells[i], ckpt.as_deref());
            write_atomic(&path, &serde_json::to_string_pretty(&res)?)?;
            results.lock().expect("result lock")[i] = Some(res);
        }
    };
    let workers = opts.workers.max(1).min(cells.len().max(1));
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|_| s.spawn(&worker)).collect();
        handles.into_iter().try_for_each(|h| h.join().expect("sweep worker panicked"))
    })?;
    let cells: Vec<CellResult> = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    let csv_path = opts.out_dir.join("results.csv");
    write_atomic(&csv_path, &aggregate_csv(&cells)?)?;
    Ok(SweepSummary {
        failed: cells.iter().filter(|c| !c.ok).count(),
        resumed: resumed.into_inner(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian_last_axis_fastest() {
        let g = SweepGrid::parse("gamma=0,1;seed=3,4,5").unwrap();
        let cells = g.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1], vec![("train.gamma".into(), "0".into()), ("seed".into(), "4".into())]);
    }

    #[test]
    fn empty_grid_is_one_cell() {
        assert_eq!(SweepGrid::default().cells(), vec![Vec::<(String, String)>::new()]);
    }

    #[test]
    fn bad_axes_rejected() {
        assert!(SweepGrid::parse("gamma").is_err());
        assert!(SweepGrid::parse("nope=1").is_err());
        assert!(SweepGrid::parse("gamma=1;train.gamma=2").is_err());
    }
}
