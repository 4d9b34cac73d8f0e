//! On-disk layout: `<out>/<experiment>/<dim>/<seed>/` holds `manifest.json`,
//! `diagnostics.csv` and `final_state.csv` for each run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mollivi_core::optimizer::{read_diagnostics_csv, write_diagnostics_csv};
use mollivi_core::target::TargetDocument;
use mollivi_core::theory::{CheckReport, SmoothnessConstant};
use mollivi_core::{DiagnosticsRecord, ParticleState, RunConfig, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, IoContext};

pub const SCHEMA: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const FINAL_STATE: &str = "final_state.csv";
pub const ABORT_STATE: &str = "abort_state.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub version: String,
    pub experiment: String,
    pub dim: usize,
    pub seed: u64,
    pub target_spec: TargetSpec,
    pub run: RunConfig,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<SmoothnessConstant>,
    pub target: TargetDocument,
    pub config: ExperimentConfig,
}

impl Manifest {
    /// True when this manifest describes exactly the run `(spec, run)`.
    pub fn matches(&self, spec: &TargetSpec, run: &RunConfig) -> bool {
        self.schema == SCHEMA && &self.target_spec == spec && &self.run == run
    }
}

pub fn run_dir(out: &Path, experiment: &str, dim: usize, seed: u64) -> PathBuf {
    out.join(experiment).join(dim.to_string()).join(seed.to_string())
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).at(dir)
}

pub fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let file = File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().at(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").at(path)
    })
}

pub fn write_run(
    dir: &Path,
    manifest: &Manifest,
    records: &[DiagnosticsRecord],
    final_state: &ParticleState,
) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(MANIFEST), manifest)?;
    write_with(&dir.join(DIAGNOSTICS), |w| Ok(write_diagnostics_csv(records, w)?))?;
    write_with(&dir.join(FINAL_STATE), |w| {
        Ok(ParticleState::write_snapshot_csv(&[final_state], w)?)
    })
}

pub fn write_abort(dir: &Path, manifest: &Manifest, snapshot: &ParticleState) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(MANIFEST), manifest)?;
    write_with(&dir.join(ABORT_STATE), |w| Ok(ParticleState::write_snapshot_csv(&[snapshot], w)?))
}

/// Loads a finished run if it exists and matches `(spec, run)`.
pub fn load_run(
    dir: &Path,
    spec: &TargetSpec,
    run: &RunConfig,
) -> Result<Option<(Manifest, Vec<DiagnosticsRecord>)>, CliError> {
    let (mpath, dpath) = (dir.join(MANIFEST), dir.join(DIAGNOSTICS));
    if !mpath.is_file() || !dpath.is_file() || !dir.join(FINAL_STATE).is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mpath).at(&mpath)?;
    let manifest: Manifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(_) => return Ok(None),
    };
    if !manifest.matches(spec, run) {
        return Ok(None);
    }
    let file = File::open(&dpath).at(&dpath)?;
    Ok(Some((manifest, read_diagnostics_csv(file)?)))
}

pub fn write_report(dir: &Path, stem: &str, report: &CheckReport) -> Result<(), CliError> {
    create_dir(dir)?;
    let json = dir.join(format!("{stem}.json"));
    write_with(&json, |w| Ok(report.write_json(w)?))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_with(&csv_path, |w| Ok(report.write_csv(w)?))
}

/// One row of an aggregated figure series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureRow {
    pub x: f64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub dim: usize,
}

/// Mean and 95% interval across seeds at each `x`; `series[r][i]` is seed
/// `r` at `xs[i]`.
pub fn aggregate(xs: &[f64], series: &[Vec<f64>], dim: usize) -> Vec<FigureRow> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let ys: Vec<f64> = series.iter().map(|s| s[i]).collect();
            let (mean, ci_lo, ci_hi) = mollivi_core::stats::mean_ci95(&ys);
            FigureRow { x, mean, ci_lo, ci_hi, dim }
        })
        .collect()
}

pub fn write_figure(path: &Path, rows: &[FigureRow]) -> Result<(), CliError> {
    write_with(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let wrap = |e: csv::Error| CliError::Core(e.into());
        out.write_record(["x", "mean", "ci_lo", "ci_hi", "dim"]).map_err(wrap)?;
        for r in rows {
            out.write_record([
                r.x.to_string(),
                r.mean.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
                r.dim.to_string(),
            ])
            .map_err(wrap)?;
        }
        out.flush().at(path)
    })
}
