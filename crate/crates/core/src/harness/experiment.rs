//! Monte-Carlo experiments over schemes, camera counts and code draws.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::export_frame;
use super::scene::{synth_scene, SyntheticSceneSpec};
use crate::codes::{ExposureCodeSet, Scheme};
use crate::error::{Error, Result};
use crate::forward::{acquire, VideoVolume};
use crate::rng::derive_seed;
use crate::solver::{noise_radius, recover, recover_blocks, BlockSpec, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SyntheticSceneSpec,
    pub schemes: Vec<Scheme>,
    pub cameras: Vec<usize>,
    pub runs: usize,
    /// Standard deviation of the additive measurement noise, in gray levels.
    pub noise_std: f64,
    /// Solver settings; `radius` is replaced by the noise-matched radius.
    pub solver: SolverConfig,
    pub blocks: Option<BlockSpec>,
    /// Frames per shot for the target-frame-rate sweep; empty disables it.
    pub frame_rate_sweep: Vec<usize>,
    /// Camera count used by the sweep; defaults to the largest of `cameras`.
    pub sweep_cameras: Option<usize>,
    pub camera_fps: f64,
    pub snapshots: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SyntheticSceneSpec::default(),
            schemes: Scheme::ALL.to_vec(),
            cameras: vec![2, 4, 6, 8],
            runs: 10,
            noise_std: 1.0,
            solver: SolverConfig::default(),
            blocks: None,
            frame_rate_sweep: Vec::new(),
            sweep_cameras: None,
            camera_fps: 60.0,
            snapshots: true,
            master_seed: 2016,
            output_dir: PathBuf::from("experiment-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.schemes.is_empty() || self.cameras.is_empty() {
            return Err(Error::InvalidConfig(
                "need at least one scheme and one camera count".into(),
            ));
        }
        if self.cameras.contains(&0) || self.frame_rate_sweep.contains(&0) {
            return Err(Error::InvalidConfig("camera and frame counts must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig("noise_std must be finite and >= 0".into()));
        }
        self.scene.validate()?;
        self.solver.validate()?;
        if let Some(b) = &self.blocks {
            b.validate(self.scene.width, self.scene.height)?;
        }
        Ok(())
    }

    fn sweep_k(&self) -> usize {
        self.sweep_cameras
            .unwrap_or_else(|| *self.cameras.iter().max().expect("validated non-empty"))
    }
}

/// Seed of the exposure codes for one `(scheme, K, T, run)` cell.
pub fn code_seed(master: u64, scheme: Scheme, cameras: usize, frames: usize, run: usize) -> u64 {
    derive_seed(
        master,
        &[u64::from(scheme.tag()), cameras as u64, frames as u64, run as u64],
    )
}

/// Seed of the measurement noise for a cell with the given code seed.
pub fn noise_seed(code_seed: u64) -> u64 {
    derive_seed(code_seed, &[0x004e_015e])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub cameras: usize,
    pub frames: usize,
    pub run: usize,
    pub seed: u64,
    /// Per-frame PSNR; empty when the run failed.
    pub psnr: Vec<f64>,
    /// Mean of `psnr`; NaN when the run failed.
    pub mean_psnr: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub closed_sequences: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub cameras: usize,
    pub frames: usize,
    pub runs: usize,
    pub failed: usize,
    /// Mean over successful runs of the per-run mean PSNR.
    pub mean_psnr: f64,
    /// Sample standard deviation of the per-run means.
    pub std_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub table: Vec<CellSummary>,
    pub sweep: Vec<CellSummary>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn cell(&self, scheme: Scheme, cameras: usize) -> Option<&CellSummary> {
        self.table.iter().find(|c| c.scheme == scheme && c.cameras == cameras)
    }

    pub fn runs_of(&self, scheme: Scheme, cameras: usize) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.scheme == scheme && r.cameras == cameras)
    }
}

struct Cell {
    scheme: Scheme,
    cameras: usize,
    run: usize,
}

fn run_cell(cfg: &ExperimentConfig, truth: &VideoVolume, cell: &Cell) -> (RunRecord, Option<VideoVolume>) {
    let (t_n, nx, ny) = truth.dims();
    let seed = code_seed(cfg.master_seed, cell.scheme, cell.cameras, t_n, cell.run);
    let mut rec = RunRecord {
        scheme: cell.scheme,
        cameras: cell.cameras,
        frames: t_n,
        run: cell.run,
        seed,
        psnr: Vec::new(),
        mean_psnr: f64::NAN,
        iterations: 0,
        converged: false,
        residual: f64::NAN,
        closed_sequences: 0,
        error: None,
    };
    let outcome = (|| -> Result<(crate::solver::RecoveryReport, usize)> {
        let codes = ExposureCodeSet::generate(cell.scheme, cell.cameras, t_n, nx, ny, seed)?;
        let meas = acquire(truth, &codes, cfg.noise_std, noise_seed(seed))?;
        let solver = SolverConfig {
            radius: noise_radius(cfg.noise_std, meas.len()),
            ..cfg.solver.clone()
        };
        let mut rep = match &cfg.blocks {
            Some(b) => recover_blocks(&meas, &codes, b, &solver)?,
            None => recover(&meas, &codes, &solver)?,
        };
        rep.attach_reference(truth)?;
        Ok((rep, codes.closed_sequences()))
    })();
    match outcome {
        Ok((rep, closed)) => {
            let p = rep.psnr.clone().expect("reference attached");
            rec.psnr = p.per_frame;
            rec.mean_psnr = p.mean;
            rec.iterations = rep.iterations;
            rec.converged = rep.converged;
            rec.residual = rep.residual;
            rec.closed_sequences = closed;
            (rec, Some(rep.volume))
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            (rec, None)
        }
    }
}

fn summarize(records: &[&RunRecord]) -> CellSummary {
    let first = records[0];
    let ok: Vec<f64> = records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.mean_psnr)
        .collect();
    let n = ok.len() as f64;
    let mean = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().sum::<f64>() / n
    };
    let std = if ok.len() < 2 {
        0.0
    } else {
        (ok.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    CellSummary {
        scheme: first.scheme,
        cameras: first.cameras,
        frames: first.frames,
        runs: records.len(),
        failed: records.len() - ok.len(),
        mean_psnr: mean,
        std_psnr: std,
    }
}

fn run_grid(
    cfg: &ExperimentConfig,
    truth: &VideoVolume,
    cameras: &[usize],
) -> (Vec<RunRecord>, Vec<Option<VideoVolume>>, Vec<CellSummary>) {
    let cells: Vec<Cell> = cfg
        .schemes
        .iter()
        .flat_map(|&scheme| {
            cameras.iter().flat_map(move |&k| {
                (0..cfg.runs).map(move |run| Cell {
                    scheme,
                    cameras: k,
                    run,
                })
            })
        })
        .collect();
    let (records, volumes): (Vec<_>, Vec<_>) = cells
        .par_iter()
        .map(|c| run_cell(cfg, truth, c))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    let summaries = records
        .chunks(cfg.runs)
        .map(|chunk| summarize(&chunk.iter().collect::<Vec<_>>()))
        .collect();
    (records, volumes, summaries)
}

fn fmt(x: f64) -> String {
    x.to_string()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the full grid and writes the report bundle under `cfg.output_dir`.
///
/// Per-run solver failures are recorded in `runs.csv`; the bundle is
/// written regardless.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let truth = synth_scene(&cfg.scene)?;
    let (runs, volumes, table) = run_grid(cfg, &truth, &cfg.cameras);

    let mut sweep = Vec::new();
    let mut sweep_runs = Vec::new();
    if !cfg.frame_rate_sweep.is_empty() {
        let k = cfg.sweep_k();
        for &t in &cfg.frame_rate_sweep {
            let scene = SyntheticSceneSpec {
                frames: t,
                ..cfg.scene.clone()
            };
            let truth_t = synth_scene(&scene)?;
            let (r, _, s) = run_grid(cfg, &truth_t, &[k]);
            sweep_runs.extend(r);
            sweep.extend(s);
        }
    }

    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("curves"))?;
    let mut files = Vec::new();

    // per-run PSNR curves, one file per (scheme, K)
    for chunk in runs.chunks(cfg.runs) {
        let first = &chunk[0];
        let path = out
            .join("curves")
            .join(format!("curves_{}_K{}.csv", first.scheme.name(), first.cameras));
        let mut rows = Vec::new();
        for r in chunk {
            for (t, p) in r.psnr.iter().enumerate() {
                rows.push(vec![r.run.to_string(), r.seed.to_string(), t.to_string(), fmt(*p)]);
            }
        }
        write_csv(&path, &["run", "seed", "frame", "psnr"], &rows)?;
        files.push(path);
    }

    // mean-PSNR table: rows scheme, columns K
    let scene_name = cfg.scene.kind.name().to_string();
    let mut header = vec!["scene".to_string(), "scheme".to_string()];
    header.extend(cfg.cameras.iter().map(|k| format!("K={k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = cfg
        .schemes
        .iter()
        .map(|&s| {
            let mut row = vec![scene_name.clone(), s.name().to_string()];
            for &k in &cfg.cameras {
                let c = table
                    .iter()
                    .find(|c| c.scheme == s && c.cameras == k)
                    .expect("cell exists");
                row.push(fmt(c.mean_psnr));
            }
            row
        })
        .collect();
    let path = out.join("table.csv");
    write_csv(&path, &header_refs, &rows)?;
    files.push(path);

    let (nx, ny) = (cfg.scene.width, cfg.scene.height);
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|c| {
            vec![
                c.scheme.name().to_string(),
                c.cameras.to_string(),
                (c.cameras * nx * ny).to_string(),
                fmt(c.mean_psnr),
                fmt(c.std_psnr),
                c.runs.to_string(),
                c.failed.to_string(),
            ]
        })
        .collect();
    let path = out.join("psnr_vs_cameras.csv");
    write_csv(
        &path,
        &["scheme", "K", "M", "mean_psnr", "std_psnr", "runs", "failed"],
        &rows,
    )?;
    files.push(path);

    if !sweep.is_empty() {
        let rows: Vec<Vec<String>> = sweep
            .iter()
            .map(|c| {
                vec![
                    c.scheme.name().to_string(),
                    c.frames.to_string(),
                    fmt(cfg.camera_fps * c.frames as f64),
                    c.cameras.to_string(),
                    fmt(c.mean_psnr),
                    fmt(c.std_psnr),
                    c.runs.to_string(),
                ]
            })
            .collect();
        let path = out.join("psnr_vs_frame_rate.csv");
        write_csv(
            &path,
            &["scheme", "T", "target_fps", "K", "mean_psnr", "std_psnr", "runs"],
            &rows,
        )?;
        files.push(path);
    }

    let rows: Vec<Vec<String>> = runs
        .iter()
        .chain(&sweep_runs)
        .map(|r| {
            vec![
                r.scheme.name().to_string(),
                r.cameras.to_string(),
                r.frames.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                fmt(r.mean_psnr),
                r.iterations.to_string(),
                r.converged.to_string(),
                fmt(r.residual),
                r.closed_sequences.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let path = out.join("runs.csv");
    write_csv(
        &path,
        &[
            "scheme",
            "K",
            "T",
            "run",
            "seed",
            "mean_psnr",
            "iterations",
            "converged",
            "residual",
            "closed_sequences",
            "error",
        ],
        &rows,
    )?;
    files.push(path);

    if cfg.snapshots {
        let dir = out.join("snapshots");
        fs::create_dir_all(&dir)?;
        let mid = truth.frames() / 2;
        let path = dir.join(format!("truth_t{mid}.pgm"));
        export_frame(&truth, mid, &path)?;
        files.push(path);
        for (r, v) in runs.iter().zip(&volumes) {
            if let (0, Some(v)) = (r.run, v) {
                let path = dir.join(format!("{}_K{}_t{mid}.pgm", r.scheme.name(), r.cameras));
                export_frame(v, mid, &path)?;
                files.push(path);
            }
        }
    }

    Ok(ExperimentReport {
        runs,
        table,
        sweep,
        files,
    })
}
