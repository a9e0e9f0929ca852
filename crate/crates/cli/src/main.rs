//! `hfv`: generate codes, simulate acquisition, recover, check isometry
//! constants and run experiments from the command line.
//!
//! Every subcommand prints one JSON line on success. Failures print a JSON
//! line `{"error": <kind>, "message": ...}` to stderr and exit with status 1
//! (2 for usage errors).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use hfv_core::codes::{ExposureCodeSet, Scheme};
use hfv_core::forward::acquire;
use hfv_core::harness::io::{
    export_frame, load_codes, load_measurements, load_volume, save_codes, save_measurements, save_volume,
};
use hfv_core::harness::{run_experiment, synth_scene, ExperimentConfig, SceneKind, SyntheticSceneSpec};
use hfv_core::ripcheck::{
    estimate_generalized_isometry, estimate_isometry, exhaustive_isometry, measurement_sufficiency_curve, signed_dense,
    sufficiency_csv, write_isometry_csv, Basis, IsometryReport, SufficiencyConfig,
};
use hfv_core::rng::PRNG_ID;
use hfv_core::solver::{noise_radius, recover, recover_blocks, BlockSpec, Fusion, RecoveryMode, SolverConfig};

#[derive(Parser, Debug)]
#[command(name = "hfv", version, about = "Coded-exposure high frame rate video toolkit")]
struct Cli {
    /// TOML file supplying defaults for flags (the experiment config for `experiment`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an exposure code set (HFVC).
    GenCodes(GenCodesArgs),
    /// Simulate coded acquisition of a volume (HFVV -> HFVM).
    Acquire(AcquireArgs),
    /// Recover a volume from measurements.
    Recover(RecoverArgs),
    /// Estimate isometry constants of signed code matrices.
    Rip(RipArgs),
    /// Run a Monte-Carlo experiment and write the CSV bundle.
    Experiment(ExperimentArgs),
    /// Synthesize a scripted scene (HFVV).
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct Geometry {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct GenCodesArgs {
    #[command(flatten)]
    geo: Geometry,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AcquireArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    /// Noise standard deviation in gray levels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FusionArg {
    Average,
    Weighted,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    /// Noise standard deviation; the constraint radius is sqrt(M) times this.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mode: Option<RecoveryMode>,
    /// Tiling as WxH+O.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Ground truth volume for PSNR.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BasisArg {
    Canonical,
    Dft,
}

#[derive(Args, Debug)]
struct RipArgs {
    #[command(flatten)]
    geo: Geometry,
    /// Sparsity order S.
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, value_enum, default_value = "canonical")]
    basis: BasisArg,
    /// Also enumerate every support.
    #[arg(long)]
    exhaustive: bool,
    /// Ratio against ||Theta f||^2 instead of a sparsity basis.
    #[arg(long)]
    generalized: bool,
    /// Append the always-open camera row.
    #[arg(long)]
    dc: bool,
    /// Comma-separated camera counts: sweep all schemes in the DFT basis instead.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one scheme.
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Comma-separated camera counts.
    #[arg(long, value_delimiter = ',')]
    cameras: Vec<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mode: Option<RecoveryMode>,
    #[arg(long)]
    blocks: Option<String>,
    /// Comma-separated T values for the frame-rate sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_frames: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneArg {
    Static,
    Moving,
    Occlusion,
    Fourier,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "moving")]
    scene: SceneArg,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Nonzero coefficient pairs for the Fourier scene.
    #[arg(long, default_value_t = 5)]
    sparsity: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every frame as PGM into this directory.
    #[arg(long)]
    pgm_dir: Option<PathBuf>,
}

/// Flag defaults read from `--config` for every subcommand but `experiment`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDefaults {
    seed: Option<u64>,
    scheme: Option<Scheme>,
    cameras: Option<usize>,
    frames: Option<usize>,
    width: Option<usize>,
    height: Option<usize>,
    sigma: Option<f64>,
    mode: Option<RecoveryMode>,
    blocks: Option<String>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    out: Option<PathBuf>,
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl From<hfv_core::Error> for CliError {
    fn from(e: hfv_core::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        kind: "config",
        message: message.into(),
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn load_defaults(path: Option<&Path>) -> CliResult<FileDefaults> {
    path.map(read_toml).transpose().map(Option::unwrap_or_default)
}

fn require<T>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| config_error(format!("--{name} is required (flag or config file)")))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn gen_codes(a: GenCodesArgs, d: FileDefaults) -> CliResult<serde_json::Value> {
    let scheme = require(a.geo.scheme.or(d.scheme), "scheme")?;
    let k = require(a.geo.cameras.or(d.cameras), "cameras")?;
    let t = require(a.geo.frames.or(d.frames), "frames")?;
    let nx = a.geo.width.or(d.width).unwrap_or(16);
    let ny = a.geo.height.or(d.height).unwrap_or(16);
    let seed = a.geo.seed.or(d.seed).unwrap_or(0);
    let out = a.out.or(d.out).unwrap_or_else(|| PathBuf::from("codes.hfvc"));
    let codes = ExposureCodeSet::generate(scheme, k, t, nx, ny, seed)?;
    ensure_parent(&out)?;
    save_codes(&codes, &out)?;
    Ok(json!({
        "command": "gen-codes",
        "out": out,
        "scheme": scheme.name(),
        "cameras": k, "frames": t, "width": nx, "height": ny, "seed": seed,
        "prng": PRNG_ID,
        "bit_mean": codes.expanded_bit_mean(),
        "closed_sequences": codes.closed_sequences(),
    }))
}

fn acquire_cmd(a: AcquireArgs, d: FileDefaults) -> CliResult<serde_json::Value> {
    let video = load_volume(&a.volume)?;
    let (codes, _) = load_codes(&a.codes)?;
    let sigma = a.sigma.or(d.sigma).unwrap_or(0.0);
    let seed = a.seed.or(d.seed).unwrap_or(0);
    let out = a.out.or(d.out).unwrap_or_else(|| PathBuf::from("measurements.hfvm"));
    let meas = acquire(&video, &codes, sigma, seed)?;
    ensure_parent(&out)?;
    save_measurements(&meas, &out)?;
    Ok(json!({
        "command": "acquire", "out": out, "measurements": meas.len(), "sigma": sigma,
    }))
}

fn parse_blocks(text: &str, fusion: Option<FusionArg>) -> CliResult<BlockSpec> {
    let f = match fusion {
        Some(FusionArg::Weighted) => Fusion::WeightedWindow,
        _ => Fusion::Average,
    };
    Ok(BlockSpec::parse(text, f)?)
}

fn recover_cmd(a: RecoverArgs, d: FileDefaults) -> CliResult<serde_json::Value> {
    let meas = load_measurements(&a.measurements)?;
    let (codes, _) = load_codes(&a.codes)?;
    let sigma = a.sigma.or(d.sigma).unwrap_or(meas.noise_sigma());
    let defaults = SolverConfig::default();
    let cfg = SolverConfig {
        mode: a.mode.or(d.mode).unwrap_or(defaults.mode),
        max_iters: a.max_iters.or(d.max_iters).unwrap_or(defaults.max_iters),
        tol: a.tol.or(d.tol).unwrap_or(defaults.tol),
        radius: noise_radius(sigma, meas.len()),
        ..defaults
    };
    let out = a.out.or(d.out).unwrap_or_else(|| PathBuf::from("recovery"));
    let mut rep = match a.blocks.or(d.blocks) {
        Some(b) => recover_blocks(&meas, &codes, &parse_blocks(&b, a.fusion)?, &cfg)?,
        None => recover(&meas, &codes, &cfg)?,
    };
    if let Some(p) = &a.truth {
        rep.attach_reference(&load_volume(p)?)?;
    }
    fs::create_dir_all(&out)?;
    save_volume(&rep.volume, out.join("recovered.hfvv"))?;
    rep.write_text(fs::File::create(out.join("report.txt"))?)?;
    rep.write_trace_csv(fs::File::create(out.join("trace.csv"))?)?;
    let mid = rep.volume.frames() / 2;
    export_frame(&rep.volume, mid, out.join(format!("frame_t{mid}.pgm")))?;
    Ok(json!({
        "command": "recover",
        "out": out,
        "mode": rep.mode.name(),
        "iterations": rep.iterations,
        "converged": rep.converged,
        "residual": rep.residual,
        "objective": rep.objective,
        "psnr_mean": rep.psnr.as_ref().map(|p| p.mean).filter(|m| m.is_finite()),
        "failed_tiles": rep.failed_tiles(),
        "fingerprint": rep.fingerprint,
    }))
}

fn rip_cmd(a: RipArgs, d: FileDefaults) -> CliResult<serde_json::Value> {
    let seed = a.geo.seed.or(d.seed).unwrap_or(0);
    let t = a.geo.frames.or(d.frames).unwrap_or(4);
    let nx = a.geo.width.or(d.width).unwrap_or(4);
    let ny = a.geo.height.or(d.height).unwrap_or(4);
    let out = a.out.or(d.out).unwrap_or_else(|| PathBuf::from("rip.csv"));
    ensure_parent(&out)?;
    if !a.sweep.is_empty() {
        let cfg = SufficiencyConfig {
            order: a.order,
            frames: t,
            width: nx,
            height: ny,
            cameras: a.sweep.clone(),
            code_draws: 4,
            trials: a.trials,
            seed,
        };
        let schemes = match a.geo.scheme.or(d.scheme) {
            Some(s) => vec![s],
            None => Scheme::ALL.to_vec(),
        };
        let rows = measurement_sufficiency_curve(&schemes, &cfg)?;
        sufficiency_csv(&rows, fs::File::create(&out)?)?;
        return Ok(json!({"command": "rip", "out": out, "rows": rows.len()}));
    }
    let scheme = require(a.geo.scheme.or(d.scheme), "scheme")?;
    let k = require(a.geo.cameras.or(d.cameras), "cameras")?;
    let codes = ExposureCodeSet::generate(scheme, k, t, nx, ny, seed)?;
    let matrix = signed_dense(&codes, a.dc)?;
    let basis = match a.basis {
        BasisArg::Canonical => Basis::Canonical,
        BasisArg::Dft => Basis::Dft3 {
            frames: t,
            width: nx,
            height: ny,
        },
    };
    let mut reports: Vec<(String, IsometryReport)> = Vec::new();
    if a.generalized {
        reports.push((
            scheme.name().into(),
            estimate_generalized_isometry(&matrix, (t, nx, ny), a.order, a.trials, seed)?,
        ));
    } else {
        reports.push((
            scheme.name().into(),
            estimate_isometry(&matrix, basis, a.order, a.trials, seed)?,
        ));
        if a.exhaustive {
            reports.push((scheme.name().into(), exhaustive_isometry(&matrix, basis, a.order)?));
        }
    }
    write_isometry_csv(&reports, fs::File::create(&out)?)?;
    let deltas: Vec<f64> = reports.iter().map(|(_, r)| r.delta_hat).collect();
    Ok(json!({"command": "rip", "out": out, "delta_hat": deltas}))
}

fn experiment_cmd(a: ExperimentArgs, config: Option<&Path>) -> CliResult<serde_json::Value> {
    let mut cfg: ExperimentConfig = match config {
        Some(p) => read_toml(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(s) = a.scheme {
        cfg.schemes = vec![s];
    }
    if !a.cameras.is_empty() {
        cfg.cameras = a.cameras;
    }
    if let Some(t) = a.frames {
        cfg.scene.frames = t;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(s) = a.sigma {
        cfg.noise_std = s;
    }
    if let Some(m) = a.mode {
        cfg.solver.mode = m;
    }
    if let Some(b) = a.blocks {
        cfg.blocks = Some(parse_blocks(&b, None)?);
    }
    if !a.sweep_frames.is_empty() {
        cfg.frame_rate_sweep = a.sweep_frames;
    }
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    let rep = run_experiment(&cfg)?;
    let table: Vec<_> = rep
        .table
        .iter()
        .map(|c| json!({"scheme": c.scheme.name(), "K": c.cameras, "mean_psnr": c.mean_psnr, "failed": c.failed}))
        .collect();
    Ok(json!({
        "command": "experiment",
        "out": cfg.output_dir,
        "runs": rep.runs.len(),
        "files": rep.files.len(),
        "table": table,
    }))
}

fn synth_cmd(a: SynthArgs, d: FileDefaults) -> CliResult<serde_json::Value> {
    let t = a.frames.or(d.frames).unwrap_or(8);
    let nx = a.width.or(d.width).unwrap_or(16);
    let ny = a.height.or(d.height).unwrap_or(16);
    let kind = match a.scene {
        SceneArg::Static => SceneKind::StaticLinearPatch,
        SceneArg::Moving => SceneKind::MovingLinearPatch,
        SceneArg::Occlusion => SceneKind::TwoObjectOcclusion,
        SceneArg::Fourier => SceneKind::FourierSparse { sparsity: a.sparsity },
    };
    let spec = SyntheticSceneSpec {
        seed: a.seed.or(d.seed).unwrap_or(0),
        ..SyntheticSceneSpec::moving_patch(t, nx, ny)
    }
    .with_kind(kind);
    let video = synth_scene(&spec)?;
    let out = a.out.or(d.out).unwrap_or_else(|| PathBuf::from("scene.hfvv"));
    ensure_parent(&out)?;
    save_volume(&video, &out)?;
    if let Some(dir) = &a.pgm_dir {
        fs::create_dir_all(dir)?;
        for f in 0..t {
            export_frame(&video, f, dir.join(format!("frame_{f:04}.pgm")))?;
        }
    }
    Ok(json!({"command": "synth", "out": out, "scene": kind.name(), "frames": t, "width": nx, "height": ny}))
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Experiment(a) => experiment_cmd(a, config),
        other => {
            let d = load_defaults(config)?;
            match other {
                Command::GenCodes(a) => gen_codes(a, d),
                Command::Acquire(a) => acquire_cmd(a, d),
                Command::Recover(a) => recover_cmd(a, d),
                Command::Rip(a) => rip_cmd(a, d),
                Command::Synth(a) => synth_cmd(a, d),
                Command::Experiment(_) => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind, "message": e.message}));
            ExitCode::FAILURE
        }
    }
}
