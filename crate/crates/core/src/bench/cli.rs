//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
//! 3 when more than half of a phase grid's trials timed out.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, CloudModel, InstanceSpec, PhaseGrid, TrialMethod};
use crate::bm::{self, BmConfig, StepRule};
use crate::certificate::{certify, CertifyOptions};
use crate::error::{Error, Result};
use crate::format;
use crate::gpm::{self, GpmConfig, InitMode};
use crate::model::{build_data_matrix, build_gram, center, GramMatrix, PointCloudSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gopp", version, about = "Generalized orthogonal Procrustes solver and experiments")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic instance to a directory
    Generate(GenerateArgs),
    /// Generalized power method on a cloud-set file
    Solve(SolveArgs),
    /// Certify a stack against a Gram matrix
    Certify(CertifyArgs),
    /// Burer-Monteiro ascent on a cloud-set file
    Bm(BmArgs),
    /// Monte Carlo phase grid to CSV
    Phase(PhaseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "uniform_cube", alias = "uniform")]
    UniformCube,
    #[value(name = "standard_normal", alias = "normal")]
    StandardNormal,
}

impl From<ModelArg> for CloudModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::UniformCube => CloudModel::UniformCube,
            ModelArg::StandardNormal => CloudModel::StandardNormal,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "uniform_cube")]
    model: ModelArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw random shifts
    #[arg(long)]
    shifts: bool,
    /// Draw Haar-random transforms instead of identities
    #[arg(long)]
    haar: bool,
    /// Output directory (clouds.txt, truth.txt, rotations.txt, gram.txt)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Spectral,
    Random,
    Provided,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Cloud-set file
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "spectral")]
    init: InitArg,
    /// Initial stack file for --init provided
    #[arg(long)]
    initial: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Center clouds before building the Gram matrix
    #[arg(long)]
    center: bool,
    #[arg(long, default_value_t = 1e-6)]
    stat_tol: f64,
    /// Wall-clock cap in seconds
    #[arg(long)]
    time_limit: Option<f64>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the gauge-fixed solution as a stack file
    #[arg(long)]
    solution_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// Gram matrix file
    #[arg(long)]
    gram: PathBuf,
    /// Stack file
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    stat_tol: f64,
    #[arg(long, default_value_t = 0.0)]
    psd_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BmArgs {
    #[arg(long)]
    input: PathBuf,
    /// Columns per block (default 2d+1)
    #[arg(long)]
    p: Option<usize>,
    /// Fixed step size; Armijo backtracking when absent
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    grad_tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    center: bool,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(name = "gpm_spectral")]
    GpmSpectral,
    #[value(name = "gpm_random")]
    GpmRandom,
    Bm,
}

#[derive(Debug, Args)]
struct PhaseArgs {
    #[arg(long, value_enum, default_value = "uniform_cube")]
    model: ModelArg,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    m_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    sigma_list: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "gpm_random")]
    method: MethodArg,
    /// Columns per block for --method bm (default 2d+1)
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    shifts: bool,
    #[arg(long)]
    haar: bool,
    /// Per-trial wall-clock cap in seconds
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let mut stderr = std::io::stderr();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

/// Splices `--key value` pairs from a `--config` file in front of the
/// command-line flags so that explicit flags win.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            let path = iter.next().ok_or_else(|| Error::InvalidArgument("--config needs a file".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(path) = arg.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let entries = format::parse_config(&fs::read_to_string(&path)?)?;
    let mut injected = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    // the subcommand is the first token after the program name
    let at = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2);
    match at {
        Some(at) => {
            let tail = rest.split_off(at);
            rest.extend(injected);
            rest.extend(tail);
            Ok(rest)
        }
        None => Ok(rest),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Bm(a) => bm_cmd(a),
        Command::Phase(a) => phase(a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn seconds(value: Option<f64>) -> Result<Option<Duration>> {
    value
        .map(|s| Duration::try_from_secs_f64(s).map_err(|_| Error::InvalidArgument(format!("bad time limit {s}"))))
        .transpose()
}

fn read_clouds(path: &Path) -> Result<PointCloudSet> {
    format::parse_cloud_set(&fs::read_to_string(path)?)
}

fn gram_of(clouds: &PointCloudSet, center_first: bool) -> Result<GramMatrix> {
    let c = build_gram(clouds, center_first);
    if !c.as_matrix().iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("gram matrix overflowed".into()));
    }
    Ok(c)
}

fn generate(a: GenerateArgs) -> Result<i32> {
    let spec = InstanceSpec {
        model: a.model.into(),
        n: a.n,
        m: a.m,
        d: a.d,
        sigma: a.sigma,
        with_shifts: a.shifts,
        haar: a.haar,
        seed: a.seed,
    };
    let inst = bench::generate_instance(&spec)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("clouds.txt"), format::write_cloud_set(&inst.observed))?;
    fs::write(a.out.join("truth.txt"), format::write_cloud(&inst.truth))?;
    fs::write(a.out.join("rotations.txt"), format::write_stack(&inst.rotations))?;
    fs::write(a.out.join("gram.txt"), format::write_gram(&inst.gram()))?;
    Ok(EXIT_OK)
}

fn solve(a: SolveArgs) -> Result<i32> {
    let clouds = read_clouds(&a.input)?;
    let c = gram_of(&clouds, a.center)?;
    let init = match a.init {
        InitArg::Spectral => InitMode::Spectral,
        InitArg::Random => InitMode::Random,
        InitArg::Provided => InitMode::Provided,
    };
    let cfg = GpmConfig {
        tol: a.tol,
        max_iter: a.max_iter,
        init,
        seed: a.seed,
        time_limit: seconds(a.time_limit)?,
        ..Default::default()
    };
    let data = if a.center {
        build_data_matrix(&PointCloudSet::new(clouds.clouds().iter().map(center).collect())?)
    } else {
        build_data_matrix(&clouds)
    };
    let initial = match &a.initial {
        Some(path) => Some(format::parse_stiefel_stack(&fs::read_to_string(path)?)?),
        None => None,
    };
    let mut report = gpm::solve(&c, &cfg, Some(&data), initial.as_ref())?;
    let opts = CertifyOptions { stat_tol: a.stat_tol, ..Default::default() };
    report.certificate = Some(certify(&c, &report.solution, &opts)?);
    if let Some(path) = &a.solution_out {
        fs::write(path, format::write_stack(&report.solution))?;
    }
    emit(&report.to_json()?, a.out.as_deref())?;
    Ok(if report.timed_out { EXIT_TIMEOUT } else { EXIT_OK })
}

fn certify_cmd(a: CertifyArgs) -> Result<i32> {
    let c = format::parse_gram(&fs::read_to_string(&a.gram)?)?;
    let s = format::parse_stack(&fs::read_to_string(&a.stack)?)?;
    let opts = CertifyOptions { stat_tol: a.stat_tol, psd_tol: a.psd_tol, ..Default::default() };
    let cert = certify(&c, &s, &opts)?;
    emit(&serde_json::to_string_pretty(&cert)?, a.out.as_deref())?;
    Ok(EXIT_OK)
}

fn bm_cmd(a: BmArgs) -> Result<i32> {
    let clouds = read_clouds(&a.input)?;
    let c = gram_of(&clouds, a.center)?;
    let step = match a.step {
        Some(eta) => StepRule::Fixed(eta),
        None => StepRule::default(),
    };
    let cfg = BmConfig {
        p: a.p,
        step,
        grad_tol: a.grad_tol,
        max_iter: a.max_iter,
        seed: a.seed,
        time_limit: seconds(a.time_limit)?,
    };
    let mut report = bm::solve_bm(&c, &cfg, None)?;
    let rounded = bm::round_to_orthogonal(&report.solution)?;
    report.certificate = Some(certify(&c, &rounded.stack, &CertifyOptions::default())?);
    emit(&report.to_json()?, a.out.as_deref())?;
    Ok(if report.timed_out { EXIT_TIMEOUT } else { EXIT_OK })
}

fn phase(a: PhaseArgs) -> Result<i32> {
    let mut grid = PhaseGrid::new(a.model.into(), a.d, a.m_list, a.n_list, a.sigma_list);
    grid.trials_per_cell = a.trials;
    grid.base_seed = a.seed;
    grid.with_shifts = a.shifts;
    grid.haar = a.haar;
    grid.trial.timeout = seconds(Some(a.timeout))?.expect("set");
    let method = match a.method {
        MethodArg::GpmSpectral => TrialMethod::GpmSpectral,
        MethodArg::GpmRandom => TrialMethod::GpmRandom,
        MethodArg::Bm => TrialMethod::Bm(a.p.unwrap_or(2 * a.d + 1)),
    };
    let rows = bench::phase_diagram(&grid, method)?;
    emit(&bench::phase_csv(&rows)?, a.out.as_deref())?;
    let trials: usize = rows.iter().map(|r| r.trials).sum();
    let timeouts: usize = rows.iter().map(|r| r.timeouts).sum();
    Ok(if 2 * timeouts > trials { EXIT_TIMEOUT } else { EXIT_OK })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_tokens_precede_flags() {
        let dir = std::env::temp_dir().join(format!("gopp-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.cfg");
        fs::write(&path, "trials = 5\nshifts = true\nhaar = false\nm_list = 5,6\n").unwrap();
        let out = apply_config(os(&[
            "gopp", "phase", "--config", path.to_str().unwrap(), "--trials", "7", "--n-list", "3", "--sigma-list", "0",
        ]))
        .unwrap();
        assert_eq!(&out[..5], &os(&["gopp", "phase", "--trials=5", "--shifts", "--m-list=5,6"])[..]);
        let cli = Cli::try_parse_from(out).unwrap();
        match cli.command {
            Command::Phase(a) => {
                assert_eq!(a.trials, 7);
                assert!(a.shifts);
                assert!(!a.haar);
                assert_eq!(a.m_list, vec![5, 6]);
            }
            _ => panic!("wrong subcommand"),
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(os(&["gopp", "nope"])), EXIT_USAGE);
        assert_eq!(run(os(&["gopp", "solve"])), EXIT_USAGE);
        assert_eq!(run(os(&["gopp", "--help"])), EXIT_OK);
    }
}
