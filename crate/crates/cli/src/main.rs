//! `fdpc`: command-line front end for the rate, solver and sweep machinery.
//!
//! Payloads go to stdout as JSON; logs go to stderr. Exit code 2 marks a
//! configuration or argument problem, 3 a numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdpc::config::{ExperimentConfig, MatrixJson};
use fdpc::covopt::{self, JointConfig};
use fdpc::inflation::SolverConfig;
use fdpc::lab::{self, CsitChoice, McSettings, SweepPlan, WChoice};
use fdpc::rate::{self, Algorithm, SolverChoice};
use fdpc::{CsitModel, FdpcError};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Seed used when neither flag, config nor `FDPC_SEED` provides one.
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] FdpcError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_config() => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "fdpc", version, about = "Dirty paper coding rates on fading MIMO channels")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Path to a JSON configuration or the name of a built-in preset.
    config: String,
    /// Overrides the configured SNR.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// Seed; takes precedence over the config and `FDPC_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    /// Inner Monte Carlo draws per cell.
    #[arg(long)]
    samples: Option<usize>,
    /// Outer cells (transmitter observations).
    #[arg(long)]
    outer: Option<usize>,
    /// Overrides the interference-to-signal power ratio.
    #[arg(long)]
    q_over_p: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Achievable rate and bound at one SNR.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "alg2")]
        solver: WChoice,
    },
    /// Rate grid over SNR, CSIT and solver, written as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,10,20,30")]
        snr_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "alg1,alg2")]
        solvers: Vec<WChoice>,
        /// Comma-separated CSIT levels (`none`, `perfect` or a bit count);
        /// defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        csit: Vec<CsitChoice>,
        /// Leave the bound column empty.
        #[arg(long)]
        no_bound: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// High-SNR slope of the rate against its predicted value.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "alg2")]
        solver: WChoice,
        #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
        hi: f64,
    },
    /// Rate-to-bound ratio of the zero factor as the SNR falls.
    Lowsnr {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,-10,-20,-30")]
        snr_list: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solves for the inflation factor on one no-CSIT cell.
    SolveW {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "alg2")]
        solver: WChoice,
    },
    /// Jointly optimizes the input factor and the inflation factor.
    Jointopt {
        #[command(flatten)]
        common: Common,
        /// Rank bound on the input; defaults to the configured `m`.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 30)]
        outer_iters: usize,
        /// Also write the payload to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Configuration after flag overrides, with provenance.
struct Loaded {
    cfg: ExperimentConfig,
    seed: u64,
    hash: String,
}

impl Loaded {
    fn mc(&self) -> McSettings {
        McSettings { n_outer: self.cfg.mc.n_outer, n_inner: self.cfg.mc.n_inner }
    }

    fn provenance(&self) -> Value {
        json!({ "seed": self.seed, "config_hash": self.hash })
    }
}

fn load(common: &Common) -> CliResult<Loaded> {
    let text = if Path::new(&common.config).is_file() {
        fs::read_to_string(&common.config).map_err(|source| CliError::Io { path: common.config.clone(), source })?
    } else if let Some(preset) = lab::preset_json(&common.config) {
        preset.to_string()
    } else {
        return Err(CliError::Usage(format!("{:?} is neither a file nor a preset", common.config)));
    };
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(snr) = common.snr_db {
        cfg.snr_db = snr;
    }
    if let Some(q) = common.q_over_p {
        cfg.q_over_p = q;
    }
    if let Some(n) = common.samples {
        cfg.mc.n_inner = n;
    }
    if let Some(n) = common.outer {
        cfg.mc.n_outer = n;
    }
    let seed = match (common.seed, cfg.mc.seed) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => match std::env::var("FDPC_SEED") {
            Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("FDPC_SEED={v:?} is not an integer")))?,
            Err(_) => DEFAULT_SEED,
        },
    };
    cfg.mc.seed = Some(seed);
    cfg.validate()?;
    let hash = Sha256::digest(cfg.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { cfg, seed, hash })
}

fn merge(mut body: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut body, extra) {
        a.extend(b);
    }
    body
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn cmd_rate(common: &Common, solver: WChoice) -> CliResult<Value> {
    let l = load(common)?;
    let template = l.cfg.template()?;
    let fading = l.cfg.fading_model()?;
    let csit = l.cfg.csit_model(&fading)?;
    let ev =
        lab::gap_to_bound(&template, &fading, &csit, l.cfg.snr_db, solver, l.mc(), l.seed, &SolverConfig::default())?;
    Ok(merge(
        json!({
            "rate_bits": ev.rate.rate_bits,
            "stderr_bits": ev.rate.stderr_bits,
            "bound_bits": ev.bound.rate_bits,
            "gap_bits": ev.gap.rate_bits,
            "gap_stderr_bits": ev.gap.stderr_bits,
            "solver": solver.label(),
            "csit": CsitChoice::from(&csit).label(),
            "converged": ev.solver.converged,
            "iterations": ev.solver.iterations,
            "snr_db": l.cfg.snr_db,
            "n_outer": ev.rate.n_outer,
            "n_inner": ev.rate.n_inner,
        }),
        l.provenance(),
    ))
}

fn cmd_sweep(
    common: &Common,
    snr_list: &[f64],
    solvers: &[WChoice],
    csit: &[CsitChoice],
    no_bound: bool,
    out: &Path,
) -> CliResult<Value> {
    let l = load(common)?;
    let template = l.cfg.template()?;
    let fading = l.cfg.fading_model()?;
    let csits = if csit.is_empty() { vec![CsitChoice::from(&l.cfg.csit_model(&fading)?)] } else { csit.to_vec() };
    let plan = SweepPlan {
        snr_db_list: snr_list.to_vec(),
        q_over_p: l.cfg.q_over_p,
        solvers: solvers.to_vec(),
        csits,
        include_bound: !no_bound,
        solver_config: SolverConfig::default(),
    };
    let rows = lab::run_sweep(&template, &fading, &plan, l.mc(), l.seed)?;
    let mut buf = Vec::new();
    lab::write_csv(&rows, &mut buf).expect("writing to memory");
    write_file(out, &buf)?;
    let failed: Vec<Value> = rows.iter().filter(|r| r.error.is_some()).map(to_json).collect();
    Ok(merge(json!({ "out": out.display().to_string(), "rows": rows.len(), "failed_rows": failed }), l.provenance()))
}

fn cmd_scaling(common: &Common, solver: WChoice, lo: f64, hi: f64) -> CliResult<Value> {
    let l = load(common)?;
    let template = l.cfg.template()?;
    let fading = l.cfg.fading_model()?;
    let est = lab::estimate_scaling(&template, &fading, solver, (lo, hi), l.mc(), l.seed, &SolverConfig::default())?;
    Ok(merge(
        json!({
            "measured_slope": est.slope,
            "slope_stderr": est.stderr,
            "predicted_slope": est.predicted,
            "snr_db": [lo, hi],
            "rate_bits": [est.rate_lo.rate_bits, est.rate_hi.rate_bits],
            "solver": solver.label(),
        }),
        l.provenance(),
    ))
}

fn cmd_lowsnr(common: &Common, snr_list: &[f64], out: &Path) -> CliResult<Value> {
    let l = load(common)?;
    let template = l.cfg.template()?;
    let fading = l.cfg.fading_model()?;
    let points = lab::low_snr_ratio(&template, &fading, snr_list, l.mc(), l.seed)?;
    let mut csv = String::from("snr_db,ratio,stderr,rate_bits,bound_bits\n");
    for p in &points {
        let fields = [p.snr_db, p.ratio, p.stderr, p.rate_bits, p.bound_bits].map(lab::format_sig6);
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    write_file(out, csv.as_bytes())?;
    Ok(merge(json!({ "out": out.display().to_string(), "points": to_json(&points) }), l.provenance()))
}

fn solver_choice(choice: WChoice) -> CliResult<SolverChoice> {
    match choice {
        WChoice::Alg1 => Ok(SolverChoice::new(Algorithm::RowWise)),
        WChoice::Alg2 => Ok(SolverChoice::new(Algorithm::FixedPoint)),
        other => Err(CliError::Usage(format!("solver must be alg1 or alg2, not {other}"))),
    }
}

fn cmd_solve_w(common: &Common, solver: WChoice) -> CliResult<Value> {
    let choice = solver_choice(solver)?;
    let l = load(common)?;
    let spec = l.cfg.template()?.at_snr_db(l.cfg.snr_db)?;
    let fading = l.cfg.fading_model()?;
    let mc = McSettings { n_outer: 1, ..l.mc() };
    let bank = lab::bank_for(spec.dims(), &CsitModel::NoCsit, &fading, mc, l.seed)?;
    let draws = &bank.cells()[0].draws;
    let res = choice.solve(&spec, draws)?;
    let est = rate::achievable_rate(&spec, &rate::WPolicy::Fixed(res.w.clone()), &bank)?;
    Ok(merge(
        json!({
            "solver": solver.label(),
            "converged": res.converged,
            "iterations": res.iterations,
            "rate_bits": est.rate_bits,
            "stderr_bits": est.stderr_bits,
            "w": to_json(&MatrixJson::from_matrix(res.w.matrix())),
            "snr_db": l.cfg.snr_db,
        }),
        l.provenance(),
    ))
}

fn cmd_jointopt(common: &Common, rank: Option<usize>, outer_iters: usize, out: Option<&Path>) -> CliResult<Value> {
    let l = load(common)?;
    let spec = l.cfg.template()?.at_snr_db(l.cfg.snr_db)?;
    let fading = l.cfg.fading_model()?;
    let mc = McSettings { n_outer: 1, ..l.mc() };
    let bank = lab::bank_for(spec.dims(), &CsitModel::NoCsit, &fading, mc, l.seed)?;
    let mut jc = JointConfig::new(rank.unwrap_or(l.cfg.m), SolverChoice::new(Algorithm::FixedPoint));
    jc.outer_iters = outer_iters;
    let res = covopt::joint_optimize(&spec, &jc, &bank)?;
    let body = merge(
        json!({
            "rate_bits": res.rate.rate_bits,
            "stderr_bits": res.rate.stderr_bits,
            "eig_ratio": res.eig_ratio,
            "rank_used": res.rank_used,
            "rank_bound": jc.rank_bound,
            "converged": res.converged,
            "rate_trace": res.rate_trace,
            "t": to_json(&MatrixJson::from_matrix(&res.t)),
            "snr_db": l.cfg.snr_db,
        }),
        l.provenance(),
    );
    if let Some(path) = out {
        write_file(path, (serde_json::to_string_pretty(&body).expect("payload serializes") + "\n").as_bytes())?;
    }
    Ok(body)
}

fn run(cli: Cli) -> CliResult<Value> {
    match &cli.command {
        Command::Rate { common, solver } => cmd_rate(common, *solver),
        Command::Sweep { common, snr_list, solvers, csit, no_bound, out } => {
            cmd_sweep(common, snr_list, solvers, csit, *no_bound, out)
        }
        Command::Scaling { common, solver, lo, hi } => cmd_scaling(common, *solver, *lo, *hi),
        Command::Lowsnr { common, snr_list, out } => cmd_lowsnr(common, snr_list, out),
        Command::SolveW { common, solver } => cmd_solve_w(common, *solver),
        Command::Jointopt { common, rank, outer_iters, out } => {
            cmd_jointopt(common, *rank, *outer_iters, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(body) => {
            let text = serde_json::to_string_pretty(&body).expect("payload serializes");
            let mut stdout = io::stdout().lock();
            if writeln!(stdout, "{text}").is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
