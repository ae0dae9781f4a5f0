//! Experiment harness: SNR sweeps, high-SNR slopes, low-SNR ratios and CSV
//! output, all on common random numbers.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{FdpcError, Result};
use crate::inflation::{self, SolverConfig};
use crate::model::{build_sample_bank, ChannelSpec, ChannelTemplate, CsitModel, Dimensions, FadingModel, SampleBank};
use crate::rate::{self, Algorithm, Evaluation, InflationFactor, RateEstimate, SolverChoice, SolverInit, WPolicy};

pub const CSV_HEADER: &str = "snr_db,csit,solver,rate_bits,stderr_bits,bound_bits,n_outer,n_inner,seed";

/// Named choice of inflation factor, as accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WChoice {
    Alg1,
    Alg2,
    Zero,
    Pinv,
    /// The raw `m x t` identity embedding.
    Identity,
    Perfect,
}

impl WChoice {
    pub const ALL: [WChoice; 6] =
        [WChoice::Alg1, WChoice::Alg2, WChoice::Zero, WChoice::Pinv, WChoice::Identity, WChoice::Perfect];

    pub fn label(self) -> &'static str {
        match self {
            WChoice::Alg1 => "alg1",
            WChoice::Alg2 => "alg2",
            WChoice::Zero => "zero",
            WChoice::Pinv => "pinv",
            WChoice::Identity => "identity",
            WChoice::Perfect => "perfect",
        }
    }

    pub fn policy(self, spec: &ChannelSpec, config: &SolverConfig) -> WPolicy {
        let solve =
            |algorithm| WPolicy::Solve(SolverChoice { algorithm, config: *config, init: SolverInit::default() });
        match self {
            WChoice::Alg1 => solve(Algorithm::RowWise),
            WChoice::Alg2 => solve(Algorithm::FixedPoint),
            WChoice::Zero => WPolicy::Fixed(InflationFactor::zeros(spec.dims())),
            WChoice::Pinv => WPolicy::Fixed(inflation::w_pinv(spec, config.rank_tol)),
            WChoice::Identity => WPolicy::Fixed(inflation::identity_embedding(spec.dims())),
            WChoice::Perfect => WPolicy::PerfectCsit,
        }
    }
}

impl fmt::Display for WChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for WChoice {
    type Err = FdpcError;

    fn from_str(s: &str) -> Result<Self> {
        WChoice::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| FdpcError::argument(format!("unknown solver {s:?}")))
    }
}

/// Transmitter knowledge of one sweep column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CsitChoice {
    None,
    Bits(u32),
    Perfect,
}

impl CsitChoice {
    pub fn model(self, fading: &FadingModel) -> Result<CsitModel> {
        match self {
            CsitChoice::None => Ok(CsitModel::NoCsit),
            CsitChoice::Perfect => Ok(CsitModel::Perfect),
            CsitChoice::Bits(b) => CsitModel::quantized(b, fading),
        }
    }

    pub fn label(self) -> String {
        match self {
            CsitChoice::None => "none".into(),
            CsitChoice::Perfect => "perfect".into(),
            CsitChoice::Bits(b) => format!("B={b}"),
        }
    }
}

impl FromStr for CsitChoice {
    type Err = FdpcError;

    /// Accepts `none`, `perfect`, `B=2` or a bare bit count.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CsitChoice::None),
            "perfect" => Ok(CsitChoice::Perfect),
            _ => s
                .trim_start_matches("B=")
                .parse()
                .map(CsitChoice::Bits)
                .map_err(|_| FdpcError::argument(format!("unknown csit {s:?}"))),
        }
    }
}

impl From<&CsitModel> for CsitChoice {
    fn from(m: &CsitModel) -> Self {
        match m {
            CsitModel::Perfect => CsitChoice::Perfect,
            CsitModel::NoCsit => CsitChoice::None,
            CsitModel::Quantized(q) => CsitChoice::Bits(q.bits()),
        }
    }
}

/// Monte Carlo sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_outer: usize,
    pub n_inner: usize,
}

/// Builds the bank for `csit`.
///
/// Without feedback the bank is one cell of `n_inner` draws. Perfect
/// knowledge uses `max(n_outer, n_inner)` single-draw cells so that its
/// sample size is comparable to the other columns.
pub fn bank_for(
    dims: Dimensions,
    csit: &CsitModel,
    fading: &FadingModel,
    mc: McSettings,
    seed: u64,
) -> Result<SampleBank> {
    let n_outer = match csit {
        CsitModel::Perfect => mc.n_outer.max(mc.n_inner),
        _ => mc.n_outer,
    };
    build_sample_bank(dims, fading, csit, n_outer, mc.n_inner, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub snr_db_list: Vec<f64>,
    pub q_over_p: f64,
    pub solvers: Vec<WChoice>,
    pub csits: Vec<CsitChoice>,
    pub include_bound: bool,
    pub solver_config: SolverConfig,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db_list.is_empty() || self.solvers.is_empty() || self.csits.is_empty() {
            return Err(FdpcError::argument("sweep lists must be nonempty"));
        }
        if !(self.q_over_p >= 0.0) || !self.q_over_p.is_finite() {
            return Err(FdpcError::argument("q_over_p must be finite and nonnegative"));
        }
        if self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return Err(FdpcError::argument("snr values must be finite"));
        }
        self.solver_config.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub csit: String,
    pub solver: String,
    pub rate_bits: f64,
    pub stderr_bits: f64,
    pub bound_bits: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
    /// Failure reason of an error row; its numeric fields are NaN.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs every `(snr, csit, solver)` cell.
///
/// One bank per csit column is shared by all SNRs and solvers. Cell failures
/// become error rows; only an invalid plan is an error.
pub fn run_sweep(
    template: &ChannelTemplate,
    fading: &FadingModel,
    plan: &SweepPlan,
    mc: McSettings,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    plan.validate()?;
    fading.validate(template.dims)?;
    let template = ChannelTemplate { q_over_p: plan.q_over_p, ..template.clone() };
    let banks: Vec<Result<SampleBank>> = plan
        .csits
        .iter()
        .map(|c| c.model(fading).and_then(|m| bank_for(template.dims, &m, fading, mc, seed)))
        .collect();

    let mut cells = Vec::new();
    for &snr in &plan.snr_db_list {
        for (ci, &csit) in plan.csits.iter().enumerate() {
            for &solver in &plan.solvers {
                cells.push((snr, ci, csit, solver));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(snr, ci, csit, solver)| {
            let (n_outer, n_inner) = match &banks[ci] {
                Ok(b) => (b.n_outer(), b.n_inner()),
                Err(_) => (mc.n_outer, mc.n_inner),
            };
            let mut row = SweepRow {
                snr_db: snr,
                csit: csit.label(),
                solver: solver.label().into(),
                rate_bits: f64::NAN,
                stderr_bits: f64::NAN,
                bound_bits: f64::NAN,
                n_outer,
                n_inner,
                seed,
                error: None,
            };
            let outcome = banks[ci].clone().and_then(|bank| {
                let spec = template.at_snr_db(snr)?;
                rate::evaluate(&spec, &solver.policy(&spec, &plan.solver_config), &bank)
            });
            match outcome {
                Ok(ev) => {
                    row.rate_bits = ev.rate.rate_bits;
                    row.stderr_bits = ev.rate.stderr_bits;
                    if plan.include_bound {
                        row.bound_bits = ev.bound.rate_bits;
                    }
                }
                Err(e) => {
                    log::error!("sweep cell snr={snr} csit={} solver={solver} failed: {e}", csit.label());
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            format_sig6(r.snr_db),
            r.csit,
            r.solver,
            format_sig6(r.rate_bits),
            format_sig6(r.stderr_bits),
            format_sig6(r.bound_bits),
            r.n_outer,
            r.n_inner,
            r.seed
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingEstimate {
    pub slope: f64,
    /// Conservative: treats the two endpoint estimates as independent.
    pub stderr: f64,
    pub predicted: usize,
    pub rate_lo: RateEstimate,
    pub rate_hi: RateEstimate,
}

/// Secant slope of the rate against `log2 P` between two high SNRs, on one
/// bank without transmitter feedback.
pub fn estimate_scaling(
    template: &ChannelTemplate,
    fading: &FadingModel,
    choice: WChoice,
    snr_db_pair: (f64, f64),
    mc: McSettings,
    seed: u64,
    solver_config: &SolverConfig,
) -> Result<ScalingEstimate> {
    let (lo, hi) = snr_db_pair;
    if !(lo >= 30.0 && hi > lo) {
        return Err(FdpcError::argument("scaling needs hi > lo >= 30 dB"));
    }
    let bank = bank_for(template.dims, &CsitModel::NoCsit, fading, mc, seed)?;
    let at = |snr| -> Result<(ChannelSpec, RateEstimate)> {
        let spec = template.at_snr_db(snr)?;
        let est = rate::achievable_rate(&spec, &choice.policy(&spec, solver_config), &bank)?;
        Ok((spec, est))
    };
    let (spec_lo, rate_lo) = at(lo)?;
    let (spec_hi, rate_hi) = at(hi)?;
    let span = (spec_hi.power() / spec_lo.power()).log2();
    let slope = (rate_hi.rate_bits - rate_lo.rate_bits) / span;
    let stderr = rate_lo.stderr_bits.hypot(rate_hi.stderr_bits) / span;
    let d = spec_lo.dims();
    let predicted = inflation::theoretical_scaling(spec_lo.rank_sum(solver_config.rank_tol), d.m, d.r)?;
    Ok(ScalingEstimate { slope, stderr, predicted, rate_lo, rate_hi })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioPoint {
    pub snr_db: f64,
    pub ratio: f64,
    /// Standard error of the paired gap, divided by the bound.
    pub stderr: f64,
    pub rate_bits: f64,
    pub bound_bits: f64,
}

/// `R(W = 0) / C` along a descending SNR list reaching -30 dB or below.
pub fn low_snr_ratio(
    template: &ChannelTemplate,
    fading: &FadingModel,
    snr_db_list: &[f64],
    mc: McSettings,
    seed: u64,
) -> Result<Vec<RatioPoint>> {
    if snr_db_list.is_empty() || snr_db_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(FdpcError::argument("snr list must be strictly descending"));
    }
    if !(snr_db_list[snr_db_list.len() - 1] <= -30.0) {
        return Err(FdpcError::argument("snr list must reach -30 dB"));
    }
    let bank = bank_for(template.dims, &CsitModel::NoCsit, fading, mc, seed)?;
    snr_db_list
        .iter()
        .map(|&snr| {
            let spec = template.at_snr_db(snr)?;
            let ev = rate::evaluate(&spec, &WPolicy::Fixed(InflationFactor::zeros(spec.dims())), &bank)?;
            let c = ev.bound.rate_bits;
            let ratio = if ev.gap.rate_bits == 0.0 { 1.0 } else { ev.rate.rate_bits / c };
            Ok(RatioPoint {
                snr_db: snr,
                ratio,
                stderr: ev.gap.stderr_bits / c,
                rate_bits: ev.rate.rate_bits,
                bound_bits: c,
            })
        })
        .collect()
}

/// `C - R` with the paired standard error, on one bank.
#[allow(clippy::too_many_arguments)]
pub fn gap_to_bound(
    template: &ChannelTemplate,
    fading: &FadingModel,
    csit: &CsitModel,
    snr_db: f64,
    choice: WChoice,
    mc: McSettings,
    seed: u64,
    solver_config: &SolverConfig,
) -> Result<Evaluation> {
    let bank = bank_for(template.dims, csit, fading, mc, seed)?;
    let spec = template.at_snr_db(snr_db)?;
    rate::evaluate(&spec, &choice.policy(&spec, solver_config), &bank)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityRow {
    pub snr_db: f64,
    pub alg1_bits: f64,
    pub alg2_bits: f64,
    pub abs_diff_bits: f64,
}

/// Both iterative solvers on the same bank at each SNR.
pub fn compare_solvers(
    template: &ChannelTemplate,
    fading: &FadingModel,
    csit: &CsitModel,
    snr_db_list: &[f64],
    mc: McSettings,
    seed: u64,
    solver_config: &SolverConfig,
) -> Result<Vec<ParityRow>> {
    let bank = bank_for(template.dims, csit, fading, mc, seed)?;
    snr_db_list
        .iter()
        .map(|&snr| {
            let spec = template.at_snr_db(snr)?;
            let r1 = rate::achievable_rate(&spec, &WChoice::Alg1.policy(&spec, solver_config), &bank)?.rate_bits;
            let r2 = rate::achievable_rate(&spec, &WChoice::Alg2.policy(&spec, solver_config), &bank)?.rate_bits;
            Ok(ParityRow { snr_db: snr, alg1_bits: r1, alg2_bits: r2, abs_diff_bits: (r1 - r2).abs() })
        })
        .collect()
}

/// Reference configurations shipped with the crate.
pub const PRESETS: &[(&str, &str)] = &[
    ("fdpc-2x2-a", include_str!("../configs/fdpc-2x2-a.json")),
    ("fdpc-2x2-b", include_str!("../configs/fdpc-2x2-b.json")),
    ("fdpc-3x2-a", include_str!("../configs/fdpc-3x2-a.json")),
    ("fdpc-3x2-b", include_str!("../configs/fdpc-3x2-b.json")),
    ("fdpc-3x2-c", include_str!("../configs/fdpc-3x2-c.json")),
    ("fdpc-lowsnr", include_str!("../configs/fdpc-lowsnr.json")),
    ("fdpc-fig4-1", include_str!("../configs/fdpc-fig4-1.json")),
    ("fdpc-fig4-2", include_str!("../configs/fdpc-fig4-2.json")),
    ("fdpc-3x2-full", include_str!("../configs/fdpc-3x2-full.json")),
    ("fdpc-3x3-corr", include_str!("../configs/fdpc-3x3-corr.json")),
    ("fdpc-3x2-corr", include_str!("../configs/fdpc-3x2-corr.json")),
];

pub fn preset_json(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, j)| *j)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_json(name).ok_or_else(|| FdpcError::config(format!("unknown preset {name:?}")))?;
    ExperimentConfig::from_json(text)
}
