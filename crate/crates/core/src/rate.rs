//! Achievable-rate functionals over a sample bank.
//!
//! For a channel draw `H` and inflation factor `W` the block matrix
//!
//! ```text
//! M = [ I_m + W S W*        (T* + W S) H*          ]
//!     [ H (T + S W*)        H (T T* + S) H* + Z    ]
//! ```
//!
//! (`S` the interference covariance, `Z` the noise covariance) is the joint
//! covariance of the auxiliary variable and the channel output. The rate is
//! `E log|N| - E log|M|` with `N` the bottom-right block, and the bound is
//! `E log|Z + H T T* H*| - log|Z|`. Logs are natural internally and every
//! reported rate is in bits.

use std::f64::consts::LN_2;
use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{FdpcError, Result};
use crate::inflation::{self, SolveResult, SolverConfig};
use crate::linalg::{self, CMat};
use crate::model::{ChannelSpec, Dimensions, SampleBank};

/// The `m x t` inflation factor.
#[derive(Clone, Debug, PartialEq)]
pub struct InflationFactor(CMat);

impl InflationFactor {
    pub fn new(dims: Dimensions, w: CMat) -> Result<Self> {
        if w.shape() != (dims.m, dims.t) {
            return Err(FdpcError::argument(format!(
                "inflation factor must be {}x{}, got {:?}",
                dims.m,
                dims.t,
                w.shape()
            )));
        }
        if !w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(FdpcError::argument("inflation factor has non-finite entries"));
        }
        Ok(InflationFactor(w))
    }

    pub fn zeros(dims: Dimensions) -> Self {
        InflationFactor(CMat::zeros(dims.m, dims.t))
    }

    pub(crate) fn from_matrix_unchecked(w: CMat) -> Self {
        InflationFactor(w)
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

impl Deref for InflationFactor {
    type Target = CMat;
    fn deref(&self) -> &CMat {
        &self.0
    }
}

/// Monte Carlo rate with its standard error, in bits.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RateEstimate {
    pub rate_bits: f64,
    pub stderr_bits: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
}

impl RateEstimate {
    fn from_contributions(nats: &[f64], bank: &SampleBank) -> Self {
        let (mean, stderr) = mean_stderr(nats);
        RateEstimate {
            rate_bits: mean / LN_2,
            stderr_bits: stderr / LN_2,
            n_outer: bank.n_outer(),
            n_inner: bank.n_inner(),
            seed: bank.seed(),
        }
    }
}

/// Sample mean and standard error, summed sequentially in slice order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_dims(spec: &ChannelSpec, w: &CMat, h: &CMat) {
    let d = spec.dims();
    debug_assert_eq!(w.shape(), (d.m, d.t));
    debug_assert_eq!(h.shape(), (d.r, d.t));
}

/// `H (T T* + S) H* + Z`.
pub fn output_covariance(spec: &ChannelSpec, h: &CMat) -> CMat {
    let k = spec.sigma_x() + spec.sigma_s();
    linalg::hermitian_part(&(h * k * h.adjoint() + spec.sigma_z()))
}

/// The `(m + r) x (m + r)` block matrix `M`.
pub fn build_m(spec: &ChannelSpec, w: &CMat, h: &CMat) -> CMat {
    check_dims(spec, w, h);
    let Dimensions { m, r, .. } = spec.dims();
    let s = spec.sigma_s();
    let t = spec.t_factor();
    let ws = w * s;
    let top_left = linalg::identity(m) + &ws * w.adjoint();
    let bottom_left = h * (t + ws.adjoint());
    let bottom_right = output_covariance(spec, h);
    let mut out = CMat::zeros(m + r, m + r);
    out.view_mut((0, 0), (m, m)).copy_from(&top_left);
    out.view_mut((m, 0), (r, m)).copy_from(&bottom_left);
    out.view_mut((0, m), (m, r)).copy_from(&bottom_left.adjoint());
    out.view_mut((m, m), (r, r)).copy_from(&bottom_right);
    linalg::hermitian_part(&out)
}

pub fn log_det_m(spec: &ChannelSpec, w: &CMat, h: &CMat) -> Option<f64> {
    linalg::logdet_hpd(&build_m(spec, w, h))
}

/// `A = T T* + S - (T + S W*)(I + W S W*)^{-1}(T* + W S)`, the matrix left in
/// the output covariance after the Schur complement of the top-left block.
pub fn inner_matrix_a(spec: &ChannelSpec, w: &CMat) -> CMat {
    let m = spec.dims().m;
    let s = spec.sigma_s();
    let t = spec.t_factor();
    let ws = w * s;
    let top_left = linalg::identity(m) + &ws * w.adjoint();
    let cross = t + ws.adjoint();
    let inv = linalg::inv_hpd(&top_left).expect("I + W S W* is positive definite");
    linalg::hermitian_part(&(spec.sigma_x() + s - &cross * inv * cross.adjoint()))
}

/// `log|I + W S W*| + log|Z + H A H*|`, the Schur-complement route to `log|M|`.
pub fn log_det_m_schur(spec: &ChannelSpec, w: &CMat, h: &CMat) -> Option<f64> {
    let m = spec.dims().m;
    let ws = w * spec.sigma_s();
    let top_left = linalg::identity(m) + &ws * w.adjoint();
    let a = inner_matrix_a(spec, w);
    let lower = linalg::hermitian_part(&(h * a * h.adjoint() + spec.sigma_z()));
    Some(linalg::logdet_hpd(&top_left)? + linalg::logdet_hpd(&lower)?)
}

/// Per-draw `log|M|` in nats, in draw order.
pub fn log_det_m_terms(spec: &ChannelSpec, w: &CMat, draws: &[CMat]) -> Result<Vec<f64>> {
    draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            log_det_m(spec, w, h)
                .ok_or_else(|| FdpcError::Evaluation { index, reason: "block matrix M is numerically singular".into() })
        })
        .collect()
}

/// Sample mean of `log|M|` in nats, the quantity the inflation solvers minimize.
pub fn objective(spec: &ChannelSpec, w: &CMat, draws: &[CMat]) -> Result<f64> {
    if draws.is_empty() {
        return Err(FdpcError::argument("objective needs at least one channel draw"));
    }
    let terms = log_det_m_terms(spec, w, draws)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

fn log_det_n_terms(spec: &ChannelSpec, draws: &[CMat]) -> Result<Vec<f64>> {
    draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            linalg::logdet_hpd(&output_covariance(spec, h)).ok_or_else(|| FdpcError::Evaluation {
                index,
                reason: "output covariance is numerically singular".into(),
            })
        })
        .collect()
}

fn bound_terms(spec: &ChannelSpec, draws: &[CMat]) -> Result<Vec<f64>> {
    let sx = spec.sigma_x();
    let base = linalg::logdet_hpd(spec.sigma_z()).ok_or_else(|| FdpcError::config("noise covariance is singular"))?;
    draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let k = linalg::hermitian_part(&(h * &sx * h.adjoint() + spec.sigma_z()));
            linalg::logdet_hpd(&k).map(|v| v - base).ok_or_else(|| FdpcError::Evaluation {
                index,
                reason: "Z + H Sigma_X H* is numerically singular".into(),
            })
        })
        .collect()
}

/// Solver used for the inflation factor of each outer cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    RowWise,
    FixedPoint,
}

/// Starting point of the iterative solvers.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SolverInit {
    /// Perfect-CSIT factor at the cell-mean channel.
    #[default]
    PerfectAtMean,
    Zero,
    Pinv,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverChoice {
    pub algorithm: Algorithm,
    pub config: SolverConfig,
    pub init: SolverInit,
}

impl SolverChoice {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverChoice { algorithm, config: SolverConfig::default(), init: SolverInit::default() }
    }

    pub fn solve(&self, spec: &ChannelSpec, draws: &[CMat]) -> Result<SolveResult> {
        let w0 = match self.init {
            SolverInit::Zero => InflationFactor::zeros(spec.dims()),
            SolverInit::Pinv => inflation::w_pinv(spec, self.config.rank_tol),
            SolverInit::PerfectAtMean => {
                let mut mean = CMat::zeros(spec.dims().r, spec.dims().t);
                for h in draws {
                    mean += h;
                }
                inflation::w_perfect_csit(spec, &mean.unscale(draws.len() as f64))
            }
        };
        self.solve_from(spec, &w0, draws)
    }

    /// Runs the solver from an explicit starting point.
    pub fn solve_from(&self, spec: &ChannelSpec, w0: &InflationFactor, draws: &[CMat]) -> Result<SolveResult> {
        match self.algorithm {
            Algorithm::RowWise => inflation::alg1_solve(spec, w0, &self.config, draws),
            Algorithm::FixedPoint => inflation::alg2_solve(spec, w0, &self.config, draws),
        }
    }
}

/// How the inflation factor of each outer cell is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum WPolicy {
    /// One factor for every cell.
    Fixed(InflationFactor),
    /// Perfect-CSIT closed form at each cell's transmitter observation
    /// (the cell-mean channel when the transmitter observes nothing).
    PerfectCsit,
    /// Solve per cell; on a perfect-CSIT bank the closed form is used instead.
    Solve(SolverChoice),
}

/// Outcome of the solvers across all cells of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SolverSummary {
    pub converged: bool,
    /// Largest iteration count over cells.
    pub iterations: usize,
    pub unconverged_cells: usize,
}

/// Rate, bound and their paired difference on one bank.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rate: RateEstimate,
    pub bound: RateEstimate,
    /// `C - R` with the standard error of the paired differences.
    pub gap: RateEstimate,
    pub solver: SolverSummary,
    /// Factor used in each outer cell.
    pub factors: Vec<InflationFactor>,
}

struct CellOutcome {
    rate: Vec<f64>,
    bound: Vec<f64>,
    w: InflationFactor,
    solve: Option<(bool, usize)>,
}

fn evaluate_cell(
    spec: &ChannelSpec,
    policy: &WPolicy,
    hhat: Option<&CMat>,
    draws: &[CMat],
    perfect: bool,
) -> Result<CellOutcome> {
    let mut solve = None;
    let w = match policy {
        WPolicy::Fixed(w) => w.clone(),
        WPolicy::Solve(_) | WPolicy::PerfectCsit if perfect => inflation::w_perfect_csit(spec, &draws[0]),
        WPolicy::PerfectCsit => match hhat {
            Some(h) => inflation::w_perfect_csit(spec, h),
            None => {
                let mut mean = CMat::zeros(spec.dims().r, spec.dims().t);
                for h in draws {
                    mean += h;
                }
                inflation::w_perfect_csit(spec, &mean.unscale(draws.len() as f64))
            }
        },
        WPolicy::Solve(choice) => {
            let res = choice.solve(spec, draws)?;
            solve = Some((res.converged, res.iterations));
            res.w
        }
    };
    let bound = bound_terms(spec, draws)?;
    // without interference the two expressions agree identically
    let rate = if spec.has_interference() {
        let n_terms = log_det_n_terms(spec, draws)?;
        let m_terms = log_det_m_terms(spec, &w, draws)?;
        n_terms.iter().zip(&m_terms).map(|(n, m)| n - m).collect()
    } else {
        bound.clone()
    };
    Ok(CellOutcome { rate, bound, w, solve })
}

/// Evaluates the achievable rate under `policy` and the no-interference
/// bound on the same draws.
///
/// Standard errors are taken over per-cell contributions; a bank with a
/// single outer cell uses its per-draw contributions instead.
pub fn evaluate(spec: &ChannelSpec, policy: &WPolicy, bank: &SampleBank) -> Result<Evaluation> {
    if let WPolicy::Fixed(w) = policy {
        InflationFactor::new(spec.dims(), w.matrix().clone())?;
    }
    let perfect = bank.is_perfect();
    let outcomes: Vec<CellOutcome> = bank
        .cells()
        .par_iter()
        .map(|cell| evaluate_cell(spec, policy, cell.hhat.as_ref(), &cell.draws, perfect))
        .collect::<Result<_>>()?;

    let (rate_units, bound_units): (Vec<f64>, Vec<f64>) = if outcomes.len() == 1 {
        (outcomes[0].rate.clone(), outcomes[0].bound.clone())
    } else {
        outcomes
            .iter()
            .map(|o| {
                let n = o.rate.len() as f64;
                (o.rate.iter().sum::<f64>() / n, o.bound.iter().sum::<f64>() / n)
            })
            .unzip()
    };
    let gap_units: Vec<f64> = bound_units.iter().zip(&rate_units).map(|(c, r)| c - r).collect();

    let mut solver = SolverSummary { converged: true, iterations: 0, unconverged_cells: 0 };
    for o in &outcomes {
        if let Some((converged, iters)) = o.solve {
            solver.iterations = solver.iterations.max(iters);
            if !converged {
                solver.converged = false;
                solver.unconverged_cells += 1;
            }
        }
    }
    if solver.unconverged_cells > 0 {
        log::warn!("inflation solver did not converge in {} of {} cells", solver.unconverged_cells, outcomes.len());
    }

    Ok(Evaluation {
        rate: RateEstimate::from_contributions(&rate_units, bank),
        bound: RateEstimate::from_contributions(&bound_units, bank),
        gap: RateEstimate::from_contributions(&gap_units, bank),
        solver,
        factors: outcomes.into_iter().map(|o| o.w).collect(),
    })
}

pub fn achievable_rate(spec: &ChannelSpec, policy: &WPolicy, bank: &SampleBank) -> Result<RateEstimate> {
    Ok(evaluate(spec, policy, bank)?.rate)
}

/// `C = E log(|Z + H Sigma_X H*| / |Z|)` in bits.
pub fn no_interference_bound(spec: &ChannelSpec, bank: &SampleBank) -> Result<RateEstimate> {
    let per_cell: Vec<Vec<f64>> =
        bank.cells().par_iter().map(|cell| bound_terms(spec, &cell.draws)).collect::<Result<_>>()?;
    let units: Vec<f64> = if per_cell.len() == 1 {
        per_cell.into_iter().next().unwrap()
    } else {
        per_cell.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect()
    };
    Ok(RateEstimate::from_contributions(&units, bank))
}
