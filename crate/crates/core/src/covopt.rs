//! Joint optimization of the input covariance factor `T` and the inflation
//! factor `W` under `tr(T T*) <= P` and `rank(T T*) <= m`.
//!
//! The Lagrangian is `J = E log(|N| / |M|) - lambda tr(T T*)` with
//! `N = Z + H (T T* + S) H*`. Its Wirtinger gradient is
//! `dJ/dT* = g(T, W) - lambda T` where
//!
//! ```text
//! g(T, W) = E{ H* N^{-1} H T - [0 H*] M^{-1} [I_m; H T] }
//! ```
//!
//! For real `T` the entrywise derivative of `J` equals `2 (g - lambda T)`.
//! The T-step sets `T <- g(T, W) / lambda` with `lambda` chosen to meet the
//! power budget, and alternates with an inflation-factor solve. A step that
//! lowers the rate is retried from the best point as a convex mix with a
//! halved weight.

use rayon::prelude::*;

use crate::error::{FdpcError, Result};
use crate::linalg::{self, c, CMat};
use crate::model::{build_sample_bank, ChannelSpec, Dimensions, FadingModel, SampleBank};
use crate::rate::{self, InflationFactor, RateEstimate, SolverChoice, WPolicy};

/// Default minimum rate gain (bits) for the alternation to continue.
pub const RATE_GAIN_TOL: f64 = 1e-4;
const LAMBDA_PROBES: usize = 8;
const MAX_BISECTIONS: usize = 200;
const MAX_BRACKET_EXPANSIONS: usize = 60;
const MIN_STEP: f64 = 1.0 / 64.0;

#[derive(Clone, Debug)]
pub struct JointConfig {
    pub rank_bound: usize,
    pub outer_iters: usize,
    /// T-steps per outer iteration at fixed `W`.
    pub t_step_iters: usize,
    pub lambda_bracket: (f64, f64),
    pub power_tol: f64,
    /// Minimum rate gain (bits) for the alternation to continue.
    pub rate_gain_tol: f64,
    pub solver: SolverChoice,
    /// Redraw the bank (seed + iteration) between outer iterations.
    pub refresh: Option<FadingModel>,
}

impl JointConfig {
    pub fn new(rank_bound: usize, solver: SolverChoice) -> Self {
        JointConfig {
            rank_bound,
            outer_iters: 30,
            t_step_iters: 1,
            lambda_bracket: (1e-6, 1e6),
            power_tol: 1e-6,
            rate_gain_tol: RATE_GAIN_TOL,
            solver,
            refresh: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(FdpcError::config(format!("invalid lambda bracket ({lo}, {hi})")));
        }
        if self.rank_bound == 0 || self.outer_iters == 0 || self.t_step_iters == 0 {
            return Err(FdpcError::config("rank bound and iteration counts must be positive"));
        }
        if !(self.rate_gain_tol >= 0.0) {
            return Err(FdpcError::config("rate_gain_tol must be nonnegative"));
        }
        if !(self.power_tol > 0.0 && self.power_tol < 1.0) {
            return Err(FdpcError::config("power_tol outside (0, 1)"));
        }
        self.solver.config.validate()
    }
}

#[derive(Clone, Debug)]
pub struct JointResult {
    pub t: CMat,
    pub w: InflationFactor,
    /// Achievable rate (bits) after each outer iteration; entry 0 is the start.
    pub rate_trace: Vec<f64>,
    /// Rate of the returned iterate.
    pub rate: RateEstimate,
    /// Largest over smallest nonzero eigenvalue of `T T*`.
    pub eig_ratio: f64,
    pub rank_used: usize,
    pub converged: bool,
}

/// Same channel with input factor `t`; the power budget is widened if `t`
/// exceeds it so that off-constraint points can be evaluated.
fn respec(spec: &ChannelSpec, t: &CMat) -> Result<ChannelSpec> {
    let Dimensions { t: tx, r, .. } = spec.dims();
    let dims = Dimensions::new(tx, r, t.ncols())?;
    let power = spec.power().max(linalg::trace_re(&(t * t.adjoint())));
    ChannelSpec::new(dims, spec.field(), t.clone(), spec.sigma_s().clone(), spec.sigma_z().clone(), power)
}

/// `g(T, W)`, the sample mean of `H* N^{-1} H T - [0 H*] M^{-1} [I_m; H T]`.
pub fn lagrangian_gradient_map(spec: &ChannelSpec, t: &CMat, w: &CMat, draws: &[CMat]) -> Result<CMat> {
    if draws.is_empty() {
        return Err(FdpcError::argument("at least one channel draw is required"));
    }
    let spec_t = respec(spec, t)?;
    let m = t.ncols();
    let r = spec.dims().r;
    let terms: Vec<CMat> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let singular =
                |what: &str| FdpcError::Evaluation { index, reason: format!("{what} is numerically singular") };
            let ht = h * t;
            let n_chol = linalg::cholesky(&rate::output_covariance(&spec_t, h)).ok_or_else(|| singular("N"))?;
            let first = h.adjoint() * linalg::cholesky_solve(&n_chol, &ht);
            let m_chol = linalg::cholesky(&rate::build_m(&spec_t, w, h)).ok_or_else(|| singular("M"))?;
            let mut rhs = CMat::zeros(m + r, m);
            for i in 0..m {
                rhs[(i, i)] = c(1.0);
            }
            rhs.view_mut((m, 0), (r, m)).copy_from(&ht);
            let x = linalg::cholesky_solve(&m_chol, &rhs);
            Ok(first - h.adjoint() * x.rows(m, r))
        })
        .collect::<Result<_>>()?;
    let mut g = CMat::zeros(t.nrows(), m);
    for term in &terms {
        g += term;
    }
    Ok(g.unscale(draws.len() as f64))
}

/// `J = mean(log|N| - log|M|) - lambda tr(T T*)` in nats.
pub fn lagrangian(spec: &ChannelSpec, t: &CMat, w: &CMat, lambda: f64, draws: &[CMat]) -> Result<f64> {
    let spec_t = respec(spec, t)?;
    let terms: Vec<f64> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let n = linalg::logdet_hpd(&rate::output_covariance(&spec_t, h));
            let m = rate::log_det_m(&spec_t, w, h);
            match (n, m) {
                (Some(n), Some(m)) => Ok(n - m),
                _ => Err(FdpcError::Evaluation { index, reason: "singular covariance".into() }),
            }
        })
        .collect::<Result<_>>()?;
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(mean - lambda * linalg::trace_re(&(t * t.adjoint())))
}

/// `(1/lambda) g(T, W)`.
pub fn t_step_map(spec: &ChannelSpec, t: &CMat, w: &CMat, lambda: f64, draws: &[CMat]) -> Result<CMat> {
    if !(lambda > 0.0) {
        return Err(FdpcError::argument("lambda must be positive"));
    }
    Ok(lagrangian_gradient_map(spec, t, w, draws)?.unscale(lambda))
}

#[derive(Clone, Debug)]
pub struct LambdaStep {
    pub lambda: f64,
    /// `(1/lambda) g(T, W)` meeting the power budget.
    pub t_next: CMat,
    pub bisections: usize,
    /// Set when the monotonicity probe failed and `t_next` was rescaled instead.
    pub rescaled: bool,
}

/// Finds `lambda` with `tr(T+ T+*) = P` for `T+ = g(T, W) / lambda` by
/// bisection on `log lambda`.
pub fn solve_lambda(
    spec: &ChannelSpec,
    t: &CMat,
    w: &CMat,
    draws: &[CMat],
    config: &JointConfig,
) -> Result<LambdaStep> {
    let g = lagrangian_gradient_map(spec, t, w, draws)?;
    lambda_for_power(&g, spec.power(), config.lambda_bracket, config.power_tol)
}

/// Bisection behind [`solve_lambda`] for an already evaluated `g`.
pub fn lambda_for_power(g: &CMat, power: f64, bracket: (f64, f64), power_tol: f64) -> Result<LambdaStep> {
    let g_power = linalg::trace_re(&(g * g.adjoint()));
    if !(g_power > 0.0) || !g_power.is_finite() {
        return Err(FdpcError::Search("gradient map vanished; no multiplier meets the power budget".into()));
    }
    if !(power > 0.0) {
        return Err(FdpcError::Search("power budget must be positive".into()));
    }
    let trace_at = |lambda: f64| g_power / (lambda * lambda);
    let (mut lo, mut hi) = bracket;

    let probes: Vec<f64> = (0..LAMBDA_PROBES)
        .map(|i| {
            let frac = i as f64 / (LAMBDA_PROBES - 1) as f64;
            trace_at((lo.ln() + frac * (hi.ln() - lo.ln())).exp())
        })
        .collect();
    if probes.windows(2).any(|p| p[1] > p[0]) {
        log::warn!("power is not monotone in lambda over the bracket; rescaling instead");
        let lambda = (g_power / power).sqrt();
        return Ok(LambdaStep { lambda, t_next: g.unscale(lambda), bisections: 0, rescaled: true });
    }

    let mut expansions = 0;
    while trace_at(lo) < power || trace_at(hi) > power {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(FdpcError::Search(format!("lambda bracket exhausted after {expansions} expansions")));
        }
        if trace_at(lo) < power {
            lo /= 10.0;
        }
        if trace_at(hi) > power {
            hi *= 10.0;
        }
        expansions += 1;
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for iter in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (a + b);
        let lambda = mid.exp();
        let tr = trace_at(lambda);
        if (tr / power - 1.0).abs() <= power_tol {
            return Ok(LambdaStep { lambda, t_next: g.unscale(lambda), bisections: iter, rescaled: false });
        }
        if tr > power {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(FdpcError::Search("bisection did not meet the power tolerance".into()))
}

/// Largest over smallest nonzero eigenvalue of `T T*`, and the numerical rank.
pub fn eigen_ratio(t: &CMat, rel_tol: f64) -> (f64, usize) {
    let (values, _) = linalg::psd_range(&(t * t.adjoint()), rel_tol);
    if values.is_empty() {
        return (f64::NAN, 0);
    }
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    (max / min, values.len())
}

/// `(1 - alpha) a + alpha b`, rescaled to trace `power`.
fn mix_on_budget(a: &CMat, b: &CMat, alpha: f64, power: f64) -> CMat {
    let mix = a.scale(1.0 - alpha) + b.scale(alpha);
    let tr = linalg::trace_re(&(&mix * mix.adjoint()));
    if tr > 0.0 {
        mix.scale((power / tr).sqrt())
    } else {
        b.clone()
    }
}

/// Alternates inflation-factor solves and T-steps on a no-CSIT bank and
/// returns the best iterate seen.
pub fn joint_optimize(spec: &ChannelSpec, config: &JointConfig, bank: &SampleBank) -> Result<JointResult> {
    config.validate()?;
    if bank.cells().len() != 1 || bank.cells()[0].hhat.is_some() {
        return Err(FdpcError::config("joint optimization needs a no-CSIT bank"));
    }
    let d = spec.dims();
    if config.rank_bound > d.t {
        return Err(FdpcError::config(format!("rank bound {} exceeds t = {}", config.rank_bound, d.t)));
    }
    let m = config.rank_bound;
    let mut t = CMat::zeros(d.t, m);
    let scale = (spec.power() / m as f64).sqrt();
    for i in 0..m {
        t[(i, i)] = c(scale);
    }

    let mut bank_now = bank.clone();
    let evaluate =
        |t: &CMat, bank: &SampleBank, warm: Option<&InflationFactor>| -> Result<(InflationFactor, RateEstimate)> {
            let spec_t = respec(spec, t)?;
            let draws = &bank.cells()[0].draws;
            let w = match warm {
                Some(w0) => config.solver.solve_from(&spec_t, w0, draws)?.w,
                None => config.solver.solve(&spec_t, draws)?.w,
            };
            let est = rate::achievable_rate(&spec_t, &WPolicy::Fixed(w.clone()), bank)?;
            Ok((w, est))
        };

    let (mut w, mut est) = evaluate(&t, &bank_now, None)?;
    let mut rate_trace = vec![est.rate_bits];
    let mut best = (est, t.clone(), w.clone());
    let mut converged = false;
    let mut alpha = 1.0;
    for iter in 1..=config.outer_iters {
        if let Some(fading) = &config.refresh {
            bank_now =
                build_sample_bank(d, fading, bank.csit(), 1, bank.n_inner(), bank.seed().wrapping_add(iter as u64))?;
        }
        let draws = &bank_now.cells()[0].draws;
        let mut t_next = t.clone();
        for _ in 0..config.t_step_iters {
            // the budget is the caller's, not the widened one of `respec`
            let g = lagrangian_gradient_map(spec, &t_next, &w, draws)?;
            t_next = lambda_for_power(&g, spec.power(), config.lambda_bracket, config.power_tol)?.t_next;
        }
        if alpha < 1.0 {
            t_next = mix_on_budget(&t, &t_next, alpha, spec.power());
        }
        let prev = est.rate_bits;
        let (w_next, est_next) = evaluate(&t_next, &bank_now, Some(&w))?;
        rate_trace.push(est_next.rate_bits);
        if est_next.rate_bits > best.0.rate_bits {
            best = (est_next, t_next.clone(), w_next.clone());
        }
        if est_next.rate_bits < prev {
            // overshoot: restart from the best point with a shorter step
            alpha *= 0.5;
            if alpha < MIN_STEP {
                converged = true;
                break;
            }
            (est, t, w) = best.clone();
            continue;
        }
        (t, w, est) = (t_next, w_next, est_next);
        if est.rate_bits - prev < config.rate_gain_tol {
            converged = true;
            break;
        }
    }
    let (rate, t, w) = best;
    let (eig_ratio, rank_used) = eigen_ratio(&t, config.solver.config.rank_tol);
    Ok(JointResult { t, w, rate_trace, rate, eig_ratio, rank_used, converged })
}
