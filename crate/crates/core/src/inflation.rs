//! Inflation-factor solvers and closed forms.
//!
//! Two iterative solvers minimize the sample-mean objective `E log|M(W)|`:
//!
//! * the row-wise solver replaces one row of `W` at a time by the exact
//!   minimizer of a Jensen upper bound on the objective, which is a convex
//!   quadratic in that row;
//! * the fixed-point solver iterates `W <- g(W) = -(E A1)^{-1} E(A2* H)`
//!   where `[A1; A2] = M^{-1} [I_m; 0]`, whose fixed points are the
//!   stationary points of the objective.
//!
//! `W` only ever enters through `W S` (`S` the interference covariance), so
//! solutions are unique at best modulo rows in `null(S)`. All solver outputs
//! are canonicalized by projecting their rows onto the row space of `S`, and
//! every inverse involving a singular `S` is taken on its column space via
//! `S = T2 T2*`.

use rayon::prelude::*;

use crate::error::{FdpcError, Result};
use crate::linalg::{self, c, CMat};
use crate::model::{ChannelSpec, Dimensions};
use crate::rate::{self, InflationFactor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative change threshold.
    pub tol: f64,
    /// Step size of the fixed-point update, in `(0, 1]`.
    pub damping: f64,
    /// Relative singular-value cutoff for pseudo-inverses and ranks.
    pub rank_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 500, tol: 1e-7, damping: 1.0, rank_tol: 1e-10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(FdpcError::config("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(FdpcError::config(format!("tol {} outside (0, 1)", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(FdpcError::config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(FdpcError::config("rank_tol outside (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub w: InflationFactor,
    /// Objective (nats) at the start and after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Eigen-basis of the column space of the interference covariance.
#[derive(Clone, Debug)]
pub struct InterferenceBasis {
    /// `t x s` orthonormal columns spanning `range(S)`.
    vectors: CMat,
    values: Vec<f64>,
}

impl InterferenceBasis {
    pub fn new(sigma_s: &CMat, rank_tol: f64) -> Self {
        let (values, vectors) = linalg::psd_range(sigma_s, rank_tol);
        InterferenceBasis { vectors, values }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// `T2 = V diag(sqrt(lambda))` with `S = T2 T2*`.
    pub fn factor(&self) -> CMat {
        let mut f = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            f.column_mut(j).scale_mut(v.sqrt());
        }
        f
    }

    /// `(T2*)^+ = V diag(1/sqrt(lambda))`.
    pub fn lift(&self) -> CMat {
        let mut f = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            f.column_mut(j).scale_mut(1.0 / v.sqrt());
        }
        f
    }

    /// Orthogonal projector onto `range(S)`.
    pub fn projector(&self) -> CMat {
        &self.vectors * self.vectors.adjoint()
    }
}

/// Projects the rows of `W` onto the row space of `S`; the objective is unchanged.
pub fn canonicalize(spec: &ChannelSpec, w: &CMat, rank_tol: f64) -> CMat {
    w * InterferenceBasis::new(spec.sigma_s(), rank_tol).projector()
}

/// `T* H* (H T T* H* + Z)^{-1} H`, optimal when the transmitter knows `H`.
pub fn w_perfect_csit(spec: &ChannelSpec, h: &CMat) -> InflationFactor {
    let t = spec.t_factor();
    let ht = h * t;
    let k = linalg::hermitian_part(&(&ht * ht.adjoint() + spec.sigma_z()));
    let inv = linalg::inv_hpd(&k).expect("H T T* H* + Z is positive definite");
    InflationFactor::from_matrix_unchecked(ht.adjoint() * inv * h)
}

/// Moore-Penrose pseudo-inverse of `T`.
pub fn w_pinv(spec: &ChannelSpec, rank_tol: f64) -> InflationFactor {
    InflationFactor::from_matrix_unchecked(linalg::pinv(spec.t_factor(), rank_tol))
}

/// `m x t` matrix with ones on the leading diagonal.
pub fn identity_embedding(dims: Dimensions) -> InflationFactor {
    let mut w = CMat::zeros(dims.m, dims.t);
    for i in 0..dims.m.min(dims.t) {
        w[(i, i)] = c(1.0);
    }
    InflationFactor::from_matrix_unchecked(w)
}

/// Largest high-SNR pre-log achievable with DPC when the transmitter has no
/// channel knowledge: `min(r, k) - min(r, k - m)` with `k = rank(Sigma_X + S)`.
pub fn theoretical_scaling(rank_sum: usize, m: usize, r: usize) -> Result<usize> {
    if m == 0 || r == 0 {
        return Err(FdpcError::argument("m and r must be positive"));
    }
    if rank_sum < m {
        return Err(FdpcError::argument(format!("rank(Sigma_X + Sigma_S) = {rank_sum} is below m = {m}")));
    }
    Ok(r.min(rank_sum) - r.min(rank_sum - m))
}

/// Pre-log with a full-rank input covariance, `min(t, r)`.
pub fn pd_scaling(t: usize, r: usize) -> usize {
    t.min(r)
}

/// High-SNR optimal factor for a full-rank input with `t > r`, written for
/// the unfactored auxiliary variable `U = X + W S`: the identity `I_t`.
///
/// Use [`from_unfactored`] to express it for `U = X' + W S` with `X = T X'`.
pub fn w_high_snr_pd(spec: &ChannelSpec) -> Result<CMat> {
    let d = spec.dims();
    if d.m != d.t {
        return Err(FdpcError::argument(format!("full-rank input required (m = {} != t = {})", d.m, d.t)));
    }
    Ok(linalg::identity(d.t))
}

/// Converts a factor for `U = X + W S` into one for `U = X' + W S`, i.e. `T^{-1} W`.
pub fn from_unfactored(spec: &ChannelSpec, w_unfactored: &CMat) -> Result<InflationFactor> {
    let d = spec.dims();
    if d.m != d.t {
        return Err(FdpcError::argument("conversion requires a square input factor"));
    }
    let inv = spec.t_factor().clone().try_inverse().ok_or_else(|| FdpcError::argument("input factor is singular"))?;
    InflationFactor::new(d, inv * w_unfactored)
}

// ---------------------------------------------------------------------------
// Row-wise solver
// ---------------------------------------------------------------------------

/// Submatrix of `a` without row and column `k`.
fn drop_index(a: &CMat, k: usize) -> CMat {
    a.clone().remove_row(k).remove_column(k)
}

/// Sample means of `P* D^{-1} P` and `c* D^{-1} P` for row `k`, where `D` is
/// `M` without row/column `k`, `P = [W without row k; H]` and
/// `c = [0; H t_k]`. The Jensen bound of the row objective is
/// `1 + w S w* - E[(P S w* + c)* D^{-1} (P S w* + c)]`.
fn row_statistics(spec: &ChannelSpec, w: &CMat, k: usize, draws: &[CMat]) -> Result<(CMat, CMat)> {
    let Dimensions { t, .. } = spec.dims();
    let others = w.clone().remove_row(k);
    let tk = spec.t_factor().column(k).into_owned();
    let per_draw: Vec<(CMat, CMat)> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let m_full = rate::build_m(spec, w, h);
            let d_inv = linalg::inv_hpd(&drop_index(&m_full, k)).ok_or_else(|| FdpcError::Evaluation {
                index,
                reason: format!("reduced block matrix for row {} is singular", k + 1),
            })?;
            let mut p = CMat::zeros(others.nrows() + h.nrows(), t);
            p.view_mut((0, 0), (others.nrows(), t)).copy_from(&others);
            p.view_mut((others.nrows(), 0), (h.nrows(), t)).copy_from(h);
            let mut cvec = CMat::zeros(others.nrows() + h.nrows(), 1);
            cvec.view_mut((others.nrows(), 0), (h.nrows(), 1)).copy_from(&(h * &tk));
            let dp = &d_inv * &p;
            Ok((p.adjoint() * &dp, cvec.adjoint() * dp))
        })
        .collect::<Result<_>>()?;
    let mut q = CMat::zeros(t, t);
    let mut b = CMat::zeros(1, t);
    for (qi, bi) in &per_draw {
        q += qi;
        b += bi;
    }
    let n = draws.len() as f64;
    Ok((linalg::hermitian_part(&q.unscale(n)), b.unscale(n)))
}

fn row_update_with_basis(
    spec: &ChannelSpec,
    w: &CMat,
    k: usize,
    draws: &[CMat],
    basis: &InterferenceBasis,
) -> Result<CMat> {
    let mut out = w.clone();
    if basis.rank() == 0 {
        out.row_mut(k).fill(c(0.0));
        return Ok(out);
    }
    let (q, b) = row_statistics(spec, w, k, draws)?;
    let t2 = basis.factor();
    let s = basis.rank();
    // (I - T2* Q T2) v = T2* b*,   row = (lift v)*
    let normal = linalg::hermitian_part(&(linalg::identity(s) - t2.adjoint() * &q * &t2));
    let rhs = t2.adjoint() * b.adjoint();
    let chol = linalg::cholesky(&normal)
        .ok_or_else(|| FdpcError::solver(format!("normal matrix of row {} is singular", k + 1)))?;
    let v = linalg::cholesky_solve(&chol, &rhs);
    let row = (basis.lift() * v).adjoint();
    out.row_mut(k).copy_from(&row);
    Ok(out)
}

/// Replaces row `k` (0-based) of `W` by the minimizer of the Jensen bound
/// of the objective over that row.
pub fn alg1_row_update(spec: &ChannelSpec, w: &InflationFactor, k: usize, draws: &[CMat]) -> Result<InflationFactor> {
    check_row(spec, k)?;
    check_draws(draws)?;
    let basis = InterferenceBasis::new(spec.sigma_s(), SolverConfig::default().rank_tol);
    row_update_with_basis(spec, w, k, draws, &basis).map(InflationFactor::from_matrix_unchecked)
}

/// Jensen bound `E[a - B* D^{-1} B]` for row `k`, computed directly from `M`.
pub fn row_surrogate(spec: &ChannelSpec, w: &CMat, k: usize, draws: &[CMat]) -> Result<f64> {
    check_row(spec, k)?;
    let terms: Vec<f64> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let m_full = rate::build_m(spec, w, h);
            let d_inv = linalg::inv_hpd(&drop_index(&m_full, k))
                .ok_or_else(|| FdpcError::Evaluation { index, reason: "reduced block matrix is singular".into() })?;
            let b = m_full.column(k).into_owned().remove_row(k);
            Ok(m_full[(k, k)].re - (b.adjoint() * d_inv * &b)[(0, 0)].re)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Closed-form factor for `m = 1`:
/// `W = T* E1 S (S - S E1 S)^+` with `E1 = E[H* (H (T T* + S) H* + Z)^{-1} H]`.
pub fn eq2_closed_form(spec: &ChannelSpec, draws: &[CMat], rank_tol: f64) -> Result<InflationFactor> {
    if spec.dims().m != 1 {
        return Err(FdpcError::argument("the closed form applies to m = 1 only"));
    }
    check_draws(draws)?;
    let t = spec.dims().t;
    let terms: Vec<CMat> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let n_inv = linalg::inv_hpd(&rate::output_covariance(spec, h))
                .ok_or_else(|| FdpcError::Evaluation { index, reason: "output covariance is singular".into() })?;
            Ok(h.adjoint() * n_inv * h)
        })
        .collect::<Result<_>>()?;
    let mut e1 = CMat::zeros(t, t);
    for term in &terms {
        e1 += term;
    }
    let e1 = linalg::hermitian_part(&e1.unscale(draws.len() as f64));
    let s = spec.sigma_s();
    let normal = linalg::hermitian_part(&(s - s * &e1 * s));
    let w = spec.t_factor().adjoint() * &e1 * s * linalg::pinv(&normal, rank_tol);
    InflationFactor::new(spec.dims(), w)
}

/// Shortest fraction of a sweep tried before the row-wise solver stops.
const MIN_SWEEP_STEP: f64 = 1.0 / 64.0;

/// Cycles row updates over all rows until the objective settles. A sweep
/// that raises the objective is shortened along the segment from the
/// previous iterate; if no fraction helps, the solver stops there.
pub fn alg1_solve(
    spec: &ChannelSpec,
    w0: &InflationFactor,
    config: &SolverConfig,
    draws: &[CMat],
) -> Result<SolveResult> {
    config.validate()?;
    check_draws(draws)?;
    InflationFactor::new(spec.dims(), w0.matrix().clone())?;
    let basis = InterferenceBasis::new(spec.sigma_s(), config.rank_tol);
    let mut w = w0.matrix() * basis.projector();
    let mut prev = rate::objective(spec, &w, draws)?;
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;
    for sweep in 1..=config.max_iters {
        let mut candidate = w.clone();
        for k in 0..spec.dims().m {
            candidate = row_update_with_basis(spec, &candidate, k, draws, &basis)?;
        }
        let mut current = rate::objective(spec, &candidate, draws)?;
        iterations = sweep;
        if current > prev {
            // the rows minimize a bound, not the objective itself
            let mut step = 0.5;
            let mut accepted = false;
            while step >= MIN_SWEEP_STEP {
                let trial = &w + (&candidate - &w).scale(step);
                let f = rate::objective(spec, &trial, draws)?;
                if f <= prev {
                    (candidate, current, accepted) = (trial, f, true);
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                trace.push(prev);
                converged = true;
                break;
            }
        }
        w = candidate;
        trace.push(current);
        if (prev - current).abs() <= config.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = current;
    }
    Ok(SolveResult { w: InflationFactor::from_matrix_unchecked(w), objective_trace: trace, converged, iterations })
}

// ---------------------------------------------------------------------------
// Fixed-point solver
// ---------------------------------------------------------------------------

/// `g(W) = -(E A1)^{-1} E(A2* H)` with `[A1; A2] = M^{-1} [I_m; 0]`.
///
/// Returns `None` when `S = 0`: the stationarity condition
/// `E(A1 W + A2* H) S = 0` then holds for every `W`.
pub fn alg2_map(spec: &ChannelSpec, w: &CMat, draws: &[CMat]) -> Result<Option<CMat>> {
    check_draws(draws)?;
    if !spec.has_interference() {
        return Ok(None);
    }
    let Dimensions { m, r, t } = spec.dims();
    let mut selector = CMat::zeros(m + r, m);
    for i in 0..m {
        selector[(i, i)] = c(1.0);
    }
    let per_draw: Vec<(CMat, CMat)> = draws
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let chol = linalg::cholesky(&rate::build_m(spec, w, h)).ok_or_else(|| FdpcError::Evaluation {
                index,
                reason: "block matrix M is numerically singular".into(),
            })?;
            let x = linalg::cholesky_solve(&chol, &selector);
            let a1 = x.rows(0, m).into_owned();
            let a2 = x.rows(m, r).into_owned();
            Ok((a1, a2.adjoint() * h))
        })
        .collect::<Result<_>>()?;
    let mut ea1 = CMat::zeros(m, m);
    let mut ea2h = CMat::zeros(m, t);
    for (a1, a2h) in &per_draw {
        ea1 += a1;
        ea2h += a2h;
    }
    let n = draws.len() as f64;
    let ea1 = linalg::hermitian_part(&ea1.unscale(n));
    let chol = linalg::cholesky(&ea1)
        .ok_or_else(|| FdpcError::solver("E[A1] is numerically singular; try a smaller damping or another seed"))?;
    Ok(Some(-linalg::cholesky_solve(&chol, &ea2h.unscale(n))))
}

/// `||W - g(W) P||_F / max(1, ||W||_F)` with `P` the projector onto `range(S)`.
pub fn alg2_residual(spec: &ChannelSpec, w: &CMat, draws: &[CMat], rank_tol: f64) -> Result<f64> {
    let proj = InterferenceBasis::new(spec.sigma_s(), rank_tol).projector();
    Ok(match alg2_map(spec, w, draws)? {
        None => 0.0,
        Some(g) => linalg::frobenius(&(w - g * proj)) / linalg::frobenius(w).max(1.0),
    })
}

/// Consecutive objective increases tolerated before the fixed-point solver gives up.
const MAX_INCREASES: usize = 5;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

/// Damped iteration `W <- (1 - gamma) W + gamma g(W) P`, halving `gamma`
/// whenever the objective increases.
pub fn alg2_solve(
    spec: &ChannelSpec,
    w0: &InflationFactor,
    config: &SolverConfig,
    draws: &[CMat],
) -> Result<SolveResult> {
    config.validate()?;
    check_draws(draws)?;
    InflationFactor::new(spec.dims(), w0.matrix().clone())?;
    if !spec.has_interference() {
        let obj = rate::objective(spec, w0, draws)?;
        return Ok(SolveResult { w: w0.clone(), objective_trace: vec![obj], converged: true, iterations: 0 });
    }
    let proj = InterferenceBasis::new(spec.sigma_s(), config.rank_tol).projector();
    let mut w = w0.matrix() * &proj;
    let mut obj = rate::objective(spec, &w, draws)?;
    let mut trace = vec![obj];
    let mut best = (obj, w.clone());
    let mut gamma = config.damping;
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        let g = alg2_map(spec, &w, draws)?.expect("interference present") * &proj;
        let residual = linalg::frobenius(&(&w - &g)) / linalg::frobenius(&w).max(1.0);
        if residual < config.tol {
            converged = true;
            break;
        }
        iterations += 1;
        w = w.scale(1.0 - gamma) + g.scale(gamma);
        let next = rate::objective(spec, &w, draws)?;
        trace.push(next);
        if next - obj > 1e-12 * obj.abs().max(1.0) {
            increases += 1;
            gamma = (gamma / 2.0).max(MIN_DAMPING);
            if increases >= MAX_INCREASES {
                log::warn!("fixed-point solver: objective rose {MAX_INCREASES} times in a row; returning best iterate");
                break;
            }
        } else {
            increases = 0;
        }
        obj = next;
        if obj < best.0 {
            best = (obj, w.clone());
        }
    }
    let w = if converged { w } else { best.1 };
    Ok(SolveResult { w: InflationFactor::from_matrix_unchecked(w), objective_trace: trace, converged, iterations })
}

fn check_row(spec: &ChannelSpec, k: usize) -> Result<()> {
    if k >= spec.dims().m {
        return Err(FdpcError::argument(format!("row index {k} out of range for m = {}", spec.dims().m)));
    }
    Ok(())
}

fn check_draws(draws: &[CMat]) -> Result<()> {
    if draws.is_empty() {
        return Err(FdpcError::argument("at least one channel draw is required"));
    }
    Ok(())
}
