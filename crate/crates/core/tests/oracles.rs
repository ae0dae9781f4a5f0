//! Independent numerical oracles: brute-force searches, finite differences
//! and Monte Carlo checks of closed forms.

use fdpc::covopt::{self, JointConfig};
use fdpc::inflation::{self, SolverConfig};
use fdpc::lab::{self, CsitChoice, McSettings, SweepPlan, WChoice};
use fdpc::linalg::{self, CMat, C64};
use fdpc::model::{
    build_sample_bank, design_uniform_quantizer, gaussian_mse, random_gaussian, sample_h, sample_rng, Quantizer,
};
use fdpc::rate::{self, Algorithm, SolverChoice, WPolicy};
use fdpc::{ChannelSpec, CsitModel, Dimensions, FadingModel, Field, InflationFactor};

fn scalar_spec(q: f64) -> ChannelSpec {
    let d = Dimensions::new(1, 1, 1).unwrap();
    let one = || linalg::identity(1);
    ChannelSpec::new(d, Field::Real, one(), one().scale(q), one(), 1.0).unwrap()
}

fn draws(fading: &FadingModel, dims: Dimensions, n: u64, seed: u64) -> Vec<CMat> {
    (0..n).map(|i| sample_h(fading, dims, &mut sample_rng(seed, 0, i))).collect()
}

fn spec_from(name: &str, snr: f64) -> (ChannelSpec, FadingModel) {
    let cfg = lab::preset(name).unwrap();
    (cfg.template().unwrap().at_snr_db(snr).unwrap(), cfg.fading_model().unwrap())
}

/// Simpson rule for the MSE of the uniform quantizer under N(0, 1).
fn mse_by_quadrature(bits: u32, step: f64) -> f64 {
    let q = Quantizer::new(bits, step, false).unwrap();
    let (a, b, n) = (-9.0, 9.0, 6000);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let e = x - q.quantize(x);
        e * e * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    // integrate each bin separately so the kinks sit on panel edges
    let mut edges = vec![a];
    for k in 0..q.n_levels().saturating_sub(1) {
        edges.push(q.bin_interval(k).1);
    }
    edges.push(b);
    edges
        .windows(2)
        .map(|w| {
            let panels = (((w[1] - w[0]) / h).ceil() as usize).max(2) & !1;
            let dh = (w[1] - w[0]) / panels as f64;
            let mut s = f(w[0]) + f(w[1]);
            for i in 1..panels {
                s += f(w[0] + i as f64 * dh) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * dh / 3.0
        })
        .sum()
}

#[test]
fn two_bit_step_matches_brute_force_search() {
    let mut best = (f64::MAX, 0.0);
    let mut grid = |lo: f64, hi: f64, step: f64| {
        let mut d = lo;
        while d <= hi {
            let v = mse_by_quadrature(2, d);
            if v < best.0 {
                best = (v, d);
            }
            d += step;
        }
        best.1
    };
    let coarse = grid(0.01, 3.0, 0.01);
    let fine = grid(coarse - 0.01, coarse + 0.01, 2e-5);
    let designed = design_uniform_quantizer(2).unwrap();
    assert!((designed - fine).abs() < 1e-4, "designed {designed} vs grid {fine}");
}

#[test]
fn closed_form_mse_matches_quadrature() {
    for bits in 1..=4 {
        for step in [0.3, 0.9957, 1.6, 2.5] {
            let a = gaussian_mse(bits, step);
            let b = mse_by_quadrature(bits, step);
            assert!((a - b).abs() < 1e-8, "B={bits} step={step}: {a} vs {b}");
        }
    }
}

#[test]
fn designed_steps_match_classical_table() {
    // optimum uniform steps for a unit Gaussian with 2, 4 and 8 levels
    for (bits, want) in [(1, 1.596), (2, 0.9957), (3, 0.586)] {
        let got = design_uniform_quantizer(bits).unwrap();
        assert!((got - want).abs() < 1e-3, "B={bits}: {got}");
    }
    let half = design_uniform_quantizer(1).unwrap() / 2.0;
    assert!((half - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-6);
}

#[test]
fn conditional_sampling_preserves_marginal_law() {
    for (fading, var) in [(FadingModel::IidRealGaussian, 1.0), (FadingModel::IidComplexGaussian, 0.5)] {
        for bits in [1, 2] {
            let dims = Dimensions::new(2, 2, 1).unwrap();
            let csit = CsitModel::quantized(bits, &fading).unwrap();
            let bank = build_sample_bank(dims, &fading, &csit, 25_000, 1, 3).unwrap();
            let mut parts: Vec<f64> = Vec::new();
            for cell in bank.cells() {
                for z in cell.draws[0].iter() {
                    parts.push(z.re);
                    if fading.is_complex() {
                        parts.push(z.im);
                    }
                }
            }
            let n = parts.len() as f64;
            let mean = parts.iter().sum::<f64>() / n;
            let v = parts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "B={bits}: mean {mean}");
            assert!((v - var).abs() < 0.02, "B={bits}: variance {v}");
        }
    }
}

#[test]
fn scalar_objective_minimized_at_costa_factor() {
    let spec = scalar_spec(1.0);
    let h = vec![linalg::identity(1)];
    let (mut best_w, mut best_f) = (0.0, f64::MAX);
    for i in 0..=40_000 {
        let w = -1.0 + i as f64 * 5e-5;
        let f = rate::objective(&spec, &linalg::from_real(1, 1, &[w]), &h).unwrap();
        if f < best_f {
            (best_w, best_f) = (w, f);
        }
    }
    assert!((best_w - 0.5).abs() <= 1e-4, "{best_w}");
    let costa = inflation::w_perfect_csit(&spec, &h[0]);
    assert!((costa.matrix()[(0, 0)].re - 0.5).abs() < 1e-12);

    // fixed point of the stationarity map and the solver both land there
    let g = inflation::alg2_map(&spec, &linalg::from_real(1, 1, &[best_w]), &h).unwrap().unwrap();
    assert!((g[(0, 0)].re - best_w).abs() <= 1e-4);
    let cfg = SolverConfig { damping: 1.0, ..SolverConfig::default() };
    let w0 = InflationFactor::new(spec.dims(), linalg::from_real(1, 1, &[0.1])).unwrap();
    let res = inflation::alg2_solve(&spec, &w0, &cfg, &h).unwrap();
    assert!(res.converged);
    assert!((res.w.matrix()[(0, 0)].re - best_w).abs() <= 1e-4);
}

#[test]
fn scalar_costa_rate_is_one_bit() {
    for q in [0.0, 0.5, 3.0, 100.0] {
        let spec = scalar_spec(q);
        let h = linalg::identity(1);
        let w = inflation::w_perfect_csit(&spec, &h);
        let n = linalg::logdet_hpd(&rate::output_covariance(&spec, &h)).unwrap();
        let m = rate::log_det_m(&spec, w.matrix(), &h).unwrap();
        assert!(((n - m) / std::f64::consts::LN_2 - 1.0).abs() < 1e-12, "q={q}");
    }
}

#[test]
fn perfect_csit_factor_is_locally_optimal() {
    let dims = Dimensions::new(2, 2, 2).unwrap();
    let t = random_gaussian(2, 2, Field::Complex, 11);
    let s = random_gaussian(2, 2, Field::Complex, 12);
    let power = linalg::trace_re(&(&t * t.adjoint()));
    let spec = ChannelSpec::new(dims, Field::Complex, t, &s * s.adjoint(), linalg::identity(2), power).unwrap();
    let h = vec![random_gaussian(2, 2, Field::Complex, 13)];
    let w = inflation::w_perfect_csit(&spec, &h[0]);
    let f0 = rate::objective(&spec, w.matrix(), &h).unwrap();
    for k in 0..100 {
        let d = random_gaussian(2, 2, Field::Complex, 100 + k).scale(1e-2 * (1 + k % 5) as f64);
        let f = rate::objective(&spec, &(w.matrix() + d), &h).unwrap();
        assert!(f >= f0 - 1e-12, "probe {k}: {f} < {f0}");
    }
    let zero_h = CMat::zeros(2, 2);
    assert_eq!(linalg::frobenius(inflation::w_perfect_csit(&spec, &zero_h).matrix()), 0.0);
}

#[test]
fn single_row_closed_form_beats_random_search_on_one_channel() {
    let (spec, fading) = spec_from("fdpc-fig4-1", 10.0);
    let h = draws(&fading, spec.dims(), 1, 5);
    let w = inflation::eq2_closed_form(&spec, &h, 1e-10).unwrap();
    let f0 = rate::objective(&spec, w.matrix(), &h).unwrap();
    for k in 0..10_000u64 {
        let d = random_gaussian(1, 2, Field::Complex, 10_000 + k);
        let scale = 10f64.powi(-((k % 6) as i32));
        let f = rate::objective(&spec, &(w.matrix() + d.scale(scale)), &h).unwrap();
        assert!(f >= f0 - 1e-8, "probe {k}");
    }
    // the fixed-point map sees the same stationary point
    let g = inflation::alg2_map(&spec, w.matrix(), &h).unwrap().unwrap();
    let proj = inflation::InterferenceBasis::new(spec.sigma_s(), 1e-10).projector();
    let res = linalg::frobenius(&(g * proj - w.matrix()));
    assert!(res < 1e-3 * linalg::frobenius(w.matrix()));
}

#[test]
fn row_sweeps_never_increase_objective() {
    for (name, snrs) in [
        ("fdpc-fig4-1", [0.0, 10.0, 20.0]),
        ("fdpc-fig4-2", [0.0, 10.0, 20.0]),
        ("fdpc-3x2-b", [0.0, 20.0, 40.0]),
        ("fdpc-3x2-full", [0.0, 20.0, 40.0]),
        ("fdpc-3x2-corr", [-10.0, 10.0, 30.0]),
    ] {
        for snr in snrs {
            let (spec, fading) = spec_from(name, snr);
            let h = draws(&fading, spec.dims(), 1000, 7);
            let w0 = InflationFactor::new(spec.dims(), random_gaussian(spec.dims().m, spec.dims().t, spec.field(), 8))
                .unwrap();
            let res = inflation::alg1_solve(&spec, &w0, &SolverConfig::default(), &h).unwrap();
            for pair in res.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0), "{name}@{snr}: {pair:?}");
            }
        }
    }
}

#[test]
fn row_sweeps_without_interference_stop_immediately() {
    let dims = Dimensions::new(3, 2, 2).unwrap();
    let t = random_gaussian(3, 2, Field::Complex, 21);
    let power = linalg::trace_re(&(&t * t.adjoint()));
    let z = linalg::identity(2).scale(0.7);
    let spec = ChannelSpec::new(dims, Field::Complex, t, CMat::zeros(3, 3), z.clone(), power).unwrap();
    let h = draws(&FadingModel::IidComplexGaussian, dims, 50, 22);
    let w0 = InflationFactor::new(dims, random_gaussian(2, 3, Field::Complex, 23)).unwrap();
    let res = inflation::alg1_solve(&spec, &w0, &SolverConfig::default(), &h).unwrap();
    assert!(res.converged);
    assert!(res.iterations <= 1);
    let base = linalg::logdet_hpd(&z).unwrap();
    assert!((res.objective_trace.last().unwrap() - base).abs() < 1e-9);
}

#[test]
fn pseudo_inverse_factor_examples() {
    let dims = Dimensions::new(2, 2, 1).unwrap();
    let t = linalg::from_real(2, 1, &[1.0, 0.0]);
    let spec = ChannelSpec::new(dims, Field::Real, t, linalg::identity(2), linalg::identity(2), 1.0).unwrap();
    let w = inflation::w_pinv(&spec, 1e-10);
    assert!(linalg::frobenius(&(w.matrix() - linalg::from_real(1, 2, &[1.0, 0.0]))) < 1e-12);

    for seed in 0..10 {
        let dims = Dimensions::new(3, 2, 2).unwrap();
        let t = random_gaussian(3, 2, Field::Complex, 30 + seed);
        let p = linalg::trace_re(&(&t * t.adjoint()));
        let spec =
            ChannelSpec::new(dims, Field::Complex, t.clone(), linalg::identity(3), linalg::identity(2), p).unwrap();
        let w = inflation::w_pinv(&spec, 1e-10).into_matrix();
        assert!(linalg::frobenius(&(&w * &t * &w - &w)) < 1e-10);
        assert!(linalg::frobenius(&(&t * &w * &t - &t)) < 1e-10);

        let dims = Dimensions::new(3, 2, 3).unwrap();
        let t = random_gaussian(3, 3, Field::Complex, 40 + seed);
        let p = linalg::trace_re(&(&t * t.adjoint()));
        let spec =
            ChannelSpec::new(dims, Field::Complex, t.clone(), linalg::identity(3), linalg::identity(2), p).unwrap();
        let w = inflation::w_pinv(&spec, 1e-10).into_matrix();
        assert!(linalg::frobenius(&(&w * &t - linalg::identity(3))) < 1e-10);
    }
}

#[test]
fn identity_inflation_near_bound_when_t_at_most_r() {
    let dims = Dimensions::new(2, 3, 2).unwrap();
    let template = fdpc::ChannelTemplate {
        dims,
        field: Field::Complex,
        noise_trace: 3.0,
        q_over_p: 1.0,
        sigma_s: fdpc::model::CovarianceSpec::RandomPsd { rank: 2, seed: 5 },
        sigma_x: fdpc::model::FactorSpec::ScaledIdentity,
    };
    let spec = template.at_snr_db(50.0).unwrap();
    let bank = build_sample_bank(dims, &FadingModel::IidComplexGaussian, &CsitModel::NoCsit, 1, 5000, 6).unwrap();
    let w = inflation::from_unfactored(&spec, &linalg::identity(2)).unwrap();
    let ev = rate::evaluate(&spec, &WPolicy::Fixed(w), &bank).unwrap();
    assert!(ev.gap.rate_bits < 0.1, "gap {}", ev.gap.rate_bits);
}

#[test]
fn solvers_dominate_fixed_choices() {
    for (name, snr) in [("fdpc-fig4-1", 0.0), ("fdpc-fig4-2", 10.0), ("fdpc-3x2-b", 20.0), ("fdpc-2x2-b", 10.0)] {
        let (spec, fading) = spec_from(name, snr);
        let h = draws(&fading, spec.dims(), 2000, 9);
        let cfg = SolverConfig::default();
        let solved = [Algorithm::RowWise, Algorithm::FixedPoint]
            .map(|a| rate::objective(&spec, SolverChoice::new(a).solve(&spec, &h).unwrap().w.matrix(), &h).unwrap());
        let best = solved[0].min(solved[1]);
        let fixed = [
            InflationFactor::zeros(spec.dims()),
            inflation::w_pinv(&spec, cfg.rank_tol),
            inflation::identity_embedding(spec.dims()),
        ];
        for w in fixed {
            // same draws on both sides, so no Monte Carlo slack is needed
            assert!(best <= rate::objective(&spec, w.matrix(), &h).unwrap() + 1e-9, "{name}");
        }
    }
}

#[test]
fn rank_of_inner_matrix_respects_bound() {
    for (t, m, s_rank, seed) in [(3, 2, 3, 1u64), (3, 2, 1, 2), (3, 1, 2, 3), (4, 2, 2, 4)] {
        let dims = Dimensions::new(t, 2, m).unwrap();
        let tf = random_gaussian(t, m, Field::Complex, seed);
        let g = random_gaussian(t, s_rank, Field::Complex, seed + 100);
        let s = &g * g.adjoint();
        let p = linalg::trace_re(&(&tf * tf.adjoint()));
        let spec = ChannelSpec::new(dims, Field::Complex, tf.clone(), s.clone(), linalg::identity(2), p).unwrap();
        let rank_sum = linalg::numerical_rank(&(&tf * tf.adjoint() + &s), 1e-9);
        let bound = rank_sum.saturating_sub(m);
        for k in 0..20 {
            let w = random_gaussian(m, t, Field::Complex, 1000 + k);
            let a = rate::inner_matrix_a(&spec, &w);
            assert!(linalg::numerical_rank(&a, 1e-9) >= bound);
        }
        let a = rate::inner_matrix_a(&spec, inflation::w_pinv(&spec, 1e-10).matrix());
        assert_eq!(linalg::numerical_rank(&a, 1e-8), bound, "t={t} m={m} rank S={s_rank}");
    }
}

fn fd_gradient(f: impl Fn(&CMat) -> f64, t: &CMat, step: f64) -> CMat {
    let mut out = CMat::zeros(t.nrows(), t.ncols());
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            let mut partial = C64::new(0.0, 0.0);
            for (unit, slot) in [(C64::new(1.0, 0.0), 0), (C64::new(0.0, 1.0), 1)] {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[(i, j)] += unit * step;
                tm[(i, j)] -= unit * step;
                let d = (f(&tp) - f(&tm)) / (2.0 * step);
                if slot == 0 {
                    partial.re = d;
                } else {
                    partial.im = d;
                }
            }
            out[(i, j)] = partial;
        }
    }
    out
}

#[test]
fn complex_gradient_matches_finite_differences() {
    // derivative along Re and Im of each entry equals 2 Re g and 2 Im g
    let dims = Dimensions::new(3, 2, 2).unwrap();
    let h = draws(&FadingModel::IidComplexGaussian, dims, 200, 31);
    let t = random_gaussian(3, 2, Field::Complex, 32);
    let s = random_gaussian(3, 2, Field::Complex, 33);
    let p = linalg::trace_re(&(&t * t.adjoint()));
    let spec = ChannelSpec::new(dims, Field::Complex, t.clone(), &s * s.adjoint(), linalg::identity(2), p).unwrap();
    let w = random_gaussian(2, 3, Field::Complex, 34).scale(0.4);
    let lambda = 0.25;
    let g = covopt::lagrangian_gradient_map(&spec, &t, &w, &h).unwrap();
    let analytic = (g - t.scale(lambda)).scale(2.0);
    let fd = fd_gradient(|tt| covopt::lagrangian(&spec, tt, &w, lambda, &h).unwrap(), &t, 1e-5);
    let rel = linalg::frobenius(&(&analytic - &fd)) / linalg::frobenius(&fd);
    assert!(rel < 1e-3, "{rel}");
}

#[test]
fn gradient_without_interference_is_capacity_gradient() {
    let dims = Dimensions::new(3, 2, 2).unwrap();
    let h = draws(&FadingModel::IidComplexGaussian, dims, 200, 41);
    let t = random_gaussian(3, 2, Field::Complex, 42);
    let p = linalg::trace_re(&(&t * t.adjoint()));
    let z = linalg::identity(2).scale(0.5);
    let spec = ChannelSpec::new(dims, Field::Complex, t.clone(), CMat::zeros(3, 3), z.clone(), p * 4.0).unwrap();
    let w = random_gaussian(2, 3, Field::Complex, 43);
    let g = covopt::lagrangian_gradient_map(&spec, &t, &w, &h).unwrap();
    let capacity = |tt: &CMat| {
        h.iter()
            .map(|hh| {
                let k = hh * tt * tt.adjoint() * hh.adjoint() + &z;
                linalg::logdet_hpd(&linalg::hermitian_part(&k)).unwrap()
            })
            .sum::<f64>()
            / h.len() as f64
    };
    let fd = fd_gradient(capacity, &t, 1e-5);
    let rel = linalg::frobenius(&(g.scale(2.0) - &fd)) / linalg::frobenius(&fd);
    assert!(rel < 1e-5, "{rel}");
}

#[test]
fn lambda_search_meets_budget() {
    for (name, snr) in [("fdpc-3x3-corr", 0.0), ("fdpc-3x2-corr", 30.0), ("fdpc-fig4-2", 10.0)] {
        let (spec, fading) = spec_from(name, snr);
        let h = draws(&fading, spec.dims(), 300, 51);
        let w = inflation::w_pinv(&spec, 1e-10);
        let cfg = JointConfig::new(spec.dims().m, SolverChoice::new(Algorithm::FixedPoint));
        let step = covopt::solve_lambda(&spec, spec.t_factor(), w.matrix(), &h, &cfg).unwrap();
        assert!(step.lambda > 0.0);
        let tr = linalg::trace_re(&(&step.t_next * step.t_next.adjoint()));
        assert!((tr / spec.power() - 1.0).abs() <= 1e-6, "{name}: {tr}");
    }
}

#[test]
fn joint_optimization_properties() {
    let (spec, fading) = spec_from("fdpc-3x2-corr", 10.0);
    let bank = build_sample_bank(spec.dims(), &fading, &CsitModel::NoCsit, 1, 3000, 61).unwrap();
    let mut rates = Vec::new();
    for rank in 1..=3 {
        let cfg = JointConfig::new(rank, SolverChoice::new(Algorithm::FixedPoint));
        let res = covopt::joint_optimize(&spec, &cfg, &bank).unwrap();
        let tr = linalg::trace_re(&(&res.t * res.t.adjoint()));
        assert!(tr <= spec.power() * (1.0 + 1e-6));
        assert!(res.rate_trace.iter().all(|r| r.is_finite()));
        assert!(res.rate.rate_bits >= res.rate_trace[0]);
        assert!(res.rank_used <= rank);
        rates.push(res.rate);

        if rank == 3 {
            // out-of-sample check on a fresh bank
            let fresh = build_sample_bank(spec.dims(), &fading, &CsitModel::NoCsit, 1, 3000, 62).unwrap();
            let respec = ChannelSpec::new(
                spec.dims(),
                spec.field(),
                res.t.clone(),
                spec.sigma_s().clone(),
                spec.sigma_z().clone(),
                spec.power() * (1.0 + 1e-6),
            )
            .unwrap();
            let again = rate::achievable_rate(&respec, &WPolicy::Fixed(res.w.clone()), &fresh).unwrap();
            let slack = 3.0 * again.stderr_bits.hypot(res.rate.stderr_bits);
            assert!((again.rate_bits - res.rate.rate_bits).abs() <= slack);
        }
    }
    for pair in rates.windows(2) {
        assert!(pair[1].rate_bits >= pair[0].rate_bits - 2.0 * pair[0].stderr_bits.hypot(pair[1].stderr_bits));
    }
}

#[test]
fn isotropic_input_is_kept_without_interference() {
    let dims = Dimensions::new(2, 2, 2).unwrap();
    let template = fdpc::ChannelTemplate {
        dims,
        field: Field::Complex,
        noise_trace: 2.0,
        q_over_p: 0.0,
        sigma_s: fdpc::model::CovarianceSpec::Zero,
        sigma_x: fdpc::model::FactorSpec::ScaledIdentity,
    };
    let spec = template.at_snr_db(10.0).unwrap();
    let bank = build_sample_bank(dims, &FadingModel::IidComplexGaussian, &CsitModel::NoCsit, 1, 4000, 71).unwrap();
    let base = rate::achievable_rate(&spec, &WPolicy::Fixed(InflationFactor::zeros(dims)), &bank).unwrap();
    let res =
        covopt::joint_optimize(&spec, &JointConfig::new(2, SolverChoice::new(Algorithm::FixedPoint)), &bank).unwrap();
    assert!(res.rate.rate_bits >= base.rate_bits - 2.0 * base.stderr_bits);
    assert!((res.rate.rate_bits - base.rate_bits).abs() <= 2.0 * base.stderr_bits.hypot(res.rate.stderr_bits));
}

#[test]
fn sweep_rows_respect_bound_and_reproduce() {
    let cfg = lab::preset("fdpc-2x2-a").unwrap();
    let (template, fading) = (cfg.template().unwrap(), cfg.fading_model().unwrap());
    let plan = SweepPlan {
        snr_db_list: vec![0.0, 10.0, 20.0],
        q_over_p: 1.0,
        solvers: vec![WChoice::Alg1, WChoice::Alg2, WChoice::Zero, WChoice::Pinv],
        csits: vec![CsitChoice::None, CsitChoice::Bits(1), CsitChoice::Perfect],
        include_bound: true,
        solver_config: SolverConfig::default(),
    };
    let mc = McSettings { n_outer: 30, n_inner: 400 };
    let rows = lab::run_sweep(&template, &fading, &plan, mc, 3).unwrap();
    assert_eq!(rows.len(), 36);
    for r in &rows {
        assert!(r.error.is_none());
        assert!(r.rate_bits <= r.bound_bits + 2.0 * r.stderr_bits, "{r:?}");
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    lab::write_csv(&rows, &mut a).unwrap();
    lab::write_csv(&lab::run_sweep(&template, &fading, &plan, mc, 3).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with(lab::CSV_HEADER));
}

#[test]
fn failing_cells_become_error_rows() {
    let cfg = lab::preset("fdpc-fig4-1").unwrap();
    let (template, fading) = (cfg.template().unwrap(), cfg.fading_model().unwrap());
    let plan = SweepPlan {
        snr_db_list: vec![10.0],
        q_over_p: 1.0,
        solvers: vec![WChoice::Zero],
        // more bits than the quantizer supports
        csits: vec![CsitChoice::None, CsitChoice::Bits(9)],
        include_bound: true,
        solver_config: SolverConfig::default(),
    };
    let rows = lab::run_sweep(&template, &fading, &plan, McSettings { n_outer: 2, n_inner: 10 }, 1).unwrap();
    assert!(rows[0].error.is_none());
    assert!(rows[1].error.is_some() && rows[1].rate_bits.is_nan());
}

#[test]
fn zero_interference_harness_values_are_exact() {
    let mut cfg = lab::preset("fdpc-lowsnr").unwrap();
    cfg.q_over_p = 0.0;
    let (template, fading) = (cfg.template().unwrap(), cfg.fading_model().unwrap());
    let mc = McSettings { n_outer: 1, n_inner: 2000 };
    for p in lab::low_snr_ratio(&template, &fading, &[0.0, -30.0], mc, 1).unwrap() {
        assert_eq!(p.ratio, 1.0);
    }
    let ev =
        lab::gap_to_bound(&template, &fading, &CsitModel::NoCsit, 10.0, WChoice::Alg1, mc, 1, &SolverConfig::default())
            .unwrap();
    assert_eq!(ev.gap.rate_bits, 0.0);
    let slope = lab::estimate_scaling(&template, &fading, WChoice::Pinv, (40.0, 60.0), mc, 1, &SolverConfig::default())
        .unwrap();
    assert!((slope.slope - 2.0).abs() < 0.15, "{}", slope.slope);
}

#[test]
fn scaling_rejects_low_snr_window() {
    let cfg = lab::preset("fdpc-3x2-b").unwrap();
    let (template, fading) = (cfg.template().unwrap(), cfg.fading_model().unwrap());
    let mc = McSettings { n_outer: 1, n_inner: 10 };
    assert!(lab::estimate_scaling(&template, &fading, WChoice::Pinv, (20.0, 60.0), mc, 1, &SolverConfig::default())
        .is_err());
    assert!(lab::estimate_scaling(&template, &fading, WChoice::Pinv, (50.0, 40.0), mc, 1, &SolverConfig::default())
        .is_err());
    assert!(lab::low_snr_ratio(&template, &fading, &[0.0, -10.0], mc, 1).is_err());
}

#[test]
fn tightly_converged_joint_solution_is_stationary() {
    for (name, snr, rank) in [("fdpc-3x3-corr", 10.0, 3), ("fdpc-3x2-corr", 10.0, 1), ("fdpc-3x2-corr", -10.0, 3)] {
        let (spec, fading) = spec_from(name, snr);
        let bank = build_sample_bank(spec.dims(), &fading, &CsitModel::NoCsit, 1, 1500, 81).unwrap();
        let mut cfg = JointConfig::new(rank, SolverChoice::new(Algorithm::FixedPoint));
        cfg.outer_iters = 500;
        cfg.rate_gain_tol = 1e-9;
        let res = covopt::joint_optimize(&spec, &cfg, &bank).unwrap();
        let g = covopt::lagrangian_gradient_map(&spec, &res.t, res.w.matrix(), &bank.cells()[0].draws).unwrap();
        // least-squares multiplier
        let lambda = linalg::trace_re(&(res.t.adjoint() * &g)) / linalg::trace_re(&(res.t.adjoint() * &res.t));
        let resid = linalg::frobenius(&(res.t.scale(lambda) - &g)) / linalg::frobenius(&res.t);
        assert!(resid < 1e-4, "{name}@{snr} rank {rank}: {resid}");
    }
}
