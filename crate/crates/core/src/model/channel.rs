use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FdpcError, Result};
use crate::linalg::{self, c, CMat, C64};

/// Tolerated negative eigenvalue of a p.s.d. input, relative to its largest.
pub const PSD_CLIP_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    pub fn is_complex(self) -> bool {
        matches!(self, Field::Complex)
    }
}

/// Antenna counts and the rank bound of the input covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    pub t: usize,
    pub r: usize,
    pub m: usize,
}

impl Dimensions {
    pub fn new(t: usize, r: usize, m: usize) -> Result<Self> {
        if t == 0 || r == 0 || m == 0 {
            return Err(FdpcError::config(format!("dimensions must be positive (t={t}, r={r}, m={m})")));
        }
        if m > t {
            return Err(FdpcError::config(format!("rank bound m={m} exceeds t={t}")));
        }
        Ok(Dimensions { t, r, m })
    }
}

/// One channel instance: input factor `T` (with `Sigma_X = T T*`), the
/// interference and noise covariances, and the power budgets.
#[derive(Clone, Debug)]
pub struct ChannelSpec {
    dims: Dimensions,
    field: Field,
    t_factor: CMat,
    sigma_s: CMat,
    sigma_z: CMat,
    power: f64,
    interference: f64,
    noise: f64,
}

impl ChannelSpec {
    pub fn new(
        dims: Dimensions,
        field: Field,
        t_factor: CMat,
        sigma_s: CMat,
        sigma_z: CMat,
        power: f64,
    ) -> Result<Self> {
        let Dimensions { t, r, m } = dims;
        if t_factor.shape() != (t, m) {
            return Err(FdpcError::config(format!("input factor must be {t}x{m}, got {:?}", t_factor.shape())));
        }
        if sigma_s.shape() != (t, t) {
            return Err(FdpcError::config(format!("interference covariance must be {t}x{t}")));
        }
        if sigma_z.shape() != (r, r) {
            return Err(FdpcError::config(format!("noise covariance must be {r}x{r}")));
        }
        if !(power >= 0.0) || !power.is_finite() {
            return Err(FdpcError::config("power budget must be a finite nonnegative number"));
        }
        let all_finite =
            t_factor.iter().chain(sigma_s.iter()).chain(sigma_z.iter()).all(|z| z.re.is_finite() && z.im.is_finite());
        if !all_finite {
            return Err(FdpcError::config("matrix inputs must be finite"));
        }
        if field == Field::Real {
            let imag =
                linalg::max_abs_imag(&t_factor).max(linalg::max_abs_imag(&sigma_s)).max(linalg::max_abs_imag(&sigma_z));
            if imag > 0.0 {
                return Err(FdpcError::config("real-field spec carries imaginary entries"));
            }
        }
        let sigma_s = validate_psd("interference covariance", sigma_s)?;
        let sigma_z = validate_psd("noise covariance", sigma_z)?;
        if linalg::cholesky(&sigma_z).is_none() {
            return Err(FdpcError::config("noise covariance must be positive definite"));
        }
        let tx_power = linalg::trace_re(&(&t_factor * t_factor.adjoint()));
        if tx_power > power * (1.0 + 1e-9) + f64::MIN_POSITIVE {
            return Err(FdpcError::config(format!("trace of T T* = {tx_power} exceeds the power budget {power}")));
        }
        let interference = linalg::trace_re(&sigma_s);
        let noise = linalg::trace_re(&sigma_z);
        Ok(ChannelSpec { dims, field, t_factor, sigma_s, sigma_z, power, interference, noise })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn t_factor(&self) -> &CMat {
        &self.t_factor
    }

    pub fn sigma_s(&self) -> &CMat {
        &self.sigma_s
    }

    pub fn sigma_z(&self) -> &CMat {
        &self.sigma_z
    }

    pub fn sigma_x(&self) -> CMat {
        &self.t_factor * self.t_factor.adjoint()
    }

    /// P
    pub fn power(&self) -> f64 {
        self.power
    }

    /// Q = tr(Sigma_S)
    pub fn interference(&self) -> f64 {
        self.interference
    }

    /// N = tr(Sigma_Z)
    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn snr(&self) -> f64 {
        self.power / self.noise
    }

    /// Same channel with a different input factor (same power budget).
    pub fn with_factor(&self, t_factor: CMat) -> Result<Self> {
        ChannelSpec::new(self.dims, self.field, t_factor, self.sigma_s.clone(), self.sigma_z.clone(), self.power)
    }

    /// Numerical rank of `Sigma_X + Sigma_S`.
    pub fn rank_sum(&self, rel_tol: f64) -> usize {
        linalg::numerical_rank(&(self.sigma_x() + &self.sigma_s), rel_tol)
    }

    pub fn has_interference(&self) -> bool {
        self.interference > 0.0
    }
}

fn validate_psd(name: &str, a: CMat) -> Result<CMat> {
    let scale = a.iter().fold(0.0_f64, |m, z| m.max(z.norm())).max(1.0);
    if linalg::hermitian_defect(&a) > HERMITIAN_TOL * scale {
        return Err(FdpcError::config(format!("{name} is not Hermitian")));
    }
    let a = linalg::hermitian_part(&a);
    let (values, vectors) = linalg::herm_eig(&a);
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    let lowest = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if lowest >= 0.0 {
        return Ok(a);
    }
    if lowest < -PSD_CLIP_TOL * top.max(f64::MIN_POSITIVE) {
        return Err(FdpcError::config(format!("{name} has negative eigenvalue {lowest}")));
    }
    let clipped =
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(values.len(), values.iter().map(|&v| c(v.max(0.0)))));
    Ok(&vectors * clipped * vectors.adjoint())
}

/// How an interference covariance is specified before it is scaled to its trace.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceSpec {
    Zero,
    ScaledIdentity,
    Explicit(CMat),
    /// `G G*` with `G` a seeded Gaussian matrix of width `rank`.
    RandomPsd {
        rank: usize,
        seed: u64,
    },
}

impl CovarianceSpec {
    /// Realizes a `dim x dim` covariance with trace `trace`.
    pub fn realize(&self, dim: usize, trace: f64, field: Field) -> Result<CMat> {
        if trace == 0.0 {
            return Ok(CMat::zeros(dim, dim));
        }
        let shape = match self {
            CovarianceSpec::Zero => return Ok(CMat::zeros(dim, dim)),
            CovarianceSpec::ScaledIdentity => linalg::identity(dim),
            CovarianceSpec::Explicit(a) => {
                if a.shape() != (dim, dim) {
                    return Err(FdpcError::config(format!("covariance matrix must be {dim}x{dim}")));
                }
                a.clone()
            }
            CovarianceSpec::RandomPsd { rank, seed } => {
                if *rank == 0 || *rank > dim {
                    return Err(FdpcError::config(format!("random covariance rank {rank} outside 1..={dim}")));
                }
                let g = random_gaussian(dim, *rank, field, *seed);
                &g * g.adjoint()
            }
        };
        let tr = linalg::trace_re(&shape);
        if !(tr > 0.0) {
            return Err(FdpcError::config("covariance shape has nonpositive trace"));
        }
        Ok(shape.scale(trace / tr))
    }
}

/// Seeded Gaussian matrix with unit-variance entries in the given field.
pub fn random_gaussian(rows: usize, cols: usize, field: Field, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMat::from_fn(rows, cols, |_, _| match field {
        Field::Real => c(StandardNormal.sample(&mut rng)),
        Field::Complex => {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }
    })
}

/// How the input factor `T` is specified before it is scaled to power `P`.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorSpec {
    /// `sqrt(P/m)` times the first `m` columns of the identity.
    ScaledIdentity,
    Explicit(CMat),
}

impl FactorSpec {
    pub fn realize(&self, dims: Dimensions, power: f64) -> Result<CMat> {
        match self {
            FactorSpec::ScaledIdentity => {
                let mut t = CMat::zeros(dims.t, dims.m);
                let v = (power / dims.m as f64).sqrt();
                for i in 0..dims.m {
                    t[(i, i)] = c(v);
                }
                Ok(t)
            }
            FactorSpec::Explicit(f) => {
                if f.shape() != (dims.t, dims.m) {
                    return Err(FdpcError::config(format!(
                        "input factor must be {}x{}, got {:?}",
                        dims.t,
                        dims.m,
                        f.shape()
                    )));
                }
                let tr = linalg::trace_re(&(f * f.adjoint()));
                if !(tr > 0.0) {
                    return Err(FdpcError::config("input factor is zero"));
                }
                Ok(f.scale((power / tr).sqrt()))
            }
        }
    }
}

/// A channel family parameterized by SNR with `Q/P` held fixed.
#[derive(Clone, Debug)]
pub struct ChannelTemplate {
    pub dims: Dimensions,
    pub field: Field,
    pub noise_trace: f64,
    pub q_over_p: f64,
    pub sigma_s: CovarianceSpec,
    pub sigma_x: FactorSpec,
}

impl ChannelTemplate {
    pub fn power_at(&self, snr_db: f64) -> f64 {
        self.noise_trace * 10f64.powf(snr_db / 10.0)
    }

    pub fn at_snr_db(&self, snr_db: f64) -> Result<ChannelSpec> {
        if !(self.noise_trace > 0.0) {
            return Err(FdpcError::config("noise trace must be positive"));
        }
        if !(self.q_over_p >= 0.0) || !self.q_over_p.is_finite() {
            return Err(FdpcError::config("q_over_p must be finite and nonnegative"));
        }
        if !snr_db.is_finite() {
            return Err(FdpcError::config("snr_db must be finite"));
        }
        let power = self.power_at(snr_db);
        let t = self.sigma_x.realize(self.dims, power)?;
        let sigma_s = self.sigma_s.realize(self.dims.t, self.q_over_p * power, self.field)?;
        let sigma_z = linalg::identity(self.dims.r).scale(self.noise_trace / self.dims.r as f64);
        ChannelSpec::new(self.dims, self.field, t, sigma_s, sigma_z, power)
    }
}
