use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::channel::Dimensions;
use crate::error::{FdpcError, Result};
use crate::linalg::{self, c, CMat, C64};

/// Separable receive/transmit correlation, stored with Hermitian square roots.
#[derive(Clone, Debug)]
pub struct Correlation {
    pub rx: CMat,
    pub tx: CMat,
    rx_sqrt: CMat,
    tx_sqrt: CMat,
}

/// Law of the `r x t` channel matrix.
#[derive(Clone, Debug)]
pub enum FadingModel {
    IidComplexGaussian,
    IidRealGaussian,
    CorrelatedRayleigh(Correlation),
    /// Entries `Unif[0,1] + j Unif[0,1]`.
    IidUniformComplex,
}

impl FadingModel {
    pub fn correlated(rx: CMat, tx: CMat) -> Result<Self> {
        for (name, m) in [("receive", &rx), ("transmit", &tx)] {
            if !m.is_square() {
                return Err(FdpcError::config(format!("{name} correlation must be square")));
            }
            if linalg::hermitian_defect(m) > 1e-12 {
                return Err(FdpcError::config(format!("{name} correlation is not Hermitian")));
            }
            if linalg::cholesky(m).is_none() {
                return Err(FdpcError::config(format!("{name} correlation is not positive definite")));
            }
        }
        let rx_sqrt = linalg::psd_sqrt(&rx);
        let tx_sqrt = linalg::psd_sqrt(&tx);
        Ok(FadingModel::CorrelatedRayleigh(Correlation { rx, tx, rx_sqrt, tx_sqrt }))
    }

    /// Exponential correlation profile `rho^|i-j|` on both sides.
    pub fn exponential(r: usize, t: usize, rho_rx: f64, rho_tx: f64) -> Result<Self> {
        let profile = |n: usize, rho: f64| CMat::from_fn(n, n, |i, j| c(rho.powi((i as i32 - j as i32).abs())));
        FadingModel::correlated(profile(r, rho_rx), profile(t, rho_tx))
    }

    pub fn validate(&self, dims: Dimensions) -> Result<()> {
        if let FadingModel::CorrelatedRayleigh(corr) = self {
            if corr.rx.nrows() != dims.r || corr.tx.nrows() != dims.t {
                return Err(FdpcError::config(format!(
                    "correlation sizes {}x{} / {}x{} do not match r={} t={}",
                    corr.rx.nrows(),
                    corr.rx.nrows(),
                    corr.tx.nrows(),
                    corr.tx.nrows(),
                    dims.r,
                    dims.t
                )));
            }
        }
        Ok(())
    }

    pub fn is_complex(&self) -> bool {
        !matches!(self, FadingModel::IidRealGaussian)
    }

    /// Standard deviation of each real component when the entries are
    /// i.i.d. zero-mean Gaussian, `None` otherwise.
    pub fn gaussian_component_std(&self) -> Option<f64> {
        match self {
            FadingModel::IidRealGaussian => Some(1.0),
            FadingModel::IidComplexGaussian => Some(std::f64::consts::FRAC_1_SQRT_2),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FadingModel::IidComplexGaussian => "iid_complex_gaussian",
            FadingModel::IidRealGaussian => "iid_real_gaussian",
            FadingModel::CorrelatedRayleigh(_) => "correlated_rayleigh",
            FadingModel::IidUniformComplex => "iid_uniform_complex",
        }
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One channel draw. Entries are generated in column-major order.
pub fn sample_h<R: Rng + ?Sized>(model: &FadingModel, dims: Dimensions, rng: &mut R) -> CMat {
    let (r, t) = (dims.r, dims.t);
    match model {
        FadingModel::IidRealGaussian => CMat::from_fn(r, t, |_, _| c(StandardNormal.sample(rng))),
        FadingModel::IidComplexGaussian => CMat::from_fn(r, t, |_, _| complex_normal(rng)),
        FadingModel::CorrelatedRayleigh(corr) => {
            let g = CMat::from_fn(r, t, |_, _| complex_normal(rng));
            &corr.rx_sqrt * g * &corr.tx_sqrt
        }
        FadingModel::IidUniformComplex => CMat::from_fn(r, t, |_, _| C64::new(rng.gen::<f64>(), rng.gen::<f64>())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DRAWS: usize = 100_000;

    fn moments(model: &FadingModel, dims: Dimensions) -> (CMat, CMat) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mean = CMat::zeros(dims.r, dims.t);
        let mut second = CMat::zeros(dims.r, dims.t);
        for _ in 0..DRAWS {
            let h = sample_h(model, dims, &mut rng);
            mean += &h;
            second += h.map(|z| c(z.norm_sqr()));
        }
        (mean.unscale(DRAWS as f64), second.unscale(DRAWS as f64))
    }

    #[test]
    fn real_gaussian_moments() {
        let dims = Dimensions::new(2, 2, 2).unwrap();
        let (mean, second) = moments(&FadingModel::IidRealGaussian, dims);
        for (mu, s) in mean.iter().zip(second.iter()) {
            assert!(mu.norm() < 0.02, "mean {mu}");
            assert_eq!(mu.im, 0.0);
            let var = s.re - mu.norm_sqr();
            assert!((0.95..=1.05).contains(&var), "variance {var}");
        }
    }

    #[test]
    fn identity_correlation_matches_iid_complex() {
        let dims = Dimensions::new(2, 2, 2).unwrap();
        let corr = FadingModel::correlated(linalg::identity(2), linalg::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cross = C64::new(0.0, 0.0);
        let mut var = [0.0; 4];
        for _ in 0..DRAWS {
            let h = sample_h(&corr, dims, &mut rng);
            cross += h[(0, 0)] * h[(1, 1)].conj();
            for (k, z) in h.iter().enumerate() {
                var[k] += z.norm_sqr();
            }
        }
        assert!((cross / DRAWS as f64).norm() < 0.02);
        for v in var {
            assert!((v / DRAWS as f64 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn uniform_entries_in_unit_square() {
        let dims = Dimensions::new(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let h = sample_h(&FadingModel::IidUniformComplex, dims, &mut rng);
            assert!(h.iter().all(|z| (0.0..=1.0).contains(&z.re) && (0.0..=1.0).contains(&z.im)));
        }
    }

    #[test]
    fn correlated_rejects_indefinite() {
        let bad = linalg::from_real(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(FadingModel::correlated(bad, linalg::identity(2)), Err(FdpcError::Config(_))));
    }

    #[test]
    fn correlated_size_mismatch_detected() {
        let f = FadingModel::exponential(2, 3, 0.5, 0.5).unwrap();
        assert!(f.validate(Dimensions::new(3, 2, 1).unwrap()).is_ok());
        assert!(f.validate(Dimensions::new(2, 2, 1).unwrap()).is_err());
    }
}
