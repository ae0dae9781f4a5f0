//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "t": 3, "r": 2, "m": 2,
//!   "snr_db": 10.0, "q_over_p": 1.0, "n": 2.0,
//!   "field": "complex",
//!   "fading": { "variant": "iid_complex_gaussian" },
//!   "csit": { "variant": "quantized", "bits": 2 },
//!   "sigma_s": { "kind": "random", "rank": 2, "seed": 7 },
//!   "sigma_x": { "kind": "scaled_identity" },
//!   "mc": { "n_outer": 200, "n_inner": 20000, "seed": 1 }
//! }
//! ```
//!
//! Matrices are nested row arrays of reals, or `{"re": [[..]], "im": [[..]]}`.
//! Unknown fields are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{FdpcError, Result};
use crate::linalg::{CMat, C64};
use crate::model::{
    random_gaussian, ChannelTemplate, CovarianceSpec, CsitModel, Dimensions, FactorSpec, FadingModel, Field,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Real(Vec<Vec<f64>>),
    Complex { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMat> {
        let rows_of = |v: &Vec<Vec<f64>>| -> Result<(usize, usize)> {
            let rows = v.len();
            let cols = v.first().map_or(0, |r| r.len());
            if rows == 0 || cols == 0 || v.iter().any(|r| r.len() != cols) {
                return Err(FdpcError::config("matrix must be a non-empty rectangular array"));
            }
            Ok((rows, cols))
        };
        match self {
            MatrixJson::Real(v) => {
                let (rows, cols) = rows_of(v)?;
                Ok(CMat::from_fn(rows, cols, |i, j| C64::new(v[i][j], 0.0)))
            }
            MatrixJson::Complex { re, im } => {
                let shape = rows_of(re)?;
                if rows_of(im)? != shape {
                    return Err(FdpcError::config("real and imaginary parts differ in shape"));
                }
                Ok(CMat::from_fn(shape.0, shape.1, |i, j| C64::new(re[i][j], im[i][j])))
            }
        }
    }

    /// Real arrays when every imaginary part is zero, `{re, im}` otherwise.
    pub fn from_matrix(a: &CMat) -> Self {
        let part =
            |f: fn(&C64) -> f64| (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| f(&a[(i, j)])).collect()).collect();
        if a.iter().all(|z| z.im == 0.0) {
            MatrixJson::Real(part(|z| z.re))
        } else {
            MatrixJson::Complex { re: part(|z| z.re), im: part(|z| z.im) }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingVariant {
    IidComplexGaussian,
    IidRealGaussian,
    CorrelatedRayleigh,
    IidUniformComplex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationJson {
    /// "exponential" (`rho^|i-j|`), "matrix", "random" or "identity".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixJson>,
}

impl CorrelationJson {
    fn realize(&self, dim: usize) -> Result<CMat> {
        match self.kind.as_str() {
            "identity" => Ok(CMat::identity(dim, dim)),
            "exponential" => {
                let rho = self.rho.ok_or_else(|| FdpcError::config("exponential correlation needs rho"))?;
                if !(rho.abs() < 1.0) {
                    return Err(FdpcError::config("exponential correlation needs |rho| < 1"));
                }
                Ok(CMat::from_fn(dim, dim, |i, j| C64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)))
            }
            "matrix" => {
                self.matrix.as_ref().ok_or_else(|| FdpcError::config("matrix correlation needs matrix"))?.to_matrix()
            }
            "random" => {
                let seed = self.seed.ok_or_else(|| FdpcError::config("random correlation needs seed"))?;
                let g = random_gaussian(dim, dim, Field::Complex, seed);
                let a = &g * g.adjoint() + CMat::identity(dim, dim).scale(0.1);
                let tr = crate::linalg::trace_re(&a);
                Ok(a.scale(dim as f64 / tr))
            }
            other => Err(FdpcError::config(format!("unknown correlation kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingJson {
    pub variant: FadingVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx: Option<CorrelationJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx: Option<CorrelationJson>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsitVariant {
    Perfect,
    None,
    Quantized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsitJson {
    pub variant: CsitVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSJson {
    /// "zero", "scaled_identity", "random" or "matrix".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaXJson {
    /// "scaled_identity" or "factor".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McJson {
    pub n_outer: usize,
    pub n_inner: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_snr_db() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub t: usize,
    pub r: usize,
    pub m: usize,
    #[serde(default = "default_snr_db")]
    pub snr_db: f64,
    pub q_over_p: f64,
    /// Noise trace `N`; the noise covariance is `(N / r) I`.
    pub n: f64,
    pub field: Field,
    pub fading: FadingJson,
    pub csit: CsitJson,
    pub sigma_s: SigmaSJson,
    pub sigma_x: SigmaXJson,
    pub mc: McJson,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| FdpcError::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn dims(&self) -> Result<Dimensions> {
        Dimensions::new(self.t, self.r, self.m)
    }

    /// Checks every field by building the derived objects once.
    pub fn validate(&self) -> Result<()> {
        let template = self.template()?;
        let fading = self.fading_model()?;
        if self.field == Field::Real && fading.is_complex() {
            return Err(FdpcError::config("real field requires iid_real_gaussian fading"));
        }
        if self.field == Field::Complex && !fading.is_complex() {
            return Err(FdpcError::config("complex field requires complex-valued fading"));
        }
        self.csit_model(&fading)?;
        template.at_snr_db(self.snr_db)?;
        if self.mc.n_outer == 0 || self.mc.n_inner == 0 {
            return Err(FdpcError::config("mc sample counts must be positive"));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<ChannelTemplate> {
        let dims = self.dims()?;
        let sigma_s = match self.sigma_s.kind.as_str() {
            "zero" => CovarianceSpec::Zero,
            "scaled_identity" => CovarianceSpec::ScaledIdentity,
            "random" => CovarianceSpec::RandomPsd {
                rank: self.sigma_s.rank.ok_or_else(|| FdpcError::config("random sigma_s needs rank"))?,
                seed: self.sigma_s.seed.ok_or_else(|| FdpcError::config("random sigma_s needs seed"))?,
            },
            "matrix" => CovarianceSpec::Explicit(
                self.sigma_s.matrix.as_ref().ok_or_else(|| FdpcError::config("sigma_s matrix missing"))?.to_matrix()?,
            ),
            other => return Err(FdpcError::config(format!("unknown sigma_s kind {other:?}"))),
        };
        let sigma_x = match self.sigma_x.kind.as_str() {
            "scaled_identity" => FactorSpec::ScaledIdentity,
            "factor" => FactorSpec::Explicit(
                self.sigma_x.matrix.as_ref().ok_or_else(|| FdpcError::config("sigma_x factor missing"))?.to_matrix()?,
            ),
            other => return Err(FdpcError::config(format!("unknown sigma_x kind {other:?}"))),
        };
        if !(self.n > 0.0) || !self.n.is_finite() {
            return Err(FdpcError::config("noise trace n must be positive"));
        }
        Ok(ChannelTemplate { dims, field: self.field, noise_trace: self.n, q_over_p: self.q_over_p, sigma_s, sigma_x })
    }

    pub fn fading_model(&self) -> Result<FadingModel> {
        let model = match self.fading.variant {
            FadingVariant::IidComplexGaussian => FadingModel::IidComplexGaussian,
            FadingVariant::IidRealGaussian => FadingModel::IidRealGaussian,
            FadingVariant::IidUniformComplex => FadingModel::IidUniformComplex,
            FadingVariant::CorrelatedRayleigh => {
                let side = |c: &Option<CorrelationJson>, dim: usize, name: &str| -> Result<CMat> {
                    c.as_ref().ok_or_else(|| FdpcError::config(format!("correlated fading needs {name}")))?.realize(dim)
                };
                FadingModel::correlated(side(&self.fading.rx, self.r, "rx")?, side(&self.fading.tx, self.t, "tx")?)?
            }
        };
        model.validate(self.dims()?)?;
        Ok(model)
    }

    pub fn csit_model(&self, fading: &FadingModel) -> Result<CsitModel> {
        match self.csit.variant {
            CsitVariant::Perfect => Ok(CsitModel::Perfect),
            CsitVariant::None => Ok(CsitModel::NoCsit),
            CsitVariant::Quantized => {
                let bits = self.csit.bits.ok_or_else(|| FdpcError::config("quantized csit needs bits"))?;
                CsitModel::quantized(bits, fading)
            }
        }
    }
}
