//! Fixed, seeded collections of fading draws shared by every candidate
//! evaluation (common random numbers).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::channel::Dimensions;
use super::fading::{sample_h, FadingModel};
use super::quantizer::{quantize_h, sample_h_given_hhat, Quantizer};
use crate::error::{FdpcError, Result};
use crate::linalg::CMat;

/// Transmitter channel knowledge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CsitModel {
    Perfect,
    NoCsit,
    Quantized(Quantizer),
}

impl CsitModel {
    pub fn quantized(bits: u32, fading: &FadingModel) -> Result<Self> {
        Ok(CsitModel::Quantized(Quantizer::designed_for(bits, fading)?))
    }

    pub fn label(&self) -> String {
        match self {
            CsitModel::Perfect => "perfect".to_string(),
            CsitModel::NoCsit => "none".to_string(),
            CsitModel::Quantized(q) => format!("B={}", q.bits()),
        }
    }
}

/// One transmitter-side observation and the channel draws consistent with it.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterCell {
    /// `None` when the transmitter observes nothing.
    pub hhat: Option<CMat>,
    pub draws: Vec<CMat>,
}

impl OuterCell {
    /// Sample mean of the inner draws, the estimate of `E[H | Hhat]`.
    pub fn mean_h(&self) -> CMat {
        let mut acc = CMat::zeros(self.draws[0].nrows(), self.draws[0].ncols());
        for h in &self.draws {
            acc += h;
        }
        acc.unscale(self.draws.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBank {
    cells: Vec<OuterCell>,
    csit: CsitModel,
    seed: u64,
    n_outer: usize,
    n_inner: usize,
}

impl SampleBank {
    pub fn cells(&self) -> &[OuterCell] {
        &self.cells
    }

    pub fn csit(&self) -> &CsitModel {
        &self.csit
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_outer(&self) -> usize {
        self.n_outer
    }

    pub fn n_inner(&self) -> usize {
        self.n_inner
    }

    pub fn is_perfect(&self) -> bool {
        matches!(self.csit, CsitModel::Perfect)
    }

    /// Little-endian dump of every stored scalar, for bytewise comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.cells.len() as u64).to_le_bytes());
        let push = |m: &CMat, out: &mut Vec<u8>| {
            for z in m.iter() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        };
        for cell in &self.cells {
            match &cell.hhat {
                Some(h) => {
                    out.push(1);
                    push(h, &mut out);
                }
                None => out.push(0),
            }
            out.extend_from_slice(&(cell.draws.len() as u64).to_le_bytes());
            for h in &cell.draws {
                push(h, &mut out);
            }
        }
        out
    }
}

const OUTER_DRAW: u64 = u64::MAX;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the `(cell, draw)` coordinate of a bank.
pub fn sample_rng(seed: u64, cell: u64, draw: u64) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix(&mut state);
    let mut state = a ^ cell.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let b = splitmix(&mut state);
    let mut state = b ^ draw.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Builds the bank. `NoCsit` yields one cell of `n_inner` unconditional
/// draws; `Perfect` yields `n_outer` cells of a single draw with `H = Hhat`.
pub fn build_sample_bank(
    dims: Dimensions,
    fading: &FadingModel,
    csit: &CsitModel,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<SampleBank> {
    if n_outer == 0 || n_inner == 0 {
        return Err(FdpcError::config("sample counts must be at least 1"));
    }
    fading.validate(dims)?;
    let cells: Vec<OuterCell> = match csit {
        CsitModel::NoCsit => {
            let draws = (0..n_inner as u64)
                .into_par_iter()
                .map(|i| sample_h(fading, dims, &mut sample_rng(seed, 0, i)))
                .collect();
            vec![OuterCell { hhat: None, draws }]
        }
        CsitModel::Perfect => (0..n_outer as u64)
            .into_par_iter()
            .map(|c| {
                let h = sample_h(fading, dims, &mut sample_rng(seed, c, OUTER_DRAW));
                OuterCell { hhat: Some(h.clone()), draws: vec![h] }
            })
            .collect(),
        CsitModel::Quantized(q) => {
            if fading.gaussian_component_std().is_none() {
                return Err(FdpcError::config(format!(
                    "quantized feedback requires i.i.d. Gaussian fading, got {}",
                    fading.label()
                )));
            }
            (0..n_outer as u64)
                .into_par_iter()
                .map(|c| {
                    let truth = sample_h(fading, dims, &mut sample_rng(seed, c, OUTER_DRAW));
                    let hhat = quantize_h(&truth, q);
                    let draws = (0..n_inner as u64)
                        .map(|i| sample_h_given_hhat(&hhat, q, fading, &mut sample_rng(seed, c, i)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(OuterCell { hhat: Some(hhat), draws })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let (n_outer, n_inner) = match csit {
        CsitModel::NoCsit => (1, n_inner),
        CsitModel::Perfect => (n_outer, 1),
        CsitModel::Quantized(_) => (n_outer, n_inner),
    };
    Ok(SampleBank { cells, csit: *csit, seed, n_outer, n_inner })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dimensions {
        Dimensions::new(2, 2, 1).unwrap()
    }

    #[test]
    fn same_seed_same_bytes() {
        let csit = CsitModel::quantized(2, &FadingModel::IidRealGaussian).unwrap();
        let a = build_sample_bank(dims(), &FadingModel::IidRealGaussian, &csit, 20, 30, 5).unwrap();
        let b = build_sample_bank(dims(), &FadingModel::IidRealGaussian, &csit, 20, 30, 5).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = build_sample_bank(dims(), &FadingModel::IidRealGaussian, &csit, 20, 30, 6).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn no_csit_structure() {
        let bank = build_sample_bank(dims(), &FadingModel::IidComplexGaussian, &CsitModel::NoCsit, 7, 1000, 1).unwrap();
        assert_eq!(bank.cells().len(), 1);
        assert_eq!(bank.cells()[0].draws.len(), 1000);
        assert!(bank.cells()[0].hhat.is_none());
    }

    #[test]
    fn perfect_structure() {
        let bank = build_sample_bank(dims(), &FadingModel::IidComplexGaussian, &CsitModel::Perfect, 500, 9, 1).unwrap();
        assert_eq!(bank.cells().len(), 500);
        for cell in bank.cells() {
            assert_eq!(cell.draws.len(), 1);
            assert_eq!(cell.hhat.as_ref(), Some(&cell.draws[0]));
        }
    }

    #[test]
    fn quantized_draws_reproduce_hhat() {
        let csit = CsitModel::quantized(2, &FadingModel::IidComplexGaussian).unwrap();
        let CsitModel::Quantized(q) = csit else { unreachable!() };
        let bank = build_sample_bank(dims(), &FadingModel::IidComplexGaussian, &csit, 10, 50, 2).unwrap();
        for cell in bank.cells() {
            let hhat = cell.hhat.as_ref().unwrap();
            for h in &cell.draws {
                assert_eq!(&quantize_h(h, &q), hhat);
            }
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(build_sample_bank(dims(), &FadingModel::IidRealGaussian, &CsitModel::NoCsit, 1, 0, 1).is_err());
    }

    #[test]
    fn quantized_uniform_rejected() {
        let q = Quantizer::new(1, 1.0, true).unwrap();
        let r = build_sample_bank(dims(), &FadingModel::IidUniformComplex, &CsitModel::Quantized(q), 2, 2, 1);
        assert!(matches!(r, Err(FdpcError::Config(_))));
    }
}
