//! Per-entry "equally spaced level" quantizer used for channel feedback.
//!
//! A `B`-bit quantizer has `2^B` reconstruction levels
//! `(k - (2^B - 1)/2) * step`, bin boundaries halfway between adjacent
//! levels, and unbounded outermost bins.

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::fading::FadingModel;
use crate::error::{FdpcError, Result};
use crate::linalg::{CMat, C64};

pub const MAX_BITS: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    bits: u32,
    step: f64,
    /// Whether imaginary parts are quantized as well.
    complex: bool,
}

impl Quantizer {
    pub fn new(bits: u32, step: f64, complex: bool) -> Result<Self> {
        if bits == 0 || bits > 30 {
            return Err(FdpcError::config(format!("quantizer bits {bits} out of range")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(FdpcError::config(format!("quantizer step {step} must be positive")));
        }
        Ok(Quantizer { bits, step, complex })
    }

    /// Quantizer matched to the component law of `fading`: the MSE-optimal
    /// unit-variance step scaled by the component standard deviation.
    pub fn designed_for(bits: u32, fading: &FadingModel) -> Result<Self> {
        let std = fading.gaussian_component_std().ok_or_else(|| {
            FdpcError::config(format!("quantized feedback requires i.i.d. Gaussian fading, got {}", fading.label()))
        })?;
        let step = design_uniform_quantizer(bits)? * std;
        Quantizer::new(bits, step, fading.is_complex())
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    pub fn n_levels(&self) -> usize {
        1usize << self.bits
    }

    pub fn level(&self, k: usize) -> f64 {
        (k as f64 - (self.n_levels() as f64 - 1.0) / 2.0) * self.step
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.n_levels()).map(|k| self.level(k)).collect()
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let n = self.n_levels();
        let k = (x / self.step + n as f64 / 2.0).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(n - 1)
        }
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.level(self.bin_of(x))
    }

    /// Half-open interval `[lo, hi)` of bin `k`; outer bins are unbounded.
    pub fn bin_interval(&self, k: usize) -> (f64, f64) {
        let n = self.n_levels();
        let half = n as f64 / 2.0;
        let lo = if k == 0 { f64::NEG_INFINITY } else { (k as f64 - half) * self.step };
        let hi = if k + 1 == n { f64::INFINITY } else { (k as f64 + 1.0 - half) * self.step };
        (lo, hi)
    }

    /// Bin index whose reconstruction level is `level`.
    pub fn bin_of_level(&self, level: f64) -> Option<usize> {
        let k = (level / self.step + (self.n_levels() as f64 - 1.0) / 2.0).round();
        if k < 0.0 || k >= self.n_levels() as f64 {
            return None;
        }
        let k = k as usize;
        ((self.level(k) - level).abs() <= 1e-9 * self.step).then_some(k)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Mean-squared error of the `bits`-bit quantizer with the given step on a
/// standard normal source, in closed form per bin.
pub fn gaussian_mse(bits: u32, step: f64) -> f64 {
    let q = Quantizer { bits, step, complex: false };
    let nd = std_normal();
    let phi = |x: f64| if x.is_finite() { nd.pdf(x) } else { 0.0 };
    let cdf = |x: f64| nd.cdf(x);
    let xphi = |x: f64| if x.is_finite() { x * nd.pdf(x) } else { 0.0 };
    (0..q.n_levels())
        .map(|k| {
            let (a, b) = q.bin_interval(k);
            let l = q.level(k);
            // \int_a^b (x - l)^2 phi(x) dx
            (cdf(b) - cdf(a)) * (1.0 + l * l) + xphi(a) - xphi(b) - 2.0 * l * (phi(a) - phi(b))
        })
        .sum()
}

/// MSE-optimal step of a `bits`-bit equally spaced quantizer for a standard
/// normal source, found by golden-section search.
pub fn design_uniform_quantizer(bits: u32) -> Result<f64> {
    if bits == 0 || bits > MAX_BITS {
        return Err(FdpcError::config(format!("quantizer bits must be in 1..={MAX_BITS}, got {bits}")));
    }
    let f = |s: f64| gaussian_mse(bits, s);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-3, 4.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-10 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    Ok(0.5 * (a + b))
}

/// Quantizes every real scalar of `h` (and imaginary parts for complex quantizers).
pub fn quantize_h(h: &CMat, q: &Quantizer) -> CMat {
    h.map(|z| {
        let im = if q.complex { q.quantize(z.im) } else { 0.0 };
        C64::new(q.quantize(z.re), im)
    })
}

/// Inverse-CDF draw from `N(0, sigma^2)` restricted to `[lo, hi)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(lo: f64, hi: f64, sigma: f64, rng: &mut R) -> f64 {
    let nd = std_normal();
    // draw on whichever side keeps the CDF values away from 1
    let flip = lo >= 0.0;
    let (a, b) = if flip { (-hi / sigma, -lo / sigma) } else { (lo / sigma, hi / sigma) };
    let (pa, pb) = (nd.cdf(a), nd.cdf(b));
    let u: f64 = rng.gen();
    let z = nd.inverse_cdf((pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    let z = z.clamp(a, b);
    let x = if flip { -z * sigma } else { z * sigma };
    if x >= hi {
        hi.next_down()
    } else if x < lo {
        lo
    } else {
        x
    }
}

/// Draws `H` from its prior truncated entrywise to the bins named by `hhat`.
pub fn sample_h_given_hhat<R: Rng + ?Sized>(
    hhat: &CMat,
    q: &Quantizer,
    fading: &FadingModel,
    rng: &mut R,
) -> Result<CMat> {
    let sigma = fading.gaussian_component_std().ok_or_else(|| {
        FdpcError::config(format!("conditional sampling requires i.i.d. Gaussian fading, got {}", fading.label()))
    })?;
    if q.complex != fading.is_complex() {
        return Err(FdpcError::config("quantizer field does not match the fading field"));
    }
    let bin = |level: f64| {
        q.bin_of_level(level)
            .map(|k| q.bin_interval(k))
            .ok_or_else(|| FdpcError::argument(format!("{level} is not a reconstruction level")))
    };
    let mut out = CMat::zeros(hhat.nrows(), hhat.ncols());
    // column-major, real part before imaginary part
    for (dst, z) in out.iter_mut().zip(hhat.iter()) {
        let (lo, hi) = bin(z.re)?;
        let re = sample_truncated_normal(lo, hi, sigma, rng);
        let im = if q.complex {
            let (lo, hi) = bin(z.im)?;
            sample_truncated_normal(lo, hi, sigma, rng)
        } else {
            0.0
        };
        *dst = C64::new(re, im);
    }
    Ok(out)
}
