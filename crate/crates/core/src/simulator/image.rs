//! Per-image operations: CTF, noise, masking/standardization and the
//! multi-cutoff blur bank.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fourier::{filter2, Plans};
use crate::scalar::{c, cu, Real};

/// Microscope parameters. Defocus in Å, Cs in mm, voltage in kV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfParams {
    pub defocus: f64,
    pub spherical_aberration: f64,
    pub voltage: f64,
    pub amplitude_contrast: f64,
    /// Apply `|h|` instead of `h`, i.e. the CTF followed by phase flipping.
    pub phase_flip: bool,
}

impl CtfParams {
    pub fn new(defocus: f64) -> Self {
        Self {
            defocus,
            spherical_aberration: 2.7,
            voltage: 300.0,
            amplitude_contrast: 0.1,
            phase_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.defocus >= 0.0 && self.voltage > 0.0) {
            return Err(invalid("CTF needs defocus >= 0 and voltage > 0"));
        }
        if !(0.0..=1.0).contains(&self.amplitude_contrast) || !(self.spherical_aberration >= 0.0) {
            return Err(invalid("CTF amplitude contrast must lie in [0, 1] and Cs >= 0"));
        }
        Ok(())
    }

    /// Relativistic electron wavelength in Å.
    pub fn wavelength(&self) -> f64 {
        let v = self.voltage * 1e3;
        12.264_259 / (v * (1.0 + 0.978_466e-6 * v)).sqrt()
    }

    /// Phase argument `πλΔz f² − (π/2) λ³ Cs f⁴ + asin(ac)` at spatial
    /// frequency `f` (1/Å).
    pub fn phase(&self, f: f64) -> f64 {
        let lambda = self.wavelength();
        let cs = self.spherical_aberration * 1e7;
        let f2 = f * f;
        std::f64::consts::PI * lambda * self.defocus * f2
            - std::f64::consts::FRAC_PI_2 * lambda.powi(3) * cs * f2 * f2
            + self.amplitude_contrast.asin()
    }

    /// `h(f) = −sin(phase(f))`.
    pub fn transfer(&self, f: f64) -> f64 {
        let h = -self.phase(f).sin();
        if self.phase_flip {
            h.abs()
        } else {
            h
        }
    }
}

/// Multiplies the image spectrum by the CTF. Returns the filtered image and
/// the largest imaginary residual of the inverse transform.
pub fn ctf_apply_with_residual<T: Real>(
    plans: &Plans<T>,
    img: &[T],
    pixel_size: f64,
    ctf: &CtfParams,
) -> Result<(Vec<T>, T)> {
    ctf.validate()?;
    let d = plans.n;
    if img.len() != d * d {
        return Err(invalid("image size does not match FFT plan"));
    }
    Ok(filter2(plans, img, |fx, fy| {
        let f = (fx * fx + fy * fy).sqrt().to_f64().unwrap() / pixel_size;
        c(ctf.transfer(f))
    }))
}

pub fn ctf_apply<T: Real>(plans: &Plans<T>, img: &[T], pixel_size: f64, ctf: &CtfParams) -> Result<Vec<T>> {
    Ok(ctf_apply_with_residual(plans, img, pixel_size, ctf)?.0)
}

/// Pixels with `(x − d/2)² + (y − d/2)² < (d/2)²`.
pub fn circular_mask(d: usize) -> Vec<bool> {
    let h = (d / 2) as f64;
    let r2 = h * h;
    (0..d * d)
        .map(|k| {
            let (x, y) = ((k % d) as f64 - h, (k / d) as f64 - h);
            x * x + y * y < r2
        })
        .collect()
}

/// Mean and population variance over masked pixels.
pub fn masked_moments<T: Real>(img: &[T], mask: &[bool]) -> (T, T) {
    let (mut n, mut s) = (0usize, T::zero());
    for (v, &m) in img.iter().zip(mask) {
        if m {
            s += *v;
            n += 1;
        }
    }
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let mean = s / cu(n);
    let var = img
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| (*v - mean) * (*v - mean))
        .sum::<T>()
        / cu(n);
    (mean, var)
}

/// Adds `N(0, σ²)` to every pixel with `σ² = var_mask(img) / snr`.
/// An infinite `snr` returns the image unchanged. Returns the image and `σ²`.
pub fn add_noise_to_snr<T: Real>(img: &[T], d: usize, snr: f64, seed: u64) -> Result<(Vec<T>, f64)> {
    if snr.is_infinite() && snr > 0.0 {
        return Ok((img.to_vec(), 0.0));
    }
    if !(snr > 0.0) {
        return Err(invalid(format!("snr {snr} must be positive")));
    }
    let (_, var) = masked_moments(img, &circular_mask(d));
    let var = var.to_f64().unwrap();
    if !(var > 0.0) {
        return Err(invalid("signal has zero variance inside the mask"));
    }
    let sigma2 = var / snr;
    let sigma = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = img
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + c(sigma * z)
        })
        .collect();
    Ok((out, sigma2))
}

/// Circular mask of radius `d/2`, then standardization of the masked pixels
/// to zero mean and unit variance. Pixels outside the mask are exactly 0.
pub fn preprocess<T: Real>(img: &[T], d: usize) -> Result<Vec<T>> {
    if img.len() != d * d {
        return Err(invalid("image is not d × d"));
    }
    let mask = circular_mask(d);
    let (mean, var) = masked_moments(img, &mask);
    if !(var > c(1e-24)) {
        return Err(invalid("image is constant inside the mask"));
    }
    let sd = var.sqrt();
    Ok(img
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { (v - mean) / sd } else { T::zero() })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlurMode {
    None,
    Gaussian,
    #[default]
    LowPass,
}

impl std::str::FromStr for BlurMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "gaussian" => Ok(Self::Gaussian),
            "lowpass" | "low-pass" => Ok(Self::LowPass),
            other => Err(invalid(format!("unknown blur mode {other}"))),
        }
    }
}

/// Default cutoffs as fractions of Nyquist.
pub const CUTOFF_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.35, 0.5];

/// Cutoff fractions for `n` filters: the default five for `n = 5`, otherwise
/// log-spaced over the same range.
pub fn cutoff_fractions(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.2],
        5 => CUTOFF_FRACTIONS.to_vec(),
        _ => (0..n)
            .map(|k| 0.05 * 10f64.powf(k as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Ideal radial low-pass keeping `|f| ≤ fraction · Nyquist`.
pub fn lowpass<T: Real>(plans: &Plans<T>, img: &[T], fraction: f64) -> Vec<T> {
    let cut = c::<T>(0.5 * fraction);
    let cut2 = cut * cut;
    filter2(plans, img, |fx, fy| if fx * fx + fy * fy <= cut2 { T::one() } else { T::zero() }).0
}

/// Gaussian blur whose frequency response has standard deviation
/// `fraction · Nyquist`; the real-space kernel σ is `1 / (2π · 0.5 · fraction)` pixels.
pub fn gaussian_blur<T: Real>(plans: &Plans<T>, img: &[T], fraction: f64) -> Vec<T> {
    let s = 0.5 * fraction;
    let k = c::<T>(-0.5 / (s * s));
    filter2(plans, img, |fx, fy| (k * (fx * fx + fy * fy)).exp()).0
}

/// Channel-major stack `[input, filtered₁, …, filteredₙ]`, each `d × d`.
///
/// Low-pass channels follow increasing cutoff; Gaussian channels follow
/// increasing kernel width.
pub fn blur_bank<T: Real>(plans: &Plans<T>, img: &[T], mode: BlurMode, n_filters: usize) -> Vec<T> {
    let mut out = img.to_vec();
    match mode {
        BlurMode::None => {}
        BlurMode::LowPass => {
            for f in cutoff_fractions(n_filters) {
                out.extend(lowpass(plans, img, f));
            }
        }
        BlurMode::Gaussian => {
            for f in cutoff_fractions(n_filters).into_iter().rev() {
                out.extend(gaussian_blur(plans, img, f));
            }
        }
    }
    out
}

/// Number of channels [`blur_bank`] produces.
pub fn bank_depth(mode: BlurMode, n_filters: usize) -> usize {
    match mode {
        BlurMode::None => 1,
        _ => 1 + n_filters,
    }
}
