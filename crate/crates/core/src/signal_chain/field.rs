use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AomConfig, OpticalPath};
use crate::error::{ensure, Error, Result};
use crate::noise_budget::LaserSource;

/// Independent random stream `stream` of the run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of sub-component `k` of a run, decorrelated by a SplitMix64 step.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Complex optical envelope: the field is `samples[k]·exp(i2π·frame_hz·t)`
/// at `t = t0 + k/fs`, with `|samples[k]|²` the instantaneous power [W].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub fs: f64,
    pub frame_hz: f64,
    pub t0: f64,
    /// One-sided relative intensity noise carried by this field [1/Hz].
    pub rin_lin: f64,
    pub samples: Vec<Complex64>,
}

impl Field {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Scales the field amplitude.
    pub fn scale(mut self, amplitude: f64) -> Self {
        for s in &mut self.samples {
            *s *= amplitude;
        }
        self
    }

    /// Moves the optical frequency by `df` without touching the envelope.
    pub fn shift_frame(mut self, df: f64) -> Self {
        self.frame_hz += df;
        self
    }

    /// Re-expresses the field in the frame `target_hz`. The offset must be
    /// representable at this sample rate.
    pub fn to_frame(mut self, target_hz: f64) -> Result<Self> {
        let df = self.frame_hz - target_hz;
        if df.abs() >= self.fs / 2.0 {
            return Err(Error::Aliasing { freq: df.abs(), fs: self.fs });
        }
        if df != 0.0 {
            let w = 2.0 * PI * df;
            for (k, s) in self.samples.iter_mut().enumerate() {
                let t = self.t0 + k as f64 / self.fs;
                *s *= Complex64::from_polar(1.0, w * t);
            }
        }
        self.frame_hz = target_hz;
        Ok(self)
    }
}

/// Laser field with a Wiener phase (Lorentzian line of FWHM Δν) and white
/// relative intensity noise at the source's RIN level.
pub fn synth_field(src: &LaserSource, fs: f64, n: usize, seed: u64) -> Result<Field> {
    src.validate()?;
    ensure(n >= 2, || format!("need at least 2 samples, got {n}"))?;
    ensure(fs > 0.0 && fs.is_finite(), || format!("sample rate must be positive, got {fs}"))?;
    let mut rng = rng_for(seed, 0);
    let sigma_phi = (2.0 * PI * src.linewidth_fwhm / fs).sqrt();
    let rin_lin = src.rin_linear();
    let sigma_rin = (rin_lin * fs / 2.0).sqrt();
    let mut phi = rng.random::<f64>() * 2.0 * PI;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let d: f64 = rng.sample(StandardNormal);
        let p = src.power * (1.0 + sigma_rin * d).max(0.0);
        samples.push(Complex64::from_polar(p.sqrt(), phi));
        phi += sigma_phi * z;
    }
    Ok(Field { fs, frame_hz: src.nu0, t0: 0.0, rin_lin, samples })
}

/// First-order AOM diffraction: frequency shift and efficiency loss; the
/// envelope, and with it the phase noise, is kept.
pub fn apply_aom(field: Field, aom: &AomConfig) -> Result<Field> {
    aom.validate()?;
    if aom.f_shift >= field.fs / 2.0 {
        return Err(Error::Aliasing { freq: aom.f_shift, fs: field.fs });
    }
    Ok(field.shift_frame(aom.f_shift).scale(aom.diffraction_efficiency.sqrt()))
}

/// Optical-density attenuation followed by the chopper, if any.
pub fn attenuate_and_chop(field: Field, path: &OpticalPath) -> Result<Field> {
    path.validate()?;
    let mut f = field.scale(path.attenuation().sqrt());
    if let Some(fc) = path.chopper_freq {
        for k in 0..f.len() {
            let phase = (f.time(k) * fc).fract();
            if phase >= path.chopper_duty {
                f.samples[k] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(f)
}
