use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::field::rng_for;
use super::AmplifierStage;
use crate::error::Result;
use crate::spectral::{Samples, TimeSeries};

/// Cascades the stages: each adds its input-referred white noise, then
/// applies its power gain. Returns a warning for every stage whose band does
/// not contain `beat_hz`.
pub fn amplify(
    x: &TimeSeries,
    amps: &[AmplifierStage],
    beat_hz: Option<f64>,
    seed: u64,
) -> Result<(TimeSeries, Vec<String>)> {
    x.validate()?;
    let mut warnings = Vec::new();
    let mut out = x.clone();
    for (k, stage) in amps.iter().enumerate() {
        stage.validate()?;
        if let Some(f) = beat_hz {
            if f < stage.band[0] || f > stage.band[1] {
                warnings.push(format!(
                    "beat at {f} Hz is outside amplifier stage {k} band [{}, {}] Hz",
                    stage.band[0], stage.band[1]
                ));
            }
        }
        let g = stage.power_gain().sqrt();
        let s = stage.input_noise_current * stage.input_noise_current;
        let mut rng = rng_for(seed, 30 + k as u64);
        match &mut out.samples {
            Samples::Real(d) => {
                let sigma = (s * x.fs / 2.0).sqrt();
                for v in d.iter_mut() {
                    let n = if sigma > 0.0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                    *v = (*v + n) * g;
                }
            }
            Samples::Iq { data, .. } => {
                let sigma = (s * x.fs).sqrt();
                for v in data.iter_mut() {
                    let n = if sigma > 0.0 {
                        sigma * Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    *v = (*v + n) * g;
                }
            }
        }
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{estimate_psd, find_peak};
    use std::f64::consts::PI;

    fn tone(fs: f64, n: usize, f: f64, a: f64) -> TimeSeries {
        TimeSeries::real(fs, (0..n).map(|k| a * (2.0 * PI * f * k as f64 / fs).cos()).collect()).unwrap()
    }

    #[test]
    fn methods_chain_gain() {
        let x = tone(1e9, 1 << 16, 100e6, 1e-6);
        let (y, w) = amplify(&x, &AmplifierStage::methods_chain(), Some(100e6), 1).unwrap();
        assert!(w.is_empty());
        let p0 = find_peak(&estimate_psd(&x, 1e6).unwrap(), 100e6, 2e6).unwrap().tone_power_dbm;
        let p1 = find_peak(&estimate_psd(&y, 1e6).unwrap(), 100e6, 2e6).unwrap().tone_power_dbm;
        assert!((p1 - p0 - 44.6).abs() < 0.1, "{}", p1 - p0);
    }

    #[test]
    fn empty_chain_is_identity() {
        let x = tone(1e6, 100, 1e5, 1.0);
        let (y, w) = amplify(&x, &[], Some(1e5), 1).unwrap();
        assert_eq!(x, y);
        assert!(w.is_empty());
    }

    #[test]
    fn noiseless_stages_preserve_snr() {
        let x = tone(1e6, 100, 1e5, 1.0);
        let stages = [AmplifierStage { gain_db: 13.0, input_noise_current: 0.0, band: [0.0, 1e6] }];
        let (y, _) = amplify(&x, &stages, None, 1).unwrap();
        let g = 10f64.powf(1.3).sqrt();
        match (&x.samples, &y.samples) {
            (Samples::Real(a), Samples::Real(b)) => {
                for (u, v) in a.iter().zip(b) {
                    assert!((v - g * u).abs() <= 1e-12 * g);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn out_of_band_warns() {
        let x = tone(1e6, 100, 1e5, 1.0);
        let (_, w) = amplify(&x, &AmplifierStage::methods_chain(), Some(30e6), 1).unwrap();
        assert_eq!(w.len(), 2);
    }
}
