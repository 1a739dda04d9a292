//! Spectrum-analyzer emulation: Welch PSD estimates calibrated to dBm into a
//! load impedance, and peak / linewidth readings.
//!
//! Records are either real photocurrents sampled at `fs`, or complex IQ
//! records down-converted around `center_hz`. IQ PSDs are scaled so that both
//! kinds report the one-sided current PSD of the underlying real signal: a
//! tone of RMS current `a` integrates to `a²` and white noise of one-sided PSD
//! `S` reads `S`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::units::watts_to_dbm;

/// Equivalent noise bandwidth of the periodic Hann window, in bins.
pub const HANN_ENBW: f64 = 1.5;

const SEGMENT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Real(Vec<f64>),
    Iq { center_hz: f64, data: Vec<Complex64> },
}

/// A sampled photocurrent [A].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub fs: f64,
    pub t0: f64,
    pub samples: Samples,
}

impl TimeSeries {
    pub fn real(fs: f64, data: Vec<f64>) -> Result<Self> {
        let ts = TimeSeries { fs, t0: 0.0, samples: Samples::Real(data) };
        ts.validate()?;
        Ok(ts)
    }

    pub fn iq(fs: f64, center_hz: f64, data: Vec<Complex64>) -> Result<Self> {
        let ts = TimeSeries { fs, t0: 0.0, samples: Samples::Iq { center_hz, data } };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.fs > 0.0 && self.fs.is_finite(), || {
            format!("sample rate must be positive, got {}", self.fs)
        })?;
        ensure(self.len() >= 2, || format!("need at least 2 samples, got {}", self.len()))?;
        let finite = match &self.samples {
            Samples::Real(d) => d.iter().all(|v| v.is_finite()),
            Samples::Iq { data, .. } => data.iter().all(|v| v.re.is_finite() && v.im.is_finite()),
        };
        ensure(finite, || "time series contains non-finite samples".into())
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Real(d) => d.len(),
            Samples::Iq { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// Mean power of the underlying real current [A²].
    pub fn mean_square(&self) -> f64 {
        let n = self.len() as f64;
        match &self.samples {
            Samples::Real(d) => d.iter().map(|v| v * v).sum::<f64>() / n,
            Samples::Iq { data, .. } => data.iter().map(|v| v.norm_sqr()).sum::<f64>() / n / 2.0,
        }
    }

    /// Smallest resolution bandwidth this record supports [Hz].
    pub fn min_rbw(&self) -> f64 {
        HANN_ENBW * self.fs / self.len() as f64
    }
}

/// PSD estimate with analyzer readout metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub freqs: Vec<f64>,
    /// One-sided current PSD [A²/Hz].
    pub psd: Vec<f64>,
    /// Effective resolution bandwidth, ENBW × bin spacing [Hz].
    pub rbw: f64,
    pub bin_width: f64,
    pub z_load: f64,
    pub g_amp: f64,
    pub segments: usize,
    /// Per-bin power, 10·log10(psd·rbw·Z·G / 1 mW); −∞ for empty bins.
    pub power_dbm: Vec<f64>,
}

impl SpectrumResult {
    /// Power in dBm of a PSD level read through this analyzer.
    pub fn psd_to_dbm(&self, psd: f64) -> f64 {
        watts_to_dbm(psd * self.rbw * self.z_load * self.g_amp)
    }

    /// Current PSD equivalent of an analyzer power density [dBm/Hz].
    pub fn dbm_per_hz_to_psd(&self, dbm_per_hz: f64) -> f64 {
        1e-3 * 10f64.powf(dbm_per_hz / 10.0) / (self.z_load * self.g_amp)
    }

    /// Sets the readout impedance and gain, refreshing `power_dbm`.
    pub fn with_readout(mut self, z_load: f64, g_amp: f64) -> Self {
        self.z_load = z_load;
        self.g_amp = g_amp;
        self.refresh_dbm();
        self
    }

    /// Adds a flat PSD level to every bin, as an instrument noise floor.
    pub fn add_floor(&mut self, psd: f64) {
        for p in &mut self.psd {
            *p += psd;
        }
        self.refresh_dbm();
    }

    fn refresh_dbm(&mut self) {
        self.power_dbm = self.psd.iter().map(|&p| self.psd_to_dbm(p)).collect();
    }

    /// Frequency integral of the PSD [A²].
    pub fn integrated_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width
    }

    /// CSV with a `#`-prefixed JSON header.
    pub fn to_csv(&self, seed: Option<u64>) -> String {
        let header = serde_json::json!({
            "rbw_Hz": self.rbw,
            "bin_width_Hz": self.bin_width,
            "z_load_Ohm": self.z_load,
            "g_amp": self.g_amp,
            "segments": self.segments,
            "seed": seed,
        });
        let mut out = format!("# {header}\nfreq_Hz,psd_A2_per_Hz,power_dBm\n");
        for ((f, p), d) in self.freqs.iter().zip(&self.psd).zip(&self.power_dbm) {
            out.push_str(&format!("{f:.6},{p:e},{d:.4}\n"));
        }
        out
    }
}

/// Welch estimate with a periodic Hann window and 50% overlap.
///
/// The segment length is the shortest one whose RBW does not exceed
/// `rbw_target`. Readout defaults to 50 Ω and unity gain.
pub fn estimate_psd(x: &TimeSeries, rbw_target: f64) -> Result<SpectrumResult> {
    x.validate()?;
    ensure(rbw_target > 0.0, || format!("RBW must be positive, got {rbw_target}"))?;
    let n_seg = (HANN_ENBW * x.fs / rbw_target).ceil() as usize;
    let n_seg = n_seg.max(2);
    if n_seg > x.len() {
        return Err(Error::RbwUnachievable { requested: rbw_target, minimum: x.min_rbw() });
    }
    let step = (n_seg / 2).max(1);
    let count = (x.len() - n_seg) / step + 1;
    let window: Vec<f64> = (0..n_seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_seg as f64).cos())
        .collect();
    let w_ss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(n_seg);

    let mut acc = vec![0.0; n_seg];
    let starts: Vec<usize> = (0..count).map(|k| k * step).collect();
    for batch in starts.chunks(SEGMENT_BATCH) {
        let periodograms: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|&s| segment_periodogram(x, s, &window, &fft))
            .collect();
        for p in periodograms {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
    }

    let bin_width = x.fs / n_seg as f64;
    let norm = 1.0 / (count as f64 * x.fs * w_ss);
    let (freqs, psd) = match &x.samples {
        Samples::Real(_) => {
            let half = n_seg / 2;
            let freqs = (0..=half).map(|k| k as f64 * bin_width).collect();
            let psd = (0..=half)
                .map(|k| {
                    let edge = k == 0 || (n_seg % 2 == 0 && k == half);
                    acc[k] * norm * if edge { 1.0 } else { 2.0 }
                })
                .collect();
            (freqs, psd)
        }
        Samples::Iq { center_hz, .. } => {
            // fftshift: negative frequencies first
            let neg = n_seg / 2;
            let order = (n_seg - neg..n_seg).chain(0..n_seg - neg);
            let mut freqs = Vec::with_capacity(n_seg);
            let mut psd = Vec::with_capacity(n_seg);
            for k in order {
                let signed = if k >= n_seg - neg { k as f64 - n_seg as f64 } else { k as f64 };
                freqs.push(center_hz + signed * bin_width);
                psd.push(acc[k] * norm / 2.0);
            }
            (freqs, psd)
        }
    };
    let mut out = SpectrumResult {
        freqs,
        psd,
        rbw: HANN_ENBW * bin_width,
        bin_width,
        z_load: 50.0,
        g_amp: 1.0,
        segments: count,
        power_dbm: vec![],
    };
    out.refresh_dbm();
    Ok(out)
}

fn segment_periodogram(
    x: &TimeSeries,
    start: usize,
    window: &[f64],
    fft: &Arc<dyn Fft<f64>>,
) -> Vec<f64> {
    let n = window.len();
    let mut buf: Vec<Complex64> = match &x.samples {
        Samples::Real(d) => d[start..start + n]
            .iter()
            .zip(window)
            .map(|(v, w)| Complex64::new(v * w, 0.0))
            .collect(),
        Samples::Iq { data, .. } => data[start..start + n]
            .iter()
            .zip(window)
            .map(|(v, w)| v * w)
            .collect(),
    };
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Reading of the strongest bin in a search window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakReading {
    pub f_peak: f64,
    /// Power of the peak bin [dBm].
    pub p_peak: f64,
    /// Median bin power away from the peak [dBm].
    pub noise_floor: f64,
    pub snr_db: f64,
    /// Floor-subtracted power integrated over the Hann main lobe [dBm].
    pub tone_power_dbm: f64,
}

pub fn find_peak(spec: &SpectrumResult, f_center: f64, half_window: f64) -> Result<PeakReading> {
    let (lo, hi) = (f_center - half_window, f_center + half_window);
    let in_window: Vec<usize> =
        (0..spec.freqs.len()).filter(|&i| spec.freqs[i] >= lo && spec.freqs[i] <= hi).collect();
    let Some(&k) = in_window
        .iter()
        .max_by(|&&a, &&b| spec.psd[a].total_cmp(&spec.psd[b]))
    else {
        return Err(Error::EmptyWindow { lo, hi });
    };
    let f_peak = spec.freqs[k];
    let floor_psd = noise_floor_psd(spec, f_peak);
    let lobe = k.saturating_sub(2)..(k + 3).min(spec.psd.len());
    let tone: f64 = spec.psd[lobe]
        .iter()
        .map(|p| (p - floor_psd).max(0.0))
        .sum::<f64>()
        * spec.bin_width;
    let p_peak = spec.power_dbm[k];
    let noise_floor = spec.psd_to_dbm(floor_psd);
    Ok(PeakReading {
        f_peak,
        p_peak,
        noise_floor,
        snr_db: p_peak - noise_floor,
        tone_power_dbm: watts_to_dbm(tone * spec.z_load * spec.g_amp),
    })
}

/// Median PSD over bins farther than 3·RBW from `f_peak`, skipping DC.
pub fn noise_floor_psd(spec: &SpectrumResult, f_peak: f64) -> f64 {
    let guard = 3.0 * spec.rbw;
    let mut vals: Vec<f64> = spec
        .freqs
        .iter()
        .zip(&spec.psd)
        .filter(|(f, _)| (**f - f_peak).abs() > guard && **f != 0.0)
        .map(|(_, p)| *p)
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len() / 2;
    if vals.len() % 2 == 1 {
        vals[m]
    } else {
        0.5 * (vals[m - 1] + vals[m])
    }
}

/// Full width at half maximum of the strongest feature in a window [Hz].
pub fn estimate_fwhm(spec: &SpectrumResult, f_center: f64, half_window: f64) -> Result<f64> {
    let (lo, hi) = (f_center - half_window, f_center + half_window);
    let idx: Vec<usize> =
        (0..spec.freqs.len()).filter(|&i| spec.freqs[i] >= lo && spec.freqs[i] <= hi).collect();
    let (first, last) = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptyWindow { lo, hi }),
    };
    let k = (first..=last).max_by(|&a, &b| spec.psd[a].total_cmp(&spec.psd[b])).unwrap();
    let half = spec.psd[k] / 2.0;
    let crossing = |i_in: usize, i_out: usize| {
        let (p_in, p_out) = (spec.psd[i_in], spec.psd[i_out]);
        let frac = (p_in - half) / (p_in - p_out);
        spec.freqs[i_in] + frac * (spec.freqs[i_out] - spec.freqs[i_in])
    };
    let mut l = k;
    while l > first && spec.psd[l - 1] > half {
        l -= 1;
    }
    let left = if l > first { crossing(l, l - 1) } else { spec.freqs[first] };
    let mut r = k;
    while r < last && spec.psd[r + 1] > half {
        r += 1;
    }
    let right = if r < last { crossing(r, r + 1) } else { spec.freqs[last] };
    Ok(right - left)
}

/// Analytic signal x + i·H[x] of a real record.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return vec![];
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= w / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}
