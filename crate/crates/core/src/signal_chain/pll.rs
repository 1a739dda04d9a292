use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::field::rng_for;
use super::PllConfig;
use crate::error::{ensure, Result};
use crate::spectral::{analytic_signal, Samples, TimeSeries};

/// Residual beat-phase RMS above which the loop is reported unlocked [rad].
pub const LOCK_THRESHOLD_RAD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockReport {
    pub locked: bool,
    /// RMS of the wrapped beat phase against the clock after settling [rad].
    pub residual_rms_rad: f64,
    /// Mean beat frequency after settling [Hz].
    pub beat_hz: f64,
    pub settle_time_s: f64,
}

fn wrap(phi: f64) -> f64 {
    phi - 2.0 * PI * (phi / (2.0 * PI)).round()
}

/// Discrete PI loop acting on the wrapped phase error. The phase detector's
/// finite bandwidth is a one-pole low-pass on the error.
#[derive(Debug, Clone)]
pub struct PllLoop {
    dt: f64,
    kp: f64,
    ki: f64,
    alpha: f64,
    err_lp: f64,
    integral: f64,
    /// Phase correction applied to the LO [rad].
    pub theta: f64,
}

impl PllLoop {
    pub fn new(cfg: &PllConfig, rate: f64) -> Self {
        let f_c = cfg.ref_detector_bandwidth.min(rate / 4.0);
        let dt = 1.0 / rate;
        PllLoop {
            dt,
            kp: cfg.kp,
            ki: cfg.ki,
            alpha: 1.0 - (-2.0 * PI * f_c * dt).exp(),
            err_lp: 0.0,
            integral: 0.0,
            theta: 0.0,
        }
    }

    /// Advances one sample given the corrected beat phase against the clock.
    pub fn step(&mut self, psi: f64) {
        self.err_lp += self.alpha * (wrap(psi) - self.err_lp);
        self.integral += self.err_lp * self.dt;
        self.theta += 2.0 * PI * (self.kp * self.err_lp + self.ki * self.integral) * self.dt;
    }
}

fn settle_samples(cfg: &PllConfig, rate: f64, n: usize) -> usize {
    let loop_time = 20.0 / cfg.loop_bandwidth.max(1.0);
    ((loop_time * rate) as usize).max(n / 10).min(n / 2)
}

struct PhaseStats {
    sum_sq: f64,
    count: usize,
}

impl PhaseStats {
    fn push(&mut self, psi: f64) {
        let w = wrap(psi);
        self.sum_sq += w * w;
        self.count += 1;
    }

    fn rms(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.sum_sq / self.count as f64).sqrt()
    }
}

fn report(stats: &PhaseStats, f_clock: f64, drift: f64, duration: f64, settle_time_s: f64) -> LockReport {
    let rms = stats.rms();
    LockReport {
        locked: rms < LOCK_THRESHOLD_RAD,
        residual_rms_rad: rms,
        beat_hz: f_clock + drift / (2.0 * PI * duration),
        settle_time_s,
    }
}

/// Locks the beat in `beat_reference` to the clock. Returns the phase
/// correction to multiply onto the LO field, e^{iθ}, per sample.
pub fn run_pll(beat_reference: &TimeSeries, pll: &PllConfig) -> Result<(Vec<f64>, LockReport)> {
    pll.validate()?;
    beat_reference.validate()?;
    let fs = beat_reference.fs;
    let (z, center) = match &beat_reference.samples {
        Samples::Real(d) => (analytic_signal(d), 0.0),
        Samples::Iq { center_hz, data } => (data.clone(), *center_hz),
    };
    let n = z.len();
    let dphi: f64 = z.windows(2).map(|w| (w[1] * w[0].conj()).arg()).sum();
    let mean_beat = (center + dphi / (2.0 * PI * (n - 1) as f64) * fs).abs();
    ensure(mean_beat < pll.ref_detector_bandwidth, || {
        format!(
            "beat at {mean_beat} Hz is outside the reference detector bandwidth {} Hz",
            pll.ref_detector_bandwidth
        )
    })?;

    let mut lp = PllLoop::new(pll, fs);
    let w = 2.0 * PI * (center - pll.f_clock) / fs;
    let skip = settle_samples(pll, fs, n);
    let mut stats = PhaseStats { sum_sq: 0.0, count: 0 };
    let mut thetas = Vec::with_capacity(n);
    let (mut psi_prev, mut unwrapped) = (0.0, 0.0);
    for (k, zk) in z.iter().enumerate() {
        let mixed = zk * Complex64::from_polar(1.0, w * k as f64 - lp.theta);
        let psi = mixed.arg();
        thetas.push(lp.theta);
        if k >= skip {
            stats.push(psi);
            if k > skip {
                unwrapped += wrap(psi - psi_prev);
            }
            psi_prev = psi;
        }
        lp.step(psi);
    }
    let kept = (n - skip) as f64 / fs;
    Ok((thetas, report(&stats, pll.f_clock, unwrapped, kept, skip as f64 / fs)))
}

/// Normalised beat phasors of two independent lasers at `fs`, with the beat
/// phase integrated at `loop_rate` and, when `pll` has non-zero gains,
/// locked to its clock. The phasors are block averages of e^{iψ} and sit in a
/// frame rotating at `center`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn two_laser_phasors(
    pll: &PllConfig,
    linewidth_sum: f64,
    free_beat_hz: f64,
    center: f64,
    loop_rate: f64,
    fs: f64,
    n: usize,
    seed: u64,
) -> (Vec<Complex64>, LockReport) {
    let block = (loop_rate / fs).round().max(1.0) as usize;
    let rate = block as f64 * fs;
    let dt = 1.0 / rate;
    let mut rng = rng_for(seed, 20);
    let sigma = (2.0 * PI * linewidth_sum * dt).sqrt();
    let ramp = 2.0 * PI * (free_beat_hz - pll.f_clock) * dt;
    let rot = 2.0 * PI * (pll.f_clock - center) / fs;
    let mut lp = PllLoop::new(pll, rate);
    let total = n * block;
    let skip = settle_samples(pll, rate, total);
    let mut stats = PhaseStats { sum_sq: 0.0, count: 0 };
    let mut phi = rng.random::<f64>() * 2.0 * PI;
    let mut psi_at_skip = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut k = 0usize;
    for j in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for _ in 0..block {
            let psi = phi - lp.theta;
            let (s, c) = psi.sin_cos();
            acc += Complex64::new(c, s);
            if k == skip {
                psi_at_skip = psi;
            }
            if k >= skip {
                stats.push(psi);
            }
            lp.step(psi);
            phi += sigma * rng.sample::<f64, _>(StandardNormal) + ramp;
            k += 1;
        }
        out.push(acc / block as f64 * Complex64::from_polar(1.0, rot * j as f64));
    }
    let drift = (phi - lp.theta) - psi_at_skip;
    let kept = (total - skip) as f64 * dt;
    let rep = report(&stats, pll.f_clock, drift, kept, skip as f64 * dt);
    (out, rep)
}
