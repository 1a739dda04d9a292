//! Analytic heterodyne signal, noise, SNR and NEP as functions of LO power.
//!
//! Conventions: `i_het = 2·R·sqrt(P_LO·P_S)` is the RMS beat current and the
//! SNR is the current ratio `i_het / i_n`; the power ratio is its square.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{detector_noise_psd, DetectorModel, NoiseBreakdown, CODATA};
use crate::error::{ensure, Result};
use crate::units::watts_to_dbm;

/// An optical source, described by the quantities that enter the noise budget
/// and the time-domain field model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserSource {
    /// Optical center frequency [Hz].
    pub nu0: f64,
    /// Optical power [W].
    pub power: f64,
    /// Lorentzian FWHM [Hz].
    pub linewidth_fwhm: f64,
    /// Relative intensity noise at the detection output [dB/Hz].
    pub rin_db_hz: f64,
    /// Current-driver noise density [A/√Hz]; informational.
    #[serde(default)]
    pub driver_noise: f64,
    /// Beat-note-referred laser-frequency-noise current PSD [A²/Hz].
    #[serde(default)]
    pub lfn_current_psd: f64,
}

/// RIN residual after balanced common-mode rejection: a free-running QCL at
/// about −160 dB/Hz seen through 60 dB of rejection.
pub const RESIDUAL_RIN_DB_HZ: f64 = -220.0;

/// S_LFN / (R·P_LO)², fixed by the MCT noise-table entry (1e-13 A/√Hz at
/// 1 mW); it gives a few 1e-15 A/√Hz for the QCD at 20 mW.
pub const LFN_PER_DC_CURRENT_SQ: f64 = 5.9e-21;

impl LaserSource {
    /// A DFB QCL at wavelength `lambda` with typical defaults.
    pub fn qcl(lambda: f64, power: f64) -> Self {
        LaserSource {
            nu0: CODATA.c / lambda,
            power,
            linewidth_fwhm: 1.0e6,
            rin_db_hz: RESIDUAL_RIN_DB_HZ,
            driver_noise: 100e-12,
            lfn_current_psd: 0.0,
        }
    }

    /// The LO used with `det` at its customary operating power.
    pub fn methods_lo(det: &DetectorModel) -> Self {
        let power = match det.name.as_str() {
            "QCD" => 20e-3,
            "QWIP" => 10e-3,
            _ => 1e-3,
        };
        Self::lo_for(det, power)
    }

    /// LO at `power` with the frequency-noise level scaled to `det`.
    pub fn lo_for(det: &DetectorModel, power: f64) -> Self {
        let dc = det.responsivity * power;
        LaserSource {
            lfn_current_psd: LFN_PER_DC_CURRENT_SQ * dc * dc,
            ..Self::qcl(4.6e-6, power)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.nu0 > 0.0, || format!("nu0 must be positive, got {}", self.nu0))?;
        ensure(self.power >= 0.0, || format!("power must be non-negative, got {}", self.power))?;
        ensure(self.linewidth_fwhm >= 0.0, || {
            format!("linewidth must be non-negative, got {}", self.linewidth_fwhm)
        })?;
        ensure(self.rin_db_hz <= -100.0, || {
            format!("RIN {} dB/Hz above the -100 dB/Hz sanity bound", self.rin_db_hz)
        })?;
        ensure(self.lfn_current_psd >= 0.0, || "lfn_current_psd must be non-negative".into())
    }

    pub fn wavelength(&self) -> f64 {
        CODATA.c / self.nu0
    }

    pub fn rin_linear(&self) -> f64 {
        10f64.powf(self.rin_db_hz / 10.0)
    }
}

/// One point of an LO-power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub p_lo: f64,
    /// Signal power at the SNR = 1 point [W].
    pub p_s: f64,
    pub f_rf: f64,
    pub delta_f: f64,
    pub i_het: f64,
    pub i_n: f64,
    /// Current ratio i_het / i_n.
    pub snr: f64,
    /// Exact heterodyne NEP at `delta_f` [W].
    pub nep_h: f64,
    /// The approximate form using S_det and S_shot only [W].
    pub nep_h_approx: f64,
    pub breakdown: NoiseBreakdown,
}

/// Heterodyne photocurrent 2·R·sqrt(P_LO·P_S) [A].
pub fn heterodyne_current(r: f64, p_lo: f64, p_s: f64) -> Result<f64> {
    ensure(r >= 0.0 && p_lo >= 0.0 && p_s >= 0.0, || {
        format!("heterodyne inputs must be non-negative: R={r}, P_LO={p_lo}, P_S={p_s}")
    })?;
    Ok(2.0 * r * (p_lo * p_s).sqrt())
}

/// Poissonian shot noise of the LO photocurrent, 2·e·g·R·P_LO [A²/Hz].
pub fn shot_noise_psd(det: &DetectorModel, p_lo: f64) -> Result<f64> {
    ensure(p_lo >= 0.0, || format!("LO power must be non-negative, got {p_lo}"))?;
    Ok(2.0 * CODATA.e * det.g * det.responsivity * p_lo)
}

/// LO-induced terms at the LO's own power.
pub fn lo_noise_psd(det: &DetectorModel, lo: &LaserSource, f_rf: f64) -> Result<NoiseBreakdown> {
    lo_noise_psd_at(det, lo, lo.power, f_rf)
}

/// LO-induced terms with the LO power overridden by `p_lo`.
pub fn lo_noise_psd_at(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
) -> Result<NoiseBreakdown> {
    let s_shot = shot_noise_psd(det, p_lo)?;
    let dc = det.responsivity * p_lo;
    let (s_lfn, s_rin) = if p_lo > 0.0 {
        (lo.lfn_current_psd, lo.rin_linear() * dc * dc)
    } else {
        (0.0, 0.0)
    };
    Ok(NoiseBreakdown {
        f_rf,
        s_shot,
        s_lfn,
        s_rin,
        ..Default::default()
    }
    .summed())
}

/// All noise terms (intrinsic plus LO-induced) at `f_rf`.
pub fn noise_breakdown(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
) -> Result<NoiseBreakdown> {
    let intrinsic = detector_noise_psd(det, f_rf)?;
    let lo_terms = lo_noise_psd_at(det, lo, p_lo, f_rf)?;
    Ok(intrinsic.with_lo_terms(&lo_terms))
}

/// Noise current sqrt(Δf·ΣS_j) [A].
pub fn total_noise_current(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
    delta_f: f64,
) -> Result<f64> {
    ensure(delta_f > 0.0, || format!("bandwidth must be positive, got {delta_f}"))?;
    Ok((delta_f * noise_breakdown(det, lo, p_lo, f_rf)?.total).sqrt())
}

/// Heterodyne NEP, Δf·(S_det/(4R²P_LO) + e·g/(2R)) [W].
///
/// Drops S_LFN and S_RIN against the shot noise; see
/// [`heterodyne_nep_exact`] for the full sum.
pub fn heterodyne_nep(
    det: &DetectorModel,
    _lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
    delta_f: f64,
) -> Result<f64> {
    check_nep_inputs(p_lo, delta_f)?;
    let r = det.responsivity;
    let s_det = detector_noise_psd(det, f_rf)?.total;
    Ok(delta_f * (s_det / (4.0 * r * r * p_lo) + CODATA.e * det.g / (2.0 * r)))
}

/// Signal power where i_het equals i_n with every noise term, Δf·ΣS/(4R²P_LO).
pub fn heterodyne_nep_exact(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
    delta_f: f64,
) -> Result<f64> {
    check_nep_inputs(p_lo, delta_f)?;
    let r = det.responsivity;
    let total = noise_breakdown(det, lo, p_lo, f_rf)?.total;
    Ok(delta_f * total / (4.0 * r * r * p_lo))
}

fn check_nep_inputs(p_lo: f64, delta_f: f64) -> Result<()> {
    ensure(p_lo > 0.0, || format!("LO power must be positive, got {p_lo}"))?;
    ensure(delta_f > 0.0, || format!("bandwidth must be positive, got {delta_f}"))
}

/// Shot-noise-limited heterodyne NEP Δf·e·g/(2R) [W].
pub fn nep_shot_limit(det: &DetectorModel, delta_f: f64) -> Result<f64> {
    ensure(delta_f > 0.0, || format!("bandwidth must be positive, got {delta_f}"))?;
    Ok(delta_f * CODATA.e * det.g / (2.0 * det.responsivity))
}

/// The same limit written through the photon energy, Δf·h·ν/(2η) [W].
pub fn nep_shot_limit_photon(lambda: f64, eta: f64, delta_f: f64) -> Result<f64> {
    let nu = crate::detectors::optical_frequency(lambda)?;
    ensure(eta > 0.0 && eta <= 1.0, || format!("eta must be in (0, 1], got {eta}"))?;
    ensure(delta_f > 0.0, || format!("bandwidth must be positive, got {delta_f}"))?;
    Ok(delta_f * CODATA.h * nu / (2.0 * eta))
}

/// SNR as a current ratio i_het / i_n.
pub fn snr(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    p_s: f64,
    f_rf: f64,
    delta_f: f64,
) -> Result<f64> {
    let i_het = heterodyne_current(det.responsivity, p_lo, p_s)?;
    Ok(i_het / total_noise_current(det, lo, p_lo, f_rf, delta_f)?)
}

/// LO power at which S_shot equals S_det. The shot term is linear in P_LO,
/// so this is S_det/(2·e·g·R).
pub fn crossover_power(det: &DetectorModel, f_rf: f64) -> Result<f64> {
    let s_det = detector_noise_psd(det, f_rf)?.total;
    Ok(s_det / shot_noise_psd(det, 1.0)?)
}

pub fn budget_point(
    det: &DetectorModel,
    lo: &LaserSource,
    p_lo: f64,
    f_rf: f64,
    delta_f: f64,
) -> Result<BudgetPoint> {
    let breakdown = noise_breakdown(det, lo, p_lo, f_rf)?;
    let nep_h = heterodyne_nep_exact(det, lo, p_lo, f_rf, delta_f)?;
    let i_het = heterodyne_current(det.responsivity, p_lo, nep_h)?;
    let i_n = (delta_f * breakdown.total).sqrt();
    Ok(BudgetPoint {
        p_lo,
        p_s: nep_h,
        f_rf,
        delta_f,
        i_het,
        i_n,
        snr: i_het / i_n,
        nep_h,
        nep_h_approx: heterodyne_nep(det, lo, p_lo, f_rf, delta_f)?,
        breakdown,
    })
}

/// Budget at every LO power of a strictly increasing positive grid.
pub fn sweep_nep_vs_plo(
    det: &DetectorModel,
    lo: &LaserSource,
    f_rf: f64,
    delta_f: f64,
    p_lo_grid: &[f64],
) -> Result<Vec<BudgetPoint>> {
    ensure(!p_lo_grid.is_empty(), || "LO power grid is empty".into())?;
    ensure(p_lo_grid[0] > 0.0, || "LO power grid must be positive".into())?;
    ensure(p_lo_grid.windows(2).all(|w| w[1] > w[0]), || {
        "LO power grid must be strictly increasing".into()
    })?;
    p_lo_grid
        .par_iter()
        .map(|&p| budget_point(det, lo, p, f_rf, delta_f))
        .collect()
}

/// Log-spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Beat power delivered to the analyzer, 4·Z·R²·P_S·P_LO·G_AMP [W].
pub fn theoretical_peak_power(r: f64, z: f64, p_s: f64, p_lo: f64, g_amp: f64) -> Result<f64> {
    ensure(r > 0.0 && z > 0.0 && p_s > 0.0 && p_lo > 0.0 && g_amp > 0.0, || {
        format!("peak-power inputs must be positive: R={r}, Z={z}, P_S={p_s}, P_LO={p_lo}, G={g_amp}")
    })?;
    Ok(4.0 * z * r * r * p_s * p_lo * g_amp)
}

pub fn theoretical_peak_dbm(r: f64, z: f64, p_s: f64, p_lo: f64, g_amp: f64) -> Result<f64> {
    theoretical_peak_power(r, z, p_s, p_lo, g_amp).map(watts_to_dbm)
}

/// CSV with one row per sweep point.
pub fn sweep_to_csv(points: &[BudgetPoint], nep_ideal: f64) -> String {
    let mut out = String::from("p_lo_W,i_n_A_per_rtHz,nep_W,nep_approx_W,nep_ideal_W");
    for name in NoiseBreakdown::TERM_NAMES {
        out.push(',');
        out.push_str(name);
        out.push_str("_A2_per_Hz");
    }
    out.push('\n');
    for p in points {
        let rt_s = p.breakdown.total.sqrt();
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}",
            p.p_lo, rt_s, p.nep_h, p.nep_h_approx, nep_ideal
        ));
        for t in p.breakdown.terms() {
            out.push_str(&format!(",{t:e}"));
        }
        out.push('\n');
    }
    out
}
