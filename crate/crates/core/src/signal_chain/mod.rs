//! Seeded time-domain simulation of the detection chains: laser fields, the
//! optical path, balanced (or single-detector) photodetection, beat-note
//! stabilization, RF amplification and spectrum-analyzer readout.
//!
//! Fields are complex envelopes in an absolute optical frame (see [`Field`]).
//! Two sampling regimes are supported. In passband mode every optical field is
//! referred to the LO frame and the photocurrent is a real record sampled fast
//! enough to hold the beat. In zoom mode the beat is digitally down-converted
//! around a chosen centre and only a narrow complex band is simulated, which
//! makes seconds-long records for 1 Hz resolution affordable.

mod amp;
mod config;
mod detect;
mod field;
mod pll;
mod scenario;

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorModel;
use crate::error::{ensure, Error, Result};
use crate::noise_budget::LaserSource;

pub use amp::amplify;
pub use config::{scenario_from_toml, DetectorSpec};
pub use detect::{balanced_detect, port_powers, single_detect};
pub use field::{apply_aom, attenuate_and_chop, derive_seed, rng_for, synth_field, Field};
pub use pll::{run_pll, LockReport, PllLoop};
pub use scenario::{
    detection_threshold, minimum_detectable_power, simulate, simulate_batch, SimulationReport,
    ThresholdPoint, ThresholdResult,
};

/// How the interferometer phase acts on the signal arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FringeLaw {
    /// Signal amplitude scaled by (1 + cos ΔΦ), beat power ∝ (1 + cos ΔΦ)².
    #[default]
    InPhase,
    /// Signal power scaled by 2(1 + cos ΔΦ), the two-arm intensity law.
    Intensity,
}

impl FringeLaw {
    /// Amplitude factor applied to the signal field at phase `delta_phi`.
    pub fn amplitude_factor(self, delta_phi: f64) -> f64 {
        let c = 1.0 + delta_phi.cos();
        match self {
            FringeLaw::InPhase => c,
            FringeLaw::Intensity => (2.0 * c).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalPath {
    pub od_total: f64,
    /// Intensity transmission of the combining beam splitter.
    pub splitter_t: f64,
    pub splitter_loss: f64,
    pub chopper_freq: Option<f64>,
    pub chopper_duty: f64,
    /// Interferometer phase ΔΦ injected into the signal arm [rad].
    pub mzi_phase: Option<f64>,
    pub fringe_law: FringeLaw,
}

impl Default for OpticalPath {
    fn default() -> Self {
        OpticalPath {
            od_total: 0.0,
            splitter_t: 0.5,
            splitter_loss: 0.0,
            chopper_freq: None,
            chopper_duty: 0.5,
            mzi_phase: None,
            fringe_law: FringeLaw::InPhase,
        }
    }
}

impl OpticalPath {
    pub fn validate(&self) -> Result<()> {
        ensure(self.od_total >= 0.0 && self.od_total.is_finite(), || {
            format!("od_total must be finite and non-negative, got {}", self.od_total)
        })?;
        ensure((0.0..=1.0).contains(&self.splitter_t), || {
            format!("splitter_t must be in [0, 1], got {}", self.splitter_t)
        })?;
        ensure((0.0..=1.0).contains(&self.splitter_loss), || {
            format!("splitter_loss must be in [0, 1], got {}", self.splitter_loss)
        })?;
        ensure(self.splitter_t + self.splitter_loss <= 1.0 + 1e-12, || {
            "splitter_t + splitter_loss exceeds 1".into()
        })?;
        if let Some(f) = self.chopper_freq {
            ensure(f > 0.0 && f.is_finite(), || format!("chopper_freq must be positive, got {f}"))?;
        }
        ensure(self.chopper_duty > 0.0 && self.chopper_duty <= 1.0, || {
            format!("chopper_duty must be in (0, 1], got {}", self.chopper_duty)
        })?;
        if let Some(p) = self.mzi_phase {
            ensure(p.is_finite(), || "mzi_phase must be finite".into())?;
        }
        Ok(())
    }

    pub fn attenuation(&self) -> f64 {
        10f64.powf(-self.od_total)
    }

    pub fn splitter_r(&self) -> f64 {
        (1.0 - self.splitter_t - self.splitter_loss).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AomConfig {
    pub f_shift: f64,
    pub diffraction_efficiency: f64,
}

impl Default for AomConfig {
    fn default() -> Self {
        AomConfig { f_shift: 105e6, diffraction_efficiency: 1.0 }
    }
}

impl AomConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.f_shift > 0.0 && self.f_shift.is_finite(), || {
            format!("AOM shift must be positive, got {}", self.f_shift)
        })?;
        ensure((0.0..=1.0).contains(&self.diffraction_efficiency), || {
            format!("diffraction efficiency must be in [0, 1], got {}", self.diffraction_efficiency)
        })
    }
}

/// Beat-note phase lock: mixer phase detector, one-pole low-pass and a PI
/// controller steering the LO phase, θ' = 2π(kp·err + ki·∫err).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PllConfig {
    pub f_clock: f64,
    /// Natural frequency the default gains are designed for [Hz].
    pub loop_bandwidth: f64,
    /// Proportional gain [Hz/rad].
    pub kp: f64,
    /// Integral gain [Hz/(rad·s)].
    pub ki: f64,
    pub ref_detector_bandwidth: f64,
    pub clock_spur_dbm: Option<f64>,
}

/// Damping ratio of the default loop gains.
pub const PLL_DAMPING: f64 = 4.0;

impl Default for PllConfig {
    fn default() -> Self {
        PllConfig::with_bandwidth(100e6, 300e3)
    }
}

impl PllConfig {
    /// Gains for natural frequency `f_n` at damping [`PLL_DAMPING`].
    pub fn with_bandwidth(f_clock: f64, f_n: f64) -> Self {
        PllConfig {
            f_clock,
            loop_bandwidth: f_n,
            kp: 2.0 * PLL_DAMPING * f_n,
            ki: 2.0 * std::f64::consts::PI * f_n * f_n,
            ref_detector_bandwidth: 200e6,
            clock_spur_dbm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.f_clock > 0.0 && self.f_clock.is_finite(), || {
            format!("f_clock must be positive, got {}", self.f_clock)
        })?;
        ensure(self.loop_bandwidth < self.ref_detector_bandwidth, || {
            format!(
                "loop bandwidth {} Hz must be below the reference detector bandwidth {} Hz",
                self.loop_bandwidth, self.ref_detector_bandwidth
            )
        })?;
        ensure(self.kp >= 0.0 && self.ki >= 0.0, || "PLL gains must be non-negative".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedModule {
    pub det_a: DetectorModel,
    pub det_b: DetectorModel,
    pub cmrr_db: f64,
    /// Fractional gain mismatch of port b relative to port a.
    pub internal_splitter_imbalance: f64,
}

impl BalancedModule {
    pub fn matched(det: DetectorModel) -> Self {
        BalancedModule { det_b: det.clone(), det_a: det, cmrr_db: 30.0, internal_splitter_imbalance: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.det_a.validate()?;
        self.det_b.validate()?;
        ensure(self.cmrr_db >= 0.0, || format!("cmrr_db must be non-negative, got {}", self.cmrr_db))?;
        ensure((0.0..=1.0).contains(&self.internal_splitter_imbalance), || {
            format!("imbalance must be in [0, 1], got {}", self.internal_splitter_imbalance)
        })?;
        let rel = (self.det_a.lambda_p - self.det_b.lambda_p).abs() / self.det_a.lambda_p;
        ensure(rel < 0.2, || "balanced detectors must share a wavelength band".into())
    }

    /// Weights of ports a and b in the difference current. A finite CMRR
    /// leaves a common-mode residual of 10^(−cmrr/20) while the differential
    /// gain stays 2; the imbalance scales port b.
    pub fn port_gains(&self) -> (f64, f64) {
        let eps = if self.cmrr_db.is_infinite() { 0.0 } else { 10f64.powf(-self.cmrr_db / 20.0) };
        (1.0 + eps / 2.0, (1.0 - self.internal_splitter_imbalance) * (1.0 - eps / 2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplifierStage {
    pub gain_db: f64,
    /// White noise referred to the stage input [A/√Hz].
    pub input_noise_current: f64,
    pub band: [f64; 2],
}

impl Default for AmplifierStage {
    fn default() -> Self {
        AmplifierStage { gain_db: 20.0, input_noise_current: 1e-13, band: [70e6, 150e6] }
    }
}

impl AmplifierStage {
    /// The two-stage RF chain: 24.6 dB followed by 20 dB, 70–150 MHz.
    pub fn methods_chain() -> Vec<AmplifierStage> {
        vec![
            AmplifierStage { gain_db: 24.6, ..Default::default() },
            AmplifierStage { gain_db: 20.0, ..Default::default() },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.gain_db.is_finite(), || "gain_db must be finite".into())?;
        ensure(self.input_noise_current >= 0.0, || "input noise must be non-negative".into())?;
        ensure(self.band[0] < self.band[1], || {
            format!("amplifier band [{}, {}] is empty", self.band[0], self.band[1])
        })
    }

    pub fn power_gain(&self) -> f64 {
        10f64.powf(self.gain_db / 10.0)
    }
}

/// Product of stage power gains.
pub fn chain_gain(amps: &[AmplifierStage]) -> f64 {
    amps.iter().map(AmplifierStage::power_gain).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "SHD_FREE")]
    ShdFree,
    #[serde(rename = "BHD_FREE")]
    BhdFree,
    #[serde(rename = "BHD_AOM")]
    BhdAom,
    #[serde(rename = "BHD_PLL")]
    BhdPll,
}

impl Mode {
    pub fn is_balanced(self) -> bool {
        self != Mode::ShdFree
    }

    pub fn is_stabilized(self) -> bool {
        matches!(self, Mode::BhdAom | Mode::BhdPll)
    }
}

/// A fixed tone added at the analyzer input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spur {
    pub freq_hz: f64,
    pub dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub lo: LaserSource,
    /// Signal laser. Its optical frequency is always taken relative to the
    /// LO: `beat_offset_hz` above it in two-laser modes, the AOM shift in AOM
    /// mode, where only its power is used and the field derives from the LO.
    pub sig: LaserSource,
    pub path: OpticalPath,
    pub aom: Option<AomConfig>,
    pub pll: Option<PllConfig>,
    /// For SHD only `det_a` is used.
    pub balanced: BalancedModule,
    pub amps: Vec<AmplifierStage>,
    pub fs: f64,
    pub duration: f64,
    pub rbw: f64,
    /// Centre of the down-converted band; `None` simulates the passband.
    pub zoom_center_hz: Option<f64>,
    pub seed: u64,
    pub z_load: f64,
    pub instrument_noise_dbm_per_hz: Option<f64>,
    /// Optical offset of the signal laser above the LO in two-laser modes
    /// [Hz]. With a PLL this is the free-running beat the loop pulls in.
    pub beat_offset_hz: f64,
    /// Rate at which the two-laser phase and the loop are integrated in
    /// zoom mode [Hz].
    pub loop_rate_hz: f64,
    pub max_samples: usize,
    pub parasitic_spur: Option<Spur>,
}

pub const DEFAULT_MAX_SAMPLES: usize = 1 << 26;

impl ScenarioConfig {
    /// A balanced AOM scenario on `det` with the two-stage amplifier chain,
    /// zoomed around the AOM shift at 1 Hz RBW.
    pub fn aom_default(det: DetectorModel, p_lo: f64, p_s: f64) -> Self {
        let lo = LaserSource::lo_for(&det, p_lo);
        let aom = AomConfig::default();
        ScenarioConfig {
            mode: Mode::BhdAom,
            sig: LaserSource { power: p_s, ..lo.clone() },
            lo,
            path: OpticalPath::default(),
            aom: Some(aom),
            pll: None,
            balanced: BalancedModule::matched(det),
            amps: AmplifierStage::methods_chain(),
            fs: 2000.0,
            duration: 12.0,
            rbw: 1.0,
            zoom_center_hz: Some(aom.f_shift),
            seed: 1,
            z_load: 50.0,
            instrument_noise_dbm_per_hz: Some(-115.0),
            beat_offset_hz: 100e6,
            loop_rate_hz: 50e6,
            max_samples: DEFAULT_MAX_SAMPLES,
            parasitic_spur: None,
        }
    }

    /// Free-running two-laser scenario in passband at 500 MHz, 300 kHz RBW.
    pub fn free_default(det: DetectorModel, balanced: bool, p_lo: f64, p_s: f64) -> Self {
        let lo = LaserSource::lo_for(&det, p_lo);
        ScenarioConfig {
            mode: if balanced { Mode::BhdFree } else { Mode::ShdFree },
            sig: LaserSource { power: p_s, ..lo.clone() },
            aom: None,
            fs: 500e6,
            duration: 2e-3,
            rbw: 300e3,
            zoom_center_hz: None,
            ..ScenarioConfig::aom_default(det, p_lo, p_s)
        }
        .with_lo(lo)
    }

    /// Two-laser PLL scenario zoomed around the clock at 1 Hz RBW.
    pub fn pll_default(det: DetectorModel, p_lo: f64, p_s: f64) -> Self {
        let pll = PllConfig::default();
        let base = ScenarioConfig::aom_default(det, p_lo, p_s);
        ScenarioConfig {
            mode: Mode::BhdPll,
            aom: None,
            pll: Some(pll),
            zoom_center_hz: Some(pll.f_clock),
            beat_offset_hz: pll.f_clock,
            duration: 4.0,
            ..base
        }
    }

    fn with_lo(mut self, lo: LaserSource) -> Self {
        self.lo = lo;
        self
    }

    /// Signal power arriving at the combining splitter [W].
    pub fn p_s_at_splitter(&self) -> f64 {
        let eff = match (self.mode, &self.aom) {
            (Mode::BhdAom, Some(a)) => a.diffraction_efficiency,
            _ => 1.0,
        };
        self.sig.power * eff * self.path.attenuation()
    }

    /// Beat frequency the analyzer is tuned to [Hz].
    pub fn expected_beat_hz(&self) -> f64 {
        match self.mode {
            Mode::BhdAom => self.aom.map_or(0.0, |a| a.f_shift),
            Mode::BhdPll => self.pll.map_or(0.0, |p| p.f_clock),
            Mode::ShdFree | Mode::BhdFree => self.beat_offset_hz,
        }
    }

    /// Optical frequency of the signal field before any AOM [Hz].
    pub fn sig_nu0(&self) -> f64 {
        match self.mode {
            Mode::BhdAom => self.lo.nu0,
            _ => self.lo.nu0 + self.beat_offset_hz,
        }
    }

    /// Detector that sets the readout responsivity.
    pub fn detector(&self) -> &DetectorModel {
        &self.balanced.det_a
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(m);
        self.lo.validate()?;
        self.sig.validate()?;
        self.path.validate()?;
        self.balanced.validate()?;
        for a in &self.amps {
            a.validate()?;
        }
        match self.mode {
            Mode::BhdAom => {
                let aom = self.aom.ok_or_else(|| cfg("BHD_AOM mode requires an [aom] section".into()))?;
                aom.validate()?;
            }
            Mode::BhdPll => {
                let pll = self.pll.ok_or_else(|| cfg("BHD_PLL mode requires a [pll] section".into()))?;
                pll.validate()?;
            }
            Mode::ShdFree | Mode::BhdFree => {}
        }
        if !(self.fs > 0.0 && self.fs.is_finite() && self.duration > 0.0) {
            return Err(cfg(format!("fs and duration must be positive, got {} and {}", self.fs, self.duration)));
        }
        ensure(self.z_load > 0.0, || "z_load must be positive".into())?;
        ensure(self.beat_offset_hz > 0.0, || "beat_offset_hz must be positive".into())?;
        let n = self.sample_count();
        if n > self.max_samples {
            return Err(cfg(format!(
                "{n} samples exceed the memory cap of {}; shorten the record or use zoom_center_hz",
                self.max_samples
            )));
        }
        if n < 2 {
            return Err(cfg(format!("record of {n} samples is too short")));
        }
        match self.zoom_center_hz {
            None => {
                let f = self.expected_beat_hz();
                if self.fs <= 4.0 * f {
                    return Err(cfg(format!(
                        "sample rate {} Hz must exceed 4x the beat frequency {f} Hz",
                        self.fs
                    )));
                }
            }
            Some(c) => {
                ensure(c > 0.0, || "zoom_center_hz must be positive".into())?;
                let off = (self.expected_beat_hz() - c).abs();
                if off >= self.fs / 2.0 {
                    return Err(Error::Aliasing { freq: off, fs: self.fs });
                }
                if !self.mode.is_stabilized() || self.mode == Mode::BhdPll {
                    ensure(self.loop_rate_hz >= self.fs, || {
                        "loop_rate_hz must be at least the zoom sample rate".into()
                    })?;
                }
            }
        }
        let min_rbw = crate::spectral::HANN_ENBW * self.fs / n as f64;
        if self.rbw < min_rbw || self.rbw.is_nan() {
            return Err(Error::RbwUnachievable { requested: self.rbw, minimum: min_rbw });
        }
        Ok(())
    }
}
