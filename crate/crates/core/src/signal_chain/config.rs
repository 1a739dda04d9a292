//! TOML scenario files.
//!
//! ```toml
//! mode = "BHD_AOM"          # SHD_FREE | BHD_FREE | BHD_AOM | BHD_PLL
//! seed = 7
//! [lo]                      # lambda, power, linewidth_fwhm, rin_db_hz, ...
//! power = 1e-3
//! [signal]
//! power = 1e-3
//! [path]
//! od_total = 10
//! [aom]
//! f_shift = 105e6
//! [balanced]
//! detector = "MCT"          # preset name or inline detector table
//! [[amps]]
//! gain_db = 24.6
//! [readout]
//! fs = 2000
//! duration = 12
//! rbw = 1
//! zoom_center_hz = 105e6
//! ```
//!
//! Unknown top-level tables are ignored so that tools can keep their own
//! sections in the same file; unknown keys inside the tables above are errors.

use serde::{Deserialize, Serialize};

use super::{
    AmplifierStage, AomConfig, BalancedModule, Mode, OpticalPath, PllConfig, ScenarioConfig, Spur,
    DEFAULT_MAX_SAMPLES,
};
use crate::detectors::{preset, CODATA, DetectorModel};
use crate::error::{Error, Result};
use crate::noise_budget::{LaserSource, LFN_PER_DC_CURRENT_SQ, RESIDUAL_RIN_DB_HZ};

/// A detector given by preset name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorSpec {
    Preset(String),
    Model(Box<DetectorModel>),
}

impl DetectorSpec {
    pub fn resolve(&self) -> Result<DetectorModel> {
        match self {
            DetectorSpec::Preset(name) => preset(name),
            DetectorSpec::Model(m) => {
                m.validate()?;
                Ok((**m).clone())
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    mode: Mode,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    lo: LaserSection,
    #[serde(default)]
    signal: LaserSection,
    #[serde(default)]
    path: OpticalPath,
    aom: Option<AomConfig>,
    pll: Option<PllSection>,
    balanced: BalancedSection,
    amps: Option<Vec<AmplifierStage>>,
    #[serde(default)]
    readout: ReadoutSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LaserSection {
    lambda: f64,
    power: f64,
    linewidth_fwhm: f64,
    rin_db_hz: f64,
    driver_noise: f64,
    /// Defaults to the frequency-noise level scaled to the detector.
    lfn_current_psd: Option<f64>,
}

impl Default for LaserSection {
    fn default() -> Self {
        LaserSection {
            lambda: 4.6e-6,
            power: 1e-3,
            linewidth_fwhm: 1e6,
            rin_db_hz: RESIDUAL_RIN_DB_HZ,
            driver_noise: 100e-12,
            lfn_current_psd: None,
        }
    }
}

impl LaserSection {
    fn build(&self, det: &DetectorModel) -> LaserSource {
        let dc = det.responsivity * self.power;
        LaserSource {
            nu0: CODATA.c / self.lambda,
            power: self.power,
            linewidth_fwhm: self.linewidth_fwhm,
            rin_db_hz: self.rin_db_hz,
            driver_noise: self.driver_noise,
            lfn_current_psd: self.lfn_current_psd.unwrap_or(LFN_PER_DC_CURRENT_SQ * dc * dc),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PllSection {
    f_clock: Option<f64>,
    loop_bandwidth: Option<f64>,
    kp: Option<f64>,
    ki: Option<f64>,
    ref_detector_bandwidth: Option<f64>,
    clock_spur_dbm: Option<f64>,
}

impl PllSection {
    fn build(&self) -> PllConfig {
        let base = PllConfig::default();
        let mut p = PllConfig::with_bandwidth(
            self.f_clock.unwrap_or(base.f_clock),
            self.loop_bandwidth.unwrap_or(base.loop_bandwidth),
        );
        if let Some(v) = self.kp {
            p.kp = v;
        }
        if let Some(v) = self.ki {
            p.ki = v;
        }
        if let Some(v) = self.ref_detector_bandwidth {
            p.ref_detector_bandwidth = v;
        }
        p.clock_spur_dbm = self.clock_spur_dbm;
        p
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BalancedSection {
    detector: DetectorSpec,
    detector_b: Option<DetectorSpec>,
    #[serde(default = "default_cmrr")]
    cmrr_db: f64,
    #[serde(default)]
    internal_splitter_imbalance: f64,
}

fn default_cmrr() -> f64 {
    30.0
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReadoutSection {
    fs: f64,
    duration: f64,
    rbw: f64,
    zoom_center_hz: Option<f64>,
    z_load: f64,
    /// Analyzer floor; `analyzer_floor = false` removes it.
    instrument_noise_dbm_per_hz: f64,
    analyzer_floor: bool,
    beat_offset_hz: f64,
    loop_rate_hz: f64,
    max_samples: usize,
    parasitic_spur: Option<Spur>,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            fs: 500e6,
            duration: 2e-3,
            rbw: 300e3,
            zoom_center_hz: None,
            z_load: 50.0,
            instrument_noise_dbm_per_hz: -115.0,
            analyzer_floor: true,
            beat_offset_hz: 100e6,
            loop_rate_hz: 50e6,
            max_samples: DEFAULT_MAX_SAMPLES,
            parasitic_spur: None,
        }
    }
}

/// Parses and validates a scenario file.
pub fn scenario_from_toml(text: &str) -> Result<ScenarioConfig> {
    let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let det_a = f.balanced.detector.resolve()?;
    let det_b = match &f.balanced.detector_b {
        Some(d) => d.resolve()?,
        None => det_a.clone(),
    };
    let r = &f.readout;
    let sc = ScenarioConfig {
        mode: f.mode,
        lo: f.lo.build(&det_a),
        sig: f.signal.build(&det_a),
        path: f.path,
        aom: match (f.mode, f.aom) {
            (Mode::BhdAom, None) => Some(AomConfig::default()),
            (_, a) => a,
        },
        pll: match (f.mode, &f.pll) {
            (Mode::BhdPll, None) => Some(PllConfig::default()),
            (_, p) => p.as_ref().map(PllSection::build),
        },
        balanced: BalancedModule {
            det_a,
            det_b,
            cmrr_db: f.balanced.cmrr_db,
            internal_splitter_imbalance: f.balanced.internal_splitter_imbalance,
        },
        amps: f.amps.unwrap_or_else(AmplifierStage::methods_chain),
        fs: r.fs,
        duration: r.duration,
        rbw: r.rbw,
        zoom_center_hz: r.zoom_center_hz,
        seed: f.seed,
        z_load: r.z_load,
        instrument_noise_dbm_per_hz: r.analyzer_floor.then_some(r.instrument_noise_dbm_per_hz),
        beat_offset_hz: r.beat_offset_hz,
        loop_rate_hz: r.loop_rate_hz,
        max_samples: r.max_samples,
        parasitic_spur: r.parasitic_spur,
    };
    sc.validate()?;
    Ok(sc)
}
