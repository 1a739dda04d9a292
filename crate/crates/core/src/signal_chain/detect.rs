use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::field::{rng_for, Field};
use super::{BalancedModule, OpticalPath};
use crate::detectors::{detector_noise_psd, DetectorModel, CODATA};
use crate::error::{ensure, Error, Result};
use crate::spectral::TimeSeries;

/// Scale of the detected cross term. It makes the RMS beat current equal to
/// 2·R·sqrt(P_LO·P_S), so a tone read through Z and G has the power
/// 4·Z·R²·P_S·P_LO·G.
pub const BEAT_SCALE: f64 = std::f64::consts::SQRT_2;

/// Instantaneous optical power at the two splitter outputs [W]. Both fields
/// must share a frame.
pub fn port_powers(lo: &Field, sig: &Field, path: &OpticalPath) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(lo, sig)?;
    ensure(lo.frame_hz == sig.frame_hz, || "port powers need fields in a common frame".into())?;
    let (t, r) = (path.splitter_t, path.splitter_r());
    let (st, sr) = (t.sqrt(), r.sqrt());
    let mut p3 = Vec::with_capacity(lo.len());
    let mut p4 = Vec::with_capacity(lo.len());
    for (el, es) in lo.samples.iter().zip(&sig.samples) {
        p3.push((st * el + sr * es).norm_sqr());
        p4.push((sr * el - st * es).norm_sqr());
    }
    Ok((p3, p4))
}

fn check_pair(lo: &Field, sig: &Field) -> Result<()> {
    if lo.len() != sig.len() {
        return Err(Error::LengthMismatch { left: lo.len(), right: sig.len() });
    }
    ensure(lo.fs == sig.fs, || format!("sample rates differ: {} vs {}", lo.fs, sig.fs))?;
    ensure(lo.len() >= 2, || "fields need at least 2 samples".into())
}

struct Port<'a> {
    det: &'a DetectorModel,
    /// Weight in the output current; negative for the subtracted port.
    weight: f64,
    /// Share of the LO and signal powers reaching this port.
    lo_share: f64,
    sig_share: f64,
    /// Intrinsic noise apportioned to this port [A²/Hz].
    s_intrinsic: f64,
}

/// Difference photocurrent of the balanced module.
///
/// Each port carries half of its detector's intrinsic noise plus the shot
/// noise of its own mean photocurrent; the module's TIA noise is added once at
/// the output. Fields in a common frame give a real record; fields in
/// different frames give an IQ record centred on their frequency difference,
/// holding the beat band only.
pub fn balanced_detect(
    lo: &Field,
    sig: &Field,
    module: &BalancedModule,
    path: &OpticalPath,
    seed: u64,
) -> Result<TimeSeries> {
    module.validate()?;
    let f_eval = eval_freq(lo, sig);
    let na = detector_noise_psd(&module.det_a, f_eval)?;
    let nb = detector_noise_psd(&module.det_b, f_eval)?;
    let (t, r) = (path.splitter_t, path.splitter_r());
    let (ga, gb) = module.port_gains();
    let ports = [
        Port { det: &module.det_a, weight: ga, lo_share: t, sig_share: r, s_intrinsic: (na.total - na.s_tia) / 2.0 },
        Port {
            det: &module.det_b,
            weight: -gb,
            lo_share: r,
            sig_share: t,
            s_intrinsic: (nb.total - nb.s_tia) / 2.0,
        },
    ];
    detect(lo, sig, &ports, na.s_tia, path, seed)
}

/// Photocurrent of one detector at the transmitted splitter port, with its
/// full intrinsic noise.
pub fn single_detect(
    lo: &Field,
    sig: &Field,
    det: &DetectorModel,
    path: &OpticalPath,
    seed: u64,
) -> Result<TimeSeries> {
    det.validate()?;
    let n = detector_noise_psd(det, eval_freq(lo, sig))?;
    let port = Port {
        det,
        weight: 1.0,
        lo_share: path.splitter_t,
        sig_share: path.splitter_r(),
        s_intrinsic: n.total - n.s_tia,
    };
    detect(lo, sig, &[port], n.s_tia, path, seed)
}

fn eval_freq(lo: &Field, sig: &Field) -> f64 {
    let d = (sig.frame_hz - lo.frame_hz).abs();
    if d > 0.0 {
        d
    } else {
        lo.fs / 4.0
    }
}

fn detect(
    lo: &Field,
    sig: &Field,
    ports: &[Port],
    s_tia: f64,
    path: &OpticalPath,
    seed: u64,
) -> Result<TimeSeries> {
    check_pair(lo, sig)?;
    path.validate()?;
    let fs = lo.fs;
    let (p_lo, p_s) = (lo.mean_power(), sig.mean_power());
    let shot = |p: &Port| 2.0 * CODATA.e * p.det.g * p.det.responsivity * (p.lo_share * p_lo + p.sig_share * p_s);
    let port_psd: Vec<f64> = ports.iter().map(|p| p.s_intrinsic + shot(p)).collect();
    let mut rng = rng_for(seed, 10);
    let (t, r) = (path.splitter_t, path.splitter_r());
    let cross_scale = BEAT_SCALE * 2.0 * (t * r).sqrt();

    if lo.frame_hz == sig.frame_hz {
        let sig_port: Vec<f64> = port_psd.iter().map(|s| (s * fs / 2.0).sqrt()).collect();
        let sig_tia = (s_tia * fs / 2.0).sqrt();
        let mut out = Vec::with_capacity(lo.len());
        for (el, es) in lo.samples.iter().zip(&sig.samples) {
            let (pl, ps) = (el.norm_sqr(), es.norm_sqr());
            let cross = cross_scale * (es * el.conj()).re;
            let mut i = sig_tia * rng.sample::<f64, _>(StandardNormal);
            for (k, p) in ports.iter().enumerate() {
                // the transmitted port sees +cross, the reflected one -cross
                let sign = if p.weight >= 0.0 { 1.0 } else { -1.0 };
                let power = p.lo_share * pl + p.sig_share * ps + sign * cross;
                let noise = sig_port[k] * rng.sample::<f64, _>(StandardNormal);
                i += p.weight.abs() * sign * (p.det.responsivity * power + noise);
            }
            out.push(i);
        }
        return TimeSeries::real(fs, out);
    }

    // Only the beat band survives the down-conversion; the DC terms and their
    // intensity noise enter through the residual common-mode weight.
    let beat_gain: f64 = ports.iter().map(|p| p.weight.abs() * p.det.responsivity).sum::<f64>() * cross_scale;
    let residual: f64 = ports.iter().map(|p| p.weight * p.det.responsivity * p.lo_share).sum();
    let s_out = ports.iter().zip(&port_psd).map(|(p, s)| p.weight * p.weight * s).sum::<f64>()
        + s_tia
        + residual * residual * lo.rin_lin * p_lo * p_lo;
    let sigma = (s_out * fs).sqrt();
    let data = lo
        .samples
        .iter()
        .zip(&sig.samples)
        .map(|(el, es)| {
            let n = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            beat_gain * es * el.conj() + sigma * n
        })
        .collect();
    TimeSeries::iq(fs, sig.frame_hz - lo.frame_hz, data)
}
