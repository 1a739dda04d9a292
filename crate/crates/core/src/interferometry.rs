//! Phase-scanned heterodyne interferometry: the fringe law of a signal arm
//! carrying a two-path interferometer, scans through the simulator, and a
//! least-squares fit of the `(1 + cos)²` fringe.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::signal_chain::{derive_seed, simulate, ScenarioConfig};
use crate::units::{dbm_to_watts, watts_to_dbm};

/// Heterodyne peak power with the interferometer at phase `delta_phi` [W]:
/// `4·Z·R²·P_S·P_LO·G·(1 + cos ΔΦ)²`.
pub fn interferogram_model(delta_phi: f64, r: f64, z: f64, p_s: f64, p_lo: f64, g_amp: f64) -> f64 {
    let c = 1.0 + delta_phi.cos();
    4.0 * z * r * r * p_s * p_lo * g_amp * c * c
}

/// Phase per unit mirror displacement for a reflecting mirror [rad/m].
pub fn reflection_geometry(lambda: f64) -> f64 {
    4.0 * PI / lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferogramScan {
    /// Mirror displacements [m], strictly increasing.
    pub positions: Vec<f64>,
    /// Interferometer phase at each position [rad].
    pub delta_phi: Vec<f64>,
    /// Peak power read at the beat frequency [W].
    pub powers: Vec<f64>,
    /// Signal power at the splitter with the interferometer removed [W].
    pub p_s_nominal: f64,
    pub lambda: f64,
    pub geometry_factor: f64,
}

impl InterferogramScan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("position_m,phase_rad,power_dBm\n");
        for ((x, p), w) in self.positions.iter().zip(&self.delta_phi).zip(&self.powers) {
            s.push_str(&format!("{x:.9e},{p:.9e},{:.6}\n", watts_to_dbm(*w)));
        }
        s
    }
}

/// Runs one simulation per mirror position with `ΔΦ = geometry_factor·x`.
/// Each position gets its own noise realization derived from the scenario
/// seed.
pub fn scan(sc: &ScenarioConfig, positions: &[f64], geometry_factor: f64) -> Result<InterferogramScan> {
    ensure(sc.mode.is_stabilized(), || format!("interferometry needs a stabilized mode, got {:?}", sc.mode))?;
    ensure(geometry_factor.is_finite() && geometry_factor > 0.0, || {
        format!("geometry factor must be positive, got {geometry_factor}")
    })?;
    ensure(positions.iter().all(|x| x.is_finite()), || "positions must be finite".into())?;
    ensure(positions.windows(2).all(|w| w[1] > w[0]), || "positions must be strictly increasing".into())?;
    let lambda = sc.lo.wavelength();
    let delta_phi: Vec<f64> = positions.iter().map(|x| geometry_factor * x).collect();
    let powers = delta_phi
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let mut s = sc.clone();
            s.path.mzi_phase = Some(phi);
            s.seed = derive_seed(sc.seed, 1000 + i as u64);
            simulate(&s).map(|r| dbm_to_watts(r.peak.p_peak))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InterferogramScan {
        positions: positions.to_vec(),
        delta_phi,
        powers,
        p_s_nominal: sc.p_s_at_splitter(),
        lambda,
        geometry_factor,
    })
}

/// Fit of `A·(1 + cos(2πx/T + φ₀))²/4 + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Peak-to-valley amplitude `A` [W].
    pub amplitude: f64,
    /// Fringe period `T` in position units [m].
    pub period: f64,
    /// `φ₀` wrapped to (−π, π] [rad].
    pub phase_offset: f64,
    pub baseline: f64,
    pub r_squared: f64,
    /// Max/min of the fitted curve at the data positions; `None` when the
    /// fitted minimum is not positive.
    pub extinction_db: Option<f64>,
    /// One-sigma errors of (A, T, φ₀, b) from the residual variance.
    pub std_errors: [f64; 4],
    pub iterations: usize,
}

const MAX_ITER: usize = 500;

fn model(p: &Vector4<f64>, x: f64) -> f64 {
    let c = 1.0 + (2.0 * PI * x / p[1] + p[2]).cos();
    p[0] * c * c / 4.0 + p[3]
}

fn jacobian_row(p: &Vector4<f64>, x: f64) -> [f64; 4] {
    let u = 2.0 * PI * x / p[1] + p[2];
    let (s, c) = u.sin_cos();
    let c = 1.0 + c;
    [c * c / 4.0, p[0] * c * s * PI * x / (p[1] * p[1]), -p[0] * c * s / 2.0, 1.0]
}

fn sse(p: &Vector4<f64>, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&x, &y)| (y - model(p, x)).powi(2)).sum()
}

struct Lm {
    p: Vector4<f64>,
    sse: f64,
    jtj: Matrix4<f64>,
    iterations: usize,
    converged: bool,
}

fn normal_equations(p: &Vector4<f64>, x: &[f64], y: &[f64]) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (&x, &y) in x.iter().zip(y) {
        let j = Vector4::from(jacobian_row(p, x));
        jtj += j * j.transpose();
        jtr += j * (y - model(p, x));
    }
    (jtj, jtr)
}

fn levenberg_marquardt(p0: Vector4<f64>, x: &[f64], y: &[f64]) -> Lm {
    let mut p = p0;
    let mut cost = sse(&p, x, y);
    let mut lambda = 1e-3;
    let (mut jtj, mut jtr) = normal_equations(&p, x, y);
    for it in 0..MAX_ITER {
        if cost <= 1e-30 * x.len() as f64 {
            return Lm { p, sse: cost, jtj, iterations: it, converged: true };
        }
        let mut a = jtj;
        for k in 0..4 {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let c = if trial[1] > 0.0 { sse(&trial, x, y) } else { f64::INFINITY };
        if c.is_finite() && c < cost {
            let small = step.iter().zip(trial.iter()).all(|(d, v)| d.abs() <= 1e-10 * (v.abs() + 1e-10));
            p = trial;
            cost = c;
            lambda = (lambda / 10.0).max(1e-12);
            (jtj, jtr) = normal_equations(&p, x, y);
            if small {
                return Lm { p, sse: cost, jtj, iterations: it + 1, converged: true };
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent direction is left at working precision.
                return Lm { p, sse: cost, jtj, iterations: it + 1, converged: true };
            }
        }
    }
    Lm { p, sse: cost, jtj, iterations: MAX_ITER, converged: false }
}

/// Strongest fringe frequency and its phase by a direct Fourier sum over
/// trial frequencies, in cycles per unit `x`.
fn fourier_seed(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let max_cycles = x.len() as f64 / 2.0;
    let steps = ((max_cycles - 0.8) / 0.02).ceil().max(1.0) as usize;
    let mut best = (0.0, 1.0, 0.0);
    for k in 0..=steps {
        let f = 0.8 + k as f64 * 0.02;
        let (mut c, mut s) = (0.0, 0.0);
        for (&x, &y) in x.iter().zip(y) {
            let (sn, cs) = (2.0 * PI * f * x).sin_cos();
            c += (y - mean) * cs;
            s += (y - mean) * sn;
        }
        let a = c * c + s * s;
        if a > best.0 {
            best = (a, f, (-s).atan2(c));
        }
    }
    (best.1, best.2)
}

fn wrap(phi: f64) -> f64 {
    let w = phi - 2.0 * PI * (phi / (2.0 * PI)).round();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Least-squares fringe fit. Starts from the dominant Fourier component and
/// falls back to a grid of initial phases; the best converged start wins.
pub fn fit_fringe(scan: &InterferogramScan) -> Result<FringeFit> {
    let n = scan.len();
    ensure(n >= 8, || format!("a fringe fit needs at least 8 positions, got {n}"))?;
    ensure(scan.powers.len() == n, || "positions and powers differ in length".into())?;
    ensure(scan.powers.iter().all(|p| p.is_finite()), || "powers must be finite".into())?;
    let x0 = scan.positions[0];
    let span = scan.positions[n - 1] - x0;
    ensure(span > 0.0, || "positions must span a non-zero range".into())?;
    let ymax = scan.powers.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    ensure(ymax > 0.0, || "all powers are zero".into())?;
    let x: Vec<f64> = scan.positions.iter().map(|v| (v - x0) / span).collect();
    let y: Vec<f64> = scan.powers.iter().map(|v| v / ymax).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    ensure(sst > 0.0, || "powers are constant; no fringe to fit".into())?;

    let (f0, phi0) = fourier_seed(&x, &y);
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let starts = std::iter::once(phi0).chain((0..8).map(|k| k as f64 * PI / 4.0));
    let mut best: Option<Lm> = None;
    let mut tried = 0;
    for phi in starts {
        tried += 1;
        let fit = levenberg_marquardt(Vector4::new(hi - lo, 1.0 / f0, phi, lo), &x, &y);
        if fit.converged && best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    let Some(fit) = best else {
        return Err(Error::NonConvergence(format!(
            "{tried} initial guesses exhausted (period seed {} m, phase seed {phi0:.3} rad)",
            span / f0
        )));
    };

    let p = fit.p;
    let period = p[1] * span;
    ensure(period <= span * (1.0 + 1e-9), || {
        format!("scan spans {span} m, less than one fitted period of {period} m")
    })?;
    let dof = (n - 4).max(1) as f64;
    let var = fit.sse / dof;
    let cov = fit.jtj.try_inverse().unwrap_or_else(|| Matrix4::from_element(f64::NAN));
    let sd = |k: usize| (var * cov[(k, k)]).max(0.0).sqrt();
    let (cmin, cmax) = x.iter().map(|&v| model(&p, v) * ymax).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
        (a.min(c), b.max(c))
    });
    Ok(FringeFit {
        amplitude: p[0] * ymax,
        period,
        phase_offset: wrap(p[2] - 2.0 * PI * x0 / period),
        baseline: p[3] * ymax,
        r_squared: (1.0 - fit.sse / sst).clamp(0.0, 1.0),
        extinction_db: (cmin > 0.0).then(|| 10.0 * (cmax / cmin).log10()),
        std_errors: [sd(0) * ymax, sd(1) * span, sd(2), sd(3) * ymax],
        iterations: fit.iterations,
    })
}

/// A scan of the noiseless model, for checks and demonstrations.
pub fn model_scan(positions: &[f64], lambda: f64, peak: f64, baseline: f64) -> InterferogramScan {
    let g = reflection_geometry(lambda);
    let delta_phi: Vec<f64> = positions.iter().map(|x| g * x).collect();
    let powers = delta_phi.iter().map(|&d| peak * (1.0 + d.cos()).powi(2) / 4.0 + baseline).collect();
    InterferogramScan {
        positions: positions.to_vec(),
        delta_phi,
        powers,
        p_s_nominal: f64::NAN,
        lambda,
        geometry_factor: g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::preset;
    use crate::noise_budget::theoretical_peak_power;
    use crate::signal_chain::chain_gain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_points() {
        assert_eq!(interferogram_model(PI, 1.3, 50.0, 1e-12, 1e-3, 1.0), 0.0);
        let a = interferogram_model(0.0, 1.3, 50.0, 1e-12, 1e-3, 1.0);
        let b = interferogram_model(PI / 2.0, 1.3, 50.0, 1e-12, 1e-3, 1.0);
        assert!((a / b - 4.0).abs() < 1e-15);
        let single = theoretical_peak_power(1.3, 50.0, 1e-12, 1e-3, 1.0).unwrap();
        assert!((a / single - 4.0).abs() < 1e-12);
    }

    /// Expands |E_LO e^{iω_LO t} + E_s e^{iω_s t}(1 + e^{iΔΦ})|² on a grid
    /// over one beat period and projects it onto cos(Δω t).
    #[test]
    fn field_expansion_cross_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = 64;
        for _ in 0..200 {
            let e_lo: f64 = rng.random_range(0.1..2.0);
            let e_s: f64 = rng.random_range(1e-4..1.0);
            let dphi: f64 = rng.random_range(-PI..PI);
            let w_lo = 2.0 * PI * rng.random_range(1.0..5.0);
            let w_s = w_lo + 2.0 * PI;
            let mut proj = 0.0;
            for k in 0..m {
                let t = k as f64 / m as f64;
                let lo = num_complex::Complex64::from_polar(e_lo, w_lo * t);
                let s = num_complex::Complex64::from_polar(e_s, w_s * t)
                    * (1.0 + num_complex::Complex64::from_polar(1.0, dphi));
                let i = (lo + s).norm_sqr();
                proj += i * ((w_s - w_lo) * t).cos();
            }
            let cross = 2.0 * proj / m as f64;
            let expect = 2.0 * e_s * e_lo * (1.0 + dphi.cos());
            // Relative to the cross-term scale 2|E_s E_LO|, which stays finite at ΔΦ = π.
            assert!((cross - expect).abs() <= 1e-9 * 2.0 * e_s * e_lo, "{cross} {expect}");
        }
    }

    fn positions(lambda: f64, periods: f64, n: usize) -> Vec<f64> {
        let end = periods * lambda / 2.0;
        (0..n).map(|k| end * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn fit_recovers_noiseless_model() {
        let lambda = 4.6e-6;
        let mut s = model_scan(&positions(lambda, 3.0, 41), lambda, 2e-9, 1e-12);
        for (x, p) in s.positions.iter_mut().zip(&mut s.powers) {
            *x += 0.3e-6;
            *p = 2e-9 * (1.0 + (2.0 * PI * *x / 2.3e-6 + 0.7).cos()).powi(2) / 4.0 + 1e-12;
        }
        let f = fit_fringe(&s).unwrap();
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.amplitude / 2e-9 - 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.period / 2.3e-6 - 1.0).abs() < 1e-6);
        assert!((f.phase_offset - 0.7).abs() < 1e-6);
        assert!((f.baseline / 1e-12 - 1.0).abs() < 1e-6);
        assert!((f.extinction_db.unwrap() - 10.0 * (2.001e-9f64 / 1e-12).log10()).abs() < 0.5);
    }

    #[test]
    fn fit_rejects_short_or_flat_scans() {
        let lambda = 4.6e-6;
        let s = model_scan(&positions(lambda, 2.0, 7), lambda, 1.0, 0.0);
        assert!(fit_fringe(&s).is_err());
        let mut flat = model_scan(&positions(lambda, 2.0, 20), lambda, 1.0, 0.0);
        flat.powers.iter_mut().for_each(|p| *p = 1.0);
        assert!(fit_fringe(&flat).is_err());
    }

    #[test]
    fn simulated_scan_has_half_wavelength_period() {
        let det = preset("MCT").unwrap();
        let sc = ScenarioConfig { duration: 2.0, ..ScenarioConfig::aom_default(det.clone(), 1e-3, 1e-3) };
        let lambda = sc.lo.wavelength();
        let xs = positions(lambda, 2.5, 26);
        let s = scan(&sc, &xs, reflection_geometry(lambda)).unwrap();
        assert_eq!(s.len(), 26);
        let f = fit_fringe(&s).unwrap();
        assert!((f.period / (lambda / 2.0) - 1.0).abs() < 0.05, "{f:?}");
        assert!(f.r_squared > 0.99);
        let peak = theoretical_peak_power(det.responsivity, 50.0, sc.p_s_at_splitter(), 1e-3, chain_gain(&sc.amps)).unwrap();
        assert!((f.amplitude / (4.0 * peak) - 1.0).abs() < 0.15, "{} vs {}", f.amplitude, 4.0 * peak);
    }

    #[test]
    fn empty_scan_and_mode_check() {
        let det = preset("MCT").unwrap();
        let sc = ScenarioConfig::aom_default(det.clone(), 1e-3, 1e-3);
        assert!(scan(&sc, &[], 1e6).unwrap().is_empty());
        assert!(scan(&sc, &[1.0, 0.5], 1e6).is_err());
        let free = ScenarioConfig::free_default(det, true, 1e-3, 1e-3);
        assert!(scan(&free, &[0.0], 1e6).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = model_scan(&[0.0, 1e-6], 4.6e-6, 1e-3, 1e-6);
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "position_m,phase_rad,power_dBm");
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 3));
        let dbm: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert!((dbm - watts_to_dbm(1.001e-3)).abs() < 1e-6);
    }
}
