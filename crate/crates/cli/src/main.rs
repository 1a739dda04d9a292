//! `bhd`: noise budgets, detection-chain simulations and fringe fits from
//! plain-text configuration files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O error.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bhd::detectors::{all_presets, preset, table_consistency, CheckStatus, DetectorModel};
use bhd::interferometry::{fit_fringe, reflection_geometry, scan, FringeFit, InterferogramScan};
use bhd::noise_budget::{
    crossover_power, log_grid, nep_shot_limit_photon, sweep_nep_vs_plo, sweep_to_csv, theoretical_peak_dbm,
    BudgetPoint, LaserSource,
};
use bhd::signal_chain::{chain_gain, detection_threshold, scenario_from_toml, simulate, DetectorSpec, ScenarioConfig};
use bhd::units::watts_to_dbm;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use output::{OutDir, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<bhd::Error> for CliError {
    fn from(e: bhd::Error) -> Self {
        use bhd::Error as E;
        match e {
            E::Config(_) | E::UnknownPreset(_) | E::RbwUnachievable { .. } | E::Aliasing { .. } => {
                CliError::Config(e.to_string())
            }
            E::Io(io) => CliError::Io(io.to_string()),
            E::Domain(_) | E::LengthMismatch { .. } | E::EmptyWindow { .. } | E::NonConvergence(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "bhd", version, about = "Balanced heterodyne detection toolkit")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured resolution bandwidth [Hz].
    #[arg(long, global = true)]
    rbw: Option<f64>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of tabular data files.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dumps the built-in detector presets.
    Presets {
        /// Restricts the dump to these presets.
        #[arg(long = "name")]
        names: Vec<String>,
    },
    /// Noise current and heterodyne NEP against LO power.
    NepSweep,
    /// Runs one scenario, or a signal-power sweep when the config has [sweep].
    Simulate,
    /// Scans the signal-arm mirror and fits the fringe.
    Interferogram,
    /// Cross-checks the detector table entries.
    ValidateTable1,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Presets { .. } => "presets",
            Command::NepSweep => "nep-sweep",
            Command::Simulate => "simulate",
            Command::Interferogram => "interferogram",
            Command::ValidateTable1 => "validate-table1",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bhd {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let started = now();
    let mut out = OutDir::create(&cli.out)?;
    let seed = match &cli.command {
        Command::Presets { names } => cmd_presets(cli, names, &mut out).map(|_| None)?,
        Command::NepSweep => cmd_nep_sweep(cli, &mut out).map(|_| None)?,
        Command::Simulate => Some(cmd_simulate(cli, &mut out)?),
        Command::Interferogram => Some(cmd_interferogram(cli, &mut out)?),
        Command::ValidateTable1 => cmd_validate_table1(cli, &mut out).map(|_| None)?,
    };
    let manifest = RunManifest {
        command: cli.command.name().into(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        outputs: out.outputs(),
        started,
        finished: now(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numeric(e.to_string()))? + "\n";
    output::write_atomic(&out.path().join("manifest.json"), text.as_bytes())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn read_config(cli: &Cli) -> Result<String, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_section<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn load_scenario(cli: &Cli, text: &str) -> Result<ScenarioConfig, CliError> {
    let mut sc = scenario_from_toml(text)?;
    if let Some(s) = cli.seed {
        sc.seed = s;
    }
    if let Some(r) = cli.rbw {
        sc.rbw = r;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_presets(cli: &Cli, names: &[String], out: &mut OutDir) -> Result<(), CliError> {
    let models: Vec<DetectorModel> = if names.is_empty() {
        all_presets()
    } else {
        names.iter().map(|n| preset(n)).collect::<bhd::Result<_>>()?
    };
    out.write_json("presets.json", &models)?;
    if cli.format == Format::Csv {
        let mut s = String::from("name,lambda_p_m,T_det_K,eta,g,R_A_per_W,D_star,f_c_Hz,A_e_m2,r_diff_Ohm,i_dark_bg_A\n");
        for m in &models {
            s.push_str(&format!(
                "{},{:e},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                m.name, m.lambda_p, m.t_det, m.eta, m.g, m.responsivity, m.d_star, m.f_c, m.a_e, m.r_diff, m.i_dark_bg
            ));
        }
        out.write("presets.csv", &s)?;
    }
    for m in &models {
        println!("{:5} R = {} A/W  eta = {}  D* = {:e}", m.name, m.responsivity, m.eta, m.d_star);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct NepFile {
    sweep: NepSweepSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NepSweepSection {
    detectors: Vec<DetectorSpec>,
    p_lo_min: f64,
    p_lo_max: f64,
    points: usize,
    #[serde(default = "default_f_rf")]
    f_rf_hz: f64,
    #[serde(default = "default_delta_f")]
    delta_f_hz: f64,
}

fn default_f_rf() -> f64 {
    100e6
}

fn default_delta_f() -> f64 {
    1.0
}

#[derive(Serialize)]
struct NepCurve {
    detector: String,
    lambda_m: f64,
    crossover_power_w: Option<f64>,
    /// Shot-limited NEP of an η = 1 detector at the same wavelength [W/√Hz].
    nep_ideal_w: f64,
    points: Vec<BudgetPoint>,
}

fn cmd_nep_sweep(cli: &Cli, out: &mut OutDir) -> Result<(), CliError> {
    let text = read_config(cli)?;
    let s = parse_section::<NepFile>(&text)?.sweep;
    if s.points == 0 || s.detectors.is_empty() {
        return Err(CliError::Config("sweep needs at least one detector and one point".into()));
    }
    if !(s.p_lo_min > 0.0 && s.p_lo_max >= s.p_lo_min) {
        return Err(CliError::Config(format!("invalid LO power range [{}, {}]", s.p_lo_min, s.p_lo_max)));
    }
    let grid = log_grid(s.p_lo_min, s.p_lo_max, s.points);
    let mut curves = Vec::new();
    let mut ideal = String::from("detector,lambda_m,eta,nep_W_per_rtHz\n");
    for spec in &s.detectors {
        let det = spec.resolve()?;
        let lo = LaserSource::methods_lo(&det);
        let points = sweep_nep_vs_plo(&det, &lo, s.f_rf_hz, s.delta_f_hz, &grid)?;
        let nep_ideal = nep_shot_limit_photon(det.lambda_p, 1.0, s.delta_f_hz)?;
        if cli.format == Format::Csv {
            out.write(&format!("nep_{}.csv", det.name.to_lowercase()), &sweep_to_csv(&points, nep_ideal))?;
        }
        ideal.push_str(&format!("{},{:e},1,{:e}\n", det.name, det.lambda_p, nep_ideal));
        let last = points.last().map_or(f64::NAN, |p| p.nep_h);
        println!("{:5} NEP_h at {:.1e} W LO: {last:.3e} W (ideal {nep_ideal:.3e} W)", det.name, s.p_lo_max);
        curves.push(NepCurve {
            detector: det.name.clone(),
            lambda_m: det.lambda_p,
            crossover_power_w: crossover_power(&det, s.f_rf_hz).ok(),
            nep_ideal_w: nep_ideal,
            points,
        });
    }
    if cli.format == Format::Csv {
        out.write("nep_ideal.csv", &ideal)?;
    }
    out.write_json("nep_sweep.json", &curves)?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
struct SweepFile {
    sweep: Option<PowerSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSweep {
    /// Signal powers at the splitter [W]; alternative to the range keys.
    p_s: Option<Vec<f64>>,
    p_s_min: Option<f64>,
    p_s_max: Option<f64>,
    points: Option<usize>,
}

impl PowerSweep {
    fn grid(&self) -> Result<Vec<f64>, CliError> {
        match (&self.p_s, self.p_s_min, self.p_s_max, self.points) {
            (Some(v), None, None, None) => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n > 0 && a > 0.0 && b >= a => Ok(log_grid(a, b, n)),
            _ => Err(CliError::Config("[sweep] needs either `p_s` or positive `p_s_min`, `p_s_max`, `points`".into())),
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    p_s_w: f64,
    peak_dbm: f64,
    tone_dbm: f64,
    floor_dbm: f64,
    snr_lin: f64,
    theory_dbm: f64,
}

#[derive(Serialize)]
struct SweepReport {
    mode: bhd::signal_chain::Mode,
    seed: u64,
    rbw: f64,
    p_lo: f64,
    rows: Vec<SweepRow>,
    p_threshold_w: Option<f64>,
    p_min_extrapolated_w: Option<f64>,
}

fn cmd_simulate(cli: &Cli, out: &mut OutDir) -> Result<u64, CliError> {
    let text = read_config(cli)?;
    let sc = load_scenario(cli, &text)?;
    let sweep = parse_section::<SweepFile>(&text)?.sweep;
    match sweep {
        None => {
            let rep = simulate(&sc)?;
            match cli.format {
                Format::Csv => out.write("spectrum.csv", &rep.spectrum.to_csv(Some(sc.seed)))?,
                Format::Json => out.write_json("spectrum.json", &rep.spectrum)?,
            };
            out.write_json("report.json", &rep)?;
            println!(
                "{:?}: peak {:.2} dBm at {:.3} Hz, floor {:.2} dBm, SNR {:.1} dB",
                rep.mode, rep.peak.p_peak, rep.peak.f_peak, rep.peak.noise_floor, rep.peak.snr_db
            );
            if let Some(t) = rep.theoretical_peak_dbm {
                println!("theory {t:.2} dBm");
            }
            for w in &rep.warnings {
                println!("warning: {w}");
            }
        }
        Some(sw) => {
            let grid = sw.grid()?;
            let res = detection_threshold(&sc, &grid)?;
            let (r, g) = (sc.detector().responsivity, chain_gain(&sc.amps));
            let rows: Vec<SweepRow> = res
                .points
                .iter()
                .map(|p| SweepRow {
                    p_s_w: p.p_s,
                    peak_dbm: p.peak_dbm,
                    tone_dbm: p.tone_dbm,
                    floor_dbm: p.floor_dbm,
                    snr_lin: p.snr_lin,
                    theory_dbm: theoretical_peak_dbm(r, sc.z_load, p.p_s, sc.lo.power, g).unwrap_or(f64::NAN),
                })
                .collect();
            let report = SweepReport {
                mode: sc.mode,
                seed: sc.seed,
                rbw: sc.rbw,
                p_lo: sc.lo.power,
                rows,
                p_threshold_w: res.p_threshold,
                p_min_extrapolated_w: res.p_min_extrapolated,
            };
            if cli.format == Format::Csv {
                let mut s = String::from("p_s_W,peak_dBm,tone_dBm,floor_dBm,snr_lin,theory_dBm\n");
                for r in &report.rows {
                    s.push_str(&format!(
                        "{:e},{:.4},{:.4},{:.4},{:e},{:.4}\n",
                        r.p_s_w, r.peak_dbm, r.tone_dbm, r.floor_dbm, r.snr_lin, r.theory_dbm
                    ));
                }
                out.write("peaks.csv", &s)?;
            }
            out.write_json("report.json", &report)?;
            for r in &report.rows {
                println!("P_S {:.3e} W: peak {:.2} dBm, theory {:.2} dBm, SNR {:.2}", r.p_s_w, r.peak_dbm, r.theory_dbm, r.snr_lin);
            }
            match report.p_threshold_w {
                Some(p) => println!("SNR = 1 at {p:.3e} W ({:.1} dBm)", watts_to_dbm(p)),
                None => println!("SNR = 1 crossing not bracketed by the sweep"),
            }
        }
    }
    Ok(sc.seed)
}

#[derive(Debug, Default, Deserialize)]
struct ScanFile {
    scan: Option<ScanSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanSection {
    start_m: f64,
    stop_m: f64,
    points: usize,
    /// Phase per metre of mirror travel; defaults to 4π/λ.
    geometry_factor: Option<f64>,
    /// Optical densities to repeat the scan at; defaults to the configured one.
    od_ladder: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ScanResult {
    od_total: f64,
    p_s_nominal_w: f64,
    fit: Option<FringeFit>,
    fit_error: Option<String>,
    scan: InterferogramScan,
}

fn cmd_interferogram(cli: &Cli, out: &mut OutDir) -> Result<u64, CliError> {
    let text = read_config(cli)?;
    let sc = load_scenario(cli, &text)?;
    let s = parse_section::<ScanFile>(&text)?
        .scan
        .ok_or_else(|| CliError::Config("interferogram needs a [scan] table".into()))?;
    if s.points < 2 || !(s.stop_m > s.start_m) {
        return Err(CliError::Config("[scan] needs stop_m > start_m and at least 2 points".into()));
    }
    let positions: Vec<f64> =
        (0..s.points).map(|k| s.start_m + (s.stop_m - s.start_m) * k as f64 / (s.points - 1) as f64).collect();
    let gf = s.geometry_factor.unwrap_or_else(|| reflection_geometry(sc.lo.wavelength()));
    let ods = s.od_ladder.clone().unwrap_or_else(|| vec![sc.path.od_total]);
    let mut results = Vec::new();
    for &od in &ods {
        let mut run = sc.clone();
        run.path.od_total = od;
        let data = scan(&run, &positions, gf)?;
        let (fit, fit_error) = match fit_fringe(&data) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let name = if ods.len() == 1 { "interferogram".to_string() } else { format!("interferogram_od{od}") };
        match cli.format {
            Format::Csv => out.write(&format!("{name}.csv"), &data.to_csv())?,
            Format::Json => out.write_json(&format!("{name}.json"), &data)?,
        };
        match &fit {
            Some(f) => println!(
                "OD {od}: period {:.3} um, r2 {:.4}, extinction {} dB",
                f.period * 1e6,
                f.r_squared,
                f.extinction_db.map_or("inf".into(), |e| format!("{e:.1}"))
            ),
            None => println!("OD {od}: fit failed: {}", fit_error.as_deref().unwrap_or("")),
        }
        results.push(ScanResult { od_total: od, p_s_nominal_w: data.p_s_nominal, fit, fit_error, scan: data });
    }
    out.write_json("fit.json", &results)?;
    Ok(sc.seed)
}

fn cmd_validate_table1(cli: &Cli, out: &mut OutDir) -> Result<(), CliError> {
    let checks = table_consistency(&all_presets())?;
    out.write_json("table1.json", &checks)?;
    if cli.format == Format::Csv {
        let mut s = String::from("detector,quantity,computed,listed,ratio,tolerance,status,note\n");
        for c in &checks {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:.6},{},{:?},\"{}\"\n",
                c.detector, c.quantity, c.computed, c.listed, c.ratio, c.tolerance, c.status, c.note
            ));
        }
        out.write("table1.csv", &s)?;
    }
    for c in &checks {
        let tag = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::ExpectedDiscrepancy => "EXPECTED",
            CheckStatus::Fail => "FAIL",
        };
        println!(
            "{tag:8} {:5} {:16} computed {:.3e} listed {:.3e} ratio {:.3} {}",
            c.detector, c.quantity, c.computed, c.listed, c.ratio, c.note
        );
    }
    if checks.iter().any(|c| c.status == CheckStatus::Fail) {
        return Err(CliError::Numeric("table cross-check failed".into()));
    }
    Ok(())
}
