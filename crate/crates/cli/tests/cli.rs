use std::path::Path;
use std::process::{Command, Output};

use bhd::detectors::{all_presets, DetectorModel};
use bhd::signal_chain::scenario_from_toml;
use serde_json::Value;

fn bhd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .current_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
        .output()
        .expect("run bhd")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn presets_dump_round_trips_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhd(&["presets"], dir.path());
    assert!(out.status.success());
    let models: Vec<DetectorModel> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("presets.json")).unwrap()).unwrap();
    assert_eq!(models, all_presets());
    assert_eq!(models[0].responsivity, 1.3);
    for m in &models {
        let table = toml::to_string(m).unwrap();
        let text = format!("mode = \"BHD_FREE\"\n[balanced.detector]\n{table}");
        assert_eq!(&scenario_from_toml(&text).unwrap().balanced.det_a, m);
    }
}

#[test]
fn exit_codes_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = bhd(&["presets", "--name", "InSb"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("InSb"));

    let rbw = bhd(&["simulate", "--config", "configs/fig3a.toml", "--rbw", "0.01"], dir.path());
    assert_eq!(rbw.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rbw.stderr).contains("minimum"));

    let missing = bhd(&["simulate", "--config", "configs/no_such_file.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(4));

    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "[sweep]\ndetectors = [\"MCT\"]\np_lo_min = 1e-6\np_lo_max = 1e-3\npoints = 0\n").unwrap();
    let empty = bhd(&["nep-sweep", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(empty.status.code(), Some(2));

    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "mode = \"BHD_AOM\"\n[balanced]\ndetector = \"MCT\"\n[path]\nodd = 3\n").unwrap();
    let typo = bhd(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("line"));
}

#[test]
fn nep_sweep_rows_and_ideal_reference() {
    let dir = tempfile::tempdir().unwrap();
    assert!(bhd(&["nep-sweep", "--config", "configs/fig1b.toml"], dir.path()).status.success());
    let curves = json(&dir.path().join("nep_sweep.json"));
    let mct = &curves[0];
    assert_eq!(mct["detector"], "MCT");
    let last = mct["points"].as_array().unwrap().last().unwrap()["nep_h"].as_f64().unwrap();
    assert!((last / 6.2e-20 - 1.0).abs() < 0.05, "{last}");
    let ideal = mct["nep_ideal_w"].as_f64().unwrap();
    let h_nu = 6.626_070_15e-34 * 299_792_458.0 / 4.7e-6;
    assert!((ideal / (h_nu / 2.0) - 1.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("nep_ideal.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "nep-sweep");
    for p in manifest["outputs"].as_array().unwrap() {
        assert!(Path::new(p.as_str().unwrap()).exists());
    }
}

#[test]
fn simulate_sweep_tracks_theory() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhd(&["simulate", "--config", "configs/fig3a.toml", "--threads", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("report.json"));
    for row in rep["rows"].as_array().unwrap() {
        if row["snr_lin"].as_f64().unwrap() > 100.0 {
            let d = row["peak_dbm"].as_f64().unwrap() - row["theory_dbm"].as_f64().unwrap();
            assert!(d.abs() < 1.0, "{row}");
        }
    }
    assert!(rep["p_threshold_w"].as_f64().is_some());
    assert!(dir.path().join("peaks.csv").exists());
}

#[test]
fn interferogram_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let out = bhd(&["interferogram", "--config", "configs/fig4c.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fits = json(&dir.path().join("fit.json"));
    let fits = fits.as_array().unwrap();
    assert_eq!(fits.len(), 4);
    let amp = |i: usize| fits[i]["fit"]["amplitude"].as_f64().unwrap();
    for f in fits {
        let period = f["fit"]["period"].as_f64().unwrap();
        assert!((period / 2.3e-6 - 1.0).abs() < 0.05, "{period}");
        assert!(f["fit"]["r_squared"].as_f64().unwrap() >= 0.99);
    }
    let span = amp(0) / amp(3);
    assert!((span.log10() - 6.0).abs() < 0.1, "{span}");
    let csv = std::fs::read_to_string(dir.path().join("interferogram_od13.csv")).unwrap();
    assert!(csv.starts_with("position_m,phase_rad,power_dBm\n"));
}

#[test]
fn json_format_replaces_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert!(bhd(&["validate-table1", "--format", "json"], dir.path()).status.success());
    assert!(dir.path().join("table1.json").exists());
    assert!(!dir.path().join("table1.csv").exists());
}
