use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penning-probe")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the tool: schema line, optional `# key=value` lines, header.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn dataset(name: &str, seed: &str) -> PathBuf {
    let dir = scratch(name);
    let o = run(&["synth", "--seed", seed], &dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn modes_table_for_beryllium_at_three_tesla() {
    let out = scratch("modes");
    let o = run(&["modes", "--b-tesla", "3", "--fz", "2.6"], &out);
    assert!(o.status.success());
    let (header, rows) = rows(&out.join("modes.csv"));
    let j = header.iter().position(|c| c == "f_c_mhz").unwrap();
    let fc: f64 = rows[0][j].parse().unwrap();
    assert!((fc - 5.11).abs() < 0.01, "{fc}");
    let text = fs::read_to_string(out.join("modes.csv")).unwrap();
    assert!(text.starts_with("# penning-probe-schema v1 kind=modes\n"));
}

#[test]
fn quoted_spectrum_reports_sum_mismatch() {
    let out = scratch("validate");
    let o = run(&["modes", "--validate", "5.118,4.32,0.845,2.6"], &out);
    assert!(o.status.success());
    let v = json(&out.join("validation.json"));
    assert!((v["sum_mismatch_khz"].as_f64().unwrap() - 47.0).abs() < 1e-6);
    assert_eq!(v["consistent_1e9"], Value::Bool(false));
}

#[test]
fn empty_input_is_a_usage_error() {
    let out = scratch("empty");
    let empty = out.join("empty.csv");
    fs::write(&empty, "").unwrap();
    for args in [
        vec!["modes", "--input", empty.to_str().unwrap()],
        vec!["dipoles", "--fields", empty.to_str().unwrap()],
        vec!["noisefit", "--records", empty.to_str().unwrap()],
    ] {
        let o = run(&args, &out.join("o"));
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    }
}

#[test]
fn bad_flags_and_missing_files_exit_two() {
    let out = scratch("flags");
    assert_eq!(run(&["modes", "--no-such-flag"], &out).status.code(), Some(2));
    assert_eq!(run(&["strayfield", "--readings", "/nonexistent.csv"], &out).status.code(), Some(2));
    let cfg = out.join("bad.toml");
    fs::write(&cfg, "schema = \"penning-probe-schema v1\"\n[units]\nlength = \"mm\"\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "modes"], &out).status.code(), Some(2));
}

#[test]
fn schema_violations_are_reported_per_row() {
    let data = dataset("schema", "3");
    let text = fs::read_to_string(data.join("heating.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let cells: Vec<&str> = lines[3].split(',').collect();
    lines[3] = format!("q,{}", cells[1..].join(","));
    lines[5] = lines[5].replace("false", "maybe");
    let bad = data.join("bad_heating.csv");
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = run(&["noisefit", "--records", bad.to_str().unwrap()], &data.join("o"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad_heating.csv"), "{err}");
    assert!(err.contains("row 2: unknown mode") && err.contains("row 4, column `detached`"), "{err}");

    let wrong_kind = text.replacen("kind=heating", "kind=rabi", 1);
    fs::write(&bad, wrong_kind).unwrap();
    assert_eq!(run(&["noisefit", "--records", bad.to_str().unwrap()], &data.join("o")).status.code(), Some(2));
}

#[test]
fn synth_then_dipoles_recovers_background() {
    let data = dataset("dipoles", "11");
    let out = data.join("inv");
    let o = run(&["dipoles", "--fields", data.join("fields.csv").to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = json(&data.join("truth.json"))["background_e_a_per_um2"].as_f64().unwrap();
    let got = json(&out.join("dipoles.json"))["background_e_a_per_um2"].as_f64().unwrap();
    assert!((got / truth - 1.0).abs() < 0.05, "{got} vs {truth}");
    let (_, grid) = rows(&out.join("dipoles.csv"));
    assert_eq!(grid.len(), 400);
}

#[test]
fn strayfield_recovers_synthetic_sites() {
    let data = dataset("stray", "4");
    let out = data.join("sf");
    let o = run(&["strayfield", "--readings", data.join("readings.csv").to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = json(&data.join("truth.json"));
    let got = json(&out.join("strayfield.json"));
    let sites = got["sites"].as_array().unwrap();
    assert_eq!(sites.len(), truth["sites"].as_array().unwrap().len());
    for t in truth["sites"].as_array().unwrap() {
        let s = sites.iter().find(|s| s["site_um"] == t["site_um"]).unwrap();
        for i in 0..3 {
            let err = (s["stray_field"][i].as_f64().unwrap() - t["stray_field"][i].as_f64().unwrap()).abs();
            assert!(err <= 3.0 * s["sigma_stray"][i].as_f64().unwrap(), "{:?} axis {i}: {err}", t["site_um"]);
        }
    }
}

#[test]
fn noisefit_overlay_has_three_components() {
    let data = dataset("noise", "2");
    let out = data.join("fit");
    let o = run(&["noisefit", "--records", data.join("heating.csv").to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("noisefit.json"));
    for m in report["modes"].as_array().unwrap() {
        for p in m["points"].as_array().unwrap() {
            let b = &p["breakdown"];
            let sum = b["johnson"].as_f64().unwrap() + b["surface"].as_f64().unwrap() + b["technical"].as_f64().unwrap();
            assert!((sum - b["total"].as_f64().unwrap()).abs() <= 1e-14 * sum);
        }
    }
    for mode in ["axial", "cyclotron", "magnetron"] {
        let (_, rs) = rows(&out.join(format!("overlay_{mode}.csv")));
        for series in ["measured", "total", "johnson", "surface", "technical"] {
            assert!(rs.iter().any(|r| r[0] == series), "{mode} lacks {series}");
        }
        assert!(out.join(format!("overlay_{mode}.svg")).is_file());
    }
    let (_, axial) = rows(&out.join("overlay_axial.csv"));
    assert!(axial.iter().any(|r| r[0] == "measured_detached"));
}

#[test]
fn exponent_at_grid_edge_exits_three_with_report() {
    let data = dataset("edge", "2");
    let cfg = data.join("narrow.toml");
    fs::write(&cfg, "schema = \"penning-probe-schema v1\"\n[noisefit]\nbeta_min = 1.0\nbeta_max = 2.0\nbeta_step = 0.25\n").unwrap();
    let out = data.join("fit");
    let o = run(
        &["--config", cfg.to_str().unwrap(), "noisefit", "--records", data.join("heating.csv").to_str().unwrap()],
        &out,
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("noisefit.json"));
    assert!(report["modes"].as_array().unwrap().iter().any(|m| m["converged"] == Value::Bool(false)));
}

#[test]
fn frequency_scaling_recovers_alpha() {
    let data = dataset("alpha", "6");
    let out = data.join("fit");
    let o = run(&["noisefit", "--scaling", "frequency", "--records", data.join("frequency.csv").to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let alpha = json(&out.join("frequency.json"))[0]["alpha"]["value"].as_f64().unwrap();
    assert!((alpha - 1.7).abs() < 0.1, "{alpha}");
}

#[test]
fn magnetics_recovers_gradients() {
    let data = dataset("magnetics", "8");
    let out = data.join("mag");
    let o = run(&["magnetics", "--scans", data.join("rabi.csv").to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let global = &json(&out.join("magnetics.json"))["global"];
    for (axis, truth) in [("y", 5.87), ("z", -5.26)] {
        let s = global["slopes"].as_array().unwrap().iter().find(|s| s["axis"] == axis).unwrap();
        let (v, e) = (s["slope"]["value"].as_f64().unwrap(), s["slope"]["sigma"].as_f64().unwrap());
        assert!((v - truth).abs() <= 4.0 * e, "{axis}: {v} ± {e}");
    }
}

#[test]
fn every_plot_has_a_data_table() {
    let data = dataset("plots", "9");
    let out = data.join("all");
    let p = |f: &str| data.join(f).to_string_lossy().into_owned();
    for args in [
        vec!["strayfield".to_string(), "--readings".into(), p("readings.csv")],
        vec!["dipoles".into(), "--fields".into(), p("fields.csv")],
        vec!["noisefit".into(), "--records".into(), p("heating.csv")],
        vec!["magnetics".into(), "--scans".into(), p("rabi.csv")],
        vec!["transport".into()],
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(run(&args, &out).status.success(), "{args:?}");
    }
    let mut svgs = 0;
    for e in fs::read_dir(&out).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "svg") {
            svgs += 1;
            assert!(path.with_extension("csv").is_file(), "{}", path.display());
        }
    }
    assert!(svgs >= 7);
}

#[test]
fn transport_lasts_five_ms() {
    let out = scratch("transport");
    assert!(run(&["transport"], &out).status.success());
    let r = json(&out.join("transport.json"));
    assert!((r["duration_ms"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert!(out.join("waveform.csv").is_file());
}

#[test]
fn layout_written_then_checked() {
    let out = scratch("layout");
    assert!(run(&["layout"], &out).status.success());
    let layout = out.join("layout.toml");
    assert!(run(&["layout", "--check", layout.to_str().unwrap()], &out.join("check")).status.success());
    fs::write(&layout, "not a layout").unwrap();
    assert_eq!(run(&["layout", "--check", layout.to_str().unwrap()], &out.join("check")).status.code(), Some(2));
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_scenario_reproduces_bundled_dataset() {
    let out = scratch("bundled-synth");
    let cfg = bundled("config.toml");
    let scenario = bundled("scenario.toml");
    let o = run(&["--config", cfg.to_str().unwrap(), "synth", "--scenario", scenario.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fields.csv", "frequency.csv", "heating.csv", "rabi.csv", "readings.csv", "truth.json", "truth_dipoles.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(bundled("synthetic").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bundled_heating_data_gives_component_overlay() {
    let out = scratch("bundled-noise");
    let cfg = bundled("config.toml");
    let records = bundled("synthetic/heating.csv");
    let o = run(&["--config", cfg.to_str().unwrap(), "noisefit", "--records", records.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("noisefit.json"));
    let betas: Vec<f64> = report["modes"].as_array().unwrap().iter().map(|m| m["beta"].as_f64().unwrap()).collect();
    for (b, truth) in betas.iter().zip([4.0, 3.5, 4.1]) {
        assert!((b - truth).abs() <= 0.3, "{betas:?}");
    }
    let (_, cyc) = rows(&out.join("overlay_cyclotron.csv"));
    for series in ["johnson", "surface", "technical"] {
        assert!(cyc.iter().any(|r| r[0] == series && r[2].parse::<f64>().unwrap() > 0.0), "{series}");
    }
}
