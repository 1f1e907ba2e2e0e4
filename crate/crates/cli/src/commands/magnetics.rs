use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::Serialize;

use penning_probe::constants::{MICRO, TWO_PI};
use penning_probe::electrodes::Axis;
use penning_probe::fit::Estimate;
use penning_probe::io::read_rabi;
use penning_probe::sensing::{
    default_field_sensitivity, delta_b_from_delta_omega, fit_gradient, fit_rabi, GradientFit, GradientPoint,
};

use crate::cli::MagneticsArgs;
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};
use crate::plot::{chart, Chart, Series, Style};

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

#[derive(Serialize)]
struct ScanReport {
    scan: u32,
    site_um: [f64; 3],
    converged: bool,
    center_mhz: Option<Estimate>,
    rabi_khz: Option<Estimate>,
    delta_b_nt: Option<Estimate>,
    chi2: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SlopeReport {
    axis: &'static str,
    /// nT/µm.
    slope: Estimate,
}

#[derive(Serialize)]
struct GradientReport {
    /// Along-axis line of sites; empty for the global fit.
    line: String,
    points: usize,
    offset_nt: Estimate,
    centroid_um: [f64; 3],
    slopes: Vec<SlopeReport>,
    chi2: f64,
}

#[derive(Serialize)]
struct Report {
    sensitivity_rad_per_s_per_t: f64,
    reference_um: [f64; 3],
    reference_center_mhz: Option<Estimate>,
    scans: Vec<ScanReport>,
    global: Option<GradientReport>,
    global_error: Option<String>,
    lines: Vec<GradientReport>,
}

fn um(v: &Vector3<f64>) -> [f64; 3] {
    [v.x / MICRO, v.y / MICRO, v.z / MICRO]
}

fn nt(e: Estimate) -> Estimate {
    Estimate::new(e.value * 1e9, e.sigma * 1e9)
}

fn gradient_report(line: String, fit: &GradientFit, points: usize) -> GradientReport {
    GradientReport {
        line,
        points,
        offset_nt: nt(fit.offset),
        centroid_um: um(&fit.centroid),
        slopes: fit
            .slopes
            .iter()
            .map(|s| SlopeReport { axis: AXIS_NAMES[s.axis.index()], slope: Estimate::new(s.slope.value * 1e3, s.slope.sigma * 1e3) })
            .collect(),
        chi2: fit.chi2,
    }
}

fn key(v: f64) -> i64 {
    (v / MICRO * 1e3).round() as i64
}

pub fn run(cfg: &RunConfig, args: &MagneticsArgs, out: &mut OutDir) -> CliResult<()> {
    let text = read_input(&args.scans)?;
    let scans = in_file(&args.scans, read_rabi(&text))?;
    let mc = &cfg.magnetics;
    let sensitivity = mc.sensitivity.unwrap_or_else(default_field_sensitivity);
    let reference = Vector3::from(mc.reference_um) * MICRO;

    let mut fits = Vec::with_capacity(scans.len());
    let mut failures = Vec::new();
    for s in &scans {
        if !matches!(s.scan.kind, penning_probe::sensing::ScanKind::Frequency { .. }) {
            return Err(CliError::input(format!("scan {}: field maps need frequency scans", s.id)));
        }
        match fit_rabi(&s.scan) {
            Ok(f) => fits.push(Some(f)),
            Err(e @ (penning_probe::Error::NoConvergence(_) | penning_probe::Error::Degenerate(_))) => {
                failures.push(format!("scan {}: {e}", s.id));
                fits.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let ref_index = scans.iter().position(|s| (s.site - reference).norm() <= 0.5 * MICRO);
    let Some(ref_index) = ref_index else {
        return Err(CliError::input(format!(
            "no scan at the reference site ({}, {}, {}) µm",
            mc.reference_um[0], mc.reference_um[1], mc.reference_um[2]
        )));
    };
    let omega_ref = fits[ref_index].as_ref().and_then(|f| f.center).map(|c| c.value);

    let mut points = Vec::new();
    let mut reports = Vec::new();
    for (s, f) in scans.iter().zip(&fits) {
        let center = f.as_ref().and_then(|f| f.center);
        let shift = match (center, omega_ref) {
            (Some(c), Some(w0)) => {
                let value = delta_b_from_delta_omega(c.value - w0, sensitivity)?;
                let sigma = delta_b_from_delta_omega(c.sigma, sensitivity)?.abs();
                points.push(GradientPoint { position: s.site, value, sigma });
                Some(Estimate::new(value * 1e9, sigma * 1e9))
            }
            _ => None,
        };
        reports.push(ScanReport {
            scan: s.id,
            site_um: um(&s.site),
            converged: f.is_some(),
            center_mhz: center.map(|c| Estimate::new(c.value / TWO_PI / 1e6, c.sigma / TWO_PI / 1e6)),
            rabi_khz: f.as_ref().map(|f| Estimate::new(f.rabi.value / TWO_PI / 1e3, f.rabi.sigma / TWO_PI / 1e3)),
            delta_b_nt: shift,
            chi2: f.as_ref().map(|f| f.chi2),
            error: if f.is_none() { failures.iter().find(|m| m.starts_with(&format!("scan {}:", s.id))).cloned() } else { None },
        });
    }

    let (global, global_error) = if points.len() >= 3 {
        match fit_gradient(&points) {
            Ok(g) => (Some(gradient_report(String::new(), &g, points.len())), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("fewer than 3 field shifts".to_string()))
    };

    let mut lines = Vec::new();
    let mut table = Table::new("magnetics-lines", &["series", "coordinate_um", "delta_b_nt", "sigma_nt"]);
    let mut plots: [Vec<Series>; 3] = Default::default();
    for axis in Axis::ALL {
        let a = axis.index();
        let mut groups: BTreeMap<(i64, i64), Vec<GradientPoint>> = BTreeMap::new();
        for p in &points {
            let others: Vec<i64> = (0..3).filter(|&j| j != a).map(|j| key(p.position[j])).collect();
            groups.entry((others[0], others[1])).or_default().push(*p);
        }
        for ((k1, k2), pts) in groups {
            let mut along: Vec<i64> = pts.iter().map(|p| key(p.position[a])).collect();
            along.sort_unstable();
            along.dedup();
            if along.len() < 3 {
                continue;
            }
            let fit = fit_gradient(&pts)?;
            let names: Vec<&str> = (0..3).filter(|&j| j != a).map(|j| AXIS_NAMES[j]).collect();
            let label =
                format!("along {} at {}={} {}={}", AXIS_NAMES[a], names[0], k1 as f64 / 1e3, names[1], k2 as f64 / 1e3);
            let slope = fit.slope(axis).map(|s| s.value * 1e3).unwrap_or(0.0);
            say!("{label}: {slope:.4} nT/µm");
            let mut sorted = pts.clone();
            sorted.sort_by(|p, q| p.position[a].total_cmp(&q.position[a]));
            let xs: Vec<f64> = sorted.iter().map(|p| p.position[a] / MICRO).collect();
            let ys: Vec<f64> = sorted.iter().map(|p| p.value * 1e9).collect();
            let es: Vec<f64> = sorted.iter().map(|p| p.sigma * 1e9).collect();
            let model: Vec<f64> = sorted
                .iter()
                .map(|p| (fit.offset.value + fit.slope(axis).map_or(0.0, |s| s.value) * (p.position[a] - fit.centroid[a])) * 1e9)
                .collect();
            for i in 0..xs.len() {
                table.push(vec![label.clone().into(), xs[i].into(), ys[i].into(), es[i].into()]);
            }
            for i in 0..xs.len() {
                table.push(vec![format!("{label} fit").into(), xs[i].into(), model[i].into(), 0.0.into()]);
            }
            plots[a].push(Series::new(&label, xs.clone(), ys, Style::Markers).with_errors(es));
            plots[a].push(Series::new(&format!("{slope:.3} nT/µm"), xs, model, Style::Line));
            lines.push(gradient_report(label, &fit, pts.len()));
        }
    }

    let report = Report {
        sensitivity_rad_per_s_per_t: sensitivity,
        reference_um: mc.reference_um,
        reference_center_mhz: omega_ref.map(|w| {
            let s = fits[ref_index].as_ref().and_then(|f| f.center).map_or(0.0, |c| c.sigma);
            Estimate::new(w / TWO_PI / 1e6, s / TWO_PI / 1e6)
        }),
        scans: reports,
        global,
        global_error,
        lines,
    };
    out.write_json("magnetics.json", &report)?;
    let mut shifts = Table::new("field-shifts", &["x_um", "y_um", "z_um", "delta_b_nt", "sigma_nt"]);
    for p in &points {
        let s = um(&p.position);
        shifts.push(vec![s[0].into(), s[1].into(), s[2].into(), (p.value * 1e9).into(), (p.sigma * 1e9).into()]);
    }
    out.write_table("field_shifts", &shifts)?;
    for (a, series) in plots.into_iter().enumerate() {
        if series.is_empty() {
            continue;
        }
        let name = AXIS_NAMES[a];
        let mut t = Table::new("magnetics-line", &["series", "coordinate_um", "delta_b_nt", "sigma_nt"]);
        for r in table.rows.iter().filter(|r| matches!(&r[0], crate::output::Cell::Text(s) if s.starts_with(&format!("along {name} ")))) {
            t.push(r.clone());
        }
        let svg = chart(&Chart {
            title: format!("Field shift along {name}"),
            x_label: format!("{name} (µm)"),
            y_label: "ΔB (nT)".into(),
            log_x: false,
            log_y: false,
            series,
        });
        out.write_plot(&format!("gradient_{name}"), &svg, &t)?;
    }
    if omega_ref.is_none() {
        return Err(CliError::NoConvergence("reference scan did not converge".into()));
    }
    if !failures.is_empty() {
        return Err(CliError::NoConvergence(failures.join("; ")));
    }
    Ok(())
}
