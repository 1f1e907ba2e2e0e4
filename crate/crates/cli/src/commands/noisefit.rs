use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::Serialize;

use penning_probe::constants::{angular_to_mhz, mhz_to_angular, MICRO};
use penning_probe::electrodes::TrapModel;
use penning_probe::fit::Estimate;
use penning_probe::io::read_heating;
use penning_probe::noise::{
    fit_distance_scaling, fit_frequency_scaling, model_rate, record_spectrum, DistanceFit, DistanceFitOptions,
    HeatingRecord, RateBreakdown,
};
use penning_probe::penning::{noise_from_heating_rate, ModeLabel};

use crate::cli::{NoiseFitArgs, Scaling};
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};
use crate::plot::{chart, Chart, Series, Style};

fn mode_name(mode: ModeLabel) -> &'static str {
    match mode {
        ModeLabel::Axial => "axial",
        ModeLabel::Cyclotron => "cyclotron",
        ModeLabel::Magnetron => "magnetron",
    }
}

#[derive(Serialize)]
struct PointReport {
    d_um: f64,
    f_mhz: f64,
    detached: bool,
    rate: f64,
    sigma: f64,
    residual: f64,
    breakdown: RateBreakdown,
}

#[derive(Serialize)]
struct ModeReport {
    mode: &'static str,
    records: usize,
    converged: bool,
    amplitude_at_100um: f64,
    beta: f64,
    /// Correlated voltage PSD (V²/Hz) for radial modes, interference rate (q/s) for the axial mode.
    technical: f64,
    technical_unit: &'static str,
    sigmas: Option<[f64; 3]>,
    covariance: Option<[[f64; 3]; 3]>,
    johnson: bool,
    chi2: f64,
    dof: usize,
    points: Vec<PointReport>,
}

#[derive(Serialize)]
struct DistanceReport {
    modes: Vec<ModeReport>,
    skipped: Vec<String>,
}

pub fn run(cfg: &RunConfig, args: &NoiseFitArgs, out: &mut OutDir) -> CliResult<()> {
    let text = read_input(&args.records)?;
    let records = in_file(&args.records, read_heating(&text))?;
    let trap = cfg.trap()?;
    match args.scaling {
        Scaling::Distance => distance(cfg, &trap, &records, out),
        Scaling::Frequency => frequency(cfg, &trap, &records, out),
    }
}

fn distance(cfg: &RunConfig, trap: &TrapModel, records: &[HeatingRecord], out: &mut OutDir) -> CliResult<()> {
    let nc = &cfg.noisefit;
    let opts = DistanceFitOptions {
        johnson: nc.johnson,
        technical: nc.technical,
        beta_min: nc.beta_min,
        beta_max: nc.beta_max,
        beta_step: nc.beta_step,
    };
    let mut by_mode: BTreeMap<ModeLabel, Vec<HeatingRecord>> = BTreeMap::new();
    for r in records {
        by_mode.entry(r.mode).or_default().push(*r);
    }
    let mut modes = Vec::new();
    let mut skipped = Vec::new();
    let mut failed = Vec::new();
    for (mode, recs) in &by_mode {
        let fit = match fit_distance_scaling(recs, trap, &opts) {
            Ok(f) => f,
            Err(penning_probe::Error::InvalidParameter(m)) => {
                skipped.push(format!("{}: {m}", mode_name(*mode)));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for b in &fit.breakdown {
            let sum = b.johnson + b.surface + b.technical;
            if (sum - b.total).abs() > 1e-12 * b.total.abs() {
                return Err(CliError::Internal(format!("{} breakdown does not sum to the total", mode_name(*mode))));
            }
        }
        if !fit.converged {
            failed.push(mode_name(*mode));
        }
        say!(
            "{}: β = {:.3}, amplitude {:.4} q/s at 100 µm, technical {:.4e}, χ² = {:.2}/{}",
            mode_name(*mode),
            fit.params.beta,
            fit.params.amplitude,
            fit.params.technical(),
            fit.chi2,
            fit.dof
        );
        overlay(trap, *mode, recs, &fit, out)?;
        modes.push(mode_report(*mode, recs, fit));
    }
    if modes.is_empty() {
        return Err(CliError::input(format!("no mode has enough distances to fit: {}", skipped.join("; "))));
    }
    out.write_json("noisefit.json", &DistanceReport { modes, skipped })?;
    if !failed.is_empty() {
        return Err(CliError::NoConvergence(format!("exponent at the grid edge for {}", failed.join(", "))));
    }
    Ok(())
}

fn mode_report(mode: ModeLabel, recs: &[HeatingRecord], fit: DistanceFit) -> ModeReport {
    let p = &fit.params;
    let points = recs
        .iter()
        .zip(&fit.breakdown)
        .zip(&fit.residuals)
        .map(|((r, b), res)| PointReport {
            d_um: r.distance / MICRO,
            f_mhz: angular_to_mhz(r.omega),
            detached: r.detached,
            rate: r.rate,
            sigma: r.sigma_rate,
            residual: *res,
            breakdown: *b,
        })
        .collect();
    ModeReport {
        mode: mode_name(mode),
        records: recs.len(),
        converged: fit.converged,
        amplitude_at_100um: p.amplitude,
        beta: p.beta,
        technical: p.technical(),
        technical_unit: if mode.is_radial() { "V^2/Hz" } else { "q/s" },
        sigmas: p.estimates().map(|e| e.map(|x| x.sigma)),
        covariance: p.covariance,
        johnson: p.johnson,
        chi2: fit.chi2,
        dof: fit.dof,
        points,
    }
}

/// Measured rates with the fitted model and its three components, the
/// model evaluated on a log-spaced distance grid through the mean lateral
/// position of the attached records.
fn overlay(trap: &TrapModel, mode: ModeLabel, recs: &[HeatingRecord], fit: &DistanceFit, out: &mut OutDir) -> CliResult<()> {
    let attached: Vec<&HeatingRecord> = recs.iter().filter(|r| !r.detached).collect();
    let base = if attached.is_empty() { recs.iter().collect() } else { attached };
    let n = base.len() as f64;
    let x = base.iter().map(|r| r.position.x).sum::<f64>() / n;
    let z = base.iter().map(|r| r.position.z).sum::<f64>() / n;
    let omega = base.iter().map(|r| r.omega).sum::<f64>() / n;
    let lo = recs.iter().map(|r| r.distance).fold(f64::INFINITY, f64::min);
    let hi = recs.iter().map(|r| r.distance).fold(0.0, f64::max);
    let mut table = Table::new("noise-overlay", &["series", "d_um", "value", "sigma"]);
    let mut measured = (Vec::new(), Vec::new(), Vec::new());
    let mut detached = (Vec::new(), Vec::new(), Vec::new());
    for r in recs {
        let name = if r.detached { "measured_detached" } else { "measured" };
        table.push(vec![name.into(), (r.distance / MICRO).into(), r.rate.into(), r.sigma_rate.into()]);
        let s = if r.detached { &mut detached } else { &mut measured };
        s.0.push(r.distance / MICRO);
        s.1.push(r.rate);
        s.2.push(r.sigma_rate);
    }
    let count = 60;
    let mut curves: [(&str, Vec<f64>); 4] =
        [("total", Vec::new()), ("johnson", Vec::new()), ("surface", Vec::new()), ("technical", Vec::new())];
    let mut ds = Vec::with_capacity(count);
    for i in 0..count {
        let d = lo * (hi / lo).powf(i as f64 / (count - 1) as f64);
        let rec = HeatingRecord {
            mode,
            position: Vector3::new(x, d, z),
            distance: d,
            omega,
            rate: 0.0,
            sigma_rate: 1.0,
            detached: false,
        };
        let b = model_rate(&fit.params, trap, &rec)?;
        ds.push(d / MICRO);
        for (c, v) in curves.iter_mut().zip([b.total, b.johnson, b.surface, b.technical]) {
            c.1.push(v);
        }
    }
    for (name, vals) in &curves {
        for (d, v) in ds.iter().zip(vals) {
            table.push(vec![(*name).into(), (*d).into(), (*v).into(), 0.0.into()]);
        }
    }
    let mut series = vec![Series::new("measured", measured.0, measured.1, Style::Markers).with_errors(measured.2)];
    if !detached.0.is_empty() {
        series.push(Series::new("electrodes detached", detached.0, detached.1, Style::Markers).with_errors(detached.2));
    }
    for (name, vals) in curves {
        let style = if name == "total" { Style::Line } else { Style::Dashed };
        if vals.iter().any(|v| *v > 0.0) {
            series.push(Series::new(name, ds.clone(), vals, style));
        }
    }
    let svg = chart(&Chart {
        title: format!("{} heating rate vs distance", mode_name(mode)),
        x_label: "ion-electrode distance (µm)".into(),
        y_label: "heating rate (quanta/s)".into(),
        log_x: true,
        log_y: true,
        series,
    });
    out.write_plot(&format!("overlay_{}", mode_name(mode)), &svg, &table)
}

#[derive(Serialize)]
struct GroupReport {
    mode: &'static str,
    d_um: f64,
    records: usize,
    alpha: Estimate,
    /// Field PSD at the reference frequency, V² m⁻² Hz⁻¹.
    s_ref: Estimate,
    f_ref_mhz: f64,
    chi2: f64,
    rejected: Vec<usize>,
}

fn frequency(cfg: &RunConfig, trap: &TrapModel, records: &[HeatingRecord], out: &mut OutDir) -> CliResult<()> {
    let f_ref = cfg.noisefit.f_ref_mhz;
    let omega_ref = mhz_to_angular(f_ref);
    let mut groups: BTreeMap<(ModeLabel, i64), Vec<HeatingRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.mode, (r.distance / MICRO * 1e3).round() as i64)).or_default().push(*r);
    }
    let mut reports = Vec::new();
    let mut table = Table::new("noise-frequency", &["series", "f_mhz", "s_e", "sigma"]);
    let mut series = Vec::new();
    for ((mode, _), recs) in &groups {
        let fit = match fit_frequency_scaling(recs, trap, omega_ref) {
            Ok(f) => f,
            Err(penning_probe::Error::InvalidParameter(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let d_um = recs[0].distance / MICRO;
        let label = format!("{} d={}um", mode_name(*mode), d_um);
        let (mut fs, mut ss, mut es) = (Vec::new(), Vec::new(), Vec::new());
        for r in recs.iter().filter(|r| r.rate > 0.0) {
            let spectrum = record_spectrum(trap, r.mode, r.omega)?;
            let s = noise_from_heating_rate(r.mode, &spectrum, &trap.species, r.rate);
            let e = s * r.sigma_rate / r.rate;
            let f = angular_to_mhz(r.omega);
            table.push(vec![label.clone().into(), f.into(), s.into(), e.into()]);
            fs.push(f);
            ss.push(s);
            es.push(e);
        }
        let lo = fs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fs.iter().copied().fold(0.0, f64::max);
        let line_f: Vec<f64> = (0..40).map(|i| lo * (hi / lo).powf(i as f64 / 39.0)).collect();
        let line_s: Vec<f64> = line_f.iter().map(|f| fit.amplitude.value * (f / f_ref).powf(-fit.alpha.value)).collect();
        for (f, s) in line_f.iter().zip(&line_s) {
            table.push(vec![format!("{label} fit").into(), (*f).into(), (*s).into(), 0.0.into()]);
        }
        series.push(Series::new(&label, fs, ss, Style::Markers).with_errors(es));
        series.push(Series::new(&format!("α = {:.3}", fit.alpha.value), line_f, line_s, Style::Line));
        say!("{label}: α = {:.4} ± {:.4}", fit.alpha.value, fit.alpha.sigma);
        reports.push(GroupReport {
            mode: mode_name(*mode),
            d_um,
            records: recs.len(),
            alpha: fit.alpha,
            s_ref: fit.amplitude,
            f_ref_mhz: f_ref,
            chi2: fit.chi2,
            rejected: fit.rejected,
        });
    }
    if reports.is_empty() {
        return Err(CliError::input("no (mode, distance) group has 3 or more frequencies with positive rates"));
    }
    out.write_json("frequency.json", &reports)?;
    let svg = chart(&Chart {
        title: "Field-noise spectrum".into(),
        x_label: "mode frequency (MHz)".into(),
        y_label: "S_E (V²/m²/Hz)".into(),
        log_x: true,
        log_y: true,
        series,
    });
    out.write_plot("frequency_scaling", &svg, &table)
}
