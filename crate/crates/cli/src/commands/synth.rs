use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;

use penning_probe::constants::{angular_to_mhz, mhz_to_angular, MICRO};
use penning_probe::electrodes::TrapModel;
use penning_probe::io::{write_dipole_grid, write_field_samples, write_heating, write_rabi, write_readings, SiteReading, SiteScan};
use penning_probe::noise::{record_spectrum, HeatingRecord};
use penning_probe::penning::{noise_from_heating_rate, ModeLabel};
use penning_probe::sensing::{iterate_calibration, CalibrationOptions};
use penning_probe::surfacecharge::work_function_shift;
use penning_probe::synth::{distance_scan, field_samples, frequency_scan, magnetics_scans, mode_omega, task_rng, CameraOracle, Scenario};
use penning_probe::Error;

use crate::cli::SynthArgs;
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::OutDir;

const CALIBRATION_STREAM: u64 = 1000;
const FIELDS_STREAM: u64 = 1;
const HEATING_STREAM: u64 = 2;
const FREQUENCY_STREAM: u64 = 3;
const RABI_STREAM: u64 = 4;

#[derive(Serialize)]
struct SiteTruth {
    site_um: [f64; 3],
    /// Stray field at the site, V/m.
    stray_field: [f64; 3],
    pairs: usize,
    converged: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct Truth {
    seed: u64,
    background_e_a_per_um2: f64,
    work_function_shift_v: f64,
    sites: Vec<SiteTruth>,
    frequency_alpha: f64,
    frequency_s_ref: f64,
    frequency_f_ref_mhz: f64,
    gradient_nt_per_um: [f64; 3],
    reference_center_mhz: f64,
}

fn layout_trap(cfg: &RunConfig, scenario: &Scenario, base: Option<&Path>) -> CliResult<TrapModel> {
    match &scenario.layout {
        Some(p) => {
            let p = Path::new(p);
            let p = match base {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.to_path_buf(),
            };
            Ok(TrapModel::load(&p)?)
        }
        None => cfg.trap(),
    }
}

pub fn run(cfg: &RunConfig, args: &SynthArgs, seed: Option<u64>, out: &mut OutDir) -> CliResult<()> {
    let mut scenario = match &args.scenario {
        Some(p) => in_file(p, Scenario::from_toml(&read_input(p)?))?,
        None => Scenario::default(),
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let base = args.scenario.as_deref().and_then(Path::parent);
    let trap = layout_trap(cfg, &scenario, base)?;
    let species = trap.species.clone();
    let seed = scenario.seed;
    out.write_bytes("scenario.toml", scenario.to_toml().as_bytes())?;

    let truth_grid = scenario.dipoles.truth()?;
    let mut truth_csv = Vec::new();
    write_dipole_grid(&mut truth_csv, &truth_grid, None, 0.0)?;
    out.write_bytes("truth_dipoles.csv", &truth_csv)?;
    let positions = scenario.dipoles.sample_positions();
    let samples = field_samples(&truth_grid, &positions, scenario.dipoles.relative_noise, &mut task_rng(seed, FIELDS_STREAM))?;
    let mut fields = Vec::new();
    write_field_samples(&mut fields, &samples)?;
    out.write_bytes("fields.csv", &fields)?;

    let cal = &scenario.calibration;
    let camera = scenario.camera.model();
    let opts = CalibrationOptions { f1: cal.f1, f2: cal.f2, max_iterations: cal.max_iterations, initial: Vector3::zeros() };
    let uniform = Vector3::from(cal.stray_field_v_per_m);
    let mut readings = Vec::new();
    let mut sites = Vec::new();
    for (i, s) in cal.sites_um.iter().enumerate() {
        let site = Vector3::from(*s) * MICRO;
        let stray = uniform + truth_grid.grid_field(&site)?;
        let mut oracle = CameraOracle::new(camera, species.clone(), stray, site.y, task_rng(seed, CALIBRATION_STREAM + i as u64));
        let mut truth = SiteTruth { site_um: *s, stray_field: stray.into(), pairs: 0, converged: false, error: None };
        match iterate_calibration(|e, f| oracle.read(e, f), &camera, &species, &opts) {
            Ok(c) => {
                truth.pairs = c.trace.len();
                truth.converged = c.converged;
                for step in &c.trace {
                    let pair = readings.len() as u32 / 2;
                    readings.push(SiteReading { pair, site, reading: step.first });
                    readings.push(SiteReading { pair, site, reading: step.second });
                }
            }
            Err(e @ (Error::IonLost(_) | Error::NoConvergence(_))) => truth.error = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
        sites.push(truth);
    }
    let mut buf = Vec::new();
    write_readings(&mut buf, &readings)?;
    out.write_bytes("readings.csv", &buf)?;

    let noise = &scenario.noise;
    let mut rng = task_rng(seed, HEATING_STREAM);
    let heights: Vec<f64> = noise.heights_um.iter().map(|h| h * MICRO).collect();
    let detached: Vec<f64> = noise.detached_heights_um.iter().map(|h| h * MICRO).collect();
    let mut records: Vec<HeatingRecord> = Vec::new();
    for mode in ModeLabel::ALL {
        let spec = noise.mode(mode);
        let params = spec.params(mode);
        records.extend(distance_scan(&params, &trap, mode_omega(spec), &heights, false, noise.relative_sigma, &mut rng)?);
        if mode == ModeLabel::Axial && !detached.is_empty() {
            records.extend(distance_scan(&params, &trap, mode_omega(spec), &detached, true, noise.relative_sigma, &mut rng)?);
        }
    }
    let mut buf = Vec::new();
    write_heating(&mut buf, &records)?;
    out.write_bytes("heating.csv", &buf)?;

    // Reference PSD at 1 MHz continues the axial surface term at the scan height.
    let omega_ref = mhz_to_angular(1.0);
    let axial = &noise.axial;
    let omega_ax = mode_omega(axial);
    let surface = axial.amplitude * (noise.scan_height_um / 100.0).powf(-axial.beta);
    let s_ax = noise_from_heating_rate(ModeLabel::Axial, &record_spectrum(&trap, ModeLabel::Axial, omega_ax)?, &species, surface);
    let s_ref = s_ax * (omega_ax / omega_ref).powf(noise.scan_alpha);
    let omegas: Vec<f64> = noise.scan_f_mhz.iter().map(|f| mhz_to_angular(*f)).collect();
    let freq = frequency_scan(
        &species,
        s_ref,
        omega_ref,
        noise.scan_alpha,
        &omegas,
        noise.scan_height_um * MICRO,
        noise.relative_sigma,
        &mut task_rng(seed, FREQUENCY_STREAM),
    )?;
    let mut buf = Vec::new();
    write_heating(&mut buf, &freq)?;
    out.write_bytes("frequency.csv", &buf)?;

    let (omega_spin, scans) = magnetics_scans(&scenario.magnetics, trap.b, &mut task_rng(seed, RABI_STREAM))?;
    let scans: Vec<SiteScan> =
        scans.into_iter().enumerate().map(|(i, (site, scan))| SiteScan { id: i as u32, site, scan }).collect();
    let mut buf = Vec::new();
    write_rabi(&mut buf, &scans)?;
    out.write_bytes("rabi.csv", &buf)?;

    let truth = Truth {
        seed,
        background_e_a_per_um2: scenario.dipoles.background,
        work_function_shift_v: work_function_shift(truth_grid.background),
        sites,
        frequency_alpha: noise.scan_alpha,
        frequency_s_ref: s_ref,
        frequency_f_ref_mhz: 1.0,
        gradient_nt_per_um: scenario.magnetics.gradient_nt_per_um,
        reference_center_mhz: angular_to_mhz(omega_spin),
    };
    out.write_json("truth.json", &truth)?;
    say!(
        "synthetic dataset: {} readings, {} field samples, {} heating records, {} frequency records, {} Rabi scans",
        readings.len(),
        samples.len(),
        records.len(),
        freq.len(),
        scans.len()
    );
    Ok(())
}
