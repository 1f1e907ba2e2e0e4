use nalgebra::Vector3;
use serde::Serialize;

use penning_probe::constants::{mhz_to_angular, MICRO};
use penning_probe::transport::{equilibrium_position, make_waveform, WaveformOptions};

use crate::cli::TransportArgs;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};
use crate::plot::{chart, Chart, Series, Style};

#[derive(Serialize)]
struct Report {
    from_um: [f64; 3],
    to_um: [f64; 3],
    samples: usize,
    duration_ms: f64,
    speed_m_per_s: f64,
    max_abs_voltage: f64,
    max_second_difference_v: f64,
    /// Distance between the target and the equilibrium of the final sample, µm.
    endpoint_error_um: f64,
}

fn position(v: Option<&Vec<f64>>, fallback: [f64; 3], name: &str) -> CliResult<[f64; 3]> {
    match v {
        None => Ok(fallback),
        Some(v) => <[f64; 3]>::try_from(v.as_slice()).map_err(|_| CliError::input(format!("--{name} needs x,y,z in µm"))),
    }
}

pub fn run(cfg: &RunConfig, args: &TransportArgs, out: &mut OutDir) -> CliResult<()> {
    let tc = &cfg.transport;
    let from = position(args.from.as_ref(), tc.from_um, "from")?;
    let to = position(args.to.as_ref(), tc.to_um, "to")?;
    let trap = cfg.trap()?;
    let mut opts = WaveformOptions::new(mhz_to_angular(tc.f_z_mhz));
    opts.speed = args.speed.unwrap_or(tc.speed_m_per_s);
    opts.step = tc.step_um * MICRO;
    opts.lag_tolerance = tc.lag_tolerance_v;
    opts.solve.v_max = tc.v_max;
    let a = Vector3::from(from) * MICRO;
    let b = Vector3::from(to) * MICRO;
    let wf = make_waveform(&trap, &[a, b], &opts)?;
    let mut csv = Vec::new();
    wf.write_csv(&mut csv)?;
    out.write_bytes("waveform.csv", &csv)?;

    let last = wf.samples.last().ok_or_else(|| CliError::Internal("empty waveform".into()))?;
    let eq = equilibrium_position(&trap, &last.voltages, &last.position)?;
    let report = Report {
        from_um: from,
        to_um: to,
        samples: wf.samples.len(),
        duration_ms: wf.duration * 1e3,
        speed_m_per_s: wf.speed,
        max_abs_voltage: wf.samples.iter().flat_map(|s| s.voltages.iter()).fold(0.0, |m, v| m.max(v.abs())),
        max_second_difference_v: wf.max_second_difference(),
        endpoint_error_um: (eq - last.position).norm() / MICRO,
    };
    say!("{} samples over {:.3} ms", report.samples, report.duration_ms);
    out.write_json("transport.json", &report)?;

    let mut cols = vec!["t_ms"];
    cols.extend(wf.ids.iter().map(String::as_str));
    let mut table = Table::new("waveform-plot", &cols);
    for s in &wf.samples {
        let mut row = vec![(s.t * 1e3).into()];
        row.extend(s.voltages.iter().map(|v| (*v).into()));
        table.push(row);
    }
    let ts: Vec<f64> = wf.samples.iter().map(|s| s.t * 1e3).collect();
    let series = wf
        .ids
        .iter()
        .enumerate()
        .filter(|(j, _)| wf.samples.iter().any(|s| s.voltages[*j].abs() > 1e-3 * report.max_abs_voltage))
        .map(|(j, id)| Series::new(id, ts.clone(), wf.samples.iter().map(|s| s.voltages[j]).collect(), Style::Line))
        .collect();
    let svg = chart(&Chart {
        title: "Transport waveform".into(),
        x_label: "t (ms)".into(),
        y_label: "voltage (V)".into(),
        series,
        ..Default::default()
    });
    out.write_plot("waveform_plot", &svg, &table)
}
