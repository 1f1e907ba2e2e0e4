use serde::Serialize;

use penning_probe::constants::{dipole_density_to_e_angstrom, MICRO};
use penning_probe::geometry::Rect;
use penning_probe::io::{read_field_samples, write_dipole_grid};
use penning_probe::surfacecharge::{lambda_candidates, work_function_shift, GridSpec, InversionProblem, LCurvePoint};

use crate::cli::DipolesArgs;
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};
use crate::plot::{chart, heatmap, Chart, Series, Style};

#[derive(Serialize)]
struct Report {
    lambda: f64,
    lambda_from_l_curve: bool,
    observations: usize,
    unknowns: usize,
    chi2: f64,
    effective_parameters: f64,
    under_constrained: bool,
    background_e_a_per_um2: f64,
    background_sigma: f64,
    work_function_shift_v: f64,
    l_curve: Vec<LCurvePoint>,
}

pub fn run(cfg: &RunConfig, args: &DipolesArgs, out: &mut OutDir) -> CliResult<()> {
    let text = read_input(&args.fields)?;
    let samples = in_file(&args.fields, read_field_samples(&text))?;
    let dc = &cfg.dipoles;
    let [x1, x2, z1, z2] = dc.region_um;
    let spec = GridSpec::new(Rect::new(x1 * MICRO, x2 * MICRO, z1 * MICRO, z2 * MICRO)?, dc.nx, dc.nz)?;
    let problem = InversionProblem::new(&samples, spec)?;
    let (lambda, l_curve) = match args.lambda.or(dc.lambda) {
        Some(l) => (l, Vec::new()),
        None => {
            if dc.lambda_count < 3 {
                return Err(CliError::input("lambda_count must be at least 3"));
            }
            let k = problem.normal_scale().log10();
            let lc = problem.l_curve(&lambda_candidates(k + dc.lambda_decades[0], k + dc.lambda_decades[1], dc.lambda_count))?;
            (lc.chosen, lc.points)
        }
    };
    let inv = problem.solve(lambda)?;
    let bg = dipole_density_to_e_angstrom(inv.grid.background);
    let report = Report {
        lambda,
        lambda_from_l_curve: !l_curve.is_empty(),
        observations: inv.observations,
        unknowns: inv.unknowns,
        chi2: inv.chi2,
        effective_parameters: inv.effective_parameters,
        under_constrained: inv.under_constrained(),
        background_e_a_per_um2: bg,
        background_sigma: dipole_density_to_e_angstrom(inv.background_sigma),
        work_function_shift_v: work_function_shift(inv.grid.background),
        l_curve,
    };
    say!("λ = {lambda:.4e}, background {bg:.1} e·Å/µm², χ² = {:.1} over {} observations", inv.chi2, inv.observations);
    out.write_json("dipoles.json", &report)?;
    let mut csv = Vec::new();
    write_dipole_grid(&mut csv, &inv.grid, Some(&inv.density_sigmas), inv.background_sigma)?;
    out.write_bytes("dipoles.csv", &csv)?;

    let totals: Vec<f64> = inv.grid.densities.iter().map(|d| dipole_density_to_e_angstrom(d + inv.grid.background)).collect();
    let mut map = Table::new("dipole-map", &["x_um", "z_um", "density_e_a_per_um2"]);
    for (((x, z), _), d) in inv.grid.centers().iter().zip(&totals) {
        map.push(vec![(x / MICRO).into(), (z / MICRO).into(), (*d).into()]);
    }
    let svg = heatmap("Dipole-moment density", dc.region_um, dc.nx, dc.nz, &totals, bg, "e·Å/µm²");
    out.write_plot("dipole_map", &svg, &map)?;

    if !report.l_curve.is_empty() {
        let mut t = Table::new("l-curve", &["lambda", "residual_norm", "solution_norm"]);
        for p in &report.l_curve {
            t.push(vec![p.lambda.into(), p.residual_norm.into(), p.solution_norm.into()]);
        }
        let xs = t.column("residual_norm").unwrap_or_default();
        let ys = t.column("solution_norm").unwrap_or_default();
        let chosen = report.l_curve.iter().find(|p| p.lambda == lambda).map(|p| (p.residual_norm, p.solution_norm));
        let mut series = vec![Series::new("candidates", xs, ys, Style::Markers)];
        if let Some((x, y)) = chosen {
            series.push(Series::new("chosen", vec![x], vec![y], Style::Markers));
        }
        let svg = chart(&Chart {
            title: "L-curve".into(),
            x_label: "weighted residual norm".into(),
            y_label: "density norm (e·Å/µm²)".into(),
            log_x: true,
            log_y: true,
            series,
        });
        out.write_plot("l_curve", &svg, &t)?;
    }
    Ok(())
}
