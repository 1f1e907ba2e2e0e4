use std::collections::BTreeMap;

use serde::Serialize;

use penning_probe::constants::MICRO;
use penning_probe::io::{read_readings, SiteReading};
use penning_probe::penning::IonSpecies;
use penning_probe::sensing::extract_stray_field;

use crate::cli::StrayFieldArgs;
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};
use crate::plot::arrows;

#[derive(Serialize)]
struct SiteResult {
    site_um: [f64; 3],
    pair: u32,
    /// Stray field −∇φ_stray, V/m.
    stray_field: [f64; 3],
    sigma_stray: [f64; 3],
    /// Applied-field gradient coefficient, V/m.
    grad_phi_app: [f64; 3],
    sigma_app: [f64; 3],
}

#[derive(Serialize)]
struct Skipped {
    pair: u32,
    reason: String,
}

#[derive(Serialize)]
struct Report {
    sites: Vec<SiteResult>,
    skipped: Vec<Skipped>,
}

fn arr(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn run(cfg: &RunConfig, args: &StrayFieldArgs, out: &mut OutDir) -> CliResult<()> {
    let text = read_input(&args.readings)?;
    let readings = in_file(&args.readings, read_readings(&text))?;
    let camera = cfg.strayfield.camera.model();
    camera.validate()?;
    let species: IonSpecies = cfg.trap()?.species;

    let mut pairs: BTreeMap<u32, Vec<SiteReading>> = BTreeMap::new();
    for r in readings {
        pairs.entry(r.pair).or_default().push(r);
    }
    let mut problems = Vec::new();
    let mut by_site: BTreeMap<[i64; 3], SiteResult> = BTreeMap::new();
    let mut skipped = Vec::new();
    for (id, mut rs) in pairs {
        if rs.len() != 2 {
            problems.push(format!("pair {id}: {} readings, expected 2", rs.len()));
            continue;
        }
        if rs[0].site != rs[1].site {
            problems.push(format!("pair {id}: readings at different sites"));
            continue;
        }
        rs.sort_by(|a, b| a.reading.f_ax.total_cmp(&b.reading.f_ax));
        match extract_stray_field(&rs[0].reading, &rs[1].reading, &camera, &species) {
            Ok(r) => {
                let site = rs[0].site / MICRO;
                let key = [(site.x * 1e3).round() as i64, (site.y * 1e3).round() as i64, (site.z * 1e3).round() as i64];
                by_site.insert(
                    key,
                    SiteResult {
                        site_um: arr(&site),
                        pair: id,
                        stray_field: arr(&-r.grad_phi_stray),
                        sigma_stray: arr(&r.sigma_stray),
                        grad_phi_app: arr(&r.grad_phi_app),
                        sigma_app: arr(&r.sigma_app),
                    },
                );
            }
            Err(e) => skipped.push(Skipped { pair: id, reason: e.to_string() }),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::input(format!("{}: {}", args.readings.display(), problems.join("; "))));
    }
    if by_site.is_empty() {
        return Err(CliError::input("no co-located reading pair; nothing to extract"));
    }
    let sites: Vec<SiteResult> = by_site.into_values().collect();
    let mut table = Table::new(
        "stray-field-map",
        &["x_um", "y_um", "z_um", "ex_v_per_m", "ey_v_per_m", "ez_v_per_m", "sigma_ex", "sigma_ey", "sigma_ez", "pair"],
    );
    let mut groups: BTreeMap<i64, Vec<[f64; 4]>> = BTreeMap::new();
    for s in &sites {
        let mut row: Vec<_> = s.site_um.iter().chain(&s.stray_field).chain(&s.sigma_stray).map(|v| (*v).into()).collect();
        row.push((s.pair as i64).into());
        table.push(row);
        groups
            .entry((s.site_um[1] * 1e3).round() as i64)
            .or_default()
            .push([s.site_um[0], s.site_um[2], s.stray_field[0], s.stray_field[2]]);
        say!(
            "site ({:.1}, {:.1}, {:.1}) µm: E = ({:.2}, {:.2}, {:.2}) V/m",
            s.site_um[0], s.site_um[1], s.site_um[2], s.stray_field[0], s.stray_field[1], s.stray_field[2]
        );
    }
    let groups: Vec<(String, Vec<[f64; 4]>)> =
        groups.into_iter().map(|(h, v)| (format!("d = {} µm", h as f64 / 1e3), v)).collect();
    out.write_json("strayfield.json", &Report { sites, skipped })?;
    out.write_table("field_map", &table)?;
    let svg = arrows("Stray field (x, z components)", &groups, "V/m");
    let mut plot = Table::new("stray-field-arrows", &["group", "x_um", "z_um", "ex_v_per_m", "ez_v_per_m"]);
    for (g, items) in &groups {
        for a in items {
            plot.push(vec![g.as_str().into(), a[0].into(), a[1].into(), a[2].into(), a[3].into()]);
        }
    }
    out.write_plot("field_map_plot", &svg, &plot)
}
