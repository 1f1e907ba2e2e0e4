use serde::Serialize;

use penning_probe::constants::{angular_to_mhz, mhz_to_angular};
use penning_probe::io::read_table;
use penning_probe::penning::{ModeSpectrum, SpectrumConsistency};

use crate::cli::ModesArgs;
use crate::commands::{in_file, read_input};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};

const INPUT_COLUMNS: [&str; 2] = ["b_t", "f_z_mhz"];

#[derive(Serialize)]
struct Validation {
    f_c_mhz: f64,
    f_plus_mhz: f64,
    f_minus_mhz: f64,
    f_z_mhz: f64,
    /// f₊ + f₋ − fc, kHz.
    sum_mismatch_khz: f64,
    /// f₊f₋ − fz²/2, MHz².
    product_mismatch_mhz2: f64,
    /// f₊² + f₋² + fz² − fc², MHz².
    quadrature_mismatch_mhz2: f64,
    max_relative: f64,
    consistent_1e9: bool,
    /// Spectrum implied by the quoted fc and fz.
    implied: [f64; 4],
}

fn validate(q: &[f64], out: &mut OutDir) -> CliResult<()> {
    let [fc, fp, fm, fz] = <[f64; 4]>::try_from(q)
        .map_err(|_| CliError::input("--validate takes four values: fc,f+,f-,fz (MHz)"))?;
    if q.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::input("quoted frequencies must be positive"));
    }
    let quoted = ModeSpectrum {
        omega_c: mhz_to_angular(fc),
        omega_plus: mhz_to_angular(fp),
        omega_minus: mhz_to_angular(fm),
        omega_z: mhz_to_angular(fz),
    };
    let c: SpectrumConsistency = quoted.consistency();
    let implied = ModeSpectrum::from_cyclotron(quoted.omega_c, quoted.omega_z)?;
    let w2 = mhz_to_angular(1.0).powi(2);
    let v = Validation {
        f_c_mhz: fc,
        f_plus_mhz: fp,
        f_minus_mhz: fm,
        f_z_mhz: fz,
        sum_mismatch_khz: angular_to_mhz(c.sum_mismatch) * 1e3,
        product_mismatch_mhz2: c.product_mismatch / w2,
        quadrature_mismatch_mhz2: c.quadrature_mismatch / w2,
        max_relative: c.max_relative(&quoted),
        consistent_1e9: c.is_consistent(&quoted, 1e-9),
        implied: [
            angular_to_mhz(implied.omega_c),
            angular_to_mhz(implied.omega_plus),
            angular_to_mhz(implied.omega_minus),
            angular_to_mhz(implied.omega_z),
        ],
    };
    say!(
        "sum mismatch {:.3} kHz, product mismatch {:.4e} MHz², quadrature mismatch {:.4e} MHz²",
        v.sum_mismatch_khz, v.product_mismatch_mhz2, v.quadrature_mismatch_mhz2
    );
    out.write_json("validation.json", &v)
}

pub fn run(cfg: &RunConfig, args: &ModesArgs, out: &mut OutDir) -> CliResult<()> {
    if let Some(q) = &args.validate {
        return validate(q, out);
    }
    let trap = cfg.trap()?;
    let b = args.b_tesla.or(cfg.modes.b_tesla).unwrap_or(trap.b);
    let mut rows: Vec<(f64, f64)> = Vec::new();
    if let Some(path) = &args.input {
        let text = read_input(path)?;
        let t = in_file(path, read_table(&text, "modes-input", &INPUT_COLUMNS))?;
        let mut problems = Vec::new();
        for (i, r) in t.rows.iter().enumerate() {
            match (r[0].parse::<f64>(), r[1].parse::<f64>()) {
                (Ok(b), Ok(f)) if b > 0.0 && f > 0.0 => rows.push((b, f)),
                _ => problems.push(format!("row {}: expected two positive numbers", i + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(CliError::input(format!("{}: {}", path.display(), problems.join("; "))));
        }
    } else {
        let fz = if args.f_z_mhz.is_empty() { &cfg.modes.f_z_mhz } else { &args.f_z_mhz };
        if fz.is_empty() {
            return Err(CliError::input("no axial frequencies given"));
        }
        rows.extend(fz.iter().map(|f| (b, *f)));
    }
    let mut table = Table::new("modes", &["b_t", "f_z_mhz", "f_c_mhz", "f_plus_mhz", "f_minus_mhz"]);
    for (b, fz) in rows {
        if !(b > 0.0 && fz > 0.0) {
            return Err(CliError::input("field and axial frequency must be positive"));
        }
        let s = ModeSpectrum::from_cyclotron(trap.species.cyclotron_frequency(b), mhz_to_angular(fz))?;
        let c = s.consistency();
        if !c.is_consistent(&s, 1e-12) {
            return Err(CliError::Internal(format!("spectrum identities violated: {c:?}")));
        }
        say!(
            "B = {b} T  fz = {fz} MHz  fc = {:.6} MHz  f+ = {:.6} MHz  f- = {:.6} MHz",
            angular_to_mhz(s.omega_c),
            angular_to_mhz(s.omega_plus),
            angular_to_mhz(s.omega_minus)
        );
        table.push(vec![
            b.into(),
            fz.into(),
            angular_to_mhz(s.omega_c).into(),
            angular_to_mhz(s.omega_plus).into(),
            angular_to_mhz(s.omega_minus).into(),
        ]);
    }
    out.write_table("modes", &table)
}
