//! Versioned CSV tables. Every file starts with `# penning-probe-schema v1
//! kind=<kind>`, may carry further `# key=value` lines, then a header row
//! that must match the kind's column list exactly. I/O units are µm, MHz,
//! V/m and quanta/s; values are SI in memory.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::constants::{dipole_density_to_e_angstrom, MICRO, TWO_PI};
use crate::error::{Error, Result};
use crate::noise::HeatingRecord;
use crate::penning::ModeLabel;
use crate::sensing::{PositionReading, RabiPoint, RabiScan, ScanKind};
use crate::surfacecharge::{DipoleGrid, FieldSample};
use crate::SCHEMA_TAG;

pub const FIELD_COLUMNS: [&str; 9] =
    ["x_um", "y_um", "z_um", "ex_v_per_m", "ey_v_per_m", "ez_v_per_m", "sigma_ex", "sigma_ey", "sigma_ez"];
pub const READING_COLUMNS: [&str; 11] = [
    "pair", "x_um", "y_um", "z_um", "f_ax", "ex_app_v_per_m", "ey_app_v_per_m", "ez_app_v_per_m", "px", "pz", "width_px",
];
pub const HEATING_COLUMNS: [&str; 9] =
    ["mode", "x_um", "y_um", "z_um", "d_um", "f_mhz", "rate_q_per_s", "sigma_q_per_s", "detached"];
pub const RABI_COLUMNS: [&str; 9] = ["scan", "x_um", "y_um", "z_um", "kind", "fixed", "abscissa", "p_up", "shots"];
pub const GRID_COLUMNS: [&str; 7] = ["index", "x1_um", "x2_um", "z1_um", "z2_um", "density_e_a_per_um2", "sigma"];

/// Parsed table: `# key=value` metadata and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<Vec<String>>,
}

pub fn schema_line(kind: &str) -> String {
    format!("# {SCHEMA_TAG} kind={kind}")
}

/// Splits the header block and checks the schema tag, kind and columns.
pub fn read_table(text: &str, kind: &str, columns: &[&str]) -> Result<Table> {
    let mut lines = text.lines().peekable();
    let first = lines.next().ok_or_else(|| Error::Schema("empty file".into()))?;
    let expected = schema_line(kind);
    if first.trim_end() != expected {
        return Err(Error::Schema(format!("line 1: expected `{expected}`, found `{}`", first.trim_end())));
    }
    let mut meta = BTreeMap::new();
    let mut consumed = 1;
    while let Some(line) = lines.peek() {
        let Some(body) = line.strip_prefix('#') else { break };
        consumed += 1;
        if let Some((k, v)) = body.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        lines.next();
    }
    let rest = lines.collect::<Vec<&str>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(rest.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != columns {
        return Err(Error::Schema(format!(
            "line {}: columns {:?} do not match kind `{kind}` ({:?})",
            consumed + 1,
            header,
            columns
        )));
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = consumed + 2 + i;
        let rec = rec?;
        if rec.len() != columns.len() {
            problems.push(format!("line {line}: {} fields, expected {}", rec.len(), columns.len()));
            continue;
        }
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if !problems.is_empty() {
        return Err(Error::Schema(problems.join("; ")));
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("kind `{kind}`: no data rows")));
    }
    Ok(Table { kind: kind.to_string(), meta, rows })
}

/// Typed cell access that collects per-row diagnostics.
struct Cells<'a> {
    columns: &'a [&'a str],
    row: &'a [String],
    line: usize,
    problems: &'a mut Vec<String>,
}

impl Cells<'_> {
    fn get<T: FromStr>(&mut self, col: usize) -> Option<T> {
        match self.row[col].parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems.push(format!("row {}, column `{}`: cannot parse `{}`", self.line, self.columns[col], self.row[col]));
                None
            }
        }
    }

    fn float(&mut self, col: usize) -> Option<f64> {
        let v = self.get::<f64>(col)?;
        if v.is_finite() {
            Some(v)
        } else {
            self.problems.push(format!("row {}, column `{}`: non-finite value", self.line, self.columns[col]));
            None
        }
    }

    fn vec3(&mut self, col: usize, scale: f64) -> Option<Vector3<f64>> {
        let (a, b, c) = (self.float(col), self.float(col + 1), self.float(col + 2));
        Some(Vector3::new(a?, b?, c?) * scale)
    }

    fn fail(&mut self, msg: impl Display) {
        self.problems.push(format!("row {}: {msg}", self.line));
    }
}

fn parse_rows<T>(table: &Table, columns: &[&str], mut f: impl FnMut(&mut Cells) -> Option<T>) -> Result<Vec<T>> {
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        let mut cells = Cells { columns, row, line: i + 1, problems: &mut problems };
        if let Some(v) = f(&mut cells) {
            out.push(v);
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Schema(problems.join("; ")))
    }
}

fn write_table<W: Write>(w: W, kind: &str, meta: &[(&str, String)], columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = w;
    writeln!(w, "{}", schema_line(kind))?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

fn um(v: f64) -> String {
    (v / MICRO).to_string()
}

pub fn write_field_samples<W: Write>(w: W, samples: &[FieldSample]) -> Result<()> {
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![um(s.position.x), um(s.position.y), um(s.position.z)];
            r.extend(s.field.iter().map(|v| v.to_string()));
            r.extend(s.sigma.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_table(w, "fields", &[], &FIELD_COLUMNS, &rows)
}

pub fn read_field_samples(text: &str) -> Result<Vec<FieldSample>> {
    let t = read_table(text, "fields", &FIELD_COLUMNS)?;
    parse_rows(&t, &FIELD_COLUMNS, |c| {
        let (p, e, s) = (c.vec3(0, MICRO), c.vec3(3, 1.0), c.vec3(6, 1.0));
        match FieldSample::new(p?, e?, s?) {
            Ok(v) => Some(v),
            Err(err) => {
                c.fail(err);
                None
            }
        }
    })
}

/// Camera reading tagged with a pair id and the measurement site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteReading {
    pub pair: u32,
    pub site: Vector3<f64>,
    pub reading: PositionReading,
}

pub fn write_readings<W: Write>(w: W, readings: &[SiteReading]) -> Result<()> {
    let rows: Vec<Vec<String>> = readings
        .iter()
        .map(|s| {
            let r = &s.reading;
            vec![
                s.pair.to_string(),
                um(s.site.x),
                um(s.site.y),
                um(s.site.z),
                r.f_ax.to_string(),
                r.applied.x.to_string(),
                r.applied.y.to_string(),
                r.applied.z.to_string(),
                r.px.to_string(),
                r.pz.to_string(),
                r.width.to_string(),
            ]
        })
        .collect();
    write_table(w, "readings", &[], &READING_COLUMNS, &rows)
}

pub fn read_readings(text: &str) -> Result<Vec<SiteReading>> {
    let t = read_table(text, "readings", &READING_COLUMNS)?;
    parse_rows(&t, &READING_COLUMNS, |c| {
        let pair = c.get::<u32>(0);
        let site = c.vec3(1, MICRO);
        let f_ax = c.float(4);
        let applied = c.vec3(5, 1.0);
        let (px, pz, width) = (c.get::<i64>(8), c.get::<i64>(9), c.float(10));
        let f_ax = f_ax?;
        if f_ax <= 0.0 {
            c.fail("f_ax must be positive");
            return None;
        }
        let width = width?;
        if width <= 0.0 {
            c.fail("width must be positive");
            return None;
        }
        Some(SiteReading {
            pair: pair?,
            site: site?,
            reading: PositionReading { f_ax, applied: applied?, px: px?, pz: pz?, width },
        })
    })
}

pub fn write_heating<W: Write>(w: W, records: &[HeatingRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.mode.symbol().to_string(),
                um(r.position.x),
                um(r.position.y),
                um(r.position.z),
                um(r.distance),
                (r.omega / TWO_PI / 1e6).to_string(),
                r.rate.to_string(),
                r.sigma_rate.to_string(),
                r.detached.to_string(),
            ]
        })
        .collect();
    write_table(w, "heating", &[], &HEATING_COLUMNS, &rows)
}

pub fn read_heating(text: &str) -> Result<Vec<HeatingRecord>> {
    let t = read_table(text, "heating", &HEATING_COLUMNS)?;
    parse_rows(&t, &HEATING_COLUMNS, |c| {
        let mode = ModeLabel::parse(&c.row[0]);
        if mode.is_none() {
            c.fail(format!("unknown mode `{}`", c.row[0]));
        }
        let position = c.vec3(1, MICRO);
        let (d, f, rate, sigma) = (c.float(4), c.float(5), c.float(6), c.float(7));
        let detached = c.get::<bool>(8);
        let rec = HeatingRecord {
            mode: mode?,
            position: position?,
            distance: d? * MICRO,
            omega: f? * 1e6 * TWO_PI,
            rate: rate?,
            sigma_rate: sigma?,
            detached: detached?,
        };
        match rec.validate() {
            Ok(()) => Some(rec),
            Err(e) => {
                c.fail(e);
                None
            }
        }
    })
}

/// Rabi scan recorded at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteScan {
    pub id: u32,
    pub site: Vector3<f64>,
    pub scan: RabiScan,
}

/// Frequency scans: `fixed` is the pulse length in µs and `abscissa` the
/// drive frequency in MHz. Duration scans: `fixed` is the detuning in kHz
/// and `abscissa` the pulse length in µs.
pub fn write_rabi<W: Write>(w: W, scans: &[SiteScan]) -> Result<()> {
    let mut rows = Vec::new();
    for s in scans {
        let (kind, fixed, conv): (&str, f64, fn(f64) -> f64) = match s.scan.kind {
            ScanKind::Frequency { duration } => ("frequency", duration * 1e6, |x| x / TWO_PI / 1e6),
            ScanKind::Duration { detuning } => ("duration", detuning / TWO_PI / 1e3, |x| x * 1e6),
        };
        for p in &s.scan.points {
            rows.push(vec![
                s.id.to_string(),
                um(s.site.x),
                um(s.site.y),
                um(s.site.z),
                kind.to_string(),
                fixed.to_string(),
                conv(p.x).to_string(),
                p.p_up.to_string(),
                p.shots.to_string(),
            ]);
        }
    }
    write_table(w, "rabi", &[], &RABI_COLUMNS, &rows)
}

pub fn read_rabi(text: &str) -> Result<Vec<SiteScan>> {
    let t = read_table(text, "rabi", &RABI_COLUMNS)?;
    let flat = parse_rows(&t, &RABI_COLUMNS, |c| {
        let id = c.get::<u32>(0);
        let site = c.vec3(1, MICRO);
        let (fixed, x, p, shots) = (c.float(5), c.float(6), c.float(7), c.get::<u32>(8));
        let kind = match c.row[4].as_str() {
            "frequency" => ScanKind::Frequency { duration: fixed? * 1e-6 },
            "duration" => ScanKind::Duration { detuning: fixed? * 1e3 * TWO_PI },
            other => {
                c.fail(format!("unknown scan kind `{other}`"));
                return None;
            }
        };
        let x = match kind {
            ScanKind::Frequency { .. } => x? * 1e6 * TWO_PI,
            ScanKind::Duration { .. } => x? * 1e-6,
        };
        let p = p?;
        if !(0.0..=1.0).contains(&p) {
            c.fail("p_up outside [0, 1]");
            return None;
        }
        Some((id?, site?, kind, RabiPoint { x, p_up: p, shots: shots? }))
    })?;
    let mut scans: Vec<SiteScan> = Vec::new();
    for (id, site, kind, point) in flat {
        match scans.iter_mut().find(|s| s.id == id) {
            Some(s) => {
                if s.site != site || s.scan.kind != kind {
                    return Err(Error::Schema(format!("scan {id}: site or kind changes between rows")));
                }
                s.scan.points.push(point);
            }
            None => scans.push(SiteScan { id, site, scan: RabiScan { kind, points: vec![point] } }),
        }
    }
    Ok(scans)
}

/// Patch table with grid shape and background as metadata.
pub fn write_dipole_grid<W: Write>(w: W, grid: &DipoleGrid, sigmas: Option<&[f64]>, background_sigma: f64) -> Result<()> {
    let rows: Vec<Vec<String>> = grid
        .spec
        .patches()
        .iter()
        .zip(&grid.densities)
        .enumerate()
        .map(|(i, (p, d))| {
            vec![
                i.to_string(),
                um(p.x1),
                um(p.x2),
                um(p.z1),
                um(p.z2),
                dipole_density_to_e_angstrom(*d).to_string(),
                sigmas.map_or(0.0, |s| dipole_density_to_e_angstrom(s[i])).to_string(),
            ]
        })
        .collect();
    let meta = [
        ("nx", grid.spec.nx.to_string()),
        ("nz", grid.spec.nz.to_string()),
        ("background_e_a_per_um2", dipole_density_to_e_angstrom(grid.background).to_string()),
        ("background_sigma", dipole_density_to_e_angstrom(background_sigma).to_string()),
    ];
    write_table(w, "dipoles", &meta, &GRID_COLUMNS, &rows)
}

/// Densities in e·Å/µm² and the background from a dipole table.
pub fn read_dipole_densities(text: &str) -> Result<(Vec<f64>, f64)> {
    let t = read_table(text, "dipoles", &GRID_COLUMNS)?;
    let bg = t
        .meta
        .get("background_e_a_per_um2")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::Schema("missing background_e_a_per_um2".into()))?;
    let d = parse_rows(&t, &GRID_COLUMNS, |c| c.float(5))?;
    Ok((d, bg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn field_round_trip() {
        let s = vec![
            FieldSample::new(Vector3::new(1e-6, 75e-6, -3e-6), Vector3::new(1.5, -2.0, 0.25), Vector3::repeat(0.1)).unwrap(),
        ];
        let back = read_field_samples(&text(|b| write_field_samples(b, &s))).unwrap();
        assert!((back[0].position - s[0].position).norm() < 1e-18);
        assert_eq!(back[0].field, s[0].field);
    }

    #[test]
    fn heating_round_trip_and_diagnostics() {
        let r = HeatingRecord {
            mode: ModeLabel::Cyclotron,
            position: Vector3::new(0.0, 152e-6, 0.0),
            distance: 152e-6,
            omega: TWO_PI * 4.32e6,
            rate: 850.0,
            sigma_rate: 80.0,
            detached: true,
        };
        let t = text(|b| write_heating(b, &[r]));
        let back = read_heating(&t).unwrap();
        assert_eq!(back[0].mode, r.mode);
        assert!((back[0].omega / r.omega - 1.0).abs() < 1e-14);
        let bad = t.replace("850", "abc").replace("\n+,", "\nq,");
        let err = read_heating(&bad).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("rate_q_per_s") && err.contains("unknown mode"));
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_heating("").is_err());
        assert!(read_heating("x,y\n1,2\n").is_err());
        let wrong = format!("{}\nmode,x_um\n", schema_line("heating"));
        assert!(read_heating(&wrong).is_err());
        let other_kind = text(|b| write_field_samples(b, &[FieldSample::new(Vector3::new(0.0, 1e-4, 0.0), Vector3::zeros(), Vector3::repeat(1.0)).unwrap()]));
        assert!(read_heating(&other_kind).is_err());
        let empty = format!("{}\n{}\n", schema_line("heating"), HEATING_COLUMNS.join(","));
        assert!(read_heating(&empty).is_err());
    }

    #[test]
    fn rabi_grouping() {
        let scan = RabiScan {
            kind: ScanKind::Frequency { duration: 50e-6 },
            points: (0..5).map(|i| RabiPoint { x: TWO_PI * (84e9 + i as f64 * 1e3), p_up: 0.5, shots: 100 }).collect(),
        };
        let scans = vec![
            SiteScan { id: 0, site: Vector3::new(0.0, 152e-6, 0.0), scan: scan.clone() },
            SiteScan { id: 1, site: Vector3::new(0.0, 100e-6, 0.0), scan },
        ];
        let back = read_rabi(&text(|b| write_rabi(b, &scans))).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].scan.points.len(), 5);
        assert!((back[0].scan.points[3].x / scans[0].scan.points[3].x - 1.0).abs() < 1e-14);
    }
}
