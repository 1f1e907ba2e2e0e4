use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use penning_probe::io::schema_line;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Output directory with deterministic writers.
pub struct OutDir {
    root: PathBuf,
    pub format: Format,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path, format: Format) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::input(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), format, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display())))?;
        self.written.push(p);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    /// Writes `<stem>.csv` or `<stem>.json` according to the format flag.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> CliResult<()> {
        match self.format {
            Format::Csv => self.write_bytes(&format!("{stem}.csv"), table.to_csv().as_bytes()),
            Format::Json => self.write_json(&format!("{stem}.json"), &table.to_json()),
        }
    }

    /// Plot data is always CSV so that the SVG has a numeric sibling.
    pub fn write_plot(&mut self, stem: &str, svg: &str, table: &Table) -> CliResult<()> {
        self.write_bytes(&format!("{stem}.svg"), svg.as_bytes())?;
        self.write_bytes(&format!("{stem}.csv"), table.to_csv().as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => v.to_string(),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Report table with a schema kind.
#[derive(Debug, Clone)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self { kind: kind.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[j] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = schema_line(&self.kind);
        s.push('\n');
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert(c.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let mut top = Map::new();
        top.insert("schema".into(), Value::from(schema_line(&self.kind).trim_start_matches("# ").to_string()));
        top.insert("rows".into(), Value::Array(rows));
        Value::Object(top)
    }
}
