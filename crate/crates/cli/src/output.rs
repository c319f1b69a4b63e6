use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Bumped whenever a JSON field is renamed, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// CSV cell text; floats use the shortest round-trip form.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        if self.is_finite() {
            serde_json::Number::from_f64(*self).map_or_else(String::new, |n| n.to_string())
        } else {
            self.to_string()
        }
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => {
        $(impl Cell for $t {
            fn cell(&self) -> String {
                self.to_string()
            }
        })*
    };
}

display_cell!(i32, i64, u32, u64, usize, bool, str, String);

impl<T: Cell> Cell for Option<T> {
    fn cell(&self) -> String {
        self.as_ref().map_or_else(String::new, Cell::cell)
    }
}

impl<T: Cell + ?Sized> Cell for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

/// Formats a row of heterogeneous cells.
#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => {
        vec![$($crate::output::Cell::cell(&$x)),*]
    };
}

/// What a subcommand produced: a JSON report, its tables, and the exit code.
#[derive(Debug)]
pub struct Report {
    pub command: &'static str,
    pub body: Value,
    pub tables: Vec<Table>,
    pub exit: u8,
}

impl Report {
    pub fn new(command: &'static str, body: impl Serialize, tables: Vec<Table>) -> Result<Self> {
        let mut body = serde_json::to_value(body)?;
        let object = body
            .as_object_mut()
            .context("report body must serialize to a JSON object")?;
        let mut head = serde_json::Map::new();
        head.insert("schema_version".into(), json!(SCHEMA_VERSION));
        head.insert("command".into(), json!(command));
        head.append(object);
        Ok(Self {
            command,
            body: Value::Object(head),
            tables,
            exit: 0,
        })
    }

    pub fn with_exit(mut self, code: u8) -> Self {
        self.exit = code;
        self
    }

    pub fn json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.body)?;
        s.push('\n');
        Ok(s)
    }

    /// Prints the report (JSON) or its first table (CSV) to `out`.
    pub fn print(&self, format: Format, out: &mut impl Write) -> Result<()> {
        let text = match format {
            Format::Json => self.json()?,
            Format::Csv => match self.tables.first() {
                Some(t) => t.to_csv()?,
                None => String::new(),
            },
        };
        out.write_all(text.as_bytes())?;
        Ok(())
    }

    /// Writes `<command>.json` and `<command>_<table>.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let write = |name: String, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
        };
        write(format!("{}.json", self.command), self.json()?)?;
        for t in &self.tables {
            write(format!("{}_{}.csv", self.command, t.name), t.to_csv()?)?;
        }
        Ok(())
    }
}
