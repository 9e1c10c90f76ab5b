//! CSV and JSON writers. Every file starts with a header recording the
//! tool version, the command and the resolved config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{Format, OutputConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "xfpt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
}

impl Header {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            config: serde_json::to_value(config).expect("config serializes"),
        }
    }
}

/// One CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

/// `precision` significant digits in scientific notation.
pub fn format_float(x: f64, precision: usize) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{:.*e}", precision.max(1) - 1, x)
    }
}

/// Writes artifacts into one output directory.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: PathBuf,
    header: Header,
    output: OutputConfig,
}

impl Sink {
    pub fn new(dir: &Path, header: Header, output: &OutputConfig) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        if output.precision == 0 || output.precision > 17 {
            return Err(CliError::Config(format!(
                "output.precision must be within 1..=17, got {}",
                output.precision
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
            output: output.clone(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, contents: String) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    /// CSV with `#` comment lines for the header; skipped unless CSV output is on.
    pub fn csv(
        &self,
        name: &str,
        extra_comments: &[String],
        columns: &[&str],
        rows: impl IntoIterator<Item = Vec<Cell>>,
    ) -> CliResult<Option<PathBuf>> {
        if !self.output.wants(Format::Csv) {
            return Ok(None);
        }
        let mut text = String::new();
        writeln!(text, "# tool: {} {}", self.header.tool, self.header.version).unwrap();
        writeln!(text, "# command: {}", self.header.command).unwrap();
        writeln!(text, "# config: {}", self.header.config).unwrap();
        for line in extra_comments {
            writeln!(text, "# {line}").unwrap();
        }
        writeln!(text, "{}", columns.join(",")).unwrap();
        for row in rows {
            let cells: Vec<String> = row
                .into_iter()
                .map(|cell| match cell {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) => format_float(v, self.output.precision),
                })
                .collect();
            writeln!(text, "{}", cells.join(",")).unwrap();
        }
        self.write(name, text).map(Some)
    }

    /// JSON object `{"header": ..., <body fields>}`; skipped unless JSON output is on.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> CliResult<Option<PathBuf>> {
        if !self.output.wants(Format::Json) {
            return Ok(None);
        }
        let mut object = Map::new();
        object.insert(
            "header".into(),
            serde_json::to_value(&self.header).expect("header serializes"),
        );
        match serde_json::to_value(body).expect("body serializes") {
            Value::Object(fields) => object.extend(fields),
            other => {
                object.insert("body".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(object)).expect("serializes");
        text.push('\n');
        self.write(name, text).map(Some)
    }
}
