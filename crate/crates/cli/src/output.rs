//! File writers. CSV files start with one `#` provenance line; JSON files
//! carry a `provenance` object.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// `v<crate version>-g<short commit>`, in the style of `git describe`.
pub fn version_string() -> String {
    format!("v{}-g{}", env!("CARGO_PKG_VERSION"), env!("RAPS_GIT_HASH"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Self {
            version: version_string(),
            config_sha256,
            seed,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "# raps {} config_sha256={} seed={}\n",
            self.version, self.config_sha256, self.seed
        )
    }
}

/// Accumulates a CSV table in memory. Floats use the shortest form that
/// parses back to the same value.
pub struct Csv {
    buf: String,
    cols: usize,
}

impl Csv {
    pub fn new(prov: &Provenance, header: &[&str]) -> Self {
        let mut buf = prov.csv_line();
        buf.push_str(&header.join(","));
        buf.push('\n');
        Self {
            buf,
            cols: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[Field<'_>]) {
        assert_eq!(fields.len(), self.cols, "CSV row width");
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            match f {
                Field::F(v) => write!(self.buf, "{v}").unwrap(),
                Field::U(v) => write!(self.buf, "{v}").unwrap(),
                Field::S(s) => self.buf.push_str(s),
            }
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, &self.buf).map_err(CliError::io(path))
    }
}

pub enum Field<'a> {
    F(f64),
    U(u64),
    S(&'a str),
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}
