use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use uppkit::table::Table;
use uppkit::{Error, Result};

use crate::manifest::RunManifest;
use crate::{Global, OutputFormat};

/// What a command produced, ready to render in any format.
pub struct Report {
    pub result: Value,
    pub table: Table,
    /// Lines printed under the table.
    pub footer: Vec<String>,
    pub notes: Vec<String>,
    /// Replaces the table in CSV output.
    pub csv: Option<String>,
    pub exit: u8,
}

impl Report {
    pub fn new(result: Value, table: Table) -> Self {
        Report {
            result,
            table,
            footer: Vec::new(),
            notes: Vec::new(),
            csv: None,
            exit: 0,
        }
    }

    fn text(&self) -> String {
        let mut out = self.table.render();
        for line in &self.footer {
            out.push_str(line);
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str("note: ");
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes the report and its manifest.
///
/// JSON output wraps both in one document. Table and CSV output put the
/// manifest next to `--out` as `<out>.manifest.json`, or on stderr.
pub fn emit(global: &Global, manifest: &RunManifest, report: &Report) -> Result<()> {
    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    let body = match global.format {
        OutputFormat::Json => {
            let mut doc = json!({ "manifest": manifest, "result": report.result });
            if !report.notes.is_empty() {
                doc["notes"] = json!(report.notes);
            }
            serde_json::to_string_pretty(&doc).expect("result serializes") + "\n"
        }
        OutputFormat::Table => report.text(),
        OutputFormat::Csv => {
            if !global.quiet {
                for n in &report.notes {
                    eprintln!("note: {n}");
                }
            }
            report.csv.clone().unwrap_or_else(|| report.table.to_csv())
        }
    };
    match &global.out {
        Some(path) => {
            write_file(path, &body)?;
            if global.format != OutputFormat::Json {
                write_file(&sidecar(path), &(manifest_json + "\n"))?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes()).map_err(|source| Error::Io {
                path: "<stdout>".to_owned(),
                source,
            })?;
            if global.format != OutputFormat::Json && !global.quiet {
                eprintln!("{manifest_json}");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("out/g.csv")), PathBuf::from("out/g.csv.manifest.json"));
    }
}
