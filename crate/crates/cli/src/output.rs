//! Output files, run manifests and post-write schema checks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RESPONSE_HEADER: [&str; 2] = ["t", "y"];

/// Written last into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "run.json";

/// Collects output files and their schema checks.
pub struct OutDir {
    pub dir: PathBuf,
    written: Vec<(String, Schema)>,
}

#[derive(Debug, Clone)]
pub enum Schema {
    /// Exact header; listed columns must parse as numbers (`NaN` allowed).
    Csv { header: Vec<String>, numeric: Vec<usize> },
    Json,
    /// Binary panel file.
    Panel,
    /// Free-form CSV (price files); header only.
    CsvHeader(Vec<String>),
    /// Plain UTF-8 lines.
    Text,
}

impl Schema {
    pub fn csv(header: &[&str], numeric: &[usize]) -> Schema {
        Schema::Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            numeric: numeric.to_vec(),
        }
    }
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<OutDir> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn create_file(&mut self, name: &str, schema: Schema) -> CliResult<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push((name.to_string(), schema));
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create_file(name, Schema::Json)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn write_panel(&mut self, name: &str, panel: &afts_core::FunctionalPanel) -> CliResult<()> {
        let w = self.create_file(name, Schema::Panel)?;
        afts_core::io::write_panel_binary(panel, w)?;
        Ok(())
    }

    /// Validates every file written so far, then writes the manifest.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> CliResult<()> {
        for (name, schema) in &self.written {
            check(&self.dir.join(name), schema)?;
        }
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            files: self.written.iter().map(|(n, _)| n.clone()).collect(),
        };
        self.write_json(MANIFEST_FILE, &manifest)?;
        let text = std::fs::read_to_string(self.path(MANIFEST_FILE))?;
        let back: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{MANIFEST_FILE}: {e}")))?;
        if back != manifest {
            return Err(CliError::Schema(format!("{MANIFEST_FILE} does not round-trip")));
        }
        Ok(())
    }
}

fn check(path: &Path, schema: &Schema) -> CliResult<()> {
    let bad = |m: String| CliError::Schema(format!("{}: {m}", path.display()));
    match schema {
        Schema::Csv { header, numeric } => {
            let mut rdr = csv::Reader::from_path(path)?;
            let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            if &got != header {
                return Err(bad(format!("header {got:?}, expected {header:?}")));
            }
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| bad(e.to_string()))?;
                if rec.len() != header.len() {
                    return Err(bad(format!("row {} has {} fields", i + 1, rec.len())));
                }
                for &c in numeric {
                    if rec[c].parse::<f64>().is_err() {
                        return Err(bad(format!("row {} column {} is not numeric: {:?}", i + 1, header[c], &rec[c])));
                    }
                }
            }
        }
        Schema::CsvHeader(header) => {
            let mut rdr = csv::Reader::from_path(path)?;
            let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            if &got != header {
                return Err(bad(format!("header {got:?}, expected {header:?}")));
            }
        }
        Schema::Text => {
            String::from_utf8(std::fs::read(path)?).map_err(|e| bad(e.to_string()))?;
        }
        Schema::Json => {
            let f = BufReader::new(File::open(path)?);
            serde_json::from_reader::<_, serde_json::Value>(f).map_err(|e| bad(e.to_string()))?;
        }
        Schema::Panel => {
            afts_core::io::read_panel_binary(BufReader::new(File::open(path)?)).map_err(|e| bad(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn write_response_csv<W: std::io::Write>(y: &[f64], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESPONSE_HEADER)?;
    for (t, v) in y.iter().enumerate() {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scalar responses in `t` order; `t` must run `0, 1, 2, ...`.
pub fn read_response_csv(path: &Path) -> CliResult<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != RESPONSE_HEADER {
        return Err(CliError::Parse(format!("{}: header must be t,y", path.display())));
    }
    let mut y = Vec::new();
    for (i, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
        let (t, v) = rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        if t != i {
            return Err(CliError::Data(format!("{}: expected t = {i}, found {t}", path.display())));
        }
        y.push(v);
    }
    Ok(y)
}
