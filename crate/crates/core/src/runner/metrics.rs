//! Line-delimited JSON metrics log.
//!
//! The first line is a [`MetricsHeader`]; each following line is one
//! [`MetricsRecord`], except that an aborted run may end with a single
//! [`Diagnostic`] line. Field names are part of the file format:
//!
//! | field                 | meaning                                        |
//! |-----------------------|------------------------------------------------|
//! | `step`                | optimizer steps taken before this evaluation   |
//! | `train_loss`          | MSE on the training split                      |
//! | `test_loss`           | MSE on the test set                            |
//! | `train_acc`/`test_acc`| argmax accuracy                                |
//! | `weight_norm`         | L2 norm over all parameters                    |
//! | `per_layer_rank`      | numerical rank per hidden layer, input first   |
//! | `per_layer_probe_acc` | linear-probe test accuracy per hidden layer, or `null` |
//! | `wall_time`           | seconds of training so far                     |

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub schema_version: u32,
    pub digest: String,
    pub config: TrainConfig,
}

impl MetricsHeader {
    pub fn new(config: &TrainConfig) -> Self {
        MetricsHeader {
            schema_version: SCHEMA_VERSION,
            digest: config.digest(),
            config: config.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub weight_norm: f64,
    pub per_layer_rank: Vec<usize>,
    pub per_layer_probe_acc: Option<Vec<f64>>,
    pub wall_time: f64,
}

impl MetricsRecord {
    /// Copy with the clock field zeroed, for reproducibility comparisons.
    pub fn without_wall_time(&self) -> MetricsRecord {
        MetricsRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Final line of a run that aborted on a numerical problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub step: u64,
    pub diagnostic: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsFile {
    pub header: MetricsHeader,
    pub records: Vec<MetricsRecord>,
    pub diagnostic: Option<Diagnostic>,
}

impl MetricsFile {
    pub fn parse(text: &str) -> Result<MetricsFile> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Parse("metrics file is empty".into()))?;
        let header: MetricsHeader =
            serde_json::from_str(first).map_err(|e| Error::Parse(format!("header line: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema version {}",
                header.schema_version
            )));
        }
        let mut records = Vec::new();
        let mut diagnostic = None;
        for (i, line) in lines {
            if diagnostic.is_some() {
                return Err(Error::Parse(format!(
                    "line {}: data after diagnostic",
                    i + 1
                )));
            }
            match serde_json::from_str::<MetricsRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) => match serde_json::from_str::<Diagnostic>(line) {
                    Ok(d) => diagnostic = Some(d),
                    Err(_) => return Err(Error::Parse(format!("line {}: {e}", i + 1))),
                },
            }
        }
        Ok(MetricsFile {
            header,
            records,
            diagnostic,
        })
    }

    pub fn read(path: &Path) -> Result<MetricsFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MetricsFile::parse(&text)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.header.config
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.step).collect()
    }

    /// True when the log reaches the configured final step.
    pub fn is_complete(&self) -> bool {
        self.last().map(|r| r.step) == Some(self.header.config.total_steps)
    }
}

/// Appends records one line at a time, flushing after each so a crash
/// leaves a valid prefix behind.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Starts a new log, replacing any existing file.
    pub fn create(path: &Path, header: &MetricsHeader) -> Result<MetricsWriter> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(header)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        file.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Truncates an existing log to its header plus every record up to and
    /// including `step`, then reopens it for appending. The surviving lines
    /// are kept byte for byte.
    pub fn resume(path: &Path, expected_digest: &str, step: u64) -> Result<MetricsWriter> {
        let reader = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut kept = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if i == 0 {
                let header: MetricsHeader = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse(format!("header line: {e}")))?;
                if header.digest != expected_digest {
                    return Err(Error::Parse(format!(
                        "metrics file belongs to config {}, not {expected_digest}",
                        header.digest
                    )));
                }
                kept.push(line);
                continue;
            }
            match serde_json::from_str::<MetricsRecord>(&line) {
                Ok(r) if r.step <= step => kept.push(line),
                _ => break,
            }
        }
        if kept.is_empty() {
            return Err(Error::Parse("metrics file has no header".into()));
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            for line in &kept {
                writeln!(out, "{line}").map_err(|e| Error::io(&tmp, e))?;
            }
            out.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        self.write_line(&serde_json::to_string(record)?)
    }

    pub fn append_diagnostic(&mut self, diagnostic: &Diagnostic) -> Result<()> {
        self.write_line(&serde_json::to_string(diagnostic)?)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
