//! Append-only per-iteration metrics CSV.

use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::IterationReport;

pub const HEADER: &str =
    "iteration,env_steps,model_steps,mean_ep_reward,mean_ep_len,policy_loss,value_loss,kl,clip_frac,lr,wallclock_s";

pub struct MetricsWriter {
    writer: csv::Writer<File>,
    context: String,
}

impl MetricsWriter {
    /// Creates (or truncates) the file and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let context = path.display().to_string();
        writer
            .write_record(HEADER.split(','))
            .and_then(|_| writer.flush().map_err(Into::into))
            .map_err(|e| csv_error(&context, e))?;
        Ok(Self { writer, context })
    }

    /// Opens an existing file for appending rows after a resume.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self {
            writer,
            context: path.display().to_string(),
        })
    }

    pub fn write(&mut self, report: &IterationReport) -> Result<()> {
        self.writer.serialize(report).map_err(|e| csv_error(&self.context, e))?;
        self.writer
            .flush()
            .map_err(|e| Error::io(format!("flushing {}", self.context), e))
    }
}

fn csv_error(context: &str, e: csv::Error) -> Error {
    Error::io(format!("writing {context}"), std::io::Error::other(e.to_string()))
}

/// Parses a metrics file back into reports.
pub fn read_metrics(path: &Path) -> Result<Vec<IterationReport>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(&path.display().to_string(), e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(&path.display().to_string(), e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != HEADER {
        return Err(Error::io(
            format!("reading {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::InvalidData, "unexpected metrics header"),
        ));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(&path.display().to_string(), e)))
        .collect()
}
