//! Dataset files: JSON-lines with one header record followed by one record
//! per sample.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use super::sampling::{LabelConfig, Procedure, SamplingRanges, SensorSpec};
use super::DatasetSample;
use crate::error::{Error, Result};
use crate::nn::OutputMode;

/// Describes how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub n_samples: usize,
    pub procedure: Procedure,
    pub mode: OutputMode,
    pub sensors: SensorSpec,
    pub ranges: SamplingRanges,
    pub label: LabelConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(DatasetHeader),
    Sample(DatasetSample),
}

pub fn write_dataset<W: Write>(mut w: W, header: &DatasetHeader, samples: &[DatasetSample]) -> Result<()> {
    if header.n_samples != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: header.n_samples,
            got: samples.len(),
        });
    }
    serde_json::to_writer(&mut w, &Record::Header(header.clone()))?;
    w.write_all(b"\n")?;
    for s in samples {
        serde_json::to_writer(&mut w, &Record::Sample(s.clone()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<(DatasetHeader, Vec<DatasetSample>)> {
    let mut header = None;
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        match rec {
            Record::Header(h) if header.is_none() && i == 0 => header = Some(h),
            Record::Header(_) => {
                return Err(Error::Format(format!("line {}: unexpected header", i + 1)))
            }
            Record::Sample(s) => samples.push(s),
        }
    }
    let header = header.ok_or_else(|| Error::Format("missing dataset header".into()))?;
    if header.n_samples != samples.len() {
        return Err(Error::Format(format!(
            "header announces {} samples, file holds {}",
            header.n_samples,
            samples.len()
        )));
    }
    Ok((header, samples))
}
