//! Self-describing model files (JSON with a format tag and version).
//! Floats are written with shortest round-trip formatting, so a
//! save/load cycle is bitwise exact.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::deeponet::{DeepONetModel, OutputMode};
use super::fnn::FnnModel;
use super::mlp::NetworkSpec;
use super::norm::{NormalizationStats, Scaler};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DEEPONET_TAG: &str = "genop-deeponet";
const FNN_TAG: &str = "genop-fnn";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeepOnetFile {
    format: String,
    version: u32,
    branch: NetworkSpec,
    trunk: NetworkSpec,
    q: usize,
    n_x: usize,
    n_sensors: usize,
    output_mode: OutputMode,
    norm: NormalizationStats,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FnnFile {
    format: String,
    version: u32,
    net: NetworkSpec,
    output_mode: OutputMode,
    input_norm: Scaler,
    output_norm: Scaler,
    params: Vec<f64>,
}

fn check_header(format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(Error::Format(format!("expected a {want} file, found {format:?}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {want} version {version}")));
    }
    Ok(())
}

pub fn deeponet_to_string(m: &DeepONetModel) -> Result<String> {
    let f = DeepOnetFile {
        format: DEEPONET_TAG.into(),
        version: FORMAT_VERSION,
        branch: m.branch().spec().clone(),
        trunk: m.trunk().spec().clone(),
        q: m.q(),
        n_x: m.n_x(),
        n_sensors: m.n_sensors(),
        output_mode: m.output_mode(),
        norm: m.norm.clone(),
        params: m.params().to_vec(),
    };
    Ok(serde_json::to_string(&f)?)
}

pub fn deeponet_from_str(s: &str) -> Result<DeepONetModel> {
    let f: DeepOnetFile = serde_json::from_str(s)?;
    check_header(&f.format, f.version, DEEPONET_TAG)?;
    DeepONetModel::from_parts(
        f.branch,
        f.trunk,
        f.q,
        f.n_x,
        f.n_sensors,
        f.output_mode,
        f.norm,
        Some(f.params),
    )
}

pub fn save_deeponet(m: &DeepONetModel, path: &Path) -> Result<()> {
    std::fs::write(path, deeponet_to_string(m)?)?;
    Ok(())
}

pub fn load_deeponet(path: &Path) -> Result<DeepONetModel> {
    deeponet_from_str(&std::fs::read_to_string(path)?)
}

pub fn save_fnn(m: &FnnModel, path: &Path) -> Result<()> {
    let f = FnnFile {
        format: FNN_TAG.into(),
        version: FORMAT_VERSION,
        net: m.net().spec().clone(),
        output_mode: m.output_mode(),
        input_norm: m.input_norm.clone(),
        output_norm: m.output_norm.clone(),
        params: m.params().to_vec(),
    };
    serde_json::to_writer(BufWriter::new(File::create(path)?), &f)?;
    Ok(())
}

pub fn load_fnn(path: &Path) -> Result<FnnModel> {
    let f: FnnFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check_header(&f.format, f.version, FNN_TAG)?;
    FnnModel::from_parts(f.net, f.output_mode, f.input_norm, f.output_norm, Some(f.params))
}
