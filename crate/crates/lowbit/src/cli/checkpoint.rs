//! Checkpoint files: the run configuration, every parameter tensor, and the
//! activation-site calibration state, all little-endian and versioned.
//!
//! A checkpoint restores training-time behavior exactly: parameters are
//! stored as raw `f64` bytes, so a reloaded model reproduces forward passes
//! bit for bit.

use super::config::RunConfig;
use crate::model::Model;
use crate::tensor::Tensor;
use anyhow::{bail, ensure, Context, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LWBTCKPT";
const VERSION: u32 = 1;
/// The only dtype tag currently written; room for narrower master weights.
const DTYPE_F64: u8 = 0;

/// Writes `model` (with the config that produced it) to `path`.
pub fn save_checkpoint(path: &Path, config: &RunConfig, model: &Model) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating checkpoint {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(&mut out, config, model)
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

/// Reads a checkpoint back into a freshly built model.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Model)> {
    let file =
        File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    read_checkpoint(&mut BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", path.display()))
}

fn write_checkpoint(out: &mut impl Write, config: &RunConfig, model: &Model) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_str(out, &config.to_text())?;

    let params: Vec<_> = model.params.iter().collect();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, p) in params {
        write_str(out, &p.name)?;
        let shape = p.value.shape();
        ensure!(shape.len() <= u8::MAX as usize, "tensor rank too large");
        out.write_all(&[shape.len() as u8])?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&[DTYPE_F64])?;
        for &v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }

    let sites = model.act_site_flags();
    out.write_all(&(sites.len() as u32).to_le_bytes())?;
    for (name, initialized) in sites {
        let alpha_id = model
            .params
            .lookup(&name)
            .with_context(|| format!("activation site {name} has no alpha parameter"))?;
        write_str(out, &name)?;
        out.write_all(&model.params.get(alpha_id).value.item().to_le_bytes())?;
        out.write_all(&[initialized as u8])?;
    }
    Ok(())
}

fn read_checkpoint(input: &mut impl Read) -> Result<(RunConfig, Model)> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .context("file too short for a checkpoint header")?;
    ensure!(&magic == MAGIC, "not a checkpoint file (bad magic)");
    let version = read_u32(input)?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");

    let config = RunConfig::from_text(&read_str(input)?, RunConfig::desk_teacher())
        .context("parsing the embedded run configuration")?;
    config.validate()?;
    let mut model = Model::new(config.model.clone(), config.ablation, config.seed)?;

    let n_tensors = read_u32(input)? as usize;
    ensure!(
        n_tensors == model.params.len(),
        "checkpoint has {n_tensors} tensors but the model has {} parameters",
        model.params.len()
    );
    for _ in 0..n_tensors {
        let name = read_str(input)?;
        let ndim = read_u8(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(input)? as usize);
        }
        let dtype = read_u8(input)?;
        ensure!(dtype == DTYPE_F64, "unknown dtype tag {dtype} for tensor {name}");
        let len = shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(read_f64(input)?);
        }
        let id = match model.params.lookup(&name) {
            Some(id) => id,
            None => bail!("checkpoint tensor {name:?} does not exist in the model"),
        };
        ensure!(
            model.params.get(id).value.shape() == shape.as_slice(),
            "tensor {name:?} has shape {shape:?} but the model expects {:?}",
            model.params.get(id).value.shape()
        );
        model.params.set_value(id, Tensor::new(&shape, data));
    }

    let n_sites = read_u32(input)? as usize;
    ensure!(
        n_sites == model.act_site_flags().len(),
        "checkpoint has {n_sites} activation sites but the model has {}",
        model.act_site_flags().len()
    );
    for _ in 0..n_sites {
        let name = read_str(input)?;
        let alpha = read_f64(input)?;
        let initialized = read_u8(input)? != 0;
        let alpha_id = model
            .params
            .lookup(&name)
            .with_context(|| format!("unknown activation site {name:?} in checkpoint"))?;
        let stored = model.params.get(alpha_id).value.item();
        ensure!(
            stored == alpha,
            "activation alpha for {name} disagrees with its parameter tensor ({alpha} vs {stored})"
        );
        ensure!(
            model.set_act_site_flag(&name, initialized),
            "unknown activation site {name:?} in checkpoint"
        );
    }
    Ok((config, model))
}

fn read_u8(input: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    input.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(input: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_str(out: &mut impl Write, s: &str) -> Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let len = read_u32(input)? as usize;
    ensure!(len <= 1 << 20, "unreasonable string length {len} in checkpoint");
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}
