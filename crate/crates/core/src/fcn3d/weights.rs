//! Weight files: a little-endian `f32` blob with the parameters concatenated
//! in canonical order, plus a `key=value` manifest next to it (same stem,
//! `.manifest` extension) recording the architecture and every parameter's
//! name, shape and offset.

use std::path::{Path, PathBuf};

use super::{ArchitectureConfig, NetworkModel};
use crate::error::{Error, Result};
use crate::manifest::{f32_from_le_bytes, f32_le_bytes, fnv1a, read_bytes, write_bytes, Manifest};
use crate::ndtensor::{Scalar, Tensor};

const FORMAT: &str = "cropseg-weights-v1";

pub(crate) fn manifest_path(blob: &Path) -> PathBuf {
    blob.with_extension("manifest")
}

pub(crate) fn write_config(m: &mut Manifest, c: &ArchitectureConfig) {
    m.set("levels", c.levels);
    m.set("base_channels", c.base_channels);
    m.set_list("channel_schedule", &c.channel_schedule);
    m.set("input_bands", c.input_bands);
    m.set("time_steps", c.time_steps);
    m.set("num_classes", c.num_classes);
    m.set("tile_size", c.tile_size);
    m.set("temporal_collapse", "max");
}

pub(crate) fn read_config(m: &Manifest) -> Result<ArchitectureConfig> {
    let collapse = m.require("temporal_collapse")?;
    if collapse != "max" {
        return Err(Error::Format(format!("unsupported temporal collapse `{collapse}`")));
    }
    let config = ArchitectureConfig {
        levels: m.parse_value("levels")?,
        base_channels: m.parse_value("base_channels")?,
        channel_schedule: m.parse_list("channel_schedule")?,
        input_bands: m.parse_value("input_bands")?,
        time_steps: m.parse_value("time_steps")?,
        num_classes: m.parse_value("num_classes")?,
        tile_size: m.parse_value("tile_size")?,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("manifest architecture is invalid: {e}")))?;
    Ok(config)
}

pub(crate) fn save<T: Scalar>(model: &NetworkModel<T>, path: &Path) -> Result<()> {
    let mut m = Manifest::new();
    m.set("format", FORMAT);
    m.set("dtype", "f32le");
    write_config(&mut m, model.config());

    let params = model.param_set();
    let mut offset = 0usize;
    let mut values = Vec::with_capacity(model.parameter_count());
    m.set("param_count", params.len());
    for (i, p) in params.iter().enumerate() {
        m.set(format!("param.{i}.name"), p.qualified_name());
        m.set_list(format!("param.{i}.shape"), p.value.shape());
        m.set(format!("param.{i}.offset"), offset);
        offset += p.value.len();
        values.extend(p.value.data().iter().map(|v| v.as_f64() as f32));
    }
    let bytes = f32_le_bytes(values);
    m.set("total_floats", offset);
    m.set("byte_length", bytes.len());
    m.set("checksum", format!("{:016x}", fnv1a(&bytes)));

    write_bytes(path, &bytes)?;
    m.write(&manifest_path(path))
}

/// Reads the manifest that accompanies the blob at `path`.
pub fn read_weight_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::read(&manifest_path(path))?;
    let format = m.require("format")?;
    if format != FORMAT {
        return Err(Error::Format(format!("unknown weight format `{format}`")));
    }
    Ok(m)
}

/// Loads a model whose architecture comes from the manifest.
pub fn load_weights<T: Scalar>(path: &Path) -> Result<NetworkModel<T>> {
    let m = read_weight_manifest(path)?;
    let config = read_config(&m)?;
    let mut model = NetworkModel::build(&config, 0)?;
    fill(&mut model, &m, path)?;
    Ok(model)
}

/// Like [`load_weights`], but fails with a format error unless the stored
/// architecture equals `expected`.
pub fn load_weights_expecting<T: Scalar>(
    path: &Path,
    expected: &ArchitectureConfig,
) -> Result<NetworkModel<T>> {
    let m = read_weight_manifest(path)?;
    let config = read_config(&m)?;
    if &config != expected {
        return Err(Error::Format(format!(
            "weights were saved for {config:?}, expected {expected:?}"
        )));
    }
    let mut model = NetworkModel::build(&config, 0)?;
    fill(&mut model, &m, path)?;
    Ok(model)
}

fn fill<T: Scalar>(model: &mut NetworkModel<T>, m: &Manifest, path: &Path) -> Result<()> {
    let count: usize = m.parse_value("param_count")?;
    let expected: Vec<(String, Vec<usize>)> = model
        .param_set()
        .iter()
        .map(|p| (p.qualified_name(), p.value.shape().to_vec()))
        .collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "manifest lists {count} parameters, architecture has {}",
            expected.len()
        )));
    }
    let mut layout = Vec::with_capacity(count);
    let mut total = 0usize;
    for (i, (name, shape)) in expected.iter().enumerate() {
        let got_name = m.require(&format!("param.{i}.name"))?;
        let got_shape: Vec<usize> = m.parse_list(&format!("param.{i}.shape"))?;
        let offset: usize = m.parse_value(&format!("param.{i}.offset"))?;
        if got_name != name || &got_shape != shape {
            return Err(Error::Format(format!(
                "parameter {i} is {got_name} {got_shape:?}, expected {name} {shape:?}"
            )));
        }
        if offset != total {
            return Err(Error::Format(format!("parameter {i} has offset {offset}, expected {total}")));
        }
        total += shape.iter().product::<usize>();
        layout.push(shape.clone());
    }

    let bytes = read_bytes(path)?;
    if bytes.len() != total * 4 {
        return Err(Error::Format(format!(
            "weight blob has {} bytes, manifest shapes need {}",
            bytes.len(),
            total * 4
        )));
    }
    if let Some(sum) = m.get("checksum") {
        let actual = format!("{:016x}", fnv1a(&bytes));
        if sum != actual {
            return Err(Error::Format(format!("checksum {actual} does not match manifest {sum}")));
        }
    }
    let floats = f32_from_le_bytes(&bytes)?;
    let mut cursor = 0;
    for (param, shape) in model.params_mut().into_iter().zip(layout) {
        let len: usize = shape.iter().product();
        let data = floats[cursor..cursor + len]
            .iter()
            .map(|&v| T::from_f64(v as f64))
            .collect();
        param.value = Tensor::new(shape, data)?;
        cursor += len;
    }
    Ok(())
}
