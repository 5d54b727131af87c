//! On-disk dataset layout.
//!
//! A dataset directory holds one subdirectory per year:
//!
//! ```text
//! <root>/<year>/cube.bin    f32 LE, (band, time, row, col)
//! <root>/<year>/labels.bin  u8, (row, col) class indices
//! <root>/<year>/mask.bin    u8, (row, col) 1 = valid
//! <root>/<year>/manifest    key=value sidecar
//! ```
//!
//! Raw (pre-interpolation) scenes use `observations.bin` (f32 LE,
//! `(band, observation, row, col)`), `qa.bin` (u8, `(observation, row,
//! col)`), `labels.bin` and a `manifest` listing the acquisition dates.

use std::fs;
use std::path::{Path, PathBuf};

use super::{band_names, season_grid, LabelRaster, NormStats, Raster, RegularCube, SceneStack, GRID_STEPS};
use crate::error::{Error, Result};
use crate::manifest::{f32_from_le_bytes, f32_le_bytes, fnv1a, read_bytes, write_bytes, Manifest};
use crate::ndtensor::Tensor;

pub const DATASET_FORMAT: &str = "cropseg-dataset-v1";
pub const RAW_FORMAT: &str = "cropseg-raw-v1";

/// One year of preprocessed data as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct YearData {
    pub year: String,
    pub cube: RegularCube,
    pub labels: LabelRaster,
    /// Statistics already applied to `cube`, if any.
    pub norm: Option<NormStats>,
}

fn check_labels(labels: &LabelRaster, classes: usize) -> Result<()> {
    if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

pub fn write_year(root: &Path, data: &YearData) -> Result<PathBuf> {
    let dir = root.join(&data.year);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cube = &data.cube;
    let (h, w) = (cube.height(), cube.width());
    if data.labels.height != h || data.labels.width != w {
        return Err(Error::dim("raster", "labels do not match the cube"));
    }
    let cube_bytes = f32_le_bytes(cube.data.data().iter().copied());
    let mask_bytes: Vec<u8> = cube.pixel_valid.data.iter().map(|&v| v as u8).collect();
    write_bytes(&dir.join("cube.bin"), &cube_bytes)?;
    write_bytes(&dir.join("labels.bin"), &data.labels.data)?;
    write_bytes(&dir.join("mask.bin"), &mask_bytes)?;

    let mut m = Manifest::new();
    m.set("format", DATASET_FORMAT);
    m.set("year", &data.year);
    m.set_list("shape", cube.data.shape());
    m.set("axis_order", "band,time,row,col");
    m.set("dtype", "f32le");
    m.set("label_dtype", "u8");
    m.set("mask_dtype", "u8");
    m.set_list("band_names", &band_names(cube.bands()));
    if cube.time_steps() == GRID_STEPS {
        m.set_list("date_grid", &season_grid());
    }
    m.set("normalized", data.norm.is_some());
    if let Some(norm) = &data.norm {
        m.set_list("norm_mean", &norm.mean);
        m.set_list("norm_std", &norm.std);
    }
    let valid = cube.pixel_valid.count_valid();
    m.set("valid_pixels", valid);
    m.set("excluded_pixels", h * w - valid);
    m.set("cube_checksum", format!("{:016x}", fnv1a(&cube_bytes)));
    m.write(&dir.join("manifest"))?;
    Ok(dir)
}

fn expect_len(path: &Path, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!(
            "{}: {got} bytes, manifest implies {want}",
            path.display()
        )));
    }
    Ok(())
}

/// Reads `<root>/<year>`, validating sizes, the cube checksum and labels.
pub fn read_year(root: &Path, year: &str, classes: usize) -> Result<YearData> {
    let dir = root.join(year);
    let m = Manifest::read(&dir.join("manifest"))?;
    let format = m.require("format")?;
    if format != DATASET_FORMAT {
        return Err(Error::Format(format!("unexpected dataset format `{format}`")));
    }
    let shape: Vec<usize> = m.parse_list("shape")?;
    let [_, _, h, w]: [usize; 4] = shape
        .clone()
        .try_into()
        .map_err(|_| Error::Format(format!("cube shape {shape:?} is not 4-dimensional")))?;

    let cube_path = dir.join("cube.bin");
    let cube_bytes = read_bytes(&cube_path)?;
    expect_len(&cube_path, cube_bytes.len(), shape.iter().product::<usize>() * 4)?;
    if let Some(sum) = m.get("cube_checksum") {
        let actual = format!("{:016x}", fnv1a(&cube_bytes));
        if actual != sum {
            return Err(Error::Format(format!(
                "{}: checksum {actual} does not match manifest {sum}",
                cube_path.display()
            )));
        }
    }
    let labels_path = dir.join("labels.bin");
    let labels = read_bytes(&labels_path)?;
    expect_len(&labels_path, labels.len(), h * w)?;
    let mask_path = dir.join("mask.bin");
    let mask = read_bytes(&mask_path)?;
    expect_len(&mask_path, mask.len(), h * w)?;
    if mask.iter().any(|&v| v > 1) {
        return Err(Error::Data(format!("{}: mask values must be 0 or 1", mask_path.display())));
    }

    let data = Tensor::new(shape, f32_from_le_bytes(&cube_bytes)?)?;
    let labels = Raster::new(h, w, labels)?;
    check_labels(&labels, classes)?;
    let cube = RegularCube::new(data, Raster::new(h, w, mask.iter().map(|&v| v == 1).collect())?)?;
    let norm = if m.parse_value::<bool>("normalized")? {
        Some(NormStats {
            mean: m.parse_list("norm_mean")?,
            std: m.parse_list("norm_std")?,
        })
    } else {
        None
    };
    Ok(YearData {
        year: year.to_string(),
        cube,
        labels,
        norm,
    })
}

/// Names of the year subdirectories of `root` that contain a manifest,
/// sorted.
pub fn list_years(root: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut years = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.join("manifest").is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                years.push(name.to_string());
            }
        }
    }
    years.sort();
    Ok(years)
}

pub fn write_raw(dir: &Path, stack: &SceneStack, labels: &LabelRaster) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [bands, k, h, w] = stack.dims();
    if labels.height != h || labels.width != w {
        return Err(Error::dim("raster", "labels do not match the stack"));
    }
    write_bytes(
        &dir.join("observations.bin"),
        &f32_le_bytes(stack.observations.data().iter().copied()),
    )?;
    let qa: Vec<u8> = stack.qa.iter().map(|&v| v as u8).collect();
    write_bytes(&dir.join("qa.bin"), &qa)?;
    write_bytes(&dir.join("labels.bin"), &labels.data)?;
    let mut m = Manifest::new();
    m.set("format", RAW_FORMAT);
    m.set_list("shape", &[bands, k, h, w]);
    m.set("axis_order", "band,observation,row,col");
    m.set("dtype", "f32le");
    m.set_list("band_names", &band_names(bands));
    m.set_list("dates", &stack.dates);
    m.write(&dir.join("manifest"))
}

pub fn read_raw(dir: &Path, classes: usize) -> Result<(SceneStack, LabelRaster)> {
    let m = Manifest::read(&dir.join("manifest"))?;
    let format = m.require("format")?;
    if format != RAW_FORMAT {
        return Err(Error::Format(format!("unexpected raw format `{format}`")));
    }
    let shape: Vec<usize> = m.parse_list("shape")?;
    let [_, k, h, w]: [usize; 4] = shape
        .clone()
        .try_into()
        .map_err(|_| Error::Format(format!("observation shape {shape:?} is not 4-dimensional")))?;
    let dates: Vec<u16> = m.parse_list("dates")?;

    let obs_path = dir.join("observations.bin");
    let obs = read_bytes(&obs_path)?;
    expect_len(&obs_path, obs.len(), shape.iter().product::<usize>() * 4)?;
    let qa_path = dir.join("qa.bin");
    let qa = read_bytes(&qa_path)?;
    expect_len(&qa_path, qa.len(), k * h * w)?;
    if qa.iter().any(|&v| v > 1) {
        return Err(Error::Data(format!("{}: qa values must be 0 or 1", qa_path.display())));
    }
    let labels_path = dir.join("labels.bin");
    let labels = read_bytes(&labels_path)?;
    expect_len(&labels_path, labels.len(), h * w)?;
    let labels = Raster::new(h, w, labels)?;
    check_labels(&labels, classes)?;

    let stack = SceneStack::new(
        Tensor::new(shape, f32_from_le_bytes(&obs)?)?,
        dates,
        qa.iter().map(|&v| v == 1).collect(),
    )?;
    Ok((stack, labels))
}
