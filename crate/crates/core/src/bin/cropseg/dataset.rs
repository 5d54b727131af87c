use std::path::{Path, PathBuf};

use clap::Args;
use cropseg::datapipe::io::{list_years, read_raw, write_raw, write_year, YearData};
use cropseg::datapipe::{
    apply_norm, compute_norm_stats, interpolate_to_grid, pixel_validity, synthesize_dataset, synthesize_raw,
    LabelRaster, RegularCube, SynthSpec, CLASS_NAMES,
};

use crate::settings::{ensure_dir, ensure_input, CommonArgs, Settings};
use crate::Failure;

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of raw year subdirectories
    #[arg(long, value_name = "DIR")]
    raw: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated years excluded from the normalization statistics
    #[arg(long, value_name = "YEARS")]
    test_years: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated year names, one scene each
    #[arg(long, value_name = "YEARS")]
    years: Option<String>,
    /// Raster height and width in pixels
    #[arg(long)]
    size: Option<usize>,
    /// Standard deviation of the reflectance noise
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of pixels made invalid
    #[arg(long)]
    invalid_fraction: Option<f64>,
    /// Number of single-class fields per scene
    #[arg(long)]
    fields: Option<usize>,
    /// `grid` writes a normalized dataset; `raw` writes irregular
    /// observations for `preprocess`
    #[arg(long, value_name = "grid|raw")]
    format: Option<String>,
    /// Comma-separated years excluded from the normalization statistics
    #[arg(long, value_name = "YEARS")]
    test_years: Option<String>,
}

/// Normalizes every year with statistics pooled over the non-test years
/// and writes the dataset.
fn finish_dataset(
    out: &Path,
    years: Vec<(String, RegularCube, LabelRaster)>,
    test_years: &[String],
    settings: &mut Settings,
) -> Result<(), Failure> {
    for t in test_years {
        if !years.iter().any(|(y, _, _)| y == t) {
            return Err(Failure::Usage(format!("test year `{t}` is not in the input")));
        }
    }
    let training: Vec<&RegularCube> = years
        .iter()
        .filter(|(y, _, _)| !test_years.contains(y))
        .map(|(_, c, _)| c)
        .collect();
    if training.is_empty() {
        return Err(Failure::Usage("every year is a test year; no data for normalization statistics".into()));
    }
    let stats = compute_norm_stats(&training)?;
    settings.record("norm_mean", join(&stats.mean));
    settings.record("norm_std", join(&stats.std));
    ensure_dir(out)?;
    for (year, mut cube, labels) in years {
        apply_norm(&mut cube, &stats)?;
        let dir = write_year(
            out,
            &YearData {
                year: year.clone(),
                cube,
                labels,
                norm: Some(stats.clone()),
            },
        )?;
        println!("wrote {}", dir.display());
    }
    settings.write(out)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn preprocess(args: PreprocessArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "preprocess")?;
    let raw = settings.path("raw", args.raw)?;
    let out = settings.path("out", args.out)?;
    let test_years = settings.list("test-years", args.test_years)?;
    settings.warn_unused();
    ensure_input(&raw, "raw directory")?;

    let names = list_years(&raw)?;
    if names.is_empty() {
        return Err(Failure::Usage(format!("no raw scenes (subdirectories with a manifest) in {}", raw.display())));
    }
    let mut years = Vec::with_capacity(names.len());
    for year in names {
        let (stack, labels) = read_raw(&raw.join(&year), CLASS_NAMES.len())?;
        let mask = pixel_validity(&stack)?;
        let total = mask.data.len();
        let excluded = total - mask.count_valid();
        println!(
            "{year}: {} observations, excluded {excluded} of {total} pixels ({:.2}%)",
            stack.dates.len(),
            100.0 * excluded as f64 / total as f64
        );
        settings.record(&format!("excluded_pixels.{year}"), excluded);
        let cube = interpolate_to_grid(&stack, &mask)?;
        years.push((year, cube, labels));
    }
    finish_dataset(&out, years, &test_years, &mut settings)
}

pub fn synthesize(args: SynthesizeArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "synthesize")?;
    let out = settings.path("out", args.out)?;
    let years = settings.list_or("years", args.years, "2017,2018,2019")?;
    let defaults = SynthSpec::default();
    let size = settings.pick("size", args.size, defaults.height)?;
    let spec = SynthSpec {
        height: size,
        width: size,
        noise: settings.pick("noise", args.noise, defaults.noise)?,
        invalid_fraction: settings.pick("invalid-fraction", args.invalid_fraction, defaults.invalid_fraction)?,
        fields: settings.pick("fields", args.fields, defaults.fields)?,
        ..defaults
    };
    let format = settings.pick("format", args.format, "grid".to_string())?;
    let test_years = settings.list("test-years", args.test_years)?;
    settings.warn_unused();
    if years.is_empty() {
        return Err(Failure::Usage("--years must name at least one year".into()));
    }
    let seed = settings.seed();

    match format.as_str() {
        "raw" => {
            ensure_dir(&out)?;
            for (i, year) in years.iter().enumerate() {
                let raw = synthesize_raw(&spec, seed.wrapping_add(i as u64))?;
                let dir = out.join(year);
                write_raw(&dir, &raw.stack, &raw.labels)?;
                println!("wrote {}", dir.display());
            }
            settings.write(&out)
        }
        "grid" => {
            let mut scenes = Vec::with_capacity(years.len());
            for (i, year) in years.iter().enumerate() {
                let scene = synthesize_dataset(&spec, seed.wrapping_add(i as u64))?;
                settings.record(&format!("checksum.{year}"), format!("{:016x}", scene.checksum()));
                scenes.push((year.clone(), scene.cube, scene.labels));
            }
            finish_dataset(&out, scenes, &test_years, &mut settings)
        }
        other => Err(Failure::Usage(format!("unknown format `{other}` (expected grid or raw)"))),
    }
}
