use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use cropseg::datapipe::io::{list_years, read_year};
use cropseg::datapipe::{stitch, tile, TileGrid, CLASS_NAMES};
use cropseg::fcn3d::load_weights;
use cropseg::manifest::{fnv1a, Manifest};
use cropseg::metrics::{argmax_classes, difference_map, ConfusionMatrix, MacroAverage};
use cropseg::optim::{batch_input, ensemble_predict, DEFAULT_FOLDS};
use cropseg::{Error, NetworkModel};

use crate::render::{class_color, difference_color, write_ppm};
use crate::settings::{ensure_dir, ensure_input, CommonArgs, Settings};
use crate::Failure;

pub const PREDICTION_FORMAT: &str = "cropseg-prediction-v1";

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model directory written by `train`
    #[arg(long, value_name = "DIR")]
    models: Option<PathBuf>,
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated years to predict (default: all)
    #[arg(long, value_name = "YEARS")]
    years: Option<String>,
    /// Number of fold models expected in the model directory
    #[arg(long)]
    folds: Option<usize>,
    /// Also write a colour rendering of the class map
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Prediction directory written by `predict`
    #[arg(long, value_name = "DIR")]
    pred: Option<PathBuf>,
    /// Dataset directory with the reference labels and masks
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write colour renderings of prediction, reference and difference
    #[arg(long)]
    render: bool,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Run(Error::io(path, e)))
}

fn is_weight_file(name: &str) -> bool {
    name.strip_prefix("fold")
        .and_then(|rest| rest.strip_suffix(".weights"))
        .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

fn load_models(dir: &Path, folds: usize) -> Result<Vec<NetworkModel<f32>>, Failure> {
    ensure_input(dir, "model directory")?;
    let entries = fs::read_dir(dir).map_err(|e| Failure::Run(Error::io(dir, e)))?;
    let found = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_str().is_some_and(is_weight_file))
        .count();
    if found != folds {
        return Err(Failure::Usage(format!(
            "{} holds {found} fold weight files, expected {folds} (set --folds to override)",
            dir.display()
        )));
    }
    (0..folds)
        .map(|k| {
            let path = dir.join(format!("fold{k}.weights"));
            ensure_input(&path, "weight file")?;
            Ok(load_weights(&path)?)
        })
        .collect()
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "predict")?;
    let models_dir = settings.path("models", args.models)?;
    let data = settings.path("data", args.data)?;
    let out = settings.path("out", args.out)?;
    let folds = settings.pick("folds", args.folds, DEFAULT_FOLDS)?;
    let mut years = settings.list("years", args.years)?;
    let render = settings.pick("render", args.render.then_some(true), false)?;
    settings.warn_unused();

    let models = load_models(&models_dir, folds)?;
    let config = models[0].config().clone();
    ensure_input(&data, "dataset directory")?;
    if years.is_empty() {
        years = list_years(&data)?;
    }
    if years.is_empty() {
        return Err(Failure::Usage(format!("no years in {}", data.display())));
    }
    ensure_dir(&out)?;
    let classes = config.num_classes;

    for year in &years {
        ensure_input(&data.join(year), "dataset year")?;
        let y = read_year(&data, year, CLASS_NAMES.len())?;
        if y.cube.bands() != config.input_bands || y.cube.time_steps() != config.time_steps {
            return Err(Failure::Usage(format!(
                "year {year} has {} bands x {} steps, models expect {} x {}",
                y.cube.bands(),
                y.cube.time_steps(),
                config.input_bands,
                config.time_steps
            )));
        }
        let (h, w) = (y.cube.height(), y.cube.width());
        let tiles = tile(&y.cube.data, &y.labels, &y.cube.pixel_valid, config.tile_size, year)?;
        let mut maps = Vec::with_capacity(tiles.len());
        for t in &tiles {
            let probs = ensemble_predict(&models, &batch_input::<f32>(&[t])?)?;
            maps.push((t.provenance.row, t.provenance.col, probs.into_data()));
        }
        let grid = TileGrid::new(h, w, config.tile_size)?;
        let views: Vec<(usize, usize, &[f32])> = maps.iter().map(|(r, c, d)| (*r, *c, d.as_slice())).collect();
        let probs = stitch(&grid, classes, &views)?;
        let class_map = argmax_classes(&probs, classes);

        let dir = out.join(year);
        ensure_dir(&dir)?;
        let prob_bytes: Vec<u8> = probs.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_file(&dir.join("probs.bin"), &prob_bytes)?;
        write_file(&dir.join("classes.bin"), &class_map)?;
        let mut m = Manifest::new();
        m.set("format", PREDICTION_FORMAT);
        m.set("year", year);
        m.set_list("shape", &[classes, h, w]);
        m.set("axis_order", "class,row,col");
        m.set("dtype", "f32le");
        m.set_list("class_names", &CLASS_NAMES[..classes.min(CLASS_NAMES.len())]);
        m.set("models", folds);
        m.set("probs_checksum", format!("{:016x}", fnv1a(&prob_bytes)));
        m.set("classes_checksum", format!("{:016x}", fnv1a(&class_map)));
        m.write(&dir.join("manifest"))?;
        if render {
            let mask = &y.cube.pixel_valid.data;
            write_ppm(&dir.join("classes.ppm"), h, w, |p| class_color(class_map[p], mask[p]))?;
        }
        println!("{year}: predicted {h}x{w} from {} tiles -> {}", tiles.len(), dir.display());
    }
    settings.write(&out)
}

struct Prediction {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

fn read_prediction(dir: &Path) -> Result<Prediction, Failure> {
    let m = Manifest::read(&dir.join("manifest"))?;
    if m.require("format")? != PREDICTION_FORMAT {
        return Err(Failure::Run(Error::Format(format!("{} is not a prediction", dir.display()))));
    }
    let shape: Vec<usize> = m.parse_list("shape")?;
    let [_, height, width]: [usize; 3] = shape
        .try_into()
        .map_err(|_| Failure::Run(Error::Format("prediction shape must be class,row,col".into())))?;
    let path = dir.join("classes.bin");
    let classes = fs::read(&path).map_err(|e| Failure::Run(Error::io(&path, e)))?;
    if classes.len() != height * width {
        return Err(Failure::Run(Error::Format(format!(
            "{}: {} bytes for a {height}x{width} raster",
            path.display(),
            classes.len()
        ))));
    }
    Ok(Prediction { height, width, classes })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn report_row(name: &str, cm: &ConfusionMatrix) -> Result<String, Failure> {
    let pa: MacroAverage = cm.macro_producers_accuracy()?;
    let ua: MacroAverage = cm.macro_users_accuracy()?;
    let mut cells = vec![
        name.to_string(),
        cm.total().to_string(),
        format!("{:.6}", cm.kappa()?),
        format!("{:.6}", pa.value),
        format!("{:.6}", ua.value),
    ];
    cells.extend(pa.per_class.iter().map(|v| fmt_opt(*v)));
    cells.extend(ua.per_class.iter().map(|v| fmt_opt(*v)));
    Ok(cells.join(","))
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "evaluate")?;
    let pred = settings.path("pred", args.pred)?;
    let data = settings.path("data", args.data)?;
    let out = settings.path("out", args.out)?;
    let render = settings.pick("render", args.render.then_some(true), false)?;
    settings.warn_unused();
    ensure_input(&pred, "prediction directory")?;
    ensure_input(&data, "dataset directory")?;

    let years = list_years(&pred)?;
    if years.is_empty() {
        return Err(Failure::Usage(format!("no predictions in {}", pred.display())));
    }
    ensure_dir(&out)?;
    let classes = CLASS_NAMES.len();
    let mut header = vec!["year", "valid_pixels", "kappa", "ma_pa", "ma_ua"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(CLASS_NAMES.iter().map(|c| format!("pa_{c}")));
    header.extend(CLASS_NAMES.iter().map(|c| format!("ua_{c}")));
    let mut report = header.join(",") + "\n";
    let mut total = ConfusionMatrix::new(classes);

    for year in &years {
        let p = read_prediction(&pred.join(year))?;
        if !data.join(year).is_dir() {
            return Err(Failure::Usage(format!("dataset has no year {year}")));
        }
        let y = read_year(&data, year, classes)?;
        if (y.labels.height, y.labels.width) != (p.height, p.width) {
            return Err(Failure::Usage(format!(
                "{year}: prediction is {}x{}, reference is {}x{}",
                p.height, p.width, y.labels.height, y.labels.width
            )));
        }
        let mask = &y.cube.pixel_valid.data;
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&p.classes, &y.labels.data, mask)?;
        total.merge(&cm)?;
        let row = report_row(year, &cm)?;
        println!("{row}");
        report.push_str(&row);
        report.push('\n');

        let dir = out.join(year);
        ensure_dir(&dir)?;
        let diff = difference_map(&p.classes, &y.labels.data, mask)?;
        write_file(&dir.join("difference.bin"), &diff)?;
        let mut confusion = String::from("reference\\predicted");
        for c in CLASS_NAMES {
            confusion.push_str(&format!(",{c}"));
        }
        confusion.push('\n');
        for (r, name) in CLASS_NAMES.iter().enumerate() {
            confusion.push_str(name);
            for c in 0..classes {
                confusion.push_str(&format!(",{}", cm.get(r, c)));
            }
            confusion.push('\n');
        }
        write_file(&dir.join("confusion.csv"), confusion.as_bytes())?;
        if render {
            let (h, w) = (p.height, p.width);
            write_ppm(&dir.join("difference.ppm"), h, w, |q| difference_color(diff[q]))?;
            write_ppm(&dir.join("prediction.ppm"), h, w, |q| class_color(p.classes[q], mask[q]))?;
            write_ppm(&dir.join("reference.ppm"), h, w, |q| class_color(y.labels.data[q], mask[q]))?;
        }
    }
    if years.len() > 1 {
        let row = report_row("all", &total)?;
        println!("{row}");
        report.push_str(&row);
        report.push('\n');
    }
    write_file(&out.join("metrics.csv"), report.as_bytes())?;
    settings.write(&out)
}
