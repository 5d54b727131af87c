use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use cropseg::datapipe::io::{list_years, read_year};
use cropseg::datapipe::{tile, Example, CLASS_NAMES};
use cropseg::fcn3d::ArchitectureConfig;
use cropseg::loss::LossKind;
use cropseg::optim::{
    history_csv, split_folds, train_fold_with, FoldOutcome, FoldPlan, TrainConfig, DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS, DEFAULT_FOLDS, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM,
};
use cropseg::Error;

use crate::settings::{ensure_dir, ensure_input, CommonArgs, Settings};
use crate::Failure;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory written by `preprocess` or `synthesize`
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output model directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "iou|ce")]
    loss: Option<LossKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Tile side in pixels
    #[arg(long)]
    tile: Option<usize>,
    /// Encoder levels
    #[arg(long)]
    levels: Option<usize>,
    /// Channels of the first level; doubled at every level below it
    #[arg(long)]
    base_channels: Option<usize>,
    /// Folds trained concurrently
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated years held out from training
    #[arg(long, value_name = "YEARS")]
    test_years: Option<String>,
}

/// Loads and tiles every non-test year of a normalized dataset.
pub fn load_examples(
    data: &std::path::Path,
    tile_size: usize,
    test_years: &[String],
) -> Result<(Vec<Example>, usize, usize), Failure> {
    ensure_input(data, "dataset directory")?;
    let years: Vec<String> = list_years(data)?
        .into_iter()
        .filter(|y| !test_years.contains(y))
        .collect();
    if years.is_empty() {
        return Err(Failure::Usage(format!("no training years in {}", data.display())));
    }
    let mut examples = Vec::new();
    let mut dims = None;
    for year in &years {
        let y = read_year(data, year, CLASS_NAMES.len())?;
        if y.norm.is_none() {
            return Err(Failure::Usage(format!("year {year} is not normalized; run `cropseg preprocess` first")));
        }
        let d = (y.cube.bands(), y.cube.time_steps());
        if *dims.get_or_insert(d) != d {
            return Err(Failure::Run(Error::Data(format!("year {year} has a different band/time layout"))));
        }
        examples.extend(tile(&y.cube.data, &y.labels, &y.cube.pixel_valid, tile_size, year)?);
    }
    let (bands, steps) = dims.expect("at least one year");
    Ok((examples, bands, steps))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut settings = Settings::load(&args.common, "train")?;
    let data = settings.path("data", args.data)?;
    let out = settings.path("out", args.out)?;
    let loss = settings.pick("loss", args.loss, LossKind::Iou)?;
    let epochs = settings.pick("epochs", args.epochs, DEFAULT_EPOCHS)?;
    let batch_size = settings.pick("batch-size", args.batch_size, DEFAULT_BATCH_SIZE)?;
    let lr = settings.pick("lr", args.lr, DEFAULT_LEARNING_RATE)?;
    let momentum = settings.pick("momentum", args.momentum, DEFAULT_MOMENTUM)?;
    let folds = settings.pick("folds", args.folds, DEFAULT_FOLDS)?;
    let defaults = ArchitectureConfig::default();
    let tile_size = settings.pick("tile", args.tile, defaults.tile_size)?;
    let levels = settings.pick("levels", args.levels, defaults.levels)?;
    let base = settings.pick("base-channels", args.base_channels, defaults.base_channels)?;
    let jobs = settings.pick("jobs", args.jobs, 1usize)?.max(1);
    let test_years = settings.list("test-years", args.test_years)?;
    settings.warn_unused();
    let seed = settings.seed();

    let (examples, bands, steps) = load_examples(&data, tile_size, &test_years)?;
    let mut arch = ArchitectureConfig::doubling(levels, base);
    arch.tile_size = tile_size;
    arch.input_bands = bands;
    arch.time_steps = steps;
    arch.num_classes = CLASS_NAMES.len();
    let config = TrainConfig {
        arch,
        loss,
        learning_rate: lr,
        momentum,
        batch_size,
        epochs,
    };
    config.validate()?;
    let plan = split_folds(examples.len(), folds, seed)?;
    settings.record("tiles", examples.len());
    settings.record("fold_sizes", format!("{:?}", plan.fold_sizes()));
    ensure_dir(&out)?;
    eprintln!(
        "training {folds} folds on {} tiles of {tile_size}px ({} parameters per model)",
        examples.len(),
        cropseg::NetworkModel::<f32>::build(&config.arch, 0)?.parameter_count()
    );

    let outcomes = run_folds(&examples, &plan, &config, seed, jobs)?;
    let mut all = Vec::new();
    let mut summary = String::from("fold,best_epoch,best_val_kappa,weight_checksum\n");
    for o in &outcomes {
        o.model.save_weights(&out.join(format!("fold{}.weights", o.fold)))?;
        let path = out.join(format!("history_fold{}.csv", o.fold));
        fs::write(&path, history_csv(&o.history)).map_err(|e| Error::io(&path, e))?;
        summary.push_str(&format!(
            "{},{},{},{:016x}\n",
            o.fold,
            o.best_epoch,
            o.best_kappa,
            o.model.weight_checksum()
        ));
        all.extend(o.history.iter().cloned());
        println!(
            "fold {}: best validation kappa {:.4} at epoch {}",
            o.fold, o.best_kappa, o.best_epoch
        );
    }
    for (name, text) in [("history.csv", history_csv(&all)), ("summary.csv", summary)] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    settings.write(&out)
}

/// Trains every fold, up to `jobs` at a time; results are ordered by fold
/// and do not depend on `jobs`.
fn run_folds(
    examples: &[Example],
    plan: &FoldPlan,
    config: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<FoldOutcome<f32>>, Failure> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<cropseg::Result<FoldOutcome<f32>>>>> =
        Mutex::new((0..plan.num_folds).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(plan.num_folds) {
            scope.spawn(|| loop {
                let fold = next.fetch_add(1, Ordering::SeqCst);
                if fold >= plan.num_folds {
                    break;
                }
                let outcome = train_fold_with(examples, plan, fold, config, seed, |r| {
                    eprintln!(
                        "fold {} epoch {:>3}: train_loss {:.5} val_kappa {:.4}",
                        r.fold, r.epoch, r.train_loss, r.val_kappa
                    );
                });
                results.lock().expect("no panics while holding the lock")[fold] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every fold ran").map_err(Failure::Run))
        .collect()
}
