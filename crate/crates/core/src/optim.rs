//! SGD with momentum, the fold training loop, k-fold splits and ensemble
//! inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::Example;
use crate::error::{Error, Result};
use crate::fcn3d::{ArchitectureConfig, NetworkModel};
use crate::loss::{compute_loss, GroundMask, LossKind};
use crate::metrics::{argmax_classes, ConfusionMatrix};
use crate::ndtensor::{Scalar, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 0.005;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BATCH_SIZE: usize = 2;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_FOLDS: usize = 5;

/// Classical momentum: `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero velocity for parameters of the given shapes.
    pub fn new<'a>(learning_rate: f64, momentum: f64, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: shapes.into_iter().map(Tensor::zeros).collect(),
        }
    }

    pub fn for_model(model: &NetworkModel<T>, learning_rate: f64, momentum: f64) -> Self {
        let shapes: Vec<Vec<usize>> = model.param_set().iter().map(|p| p.value.shape().to_vec()).collect();
        Self::new(learning_rate, momentum, shapes.iter().map(Vec::as_slice))
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Applies one update to every model parameter from its stored gradient.
    pub fn step_model(&mut self, model: &mut NetworkModel<T>) -> Result<()> {
        sgd_step(
            model.params_mut().into_iter().map(|p| p.value_and_grad()),
            self,
        )
    }
}

/// One momentum update over `(value, grad)` pairs, in parameter order.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = (&'a mut Tensor<T>, &'a Tensor<T>)>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let lr = T::from_f64(state.learning_rate);
    let mu = T::from_f64(state.momentum);
    let mut seen = 0;
    for (i, (value, grad)) in params.into_iter().enumerate() {
        let v = state
            .velocity
            .get_mut(i)
            .ok_or_else(|| Error::dim("params", format!("no velocity for parameter {i}")))?;
        grad.expect_shape(value.shape(), "gradient")?;
        v.expect_shape(value.shape(), "velocity")?;
        for ((w, v), &g) in value.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
            *v = mu * *v + g;
            *w -= lr * *v;
        }
        seen += 1;
    }
    if seen != state.velocity.len() {
        return Err(Error::dim(
            "params",
            format!("{seen} parameters for {} velocity tensors", state.velocity.len()),
        ));
    }
    Ok(())
}

/// Assignment of tiles to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub num_folds: usize,
    /// Fold index of each tile, by tile position.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Tile indices of `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Tile indices outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Checks the partition and balance invariants.
    pub fn validate(&self) -> Result<()> {
        if self.assignment.iter().any(|&f| f >= self.num_folds) {
            return Err(Error::Internal("fold index out of range".into()));
        }
        let sizes = self.fold_sizes();
        let (lo, hi) = (sizes.iter().min(), sizes.iter().max());
        match (lo, hi) {
            (Some(&lo), Some(&hi)) if lo > 0 && hi - lo <= 1 => Ok(()),
            _ => Err(Error::Config(format!("unbalanced or empty folds: sizes {sizes:?}"))),
        }
    }
}

/// Seeded shuffle of `tiles` tile positions, then round-robin assignment.
pub fn split_folds(tiles: usize, num_folds: usize, seed: u64) -> Result<FoldPlan> {
    if num_folds == 0 {
        return Err(Error::Config("number of folds must be positive".into()));
    }
    if num_folds > tiles {
        return Err(Error::Config(format!("{num_folds} folds requested for {tiles} tiles")));
    }
    let mut order: Vec<usize> = (0..tiles).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; tiles];
    for (rank, &tile) in order.iter().enumerate() {
        assignment[tile] = rank % num_folds;
    }
    let plan = FoldPlan {
        num_folds,
        assignment,
        seed,
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchitectureConfig,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchitectureConfig::default(),
            loss: LossKind::Iou,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub fold: usize,
    pub train_loss: f64,
    pub val_kappa: f64,
    pub shuffle_seed: u64,
}

pub const HISTORY_HEADER: &str = "epoch,fold,train_loss,val_kappa,shuffle_seed";

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.fold, r.train_loss, r.val_kappa, r.shuffle_seed
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub fold: usize,
    /// Weights from the epoch with the best validation kappa.
    pub model: NetworkModel<T>,
    pub best_epoch: usize,
    pub best_kappa: f64,
    pub history: Vec<EpochRecord>,
}

/// Seed of the weight initialization for `fold`.
pub fn fold_init_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Seed of the batch shuffle in `epoch` (1-based).
pub fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add(epoch as u64)
}

/// Stacks example cubes into an `(N, bands, time, S, S)` batch.
pub fn batch_input<T: Scalar>(examples: &[&Example]) -> Result<Tensor<T>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::dim("example", "empty batch"))?;
    let shape = first.cube.shape().to_vec();
    let mut data = Vec::with_capacity(examples.len() * first.cube.len());
    for e in examples {
        e.cube.expect_shape(&shape, "example cube")?;
        data.extend(e.cube.data().iter().map(|&v| T::from_f64(v as f64)));
    }
    let mut full = vec![examples.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

pub fn batch_truth<T: Scalar>(examples: &[&Example], classes: usize) -> Result<GroundMask<T>> {
    let s = examples
        .first()
        .ok_or_else(|| Error::dim("example", "empty batch"))?
        .tile_size();
    let labels: Vec<u8> = examples.iter().flat_map(|e| e.labels.iter().copied()).collect();
    let mask: Vec<bool> = examples.iter().flat_map(|e| e.mask.iter().copied()).collect();
    GroundMask::from_labels(&labels, &mask, [examples.len(), s, s], classes)
}

/// Confusion matrix of the argmax predictions of `predict` over examples.
pub fn confusion_over<T: Scalar>(
    examples: &[&Example],
    classes: usize,
    mut predict: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    for e in examples {
        let probs = predict(&batch_input(&[e])?)?;
        let pred = argmax_classes(probs.data(), classes);
        cm.accumulate(&pred, &e.labels, &e.mask)?;
    }
    Ok(cm)
}

/// Trains one fold, validating on it after every epoch.
pub fn train_fold<T: Scalar>(
    examples: &[Example],
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<FoldOutcome<T>> {
    train_fold_with(examples, plan, fold, config, seed, |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_with<T: Scalar>(
    examples: &[Example],
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FoldOutcome<T>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    if plan.assignment.len() != examples.len() {
        return Err(Error::Config(format!(
            "fold plan covers {} tiles, dataset has {}",
            plan.assignment.len(),
            examples.len()
        )));
    }
    if fold >= plan.num_folds {
        return Err(Error::Config(format!("fold {fold} out of range for {} folds", plan.num_folds)));
    }
    plan.validate()?;
    let val: Vec<&Example> = plan.members(fold).into_iter().map(|i| &examples[i]).collect();
    let train: Vec<usize> = plan.complement(fold);
    if val.is_empty() || train.is_empty() {
        return Err(Error::Config(format!("fold {fold} leaves an empty training or validation set")));
    }
    if val.iter().all(|e| !e.mask.iter().any(|&v| v)) {
        return Err(Error::Config(format!("validation fold {fold} has no valid pixels")));
    }
    let classes = config.arch.num_classes;

    let mut model = NetworkModel::<T>::build(&config.arch, fold_init_seed(seed, fold))?;
    let mut opt = OptimizerState::for_model(&model, config.learning_rate, config.momentum);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order = train.clone();

    for epoch in 1..=config.epochs {
        let shuffle_seed = epoch_shuffle_seed(seed, epoch);
        order.copy_from_slice(&train);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let truth = batch_truth::<T>(&batch, classes)?;
            if truth.valid_pixels() == 0 {
                continue;
            }
            model.zero_grads();
            let probs = model.forward(&batch_input(&batch)?)?;
            let loss = compute_loss(config.loss, &probs, &truth)?;
            model.backward(&loss.grad)?;
            opt.step_model(&mut model)?;
            loss_sum += loss.value.as_f64();
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Config(format!("training folds of fold {fold} have no valid pixels")));
        }
        let train_loss = loss_sum / batches as f64;
        if !train_loss.is_finite() {
            return Err(Error::Data(format!("fold {fold} epoch {epoch}: training loss is not finite")));
        }

        let val_kappa = confusion_over(&val, classes, |x| model.predict(x))?.kappa()?;
        let record = EpochRecord {
            epoch,
            fold,
            train_loss,
            val_kappa,
            shuffle_seed,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(k, _, _)| val_kappa > *k) {
            best = Some((val_kappa, epoch, model.snapshot()));
        }
    }

    let (best_kappa, best_epoch, weights) = best.expect("at least one epoch");
    model.restore(&weights)?;
    Ok(FoldOutcome {
        fold,
        model,
        best_epoch,
        best_kappa,
        history,
    })
}

/// Mean of the models' softmax outputs on `cube`.
pub fn ensemble_predict<T: Scalar>(models: &[NetworkModel<T>], cube: &Tensor<T>) -> Result<Tensor<T>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one model".into()))?;
    if models.iter().any(|m| m.config() != first.config()) {
        return Err(Error::Config("ensemble members have different architectures".into()));
    }
    let maps = models
        .iter()
        .map(|m| m.predict(cube))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_maps(&maps))
}

/// Element-wise mean of equally shaped maps, accumulated in `f64`.
pub fn average_maps<T: Scalar>(maps: &[Tensor<T>]) -> Tensor<T> {
    let shape = maps[0].shape().to_vec();
    let count = maps.len() as f64;
    Tensor::from_fn(&shape, |i| {
        let sum: f64 = maps.iter().map(|m| m.data()[i].as_f64()).sum();
        T::from_f64(sum / count)
    })
}
