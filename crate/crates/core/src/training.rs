//! The joint objective and optimization loop.
//!
//! Per epoch: shuffle the train split, draw a fresh rotation per object,
//! render the transformed views on the fly, and minimize
//! `task + lambda * mvter` where `task` is mean cross-entropy over the
//! labeled subset and `mvter` is the mean squared error of the decoded
//! transformation over all objects. Original views are rendered once and
//! cached; everything is reproducible from the config seed.

use rayon::prelude::*;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{apply_rotation, sample_rotation, PointCloud};
use crate::model::{
    angles_to_target, classify_batch, encode_batch, forward_mvter, views_to_tensor, Model,
    ModelConfig, Scheme,
};
use crate::renderer::{render_views, CameraRig, ViewImage, ViewSet};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, SgdState, Tape, Tensor, Var};

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning rate halves after every this many epochs.
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: Scheme::Average,
            lambda: 1.0,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_halving_period: 10,
            batch_size: 24,
            epochs: 30,
            label_rate: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::domain(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(Error::domain(format!(
                "label_rate {} must lie in (0, 1]",
                self.label_rate
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::domain(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::domain("lr_halving_period must be at least 1"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::domain(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::domain("weight_decay must be >= 0".to_string()));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi(((epoch - 1) / self.lr_halving_period) as i32)
    }
}

/// One training triple: original views, transformed views, the
/// normalized transformation target, and the (optionally masked) label.
#[derive(Debug, Clone)]
pub struct BatchObject {
    pub views: ViewSet,
    pub transformed_views: ViewSet,
    pub target: [f64; 3],
    pub label: Option<usize>,
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub objects: Vec<BatchObject>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        let m = match self.objects.first() {
            Some(o) => o.views.len(),
            None => return Err(Error::domain("batch must contain at least one object")),
        };
        for (i, o) in self.objects.iter().enumerate() {
            if o.views.len() != m || o.transformed_views.len() != m {
                return Err(Error::domain(format!(
                    "batch object {i}: view counts disagree"
                )));
            }
            if !o.target.iter().all(|c| c.is_finite() && (-1.0..=1.0).contains(c)) {
                return Err(Error::domain(format!(
                    "batch object {i}: target {:?} outside [-1, 1]^3",
                    o.target
                )));
            }
        }
        Ok(())
    }
}

/// A dataset object with its cached original views.
#[derive(Debug, Clone)]
pub struct PreparedObject {
    pub cloud: PointCloud,
    pub views: ViewSet,
    pub label: usize,
    pub labeled: bool,
}

/// Dataset splits with original views rendered once up front.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub rig: CameraRig,
    pub num_classes: usize,
    pub train: Vec<PreparedObject>,
    pub val: Vec<PreparedObject>,
    pub test: Vec<PreparedObject>,
}

impl PreparedDataset {
    pub fn prepare(ds: &Dataset, rig: CameraRig) -> Result<Self> {
        let render_split = |split: Split| -> Result<Vec<PreparedObject>> {
            ds.split(split)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|obj| {
                    Ok(PreparedObject {
                        cloud: obj.cloud.clone(),
                        views: render_views(&obj.cloud, &rig)?,
                        label: obj.class_id as usize,
                        labeled: obj.labeled,
                    })
                })
                .collect()
        };
        Ok(PreparedDataset {
            num_classes: ds.num_classes as usize,
            train: render_split(Split::Train)?,
            val: render_split(Split::Val)?,
            test: render_split(Split::Test)?,
            rig,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cam = &self.rig.cameras()[0];
        ModelConfig::new(cam.resolution, self.num_classes)
    }
}

/// MSE between predicted and target transformation batches. Delegates
/// to the tensor op so both paths agree bit-for-bit.
pub fn mvter_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::domain(format!(
            "mvter_loss: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut tape = Tape::<f64>::new();
    let flat = |rows: &[[f64; 3]]| -> Vec<f64> { rows.iter().flatten().copied().collect() };
    let p = tape.constant(Tensor::new(vec![pred.len(), 3], flat(pred))?)?;
    let t = tape.constant(Tensor::new(vec![target.len(), 3], flat(target))?)?;
    let loss = tape.mse(p, t)?;
    tape.value(loss).item()
}

struct BatchRefs<'a> {
    orig: Vec<&'a ViewSet>,
    /// None disables the transformation branch (used when lambda = 0).
    trans: Option<Vec<&'a ViewSet>>,
    targets: Vec<[f64; 3]>,
    labels: Vec<Option<usize>>,
    labeled: Vec<bool>,
}

struct LossVars {
    /// None when the batch produces no gradient (lambda = 0 and no
    /// labeled object).
    total: Option<Var>,
    task: Option<Var>,
    mvter: Option<Var>,
    logits: Var,
    labeled_count: usize,
}

fn stack_views<T: Scalar>(tape: &mut Tape<T>, sets: &[&ViewSet]) -> Result<Var> {
    let views: Vec<&ViewImage> = sets.iter().flat_map(|s| s.views().iter()).collect();
    tape.constant(views_to_tensor(&views)?)
}

fn build_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bm: &crate::model::BoundModel,
    refs: &BatchRefs<'_>,
    scheme: Scheme,
    lambda: f64,
) -> Result<LossVars> {
    let batch = refs.orig.len();
    let m = refs.orig[0].len();
    let (mvter, fused_original) = match &refs.trans {
        Some(trans) => {
            let x_orig = stack_views(tape, &refs.orig)?;
            let x_trans = stack_views(tape, trans)?;
            let fwd = forward_mvter(tape, bm, x_orig, x_trans, batch, m, scheme)?;
            let target_data: Vec<f64> = refs.targets.iter().flatten().copied().collect();
            let targets = tape.constant(Tensor::from_f64(vec![batch, 3], &target_data)?)?;
            let mvter = tape.mse(fwd.prediction, targets)?;
            (Some(mvter), fwd.fused_original)
        }
        None => {
            let x_orig = stack_views(tape, &refs.orig)?;
            let d = bm.encoder.feature_dim;
            let descs = encode_batch(tape, &bm.encoder, x_orig)?;
            let grouped = tape.reshape(descs, vec![batch, m, d])?;
            (None, tape.view_max(grouped)?)
        }
    };
    let logits = classify_batch(tape, bm, fused_original)?;
    let labeled_rows: Vec<usize> = (0..batch)
        .filter(|&i| refs.labeled[i] && refs.labels[i].is_some())
        .collect();
    let task = if labeled_rows.is_empty() {
        None
    } else {
        let labels: Vec<usize> = labeled_rows
            .iter()
            .map(|&i| refs.labels[i].expect("filtered on is_some"))
            .collect();
        let selected = tape.select_rows(logits, &labeled_rows)?;
        Some(tape.softmax_xent(selected, &labels)?)
    };
    let weighted_mvter = match mvter {
        Some(v) => Some(tape.scale(v, T::from_f64(lambda))?),
        None => None,
    };
    let total = match (task, weighted_mvter) {
        (Some(t), Some(m)) => Some(tape.add(t, m)?),
        (Some(t), None) => Some(t),
        (None, Some(m)) => Some(m),
        (None, None) => None,
    };
    Ok(LossVars {
        total,
        task,
        mvter,
        logits,
        labeled_count: labeled_rows.len(),
    })
}

/// Scalar value of the joint objective on one batch (forward only).
pub fn total_loss<T: Scalar>(batch: &Batch, model: &Model<T>, config: &TrainConfig) -> Result<f64> {
    config.validate()?;
    batch.validate()?;
    let mut tape = Tape::new();
    let bm = model.bind_frozen(&mut tape)?;
    let refs = BatchRefs {
        orig: batch.objects.iter().map(|o| &o.views).collect(),
        trans: Some(batch.objects.iter().map(|o| &o.transformed_views).collect()),
        targets: batch.objects.iter().map(|o| o.target).collect(),
        labels: batch.objects.iter().map(|o| o.label).collect(),
        labeled: batch.objects.iter().map(|o| o.labeled).collect(),
    };
    let vars = build_loss(&mut tape, &bm, &refs, config.scheme, config.lambda)?;
    match vars.total {
        Some(v) => Ok(tape.value(v).item()?.into_f64()),
        None => Ok(0.0),
    }
}

/// Averages tracked over one epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    /// Mean cross-entropy over labeled objects (0 when none).
    pub task_loss: f64,
    /// Mean transformation MSE over all objects (0 when lambda = 0).
    pub mvter_loss: f64,
    /// Argmax accuracy over all train objects this epoch.
    pub train_acc: f64,
    /// Fresh transformation target drawn for train object 0, for the
    /// resampling diagnostic.
    pub sample_probe: Option<[f64; 3]>,
}

/// One pass over the shuffled train split.
pub fn train_epoch<T: Scalar>(
    data: &PreparedDataset,
    model: &mut Model<T>,
    config: &TrainConfig,
    rng: &mut SplitMix64,
    sgd: &mut SgdState<T>,
) -> Result<EpochStats> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::domain("train split is empty"));
    }
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    rng.shuffle(&mut order);

    let mut task_sum = 0.0;
    let mut labeled_total = 0usize;
    let mut mvter_sum = 0.0;
    let mut object_total = 0usize;
    let mut correct = 0usize;
    let mut sample_probe = None;

    for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
        let objects: Vec<&PreparedObject> = chunk.iter().map(|&i| &data.train[i]).collect();
        // Sample rotations on the main thread so the stream stays
        // sequential, then render the transformed views in parallel.
        let transformed: Option<(Vec<[f64; 3]>, Vec<ViewSet>)> = if config.lambda > 0.0 {
            let rotations: Vec<_> = objects.iter().map(|_| sample_rotation(rng)).collect();
            let targets: Vec<[f64; 3]> = rotations.iter().map(angles_to_target).collect();
            for (&idx, target) in chunk.iter().zip(&targets) {
                if idx == 0 {
                    sample_probe = Some(*target);
                }
            }
            let views = objects
                .par_iter()
                .zip(rotations.par_iter())
                .map(|(obj, rot)| render_views(&apply_rotation(&obj.cloud, rot), &data.rig))
                .collect::<Result<Vec<_>>>()?;
            Some((targets, views))
        } else {
            None
        };

        let mut tape = Tape::new();
        let bm = model.bind(&mut tape)?;
        let refs = BatchRefs {
            orig: objects.iter().map(|o| &o.views).collect(),
            trans: transformed.as_ref().map(|(_, v)| v.iter().collect()),
            targets: transformed
                .as_ref()
                .map(|(t, _)| t.clone())
                .unwrap_or_else(|| vec![[0.0; 3]; objects.len()]),
            labels: objects.iter().map(|o| Some(o.label)).collect(),
            labeled: objects.iter().map(|o| o.labeled).collect(),
        };
        let vars = build_loss(&mut tape, &bm, &refs, config.scheme, config.lambda)?;

        if let Some(task) = vars.task {
            let value = tape.value(task).item()?.into_f64();
            if !value.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite task loss in batch {batch_no}"
                )));
            }
            task_sum += value * vars.labeled_count as f64;
            labeled_total += vars.labeled_count;
        }
        if let Some(mvter) = vars.mvter {
            let value = tape.value(mvter).item()?.into_f64();
            if !value.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite transformation loss in batch {batch_no}"
                )));
            }
            mvter_sum += value * objects.len() as f64;
            object_total += objects.len();
        }
        {
            let logits = tape.value(vars.logits);
            let k = logits.shape()[1];
            for (row, obj) in logits.data().chunks_exact(k).zip(&objects) {
                let pred = argmax(row);
                if pred == obj.label {
                    correct += 1;
                }
            }
        }

        if let Some(total) = vars.total {
            tape.backward(total)?;
            for (slot, (var, (name, param))) in bm
                .param_vars()
                .iter()
                .zip(model.named_params_mut())
                .enumerate()
            {
                let grad = tape.grad(*var)?;
                sgd.step(slot, param.data_mut(), grad)?;
                if !param.data().iter().all(|v| v.is_finite()) {
                    return Err(Error::domain(format!(
                        "non-finite parameter '{name}' after update in batch {batch_no}"
                    )));
                }
            }
        }
    }

    Ok(EpochStats {
        task_loss: if labeled_total > 0 {
            task_sum / labeled_total as f64
        } else {
            0.0
        },
        mvter_loss: if object_total > 0 {
            mvter_sum / object_total as f64
        } else {
            0.0
        },
        train_acc: correct as f64 / data.train.len() as f64,
        sample_probe,
    })
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax class predictions for prepared objects, batched.
pub fn predict_labels<T: Scalar>(
    model: &Model<T>,
    objects: &[PreparedObject],
) -> Result<Vec<usize>> {
    let descs = fused_descriptors(model, objects)?;
    descs
        .iter()
        .map(|d| Ok(argmax(&crate::model::classify(d, &model.head)?)))
        .collect()
}

/// Fused (max-pooled) descriptors for prepared objects, batched through
/// frozen tapes in chunks.
pub fn fused_descriptors<T: Scalar>(
    model: &Model<T>,
    objects: &[PreparedObject],
) -> Result<Vec<Vec<T>>> {
    let sets: Vec<&ViewSet> = objects.iter().map(|o| &o.views).collect();
    fused_descriptors_for_sets(model, &sets)
}

/// Fused descriptors for explicit view sets (all with equal view count).
pub fn fused_descriptors_for_sets<T: Scalar>(
    model: &Model<T>,
    sets: &[&ViewSet],
) -> Result<Vec<Vec<T>>> {
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    let m = sets[0].len();
    if sets.iter().any(|s| s.len() != m) {
        return Err(Error::domain("view sets differ in view count"));
    }
    const CHUNK: usize = 32;
    let chunks: Vec<&[&ViewSet]> = sets.chunks(CHUNK).collect();
    let results: Vec<Vec<Vec<T>>> = chunks
        .into_par_iter()
        .map(|chunk| -> Result<Vec<Vec<T>>> {
            let mut tape = Tape::new();
            let bm = model.bind_frozen(&mut tape)?;
            let x = stack_views(&mut tape, chunk)?;
            let d = bm.encoder.feature_dim;
            let descs = encode_batch(&mut tape, &bm.encoder, x)?;
            let grouped = tape.reshape(descs, vec![chunk.len(), m, d])?;
            let fused = tape.view_max(grouped)?;
            Ok(tape
                .value(fused)
                .data()
                .chunks_exact(d)
                .map(|c| c.to_vec())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Fraction of objects whose argmax prediction matches the label.
pub fn split_accuracy<T: Scalar>(model: &Model<T>, objects: &[PreparedObject]) -> Result<f64> {
    if objects.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_labels(model, objects)?;
    let correct = preds
        .iter()
        .zip(objects)
        .filter(|(p, o)| **p == o.label)
        .count();
    Ok(correct as f64 / objects.len() as f64)
}

/// One history row per epoch.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub mvter_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub fn history_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,lr,task_loss,mvter_loss,train_acc,val_acc\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.lr, r.task_loss, r.mvter_loss, r.train_acc, r.val_acc
        ));
    }
    out
}

pub struct FitOutcome<T> {
    /// Best-by-validation-accuracy model (ties keep the later epoch).
    pub model: Model<T>,
    pub history: Vec<EpochRow>,
    pub best_val_acc: f64,
}

/// Runs the full schedule and returns the best checkpoint plus history.
///
/// Label masking is the caller's job (see [`mask_labels`]); this
/// consumes the `labeled` flags as given. `config.label_rate` is carried
/// for validation and the run record only.
pub fn fit<T: Scalar>(data: &PreparedDataset, config: &TrainConfig) -> Result<FitOutcome<T>> {
    fit_with_progress(data, config, |_| {})
}

/// [`fit`] invoking `on_epoch` after every epoch (progress reporting).
pub fn fit_with_progress<T: Scalar>(
    data: &PreparedDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    let model_config = data.model_config()?;
    let mut model: Model<T> = Model::init(model_config, SplitMix64::derive(config.seed, 1).next_u64());
    let mut rng = SplitMix64::derive(config.seed, 2);
    let mut sgd = SgdState::new(
        T::from_f64(config.learning_rate),
        T::from_f64(config.momentum),
        T::from_f64(config.weight_decay),
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_model = model.clone();
    let mut recent_probes: Vec<[f64; 3]> = Vec::new();
    for epoch in 1..=config.epochs {
        let lr = config.lr_at_epoch(epoch);
        sgd.set_learning_rate(T::from_f64(lr));
        let stats = train_epoch(data, &mut model, config, &mut rng, &mut sgd)
            .map_err(|e| Error::domain(format!("epoch {epoch}: {e}")))?;
        let val_acc = split_accuracy(&model, &data.val)?;
        let row = EpochRow {
            epoch,
            lr,
            task_loss: stats.task_loss,
            mvter_loss: stats.mvter_loss,
            train_acc: stats.train_acc,
            val_acc,
        };
        on_epoch(&row);
        history.push(row);
        // Ties keep the later epoch: same validation score, more
        // training. An empty val split degenerates to keeping the last.
        if val_acc >= best_val_acc {
            best_val_acc = val_acc;
            best_model = model.clone();
        }
        if let Some(probe) = stats.sample_probe {
            recent_probes.push(probe);
            if recent_probes.len() >= 3 {
                let last3 = &recent_probes[recent_probes.len() - 3..];
                if last3.windows(2).all(|w| w[0] == w[1]) {
                    eprintln!(
                        "warning: transformation for probe object identical across 3 consecutive epochs"
                    );
                }
            }
        }
    }
    if config.epochs == 0 {
        best_model = model;
        best_val_acc = 0.0;
    }
    Ok(FitOutcome {
        model: best_model,
        history,
        best_val_acc,
    })
}

/// Stratified label masking: per class, ceil(rate * count) train objects
/// keep their labels; the rest become unlabeled (but stay in the
/// transformation term). Deterministic per seed.
pub fn mask_labels(ds: &mut Dataset, label_rate: f64, seed: u64) -> Result<()> {
    if !(label_rate > 0.0 && label_rate <= 1.0) {
        return Err(Error::domain(format!(
            "label_rate {label_rate} must lie in (0, 1]"
        )));
    }
    for class in 0..ds.num_classes {
        let indices: Vec<usize> = ds
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.split == Split::Train && o.class_id == class)
            .map(|(i, _)| i)
            .collect();
        let keep = (label_rate * indices.len() as f64).ceil() as usize;
        let mut shuffled = indices.clone();
        SplitMix64::derive(seed, class as u64).shuffle(&mut shuffled);
        for (rank, idx) in shuffled.into_iter().enumerate() {
            ds.objects[idx].labeled = rank < keep;
        }
    }
    Ok(())
}
