use std::fs;
use std::path::{Path, PathBuf};

use mvter_core::dataset::{generate_dataset, load_dataset, save_dataset, Dataset};
use mvter_core::error::{Error, Result};
use mvter_core::eval::{
    ablate_label_rate, ablate_views, export_feature_maps, leave_one_out_retrieval,
    transform_error,
};
use mvter_core::geometry::{apply_rotation, sample_rotation};
use mvter_core::model::{load_model, save_model, Model, ModelConfig};
use mvter_core::rng::SplitMix64;
use mvter_core::training::{
    fit_with_progress, fused_descriptors, history_csv, mask_labels, split_accuracy,
    PreparedDataset,
};

use crate::config::RunConfig;
use crate::{Command, ConfigFlags};

/// Defaults <- MVTER_SEED <- config file <- flags, then validation.
fn resolve(flags: &ConfigFlags, data: Option<&PathBuf>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Ok(value) = std::env::var("MVTER_SEED") {
        config.seed = value.parse().map_err(|_| {
            Error::domain(format!("MVTER_SEED: invalid value '{value}' (integer expected)"))
        })?;
    }
    if let Some(path) = &flags.config {
        config.apply_file(path)?;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(v) = &flags.scheme {
        config.scheme = mvter_core::model::Scheme::parse(v)?;
    }
    if let Some(v) = flags.lambda {
        config.lambda = v;
    }
    if let Some(v) = flags.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = flags.momentum {
        config.momentum = v;
    }
    if let Some(v) = flags.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = flags.lr_halving_period {
        config.lr_halving_period = v;
    }
    if let Some(v) = flags.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        config.epochs = v;
    }
    if let Some(v) = flags.label_rate {
        config.label_rate = v;
    }
    if let Some(v) = flags.views {
        config.views = v;
    }
    if let Some(v) = flags.elevation {
        config.elevation = v;
    }
    if let Some(v) = flags.resolution {
        config.resolution = v;
    }
    if let Some(v) = flags.ortho_extent {
        config.ortho_extent = v;
    }
    if let Some(v) = flags.points_per_object {
        config.points_per_object = v;
    }
    if let Some(v) = flags.train_per_class {
        config.train_per_class = v;
    }
    if let Some(v) = flags.val_per_class {
        config.val_per_class = v;
    }
    if let Some(v) = flags.test_per_class {
        config.test_per_class = v;
    }
    if let Some(v) = flags.threads {
        config.threads = v;
    }
    if let Some(path) = data {
        config.data = Some(path.clone());
    }
    config.validate()?;
    // The pool can only be installed once per process; later runs keep
    // the first size. Results are bit-identical either way.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global();
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_resolved(config: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("resolved-config.txt"), &config.resolved_text())
}

fn dataset_path(config: &RunConfig) -> Result<&PathBuf> {
    config
        .data
        .as_ref()
        .ok_or_else(|| Error::domain("no dataset: pass --data or set 'data' in the config file"))
}

fn load_run_dataset(config: &RunConfig) -> Result<Dataset> {
    load_dataset(dataset_path(config)?)
}

fn model_config(config: &RunConfig, ds: &Dataset) -> Result<ModelConfig> {
    ModelConfig::new(
        (config.resolution, config.resolution),
        ds.num_classes as usize,
    )
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::domain(format!("invalid {what} entry '{}'", s.trim())))
        })
        .collect()
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { out, flags } => gen_data(&out, &flags),
        Command::Train { data, out, flags } => train(data.as_ref(), &out, &flags),
        Command::Eval {
            data,
            checkpoint,
            out,
            flags,
        } => eval(data.as_ref(), &checkpoint, &out, &flags),
        Command::Retrieve {
            data,
            checkpoint,
            out,
            flags,
        } => retrieve(data.as_ref(), &checkpoint, &out, &flags),
        Command::TransformError {
            data,
            checkpoint,
            out,
            trials,
            flags,
        } => transform_error_cmd(data.as_ref(), &checkpoint, &out, trials, &flags),
        Command::AblateViews {
            data,
            checkpoint,
            out,
            counts,
            subsets,
            flags,
        } => ablate_views_cmd(data.as_ref(), &checkpoint, &out, &counts, subsets, &flags),
        Command::AblateLabels {
            data,
            out,
            rates,
            flags,
        } => ablate_labels_cmd(data.as_ref(), &out, &rates, &flags),
        Command::ExportFeatures {
            data,
            checkpoint,
            out,
            object,
            flags,
        } => export_features_cmd(data.as_ref(), &checkpoint, &out, object, &flags),
    }
}

fn gen_data(out: &Path, flags: &ConfigFlags) -> Result<()> {
    let config = resolve(flags, None)?;
    let ds = generate_dataset(config.split_counts(), &config.shape_spec(), config.seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    save_dataset(&ds, out)?;
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    write_resolved(&config, &dir)?;
    println!(
        "wrote {} ({} objects, {} classes, seed {})",
        out.display(),
        ds.objects.len(),
        ds.num_classes,
        config.seed
    );
    Ok(())
}

fn train(data: Option<&PathBuf>, out: &Path, flags: &ConfigFlags) -> Result<()> {
    let config = resolve(flags, data)?;
    let mut ds = load_run_dataset(&config)?;
    if config.label_rate < 1.0 {
        mask_labels(&mut ds, config.label_rate, config.seed)?;
    }
    let prepared = PreparedDataset::prepare(&ds, config.rig()?)?;
    let outcome = fit_with_progress::<f32>(&prepared, &config.train_config(), |row| {
        eprintln!(
            "epoch {:>3}: lr {:.6} task {:.4} mvter {:.4} train_acc {:.4} val_acc {:.4}",
            row.epoch, row.lr, row.task_loss, row.mvter_loss, row.train_acc, row.val_acc
        );
    })?;
    ensure_dir(out)?;
    write_resolved(&config, out)?;
    write_text(&out.join("history.csv"), &history_csv(&outcome.history))?;
    save_model(&outcome.model, &out.join("checkpoint.mvtr"))?;
    let test_acc = split_accuracy(&outcome.model, &prepared.test)?;
    println!(
        "trained {} epochs (scheme {}, lambda {}); best val acc {:.4}, test acc {:.4}",
        config.epochs,
        config.scheme.name(),
        config.lambda,
        outcome.best_val_acc.max(0.0),
        test_acc
    );
    println!("outputs in {}", out.display());
    Ok(())
}

fn load_run_model(config: &RunConfig, ds: &Dataset, checkpoint: &Path) -> Result<Model<f32>> {
    load_model(checkpoint, model_config(config, ds)?)
}

fn eval(data: Option<&PathBuf>, checkpoint: &Path, out: &Path, flags: &ConfigFlags) -> Result<()> {
    let config = resolve(flags, data)?;
    let ds = load_run_dataset(&config)?;
    let model = load_run_model(&config, &ds, checkpoint)?;
    let prepared = PreparedDataset::prepare(&ds, config.rig()?)?;
    ensure_dir(&out.join("reports"))?;
    write_resolved(&config, out)?;
    let mut csv = String::from("split,accuracy\n");
    for (name, objects) in [
        ("train", &prepared.train),
        ("val", &prepared.val),
        ("test", &prepared.test),
    ] {
        let acc = split_accuracy(&model, objects)?;
        csv.push_str(&format!("{name},{acc}\n"));
        println!("{name} accuracy: {acc:.4}");
    }
    write_text(&out.join("reports/eval.csv"), &csv)
}

fn retrieve(
    data: Option<&PathBuf>,
    checkpoint: &Path,
    out: &Path,
    flags: &ConfigFlags,
) -> Result<()> {
    let config = resolve(flags, data)?;
    let ds = load_run_dataset(&config)?;
    let model = load_run_model(&config, &ds, checkpoint)?;
    let prepared = PreparedDataset::prepare(&ds, config.rig()?)?;
    let descs = fused_descriptors(&model, &prepared.test)?;
    let labels: Vec<usize> = prepared.test.iter().map(|o| o.label).collect();
    let (aps, map) = leave_one_out_retrieval(&descs, &labels)?;
    ensure_dir(&out.join("reports"))?;
    write_resolved(&config, out)?;
    let mut csv = String::from("query,label,average_precision\n");
    for (i, (ap, label)) in aps.iter().zip(&labels).enumerate() {
        csv.push_str(&format!("{i},{label},{ap}\n"));
    }
    write_text(&out.join("reports/retrieval.csv"), &csv)?;
    println!("test retrieval mAP: {map:.4} over {} queries", aps.len());
    Ok(())
}

fn transform_error_cmd(
    data: Option<&PathBuf>,
    checkpoint: &Path,
    out: &Path,
    trials: usize,
    flags: &ConfigFlags,
) -> Result<()> {
    let config = resolve(flags, data)?;
    let ds = load_run_dataset(&config)?;
    let model = load_run_model(&config, &ds, checkpoint)?;
    let prepared = PreparedDataset::prepare(&ds, config.rig()?)?;
    let report = transform_error(
        &model,
        &prepared.test,
        &prepared.rig,
        config.scheme,
        trials,
        config.seed,
    )?;
    ensure_dir(&out.join("reports"))?;
    write_resolved(&config, out)?;
    write_text(&out.join("reports/transform_error.csv"), &report.to_csv())?;
    println!(
        "transformation error over {} trials: MSE {:.6}, RMS {:.2} degrees",
        trials, report.mean_mse, report.rms_degrees
    );
    Ok(())
}

fn ablate_views_cmd(
    data: Option<&PathBuf>,
    checkpoint: &Path,
    out: &Path,
    counts: &str,
    subsets: usize,
    flags: &ConfigFlags,
) -> Result<()> {
    let config = resolve(flags, data)?;
    let counts: Vec<usize> = parse_list(counts, "view count")?;
    let ds = load_run_dataset(&config)?;
    let model = load_run_model(&config, &ds, checkpoint)?;
    let prepared = PreparedDataset::prepare(&ds, config.rig()?)?;
    let report = ablate_views(
        &model,
        &prepared.test,
        &counts,
        subsets,
        config.seed,
        &format!("views={}", config.views),
    )?;
    ensure_dir(&out.join("reports"))?;
    write_resolved(&config, out)?;
    write_text(&out.join("reports/view_ablation.csv"), &report.to_csv())?;
    for cell in &report.cells {
        println!("{} / {}: accuracy {:.4}", cell.train_condition, cell.test_condition, cell.accuracy);
    }
    Ok(())
}

fn ablate_labels_cmd(
    data: Option<&PathBuf>,
    out: &Path,
    rates: &str,
    flags: &ConfigFlags,
) -> Result<()> {
    let config = resolve(flags, data)?;
    let rates: Vec<f64> = parse_list(rates, "label rate")?;
    let ds = load_run_dataset(&config)?;
    let report = ablate_label_rate(&ds, &config.rig()?, &rates, &config.train_config())?;
    ensure_dir(&out.join("reports"))?;
    write_resolved(&config, out)?;
    write_text(&out.join("reports/label_rate_ablation.csv"), &report.to_csv())?;
    for cell in &report.cells {
        println!("{}: accuracy {:.4}", cell.train_condition, cell.accuracy);
    }
    Ok(())
}

fn export_features_cmd(
    data: Option<&PathBuf>,
    checkpoint: &Path,
    out: &Path,
    object: usize,
    flags: &ConfigFlags,
) -> Result<()> {
    let config = resolve(flags, data)?;
    let ds = load_run_dataset(&config)?;
    let model = load_run_model(&config, &ds, checkpoint)?;
    let test: Vec<_> = ds.split(mvter_core::dataset::Split::Test).collect();
    let obj = test.get(object).ok_or_else(|| {
        Error::domain(format!(
            "object index {object} out of range (test split has {})",
            test.len()
        ))
    })?;
    let rig = config.rig()?;
    ensure_dir(out)?;
    write_resolved(&config, out)?;
    let n_orig = export_feature_maps(&model, &obj.cloud, &rig, &out.join("features"))?;
    let mut rng = SplitMix64::new(config.seed);
    let rotation = sample_rotation(&mut rng);
    let transformed = apply_rotation(&obj.cloud, &rotation);
    let n_trans = export_feature_maps(&model, &transformed, &rig, &out.join("features/transformed"))?;
    // raw input views alongside, for side-by-side inspection
    let views_dir = out.join("views");
    ensure_dir(&views_dir)?;
    for (label, cloud) in [("orig", &obj.cloud), ("trans", &transformed)] {
        for (i, view) in mvter_core::renderer::render_views(cloud, &rig)?.views().iter().enumerate()
        {
            mvter_core::renderer::write_pgm(view, &views_dir.join(format!("{label}_view{i}.pgm")))?;
        }
    }
    println!(
        "wrote {} original and {} transformed feature maps under {}, raw views under {}",
        n_orig,
        n_trans,
        out.join("features").display(),
        views_dir.display()
    );
    Ok(())
}
