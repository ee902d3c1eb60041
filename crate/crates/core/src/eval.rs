//! Metrics and experiment harnesses: accuracy, retrieval mAP,
//! transformation-error trials, view-count and label-rate ablations,
//! and feature-map export.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{apply_rotation, sample_rotation, PointCloud};
use crate::model::{classify, first_block_activations, forward_mvter, fuse, Model, Scheme};
use crate::renderer::{render_views, write_pgm, CameraRig, ViewImage, ViewSet};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::training::{fit, mask_labels, PreparedDataset, PreparedObject, TrainConfig};

/// Fraction of predictions matching the truth.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::domain(format!(
            "accuracy: {} predictions vs {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let matches = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(matches as f64 / truth.len() as f64)
}

#[derive(Debug, Clone)]
pub struct QueryRetrieval {
    /// Gallery indices in ascending distance order (ties by index).
    pub ranked: Vec<usize>,
    pub average_precision: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub per_query: Vec<QueryRetrieval>,
    pub mean_average_precision: f64,
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn ranked_gallery(query: &[f32], gallery: &[Vec<f32>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    let dists: Vec<f64> = gallery.iter().map(|g| euclidean(query, g)).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order
}

fn average_precision(ranked: &[usize], gallery_labels: &[usize], query_label: usize) -> f64 {
    let relevant = gallery_labels.iter().filter(|&&l| l == query_label).count();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &idx) in ranked.iter().enumerate() {
        if gallery_labels[idx] == query_label {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / relevant as f64
}

/// Ranks the gallery by Euclidean descriptor distance per query and
/// averages precision at each relevant hit.
pub fn retrieval_map(
    query_descs: &[Vec<f32>],
    query_labels: &[usize],
    gallery_descs: &[Vec<f32>],
    gallery_labels: &[usize],
) -> Result<RetrievalResult> {
    if query_descs.len() != query_labels.len() || gallery_descs.len() != gallery_labels.len() {
        return Err(Error::domain("descriptor and label counts disagree"));
    }
    if query_descs.is_empty() || gallery_descs.is_empty() {
        return Err(Error::domain("retrieval needs at least one query and gallery item"));
    }
    let dim = gallery_descs[0].len();
    if query_descs.iter().chain(gallery_descs).any(|d| d.len() != dim) {
        return Err(Error::domain("descriptor dimensions disagree"));
    }
    let mut per_query = Vec::with_capacity(query_descs.len());
    let mut total = 0.0;
    for (qi, (desc, &label)) in query_descs.iter().zip(query_labels).enumerate() {
        if !gallery_labels.contains(&label) {
            return Err(Error::domain(format!(
                "query {qi} (class {label}) has no same-class gallery item"
            )));
        }
        let ranked = ranked_gallery(desc, gallery_descs);
        let ap = average_precision(&ranked, gallery_labels, label);
        total += ap;
        per_query.push(QueryRetrieval {
            ranked,
            average_precision: ap,
        });
    }
    Ok(RetrievalResult {
        mean_average_precision: total / query_descs.len() as f64,
        per_query,
    })
}

/// Per-query APs and the mAP with each object used as a query against
/// all the others.
pub fn leave_one_out_retrieval(descs: &[Vec<f32>], labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    if descs.len() != labels.len() || descs.len() < 2 {
        return Err(Error::domain("leave-one-out retrieval needs at least two objects"));
    }
    let mut aps = Vec::with_capacity(descs.len());
    for q in 0..descs.len() {
        let gallery_descs: Vec<Vec<f32>> = descs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != q)
            .map(|(_, d)| d.clone())
            .collect();
        let gallery_labels: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != q)
            .map(|(_, &l)| l)
            .collect();
        let result = retrieval_map(
            std::slice::from_ref(&descs[q]),
            &[labels[q]],
            &gallery_descs,
            &gallery_labels,
        )?;
        aps.push(result.mean_average_precision);
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok((aps, map))
}

/// mAP with each object used as a query against all the others.
pub fn leave_one_out_map(descs: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    Ok(leave_one_out_retrieval(descs, labels)?.1)
}

#[derive(Debug, Clone)]
pub struct TrialRow {
    pub trial: usize,
    pub object_index: usize,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct TransformErrorReport {
    pub mean_mse: f64,
    /// 180 * sqrt(mean MSE): root-mean-square error in degrees.
    pub rms_degrees: f64,
    pub trials: Vec<TrialRow>,
}

impl TransformErrorReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,object,mse\n");
        for t in &self.trials {
            out.push_str(&format!("{},{},{}\n", t.trial, t.object_index, t.mse));
        }
        out
    }
}

fn assemble_report(object_indices: &[usize], targets: &[[f64; 3]], predictions: &[[f64; 3]]) -> TransformErrorReport {
    let trials: Vec<TrialRow> = object_indices
        .iter()
        .zip(targets.iter().zip(predictions))
        .enumerate()
        .map(|(trial, (&object_index, (t, p)))| {
            let mse = t
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / 3.0;
            TrialRow {
                trial,
                object_index,
                mse,
            }
        })
        .collect();
    let mean_mse = trials.iter().map(|t| t.mse).sum::<f64>() / trials.len().max(1) as f64;
    TransformErrorReport {
        mean_mse,
        rms_degrees: 180.0 * mean_mse.sqrt(),
        trials,
    }
}

/// Samples fresh rotations, renders transformed views and scores the
/// decoded transformation against the truth, in normalized space and
/// RMS degrees.
pub fn transform_error<T: Scalar>(
    model: &Model<T>,
    objects: &[PreparedObject],
    rig: &CameraRig,
    scheme: Scheme,
    n_trials: usize,
    seed: u64,
) -> Result<TransformErrorReport> {
    if objects.is_empty() || n_trials == 0 {
        return Err(Error::domain("transform_error needs objects and at least one trial"));
    }
    let mut rng = SplitMix64::new(seed);
    let picks: Vec<(usize, crate::geometry::Rotation3)> = (0..n_trials)
        .map(|_| {
            (
                rng.next_below(objects.len() as u64) as usize,
                sample_rotation(&mut rng),
            )
        })
        .collect();
    let object_indices: Vec<usize> = picks.iter().map(|(i, _)| *i).collect();
    let targets: Vec<[f64; 3]> = picks
        .iter()
        .map(|(_, t)| crate::model::angles_to_target(t))
        .collect();

    const CHUNK: usize = 32;
    let m = rig.len();
    let chunks: Vec<&[(usize, crate::geometry::Rotation3)]> = picks.chunks(CHUNK).collect();
    let chunk_preds: Vec<Vec<[f64; 3]>> = chunks
        .into_par_iter()
        .map(|chunk| -> Result<Vec<[f64; 3]>> {
            let trans_sets = chunk
                .iter()
                .map(|(i, t)| render_views(&apply_rotation(&objects[*i].cloud, t), rig))
                .collect::<Result<Vec<_>>>()?;
            let orig_sets: Vec<&ViewSet> = chunk.iter().map(|(i, _)| &objects[*i].views).collect();
            let mut tape = Tape::new();
            let bm = model.bind_frozen(&mut tape)?;
            let stack = |tape: &mut Tape<T>, sets: &[&ViewSet]| -> Result<_> {
                let views: Vec<&ViewImage> = sets.iter().flat_map(|s| s.views().iter()).collect();
                tape.constant(crate::model::views_to_tensor(&views)?)
            };
            let x_orig = stack(&mut tape, &orig_sets)?;
            let trans_refs: Vec<&ViewSet> = trans_sets.iter().collect();
            let x_trans = stack(&mut tape, &trans_refs)?;
            let fwd = forward_mvter(&mut tape, &bm, x_orig, x_trans, chunk.len(), m, scheme)?;
            Ok(tape
                .value(fwd.prediction)
                .data()
                .chunks_exact(3)
                .map(|c| [c[0].into_f64(), c[1].into_f64(), c[2].into_f64()])
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<[f64; 3]> = chunk_preds.into_iter().flatten().collect();
    Ok(assemble_report(&object_indices, &targets, &predictions))
}

/// One accuracy measurement under a (training condition, testing
/// condition) pair.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub train_condition: String,
    pub test_condition: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_condition,test_condition,accuracy\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{}\n",
                c.train_condition, c.test_condition, c.accuracy
            ));
        }
        out
    }

    pub fn accuracy_for(&self, train_condition: &str, test_condition: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.train_condition == train_condition && c.test_condition == test_condition)
            .map(|c| c.accuracy)
    }
}

/// Classifies test objects from random view subsets of each requested
/// size and reports mean accuracy per size.
///
/// Per object, `subsets_per_object` subsets are drawn (8 by default at
/// the call sites); a subset of the full view count reproduces the
/// full-view accuracy exactly because fusion is permutation-invariant.
pub fn ablate_views<T: Scalar>(
    model: &Model<T>,
    objects: &[PreparedObject],
    counts: &[usize],
    subsets_per_object: usize,
    seed: u64,
    train_condition: &str,
) -> Result<AblationReport> {
    if objects.is_empty() {
        return Err(Error::domain("ablate_views needs test objects"));
    }
    let m = objects[0].views.len();
    for &count in counts {
        if count == 0 || count > m {
            return Err(Error::domain(format!(
                "requested {count} views but objects have {m}"
            )));
        }
    }
    // Per-view descriptors once per object.
    let per_view: Vec<Vec<Vec<T>>> = objects
        .par_iter()
        .map(|o| {
            let refs: Vec<&ViewImage> = o.views.views().iter().collect();
            model.encoder.encode_views(&refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(counts.len());
    for &count in counts {
        let mut rng = SplitMix64::derive(seed, count as u64);
        let mut correct = 0usize;
        let mut total = 0usize;
        for (obj, descs) in objects.iter().zip(&per_view) {
            for _ in 0..subsets_per_object {
                let subset = rng.sample_indices(m, count);
                let chosen: Vec<Vec<T>> = subset.iter().map(|&v| descs[v].clone()).collect();
                let fused = fuse(&chosen)?;
                let logits = classify(&fused, &model.head)?;
                let pred = logits
                    .iter()
                    .enumerate()
                    .fold(0usize, |best, (i, v)| if *v > logits[best] { i } else { best });
                if pred == obj.label {
                    correct += 1;
                }
                total += 1;
            }
        }
        cells.push(AblationCell {
            train_condition: train_condition.to_string(),
            test_condition: format!("views={count}"),
            accuracy: correct as f64 / total as f64,
        });
    }
    Ok(AblationReport { cells })
}

/// Trains a lambda = 0 baseline and the regularized model at each label
/// rate with shared seeds, reporting paired test accuracies.
pub fn ablate_label_rate(
    ds: &Dataset,
    rig: &CameraRig,
    rates: &[f64],
    config: &TrainConfig,
) -> Result<AblationReport> {
    config.validate()?;
    if rates.is_empty() {
        return Err(Error::domain("ablate_label_rate needs at least one rate"));
    }
    let mut cells = Vec::with_capacity(rates.len() * 2);
    for &rate in rates {
        for (name, lambda) in [("baseline", 0.0), ("mvter", config.lambda)] {
            let mut masked = ds.clone();
            mask_labels(&mut masked, rate, config.seed)?;
            let prepared = PreparedDataset::prepare(&masked, rig.clone())?;
            let run_config = TrainConfig {
                lambda,
                label_rate: rate,
                ..config.clone()
            };
            let outcome = fit::<f32>(&prepared, &run_config)?;
            let acc = crate::training::split_accuracy(&outcome.model, &prepared.test)?;
            cells.push(AblationCell {
                train_condition: format!("rate={rate},model={name}"),
                test_condition: "test".to_string(),
                accuracy: acc,
            });
        }
    }
    Ok(AblationReport { cells })
}

/// Writes the first conv block's post-relu activations, one PGM per
/// (view, channel), min-max normalized per channel. Returns the file
/// count (views x channels).
pub fn export_feature_maps<T: Scalar>(
    model: &Model<T>,
    cloud: &PointCloud,
    rig: &CameraRig,
    dir: &Path,
) -> Result<usize> {
    let views = render_views(cloud, rig)?;
    let refs: Vec<&ViewImage> = views.views().iter().collect();
    let acts: Tensor<T> = first_block_activations(model, &refs)?;
    let shape = acts.shape().to_vec();
    let (m, channels, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let data = acts.data();
    let mut written = 0usize;
    for vi in 0..m {
        for ci in 0..channels {
            let plane = &data[(vi * channels + ci) * h * w..(vi * channels + ci + 1) * h * w];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in plane {
                let v = v.into_f64();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = hi - lo;
            let pixels: Vec<f64> = plane
                .iter()
                .map(|v| {
                    if span > 0.0 {
                        (v.into_f64() - lo) / span
                    } else {
                        0.0
                    }
                })
                .collect();
            let image = ViewImage::from_pixels(h, w, pixels)?;
            write_pgm(&image, &dir.join(format!("view{vi}_chan{ci}.pgm")))?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, ShapeSpec, SplitCounts};
    use crate::model::ModelConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 0], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn retrieval_all_relevant_is_perfect() {
        let descs = vec![vec![0.0f32], vec![1.0], vec![2.0]];
        let labels = vec![7, 7, 7];
        let result = retrieval_map(&descs[..1], &labels[..1], &descs, &labels).unwrap();
        assert_eq!(result.mean_average_precision, 1.0);
    }

    #[test]
    fn retrieval_relevant_at_rank_two() {
        let query = vec![vec![0.0f32]];
        let gallery = vec![vec![0.1f32], vec![0.5]];
        let result = retrieval_map(&query, &[1], &gallery, &[0, 1]).unwrap();
        assert_eq!(result.mean_average_precision, 0.5);
        assert_eq!(result.per_query[0].ranked, vec![0, 1]);
    }

    #[test]
    fn retrieval_rejects_missing_class() {
        let query = vec![vec![0.0f32]];
        let gallery = vec![vec![1.0f32]];
        let err = retrieval_map(&query, &[3], &gallery, &[1]).unwrap_err();
        assert!(err.to_string().contains("query 0"));
    }

    /// Brute-force oracle: explicit precision table over an explicitly
    /// sorted ranking, written independently of the production path.
    fn oracle_ap(query: &[f32], label: usize, gallery: &[Vec<f32>], labels: &[usize]) -> f64 {
        let mut pairs: Vec<(f64, usize)> = gallery
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let d = query
                    .iter()
                    .zip(g)
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (d, i)
            })
            .collect();
        // selection sort, ties by index
        for i in 0..pairs.len() {
            let mut min = i;
            for j in i + 1..pairs.len() {
                if pairs[j].0 < pairs[min].0
                    || (pairs[j].0 == pairs[min].0 && pairs[j].1 < pairs[min].1)
                {
                    min = j;
                }
            }
            pairs.swap(i, min);
        }
        let relevant = labels.iter().filter(|&&l| l == label).count() as f64;
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (k, &(_, idx)) in pairs.iter().enumerate() {
            if labels[idx] == label {
                hits += 1.0;
                sum += hits / (k as f64 + 1.0);
            }
        }
        sum / relevant
    }

    #[test]
    fn retrieval_matches_oracle_on_random_instances() {
        let mut rng = SplitMix64::new(55);
        for _ in 0..50 {
            let dim = 4;
            let gallery: Vec<Vec<f32>> = (0..10)
                .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())
                .collect();
            let labels: Vec<usize> = (0..10).map(|_| rng.next_below(3) as usize).collect();
            let query: Vec<f32> = (0..dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let qlabel = labels[rng.next_below(10) as usize];
            let got = retrieval_map(
                std::slice::from_ref(&query),
                &[qlabel],
                &gallery,
                &labels,
            )
            .unwrap();
            let want = oracle_ap(&query, qlabel, &gallery, &labels);
            assert_eq!(got.mean_average_precision, want);
        }
    }

    fn tiny_prepared(seed: u64) -> PreparedDataset {
        let spec = ShapeSpec {
            points_per_object: 64,
            ..ShapeSpec::default()
        };
        let counts = SplitCounts {
            train: 2,
            val: 1,
            test: 2,
        };
        let ds = generate_dataset(counts, &spec, seed).unwrap();
        let rig = CameraRig::ring(2, 30.0, 1.2, (8, 8)).unwrap();
        PreparedDataset::prepare(&ds, rig).unwrap()
    }

    #[test]
    fn oracle_predictor_scores_zero() {
        let targets = vec![[0.1, -0.5, 0.9], [0.0, 0.3, -0.2]];
        let report = assemble_report(&[0, 1], &targets, &targets);
        assert_eq!(report.mean_mse, 0.0);
        assert_eq!(report.rms_degrees, 0.0);
    }

    #[test]
    fn zero_decoder_matches_uniform_second_moment() {
        // With a zeroed decoder the prediction is always 0, so the MSE is
        // the second moment of U(-1, 1): 1/3.
        let data = tiny_prepared(31);
        let mut model = Model::<f32>::init(data.model_config().unwrap(), 77);
        for v in model.decoder.weight.data_mut() {
            *v = 0.0;
        }
        let report = transform_error(
            &model,
            &data.test,
            &data.rig,
            Scheme::Average,
            10_000,
            123,
        )
        .unwrap();
        assert_abs_diff_eq!(report.mean_mse, 1.0 / 3.0, epsilon = 0.02);
        assert_eq!(report.trials.len(), 10_000);
        // deterministic given the seed
        let again = transform_error(
            &model,
            &data.test,
            &data.rig,
            Scheme::Average,
            100,
            123,
        )
        .unwrap();
        let third = transform_error(&model, &data.test, &data.rig, Scheme::Average, 100, 123).unwrap();
        assert_eq!(again.mean_mse.to_bits(), third.mean_mse.to_bits());
    }

    #[test]
    fn ablate_views_full_count_equals_plain_accuracy() {
        let data = tiny_prepared(32);
        let model = Model::<f32>::init(data.model_config().unwrap(), 5);
        let m = data.rig.len();
        let report = ablate_views(&model, &data.test, &[m], 8, 9, "m_train=2").unwrap();
        let direct = crate::training::split_accuracy(&model, &data.test).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.cells[0].accuracy, direct);
        assert_eq!(report.cells[0].test_condition, format!("views={m}"));
    }

    #[test]
    fn ablate_views_rejects_oversized_count() {
        let data = tiny_prepared(33);
        let model = Model::<f32>::init(data.model_config().unwrap(), 5);
        assert!(ablate_views(&model, &data.test, &[3], 8, 9, "x").is_err());
    }

    #[test]
    fn ablate_views_row_per_count() {
        let data = tiny_prepared(34);
        let model = Model::<f32>::init(data.model_config().unwrap(), 5);
        let report = ablate_views(&model, &data.test, &[1, 2], 4, 9, "x").unwrap();
        assert_eq!(report.cells.len(), 2);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn ablate_label_rate_shape() {
        let spec = ShapeSpec {
            points_per_object: 64,
            ..ShapeSpec::default()
        };
        let counts = SplitCounts {
            train: 2,
            val: 1,
            test: 1,
        };
        let ds = generate_dataset(counts, &spec, 40).unwrap();
        let rig = CameraRig::ring(2, 30.0, 1.2, (8, 8)).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let report = ablate_label_rate(&ds, &rig, &[0.5, 1.0], &config).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.accuracy_for("rate=1,model=baseline", "test").is_some());
        assert!(report
            .cells
            .iter()
            .all(|c| (0.0..=1.0).contains(&c.accuracy)));
    }

    #[test]
    fn export_feature_maps_counts_and_identity_pairs() {
        let data = tiny_prepared(36);
        let model = Model::<f32>::init(data.model_config().unwrap(), 6);
        let dir = tempfile::tempdir().unwrap();
        let cloud = &data.test[0].cloud;
        let orig_dir = dir.path().join("orig");
        let count = export_feature_maps(&model, cloud, &data.rig, &orig_dir).unwrap();
        assert_eq!(count, data.rig.len() * crate::model::CONV_CHANNELS[0]);
        // identity transformation produces byte-identical maps
        let ident = apply_rotation(cloud, &crate::geometry::Rotation3::identity());
        let trans_dir = dir.path().join("trans");
        export_feature_maps(&model, &ident, &data.rig, &trans_dir).unwrap();
        for vi in 0..data.rig.len() {
            for ci in 0..crate::model::CONV_CHANNELS[0] {
                let name = format!("view{vi}_chan{ci}.pgm");
                let a = std::fs::read(orig_dir.join(&name)).unwrap();
                let b = std::fs::read(trans_dir.join(&name)).unwrap();
                assert_eq!(a, b, "{name}");
                assert!(a.len() > 11); // header plus payload
            }
        }
    }

    #[test]
    fn model_config_helper() {
        let data = tiny_prepared(37);
        let mc: ModelConfig = data.model_config().unwrap();
        assert_eq!(mc.num_classes, 8);
    }
}
