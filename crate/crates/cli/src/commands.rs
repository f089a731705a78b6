//! One function per subcommand, each a thin composition of library calls.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use engage_mil::baselines::{
    bayesian_ridge_train, grid_search_svr, instance_training_set, sgd_linear_train, svr_train,
};
use engage_mil::deepmil::{self, MilNet, NetworkFile, SeqNet};
use engage_mil::eval::{fuse_labels, AnnotationMatrix, MetricsReport};
use engage_mil::features::{
    lbp_top, load_frame_archive, pose_gaze_feature, read_pose_gaze_csv, segment, subsample,
    subsample_step, FeatureKind, SegmentFeature, VideoManifest, MANIFEST_FILE,
};
use engage_mil::weakdata::store::{read_planted_csv, save_dataset, write_planted_csv};
use engage_mil::weakdata::{
    augment_with, kmeans, make_bags, plan_split, relabel, synth_generate, Bag, Dataset,
    InstanceLabeling,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig};
use crate::data::{AuditLog, IndexedDataset};
use crate::models::{ModelMeta, TrainedModel, LOSS_TRACE_FILE};
use crate::{InvalidSplit, UsageError};

pub const PLANTED_FILE: &str = "planted.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LOCALIZATION_FILE: &str = "localization.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "grid.json";

fn write_audit(cfg: &RunConfig, audit: &AuditLog) -> anyhow::Result<()> {
    match &cfg.paths.audit {
        Some(path) => audit.write(path),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Output path: `paths.out` when set, else `default` inside the model
/// directory.
fn output_in_model_dir(cfg: &RunConfig, model_dir: &Path, default: &str) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| model_dir.join(default))
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    video_id: String,
    label: u8,
}

fn read_labels(cfg: &RunConfig) -> anyhow::Result<BTreeMap<String, u8>> {
    if let Some(path) = &cfg.paths.annotations {
        let matrix = AnnotationMatrix::read_csv(path)?;
        let fused = fuse_labels(&matrix, cfg.extract.reliability_threshold)?;
        for &r in &fused.dropped {
            log::info!("dropping rater {} (mean kappa {:?})", matrix.rater_ids[r], fused.reliability[r]);
        }
        return Ok(matrix.video_ids.into_iter().zip(fused.labels).collect());
    }
    let path = cfg.require(&cfg.paths.labels, "labels")?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for (line, row) in reader.deserialize::<LabelRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        if usize::from(row.label) >= engage_mil::LEVELS {
            bail!("{}: row {}: label {} outside 0..=3", path.display(), line + 2, row.label);
        }
        labels.insert(row.video_id, row.label);
    }
    Ok(labels)
}

fn video_features(dir: &Path, manifest: &VideoManifest, cfg: &RunConfig) -> anyhow::Result<Vec<SegmentFeature>> {
    let ex = &cfg.extract;
    Ok(match ex.feature_kind {
        FeatureKind::LbpTop => {
            let seq = subsample(&load_frame_archive(dir)?, ex.target_fps)?;
            segment(seq.len(), ex.window, ex.stride)?
                .into_iter()
                .map(|w| Ok(lbp_top(&seq, w, &ex.lbp)?.into_feature(w)?))
                .collect::<anyhow::Result<_>>()?
        }
        FeatureKind::PoseGaze => {
            let track = read_pose_gaze_csv(&dir.join(&ex.pose_file))?;
            track.check_aligned(manifest.frame_count)?;
            let track = track.subsample(subsample_step(manifest.fps, ex.target_fps)?);
            segment(track.len(), ex.window, ex.stride)?
                .into_iter()
                .map(|w| Ok(pose_gaze_feature(&track, w)?))
                .collect::<anyhow::Result<_>>()?
        }
        FeatureKind::Synthetic => {
            return Err(UsageError("extract.feature_kind must be lbptop or posegaze".into()).into())
        }
    })
}

/// Extracts per-segment features of every video directory under
/// `paths.input` and writes the bags to `paths.out`.
pub fn extract(cfg: &RunConfig) -> anyhow::Result<()> {
    let input = cfg.require(&cfg.paths.input, "input")?;
    let out = cfg.require(&cfg.paths.out, "out")?;
    if cfg.extract.feature_kind == FeatureKind::Synthetic {
        return Err(UsageError("extract.feature_kind must be lbptop or posegaze".into()).into());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no videos found in {}", input.display());
    }
    let labels = read_labels(cfg)?;
    let results: Vec<(Bag, usize)> = dirs
        .par_iter()
        .map(|dir| -> anyhow::Result<(Bag, usize)> {
            let manifest = VideoManifest::read(dir)?;
            let label = *labels
                .get(&manifest.video_id)
                .with_context(|| format!("no label for video {}", manifest.video_id))?;
            let features = video_features(dir, &manifest, cfg)
                .with_context(|| format!("extracting {}", dir.display()))?;
            let bag = make_bags(
                &manifest.video_id,
                &manifest.subject_id,
                &features,
                cfg.extract.instances_per_bag,
                label,
            )?;
            Ok((bag, features.len()))
        })
        .collect::<anyhow::Result<_>>()?;
    for (bag, segments) in &results {
        println!("{}\t{}", bag.video_id, segments);
    }
    let data = Dataset::new(results.into_iter().map(|(b, _)| b).collect(), cfg.extract.feature_kind)?;
    let index = save_dataset(out, &data)?;
    log::info!("wrote {} videos to {}", data.len(), index.display());
    Ok(())
}

/// Writes a planted-signal dataset and its per-instance truth.
pub fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.require(&cfg.paths.out, "out")?;
    cfg.synth
        .validate()
        .map_err(|e| UsageError(format!("synth: {e}")))?;
    let (data, planted) = synth_generate(&cfg.synth)?;
    save_dataset(out, &data)?;
    write_planted_csv(&out.join(PLANTED_FILE), &planted)?;
    let counts = data.class_counts();
    println!(
        "{} videos, {} subjects, {} instances of dimension {}, class counts {}/{}/{}/{}",
        data.len(),
        data.subjects().len(),
        data.instances_per_bag(),
        data.dim(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    );
    Ok(())
}

fn instance_labels(cfg: &RunConfig, train: &Dataset) -> anyhow::Result<InstanceLabeling> {
    let strategy = cfg.model.relabel;
    let assignments = if strategy.needs_clusters() {
        let stacked = train.stacked_instances();
        Some(kmeans(stacked.view(), cfg.model.kmeans_k, cfg.seed)?.assignments)
    } else {
        None
    };
    Ok(relabel(train, strategy, assignments.as_deref())?)
}

fn numbered(trace: &[f64], first: usize) -> Vec<(usize, f64)> {
    trace.iter().enumerate().map(|(i, &v)| (i + first, v)).collect()
}

fn fit(cfg: &RunConfig, train: &Dataset, model_dir: &Path) -> anyhow::Result<(TrainedModel, Vec<(usize, f64)>)> {
    let seed = cfg.seed;
    let kind = cfg.model.kind;
    if kind.is_deep() {
        let tc = &cfg.model.train;
        return Ok(match kind {
            ModelKind::Milnet => {
                let mut net = MilNet::standard(train.dim(), cfg.model.pooling, seed)?;
                let trace = deepmil::train(&mut net, train, tc)?;
                (TrainedModel::Net(NetworkFile::Mil(net)), numbered(&trace, 1))
            }
            _ => {
                let mut net = SeqNet::standard(train.dim(), train.instances_per_bag(), seed)?;
                let trace = deepmil::train(&mut net, train, tc)?;
                (TrainedModel::Net(NetworkFile::Seq(net)), numbered(&trace, 1))
            }
        });
    }
    let labeling = instance_labels(cfg, train)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let (x, y) = instance_training_set(train, &all, &labeling);
    Ok(match kind {
        ModelKind::Svr => {
            let svr_cfg = match &cfg.model.grid {
                Some(grid) => {
                    let result = grid_search_svr(train, &labeling, grid)?;
                    let path = model_dir.join(GRID_FILE);
                    std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    log::info!("grid search picked C = {}, sigma = {}", result.best.c, result.best.sigma);
                    result.best_config(&grid.base)
                }
                None => cfg.model.svr,
            };
            let fit = svr_train(x.view(), &y, &svr_cfg)?;
            if !fit.converged {
                log::warn!("SMO stopped after {} iterations, KKT gap {:.3e}", fit.iterations, fit.kkt_gap);
            }
            let trace = numbered(&fit.dual_trace, 0);
            (TrainedModel::Svr(fit.model), trace)
        }
        ModelKind::Sgd => {
            let fit = sgd_linear_train(x.view(), &y, &cfg.model.sgd)?;
            let trace = numbered(&fit.loss_trace, 1);
            (TrainedModel::Sgd(fit.model), trace)
        }
        _ => {
            let post = bayesian_ridge_train(x.view(), &y, &cfg.model.ridge)?;
            let pred = post.predict_rows(x.view())?;
            let mse = engage_mil::eval::mse(&pred, &y)?;
            let trace = vec![(post.iterations, mse)];
            (TrainedModel::Ridge(post), trace)
        }
    })
}

/// Splits by subject, trains on the training side only and writes the
/// model directory.
pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let index_path = cfg.dataset_index()?;
    let model_dir = cfg.require(&cfg.paths.model, "model")?;
    let fraction = cfg.split.test_fraction;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(UsageError(format!("split.test_fraction must be in (0, 1), got {fraction}")).into());
    }
    let data = IndexedDataset::open(&index_path)?;
    let plan = plan_split(&data.index.subjects(), fraction, cfg.seed)?;
    let mut audit = AuditLog::default();
    let train = data.load_excluding(&mut audit, &plan.test_subjects)?;
    let train = match &cfg.model.augment {
        Some(policy) => augment_with(&train, policy)?,
        None => train,
    };
    create_dir(model_dir)?;
    let (model, trace) = fit(cfg, &train, model_dir)?;
    let kind = cfg.model.kind;
    let file = PathBuf::from(TrainedModel::file_name(kind));
    model.save(&model_dir.join(&file), data.index.feature_kind)?;

    let trace_path = model_dir.join(LOSS_TRACE_FILE);
    let mut w = csv::Writer::from_path(&trace_path)?;
    w.write_record(["step", "loss"])?;
    for (step, loss) in &trace {
        w.write_record([step.to_string(), loss.to_string()])?;
    }
    w.flush()?;

    ModelMeta {
        model: kind,
        model_file: file,
        feature_kind: data.index.feature_kind,
        dim: data.index.dim,
        instances_per_bag: data.index.instances_per_bag,
        seed: cfg.seed,
        train_subjects: plan.train_subjects.clone(),
        test_subjects: plan.test_subjects.clone(),
        train_videos: train.len(),
    }
    .write(model_dir)?;
    write_audit(cfg, &audit)?;
    println!(
        "trained {:?} on {} bags from {} subjects; final loss {}",
        kind,
        train.len(),
        plan.train_subjects.len(),
        trace.last().map_or(f64::NAN, |t| t.1)
    );
    Ok(())
}

/// The trained model plus the dataset videos of subjects it never saw.
fn held_out(cfg: &RunConfig, audit: &mut AuditLog) -> anyhow::Result<(PathBuf, TrainedModel, Dataset)> {
    let model_dir = cfg.require(&cfg.paths.model, "model")?.to_path_buf();
    let meta = ModelMeta::read(&model_dir)?;
    let model = TrainedModel::load(&model_dir, &meta)?;
    let data = IndexedDataset::open(&cfg.dataset_index()?)?;
    meta.check_compatible(&data.index)?;
    let test = data.load_excluding(audit, &meta.train_subjects)?;
    Ok((model_dir, model, test))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    video_id: String,
    subject_id: String,
    label: u8,
    prediction: f64,
}

/// Video-level predictions for every video of an unseen subject.
pub fn predict(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut audit = AuditLog::default();
    let (model_dir, model, test) = held_out(cfg, &mut audit)?;
    let preds: Vec<f64> = test
        .bags()
        .par_iter()
        .map(|b| model.predict(b.instances.view()))
        .collect::<anyhow::Result<_>>()?;
    let out = output_in_model_dir(cfg, &model_dir, PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    for (bag, &prediction) in test.bags().iter().zip(&preds) {
        w.serialize(PredictionRow {
            video_id: bag.video_id.clone(),
            subject_id: bag.subject_id.clone(),
            label: bag.label,
            prediction,
        })?;
    }
    w.flush()?;
    write_audit(cfg, &audit)?;
    println!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

/// Per-segment intensities for every video of an unseen subject, one row
/// per segment.
pub fn localize(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut audit = AuditLog::default();
    let (model_dir, model, test) = held_out(cfg, &mut audit)?;
    let planted: Option<BTreeMap<String, Vec<f64>>> = match &cfg.paths.planted {
        Some(p) => {
            let planted = read_planted_csv(p)?;
            Some(planted.video_ids.into_iter().zip(planted.values).collect())
        }
        None => None,
    };
    let scores: Vec<Vec<f64>> = test
        .bags()
        .par_iter()
        .map(|b| model.localize(b.instances.view()))
        .collect::<anyhow::Result<_>>()?;
    let out = output_in_model_dir(cfg, &model_dir, LOCALIZATION_FILE);
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    let mut header = vec!["video_id", "segment_index", "label", "intensity"];
    if planted.is_some() {
        header.push("planted_intensity");
    }
    w.write_record(&header)?;
    for (bag, values) in test.bags().iter().zip(&scores) {
        let truth = match &planted {
            Some(map) => Some(
                map.get(&bag.video_id)
                    .with_context(|| format!("no planted intensities for {}", bag.video_id))?,
            ),
            None => None,
        };
        for (i, v) in values.iter().enumerate() {
            let mut rec = vec![bag.video_id.clone(), i.to_string(), bag.label.to_string(), v.to_string()];
            if let Some(t) = truth {
                let value = t.get(i).with_context(|| format!("{}: planted truth is too short", bag.video_id))?;
                rec.push(value.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    write_audit(cfg, &audit)?;
    println!("{} segments of {} videos written to {}", scores.iter().map(Vec::len).sum::<usize>(), scores.len(), out.display());
    Ok(())
}

/// Metrics of a predictions file. Refuses predictions for subjects the
/// model was trained on.
pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let model_dir = cfg.require(&cfg.paths.model, "model")?;
    let meta = ModelMeta::read(model_dir)?;
    let preds_path = cfg
        .paths
        .predictions
        .clone()
        .unwrap_or_else(|| model_dir.join(PREDICTIONS_FILE));
    let mut reader = csv::Reader::from_path(&preds_path)
        .with_context(|| format!("reading {}", preds_path.display()))?;
    let rows: Vec<PredictionRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", preds_path.display()))?;
    let shared: BTreeSet<&str> = rows
        .iter()
        .map(|r| r.subject_id.as_str())
        .filter(|s| meta.train_subjects.contains(*s))
        .collect();
    if !shared.is_empty() {
        return Err(InvalidSplit(format!(
            "train and test share subjects: {}",
            shared.into_iter().collect::<Vec<_>>().join(", ")
        ))
        .into());
    }
    let pred: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let report = MetricsReport::compute(&pred, &labels)?;
    let out = output_in_model_dir(cfg, model_dir, METRICS_FILE);
    std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "MSE {} over {} videos; PCC {}",
        report.mse,
        report.count,
        report.pcc.map_or("undefined".to_string(), |p| p.to_string())
    );
    Ok(())
}
