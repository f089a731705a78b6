//! Acceptance suite: one PASS or FAIL line per criterion.
//!
//! Runs without the libtest harness so that each criterion reports its
//! verdict, detail and wall time on a single line. The process exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use engage_mil::baselines::{svr_train, KernelSpec, SvrConfig};
use engage_mil::deepmil::{mean_pool, topk_pool, train, MilModel, MilNet, Pooling, SeqNet, TrainConfig};
use engage_mil::eval::{
    fuse_labels, mse, pcc, quadratic_weighted_kappa, AnnotationMatrix, RELIABILITY_THRESHOLD,
};
use engage_mil::features::{lbp_top, FeatureKind, FrameSequence, LbpTopConfig, SegmentFeature, SegmentWindow};
use engage_mil::weakdata::{
    augment, make_bags, plan_split, synth_generate, Dataset, PlantedIntensities, SyntheticSpec,
};
use engage_mil_oracles::{
    central_differences, gaussian_kernel_matrix, kappa_by_table, naive_lbp_top, svr_dual_qp,
    topk_by_sort,
};
use image::GrayImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

type Verdict = Result<String, String>;

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    ensure(start.elapsed() < limit, || {
        format!("took {:.1?}, limit {:?}", start.elapsed(), limit)
    })
}

fn random_bag(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0))
}

/// Largest relative gap between the analytic gradient and central
/// differences of the squared loss, relative to the larger magnitude with a
/// floor of 1e-5.
fn gradient_gap<N: MilModel + Clone>(net: &N, bag: &Array2<f64>, target: f64) -> f64 {
    let (_, analytic) = net.loss_and_grad(bag.view(), target).unwrap();
    let mut probe = net.clone();
    let numeric = central_differences(
        |p| {
            probe.set_flat_params(p);
            let s = probe.score(bag.view()).unwrap();
            (s - target) * (s - target)
        },
        &net.flat_params(),
        1e-5,
    );
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

/// Moves every parameter by up to 0.1. Zero-initialized biases can put a
/// dead ReLU unit exactly on its kink, where no derivative exists.
fn jitter<N: MilModel>(mut net: N, rng: &mut ChaCha8Rng) -> N {
    let p: Vec<f64> = net.flat_params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    net.set_flat_params(&p);
    net
}

fn random_widths(rng: &mut ChaCha8Rng, max_layers: usize) -> Vec<usize> {
    (0..rng.random_range(1..=max_layers)).map(|_| rng.random_range(1..=16)).collect()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for i in 0..20 {
        let (m, d) = (rng.random_range(1..=12), rng.random_range(1..=16));
        let pooling = if rng.random_bool(0.5) {
            Pooling::Mean
        } else {
            Pooling::TopK { k: rng.random_range(1..=m) }
        };
        let net = MilNet::new(d, &random_widths(&mut rng, 3), pooling, i).unwrap();
        let net = jitter(net, &mut rng);
        let bag = random_bag(&mut rng, m, d);
        let gap = gradient_gap(&net, &bag, rng.random_range(0.0..1.0));
        ensure(gap < 1e-4, || format!("MilNet config {i} ({m}x{d}, {pooling:?}): relative error {gap:.2e}"))?;
        worst = worst.max(gap);
        params += net.param_count();
    }
    for i in 0..20 {
        let (m, d) = (rng.random_range(1..=12), rng.random_range(1..=16));
        let hidden = rng.random_range(1..=16);
        let net = SeqNet::new(d, m, hidden, &random_widths(&mut rng, 2), 100 + i).unwrap();
        let net = jitter(net, &mut rng);
        let bag = random_bag(&mut rng, m, d);
        let gap = gradient_gap(&net, &bag, rng.random_range(0.0..1.0));
        ensure(gap < 1e-4, || format!("SeqNet config {i} ({m}x{d}, H={hidden}): relative error {gap:.2e}"))?;
        worst = worst.max(gap);
        params += net.param_count();
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("40 networks at jittered parameters, {params} parameters, max relative error {worst:.2e}"))
}

fn pooling_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let mut r: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        if case % 10 == 0 {
            // Heavy ties.
            r.iter_mut().for_each(|v| *v = v.round());
        }
        let k = rng.random_range(1..=100);
        let ours = topk_pool(&r, k).map_err(|e| e.to_string())?;
        let oracle = topk_by_sort(&r, k);
        ensure(ours.to_bits() == oracle.to_bits(), || format!("case {case}, k = {k}: {ours} vs {oracle}"))?;
        let all = topk_pool(&r, 100).map_err(|e| e.to_string())?;
        ensure(all.to_bits() == mean_pool(&r).to_bits(), || format!("case {case}: topk(M) != mean"))?;
    }
    within(Duration::from_secs(5), start)?;
    Ok("1000 vectors of length 100 bit-identical to the sort oracle; topk(r, M) == mean(r)".into())
}

fn lbp_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut voxels = 0;
    for case in 0..50 {
        let t = rng.random_range(3..=22);
        let (w, h) = (rng.random_range(3..=32u32), rng.random_range(3..=32u32));
        let lead = rng.random_range(0..4);
        let frames: Vec<GrayImage> = (0..t + lead)
            .map(|_| GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random::<u8>()])))
            .collect();
        let raw: Vec<Vec<u8>> = frames[lead..].iter().map(|f| f.as_raw().clone()).collect();
        let seq = FrameSequence::new(frames, 6.0, "s", "v").map_err(|e| e.to_string())?;
        let window = SegmentWindow {
            start_index: lead,
            length: t,
            stride: 1,
        };
        let hist = lbp_top(&seq, window, &LbpTopConfig::default()).map_err(|e| e.to_string())?;
        let oracle = naive_lbp_top(&raw, w as usize, h as usize);
        for (p, expected) in oracle.iter().enumerate() {
            ensure(hist.plane(0, p) == expected.as_slice(), || {
                format!("window {case} ({t}x{h}x{w}) plane {p} differs")
            })?;
            let sum: f64 = hist.plane(0, p).iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || format!("window {case} plane {p} sums to {sum}"))?;
        }
        voxels += t * (w * h) as usize;
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("50 windows ({voxels} voxels) bit-exact on all three planes"))
}

fn svr_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let n = rng.random_range(2..=25);
        let d = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let cfg = SvrConfig {
            c: rng.random_range(0.1..5.0),
            epsilon: rng.random_range(0.0..0.3),
            kernel: KernelSpec::gaussian(rng.random_range(0.5..3.0)),
            tol: 1e-8,
            ..SvrConfig::default()
        };
        let fit = svr_train(x.view(), &y, &cfg).map_err(|e| e.to_string())?;
        let points: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
        let kernel = gaussian_kernel_matrix(&points, cfg.kernel.sigma());
        let qp = svr_dual_qp(&kernel, &y, cfg.c, cfg.epsilon);
        let gap = (fit.dual_objective() - qp.dual_objective).abs();
        ensure(gap < 1e-3, || format!("case {case}: dual {} vs {}", fit.dual_objective(), qp.dual_objective))?;
        worst = worst.max(gap);
        for (i, row) in x.outer_iter().enumerate() {
            let ours = fit.model.predict(row).map_err(|e| e.to_string())?;
            let theirs = qp.predict(&kernel[i]);
            ensure((ours - theirs).abs() < 1e-3, || format!("case {case} point {i}: {ours} vs {theirs}"))?;
            worst = worst.max((ours - theirs).abs());
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("25 problems, largest dual or prediction gap {worst:.2e}"))
}

fn kappa_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let a: Vec<usize> = (0..rng.random_range(1..60)).map(|_| rng.random_range(0..4)).collect();
        let k = quadratic_weighted_kappa(&a, &a, 4).map_err(|e| e.to_string())?;
        ensure(k == 1.0, || format!("kappa(a, a) = {k} for {a:?}"))?;
    }
    // Contingency of a = [0, 1, 2, 3] against b = [0, 1, 2, 2]: the only
    // disagreement is cell (3, 2), so O = (1/4)(1/9). Row marginals are
    // 1/4 each, column marginals (1/4, 1/4, 1/2, 0), giving
    // E = (1/4)(14/36 + 6/36 + 12/36) = 8/36 and kappa = 1 - 1/8.
    let (a, b) = ([0, 1, 2, 3], [0, 1, 2, 2]);
    let k = quadratic_weighted_kappa(&a, &b, 4).map_err(|e| e.to_string())?;
    ensure((k - 0.875).abs() < 1e-12, || format!("table example gives {k}, expected 0.875"))?;
    let table = kappa_by_table(&a, &b, 4);
    ensure((k - table).abs() < 1e-12, || format!("table oracle {table} vs {k}"))?;

    let rows: Vec<Vec<u8>> = (0..24)
        .map(|v| {
            let t = (v % 4) as u8;
            let noisy = |r: usize| if (v + r) % 6 == 0 { t.abs_diff(1).min(3) } else { t };
            vec![noisy(0), noisy(1), noisy(2), noisy(3), 3 - t]
        })
        .collect();
    let matrix = AnnotationMatrix::from_complete(&rows).map_err(|e| e.to_string())?;
    let fused = fuse_labels(&matrix, RELIABILITY_THRESHOLD).map_err(|e| e.to_string())?;
    let contrarian = fused.reliability[4].ok_or("contrarian reliability undefined")?;
    ensure(contrarian < 0.4, || format!("contrarian mean kappa {contrarian}"))?;
    ensure(fused.dropped == [4], || format!("dropped raters {:?}", fused.dropped))?;
    Ok(format!(
        "kappa(a, a) = 1 on 50 sequences; table example 0.875; fifth rater mean kappa {contrarian:.3} dropped"
    ))
}

/// Subjects whose videos all sit in levels 1 and 2.
fn middle_only_subjects(data: &Dataset) -> BTreeSet<String> {
    let all = data.subjects();
    all.into_iter()
        .filter(|s| {
            data.bags()
                .iter()
                .filter(|b| b.subject_id == *s)
                .all(|b| b.label == 1 || b.label == 2)
        })
        .map(str::to_string)
        .collect()
}

fn dataset_mechanics() -> Verdict {
    let spec = SyntheticSpec::default();
    let (data, _) = synth_generate(&spec).map_err(|e| e.to_string())?;
    ensure(data.len() == 195 && data.subjects().len() == 78, || {
        format!("{} videos, {} subjects", data.len(), data.subjects().len())
    })?;
    ensure(data.bags().iter().all(|b| b.instance_count() == 100), || "bag without 100 instances".into())?;
    let counts = data.class_counts();

    // Seeded subject split with the reported proportions.
    let video_subjects: Vec<&str> = data.bags().iter().map(|b| b.subject_id.as_str()).collect();
    for seed in 0..5 {
        let plan = plan_split(&video_subjects, 48.0 / 195.0, seed).map_err(|e| e.to_string())?;
        ensure(plan.train_subjects.is_disjoint(&plan.test_subjects), || format!("seed {seed}: shared subjects"))?;
        let test = video_subjects.iter().filter(|s| plan.test_subjects.contains(**s)).count();
        ensure(test == 48, || format!("seed {seed}: {} / {test}", 195 - test))?;
        let train_bags: Vec<_> = data
            .bags()
            .iter()
            .filter(|b| plan.train_subjects.contains(&b.subject_id))
            .cloned()
            .collect();
        let train = Dataset::new(train_bags, data.feature_kind()).map_err(|e| e.to_string())?;
        let before = train.class_counts();
        let after = augment(&train).class_counts();
        ensure(after == [20 * before[0], before[1], before[2], 2 * before[3]], || {
            format!("seed {seed}: {before:?} -> {after:?}")
        })?;
    }

    // 180 and 100 need every level-0 and level-3 video on the training
    // side, so the 48 test videos are drawn from level-1/2 subjects.
    let middle = middle_only_subjects(&data);
    let middle_videos: Vec<&str> = video_subjects.iter().copied().filter(|s| middle.contains(*s)).collect();
    let plan = plan_split(&middle_videos, 48.0 / middle_videos.len() as f64, 0).map_err(|e| e.to_string())?;
    let (train_bags, test_bags): (Vec<_>, Vec<_>) =
        data.bags().iter().cloned().partition(|b| !plan.test_subjects.contains(&b.subject_id));
    ensure((train_bags.len(), test_bags.len()) == (147, 48), || {
        format!("level-aware split is {}/{}", train_bags.len(), test_bags.len())
    })?;
    let train_subjects: BTreeSet<&str> = train_bags.iter().map(|b| b.subject_id.as_str()).collect();
    ensure(test_bags.iter().all(|b| !train_subjects.contains(b.subject_id.as_str())), || {
        "level-aware split shares subjects".into()
    })?;
    let augmented = augment(&Dataset::new(train_bags, data.feature_kind()).map_err(|e| e.to_string())?);
    let after = augmented.class_counts();
    ensure(after[0] == 180 && after[3] == 100, || format!("augmented counts {after:?}"))?;

    // make_bags resamples any segment count to M = 100.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for segments in [1, 2, 37, 50, 99, 100, 101, 250, 1000] {
        let features: Vec<SegmentFeature> = (0..segments)
            .map(|i| {
                let window = SegmentWindow {
                    start_index: i * 10,
                    length: 20,
                    stride: 10,
                };
                SegmentFeature::new((0..9).map(|_| rng.random()).collect(), FeatureKind::PoseGaze, window).unwrap()
            })
            .collect();
        let bag = make_bags("v", "s", &features, 100, 1).map_err(|e| e.to_string())?;
        ensure(bag.instance_count() == 100, || format!("{segments} segments gave {}", bag.instance_count()))?;
    }
    Ok(format!(
        "195 videos / 78 subjects, classes {}/{}/{}/{}; 5 seeded 147/48 subject-disjoint splits; \
         level-aware 147/48 split augments to {}/{}/{}/{}; make_bags gives M = 100 from 1..1000 segments",
        counts[0], counts[1], counts[2], counts[3], after[0], after[1], after[2], after[3]
    ))
}

/// Planted data used for learning criteria: 120 videos of 30 subjects,
/// M = 32, dimension 9, signal fraction 0.3, noise 0.5, balanced levels.
fn planted_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        subjects: 30,
        videos: 120,
        instances_per_bag: 32,
        dim: 9,
        class_distribution: [0.25; 4],
        signal_fraction: 0.3,
        noise_scale: 0.5,
        signal_gain: 1.5,
        seed,
    }
}

struct Run {
    /// `(label, prediction)` of every test bag.
    test: Vec<(u8, f64)>,
    baseline_mse: f64,
    localization_pcc: f64,
}

impl Run {
    fn mse(&self) -> f64 {
        let (labels, preds): (Vec<f64>, Vec<f64>) = self.test.iter().map(|&(l, p)| (l as f64, p)).unzip();
        mse(&preds, &labels).unwrap()
    }

    fn level_means(&self) -> [Option<f64>; 4] {
        std::array::from_fn(|level| {
            let v: Vec<f64> = self.test.iter().filter(|t| t.0 as usize == level).map(|t| t.1).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
    }
}

fn split(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let subjects: Vec<&str> = data.bags().iter().map(|b| b.subject_id.as_str()).collect();
    let plan = plan_split(&subjects, 0.25, seed).unwrap();
    let (train, test): (Vec<_>, Vec<_>) =
        data.bags().iter().cloned().partition(|b| !plan.is_test(&b.subject_id));
    (
        Dataset::new(train, data.feature_kind()).unwrap(),
        Dataset::new(test, data.feature_kind()).unwrap(),
    )
}

fn fit_and_score<N: MilModel>(mut net: N, seed: u64, cfg: TrainConfig) -> Run {
    let (data, planted) = synth_generate(&planted_spec(seed)).unwrap();
    let (train_set, test_set) = split(&data, seed);
    train(&mut net, &train_set, &TrainConfig { seed, ..cfg }).unwrap();
    let truth = |id: &str, planted: &PlantedIntensities| -> Vec<f64> {
        let at = planted.video_ids.iter().position(|v| v == id).unwrap();
        planted.values[at].clone()
    };
    let mean_label = train_set.labels().iter().map(|&l| l as f64).sum::<f64>() / train_set.len() as f64;
    let mut test = Vec::new();
    let (mut scores, mut planted_all) = (Vec::new(), Vec::new());
    let mut baseline = 0.0;
    for bag in test_set.bags() {
        test.push((bag.label, net.predict(bag.instances.view()).unwrap()));
        baseline += (bag.label as f64 - mean_label).powi(2);
        scores.extend(net.localize(bag.instances.view()).unwrap().values);
        planted_all.extend(truth(&bag.video_id, &planted));
    }
    Run {
        baseline_mse: baseline / test_set.len() as f64,
        localization_pcc: pcc(&scores, &planted_all).unwrap(),
        test,
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn milnet_run(seed: u64) -> Run {
    let net = MilNet::standard(9, Pooling::Mean, seed).unwrap();
    fit_and_score(net, seed, TrainConfig::default())
}

fn seqnet_run(seed: u64) -> Run {
    let net = SeqNet::standard(9, 32, seed).unwrap();
    let cfg = TrainConfig {
        momentum: 0.9,
        ..TrainConfig::default()
    };
    fit_and_score(net, seed, cfg)
}

fn learning_and_localization(runs: &[Run], elapsed: Duration) -> Verdict {
    let mut ratios = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let ratio = run.mse() / run.baseline_mse;
        ensure(ratio < 0.6, || {
            format!("seed {seed}: MSE {:.3} vs constant predictor {:.3}", run.mse(), run.baseline_mse)
        })?;
        ratios.push(ratio);
    }
    let mean_pcc = runs.iter().map(|r| r.localization_pcc).sum::<f64>() / runs.len() as f64;
    ensure(mean_pcc >= 0.6, || format!("mean localization PCC {mean_pcc:.3}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:.1?}, limit 600s"))?;
    Ok(format!(
        "MSE / constant-predictor MSE per seed {:?}; mean localization PCC {mean_pcc:.3}",
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
    ))
}

fn level_separation(name: &str, runs: &[Run]) -> Result<String, String> {
    let mut gaps = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let means = run.level_means();
        let zero = means[0].ok_or_else(|| format!("{name} seed {seed}: no level-0 test bags"))?;
        let others: Vec<f64> = means[1..].iter().flatten().copied().collect();
        let lowest = others.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(zero < lowest, || format!("{name} seed {seed}: level means {means:?}"))?;
        gaps.push(lowest - zero);
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("{name} smallest margin {min_gap:.3}"))
}

/// Every file below `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn write_pose_videos(dir: &Path) {
    let mut labels = String::from("video_id,label\n");
    for v in 0..4 {
        let vdir = dir.join(format!("videos/clip{v}"));
        std::fs::create_dir_all(&vdir).unwrap();
        common::write_json(
            &vdir.join("manifest.json"),
            &json!({"video_id": format!("clip{v}"), "subject_id": format!("s{v}"), "fps": 30.0,
                    "width": 32, "height": 32, "frame_count": 240}),
        );
        let mut csv = String::from(
            "frame,pose_Tx,pose_Ty,pose_Tz,pose_Rx,pose_Ry,pose_Rz,gaze_0_x,gaze_0_y,gaze_0_z,gaze_1_x,gaze_1_y,gaze_1_z\n",
        );
        for f in 0..240 {
            let t = f as f64 * (0.05 + 0.02 * v as f64);
            csv += &format!(
                "{f},{},{},{},{},{},{},{},{},-1,{},{},-1\n",
                t.sin(),
                t.cos(),
                400.0 + t,
                0.1 * t.sin(),
                0.05 * t.cos(),
                0.2,
                0.1 * t.sin(),
                0.2,
                0.1,
                0.2 * t.cos()
            );
        }
        std::fs::write(vdir.join("posegaze.csv"), csv).unwrap();
        labels += &format!("clip{v},{v}\n");
    }
    std::fs::write(dir.join("labels.csv"), labels).unwrap();
}

/// Runs every command in `dir`; returns the concatenated stdout.
fn cli_session(dir: &Path, jobs: &str) -> String {
    write_pose_videos(dir);
    common::write_json(
        &dir.join("run.json"),
        &json!({
            "seed": 11,
            "paths": {"input": "videos", "labels": "labels.csv", "planted": "ds/planted.csv"},
            "extract": {"instances_per_bag": 8},
            "synth": {"subjects": 16, "videos": 48, "instances_per_bag": 16, "dim": 6,
                      "class_distribution": [0.25, 0.25, 0.25, 0.25]},
            "model": {"pooling": {"kind": "topk", "k": 4}, "train": {"epochs": 10, "batch_size": 4},
                      "sgd": {"epochs": 5}},
        }),
    );
    let mut stdout = String::new();
    let mut cmd = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", "run.json", "--jobs", jobs]);
        stdout += &common::ok(dir, &full);
    };
    cmd(&["extract", "--out", "extracted"]);
    cmd(&["synth", "--out", "ds"]);
    for kind in ["milnet", "seqnet", "svr", "sgd", "ridge"] {
        cmd(&["train", "--dataset", "ds", "--kind", kind, "--model", kind, "--audit", &format!("{kind}.train.audit")]);
        cmd(&["predict", "--dataset", "ds", "--model", kind, "--audit", &format!("{kind}.test.audit")]);
        cmd(&["localize", "--dataset", "ds", "--model", kind]);
        cmd(&["eval", "--model", kind]);
    }
    stdout
}

fn cli_determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = cli_session(a.path(), "1");
    let out_b = cli_session(b.path(), "4");
    let snap_a = snapshot(a.path());
    let snap_b = snapshot(b.path());
    ensure(snap_a.keys().eq(snap_b.keys()), || "different file sets".into())?;
    for (name, bytes) in &snap_a {
        ensure(snap_b[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    ensure(out_a.replace(&a.path().display().to_string(), "")
        == out_b.replace(&b.path().display().to_string(), ""), || "stdout differs".into())?;
    Ok(format!(
        "extract, synth and train/predict/localize/eval for 5 model kinds: {} files byte-identical across reruns with 1 and 4 threads",
        snap_a.len()
    ))
}

/// Criterion numbers given on the command line, or all of them.
fn selected() -> BTreeSet<usize> {
    let picked: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=9).collect()
    } else {
        picked
    }
}

fn main() {
    let only = selected();
    let mut failures = 0;
    let mut report = |id: usize, name: &str, elapsed: Duration, verdict: std::thread::Result<Verdict>| {
        let verdict = verdict.unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = elapsed.as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS criterion {id} {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {id} {name} [{secs:.1}s]: {detail}");
            }
        }
    };
    let checks: [(&str, fn() -> Verdict); 6] = [
        ("gradient correctness", gradient_correctness),
        ("pooling oracle", pooling_oracle),
        ("LBP-TOP oracle", lbp_oracle),
        ("SVR oracle", svr_oracle),
        ("kappa", kappa_checks),
        ("dataset mechanics", dataset_mechanics),
    ];
    for (i, (name, check)) in checks.into_iter().enumerate() {
        if !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(check);
        report(i + 1, name, start.elapsed(), verdict);
    }

    if only.contains(&7) || only.contains(&8) {
        let start = Instant::now();
        let trained = std::panic::catch_unwind(|| {
            let mil: Vec<Run> = SEEDS.par_iter().map(|&s| milnet_run(s)).collect();
            let mil_time = start.elapsed();
            let seq: Vec<Run> = SEEDS.par_iter().map(|&s| seqnet_run(s)).collect();
            (mil, mil_time, seq)
        });
        match trained {
            Ok((mil, mil_time, seq)) => {
                let learned = learning_and_localization(&mil, mil_time);
                report(7, "synthetic learning and localization", mil_time, Ok(learned));
                let sep = level_separation("MilNet", &mil)
                    .and_then(|a| Ok(format!("all 5 seeds; {a}; {}", level_separation("SeqNet", &seq)?)));
                report(8, "level-0 separation", start.elapsed(), Ok(sep));
            }
            Err(panic) => {
                report(7, "synthetic learning and localization", start.elapsed(), Err(panic));
                report(8, "level-0 separation", start.elapsed(), Ok(Err("training panicked".into())));
            }
        }
    }

    if only.contains(&9) {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(AssertUnwindSafe(cli_determinism));
        report(9, "CLI determinism", start.elapsed(), verdict);
    }

    if failures > 0 {
        println!("{failures} of {} criteria failed", only.len());
        std::process::exit(1);
    }
    println!("{} of {} criteria passed", only.len(), only.len());
}
