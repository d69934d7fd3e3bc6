//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::oracles::*;
use common::*;
use dfl_core::bench::{
    run_ablation_grid, run_backbone_selection, AblationAxes, BenchmarkSpec, ExtractionSettings, SplitStores, ViewStores,
};
use dfl_core::dataset::{load_manifest, Split};
use dfl_core::embedstore::{encode, read_store, write_store, EmbeddingDataset};
use dfl_core::extractor::{extract_dataset, BackboneHandle, Embedder, ExtractOptions};
use dfl_core::head::{encode_checkpoint, evaluate_metric, train, Checkpoint, HeadConfig, ValMetric};
use dfl_core::imageprep::{ImageTensor, PixelNormalization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit: Duration, what: &str) -> std::result::Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, format!("{what} took {took:.2?}, limit {limit:?}"))
}

fn loss_and_optimizer() -> Check {
    let t = Instant::now();
    let (ce_dev, zero) = focal_reduces_to_cross_entropy(10_000, 11);
    within(t, Duration::from_secs(1), "focal vs cross-entropy")?;
    ensure(ce_dev <= 1e-9, format!("focal(gamma=0) vs CE deviates by {ce_dev:e}"))?;
    ensure(zero, "p_y = 1 does not give exactly 0")?;

    let t = Instant::now();
    let grad = gradient_check(100, 12);
    within(t, Duration::from_secs(30), "gradient check")?;
    ensure(grad < 1e-5, format!("finite-difference relative error {grad:e}"))?;

    let (adam, _) = adam_against_scalar(100, 0.1);
    ensure(adam <= 1e-12, format!("ADAM trajectory deviates by {adam:e}"))?;
    Ok(format!(
        "focal-CE dev {ce_dev:.1e}, FD rel err {grad:.1e}, ADAM dev {adam:.1e}"
    ))
}

fn metric_equivalence() -> Check {
    let t = Instant::now();
    let dev = metric_oracles(1_000, 13);
    let (kappa, wf1) = hand_cases();
    within(t, Duration::from_secs(10), "metric oracles")?;
    ensure(
        dev.confusion_mismatches == 0,
        format!("{} confusion matrices differ", dev.confusion_mismatches),
    )?;
    ensure(dev.worst() <= 1e-12, format!("{dev:?}"))?;
    let (k, w) = (format!("{kappa:.4}"), format!("{wf1:.4}"));
    ensure(
        k == "0.4000" && w == "0.6970",
        format!("hand cases kappa {k}, weighted F1 {w}"),
    )?;
    Ok(format!("worst dev {:.1e}, kappa {k}, weighted F1 {w}", dev.worst()))
}

fn blob_separability() -> Check {
    let t = Instant::now();
    let train_set = blobs(200, 3, 64, 4.0, 21);
    let val = blobs(50, 3, 64, 4.0, 22);
    let test = blobs(300, 3, 64, 4.0, 23);
    let cfg = HeadConfig {
        max_epochs: 50,
        batch_size: 16,
        learning_rate: 1e-2,
        ..HeadConfig::linear(64, 3)
    };
    let (model, log) = train(&train_set, &val, &cfg).map_err(|e| e.to_string())?;
    let ba = evaluate_metric(&model, &test, ValMetric::BalancedAccuracy).map_err(|e| e.to_string())?;
    within(t, Duration::from_secs(10), "blob training")?;
    ensure(log.epochs.len() <= 50, "ran past 50 epochs")?;
    ensure(ba >= 0.95, format!("held-out balanced accuracy {ba:.4}"))?;
    Ok(format!(
        "held-out balanced accuracy {ba:.4}, best epoch {} of {}",
        log.best_epoch,
        log.epochs.len()
    ))
}

/// Three overlapping classes in a few high-variance signal dimensions, padded with
/// many low-variance nuisance dimensions a small training set can memorize through.
fn overlapping(n: usize, seed: u64) -> EmbeddingDataset {
    let (signal, nuisance) = (32, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = ChaCha8Rng::seed_from_u64(1_000);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let scale = 0.5 / (signal as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..signal).map(|_| unit.sample(&mut centres) * scale).collect())
        .collect();
    let mut data = Vec::with_capacity(n * (signal + nuisance));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        for m in &means[c] {
            data.push((m + 0.2 * unit.sample(&mut rng)) as f32);
        }
        for _ in 0..nuisance {
            data.push((0.02 * unit.sample(&mut rng)) as f32);
        }
        labels.push(c as u32);
    }
    EmbeddingDataset::new(signal + nuisance, data, labels, provenance(3, &["x20"])).unwrap()
}

fn augmentation_directionality() -> Check {
    let t = Instant::now();
    let train_set = overlapping(200, 31);
    let val = overlapping(200, 32);
    let test = overlapping(1_500, 33);
    let dim = train_set.dim();
    let mut summary = Vec::new();
    for sigma in [0.0, 0.1] {
        let (mut ba, mut gap) = (0.0, 0.0);
        for seed in 0..5 {
            let cfg = HeadConfig {
                noise_sigma: sigma,
                seed,
                ..HeadConfig::biomarker(dim, 3)
            };
            let (model, log) = train(&train_set, &val, &cfg).map_err(|e| e.to_string())?;
            ba += evaluate_metric(&model, &test, ValMetric::BalancedAccuracy).map_err(|e| e.to_string())? / 5.0;
            let best = log.best();
            gap += (best.train_metric - best.val_metric) / 5.0;
        }
        summary.push((sigma, ba, gap));
    }
    within(t, Duration::from_secs(60), "noise runs")?;
    let [(_, ba0, gap0), (_, ba1, gap1)] = [summary[0], summary[1]];
    let detail = format!("sigma 0: BA {ba0:.4} gap {gap0:.4}; sigma 0.1: BA {ba1:.4} gap {gap1:.4}");
    ensure(ba1 >= ba0, format!("noise lowered held-out accuracy ({detail})"))?;
    ensure(gap0 > gap1, format!("noise-free gap is not larger ({detail})"))?;
    Ok(detail)
}

/// Four classes indexed by two bits; view `a` only sees the high bit and view `b`
/// only the low bit, so each view alone confuses classes that differ in the other.
fn complementary_views(per_class: usize, dim: usize, seed: u64) -> [EmbeddingDataset; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 0.5).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 4 {
        let c = i % 4;
        for (out, bit) in [(&mut a, c >> 1), (&mut b, c & 1)] {
            for d in 0..dim {
                let centre = if d == 0 { 2.0 * bit as f64 } else { 0.0 };
                out.push((centre + unit.sample(&mut rng)) as f32);
            }
        }
        labels.push(c as u32);
    }
    [("a", a), ("b", b)]
        .map(|(name, data)| EmbeddingDataset::new(dim, data, labels.clone(), provenance(4, &[name])).unwrap())
}

fn multi_view_directionality() -> Check {
    let t = Instant::now();
    let parts = [(40, 41), (20, 42), (100, 43)].map(|(n, seed)| complementary_views(n, 8, seed));
    let mut stores = ViewStores::new();
    for (i, view) in ["a", "b"].iter().enumerate() {
        stores.insert(
            view.to_string(),
            SplitStores {
                train: parts[0][i].clone(),
                val: parts[1][i].clone(),
                test: parts[2][i].clone(),
            },
        );
    }
    let sets: Vec<Vec<String>> = vec![vec!["a".into()], vec!["b".into()], vec!["a".into(), "b".into()]];
    let axes = AblationAxes {
        noise: vec![0.1],
        view_sets: sets.clone(),
    };
    let seeds: Vec<u64> = (0..5).collect();
    let head = HeadConfig {
        max_epochs: 100,
        batch_size: 16,
        learning_rate: 1e-2,
        ..HeadConfig::default()
    };
    let grid = run_ablation_grid(
        "complementary",
        &stores,
        Split::Test,
        &head,
        &seeds,
        &axes,
        dfl_core::embedstore::NormalizationMode::Off,
    )
    .map_err(|e| e.to_string())?;
    within(t, Duration::from_secs(60), "view ablation")?;
    let pr = |views: &[String]| grid.cell(views, 0.1).and_then(|c| c.report.pr_auc).unwrap_or(f64::NAN);
    let (a, b, ab) = (pr(&sets[0]), pr(&sets[1]), pr(&sets[2]));
    let detail = format!("PR-AUC a {a:.4}, b {b:.4}, a+b {ab:.4} (mean of 5 seeds)");
    ensure(ab > a && ab > b, detail.clone())?;
    println!("{}", grid.render());
    Ok(detail)
}

/// Fixed random projection of the raw pixels.
struct LinearStub {
    weights: Vec<f32>,
    dim: usize,
}

impl Embedder for LinearStub {
    fn embed(&self, batch: &[ImageTensor]) -> dfl_core::Result<Vec<Vec<f32>>> {
        Ok(batch
            .iter()
            .map(|img| {
                let x = img.to_chw();
                (0..self.dim)
                    .map(|j| {
                        x.iter()
                            .enumerate()
                            .map(|(i, v)| v * self.weights[i * self.dim + j])
                            .sum()
                    })
                    .collect()
            })
            .collect())
    }
}

fn determinism() -> Check {
    // training
    let train_set = blobs(40, 3, 16, 2.0, 51);
    let val = blobs(20, 3, 16, 2.0, 52);
    let cfg = HeadConfig {
        hidden_dim: Some(32),
        max_epochs: 20,
        seed: 7,
        ..HeadConfig::linear(16, 3)
    };
    let run = || -> std::result::Result<(Vec<u8>, String), String> {
        let (model, log) = train(&train_set, &val, &cfg).map_err(|e| e.to_string())?;
        let ckpt = Checkpoint {
            model,
            classes: train_set.provenance.classes.clone(),
            views: train_set.provenance.views.clone(),
            backbone_id: "synthetic".into(),
        };
        Ok((encode_checkpoint(&ckpt, true), serde_json::to_string(&log).unwrap()))
    };
    let (c1, l1) = run()?;
    let (c2, l2) = run()?;
    ensure(c1 == c2, "checkpoints differ between identical runs")?;
    ensure(l1 == l2, "training logs differ between identical runs")?;

    // store round trip
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut data: Vec<f32> = (0..64 * 9).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    data[0] = f32::MIN_POSITIVE / 2.0; // subnormal
    data[1] = -0.0;
    let labels = (0..64).map(|i| i % 3).collect();
    let ds = EmbeddingDataset::new(9, data, labels, provenance(3, &["x20"])).unwrap();
    let path = dir.path().join("rt.dflb");
    write_store(&ds, &path).map_err(|e| e.to_string())?;
    let back = read_store(&path).map_err(|e| e.to_string())?;
    let bits = |d: &EmbeddingDataset| d.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(
        bits(&ds) == bits(&back) && ds.labels() == back.labels(),
        "store round trip is lossy",
    )?;
    ensure(
        encode(&back) == std::fs::read(&path).unwrap(),
        "re-encoded store differs from file",
    )?;

    // extraction workers
    let manifest = tinted_image_dataset(dir.path(), 3, (8, 3, 3), &[rgb_view("x20", 8)], 8, 0.2, 54);
    let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let weights = (0..3 * 64 * 6).map(|_| rng.random::<f32>() - 0.5).collect();
    let handle = BackboneHandle::from_embedder(
        "linear-stub",
        6,
        8,
        PixelNormalization::IDENTITY,
        Arc::new(LinearStub { weights, dim: 6 }),
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for workers in [1, 8] {
        let out = dir.path().join(format!("w{workers}.dflb"));
        let opts = ExtractOptions {
            batch_size: 4,
            workers,
            ..Default::default()
        };
        extract_dataset(&handle, &m, &["x20".into()], &out, &opts).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&out).unwrap());
    }
    ensure(files[0] == files[1], "1 and 8 workers produced different stores")?;
    Ok(format!(
        "checkpoint {} B and log identical, store round trip bitwise, 1 vs 8 workers identical ({} B)",
        c1.len(),
        files[0].len()
    ))
}

fn benchmark_harness() -> Check {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let classes = 3;
    let manifest = tinted_image_dataset(dir.path(), classes, (30, 10, 10), &[rgb_view("x20", 16)], 16, 0.15, 61);
    let informative = grid_stub_sidecar(dir.path(), "grid-stub", 16, 2);
    let constant = constant_stub_sidecar(dir.path(), "constant-stub", 16, 12);
    let spec = BenchmarkSpec {
        manifest,
        candidates: vec![constant, informative],
        head: HeadConfig {
            batch_size: 16,
            learning_rate: 1e-2,
            ..HeadConfig::default()
        },
        views: vec!["x20".into()],
        repeats: 3,
        seeds: vec![0, 1, 2],
        cache_dir: dir.path().join("cache"),
        extraction: ExtractionSettings::default(),
    };
    let report = run_backbone_selection(&spec).map_err(|e| e.to_string())?;
    within(t, Duration::from_secs(60), "selection run")?;
    ensure(
        report.failed.is_empty(),
        format!("failed candidates: {:?}", report.failed),
    )?;
    let ids: BTreeMap<&str, f64> = report
        .ranked
        .iter()
        .map(|c| (c.backbone_id.as_str(), c.report.balanced_accuracy))
        .collect();
    ensure(report.ranked[0].backbone_id == "grid-stub", format!("ranking {ids:?}"))?;
    let chance = 1.0 / classes as f64;
    let constant_ba = ids["constant-stub"];
    ensure(
        (constant_ba - chance).abs() <= 0.05,
        format!("constant stub BA {constant_ba:.4}"),
    )?;
    let table = report.render();
    ensure(
        table.contains("Pretrained Backbone") && table.contains("Balanced Accuracy") && table.contains("Cohen Kappa"),
        "report is missing the comparison columns",
    )?;
    println!("{table}");
    Ok(format!(
        "grid-stub BA {:.4} ranked first, constant-stub BA {constant_ba:.4}",
        ids["grid-stub"]
    ))
}

fn main() -> ExitCode {
    let checks: [Criterion; 7] = [
        ("loss and optimizer correctness", loss_and_optimizer),
        ("metrics oracle equivalence", metric_equivalence),
        ("synthetic separability", blob_separability),
        ("augmentation directionality", augmentation_directionality),
        ("multi-view directionality", multi_view_directionality),
        ("determinism and persistence", determinism),
        ("benchmark harness", benchmark_harness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{took:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
