use std::path::{Path, PathBuf};

use dfl_core::bench::{load_ablation_spec, load_benchmark_spec, run_ablation, run_backbone_selection};
use dfl_core::dataset::{load_manifest, Colorspace, ResizePolicy, ViewSpec, Zoom};
use dfl_core::embedstore::{read_store, EmbeddingDataset, StoreReader};
use dfl_core::extractor::{embed_views, extract_dataset, load_backbone, ExtractOptions};
use dfl_core::head::{forward, load_checkpoint, predict, save_checkpoint, train, Checkpoint, HeadConfig};
use dfl_core::imageprep::load_image;
use dfl_core::metrics::{argmax, evaluate, ReportMetadata, DEFAULT_THRESHOLD};
use dfl_core::Error;

use crate::error::{CliError, CliResult};
use crate::{Cli, Command, EvalArgs, ExtractArgs, PredictArgs, SpecArgs, StoreCommand, TrainArgs};

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Extract(a) => extract(cli, a),
        Command::Train(a) => train_head(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::SelectBackbone(a) => select_backbone(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Predict(a) => predict_images(a),
        Command::Store(StoreCommand::Inspect { path }) => inspect(path),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_owned()).into())
    }
}

fn check_clobber(cli: &Cli, path: &Path) -> CliResult<()> {
    if path.exists() && !cli.force {
        return Err(CliError::Clobber(path.to_owned()));
    }
    Ok(())
}

fn write_output(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn extract(cli: &Cli, a: &ExtractArgs) -> CliResult<()> {
    require_file(&a.manifest)?;
    require_file(&a.backbone)?;
    check_clobber(cli, &a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let views: Vec<String> = if a.views.is_empty() {
        manifest.views.iter().map(|v| v.name.clone()).collect()
    } else {
        a.views.clone()
    };
    if let Some(unknown) = views.iter().find(|v| manifest.view(v).is_none()) {
        return Err(Error::Config(format!("view {unknown} is not declared in the manifest")).into());
    }
    let opts = ExtractOptions {
        batch_size: a.batch_size,
        workers: a.workers.or(cli.threads).unwrap_or(1),
        normalization: a.normalization.into(),
        pad_fill: a.pad_fill,
    };
    let handle = load_backbone(&a.backbone)?;
    let summary = extract_dataset(&handle, &manifest, &views, &a.out, &opts)?;
    println!("rows={} dim={}", summary.rows, summary.dim);
    Ok(())
}

fn read_config(path: &Path) -> CliResult<HeadConfig> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        }
        .into()
    })
}

fn same_classes(a: &EmbeddingDataset, b: &EmbeddingDataset, what: &str) -> CliResult<()> {
    if a.provenance.classes != b.provenance.classes {
        return Err(Error::StoreMismatch(format!(
            "{what} classes {:?} differ from {:?}",
            b.provenance.classes, a.provenance.classes
        ))
        .into());
    }
    Ok(())
}

fn train_head(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    require_file(&a.train)?;
    require_file(&a.val)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.json"));
    check_clobber(cli, &a.out)?;
    check_clobber(cli, &log_path)?;
    let template = match &a.config {
        Some(p) => read_config(p)?,
        None => HeadConfig::default(),
    };
    let train_set = read_store(&a.train)?;
    let val = read_store(&a.val)?;
    same_classes(&train_set, &val, "validation store")?;
    let mut cfg = template.resolve(train_set.dim(), train_set.provenance.num_classes())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let (model, log) = train(&train_set, &val, &cfg)?;
    let ckpt = Checkpoint {
        model,
        classes: train_set.provenance.classes.clone(),
        views: train_set.provenance.views.clone(),
        backbone_id: train_set.provenance.backbone_id.clone(),
    };
    save_checkpoint(&ckpt, &a.out, true)?;
    write_output(&log_path, to_json(&log))?;
    println!(
        "epochs={} best_epoch={} best_val_metric={:.6}",
        log.epochs.len(),
        log.best_epoch,
        log.best_val_metric
    );
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    require_file(&a.model)?;
    require_file(&a.test)?;
    check_clobber(cli, &a.report)?;
    let ckpt = load_checkpoint(&a.model)?;
    let test = read_store(&a.test)?;
    if test.is_empty() {
        return Err(Error::Empty(format!("test store {} has no rows", a.test.display())).into());
    }
    if test.provenance.classes != ckpt.classes {
        return Err(Error::StoreMismatch(format!(
            "test store classes {:?} differ from the model's {:?}",
            test.provenance.classes, ckpt.classes
        ))
        .into());
    }
    let (_, probs) = predict(&ckpt.model, &test)?;
    let cfg = &ckpt.model.config;
    let meta = ReportMetadata {
        task: "eval".into(),
        backbone_id: ckpt.backbone_id.clone(),
        views: ckpt.views.clone(),
        config_hash: cfg.hash(),
        training_seconds: 0.0,
        noise_sigma: Some(cfg.noise_sigma),
        seeds: vec![cfg.seed],
    };
    let report = evaluate(test.labels(), &probs, ckpt.classes.len(), DEFAULT_THRESHOLD, meta)?;
    let mut summary = format!(
        "samples={} balanced_accuracy={:.4} cohen_kappa={:.4} weighted_f1={:.4}",
        report.samples, report.balanced_accuracy, report.cohen_kappa, report.weighted_f1
    );
    if let Some(pr) = report.pr_auc {
        summary.push_str(&format!(" pr_auc={pr:.4}"));
    }
    if let (Some(p), Some(r)) = (report.precision, report.recall) {
        summary.push_str(&format!(" precision={p:.4} recall={r:.4}"));
    }
    if is_json(&a.report) {
        write_output(&a.report, to_json(&report))?;
    } else {
        let lines: Vec<String> = summary.split(' ').map(str::to_owned).collect();
        write_output(&a.report, lines.join("\n") + "\n")?;
    }
    println!("{summary}");
    Ok(())
}

fn select_backbone(cli: &Cli, a: &SpecArgs) -> CliResult<()> {
    require_file(&a.spec)?;
    check_clobber(cli, &a.report)?;
    let mut spec = load_benchmark_spec(&a.spec)?;
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
        spec.repeats = 1;
    }
    if let Some(t) = cli.threads {
        spec.extraction.workers = t;
    }
    let report = run_backbone_selection(&spec)?;
    let table = report.render();
    if is_json(&a.report) {
        write_output(&a.report, to_json(&report))?;
    } else {
        write_output(&a.report, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn ablate(cli: &Cli, a: &SpecArgs) -> CliResult<()> {
    require_file(&a.spec)?;
    check_clobber(cli, &a.report)?;
    let mut spec = load_ablation_spec(&a.spec)?;
    if let Some(seed) = cli.seed {
        spec.base.seeds = vec![seed];
    }
    if let Some(t) = cli.threads {
        spec.base.extraction.workers = t;
    }
    let grid = run_ablation(&spec)?;
    let table = grid.render();
    if is_json(&a.report) {
        write_output(&a.report, to_json(&grid))?;
    } else {
        write_output(&a.report, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn predict_images(a: &PredictArgs) -> CliResult<()> {
    require_file(&a.model)?;
    require_file(&a.backbone)?;
    for img in &a.image {
        require_file(img)?;
    }
    let ckpt = load_checkpoint(&a.model)?;
    let view_names = if a.views.is_empty() {
        ckpt.views.clone()
    } else {
        a.views.clone()
    };
    if view_names.is_empty() {
        return Err(CliError::Usage("no views given and the checkpoint records none".into()));
    }
    if !a.image.len().is_multiple_of(view_names.len()) {
        return Err(CliError::Usage(format!(
            "{} images do not divide into samples of {} views",
            a.image.len(),
            view_names.len()
        )));
    }
    let manifest = a.manifest.as_deref().map(load_manifest).transpose()?;
    let handle = load_backbone(&a.backbone)?;
    let expected = ckpt.model.input_dim();
    let produced = handle.embedding_dim * view_names.len();
    if produced != expected {
        return Err(Error::DimensionMismatch {
            what: format!("backbone {} x {} views vs head input", handle.id, view_names.len()),
            expected,
            actual: produced,
        }
        .into());
    }
    if handle.id != ckpt.backbone_id {
        log::warn!(
            "head was trained on backbone {}, predicting with {}",
            ckpt.backbone_id,
            handle.id
        );
    }
    let views = view_names
        .iter()
        .map(|name| match &manifest {
            Some(m) => m
                .view(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("view {name} is not declared in the manifest"))),
            None => Ok(ViewSpec {
                name: name.clone(),
                zoom: Zoom::X20,
                colorspace: Colorspace::Rgb,
                target_size: handle.input_size as u32,
                resize_policy: ResizePolicy::Resize,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let opts = ExtractOptions {
        normalization: a.normalization.into(),
        pad_fill: a.pad_fill,
        ..Default::default()
    };
    for sample in a.image.chunks(views.len()) {
        let images = views
            .iter()
            .zip(sample)
            .map(|(v, p)| Ok((v, load_image(p)?)))
            .collect::<Result<Vec<_>, Error>>()?;
        let x: Vec<f64> = embed_views(&handle, &images, &opts)?
            .into_iter()
            .map(f64::from)
            .collect();
        let probs = forward(&ckpt.model, &x)?;
        let mut line = ckpt.classes[argmax(&probs)].clone();
        for p in &probs {
            line.push_str(&format!(" {p:.6}"));
        }
        println!("{line}");
    }
    Ok(())
}

fn inspect(path: &PathBuf) -> CliResult<()> {
    let reader = StoreReader::open(path)?;
    let h = reader.header();
    let prov = reader.provenance();
    println!("version={} dtype={} dim={} rows={}", h.version, h.dtype, h.dim, h.rows);
    let mut counts = vec![0u64; prov.classes.len()];
    for &l in reader.labels() {
        if let Some(c) = counts.get_mut(l as usize) {
            *c += 1;
        }
    }
    let counts: Vec<String> = prov
        .classes
        .iter()
        .zip(&counts)
        .map(|(c, n)| format!("{c}={n}"))
        .collect();
    println!("labels {}", counts.join(" "));
    println!(
        "provenance {}",
        serde_json::to_string(prov).expect("provenance serializes")
    );
    Ok(())
}
