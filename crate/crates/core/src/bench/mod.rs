//! Experiment harnesses: backbone selection, single-task runs and view/noise ablations.
//!
//! Each harness works in two layers. The store-level functions take embedding
//! datasets that already exist and only train and evaluate heads. The manifest-level
//! functions add extraction through an on-disk cache keyed by backbone, view,
//! manifest hash and normalization, so a repeated run performs no inference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, DatasetManifest, Split};
use crate::embedstore::{concat_stores, read_store, EmbeddingDataset, NormalizationMode, ZScore};
use crate::extractor::{extract_dataset, load_backbone, read_sidecar, BackboneHandle, ExtractOptions};
use crate::head::{predict, train, HeadConfig};
use crate::metrics::{self, mean_report, EvalReport, ReportMetadata, DEFAULT_THRESHOLD};
use crate::{Error, Result};

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("dfl_cache")
}

/// Extraction settings shared by the manifest-level harnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionSettings {
    pub batch_size: usize,
    pub workers: usize,
    /// `z_score` extracts without normalization and standardizes every split with
    /// statistics fitted on the training rows.
    pub normalization: NormalizationMode,
    pub pad_fill: f32,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        let o = ExtractOptions::default();
        Self {
            batch_size: o.batch_size,
            workers: o.workers,
            normalization: o.normalization,
            pad_fill: o.pad_fill,
        }
    }
}

impl ExtractionSettings {
    fn options(&self) -> ExtractOptions {
        ExtractOptions {
            batch_size: self.batch_size,
            workers: self.workers,
            normalization: match self.normalization {
                NormalizationMode::ZScore => NormalizationMode::Off,
                m => m,
            },
            pad_fill: self.pad_fill,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub manifest: PathBuf,
    /// Sidecar paths of the candidate backbones.
    pub candidates: Vec<PathBuf>,
    /// Head protocol; a linear probe unless `hidden_dim` is set.
    #[serde(default)]
    pub head: HeadConfig,
    pub views: Vec<String>,
    pub repeats: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub extraction: ExtractionSettings,
}

/// One end-to-end task: extract views, train on the training split, evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerTaskConfig {
    pub task: String,
    pub manifest: PathBuf,
    pub backbone: PathBuf,
    pub views: Vec<String>,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Split the reported metrics come from. Validation always drives early stopping.
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub extraction: ExtractionSettings,
}

fn default_eval_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    /// Noise standard deviations; include 0 for the unaugmented baseline.
    pub noise: Vec<f64>,
    /// View compositions, each an ordered list of view names.
    pub view_sets: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub base: BiomarkerTaskConfig,
    pub axes: AblationAxes,
}

/// Relative paths inside spec files are resolved against the spec file's directory.
trait SpecPaths {
    fn rebase(&mut self, dir: &Path);
}

fn rebase(path: &mut PathBuf, dir: &Path) {
    if path.is_relative() {
        *path = dir.join(&*path);
    }
}

impl SpecPaths for BenchmarkSpec {
    fn rebase(&mut self, dir: &Path) {
        rebase(&mut self.manifest, dir);
        rebase(&mut self.cache_dir, dir);
        for c in &mut self.candidates {
            rebase(c, dir);
        }
    }
}

impl SpecPaths for BiomarkerTaskConfig {
    fn rebase(&mut self, dir: &Path) {
        rebase(&mut self.manifest, dir);
        rebase(&mut self.backbone, dir);
        rebase(&mut self.cache_dir, dir);
    }
}

impl SpecPaths for AblationSpec {
    fn rebase(&mut self, dir: &Path) {
        self.base.rebase(dir);
    }
}

fn load_spec<T: DeserializeOwned + SpecPaths>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut spec: T = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    spec.rebase(path.parent().unwrap_or(Path::new("")));
    Ok(spec)
}

pub fn load_benchmark_spec(path: impl AsRef<Path>) -> Result<BenchmarkSpec> {
    let spec: BenchmarkSpec = load_spec(path.as_ref())?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_task_config(path: impl AsRef<Path>) -> Result<BiomarkerTaskConfig> {
    let cfg: BiomarkerTaskConfig = load_spec(path.as_ref())?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_ablation_spec(path: impl AsRef<Path>) -> Result<AblationSpec> {
    let spec: AblationSpec = load_spec(path.as_ref())?;
    spec.validate()?;
    Ok(spec)
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("seed list must not be empty".into()));
    }
    Ok(())
}

fn check_views(views: &[String]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Config("view list must not be empty".into()));
    }
    Ok(())
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("candidate backbone list is empty".into()));
        }
        if self.repeats == 0 || self.repeats != self.seeds.len() {
            return Err(Error::Config(format!(
                "repeats ({}) must be positive and equal the number of seeds ({})",
                self.repeats,
                self.seeds.len()
            )));
        }
        check_views(&self.views)?;
        self.head.validate_template()
    }
}

impl BiomarkerTaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_seeds(&self.seeds)?;
        check_views(&self.views)?;
        self.head.validate_template()
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.axes.noise.is_empty() || self.axes.view_sets.is_empty() {
            return Err(Error::Config("every ablation axis needs at least one value".into()));
        }
        if let Some(s) = self.axes.noise.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!(
                "noise sigma {s} is not a finite non-negative number"
            )));
        }
        for set in &self.axes.view_sets {
            check_views(set)?;
        }
        check_seeds(&self.base.seeds)?;
        self.base.head.validate_template()
    }
}

/// Train/validation/test partition of one embedding dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStores {
    pub train: EmbeddingDataset,
    pub val: EmbeddingDataset,
    pub test: EmbeddingDataset,
}

impl SplitStores {
    /// Partitions rows by each manifest sample's split. Rows must be in manifest order.
    pub fn from_manifest(manifest: &DatasetManifest, ds: &EmbeddingDataset) -> Result<Self> {
        if ds.rows() != manifest.samples.len() {
            return Err(Error::StoreMismatch(format!(
                "store has {} rows, manifest has {} samples",
                ds.rows(),
                manifest.samples.len()
            )));
        }
        let pick = |split: Split| -> Vec<usize> {
            manifest
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.split == split)
                .map(|(i, _)| i)
                .collect()
        };
        Ok(Self {
            train: ds.select(&pick(Split::Train)),
            val: ds.select(&pick(Split::Validation)),
            test: ds.select(&pick(Split::Test)),
        })
    }

    pub fn get(&self, split: Split) -> &EmbeddingDataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Column-wise concatenation of several views' partitions.
    pub fn concat(parts: &[&SplitStores]) -> Result<Self> {
        let cat = |f: fn(&SplitStores) -> &EmbeddingDataset| {
            concat_stores(&parts.iter().map(|p| f(p).clone()).collect::<Vec<_>>())
        };
        Ok(Self {
            train: cat(|s| &s.train)?,
            val: cat(|s| &s.val)?,
            test: cat(|s| &s.test)?,
        })
    }

    /// Fits z-score statistics on the training rows and applies them to every split.
    pub fn standardize(&mut self) -> Result<()> {
        let z = ZScore::fit(&self.train)?;
        z.apply(&mut self.train)?;
        z.apply(&mut self.val)?;
        z.apply(&mut self.test)
    }
}

/// Per-view split stores for one backbone, keyed by view name.
pub type ViewStores = BTreeMap<String, SplitStores>;

/// On-disk cache of single-view extractions.
#[derive(Debug, Clone)]
pub struct ExtractionCache {
    pub dir: PathBuf,
}

impl ExtractionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(
        &self,
        backbone_id: &str,
        view: &str,
        manifest: &DatasetManifest,
        opts: &ExtractOptions,
    ) -> PathBuf {
        let key = format!("{}|{}|{}|{}", manifest.content_hash(), backbone_id, view, opts.pad_fill);
        let hash = crate::sha256_hex(key.as_bytes());
        let safe = |s: &str| {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect::<String>()
        };
        self.dir.join(format!(
            "{}__{}__{}__{}.dflb",
            safe(backbone_id),
            safe(view),
            &hash[..16],
            opts.normalization.as_str()
        ))
    }

    fn lookup(&self, path: &Path, manifest: &DatasetManifest, opts: &ExtractOptions) -> Option<EmbeddingDataset> {
        if !path.exists() {
            return None;
        }
        match read_store(path) {
            Ok(ds)
                if ds.provenance.manifest_hash == manifest.content_hash()
                    && ds.provenance.normalization == opts.normalization
                    && ds.rows() == manifest.samples.len() =>
            {
                Some(ds)
            }
            Ok(_) => {
                log::warn!("stale cache entry {}, re-extracting", path.display());
                None
            }
            Err(e) => {
                log::warn!("unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    /// Returns the store for one view, extracting only on a miss. The backbone is
    /// loaded lazily through `load`, so a fully cached run never touches the model.
    pub fn view_store(
        &self,
        backbone_id: &str,
        load: &mut dyn FnMut() -> Result<BackboneHandle>,
        manifest: &DatasetManifest,
        view: &str,
        opts: &ExtractOptions,
    ) -> Result<EmbeddingDataset> {
        let path = self.path_for(backbone_id, view, manifest, opts);
        if let Some(ds) = self.lookup(&path, manifest, opts) {
            log::info!("cache hit {}", path.display());
            return Ok(ds);
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let handle = load()?;
        extract_dataset(&handle, manifest, &[view.to_owned()], &path, opts)?;
        read_store(&path)
    }
}

/// Lazily loaded backbone plus its inference counter.
struct LazyBackbone<'a> {
    sidecar: &'a Path,
    handle: Option<BackboneHandle>,
}

impl LazyBackbone<'_> {
    fn get(&mut self) -> Result<BackboneHandle> {
        if self.handle.is_none() {
            self.handle = Some(load_backbone(self.sidecar)?);
        }
        Ok(self.handle.clone().expect("just loaded"))
    }

    fn inference_calls(&self) -> u64 {
        self.handle.as_ref().map_or(0, |h| h.inference_calls())
    }
}

/// Extracts (or reuses) every requested view for one backbone and partitions by split.
fn backbone_view_stores(
    sidecar: &Path,
    manifest: &DatasetManifest,
    views: &[String],
    cache: &ExtractionCache,
    settings: &ExtractionSettings,
) -> Result<(String, ViewStores, u64)> {
    let id = read_sidecar(sidecar)?.id;
    let opts = settings.options();
    let mut lazy = LazyBackbone { sidecar, handle: None };
    let mut stores = ViewStores::new();
    for view in views {
        if stores.contains_key(view) {
            continue;
        }
        let ds = cache.view_store(&id, &mut || lazy.get(), manifest, view, &opts)?;
        stores.insert(view.clone(), SplitStores::from_manifest(manifest, &ds)?);
    }
    Ok((id, stores, lazy.inference_calls()))
}

fn compose(stores: &ViewStores, views: &[String], settings_norm: NormalizationMode) -> Result<SplitStores> {
    let parts = views
        .iter()
        .map(|v| {
            stores
                .get(v)
                .ok_or_else(|| Error::Config(format!("no embeddings for view {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut split = SplitStores::concat(&parts)?;
    if settings_norm == NormalizationMode::ZScore {
        split.standardize()?;
    }
    Ok(split)
}

/// Trains one head per seed and evaluates each on `eval`; returns the mean report
/// and the per-seed reports. Training time covers the `train` call only.
pub fn train_and_evaluate(
    train_set: &EmbeddingDataset,
    val: &EmbeddingDataset,
    eval: &EmbeddingDataset,
    template: &HeadConfig,
    seeds: &[u64],
    task: &str,
) -> Result<(EvalReport, Vec<EvalReport>)> {
    check_seeds(seeds)?;
    let classes = train_set.provenance.num_classes();
    let base = template.resolve(train_set.dim(), classes)?;
    // Dimension problems surface before any training starts.
    for (name, ds) in [("validation", val), ("evaluation", eval)] {
        if ds.dim() != base.input_dim {
            return Err(Error::DimensionMismatch {
                what: format!("{name} store dim vs head input_dim"),
                expected: base.input_dim,
                actual: ds.dim(),
            });
        }
        if ds.is_empty() {
            return Err(Error::Empty(format!("{name} split has no samples")));
        }
    }
    let config_hash = HeadConfig {
        seed: 0,
        ..base.clone()
    }
    .hash();
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = HeadConfig { seed, ..base.clone() };
        let started = Instant::now();
        let (model, _log) = train(train_set, val, &cfg)?;
        let training_seconds = started.elapsed().as_secs_f64();
        let (_, probs) = predict(&model, eval)?;
        let meta = ReportMetadata {
            task: task.to_owned(),
            backbone_id: train_set.provenance.backbone_id.clone(),
            views: train_set.provenance.views.clone(),
            config_hash: config_hash.clone(),
            training_seconds,
            noise_sigma: Some(cfg.noise_sigma),
            seeds: vec![seed],
        };
        reports.push(metrics::evaluate(
            eval.labels(),
            &probs,
            classes,
            DEFAULT_THRESHOLD,
            meta,
        )?);
    }
    Ok((mean_report(&reports)?, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub backbone_id: String,
    pub sidecar: PathBuf,
    pub report: EvalReport,
    pub runs: Vec<EvalReport>,
    /// Backbone inference calls made during this run; 0 when every view was cached.
    pub inference_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub sidecar: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub ranked: Vec<RankedCandidate>,
    pub failed: Vec<FailedCandidate>,
}

impl SelectionReport {
    /// Backbone comparison table followed by one line per failed candidate.
    pub fn render(&self) -> String {
        let rows: Vec<(&str, &EvalReport)> = self
            .ranked
            .iter()
            .map(|c| (c.backbone_id.as_str(), &c.report))
            .collect();
        let mut out = metrics::backbone_table(&rows);
        for f in &self.failed {
            out.push_str(&format!("FAILED {}: {}\n", f.sidecar.display(), f.error));
        }
        out
    }
}

/// Sorts by mean balanced accuracy, descending; ties go to the higher Cohen kappa and
/// then keep input order.
pub fn rank_candidates(candidates: &mut [RankedCandidate]) {
    candidates.sort_by(|a, b| {
        b.report
            .balanced_accuracy
            .total_cmp(&a.report.balanced_accuracy)
            .then(b.report.cohen_kappa.total_cmp(&a.report.cohen_kappa))
    });
}

fn require_splits(manifest: &DatasetManifest, splits: &[Split]) -> Result<()> {
    for &split in splits {
        if !manifest.samples.iter().any(|s| s.split == split) {
            return Err(Error::Empty(
                format!("manifest has no {split:?} samples").to_lowercase(),
            ));
        }
    }
    Ok(())
}

/// Backbone selection: for every candidate, extract (cached), train the head protocol
/// once per seed and evaluate on the validation split. Candidates that fail are
/// reported and skipped.
pub fn run_backbone_selection(spec: &BenchmarkSpec) -> Result<SelectionReport> {
    spec.validate()?;
    let manifest = load_manifest(&spec.manifest)?;
    manifest.validate()?;
    require_splits(&manifest, &[Split::Train, Split::Validation])?;
    let cache = ExtractionCache::new(&spec.cache_dir);
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for sidecar in &spec.candidates {
        let outcome = (|| {
            let (id, stores, calls) = backbone_view_stores(sidecar, &manifest, &spec.views, &cache, &spec.extraction)?;
            let split = compose(&stores, &spec.views, spec.extraction.normalization)?;
            let (report, runs) = train_and_evaluate(
                &split.train,
                &split.val,
                &split.val,
                &spec.head,
                &spec.seeds,
                "backbone_selection",
            )?;
            Ok::<_, Error>(RankedCandidate {
                backbone_id: id,
                sidecar: sidecar.clone(),
                report,
                runs,
                inference_calls: calls,
            })
        })();
        match outcome {
            Ok(c) => ranked.push(c),
            Err(e) => {
                log::warn!("candidate {} failed: {e}", sidecar.display());
                failed.push(FailedCandidate {
                    sidecar: sidecar.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    rank_candidates(&mut ranked);
    Ok(SelectionReport { ranked, failed })
}

/// Store-level task run: train on `train`, stop early on `val`, report on `eval`.
pub fn run_task_on_stores(
    task: &str,
    stores: &SplitStores,
    eval_split: Split,
    head: &HeadConfig,
    seeds: &[u64],
) -> Result<EvalReport> {
    let (report, _) = train_and_evaluate(&stores.train, &stores.val, stores.get(eval_split), head, seeds, task)?;
    Ok(report)
}

fn task_view_stores(cfg: &BiomarkerTaskConfig, views: &[String]) -> Result<ViewStores> {
    let manifest = load_manifest(&cfg.manifest)?;
    manifest.validate()?;
    require_splits(&manifest, &[Split::Train, Split::Validation, cfg.eval_split])?;
    let cache = ExtractionCache::new(&cfg.cache_dir);
    let (_, stores, _) = backbone_view_stores(&cfg.backbone, &manifest, views, &cache, &cfg.extraction)?;
    Ok(stores)
}

/// End-to-end task: extract the configured views, train, evaluate on `eval_split`.
pub fn run_biomarker_task(cfg: &BiomarkerTaskConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let stores = task_view_stores(cfg, &cfg.views)?;
    let split = compose(&stores, &cfg.views, cfg.extraction.normalization)?;
    run_task_on_stores(&cfg.task, &split, cfg.eval_split, &cfg.head, &cfg.seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub noise_sigma: f64,
    pub views: Vec<String>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub task: String,
    /// View-set major, noise minor.
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, views: &[String], noise_sigma: f64) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.views == views && c.noise_sigma == noise_sigma)
    }

    /// Augmentation-influence layout. Binary tasks show precision, recall and PR-AUC;
    /// multiclass tasks show balanced accuracy, kappa and weighted F1 instead.
    pub fn render(&self) -> String {
        let binary = self.cells.iter().all(|c| c.report.precision.is_some());
        let f3 = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let header: [&str; 6] = if binary {
            ["Biomarker", "Method", "Gaussian Noise", "Precision", "Recall", "PR-AUC"]
        } else {
            [
                "Biomarker",
                "Method",
                "Gaussian Noise",
                "Balanced Accuracy",
                "Cohen Kappa",
                "Weighted F1",
            ]
        };
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                let noise = if c.noise_sigma == 0.0 {
                    "No".to_string()
                } else {
                    format!("Yes (sigma={})", c.noise_sigma)
                };
                let r = &c.report;
                let mut row = vec![self.task.clone(), c.views.join("+"), noise];
                if binary {
                    row.extend([f3(r.precision), f3(r.recall), f3(r.pr_auc)]);
                } else {
                    row.extend([
                        f3(Some(r.balanced_accuracy)),
                        f3(Some(r.cohen_kappa)),
                        f3(Some(r.weighted_f1)),
                    ]);
                }
                row
            })
            .collect();
        metrics::render_table(&header, &rows)
    }
}

/// Store-level ablation over the Cartesian product of view sets and noise levels.
pub fn run_ablation_grid(
    task: &str,
    stores: &ViewStores,
    eval_split: Split,
    head: &HeadConfig,
    seeds: &[u64],
    axes: &AblationAxes,
    normalization: NormalizationMode,
) -> Result<AblationGrid> {
    let mut cells = Vec::new();
    for views in &axes.view_sets {
        let split = compose(stores, views, normalization)?;
        for &noise_sigma in &axes.noise {
            let cfg = HeadConfig {
                noise_sigma,
                ..head.clone()
            };
            let report = run_task_on_stores(task, &split, eval_split, &cfg, seeds)?;
            cells.push(AblationCell {
                noise_sigma,
                views: views.clone(),
                report,
            });
        }
    }
    Ok(AblationGrid {
        task: task.to_owned(),
        cells,
    })
}

pub fn run_ablation(spec: &AblationSpec) -> Result<AblationGrid> {
    spec.validate()?;
    let mut all_views: Vec<String> = Vec::new();
    for v in spec.axes.view_sets.iter().flatten() {
        if !all_views.contains(v) {
            all_views.push(v.clone());
        }
    }
    let stores = task_view_stores(&spec.base, &all_views)?;
    run_ablation_grid(
        &spec.base.task,
        &stores,
        spec.base.eval_split,
        &spec.base.head,
        &spec.base.seeds,
        &spec.axes,
        spec.base.extraction.normalization,
    )
}
