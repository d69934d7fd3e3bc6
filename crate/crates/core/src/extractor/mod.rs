//! Embedding extraction: backbone loading, per-view normalization and the parallel
//! dataset pass that writes a `DFLB` store.

mod backbone;
mod fixture;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{mpsc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use backbone::{
    load_backbone, read_sidecar, BackboneHandle, BackboneSidecar, BackendSpec, Embedder, InputLayout, Pooling,
};
pub use fixture::{
    check_fixture, cosine, decode_fixture, encode_fixture, read_fixture, write_fixture, FixtureAgreement,
    FixtureHeader, GoldenFixture,
};

use crate::dataset::{DatasetManifest, ViewSpec};
use crate::embedstore::{NormalizationMode, Provenance, StoreWriter};
use crate::imageprep::{self, ImageTensor, DEFAULT_PAD_FILL};
use crate::{Error, Result};

/// One backbone output for one image of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub backbone_id: String,
    pub view_name: String,
}

/// Runs the backbone on a batch of preprocessed images. One inference call.
pub fn extract(handle: &BackboneHandle, view_name: &str, batch: &[ImageTensor]) -> Result<Vec<EmbeddingVector>> {
    Ok(handle
        .run(batch)?
        .into_iter()
        .map(|values| EmbeddingVector {
            values,
            backbone_id: handle.id.clone(),
            view_name: view_name.to_owned(),
        })
        .collect())
}

/// Divides by the Euclidean norm. An all-zero vector is an error rather than NaN.
pub fn normalize_embedding(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let mut values = v.values.clone();
    l2_in_place(&mut values)?;
    Ok(EmbeddingVector { values, ..v.clone() })
}

fn l2_in_place(values: &mut [f32]) -> Result<()> {
    let norm = values.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroEmbedding);
    }
    for x in values {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub batch_size: usize,
    pub workers: usize,
    /// `Off` or `L2`, applied per view before concatenation. Z-scoring needs training
    /// statistics and is applied afterwards with [`crate::embedstore::ZScore`].
    pub normalization: NormalizationMode,
    pub pad_fill: f32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            workers: 1,
            normalization: NormalizationMode::L2,
            pad_fill: DEFAULT_PAD_FILL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub rows: usize,
    pub dim: usize,
    pub views: Vec<String>,
    pub batches: usize,
}

fn check_options(opts: &ExtractOptions) -> Result<()> {
    if opts.batch_size == 0 || opts.workers == 0 {
        return Err(Error::Config("batch_size and workers must be at least 1".into()));
    }
    if opts.normalization == NormalizationMode::ZScore {
        return Err(Error::Config(
            "z_score is fitted on the training split after extraction; extract with l2 or off".into(),
        ));
    }
    if !opts.pad_fill.is_finite() {
        return Err(Error::Config("pad fill must be finite".into()));
    }
    Ok(())
}

fn check_views(handle: &BackboneHandle, views: &[&ViewSpec]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Config("at least one view is required".into()));
    }
    for v in views {
        if v.target_size as usize != handle.input_size {
            return Err(Error::Config(format!(
                "view {} targets {}px but backbone {} takes {}px",
                v.name, v.target_size, handle.id, handle.input_size
            )));
        }
    }
    Ok(())
}

/// Preprocesses, embeds, normalizes and concatenates one sample's views. Used for
/// single-sample prediction outside a manifest.
pub fn embed_views(
    handle: &BackboneHandle,
    images: &[(&ViewSpec, ImageTensor)],
    opts: &ExtractOptions,
) -> Result<Vec<f32>> {
    check_options(opts)?;
    check_views(handle, &images.iter().map(|(v, _)| *v).collect::<Vec<_>>())?;
    let mut out = Vec::with_capacity(handle.embedding_dim * images.len());
    for (view, img) in images {
        let prepared = imageprep::prepare_view(img, view, &handle.normalization, opts.pad_fill)?;
        let mut v = handle.run(std::slice::from_ref(&prepared))?.remove(0);
        if opts.normalization == NormalizationMode::L2 {
            l2_in_place(&mut v)?;
        }
        out.extend(v);
    }
    Ok(out)
}

fn embed_batch(
    handle: &BackboneHandle,
    manifest: &DatasetManifest,
    views: &[&ViewSpec],
    range: std::ops::Range<usize>,
    batch_idx: usize,
    opts: &ExtractOptions,
) -> Result<Vec<Vec<f32>>> {
    let samples = &manifest.samples[range];
    let mut rows = vec![Vec::with_capacity(handle.embedding_dim * views.len()); samples.len()];
    for view in views {
        let mut prepared = Vec::with_capacity(samples.len());
        for s in samples {
            let path = manifest
                .resolve(s, &view.name)
                .ok_or_else(|| Error::manifest(Some(&s.id), format!("missing view {}", view.name)))?;
            let sample_err = |e: Error| Error::SampleImage {
                sample: s.id.clone(),
                message: format!("view {}: {e}", view.name),
            };
            let img = imageprep::load_image(&path).map_err(sample_err)?;
            prepared
                .push(imageprep::prepare_view(&img, view, &handle.normalization, opts.pad_fill).map_err(sample_err)?);
        }
        let out = handle.run(&prepared).map_err(|e| Error::Inference {
            batch: batch_idx,
            message: e.to_string(),
        })?;
        for ((row, mut v), s) in rows.iter_mut().zip(out).zip(samples) {
            if opts.normalization == NormalizationMode::L2 {
                l2_in_place(&mut v).map_err(|_| Error::SampleImage {
                    sample: s.id.clone(),
                    message: format!("view {} produced an all-zero embedding", view.name),
                })?;
            }
            row.extend(v);
        }
    }
    Ok(rows)
}

struct Progress {
    next: usize,
    written: usize,
    abort: bool,
}

/// Extracts every sample of the manifest for the given views (in order) and writes a
/// store to `out`. Rows follow manifest order whatever the worker count, so the output
/// is byte-identical for any `workers`. On failure nothing is left at `out`.
pub fn extract_dataset(
    handle: &BackboneHandle,
    manifest: &DatasetManifest,
    view_names: &[String],
    out: impl AsRef<Path>,
    opts: &ExtractOptions,
) -> Result<ExtractionSummary> {
    check_options(opts)?;
    manifest.validate()?;
    let views = view_names
        .iter()
        .map(|n| {
            manifest
                .view(n)
                .ok_or_else(|| Error::Config(format!("view {n} is not declared in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_views(handle, &views)?;
    if manifest.samples.is_empty() {
        return Err(Error::Empty("manifest has no samples".into()));
    }

    let n = manifest.samples.len();
    let dim = handle.embedding_dim * views.len();
    let labels = manifest.label_indices();
    let nbatches = n.div_ceil(opts.batch_size);
    let mut writer = StoreWriter::create(out.as_ref(), dim, n as u64)?;

    // Workers claim batch indices but may run at most `window` batches ahead of the
    // writer, which bounds memory for large datasets.
    let window = opts.workers * 2;
    let progress = Mutex::new(Progress {
        next: 0,
        written: 0,
        abort: false,
    });
    let turn = Condvar::new();
    let (tx, rx) = mpsc::sync_channel::<(usize, Result<Vec<Vec<f32>>>)>(window);

    let result = std::thread::scope(|scope| {
        for _ in 0..opts.workers.min(nbatches) {
            let tx = tx.clone();
            let (progress, turn, views) = (&progress, &turn, &views);
            scope.spawn(move || loop {
                let idx = {
                    let mut p = progress.lock().unwrap();
                    loop {
                        if p.abort || p.next >= nbatches {
                            return;
                        }
                        if p.next < p.written + window {
                            p.next += 1;
                            break p.next - 1;
                        }
                        p = turn.wait(p).unwrap();
                    }
                };
                let start = idx * opts.batch_size;
                let range = start..(start + opts.batch_size).min(n);
                let rows = embed_batch(handle, manifest, views, range, idx, opts);
                if tx.send((idx, rows)).is_err() {
                    return;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut written = 0;
        let outcome = (|| {
            while written < nbatches {
                let (idx, rows) = rx
                    .recv()
                    .map_err(|_| Error::Invariant("extraction workers exited early".into()))?;
                pending.insert(idx, rows);
                while let Some(rows) = pending.remove(&written) {
                    let start = written * opts.batch_size;
                    for (i, row) in rows?.iter().enumerate() {
                        writer.push_row(row, labels[start + i])?;
                    }
                    written += 1;
                    progress.lock().unwrap().written = written;
                    turn.notify_all();
                    log::debug!("batch {written}/{nbatches} written");
                }
            }
            Ok(())
        })();
        progress.lock().unwrap().abort = true;
        turn.notify_all();
        drop(rx);
        outcome
    });
    result?;

    writer.finish(&Provenance {
        backbone_id: handle.id.clone(),
        views: view_names.to_vec(),
        normalization: opts.normalization,
        manifest_hash: manifest.content_hash(),
        classes: manifest.classes.clone(),
    })?;
    Ok(ExtractionSummary {
        rows: n,
        dim,
        views: view_names.to_vec(),
        batches: nbatches,
    })
}

#[cfg(test)]
mod tests;
