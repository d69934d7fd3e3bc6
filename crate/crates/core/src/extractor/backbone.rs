//! Frozen backbones: sidecar parsing, inference backends and the probe check.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use crate::imageprep::{ImageTensor, PixelNormalization};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// The graph already emits `[batch, dim]` (or its output is flattened as is).
    #[default]
    None,
    /// Mean over the spatial axes of a `[batch, C, H, W]` feature map.
    GlobalAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    #[default]
    Nchw,
    Nhwc,
}

/// What actually computes embeddings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// An ONNX graph run through the tract runtime.
    #[default]
    Onnx,
    /// Linear test backbone: per-channel means over a `grid x grid` partition of the
    /// image, giving `3 * grid^2` features.
    GridPoolStub { grid: usize },
    /// Uninformative test backbone emitting the same vector for every image.
    ConstantStub {
        #[serde(default = "one")]
        value: f32,
    },
}

fn one() -> f32 {
    1.0
}

/// Sidecar JSON describing one exported backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSidecar {
    pub id: String,
    pub embedding_dim: usize,
    pub input_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    #[serde(default)]
    pub pooling: Pooling,
    /// Free-text provenance (checkpoint name or URL).
    #[serde(default)]
    pub source: String,
    /// Model file, relative to the sidecar. Defaults to the sidecar path with `.onnx`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub layout: InputLayout,
    #[serde(default)]
    pub backend: BackendSpec,
}

impl BackboneSidecar {
    pub fn normalization(&self) -> PixelNormalization {
        PixelNormalization {
            mean: self.mean,
            std: self.std,
        }
    }
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<BackboneSidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Inference over a batch of preprocessed images of identical shape.
pub trait Embedder: Send + Sync {
    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>>;
}

struct GridPool {
    grid: usize,
}

impl Embedder for GridPool {
    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(batch.iter().map(|img| grid_pool(img, self.grid)).collect())
    }
}

fn grid_pool(img: &ImageTensor, grid: usize) -> Vec<f32> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = Vec::with_capacity(grid * grid * ch);
    for gy in 0..grid {
        let (y0, y1) = (gy * h / grid, ((gy + 1) * h / grid).max(gy * h / grid + 1));
        for gx in 0..grid {
            let (x0, x1) = (gx * w / grid, ((gx + 1) * w / grid).max(gx * w / grid + 1));
            for c in 0..ch {
                let mut acc = 0f64;
                for y in y0..y1.min(h) {
                    for x in x0..x1.min(w) {
                        acc += img.get(y, x, c) as f64;
                    }
                }
                let count = ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64;
                out.push((acc / count) as f32);
            }
        }
    }
    out
}

struct Constant {
    dim: usize,
    value: f32,
}

impl Embedder for Constant {
    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![self.value; self.dim]; batch.len()])
    }
}

struct OnnxEmbedder {
    plan: Arc<TypedSimplePlan>,
    layout: InputLayout,
    pooling: Pooling,
}

impl OnnxEmbedder {
    fn load(path: &Path, input_size: usize, layout: InputLayout, pooling: Pooling) -> Result<Self> {
        let err = |e: TractError| Error::Backbone(format!("{}: {e:#}", path.display()));
        let mut model = tract_onnx::onnx().model_for_path(path).map_err(err)?;
        let batch = model.sym("N").to_dim();
        let s = input_size.to_dim();
        let shape = match layout {
            InputLayout::Nchw => tvec![batch, 3.to_dim(), s.clone(), s],
            InputLayout::Nhwc => tvec![batch, s.clone(), s, 3.to_dim()],
        };
        model
            .set_input_fact(0, InferenceFact::dt_shape(f32::datum_type(), shape))
            .map_err(err)?;
        let plan = model.into_optimized().and_then(|m| m.into_runnable()).map_err(err)?;
        Ok(Self { plan, layout, pooling })
    }
}

impl Embedder for OnnxEmbedder {
    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let Some(first) = batch.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = (first.height(), first.width());
        let mut flat = Vec::with_capacity(batch.len() * h * w * 3);
        for img in batch {
            match self.layout {
                InputLayout::Nchw => flat.extend(img.to_chw()),
                InputLayout::Nhwc => flat.extend_from_slice(img.data()),
            }
        }
        let shape = match self.layout {
            InputLayout::Nchw => [batch.len(), 3, h, w],
            InputLayout::Nhwc => [batch.len(), h, w, 3],
        };
        let err = |e: TractError| Error::Backbone(format!("{e:#}"));
        let input = Tensor::from_shape(&shape, &flat).map_err(err)?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(err)?;
        let out = outputs[0].to_plain_array_view::<f32>().map_err(err)?;
        let out_shape = out.shape().to_vec();
        if out_shape.first() != Some(&batch.len()) {
            return Err(Error::Backbone(format!(
                "output shape {out_shape:?} does not lead with batch size {}",
                batch.len()
            )));
        }
        let values: Vec<f32> = out.iter().copied().collect();
        let per_item = values.len() / batch.len();
        let rows = values.chunks_exact(per_item.max(1));
        match (self.pooling, out_shape.len()) {
            (Pooling::GlobalAverage, 4) => {
                let channels = out_shape[1];
                let spatial = out_shape[2] * out_shape[3];
                Ok(rows
                    .map(|r| {
                        r.chunks_exact(spatial)
                            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64) as f32)
                            .collect::<Vec<f32>>()
                    })
                    .inspect(|v| debug_assert_eq!(v.len(), channels))
                    .collect())
            }
            (Pooling::GlobalAverage, rank) if rank != 2 => Err(Error::Backbone(format!(
                "global_average pooling expects a rank-4 output, got shape {out_shape:?}"
            ))),
            _ => Ok(rows.map(<[f32]>::to_vec).collect()),
        }
    }
}

/// A loaded, probe-validated backbone. Cheap to clone; clones share the backend and
/// the inference counter.
#[derive(Clone)]
pub struct BackboneHandle {
    pub id: String,
    pub model_path: Option<PathBuf>,
    pub embedding_dim: usize,
    pub input_size: usize,
    pub normalization: PixelNormalization,
    pub pooling: Pooling,
    pub source: String,
    backend: Arc<dyn Embedder>,
    calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for BackboneHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackboneHandle")
            .field("id", &self.id)
            .field("model_path", &self.model_path)
            .field("embedding_dim", &self.embedding_dim)
            .field("input_size", &self.input_size)
            .finish_non_exhaustive()
    }
}

impl BackboneHandle {
    /// Wraps a custom backend. Used by tests and embedders that live outside this crate.
    pub fn from_embedder(
        id: impl Into<String>,
        embedding_dim: usize,
        input_size: usize,
        normalization: PixelNormalization,
        backend: Arc<dyn Embedder>,
    ) -> Result<Self> {
        let handle = Self {
            id: id.into(),
            model_path: None,
            embedding_dim,
            input_size,
            normalization,
            pooling: Pooling::None,
            source: String::new(),
            backend,
            calls: Arc::new(AtomicU64::new(0)),
        };
        handle.probe()?;
        Ok(handle)
    }

    /// Number of backend inference calls made through [`BackboneHandle::run`]; the
    /// load-time probe is not counted.
    pub fn inference_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Raw backend output for a batch, checked for shape and finiteness.
    pub fn run(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.run_uncounted(batch)
    }

    fn run_uncounted(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        for (i, img) in batch.iter().enumerate() {
            if img.height() != self.input_size || img.width() != self.input_size || img.channels() != 3 {
                return Err(Error::Image(format!(
                    "image {i} is {}x{}x{}, backbone {} expects {s}x{s}x3",
                    img.height(),
                    img.width(),
                    img.channels(),
                    self.id,
                    s = self.input_size
                )));
            }
        }
        let out = self.backend.embed(batch)?;
        if out.len() != batch.len() {
            return Err(Error::Backbone(format!(
                "backend returned {} vectors for {} images",
                out.len(),
                batch.len()
            )));
        }
        for v in &out {
            if v.len() != self.embedding_dim {
                return Err(Error::DimensionMismatch {
                    what: format!("backbone {} output width", self.id),
                    expected: self.embedding_dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Backbone("non-finite embedding value".into()));
            }
        }
        Ok(out)
    }

    fn probe(&self) -> Result<()> {
        let zero = ImageTensor::filled(self.input_size, self.input_size, 3, 0.0);
        self.run_uncounted(std::slice::from_ref(&zero)).map(|_| ())
    }
}

/// Loads the backbone described by a sidecar and validates its output width with a
/// probe inference on a zero image.
pub fn load_backbone(sidecar_path: impl AsRef<Path>) -> Result<BackboneHandle> {
    let sidecar_path = sidecar_path.as_ref();
    let sidecar = read_sidecar(sidecar_path)?;
    if sidecar.embedding_dim == 0 || sidecar.input_size == 0 {
        return Err(Error::Config(format!(
            "sidecar {}: embedding_dim and input_size must be positive",
            sidecar_path.display()
        )));
    }
    let normalization = sidecar.normalization();
    normalization.validate()?;
    let (backend, model_path): (Arc<dyn Embedder>, Option<PathBuf>) = match &sidecar.backend {
        BackendSpec::Onnx => {
            let dir = sidecar_path.parent().unwrap_or(Path::new(""));
            let model_path = match &sidecar.model {
                Some(p) => dir.join(p),
                None => sidecar_path.with_extension("onnx"),
            };
            if !model_path.exists() {
                return Err(Error::MissingFile(model_path));
            }
            let embedder = OnnxEmbedder::load(&model_path, sidecar.input_size, sidecar.layout, sidecar.pooling)?;
            (Arc::new(embedder), Some(model_path))
        }
        BackendSpec::GridPoolStub { grid } => {
            if *grid == 0 || *grid > sidecar.input_size {
                return Err(Error::Config(format!("invalid stub grid {grid}")));
            }
            (Arc::new(GridPool { grid: *grid }), None)
        }
        BackendSpec::ConstantStub { value } => (
            Arc::new(Constant {
                dim: sidecar.embedding_dim,
                value: *value,
            }),
            None,
        ),
    };
    let handle = BackboneHandle {
        id: sidecar.id,
        model_path,
        embedding_dim: sidecar.embedding_dim,
        input_size: sidecar.input_size,
        normalization,
        pooling: sidecar.pooling,
        source: sidecar.source,
        backend,
        calls: Arc::new(AtomicU64::new(0)),
    };
    handle.probe()?;
    Ok(handle)
}
