//! Dataset manifests: labeled samples and the ordered image views each provides.
//!
//! A manifest is a single JSON document. Image bytes stay on disk; each sample maps
//! every declared view name to a path relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zoom {
    X20,
    X5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colorspace {
    Rgb,
    Grayscale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    Resize,
    PadThenScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

/// One named rendering of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub zoom: Zoom,
    pub colorspace: Colorspace,
    pub target_size: u32,
    pub resize_policy: ResizePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub split: Split,
    /// View name to image path, relative to the manifest directory.
    #[serde(rename = "views")]
    pub view_paths: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub views: Vec<ViewSpec>,
    pub samples: Vec<SampleRecord>,
    /// Directory that relative view paths resolve against. Not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, views: Vec<ViewSpec>, samples: Vec<SampleRecord>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            classes,
            views,
            samples,
            base_dir: PathBuf::new(),
        }
    }

    /// Checks every manifest invariant. Errors name the offending sample where there is one.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::manifest(None, "class list is empty"));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::manifest(None, format!("duplicate class {c:?}")));
            }
        }
        if self.views.is_empty() {
            return Err(Error::manifest(None, "no views declared"));
        }
        let mut view_names = HashSet::new();
        for v in &self.views {
            if !view_names.insert(v.name.as_str()) {
                return Err(Error::manifest(None, format!("duplicate view name {:?}", v.name)));
            }
            if v.target_size == 0 {
                return Err(Error::manifest(None, format!("view {:?} has target_size 0", v.name)));
            }
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::manifest(Some(&s.id), "duplicate sample id"));
            }
            if !seen.contains(s.label.as_str()) {
                return Err(Error::manifest(
                    Some(&s.id),
                    format!("label {:?} is not a declared class", s.label),
                ));
            }
            for v in &self.views {
                if !s.view_paths.contains_key(&v.name) {
                    return Err(Error::manifest(Some(&s.id), format!("missing view {:?}", v.name)));
                }
            }
            if let Some(extra) = s.view_paths.keys().find(|k| !view_names.contains(k.as_str())) {
                return Err(Error::manifest(Some(&s.id), format!("undeclared view {extra:?}")));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Label indices in sample order. Labels are validated, so every lookup succeeds.
    pub fn label_indices(&self) -> Vec<u32> {
        self.samples
            .iter()
            .map(|s| self.class_index(&s.label).expect("validated label") as u32)
            .collect()
    }

    pub fn view(&self, name: &str) -> Option<&ViewSpec> {
        self.views.iter().find(|v| v.name == name)
    }

    /// Absolute (or base-relative) path of one sample's view image.
    pub fn resolve(&self, sample: &SampleRecord, view: &str) -> Option<PathBuf> {
        sample.view_paths.get(view).map(|p| self.base_dir.join(p))
    }

    /// Samples belonging to one split, order preserved.
    pub fn by_split(&self, split: Split) -> DatasetManifest {
        self.filtered(|s| s.split == split)
    }

    pub fn filtered(&self, keep: impl Fn(&SampleRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.clone()
        }
    }

    /// SHA-256 over the canonical JSON of classes and samples (paths included).
    /// Any change to the sample list changes the hash.
    pub fn content_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            classes: &'a [String],
            samples: &'a [SampleRecord],
        }
        let bytes = serde_json::to_vec(&Hashed {
            classes: &self.classes,
            samples: &self.samples,
        })
        .expect("manifest serializes");
        crate::sha256_hex(&bytes)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut manifest = parse_manifest(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_owned(),
            message,
        },
        other => other,
    })?;
    manifest.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    Ok(manifest)
}

/// Parses and validates manifest JSON. `base_dir` is left empty.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::manifest(
            None,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Number of samples per class, in class-list order.
pub fn class_counts(manifest: &DatasetManifest) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = manifest.classes.iter().map(|c| (c.clone(), 0)).collect();
    for s in &manifest.samples {
        *counts.entry(s.label.clone()).or_default() += 1;
    }
    counts
}

/// Same counts as [`class_counts`], indexed by class position.
pub fn class_count_vector(manifest: &DatasetManifest) -> Vec<usize> {
    let mut counts = vec![0; manifest.classes.len()];
    for s in &manifest.samples {
        if let Some(i) = manifest.class_index(&s.label) {
            counts[i] += 1;
        }
    }
    counts
}

/// Per-class random split into (train, validation).
///
/// Each class contributes `round(n * fraction)` samples to validation, clamped so both
/// sides keep at least one. Both outputs keep manifest order and have their `split`
/// field rewritten.
pub fn stratified_split(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.classes.len()];
    for (i, s) in manifest.samples.iter().enumerate() {
        let c = manifest
            .class_index(&s.label)
            .ok_or_else(|| Error::manifest(Some(&s.id), "unknown label"))?;
        per_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; manifest.samples.len()];
    for (c, members) in per_class.iter_mut().enumerate() {
        let n = members.len();
        if n < 2 {
            return Err(Error::manifest(
                None,
                format!(
                    "class {:?} has {n} samples; stratified split needs at least 2",
                    manifest.classes[c]
                ),
            ));
        }
        let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        for &i in &members[..n_val] {
            is_val[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, v) in manifest.samples.iter().zip(is_val) {
        let mut s = s.clone();
        if v {
            s.split = Split::Validation;
            val.push(s);
        } else {
            s.split = Split::Train;
            train.push(s);
        }
    }
    Ok((
        DatasetManifest {
            samples: train,
            ..manifest.clone()
        },
        DatasetManifest {
            samples: val,
            ..manifest.clone()
        },
    ))
}
