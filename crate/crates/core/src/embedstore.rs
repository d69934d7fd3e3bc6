//! The `DFLB` embedding store: one seekable file holding vectors, labels and provenance.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size           field
//! 0       4              magic "DFLB"
//! 4       2              u16 version (1)
//! 6       2              u16 dtype (1 = f32 little-endian)
//! 8       4              u32 dim
//! 12      8              u64 rows
//! 20      rows*dim*4     f32 data, row-major
//! ..      rows*4         u32 labels
//! ..      8              u64 provenance length
//! ..      len            provenance JSON
//! ```
//!
//! Files are written to a temporary sibling and renamed into place, so a reader
//! never observes a partial store.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"DFLB";
pub const STORE_VERSION: u16 = 1;
pub const DTYPE_F32_LE: u16 = 1;
pub const HEADER_LEN: u64 = 20;

/// How per-view embeddings were normalized before concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    Off,
    #[default]
    L2,
    /// Per-column standardization with statistics fitted on the training split.
    ZScore,
}

impl NormalizationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormalizationMode::Off => "off",
            NormalizationMode::L2 => "l2",
            NormalizationMode::ZScore => "z_score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backbone_id: String,
    /// View names in concatenation order. Repeated across parts for concatenated stores.
    pub views: Vec<String>,
    pub normalization: NormalizationMode,
    pub manifest_hash: String,
    /// Class names; label `i` refers to `classes[i]`.
    pub classes: Vec<String>,
}

impl Provenance {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
    pub provenance: Provenance,
}

impl EmbeddingDataset {
    pub fn new(dim: usize, data: Vec<f32>, labels: Vec<u32>, provenance: Provenance) -> Result<Self> {
        let ds = Self {
            dim,
            data,
            labels,
            provenance,
        };
        ds.check()?;
        Ok(ds)
    }

    /// Verifies every store invariant.
    pub fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invariant("embedding dim must be positive".into()));
        }
        if self.data.len() != self.labels.len() * self.dim {
            return Err(Error::Invariant(format!(
                "data length {} != rows {} x dim {}",
                self.data.len(),
                self.labels.len(),
                self.dim
            )));
        }
        let classes = self.provenance.num_classes();
        if let Some((row, l)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(Error::Invariant(format!(
                "row {row} has label {l} but only {classes} classes are recorded"
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite value at row {} column {}",
                i / self.dim,
                i % self.dim
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&[f32], u32)> {
        self.data.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingDataset {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        EmbeddingDataset {
            dim: self.dim,
            data,
            labels,
            provenance: self.provenance.clone(),
        }
    }

    /// Applies `f` to every value in place and re-checks finiteness.
    pub fn map_columns(&mut self, mut f: impl FnMut(usize, f32) -> f32) -> Result<()> {
        let dim = self.dim;
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i % dim, *v);
        }
        self.check()
    }

    /// SHA-256 of the logical content (the serialized store bytes).
    pub fn content_hash(&self) -> String {
        crate::sha256_hex(&encode(self))
    }
}

/// Per-column standardization fitted on a training store.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ZScore {
    pub fn fit(train: &EmbeddingDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("cannot fit z-score statistics on an empty store".into()));
        }
        let n = train.rows() as f64;
        let mut mean = vec![0f64; train.dim()];
        for (row, _) in train.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; train.dim()];
        for (row, _) in train.iter_rows() {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                *s += (v as f64 - m).powi(2);
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            // constant columns map to zero rather than dividing by zero
            std: var
                .iter()
                .map(|&s| {
                    let sd = (s / n).sqrt();
                    if sd > 1e-12 {
                        sd as f32
                    } else {
                        1.0
                    }
                })
                .collect(),
        })
    }

    pub fn apply(&self, ds: &mut EmbeddingDataset) -> Result<()> {
        if ds.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                what: "z-score statistics".into(),
                expected: self.mean.len(),
                actual: ds.dim(),
            });
        }
        ds.map_columns(|c, v| (v - self.mean[c]) / self.std[c])?;
        ds.provenance.normalization = NormalizationMode::ZScore;
        Ok(())
    }
}

fn encode_provenance(p: &Provenance) -> Vec<u8> {
    serde_json::to_vec(p).expect("provenance serializes")
}

fn header_bytes(dim: usize, rows: u64) -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[0..4].copy_from_slice(&STORE_MAGIC);
    h[4..6].copy_from_slice(&STORE_VERSION.to_le_bytes());
    h[6..8].copy_from_slice(&DTYPE_F32_LE.to_le_bytes());
    h[8..12].copy_from_slice(&(dim as u32).to_le_bytes());
    h[12..20].copy_from_slice(&rows.to_le_bytes());
    h
}

/// Serializes a store to bytes.
pub fn encode(ds: &EmbeddingDataset) -> Vec<u8> {
    let prov = encode_provenance(&ds.provenance);
    let mut out = Vec::with_capacity(HEADER_LEN as usize + ds.data.len() * 4 + ds.labels.len() * 4 + 8 + prov.len());
    out.extend_from_slice(&header_bytes(ds.dim, ds.rows() as u64));
    for v in &ds.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&(prov.len() as u64).to_le_bytes());
    out.extend_from_slice(&prov);
    out
}

pub fn write_store(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.check()?;
    let path = path.as_ref();
    let mut writer = StoreWriter::create(path, ds.dim, ds.rows() as u64)?;
    for (row, label) in ds.iter_rows() {
        writer.push_row(row, label)?;
    }
    writer.finish(&ds.provenance)
}

/// Streaming writer used by extraction. Rows are appended in order; labels are
/// buffered and written after the data block on [`StoreWriter::finish`]. Dropping
/// an unfinished writer deletes the temporary file.
pub struct StoreWriter {
    target: PathBuf,
    file: BufWriter<NamedTempFile>,
    dim: usize,
    expected_rows: u64,
    labels: Vec<u32>,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize, rows: u64) -> Result<Self> {
        let target = path.as_ref().to_owned();
        if dim == 0 {
            return Err(Error::Invariant("embedding dim must be positive".into()));
        }
        let dir = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut file = BufWriter::new(tmp);
        file.write_all(&header_bytes(dim, rows))
            .map_err(|e| Error::io(&target, e))?;
        Ok(Self {
            target,
            file,
            dim,
            expected_rows: rows,
            labels: Vec::with_capacity(rows as usize),
        })
    }

    pub fn push_row(&mut self, row: &[f32], label: u32) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "store row".into(),
                expected: self.dim,
                actual: row.len(),
            });
        }
        if self.labels.len() as u64 >= self.expected_rows {
            return Err(Error::Invariant(format!(
                "more than the declared {} rows written",
                self.expected_rows
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite value {v} in row {}",
                self.labels.len()
            )));
        }
        for v in row {
            self.file
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&self.target, e))?;
        }
        self.labels.push(label);
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.labels.len() as u64
    }

    pub fn finish(mut self, provenance: &Provenance) -> Result<()> {
        if self.rows_written() != self.expected_rows {
            return Err(Error::Invariant(format!(
                "declared {} rows but wrote {}",
                self.expected_rows,
                self.rows_written()
            )));
        }
        let classes = provenance.num_classes();
        if let Some(l) = self.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Invariant(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        let io = |e| Error::io(&self.target, e);
        for l in &self.labels {
            self.file.write_all(&l.to_le_bytes()).map_err(io)?;
        }
        let prov = encode_provenance(provenance);
        self.file.write_all(&(prov.len() as u64).to_le_bytes()).map_err(io)?;
        self.file.write_all(&prov).map_err(io)?;
        let tmp = self
            .file
            .into_inner()
            .map_err(|e| Error::io(&self.target, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(&self.target, e))?;
        tmp.persist(&self.target)
            .map_err(|e| Error::io(&self.target, e.error))?;
        Ok(())
    }
}

/// Parsed fixed header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHeader {
    pub version: u16,
    pub dtype: u16,
    pub dim: usize,
    pub rows: u64,
}

impl StoreHeader {
    fn parse(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != STORE_MAGIC {
            return Err(Error::BadMagic {
                expected: STORE_MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(Error::Version {
                expected: STORE_VERSION,
                found: version,
            });
        }
        let dtype = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
        if dtype != DTYPE_F32_LE {
            return Err(Error::Invariant(format!("unsupported dtype code {dtype}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        Ok(Self {
            version,
            dtype,
            dim,
            rows,
        })
    }

    fn data_offset(&self) -> u64 {
        HEADER_LEN
    }

    fn labels_offset(&self) -> Option<u64> {
        self.rows
            .checked_mul(self.dim as u64)?
            .checked_mul(4)?
            .checked_add(HEADER_LEN)
    }

    fn provenance_offset(&self) -> Option<u64> {
        self.labels_offset()?.checked_add(self.rows.checked_mul(4)?)
    }
}

/// Seekable reader: header, labels and provenance are loaded eagerly, rows on demand.
pub struct StoreReader {
    path: PathBuf,
    file: BufReader<File>,
    header: StoreHeader,
    labels: Vec<u32>,
    provenance: Provenance,
}

impl StoreReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_owned();
        let file = File::open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.clone())
            } else {
                Error::io(&path, e)
            }
        })?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut file = BufReader::new(file);
        let truncated = |expected: u64| Error::Truncated {
            expected,
            actual: file_len,
        };
        if file_len < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let mut hb = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut hb).map_err(|e| Error::io(&path, e))?;
        let header = StoreHeader::parse(&hb)?;
        let prov_off = header
            .provenance_offset()
            .ok_or_else(|| Error::Invariant("header sizes overflow".into()))?;
        let min_len = prov_off + 8;
        if file_len < min_len {
            return Err(truncated(min_len));
        }
        file.seek(SeekFrom::Start(header.labels_offset().unwrap()))
            .map_err(|e| Error::io(&path, e))?;
        let mut label_bytes = vec![0u8; header.rows as usize * 4];
        file.read_exact(&mut label_bytes).map_err(|e| Error::io(&path, e))?;
        let labels: Vec<u32> = label_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes).map_err(|e| Error::io(&path, e))?;
        let prov_len = u64::from_le_bytes(len_bytes);
        let total = min_len
            .checked_add(prov_len)
            .ok_or_else(|| Error::Invariant("provenance length overflows".into()))?;
        if file_len != total {
            return Err(truncated(total));
        }
        let mut prov = vec![0u8; prov_len as usize];
        file.read_exact(&mut prov).map_err(|e| Error::io(&path, e))?;
        let provenance: Provenance = serde_json::from_slice(&prov).map_err(|e| Error::Parse {
            path: path.clone(),
            message: format!("provenance: {e}"),
        })?;
        Ok(Self {
            path,
            file,
            header,
            labels,
            provenance,
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Reads one row by seeking into the data block.
    pub fn read_row(&mut self, i: usize) -> Result<Vec<f32>> {
        if i as u64 >= self.header.rows {
            return Err(Error::Invariant(format!(
                "row {i} out of range for {} rows",
                self.header.rows
            )));
        }
        let dim = self.header.dim;
        let offset = self.header.data_offset() + (i * dim * 4) as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; dim * 4];
        self.file.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn into_dataset(mut self) -> Result<EmbeddingDataset> {
        let n = self.header.rows as usize * self.header.dim;
        self.file
            .seek(SeekFrom::Start(self.header.data_offset()))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; n * 4];
        self.file.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingDataset::new(self.header.dim, data, self.labels, self.provenance)
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    StoreReader::open(path)?.into_dataset()
}

/// Column-wise concatenation: row `i` of the result is row `i` of every part, in order.
pub fn concat_stores(parts: &[EmbeddingDataset]) -> Result<EmbeddingDataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::StoreMismatch("no parts to concatenate".into()))?;
    for (k, p) in parts.iter().enumerate().skip(1) {
        if p.rows() != first.rows() {
            return Err(Error::StoreMismatch(format!(
                "part {k} has {} rows, part 0 has {}",
                p.rows(),
                first.rows()
            )));
        }
        if p.labels != first.labels {
            return Err(Error::StoreMismatch(format!("part {k} labels differ from part 0")));
        }
        if p.provenance.manifest_hash != first.provenance.manifest_hash {
            return Err(Error::StoreMismatch(format!(
                "part {k} was extracted from a different manifest"
            )));
        }
        if p.provenance.classes != first.provenance.classes {
            return Err(Error::StoreMismatch(format!("part {k} class list differs")));
        }
    }
    let dim: usize = parts.iter().map(|p| p.dim).sum();
    let mut data = Vec::with_capacity(dim * first.rows());
    for i in 0..first.rows() {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    let mut backbones: Vec<&str> = Vec::new();
    for p in parts {
        if !backbones.contains(&p.provenance.backbone_id.as_str()) {
            backbones.push(&p.provenance.backbone_id);
        }
    }
    let provenance = Provenance {
        backbone_id: backbones.join("+"),
        views: parts.iter().flat_map(|p| p.provenance.views.iter().cloned()).collect(),
        normalization: first.provenance.normalization,
        manifest_hash: first.provenance.manifest_hash.clone(),
        classes: first.provenance.classes.clone(),
    };
    Ok(EmbeddingDataset {
        dim,
        data,
        labels: first.labels.clone(),
        provenance,
    })
}
