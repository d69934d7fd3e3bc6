//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dfl_core::dataset::{
    write_manifest, Colorspace, DatasetManifest, ResizePolicy, SampleRecord, Split, ViewSpec, Zoom,
};
use dfl_core::embedstore::{EmbeddingDataset, NormalizationMode, Provenance};
use dfl_core::imageprep::{save_png, ImageTensor};
use prost::Message;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tract_onnx::pb;

pub fn provenance(classes: usize, views: &[&str]) -> Provenance {
    Provenance {
        backbone_id: "synthetic".into(),
        views: views.iter().map(|v| v.to_string()).collect(),
        normalization: NormalizationMode::Off,
        manifest_hash: "synthetic".into(),
        classes: (0..classes).map(|c| format!("class{c}")).collect(),
    }
}

/// Isotropic Gaussian blobs; class `c` is centred at `separation * e_c`.
pub fn blobs(n_per_class: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> EmbeddingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(n_per_class * classes * dim);
    let mut labels = Vec::new();
    for i in 0..n_per_class * classes {
        let c = i % classes;
        for d in 0..dim {
            let centre = if d == c { separation } else { 0.0 };
            data.push((centre + unit.sample(&mut rng)) as f32);
        }
        labels.push(c as u32);
    }
    EmbeddingDataset::new(dim, data, labels, provenance(classes, &["blobs"])).unwrap()
}

fn dims_info(name: &str, dims: &[Option<i64>]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    let dim = dims
        .iter()
        .map(|d| Dimension {
            value: Some(match d {
                Some(v) => Value::DimValue(*v),
                None => Value::DimParam("N".into()),
            }),
            ..Default::default()
        })
        .collect();
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: pb::tensor_proto::DataType::Float as i32,
                shape: Some(pb::TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attrs: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.into(),
        name: format!("{op}_{output}"),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute: attrs,
        ..Default::default()
    }
}

fn int_attr(name: &str, v: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: v,
        ..Default::default()
    }
}

fn write_model(path: &Path, graph: pb::GraphProto) {
    let model = pb::ModelProto {
        ir_version: 7,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "dfl-tests".into(),
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec()).unwrap();
}

/// `[N,3,S,S] -> Flatten -> MatMul(W) -> [N, dim]` with `W` drawn from `seed`.
/// Returns the weights (row-major `[3*S*S, dim]`, NCHW flattening order).
pub fn write_linear_onnx(path: &Path, size: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = 3 * size * size;
    let w: Vec<f32> = (0..inputs * dim).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    let s = size as i64;
    let graph = pb::GraphProto {
        name: "linear".into(),
        node: vec![
            node("Flatten", &["x"], "flat", vec![int_attr("axis", 1)]),
            node("MatMul", &["flat", "w"], "y", vec![]),
        ],
        initializer: vec![pb::TensorProto {
            name: "w".into(),
            dims: vec![inputs as i64, dim as i64],
            data_type: pb::tensor_proto::DataType::Float as i32,
            float_data: w.clone(),
            ..Default::default()
        }],
        input: vec![dims_info("x", &[Some(1), Some(3), Some(s), Some(s)])],
        output: vec![dims_info("y", &[Some(1), Some(dim as i64)])],
        ..Default::default()
    };
    write_model(path, graph);
    w
}

/// Identity graph emitting the input feature map `[N,3,S,S]`; with `global_average`
/// pooling declared in the sidecar it embeds an image as its channel means.
pub fn write_feature_map_onnx(path: &Path, size: usize) {
    let s = size as i64;
    let graph = pb::GraphProto {
        name: "feature_map".into(),
        node: vec![node("Identity", &["x"], "y", vec![])],
        input: vec![dims_info("x", &[None, Some(3), Some(s), Some(s)])],
        output: vec![dims_info("y", &[None, Some(3), Some(s), Some(s)])],
        ..Default::default()
    };
    write_model(path, graph);
}

pub fn write_sidecar(path: &Path, json: serde_json::Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    path.to_owned()
}

pub fn grid_stub_sidecar(dir: &Path, name: &str, size: usize, grid: usize) -> PathBuf {
    write_sidecar(
        &dir.join(format!("{name}.json")),
        serde_json::json!({
            "id": name, "embedding_dim": 3 * grid * grid, "input_size": size,
            "mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25],
            "source": "test stub",
            "backend": {"kind": "grid_pool_stub", "grid": grid}
        }),
    )
}

pub fn constant_stub_sidecar(dir: &Path, name: &str, size: usize, dim: usize) -> PathBuf {
    write_sidecar(
        &dir.join(format!("{name}.json")),
        serde_json::json!({
            "id": name, "embedding_dim": dim, "input_size": size,
            "mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25],
            "backend": {"kind": "constant_stub", "value": 1.0}
        }),
    )
}

pub fn rgb_view(name: &str, size: u32) -> ViewSpec {
    ViewSpec {
        name: name.into(),
        zoom: Zoom::X20,
        colorspace: Colorspace::Rgb,
        target_size: size,
        resize_policy: ResizePolicy::Resize,
    }
}

/// Writes a labelled image dataset and its manifest. Images of class `c` are tinted
/// towards channel `c % 3`; `tint` controls separability, pixel noise is uniform.
/// `per_split` gives samples per class for (train, validation, test).
pub fn tinted_image_dataset(
    dir: &Path,
    classes: usize,
    per_split: (usize, usize, usize),
    views: &[ViewSpec],
    image_size: usize,
    tint: f32,
    seed: u64,
) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut samples = Vec::new();
    let (tr, va, te) = per_split;
    let mut k = 0;
    for (split, n) in [(Split::Train, tr), (Split::Validation, va), (Split::Test, te)] {
        for _ in 0..n {
            for c in 0..classes {
                let id = format!("s{k:04}");
                k += 1;
                let mut paths = BTreeMap::new();
                for v in views {
                    let mut data = Vec::with_capacity(image_size * image_size * 3);
                    for _ in 0..image_size * image_size {
                        for ch in 0..3 {
                            let base = if ch == c % 3 { 0.5 + tint } else { 0.5 };
                            data.push((base + rng.random_range(-0.3..0.3f32)).clamp(0.0, 1.0));
                        }
                    }
                    let img = ImageTensor::new(image_size, image_size, 3, data).unwrap();
                    let rel = PathBuf::from("images").join(format!("{id}_{}.png", v.name));
                    save_png(&img, dir.join(&rel)).unwrap();
                    paths.insert(v.name.clone(), rel);
                }
                samples.push(SampleRecord {
                    id,
                    label: format!("class{c}"),
                    split,
                    view_paths: paths,
                });
            }
        }
    }
    let manifest = DatasetManifest::new(
        (0..classes).map(|c| format!("class{c}")).collect(),
        views.to_vec(),
        samples,
    );
    let path = dir.join("manifest.json");
    write_manifest(&manifest, &path).unwrap();
    path
}

pub fn sha256_file(path: &Path) -> String {
    dfl_core::sha256_hex(&std::fs::read(path).unwrap())
}
