use std::collections::BTreeMap;
use std::sync::Arc;

use approx::assert_abs_diff_eq;

use super::*;
use crate::dataset::{Colorspace, ResizePolicy, SampleRecord, Split, Zoom};
use crate::embedstore::read_store;
use crate::imageprep::{save_png, PixelNormalization};

fn view(name: &str, size: u32) -> ViewSpec {
    ViewSpec {
        name: name.into(),
        zoom: Zoom::X20,
        colorspace: Colorspace::Rgb,
        target_size: size,
        resize_policy: ResizePolicy::Resize,
    }
}

fn grid_handle(size: usize, grid: usize) -> BackboneHandle {
    struct G(usize);
    impl Embedder for G {
        fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
            Ok(batch
                .iter()
                .map(|img| {
                    let mut v = backbone_grid(img, self.0);
                    v.push(1.0);
                    v
                })
                .collect())
        }
    }
    BackboneHandle::from_embedder(
        "grid",
        3 * grid * grid + 1,
        size,
        PixelNormalization::IDENTITY,
        Arc::new(G(grid)),
    )
    .unwrap()
}

fn backbone_grid(img: &ImageTensor, grid: usize) -> Vec<f32> {
    let cell = img.height() / grid;
    let mut out = Vec::new();
    for gy in 0..grid {
        for gx in 0..grid {
            for c in 0..3 {
                let mut s = 0.0;
                for y in gy * cell..(gy + 1) * cell {
                    for x in gx * cell..(gx + 1) * cell {
                        s += img.get(y, x, c);
                    }
                }
                out.push(s / (cell * cell) as f32);
            }
        }
    }
    out
}

/// Writes `n` random 8x8 images per view and returns the manifest.
fn synthetic_manifest(dir: &Path, n: usize, views: &[ViewSpec]) -> DatasetManifest {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut samples = Vec::new();
    for i in 0..n {
        let mut paths = BTreeMap::new();
        for v in views {
            let data: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.random::<f32>()).collect();
            let img = ImageTensor::new(8, 8, 3, data).unwrap();
            let file = format!("s{i}_{}.png", v.name);
            save_png(&img, dir.join(&file)).unwrap();
            paths.insert(v.name.clone(), file.into());
        }
        samples.push(SampleRecord {
            id: format!("s{i}"),
            label: if i % 2 == 0 { "a" } else { "b" }.into(),
            split: Split::Train,
            view_paths: paths,
        });
    }
    let mut m = DatasetManifest::new(vec!["a".into(), "b".into()], views.to_vec(), samples);
    m.base_dir = dir.to_owned();
    m
}

#[test]
fn normalize_three_four_five() {
    let v = EmbeddingVector {
        values: vec![3.0, 4.0],
        backbone_id: "b".into(),
        view_name: "v".into(),
    };
    let n = normalize_embedding(&v).unwrap();
    assert_abs_diff_eq!(n.values[0], 0.6, epsilon = 1e-7);
    assert_abs_diff_eq!(n.values[1], 0.8, epsilon = 1e-7);
    assert_eq!(normalize_embedding(&n).unwrap().values, n.values);
    let zero = EmbeddingVector {
        values: vec![0.0, 0.0],
        ..v
    };
    assert!(matches!(normalize_embedding(&zero), Err(Error::ZeroEmbedding)));
}

#[test]
fn extract_batches_and_counts_calls() {
    let h = grid_handle(8, 2);
    assert_eq!(h.inference_calls(), 0);
    assert!(extract(&h, "v", &[]).unwrap().is_empty());
    let img = ImageTensor::filled(8, 8, 3, 0.25);
    let out = extract(&h, "v", &[img.clone(), img]).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0], out[1]);
    assert_eq!(out[0].view_name, "v");
    assert_eq!(h.inference_calls(), 2);
    let wrong = ImageTensor::filled(4, 4, 3, 0.0);
    assert!(matches!(extract(&h, "v", &[wrong]), Err(Error::Image(_))));
}

#[test]
fn dimension_mismatch_at_load() {
    struct Short;
    impl Embedder for Short {
        fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
            Ok(vec![vec![1.0; 3]; batch.len()])
        }
    }
    let err = BackboneHandle::from_embedder("short", 5, 4, PixelNormalization::IDENTITY, Arc::new(Short));
    assert!(matches!(
        err,
        Err(Error::DimensionMismatch {
            expected: 5,
            actual: 3,
            ..
        })
    ));
}

#[test]
fn stub_sidecars_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stub.json");
    std::fs::write(
        &path,
        r#"{"id": "grid", "embedding_dim": 12, "input_size": 8, "mean": [0,0,0], "std": [1,1,1],
            "backend": {"kind": "grid_pool_stub", "grid": 2}}"#,
    )
    .unwrap();
    let h = load_backbone(&path).unwrap();
    assert_eq!(h.embedding_dim, 12);
    assert!(h.model_path.is_none());

    std::fs::write(
        &path,
        r#"{"id": "grid", "embedding_dim": 10, "input_size": 8, "mean": [0,0,0], "std": [1,1,1],
            "backend": {"kind": "grid_pool_stub", "grid": 2}}"#,
    )
    .unwrap();
    assert!(matches!(load_backbone(&path), Err(Error::DimensionMismatch { .. })));

    // onnx backend without a model file
    std::fs::write(
        &path,
        r#"{"id": "x", "embedding_dim": 10, "input_size": 8, "mean": [0,0,0], "std": [1,1,1]}"#,
    )
    .unwrap();
    assert!(matches!(load_backbone(&path), Err(Error::MissingFile(p)) if p.ends_with("stub.onnx")));
    assert!(matches!(
        load_backbone(dir.path().join("nope.json")),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn dataset_rows_are_unit_per_view_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let views = [view("a", 8), view("b", 8)];
    let m = synthetic_manifest(dir.path(), 10, &views);
    let h = grid_handle(8, 2);
    let out = dir.path().join("e.dflb");
    let opts = ExtractOptions {
        batch_size: 3,
        workers: 2,
        ..Default::default()
    };
    let names = vec!["a".to_string(), "b".to_string()];
    let summary = extract_dataset(&h, &m, &names, &out, &opts).unwrap();
    assert_eq!(summary.rows, 10);
    assert_eq!(summary.dim, 26);
    assert_eq!(summary.batches, 4);
    assert_eq!(h.inference_calls(), 8);

    let ds = read_store(&out).unwrap();
    assert_eq!(ds.labels(), &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    assert_eq!(ds.provenance.views, names);
    assert_eq!(ds.provenance.manifest_hash, m.content_hash());
    for (i, (row, _)) in ds.iter_rows().enumerate() {
        for block in row.chunks(13) {
            let n: f64 = block.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-5);
        }
        // matches a direct single-sample computation
        let images: Vec<_> = names
            .iter()
            .map(|v| {
                let spec = m.view(v).unwrap();
                let img = imageprep::load_image(m.resolve(&m.samples[i], v).unwrap()).unwrap();
                (spec, img)
            })
            .collect();
        assert_eq!(embed_views(&h, &images, &opts).unwrap(), row);
    }
}

#[test]
fn worker_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let views = [view("a", 8)];
    let m = synthetic_manifest(dir.path(), 23, &views);
    let h = grid_handle(8, 4);
    let names = vec!["a".to_string()];
    let mut files = Vec::new();
    for workers in [1, 3, 8] {
        let out = dir.path().join(format!("w{workers}.dflb"));
        let opts = ExtractOptions {
            batch_size: 2,
            workers,
            ..Default::default()
        };
        extract_dataset(&h, &m, &names, &out, &opts).unwrap();
        files.push(std::fs::read(out).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn unreadable_image_aborts_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let views = [view("a", 8)];
    let m = synthetic_manifest(dir.path(), 12, &views);
    std::fs::write(dir.path().join("s7_a.png"), b"not a png").unwrap();
    let out = dir.path().join("bad.dflb");
    let opts = ExtractOptions {
        batch_size: 2,
        workers: 3,
        ..Default::default()
    };
    let err = extract_dataset(&grid_handle(8, 2), &m, &["a".to_string()], &out, &opts).unwrap_err();
    assert!(
        matches!(&err, Error::SampleImage { sample, .. } if sample == "s7"),
        "{err}"
    );
    assert!(!out.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| !e.file_name().to_string_lossy().ends_with(".png"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(dir.path(), 2, &[view("a", 8), view("big", 16)]);
    let h = grid_handle(8, 2);
    let out = dir.path().join("x.dflb");
    let opts = ExtractOptions::default();
    let run = |names: &[&str], opts: &ExtractOptions| {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        extract_dataset(&h, &m, &names, &out, opts)
    };
    assert!(matches!(run(&["zzz"], &opts), Err(Error::Config(_))));
    assert!(matches!(run(&["big"], &opts), Err(Error::Config(_))));
    assert!(matches!(run(&[], &opts), Err(Error::Config(_))));
    let zero = ExtractOptions {
        batch_size: 0,
        ..Default::default()
    };
    assert!(matches!(run(&["a"], &zero), Err(Error::Config(_))));
    let z = ExtractOptions {
        normalization: NormalizationMode::ZScore,
        ..Default::default()
    };
    assert!(matches!(run(&["a"], &z), Err(Error::Config(_))));
}

#[test]
fn zero_embedding_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_manifest(dir.path(), 3, &[view("a", 8)]);
    let sidecar = dir.path().join("c.json");
    std::fs::write(
        &sidecar,
        r#"{"id": "zero", "embedding_dim": 4, "input_size": 8, "mean": [0,0,0], "std": [1,1,1],
            "backend": {"kind": "constant_stub", "value": 0.0}}"#,
    )
    .unwrap();
    let h = load_backbone(&sidecar).unwrap();
    let out = dir.path().join("z.dflb");
    let err = extract_dataset(&h, &m, &["a".into()], &out, &ExtractOptions::default()).unwrap_err();
    assert!(
        matches!(err, Error::SampleImage { ref sample, .. } if sample == "s0"),
        "{err}"
    );
    let off = ExtractOptions {
        normalization: NormalizationMode::Off,
        ..Default::default()
    };
    extract_dataset(&h, &m, &["a".into()], &out, &off).unwrap();
    assert!(read_store(&out).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fixture_round_trip_and_check() {
    let h = grid_handle(8, 2);
    let img = ImageTensor::new(8, 8, 3, (0..192).map(|i| (i % 7) as f32 / 6.0).collect()).unwrap();
    let png = imageprep::encode_png(&img).unwrap();
    let decoded = imageprep::decode_image(&png).unwrap();
    let reference = h.run(&[decoded]).unwrap();
    let fx = GoldenFixture {
        header: FixtureHeader {
            backbone_id: "grid".into(),
            embedding_dim: 13,
            count: 1,
            source: "test".into(),
        },
        images: vec![png],
        embeddings: reference,
    };
    let bytes = encode_fixture(&fx).unwrap();
    assert_eq!(decode_fixture(&bytes).unwrap(), fx);
    assert!(matches!(
        decode_fixture(&bytes[..bytes.len() - 1]),
        Err(Error::Truncated { .. })
    ));
    let agreement = check_fixture(&h, &fx).unwrap();
    assert!(agreement.min_cosine > 0.999_999);
    assert_eq!(agreement.max_abs_deviation, 0.0);
}
