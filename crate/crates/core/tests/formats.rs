//! On-disk interfaces shared with the feature exporter: feature files,
//! manifest CSV, dataset descriptor, and checkpoints.

use std::fs;
use std::path::Path;

use monoiqa::data::{
    discover_datasets, read_feature_file, write_feature_file, DatasetManifest, FEATURE_MAGIC,
};
use monoiqa::diffcore::Matrix;
use monoiqa::error::{Error, ErrorKind, FormatError};
use monoiqa::par::Execution;
use monoiqa::train::checkpoint::{checkpoint_load_for, CHECKPOINT_MAGIC};
use monoiqa::train::{
    checkpoint_load, checkpoint_save, load_training_data, QualityModel, RawCheckpoint, TrainConfig,
};

/// Writes a one-dataset tree by hand, the way an external exporter would.
fn hand_written_tree(root: &Path, mos: &[&str]) {
    let dir = root.join("ext");
    fs::create_dir_all(dir.join("features")).unwrap();
    fs::write(
        dir.join("descriptor.json"),
        r#"{"dataset_id": "ext", "native_min": 1.0, "native_max": 5.0, "higher_is_better": true}"#,
    )
    .unwrap();
    let mut csv = String::from("sample_id,content_id,feature_path,mos_raw\n");
    for (i, m) in mos.iter().enumerate() {
        let rel = format!("ext/features/{i}.mqaf");
        csv.push_str(&format!("img{i},ref{},{rel},{m}\n", i / 2));
        let f =
            Matrix::from_vec(2, 3, (0..6).map(|k| (i * 6 + k) as f64 * 0.25).collect()).unwrap();
        write_feature_file(&root.join(rel), &f).unwrap();
    }
    fs::write(dir.join("manifest.csv"), csv).unwrap();
}

#[test]
fn externally_written_tree_loads() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1.0", "5", "3.5", "2.25"]);
    let data = load_training_data(dir.path(), None, Execution::default()).unwrap();
    assert_eq!(data.len(), 1);
    let d = &data[0];
    assert_eq!(d.dataset_id(), "ext");
    assert_eq!(d.mos(), vec![0.0, 10.0, 6.25, 3.125]);
    assert_eq!(d.features[1].shape(), (2, 3));
    assert_eq!(d.features[1].get(0, 0), 1.5);
    assert_eq!(d.manifest.content_ids().len(), 2);
}

#[test]
fn manifest_write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1.5", "4.5", "2"]);
    let m = discover_datasets(dir.path()).unwrap().remove(0);
    let out = tempfile::tempdir().unwrap();
    m.write(out.path()).unwrap();
    let back = DatasetManifest::read(out.path(), Path::new("ext")).unwrap();
    assert_eq!(back, m);
}

#[test]
fn manifest_with_wrong_header_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "2"]);
    let csv = dir.path().join("ext/manifest.csv");
    let text = fs::read_to_string(&csv)
        .unwrap()
        .replace("mos_raw", "score");
    fs::write(&csv, text).unwrap();
    let err = discover_datasets(dir.path()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("manifest.csv"), "{err}");
}

#[test]
fn descriptor_with_unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "2"]);
    fs::write(
        dir.path().join("ext/descriptor.json"),
        r#"{"dataset_id": "ext", "native_min": 1, "native_max": 5, "higher_is_better": true, "scale": 2}"#,
    )
    .unwrap();
    let err = discover_datasets(dir.path()).unwrap_err();
    assert!(
        matches!(err, Error::Format(FormatError::Manifest { .. })),
        "{err}"
    );
}

#[test]
fn out_of_range_score_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "5.5"]);
    let err = discover_datasets(dir.path()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("img1"), "{err}");
}

#[test]
fn missing_feature_file_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "2", "3"]);
    fs::remove_file(dir.path().join("ext/features/2.mqaf")).unwrap();
    let err = load_training_data(dir.path(), None, Execution::default()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("2.mqaf"), "{err}");
}

#[test]
fn non_finite_feature_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "2"]);
    let path = dir.path().join("ext/features/0.mqaf");
    let mut bytes = fs::read(&path).unwrap();
    bytes[16 + 4 * 3..16 + 4 * 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let err = read_feature_file(&path).unwrap_err();
    assert!(
        matches!(err, Error::Format(FormatError::NonFinite { index: 3, .. })),
        "{err}"
    );
    assert_eq!(err.kind(), ErrorKind::Numeric);
}

#[test]
fn feature_file_layout_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.mqaf");
    let m = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0], [3.0, 0.0]]);
    write_feature_file(&path, &m).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], &FEATURE_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
    let second = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    assert_eq!(second, -2.0);
    assert_eq!(bytes.len(), 16 + 6 * 4);
}

#[test]
fn wrong_channel_count_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    hand_written_tree(dir.path(), &["1", "2"]);
    let err = load_training_data(dir.path(), Some(4), Execution::default()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("0.mqaf"), "{err}");
}

fn small_model(config: &TrainConfig) -> QualityModel {
    QualityModel::init(3, &["a", "b"], config).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden1: 8,
        hidden2: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_is_exact_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = small_config();
    let model = small_model(&config);
    checkpoint_save(&path, &model, Some(&config)).unwrap();
    let loaded = checkpoint_load(&path).unwrap();
    assert_eq!(loaded, model.quantize_f32().unwrap());
    let raw = RawCheckpoint::read(&path).unwrap();
    assert_eq!(raw.header.train_config.as_ref(), Some(&config));
    assert!(raw.constrained_weight_violations().is_empty());
    assert_eq!(&fs::read(&path).unwrap()[..4], &CHECKPOINT_MAGIC);
}

#[test]
fn forged_negative_weight_is_a_property_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = small_config();
    checkpoint_save(&path, &small_model(&config), Some(&config)).unwrap();
    let raw = RawCheckpoint::read(&path).unwrap();
    let idx = raw
        .header
        .tensors
        .iter()
        .position(|t| t.name == "transformer.b.cfcl2.weight")
        .unwrap();
    let offset: usize = raw.header.tensors[..idx]
        .iter()
        .map(|t| t.shape[0] * t.shape[1])
        .sum();
    let mut bytes = fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let at = 8 + header_len + 4 * (offset + 1);
    bytes[at..at + 4].copy_from_slice(&(-0.5f32).to_le_bytes());
    fs::write(&path, &bytes).unwrap();

    let raw = RawCheckpoint::read(&path).unwrap();
    let v = raw.constrained_weight_violations();
    assert_eq!(v.len(), 1);
    assert!(
        v[0].location.contains("transformer.b.cfcl2.weight"),
        "{v:?}"
    );
    let err = checkpoint_load(&path).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Property);
    assert!(err.to_string().contains("-0.5"), "{err}");
}

#[test]
fn checkpoint_depth_mismatch_names_both_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = small_config();
    checkpoint_save(&path, &small_model(&config), Some(&config)).unwrap();
    let want = TrainConfig {
        cfcl_depth: 3,
        ..small_config()
    };
    let err = checkpoint_load_for(&path, &want).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("depth 5") && msg.contains("depth 3"), "{msg}");
    assert!(
        msg.contains("[1, 8, 16, 16, 8, 1]") && msg.contains("[1, 8, 8, 1]"),
        "{msg}"
    );
}

#[test]
fn corrupt_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = small_config();
    checkpoint_save(&path, &small_model(&config), None).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let truncated = good[..good.len() - 3].to_vec();
    let mut trailing = good.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    for (name, bytes) in [
        ("magic", bad_magic),
        ("truncated", truncated),
        ("trailing", trailing),
    ] {
        let err = RawCheckpoint::decode(&bytes, &path).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Data, "{name}: {err}");
    }

    let mut nan = good.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    let err = RawCheckpoint::decode(&nan, &path).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numeric, "{err}");
}
