use std::fs;
use std::path::Path;

use apnet::dataset::{generate_synthetic, load_dataset, save_dataset, Dataset, Splits, SyntheticConfig};
use apnet::{ApnetError, DenseMatrix};

fn f32_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Two classes, three images, written byte by byte without the library.
fn write_by_hand(dir: &Path, m_declared: usize, seen: &str, unseen: &str) {
    fs::create_dir_all(dir).unwrap();
    let meta = format!(
        r#"{{"m": {m_declared}, "c": 2, "image_dim": 2, "attr_dim": 3,
            "seen": {seen}, "unseen": {unseen},
            "train_seen": [0, 1], "test_seen": [], "test_unseen": [2]}}"#
    );
    fs::write(dir.join("meta.json"), meta).unwrap();
    fs::write(dir.join("features.bin"), f32_le(&[1.5, -2.0, 0.25, 3.0, -0.125, 7.0])).unwrap();
    let labels: Vec<u8> = [0u32, 0, 1].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join("labels.bin"), labels).unwrap();
    fs::write(dir.join("attributes.bin"), f32_le(&[0.1, 0.2, 0.3, 0.9, 0.8, 0.7])).unwrap();
}

#[test]
fn reads_the_documented_byte_layout() {
    let dir = tempfile::tempdir().unwrap();
    write_by_hand(dir.path(), 3, "[0]", "[1]");
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.image_features().data(), &[1.5, -2.0, 0.25, 3.0, -0.125, 7.0]);
    assert_eq!(ds.labels(), &[0, 0, 1]);
    assert_eq!(ds.attributes().get(1, 2), 0.7f32 as f64);
    assert_eq!(ds.seen(), &[0]);
    assert_eq!(ds.test_unseen(), &[2]);
    assert!(ds.distances().is_none());
}

#[test]
fn declared_rows_must_match_file_size() {
    let dir = tempfile::tempdir().unwrap();
    write_by_hand(dir.path(), 3, "[0]", "[1]");
    // ten rows declared, the files hold nine
    let meta = fs::read_to_string(dir.path().join("meta.json")).unwrap().replace("\"m\": 3", "\"m\": 10");
    fs::write(dir.path().join("meta.json"), meta).unwrap();
    fs::write(dir.path().join("features.bin"), f32_le(&[0.0; 18])).unwrap();
    match load_dataset(dir.path()) {
        Err(ApnetError::SizeMismatch { expected, found, .. }) => assert_eq!((expected, found), (80, 72)),
        other => panic!("expected a size mismatch, got {other:?}"),
    }
}

#[test]
fn overlapping_class_splits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_by_hand(dir.path(), 3, "[0, 1]", "[1]");
    assert!(matches!(load_dataset(dir.path()), Err(ApnetError::SplitViolation(_))));
}

#[test]
fn missing_pieces_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("nowhere");
    let err = load_dataset(&gone).unwrap_err();
    assert!(err.is_io());
    assert!(err.to_string().contains("nowhere"));

    write_by_hand(dir.path(), 3, "[0]", "[1]");
    fs::remove_file(dir.path().join("labels.bin")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("labels.bin"), "{err}");
}

#[test]
fn non_finite_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_by_hand(dir.path(), 3, "[0]", "[1]");
    fs::write(dir.path().join("features.bin"), f32_le(&[1.0, f32::NAN, 0.0, 0.0, 0.0, 0.0])).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(ApnetError::NonFinite(_))));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn save_load_round_trip_is_bitwise() {
    let ds = generate_synthetic(&SyntheticConfig {
        n_seen: 6,
        n_unseen: 3,
        images_per_class: 7,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(&ds, a.path()).unwrap();
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded, ds);
    save_dataset(&loaded, b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(a.path().join("distances.bin").exists());
}

#[test]
fn f64_values_are_stored_as_f32() {
    let x = 0.1f64 + 1e-12;
    let ds = Dataset::new(
        DenseMatrix::from_vec(1, 1, vec![x]).unwrap(),
        vec![0],
        DenseMatrix::from_vec(1, 1, vec![x]).unwrap(),
        Splits {
            seen: vec![0],
            train_seen: vec![0],
            ..Splits::default()
        },
        None,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    let v = back.image_features().get(0, 0);
    assert_eq!(v, x as f32 as f64);
    assert!((v - x).abs() <= f32::EPSILON as f64 * x);
    // an empty unseen split is a valid plain supervised layout
    assert!(back.unseen().is_empty());
}

#[test]
fn stale_distances_are_removed_on_save() {
    let ds = generate_synthetic(&SyntheticConfig {
        n_seen: 3,
        n_unseen: 1,
        images_per_class: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    save_dataset(&ds.with_distances(None).unwrap(), dir.path()).unwrap();
    assert!(!dir.path().join("distances.bin").exists());
    assert!(load_dataset(dir.path()).unwrap().distances().is_none());
}
