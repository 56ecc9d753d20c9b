use std::fs;

use faer::Mat;
use gccakit_cli::matfile::{decode, encode, read_matrix, write_matrix, MatFileError, HEADER_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * 10f64.powi(rng.random_range(-8..8)))
}

fn bits(m: &Mat<f64>) -> Vec<u64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)].to_bits()))
        .collect()
}

#[test]
fn binary_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.gmat");
    let m = random(7, 5, 1);
    write_matrix(&m, &path).unwrap();
    let back = read_matrix(&path).unwrap();
    assert_eq!((back.nrows(), back.ncols()), (7, 5));
    assert_eq!(bits(&back), bits(&m));
    assert_eq!(fs::metadata(&path).unwrap().len() as usize, HEADER_LEN + 7 * 5 * 8);
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let mut m = random(6, 3, 2);
    m[(0, 0)] = f64::MIN_POSITIVE;
    m[(1, 1)] = -0.0;
    m[(2, 2)] = 1.0 / 3.0;
    write_matrix(&m, &path).unwrap();
    assert_eq!(bits(&read_matrix(&path).unwrap()), bits(&m));
}

#[test]
fn empty_matrix_is_a_bare_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.gmat");
    write_matrix(&Mat::<f64>::zeros(0, 0), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN);
    assert_eq!(&bytes[..4], b"GCCA");
    let back = read_matrix(&path).unwrap();
    assert_eq!((back.nrows(), back.ncols()), (0, 0));
}

#[test]
fn header_layout_is_little_endian() {
    let bytes = encode(&Mat::from_fn(2, 3, |i, j| (3 * i + j) as f64));
    assert_eq!(&bytes[4..6], &[1, 0]);
    assert_eq!(&bytes[6..8], &[1, 0]);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    // row-major payload
    let third = f64::from_le_bytes(bytes[24 + 16..24 + 24].try_into().unwrap());
    assert_eq!(third, 2.0);
}

#[test]
fn short_payload_is_a_truncation_error() {
    let mut bytes = encode(&random(3, 3, 3));
    bytes.truncate(bytes.len() - 8);
    match decode("x.gmat".as_ref(), &bytes) {
        Err(MatFileError::Truncated {
            rows: 3,
            cols: 3,
            expected: 72,
            actual: 64,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
    let mut long = encode(&random(2, 2, 4));
    long.push(0);
    assert!(matches!(decode("x".as_ref(), &long), Err(MatFileError::Truncated { .. })));
    assert!(matches!(
        decode("x".as_ref(), &bytes[..10]),
        Err(MatFileError::TruncatedHeader { len: 10, .. })
    ));
}

#[test]
fn bad_header_fields_are_rejected() {
    let good = encode(&random(1, 1, 5));
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(decode("x".as_ref(), &magic), Err(MatFileError::BadMagic { .. })));
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(
        decode("x".as_ref(), &version),
        Err(MatFileError::UnsupportedVersion { version: 2, .. })
    ));
    let mut dtype = good;
    dtype[6] = 7;
    assert!(matches!(
        decode("x".as_ref(), &dtype),
        Err(MatFileError::UnsupportedDtype { code: 7, .. })
    ));
}

#[test]
fn csv_errors_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "1,2,3\n4,five,6\n").unwrap();
    match read_matrix(&path) {
        Err(e @ MatFileError::Csv { line: 2, column: 2, .. }) => assert!(e.to_string().contains("five")),
        other => panic!("unexpected {other:?}"),
    }
    fs::write(&path, "1,2,3\n4,5\n").unwrap();
    assert!(matches!(read_matrix(&path), Err(MatFileError::Csv { line: 2, .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_matrix(&dir.path().join("nope.gmat")),
        Err(MatFileError::Io { .. })
    ));
}
