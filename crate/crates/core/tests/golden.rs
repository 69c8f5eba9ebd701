//! Committed fixtures must decode to the same values on every platform.

use std::path::PathBuf;

use hgi_core::ingest::featfile::encode_features;
use hgi_core::ingest::{read_feature_file, read_heatmap};
use hgi_core::{Descriptors, Family};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn geometric_file() {
    let path = fixture("golden.geo.hgif");
    let f = read_feature_file(&path).unwrap();
    assert_eq!((f.frame_id(), f.family(), f.len()), (42, Family::Geometric, 3));
    let kps: Vec<(f32, f32)> = f.keypoints().iter().map(|&k| k.into()).collect();
    assert_eq!(kps, [(1.5, 2.25), (100.0, 0.0), (3.0, 47.75)]);
    let rows = f.descriptors().rows_f32();
    assert_eq!(rows[0], [-1.0, 0.0, 1.0, 2.0]);
    assert_eq!(rows[2], [0.0, 1.0, 2.0, 3.0]);
    assert_eq!(encode_features(&f), std::fs::read(&path).unwrap());
}

#[test]
fn salient_file() {
    let path = fixture("golden.sal.hgif");
    let f = read_feature_file(&path).unwrap();
    assert_eq!((f.frame_id(), f.family(), f.len()), (7, Family::Salient, 2));
    let Descriptors::Salient(rows) = f.descriptors() else {
        panic!("salient rows expected");
    };
    assert_eq!(rows[0].bytes()[5], 5);
    assert_eq!(rows[1].bytes()[5], 250);
    assert_eq!(encode_features(&f), std::fs::read(&path).unwrap());
}

#[test]
fn heatmaps() {
    let h = read_heatmap(fixture("golden16.pgm")).unwrap();
    assert_eq!((h.width(), h.height()), (3, 2));
    assert_eq!(h.values()[0], 0.0);
    assert_eq!(h.values()[1], 32768.0 / 65535.0);
    assert_eq!(h.values()[2], 1.0);
    assert_eq!(h.values()[5], 3.0 / 65535.0);

    let h = read_heatmap(fixture("golden8.pgm")).unwrap();
    assert_eq!(h.values(), [0.0, 127.0 / 255.0, 128.0 / 255.0, 1.0]);
}
