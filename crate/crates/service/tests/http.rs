use std::path::{Path, PathBuf};

use hgi_client::{Client, ClientError};
use hgi_core::config::RunConfig;
use hgi_core::eval::{derive_loop_labels, Trajectory};
use hgi_core::ingest::{read_sequence, synth_loop_sequence, Layout, SynthSpec};
use hgi_core::loopdet::fuse;
use hgi_core::pipeline::{detect_features, extract, train_vocab, Backend, FeatureSet};
use hgi_core::{Family, FusionParams};

const CONFLICT: u16 = 409;
const NOT_FOUND: u16 = 404;
const UNPROCESSABLE: u16 = 422;
const CONFIG: &str = r#"{"vocab": {"salient": {"L": 2}}}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    features: PathBuf,
    vocab_s: PathBuf,
    vocab_g: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        length: 90,
        loops: vec![(0, 45)],
        revisit_span: 24,
        label_min_gap: 20,
        ..SynthSpec::default()
    };
    synth_loop_sequence(&spec, dir.path()).unwrap();
    let m = read_sequence(dir.path(), Layout::KittiLike).unwrap();
    let cfg = RunConfig::from_json(CONFIG).unwrap();
    let features = dir.path().join("features_out");
    extract(&m, Backend::Fallback, true, &features, &cfg).unwrap();
    let (vocab_s, vocab_g) = (dir.path().join("s.hgiv"), dir.path().join("g.hgiv"));
    train_vocab(&features, Family::Salient, &cfg).unwrap().save(&vocab_s).unwrap();
    train_vocab(&features, Family::Geometric, &cfg).unwrap().save(&vocab_g).unwrap();
    Fixture {
        _dir: dir,
        features,
        vocab_s,
        vocab_g,
    }
}

fn status(e: &ClientError) -> u16 {
    e.status().map(|s| s.as_u16()).unwrap_or(0)
}

async fn client() -> Client {
    Client::new(hgi_service::spawn_local().await.unwrap())
}

#[tokio::test]
async fn health_and_fuse() {
    let c = client().await;
    assert_eq!(c.health().await.unwrap().status, "ok");
    let p = FusionParams::default();
    assert_eq!(c.fuse(1.0, 0.2, p).await.unwrap(), fuse(1.0, 0.2, &p));
    let err = c.fuse(-1.0, 0.2, p).await.unwrap_err();
    assert_eq!(status(&err), UNPROCESSABLE);
}

fn local_run(features: &Path, vs: &Path, vg: &Path) -> hgi_core::pipeline::DetectRun {
    let vs = hgi_core::vocab::Vocabulary::load(vs).unwrap();
    let vg = hgi_core::vocab::Vocabulary::load(vg).unwrap();
    let cfg = RunConfig::from_json(CONFIG).unwrap();
    detect_features(features, &vs, &vg, &cfg).unwrap()
}

#[tokio::test]
async fn session_matches_in_process_detection() {
    let fx = fixture();
    let c = client().await;
    let cfg = RunConfig::from_json(CONFIG).unwrap();
    let session = c.create_session(&fx.vocab_s, &fx.vocab_g, cfg).await.unwrap();
    assert!(session.info().salient_words > 0);

    let set = FeatureSet::scan(&fx.features).unwrap();
    let ids = set.paired_frames();
    for &id in &ids {
        let sal = set.load(Family::Salient, id).unwrap();
        let geo = set.load(Family::Geometric, id).unwrap();
        session.submit(&sal, &geo).await.unwrap();
    }
    let remote = session.detections().await.unwrap();
    let local = local_run(&fx.features, &fx.vocab_s, &fx.vocab_g);
    assert!(!local.detections.is_empty());
    assert_eq!(remote.detections, local.detections);
    assert_eq!(remote.stored, local.stored);
    assert_eq!(remote.frames, ids.len() as u64);
    assert_eq!(remote.last_frame, ids.last().copied());

    let first = ids[0];
    let sal = set.load(Family::Salient, first).unwrap();
    let geo = set.load(Family::Geometric, first).unwrap();
    let err = session.submit(&sal, &geo).await.unwrap_err();
    assert_eq!(status(&err), CONFLICT, "{err}");

    let mismatched = set.load(Family::Geometric, ids[1]).unwrap().with_frame_id(10_000);
    let err = session.submit(&set.load(Family::Salient, ids[1]).unwrap(), &mismatched).await.unwrap_err();
    assert_eq!(status(&err), UNPROCESSABLE, "{err}");

    let id = session.id().to_string();
    session.close().await.unwrap();
    let again = c.create_session(&fx.vocab_s, &fx.vocab_g, cfg).await.unwrap();
    assert_ne!(again.id(), id);
    again.close().await.unwrap();
}

#[tokio::test]
async fn session_errors() {
    let fx = fixture();
    let c = client().await;
    let err = c
        .create_session(&fx.vocab_g, &fx.vocab_s, RunConfig::default())
        .await
        .unwrap_err();
    assert_eq!(status(&err), UNPROCESSABLE, "{err}");
    let err = c
        .create_session(fx.vocab_s.with_extension("missing"), &fx.vocab_g, RunConfig::default())
        .await
        .unwrap_err();
    assert_eq!(status(&err), UNPROCESSABLE, "{err}");

    let http = reqwest::Client::new();
    let base = c.base_url();
    let resp = http
        .get(format!("{base}/v1/sessions/00000000-0000-0000-0000-000000000000/detections"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), NOT_FOUND);
    let resp = http.get(format!("{base}/v1/sessions/nope/detections")).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), NOT_FOUND);
    let resp = http
        .post(format!("{base}/v1/sessions"))
        .header("content-type", "application/json")
        .body(r#"{"vocab_s": 3}"#)
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_client_error());
    assert!(resp.text().await.unwrap().contains("error"));
}

#[tokio::test]
async fn eval_endpoints() {
    let c = client().await;
    let gt = Trajectory::new((0..80u64).map(|i| {
        let t = i as f64 / 80.0 * std::f64::consts::TAU;
        (i, [t.cos() * 10.0, t.sin() * 10.0, 0.0])
    }))
    .unwrap();
    let labels = derive_loop_labels(&gt, 1.0, 50).unwrap();
    assert!(!labels.is_empty());
    let report = c.precision_recall(&[(79, 0), (40, 0)], &labels, 2).await.unwrap();
    assert_eq!((report.counts.tp, report.counts.fp), (1, 1));
    assert_eq!(report.precision, 0.5);

    let shifted = Trajectory::new(gt.iter().map(|(id, p)| (id, [p.x + 1.0, p.y, p.z]))).unwrap();
    assert!((c.ate(&shifted, &gt, false).await.unwrap() - 1.0).abs() < 1e-9);
    assert!(c.ate(&shifted, &gt, true).await.unwrap() < 1e-9);
    let empty = Trajectory::new((200..210u64).map(|i| (i, [0.0, 0.0, i as f64]))).unwrap();
    assert!(c.ate(&empty, &gt, false).await.is_err());
}
