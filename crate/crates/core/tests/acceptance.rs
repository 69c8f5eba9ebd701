//! Acceptance gates. Each gate prints one `PASS`/`FAIL` line with its
//! measured value, tolerance and runtime; the test fails if any gate fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hgi_core::config::RunConfig;
use hgi_core::eval::{ate_rmse, precision_recall, Trajectory};
use hgi_core::geom::dedup_keypoints;
use hgi_core::ingest::featfile::{decode_features, encode_features};
use hgi_core::ingest::{
    read_feature_file, read_sequence, synth_loop_sequence, write_feature_file, FeatureFileError, Layout,
    SynthSpec,
};
use hgi_core::loopdet::{fuse, squash, ClosedPairs, KeyframeStore, LoopDetector};
use hgi_core::pipeline::{run_sequence, Backend};
use hgi_core::salient::{block_histograms, gradient_field, patch_weights, OrientationHistogram, BINS};
use hgi_core::vocab::{BowVector, FrameIndex, Vocabulary};
use hgi_core::{
    DedupParams, Descriptors, Family, FrameFeatures, FusionParams, GeomDescriptor, GradientField, Grid,
    Keypoint, SalDescriptor,
};

mod tol {
    pub const FUSE_ABS: f64 = 1e-6;
    pub const SAMPLING_TV: f64 = 0.01;
    pub const MASS_REL: f64 = 1e-6;
    pub const LINEARITY_ABS: f64 = 1e-9;
    pub const QUERY_DISTANCE_ABS: f64 = 1e-9;
    pub const MIN_PRECISION: f64 = 0.9;
    pub const MIN_RECALL: f64 = 0.8;
    pub const LABEL_TOL_FRAMES: u64 = 10;
    pub const ATE_ABS: f64 = 1e-6;
}

mod budget {
    use std::time::Duration;
    pub const FUSE: Duration = Duration::from_secs(1);
    pub const DEDUP: Duration = Duration::from_secs(10);
    pub const SAMPLING: Duration = Duration::from_secs(5);
    pub const DESCRIPTOR: Duration = Duration::from_secs(10);
    pub const RETRIEVAL: Duration = Duration::from_secs(30);
    pub const END_TO_END: Duration = Duration::from_secs(120);
    pub const ATE: Duration = Duration::from_secs(5);
}

/// Fused scores evaluated independently at 50 digits and rounded.
const FUSE_HALF_HALF: f64 = 0.8646647167633873;
const FUSE_ONE_POINT_TWO: f64 = 0.6399832190942006;
/// Earlier hand evaluation of `fuse(1.0, 0.2)`, which mis-evaluates
/// `squash(0.44)`. Reported, not gated.
const FUSE_ONE_POINT_TWO_BY_HAND: f64 = 0.640023;

struct Gate {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn gate(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Result<String, String>) -> Gate {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match out {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail.push_str(&format!("; over budget {b:?}"));
        }
    }
    Gate {
        name,
        pass,
        detail,
        elapsed,
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fuse_oracle() -> Result<String, String> {
    let p = FusionParams::default();
    let a = fuse(0.5, 0.5, &p);
    let b = fuse(1.0, 0.2, &p);
    check((a - FUSE_HALF_HALF).abs() <= tol::FUSE_ABS, || format!("fuse(0.5,0.5)={a}"))?;
    check((b - FUSE_ONE_POINT_TWO).abs() <= tol::FUSE_ABS, || format!("fuse(1.0,0.2)={b}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..50.0)).collect();
    xs.sort_by(f64::total_cmp);
    let ys: Vec<f64> = xs.iter().map(|&x| squash(x).unwrap()).collect();
    for (w, x) in ys.windows(2).zip(xs.windows(2)) {
        check(w[1] <= w[0], || format!("squash increases between {} and {}", x[0], x[1]))?;
    }
    Ok(format!(
        "fuse(0.5,0.5)={a:.9} fuse(1.0,0.2)={b:.9} (by hand {FUSE_ONE_POINT_TWO_BY_HAND}, off by {:.1e}) tol={:e}",
        (b - FUSE_ONE_POINT_TWO_BY_HAND).abs(),
        tol::FUSE_ABS
    ))
}

fn random_geometric(rng: &mut ChaCha8Rng, id: u64, max_kp: usize, dim: usize) -> FrameFeatures {
    let n = rng.gen_range(0..=max_kp);
    let span = rng.gen_range(8.0..80.0f32);
    let protos: Vec<Vec<f32>> = (0..rng.gen_range(1..4))
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let similar = rng.gen_range(0.0..1.0);
    let mut kps = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        kps.push(Keypoint::new(rng.gen_range(0.0..span), rng.gen_range(0.0..span)).unwrap());
        let row: Vec<f32> = if rng.gen_bool(0.03) {
            vec![0.0; dim]
        } else if rng.gen_bool(similar) {
            let p = &protos[rng.gen_range(0..protos.len())];
            p.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect()
        } else {
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        rows.push(GeomDescriptor::new(row).unwrap());
    }
    FrameFeatures::new(id, kps, Descriptors::Geometric { dim, rows }).unwrap()
}

fn brute_dedup(f: &FrameFeatures, t: f64, n: usize, s_min: f64) -> Vec<usize> {
    let kps = f.keypoints();
    let rows = f.descriptors().rows_f32();
    let cos = |a: &[f32], b: &[f32]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    };
    let mut keep = Vec::new();
    for i in 0..kps.len() {
        let mut members = Vec::new();
        for j in 0..kps.len() {
            let dx = f64::from(kps[i].x()) - f64::from(kps[j].x());
            let dy = f64::from(kps[i].y()) - f64::from(kps[j].y());
            if j != i && dx * dx + dy * dy < t {
                members.push(j);
            }
        }
        if members.len() <= n {
            keep.push(i);
            continue;
        }
        let mean = members.iter().map(|&j| cos(&rows[i], &rows[j])).sum::<f64>() / members.len() as f64;
        if mean <= s_min {
            keep.push(i);
        }
    }
    keep
}

fn dedup_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = DedupParams::default();
    let (mut total, mut kept) = (0, 0);
    for id in 0..200 {
        let f = random_geometric(&mut rng, id, 300, 16);
        let want = brute_dedup(&f, p.threshold(), p.max_neighbors(), p.s_min());
        let got = dedup_keypoints(&f, &p).map_err(|e| e.to_string())?;
        let expect = f.select(|i| want.binary_search(&i).is_ok());
        check(got == expect, || format!("frame {id}: {} kept, brute force kept {}", got.len(), want.len()))?;
        total += f.len();
        kept += got.len();
    }
    check(kept < total, || "fixture never triggers removal".into())?;
    Ok(format!("200 frames, {kept}/{total} keypoints kept, exact match"))
}

fn sampling_oracle() -> Result<String, String> {
    // 16x16 grid, four 8x8 patches with magnitude sums 64, 192, 0, 0.
    let (w, h) = (16, 16);
    let mag: Vec<f64> = (0..w * h)
        .map(|i| match ((i % w) / 8, (i / w) / 8) {
            (0, 0) => 1.0,
            (1, 0) => 3.0,
            _ => 0.0,
        })
        .collect();
    let grad = GradientField::new(w, h, mag, vec![0.0; w * h]).map_err(|e| e.to_string())?;
    let table = patch_weights(&grad).map_err(|e| e.to_string())?;
    let expected = [0.25, 0.75, 0.0, 0.0];
    check(table.probabilities == expected, || format!("P = {:?}", table.probabilities))?;
    let sampler = table.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draws = 100_000;
    let mut counts = [0u64; 4];
    for _ in 0..draws {
        counts[sampler.draw(&mut rng)] += 1;
    }
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(expected)
            .map(|(&c, p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>();
    check(tv < tol::SAMPLING_TV, || format!("TV={tv} counts={counts:?}"))?;
    Ok(format!("TV={tv:.5} < {} over {draws} draws, counts={counts:?}", tol::SAMPLING_TV))
}

fn descriptor_contract() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (w, h) = (96, 72);
    let image = Grid::from_fn(w, h, |x, y| {
        ((x as f64 * 0.37).sin() * 60.0 + (y as f64 * 0.21).cos() * 50.0 + ((x * 7 + y * 13) % 17) as f64 * 4.0) + 120.0
    });
    let extractor = hgi_core::salient::DescriptorExtractor::new(&image).map_err(|e| e.to_string())?;
    let grad = extractor.gradient();
    let mut worst_mass = 0.0f64;
    for _ in 0..1000 {
        let k = Keypoint::new(rng.gen_range(0.0..(w - 1) as f32), rng.gen_range(0.0..(h - 1) as f32)).unwrap();
        let d: SalDescriptor = extractor.describe(&k).map_err(|e| e.to_string())?;
        check(d.bytes().len() == 128, || "descriptor length".into())?;
        check(SalDescriptor::from_slice(d.bytes()).is_ok(), || "byte range".into())?;
        let (cx, cy) = (k.x().round() as isize, k.y().round() as isize);
        let hist_mass: f64 = block_histograms(grad, cx, cy).iter().map(|b| b.mass()).sum();
        let mut region_mass = 0.0;
        for y in cy - 8..cy + 8 {
            for x in cx - 8..cx + 8 {
                region_mass += grad.at_clamped(x, y).0;
            }
        }
        let rel = (hist_mass - region_mass).abs() / region_mass.max(f64::MIN_POSITIVE);
        worst_mass = worst_mass.max(rel);
    }
    check(worst_mass <= tol::MASS_REL, || format!("histogram mass off by {worst_mass:e} relative"))?;

    let mut worst_lin = 0.0f64;
    let random_hist = |rng: &mut ChaCha8Rng| OrientationHistogram {
        bins: std::array::from_fn(|_| rng.gen_range(0.0..100.0)),
    };
    for _ in 0..1000 {
        let (h1, h2) = (random_hist(&mut rng), random_hist(&mut rng));
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let mix = OrientationHistogram {
            bins: std::array::from_fn(|i| a * h1.bins[i] + b * h2.bins[i]),
        };
        let (s1, s2, sm) = (h1.smoothed(0.3), h2.smoothed(0.3), mix.smoothed(0.3));
        for i in 0..BINS {
            worst_lin = worst_lin.max((sm.bins[i] - (a * s1.bins[i] + b * s2.bins[i])).abs());
        }
    }
    check(worst_lin <= tol::LINEARITY_ABS, || format!("smoothing linearity off by {worst_lin:e}"))?;
    Ok(format!(
        "1000 keypoints; mass rel err {worst_mass:.1e} <= {:e}; linearity err {worst_lin:.1e} <= {:e}",
        tol::MASS_REL,
        tol::LINEARITY_ABS
    ))
}

fn retrieval_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let dim = 16;
    let centers: Vec<Vec<f32>> = (0..40).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let frames: Vec<Vec<Vec<f32>>> = (0..500)
        .map(|_| {
            (0..rng.gen_range(5..30))
                .map(|_| {
                    let c = &centers[rng.gen_range(0..centers.len())];
                    c.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect()
                })
                .collect()
        })
        .collect();
    let vocab = Vocabulary::train(Family::Geometric, &frames, 10, 3, 5).map_err(|e| e.to_string())?;
    let bows: Vec<BowVector> = frames.iter().map(|f| vocab.quantize_rows(f)).collect();
    let mut index = FrameIndex::new();
    for (id, b) in bows.iter().enumerate() {
        index.insert(id as u64, b.clone()).map_err(|e| e.to_string())?;
    }
    let dense = |b: &BowVector| b.entries().iter().copied().collect::<BTreeMap<u32, f64>>();
    let l1 = |a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>| {
        let words: std::collections::BTreeSet<u32> = a.keys().chain(b.keys()).copied().collect();
        words
            .iter()
            .map(|w| (a.get(w).unwrap_or(&0.0) - b.get(w).unwrap_or(&0.0)).abs())
            .sum::<f64>()
    };
    let stored: Vec<BTreeMap<u32, f64>> = bows.iter().map(dense).collect();
    for _ in 0..100 {
        let q_rows: Vec<Vec<f32>> = frames[rng.gen_range(0..frames.len())]
            .iter()
            .map(|r| r.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect())
            .collect();
        let q = vocab.quantize_rows(&q_rows);
        let qd = dense(&q);
        let at = rng.gen_range(0..500u64);
        let gap = rng.gen_range(0..20u64);
        let mut best: Option<(u64, f64)> = None;
        for (id, s) in stored.iter().enumerate() {
            let id = id as u64;
            if id.abs_diff(at) < gap {
                continue;
            }
            let d = l1(&qd, s);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        let got = index.query(&q, at, gap).map(|h| (h.frame_id, h.distance));
        match (got, best) {
            (Some((gf, gd)), Some((bf, bd))) => check(gf == bf && (gd - bd).abs() <= tol::QUERY_DISTANCE_ABS, || {
                format!("query at {at}: index ({gf}, {gd}) vs scan ({bf}, {bd})")
            })?,
            (None, None) => {}
            (g, b) => return Err(format!("query at {at}: index {g:?} vs scan {b:?}")),
        }
    }
    Ok(format!("500 frames, 100 queries, {} words, exact match", vocab.word_count()))
}

fn end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec::default();
    check(spec.length == 300 && spec.loops.len() == 3, || "synth defaults changed".into())?;
    let seq = synth_loop_sequence(&spec, dir.path()).map_err(|e| e.to_string())?;
    let manifest = read_sequence(dir.path(), Layout::KittiLike).map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_json(r#"{"vocab": {"salient": {"L": 2}}}"#).map_err(|e| e.to_string())?;
    check(cfg.fusion == FusionParams::default(), || "fusion params".into())?;
    let run = run_sequence(&manifest, Backend::Fallback, &dir.path().join("work"), &cfg).map_err(|e| e.to_string())?;
    let pairs: Vec<(u64, u64)> = run
        .detect
        .detections
        .iter()
        .map(|d| (d.query_frame, d.candidate_frame))
        .collect();
    let c = precision_recall(&pairs, &seq.labels, tol::LABEL_TOL_FRAMES);
    let (p, r) = (c.precision(), c.recall());
    let detail = format!(
        "P={p:.3} (>= {}) R={r:.3} (>= {}) tp={} fp={} fn={} labels={} detections={:?}",
        tol::MIN_PRECISION,
        tol::MIN_RECALL,
        c.tp,
        c.fp,
        c.fn_,
        seq.labels.len(),
        pairs
    );
    check(p >= tol::MIN_PRECISION && r >= tol::MIN_RECALL, || detail.clone())?;
    Ok(detail)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> nalgebra::Rotation3<f64> {
    let axis = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = nalgebra::Unit::new_normalize(axis + nalgebra::Vector3::new(1e-3, 0.0, 0.0));
    nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(-3.1..3.1))
}

fn ate_oracle() -> Result<String, String> {
    let gt = Trajectory::new((0..50u64).map(|i| {
        let t = i as f64 * 0.2;
        (i, [t.cos() * 5.0, t.sin() * 3.0, 0.1 * t])
    }))
    .map_err(|e| e.to_string())?;
    let shifted = Trajectory::new(gt.iter().map(|(id, p)| (id, [p.x + 1.0, p.y, p.z]))).map_err(|e| e.to_string())?;
    let a = ate_rmse(&gt, &gt, true).map_err(|e| e.to_string())?;
    let b = ate_rmse(&shifted, &gt, false).map_err(|e| e.to_string())?;
    let c = ate_rmse(&shifted, &gt, true).map_err(|e| e.to_string())?;
    check(a.abs() <= tol::ATE_ABS, || format!("identity ATE {a}"))?;
    check((b - 1.0).abs() <= tol::ATE_ABS, || format!("offset ATE {b}"))?;
    check(c.abs() <= tol::ATE_ABS, || format!("aligned offset ATE {c}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let noisy = Trajectory::new(gt.iter().map(|(id, p)| {
            (id, [p.x + rng.gen_range(-0.1..0.1), p.y + rng.gen_range(-0.1..0.1), p.z + rng.gen_range(-0.1..0.1)])
        }))
        .map_err(|e| e.to_string())?;
        let base = ate_rmse(&noisy, &gt, true).map_err(|e| e.to_string())?;
        let rot = random_rotation(&mut rng);
        let scale = rng.gen_range(0.2..5.0);
        let shift = nalgebra::Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let moved = Trajectory::new(noisy.iter().map(|(id, p)| {
            let q = rot * p * scale + shift;
            (id, [q.x, q.y, q.z])
        }))
        .map_err(|e| e.to_string())?;
        let after = ate_rmse(&moved, &gt, true).map_err(|e| e.to_string())?;
        worst = worst.max((after - base).abs());
    }
    check(worst <= tol::ATE_ABS, || format!("Sim(3) invariance off by {worst:e}"))?;
    Ok(format!("0 / {b:.9} / {c:.1e} m; invariance err {worst:.1e} <= {:e} over 100 transforms", tol::ATE_ABS))
}

fn random_features(rng: &mut ChaCha8Rng, id: u64) -> FrameFeatures {
    let n = rng.gen_range(0..60);
    let kps: Vec<Keypoint> = (0..n)
        .map(|_| Keypoint::new(rng.gen_range(0.0..1e4), rng.gen_range(0.0..1e4)).unwrap())
        .collect();
    if rng.gen_bool(0.5) {
        let dim = rng.gen_range(1..300);
        let rows = (0..n)
            .map(|_| GeomDescriptor::new((0..dim).map(|_| rng.gen_range(-1e3..1e3)).collect()).unwrap())
            .collect();
        FrameFeatures::new(id, kps, Descriptors::Geometric { dim, rows }).unwrap()
    } else {
        let rows = (0..n)
            .map(|_| SalDescriptor::from_bytes(std::array::from_fn(|_| rng.gen())))
            .collect();
        FrameFeatures::new(id, kps, Descriptors::Salient(rows)).unwrap()
    }
}

fn format_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for i in 0..100 {
        let id = rng.gen();
        let f = random_features(&mut rng, id);
        let path = dir.path().join(format!("{i}.hgif"));
        write_feature_file(&path, &f).map_err(|e| e.to_string())?;
        let back = read_feature_file(&path).map_err(|e| e.to_string())?;
        check(back == f && encode_features(&back) == encode_features(&f), || format!("frame {i} changed"))?;
    }

    let good = encode_features(&random_features(&mut ChaCha8Rng::seed_from_u64(3), 9));
    let patched = |at: usize, bytes: &[u8]| {
        let mut b = good.clone();
        b[at..at + bytes.len()].copy_from_slice(bytes);
        b
    };
    type Class = fn(&FeatureFileError) -> bool;
    let cases: Vec<(&str, Vec<u8>, Class)> = vec![
        ("bad magic", patched(0, b"XGIF"), |e| matches!(e, FeatureFileError::BadMagic(_))),
        ("version", patched(4, &2u32.to_le_bytes()), |e| matches!(e, FeatureFileError::UnsupportedVersion(2))),
        ("short header", good[..10].to_vec(), |e| matches!(e, FeatureFileError::TruncatedHeader(10))),
        ("family", patched(8, &[7]), |e| matches!(e, FeatureFileError::BadFamily(7))),
        ("element type", patched(25, &[9]), |e| matches!(e, FeatureFileError::BadElementType(9))),
        ("family/type", patched(25, &[good[25] ^ 1]), |e| matches!(e, FeatureFileError::Layout { .. })),
        ("truncated body", good[..good.len() - 1].to_vec(), |e| matches!(e, FeatureFileError::Size { .. })),
        ("count", patched(17, &u32::MAX.to_le_bytes()), |e| matches!(e, FeatureFileError::Size { .. })),
    ];
    for (name, bytes, class) in &cases {
        match decode_features(bytes) {
            Err(e) if class(&e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }
    Ok(format!("100 frames bit-exact; {} corrupted fixtures rejected by class", cases.len()))
}

fn gating() -> Result<String, String> {
    let p = FusionParams::default();
    let bow_s = BowVector::from_weights([(1, 0.5), (4, 0.25), (9, 0.25)]);
    let bow_g = BowVector::from_weights([(2, 0.6), (3, 0.4)]);

    let run = |gap: u64| {
        let mut det = LoopDetector::new(p);
        det.process(0, &bow_s, &bow_g).unwrap();
        det.process(gap, &bow_s, &bow_g).unwrap().detection
    };
    check(run(5).is_none(), || "duplicate at gap 5 was reported".into())?;
    let hit = run(11).ok_or("duplicate at gap 11 was not reported")?;
    check(hit.score.s == 1.0 && hit.candidate_frame == 0, || format!("gap 11: {hit:?}"))?;

    let mut store = KeyframeStore::new();
    store.insert(0, bow_s.clone(), bow_g.clone()).unwrap();
    let mut closed = ClosedPairs::new();
    let first = hgi_core::loopdet::detect(20, &bow_s, &bow_g, &store, &p, &mut closed);
    let again = hgi_core::loopdet::detect(20, &bow_s, &bow_g, &store, &p, &mut closed);
    let nearby = hgi_core::loopdet::detect(25, &bow_s, &bow_g, &store, &p, &mut closed);
    check(first.is_some() && again.is_none() && nearby.is_none(), || {
        format!("closed pair: {first:?} / {again:?} / {nearby:?}")
    })?;
    Ok("gap 5 -> none; gap 11 -> s=1.0; closed pair suppressed".into())
}

#[test]
fn acceptance() {
    let gates = vec![
        gate("fusion oracle", Some(budget::FUSE), fuse_oracle),
        gate("dedup oracle", Some(budget::DEDUP), dedup_oracle),
        gate("sampling correctness", Some(budget::SAMPLING), sampling_oracle),
        gate("descriptor contract", Some(budget::DESCRIPTOR), descriptor_contract),
        gate("bow retrieval oracle", Some(budget::RETRIEVAL), retrieval_oracle),
        gate("end-to-end planted loops", Some(budget::END_TO_END), end_to_end),
        gate("ate oracle", Some(budget::ATE), ate_oracle),
        gate("format round-trip", None, format_round_trip),
        gate("gating", None, gating),
    ];
    for g in &gates {
        println!(
            "{} {:<26} {:>9.3}s  {}",
            if g.pass { "PASS" } else { "FAIL" },
            g.name,
            g.elapsed.as_secs_f64(),
            g.detail
        );
    }
    let failed: Vec<&str> = gates.iter().filter(|g| !g.pass).map(|g| g.name).collect();
    assert!(failed.is_empty(), "failed gates: {failed:?}");
}

#[test]
fn gradient_of_ramp_feeds_uniform_patches() {
    let ramp = Grid::from_fn(32, 16, |x, _| x as f64);
    let table = patch_weights(&gradient_field(&ramp).unwrap()).unwrap();
    assert_eq!(table.len(), 8);
    assert!(table.probabilities.iter().all(|&p| (p - 0.125).abs() < 1e-12));
}
