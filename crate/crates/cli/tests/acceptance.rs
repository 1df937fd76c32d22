//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p til-cli --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Result};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use til_core::annotation::{
    assemble_mixture, harvest_semi_auto, manifest_stats, sampler_registry, split_by_patient, AnnotationManifest,
    AnnotationSource, HarvestRequest, Label, MixturePolicy, PatchRecord, SampleCount, Split,
};
use til_core::calibration::{apply_threshold, auc, calibrate, youden_threshold, EqualErrorRate, ScoredSet};
use til_core::evaluation::{
    evaluate_scored, patch_metrics, region_count, region_distribution, scores_from_maps, F1Mode, ModelScores,
    RegionRecord, TilLevel,
};
use til_core::inference::{infer_map, InferOptions, PatchScorer};
use til_core::synthetic::{random_layout, synthetic_region, synthetic_slide, SlideSpec, SyntheticSlide, REGION_PX};
use til_core::tiling::{build_grid, patch_file_name, write_tiles, InMemorySource, PatchImage, SlideRef};
use til_core::tilmap::{
    import_grayscale_map, read_map, read_probability_map, write_binary_map, write_map, AnyMap, GrayscaleImportMeta,
    TilMap,
};
use til_core::{CancerType, TilError};
use til_model::data::Dataset;
use til_model::network::bce_with_logits;
use til_model::tensor::{Shape, Tensor};
use til_model::{train_on, Architecture, AugmentationConfig, ModelConfig, Network, TrainedModel};
use til_review::store::{FaultPoint, SessionStatus};
use til_review::{router, Store, StoreConfig};

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<String>) {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(anyhow!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        let ok = outcome.is_ok();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.2}s)"),
            Err(e) => println!("FAIL {name}: {e:#} ({secs:.2}s)"),
        }
        self.results.push((name.to_string(), ok));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Grid arithmetic ----------------------------------------------------------

fn slide_ref(id: &str, w: u32, h: u32) -> SlideRef {
    SlideRef {
        slide_id: id.into(),
        patient_id: id.into(),
        cancer_type: CancerType::Luad,
        width_px: w,
        height_px: h,
        magnification: 20.0,
        microns_per_pixel: 0.5,
        pixel_source: String::new(),
    }
}

fn grid_arithmetic() -> Result<String> {
    let mut r = rng(1);
    let t0 = Instant::now();
    let mut empty = 0;
    for _ in 0..500 {
        let (w, h, p) = (r.random_range(1..200_000u32), r.random_range(1..200_000u32), r.random_range(1..2_000u32));
        let (cols, rows) = (w / p, h / p);
        match build_grid(&slide_ref("s", w, h), p) {
            Ok(g) => ensure!((g.n_cols, g.n_rows) == (cols, rows), "{w}x{h}/{p}: got {}x{}", g.n_cols, g.n_rows),
            Err(TilError::EmptyGrid { .. }) if cols == 0 || rows == 0 => empty += 1,
            Err(e) => return Err(anyhow!("{w}x{h}/{p}: {e}")),
        }
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("500 triples match floor division ({empty} empty grids rejected) in {elapsed:?}"))
}

// Calibration oracles -------------------------------------------------------

fn random_scored_set(r: &mut ChaCha8Rng, max_len: usize) -> ScoredSet {
    let n = r.random_range(2..=max_len);
    let coarse = r.random_bool(0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| if coarse { r.random_range(0..=20u32) as f64 / 20.0 } else { r.random::<f64>() })
        .collect();
    ScoredSet::new(scores, labels).unwrap()
}

/// Scans 0, 1 and every score; keeps the first (smallest) threshold on ties.
fn oracle_eer_threshold(s: &ScoredSet) -> f64 {
    let mut cands: Vec<f64> = s.scores().to_vec();
    cands.extend([0.0, 1.0]);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let (p, n) = (s.positives() as i128, s.negatives() as i128);
    let mut best: Option<(i128, f64)> = None;
    for t in cands {
        let (mut fp, mut fn_) = (0i128, 0i128);
        for (&x, &y) in s.scores().iter().zip(s.labels()) {
            match (x >= t, y) {
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let gap = (fp * p - fn_ * n).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, t));
        }
    }
    best.unwrap().1
}

fn oracle_auc(s: &ScoredSet) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (&xp, &yp) in s.scores().iter().zip(s.labels()) {
        for (&xn, &yn) in s.scores().iter().zip(s.labels()) {
            if yp && !yn {
                pairs += 1.0;
                if xp > xn {
                    wins += 1.0;
                } else if xp == xn {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn youden_oracle() -> Result<String> {
    let mut r = rng(2);
    let t0 = Instant::now();
    let mut ties = 0;
    for i in 0..1000 {
        let s = random_scored_set(&mut r, 200);
        let distinct: HashSet<u64> = s.scores().iter().map(|x| x.to_bits()).collect();
        if distinct.len() < s.len() {
            ties += 1;
        }
        let got = youden_threshold(&s)?.chosen_threshold;
        let want = oracle_eer_threshold(&s);
        ensure!(got == want, "set {i}: threshold {got} vs exhaustive {want}");
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("1000 sets ({ties} with tied scores) match the exhaustive scan in {elapsed:?}"))
}

fn auc_oracle() -> Result<String> {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let s = random_scored_set(&mut r, 200);
        let d = (auc(&s)? - oracle_auc(&s)).abs();
        ensure!(d <= 1e-12, "set {i}: |rank - pairwise| = {d:e}");
        worst = worst.max(d);
    }
    Ok(format!("1000 sets, max deviation {worst:e}"))
}

// Maps ----------------------------------------------------------------------

fn random_map(r: &mut ChaCha8Rng, max_side: u32, id: &str) -> TilMap {
    let (c, w) = (r.random_range(1..=max_side), r.random_range(1..=max_side));
    let n = (c * w) as usize;
    let coarse = r.random_bool(0.5);
    let mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.1)).collect();
    let probs = mask
        .iter()
        .map(|&m| match (m, coarse) {
            (true, _) => 0.0,
            (false, true) => r.random_range(0..=10u32) as f64 / 10.0,
            (false, false) => r.random::<f64>(),
        })
        .collect();
    let ct = CancerType::ALL[r.random_range(0..12)];
    TilMap::new(id, 100, c, w, probs, "model")
        .unwrap()
        .with_slide_meta(format!("{id}-patient"), ct)
        .with_mask(mask)
        .unwrap()
}

fn threshold_monotonicity() -> Result<String> {
    let mut r = rng(4);
    for i in 0..100 {
        let map = random_map(&mut r, 60, "m");
        let mut ts: Vec<f64> = (0..20).map(|_| r.random::<f64>()).collect();
        ts.sort_by(|a, b| b.total_cmp(a));
        let mut prev = 0;
        for &t in &ts {
            let count = map.threshold(t)?.positive_count();
            ensure!(count == map.positive_count(t)?, "map {i}: binary and direct counts differ at {t}");
            ensure!(count >= prev, "map {i}: count fell from {prev} to {count} at t={t}");
            prev = count;
        }
    }
    let crafted = TilMap::new("c", 100, 5, 1, vec![0.0, 0.3, 0.5, 0.7, 1.0], "m")?;
    let cells = |t: f64| -> Result<Vec<bool>> { Ok(crafted.threshold(t)?.cells) };
    ensure!(cells(0.5)? == [false, false, true, true, true], "score == t must be positive");
    ensure!(cells(0.7)? == [false, false, false, true, true]);
    ensure!(cells(0.0)? == [true; 5], "t = 0 labels every cell positive");
    ensure!(cells(1.0)? == [false, false, false, false, true], "t = 1 keeps only p = 1");
    ensure!(apply_threshold(&[0.5], 0.5)? == [true]);
    ensure!(crafted.threshold(1.5).is_err() && crafted.threshold(-0.1).is_err());
    Ok("100 maps x 20 descending thresholds non-decreasing; boundary cells positive".into())
}

fn map_round_trip() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let mut r = rng(11);
    let mut thresholds_checked = 0;
    for i in 0..100 {
        let map = random_map(&mut r, 40, &format!("slide-{i}"));
        let path = dir.path().join(format!("{i}.tilmap"));
        write_map(&map, &path)?;
        let back = read_probability_map(&path)?;
        let worst = map.probs().iter().zip(back.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(worst <= 1e-6, "map {i}: probability drift {worst:e}");
        ensure!(back.mask() == map.mask(), "map {i}: mask changed");
        ensure!((back.n_cols, back.n_rows, back.patch_px) == (map.n_cols, map.n_rows, map.patch_px));
        let mut ts: Vec<f64> = map.probs().to_vec();
        ts.extend([0.0, 1.0]);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        for &t in &ts {
            ensure!(
                apply_threshold(map.probs(), t)? == apply_threshold(back.probs(), t)?,
                "map {i}: decisions differ at {t}"
            );
            thresholds_checked += 1;
        }
        let t = ts[r.random_range(0..ts.len())];
        let binary = map.threshold(t)?;
        let bpath = dir.path().join(format!("{i}.bin.tilmap"));
        write_binary_map(&binary, &bpath)?;
        match read_map(&bpath)? {
            AnyMap::Binary(b) => ensure!(b == binary, "map {i}: binary map changed"),
            AnyMap::Probability(_) => return Err(anyhow!("map {i}: binary map read back as probabilities")),
        }
    }

    let png = dir.path().join("gray.png");
    image::GrayImage::from_raw(3, 1, vec![0, 127, 255]).unwrap().save(&png)?;
    let meta = GrayscaleImportMeta {
        slide_id: "gray".into(),
        patch_px: 100,
        model_id: "imported".into(),
        channel: None,
    };
    let g = import_grayscale_map(&png, &meta)?;
    let p = g.probs();
    ensure!(p[0] == 0.0 && p[2] == 1.0, "gray 0/255 imported as {}/{}", p[0], p[2]);
    ensure!((p[1] - 0.4980).abs() <= 1e-4, "gray 127 imported as {}", p[1]);
    Ok(format!("100 maps exact at {thresholds_checked} thresholds; gray {{0,127,255}} -> {:?}", p))
}

// Annotations ---------------------------------------------------------------

fn record(slide: &str, ct: CancerType, x: u32, positive: bool, source: AnnotationSource) -> PatchRecord {
    PatchRecord {
        slide_id: slide.into(),
        patient_id: format!("{slide}-p"),
        cancer_type: ct,
        grid_x: x,
        grid_y: 0,
        label: Label::from_positive(positive),
        source,
        origin_threshold: (source == AnnotationSource::SemiAuto).then_some(0.5),
        patch_uri: patch_file_name(slide, x, 0),
    }
}

fn random_records(r: &mut ChaCha8Rng, source: AnnotationSource) -> Vec<PatchRecord> {
    let mut out = Vec::new();
    for ct in CancerType::ALL {
        if r.random_bool(0.4) {
            continue;
        }
        for s in 0..r.random_range(1..3) {
            let slide = format!("{}-{s}", ct.code());
            let start = r.random_range(0..5);
            for x in start..start + r.random_range(0..8) {
                out.push(record(&slide, ct, x, r.random_bool(0.4), source));
            }
        }
    }
    out
}

fn mixture_policy() -> Result<String> {
    let mut r = rng(5);
    let policy = MixturePolicy::default();
    ensure!(policy.excluded_types.contains(&CancerType::Blca));
    for trial in 0..1000 {
        let manual = AnnotationManifest::new("m", Split::Train, random_records(&mut r, AnnotationSource::Manual))?;
        let semi = AnnotationManifest::new("s", Split::Train, random_records(&mut r, AnnotationSource::SemiAuto))?;
        let out = assemble_mixture(&manual, &semi, &policy)?;
        for rec in out.records() {
            ensure!(rec.cancer_type != CancerType::Blca, "trial {trial}: BLCA record kept");
            let allowed = match rec.source {
                AnnotationSource::Manual => &policy.manual_types,
                AnnotationSource::SemiAuto => &policy.semi_types,
            };
            ensure!(allowed.contains(&rec.cancer_type), "trial {trial}: {:?} record for {}", rec.source, rec.cancer_type);
        }
        let kept_manual = manual.records().iter().filter(|x| policy.manual_types.contains(&x.cancer_type)).count();
        let kept_semi = semi.records().iter().filter(|x| policy.semi_types.contains(&x.cancer_type)).count();
        ensure!(out.len() == kept_manual + kept_semi, "trial {trial}: {} records, expected {}", out.len(), kept_manual + kept_semi);
    }

    // 86,154 manual patches over the seven manual types (21,773 positive).
    let manual_sizes = [
        (CancerType::Brca, 2_900),
        (CancerType::Coad, 4_000),
        (CancerType::Luad, 32_000),
        (CancerType::Paad, 1_900),
        (CancerType::Prad, 5_500),
        (CancerType::Skcm, 34_000),
        (CancerType::Ucec, 5_854),
    ];
    let mut manual = Vec::new();
    for (ct, n) in manual_sizes {
        for x in 0..n {
            let positive = manual.len() < 21_773;
            manual.push(record(ct.code(), ct, x, positive, AnnotationSource::Manual));
        }
    }
    let mut semi = Vec::new();
    let semi_sizes = [
        (CancerType::Cesc, 17_250),
        (CancerType::Lusc, 17_250),
        (CancerType::Read, 17_250),
        (CancerType::Stad, 17_250),
        (CancerType::Blca, 5_000),
        (CancerType::Luad, 10_000),
    ];
    for (ct, n) in semi_sizes {
        for x in 0..n {
            semi.push(record(&format!("{}-semi", ct.code()), ct, x, x % 3 == 0, AnnotationSource::SemiAuto));
        }
    }
    let manual = AnnotationManifest::new("manual", Split::Train, manual)?;
    let semi = AnnotationManifest::new("semi", Split::Train, semi)?;
    let mixed = assemble_mixture(&manual, &semi, &policy)?;
    let s = manifest_stats(&mixed);
    let manual_pos = mixed.records().iter().filter(|x| x.source == AnnotationSource::Manual && x.label.is_positive()).count();
    ensure!(s.manual == 86_154, "manual {}", s.manual);
    ensure!(manual_pos == 21_773 && s.manual - manual_pos == 64_381, "manual labels {manual_pos}+/{}-", s.manual - manual_pos);
    ensure!(s.semi_auto == 69_000, "semi {}", s.semi_auto);
    ensure!(s.total == 155_154, "total {}", s.total);
    ensure!(!s.per_cancer_type.contains_key(&CancerType::Blca), "BLCA present");
    Ok(format!("1000/1000 trials sound; fixture -> {} manual + {} semi = {}", s.manual, s.semi_auto, s.total))
}

fn harvest_consistency() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let registry = sampler_registry();
    let mut r = rng(6);
    let mut total = 0;
    for i in 0..60 {
        let map = random_map(&mut r, 50, &format!("h{i}"));
        let t = if i % 3 == 0 {
            map.probs()[r.random_range(0..map.n_cells())]
        } else {
            r.random::<f64>()
        };
        let n = if r.random_bool(0.3) { SampleCount::All } else { SampleCount::Count(r.random_range(1..300)) };
        let name = if i % 2 == 0 { "uniform" } else { "stratified" };
        let sampler = registry.get(name)?;
        let seed = r.random::<u64>();
        let req = HarvestRequest {
            threshold: t,
            n_samples: n,
            seed,
            sampler: sampler.as_ref(),
            patch_root: Some("tiles"),
        };
        let recs = harvest_semi_auto(&map, &req)?;
        let unmasked = map.mask().iter().filter(|&&m| !m).count();
        let expected = match n {
            SampleCount::All => unmasked,
            SampleCount::Count(k) => k.min(unmasked),
        };
        ensure!(recs.len() == expected, "map {i}: {} records, expected {expected}", recs.len());
        for rec in &recs {
            ensure!(rec.source == AnnotationSource::SemiAuto && rec.origin_threshold == Some(t));
            ensure!(!map.is_masked(rec.grid_x, rec.grid_y), "map {i}: masked cell harvested");
            let p = map.prob(rec.grid_x, rec.grid_y);
            ensure!(rec.label.is_positive() == (p >= t), "map {i}: ({}, {}) p={p} t={t} labelled {:?}", rec.grid_x, rec.grid_y, rec.label);
        }
        let a = AnnotationManifest::new("a", Split::Train, recs)?;
        let b = AnnotationManifest::new("a", Split::Train, harvest_semi_auto(&map, &req)?)?;
        let (pa, pb) = (dir.path().join(format!("{i}a.jsonl")), dir.path().join(format!("{i}b.jsonl")));
        a.write_jsonl(&pa)?;
        b.write_jsonl(&pb)?;
        ensure!(std::fs::read(&pa)? == std::fs::read(&pb)?, "map {i}: reruns differ");
        total += a.len();
    }
    Ok(format!("{total} records over 60 maps re-derive their labels; reruns byte-identical"))
}

fn patient_disjointness() -> Result<String> {
    let mut r = rng(7);
    for trial in 0..200 {
        let n_patients = r.random_range(2..40);
        let mut records = Vec::new();
        for p in 0..n_patients {
            let ct = CancerType::ALL[r.random_range(0..12)];
            for s in 0..r.random_range(1..3) {
                for x in 0..r.random_range(1..6) {
                    let mut rec = record(&format!("p{p}-s{s}"), ct, x, r.random_bool(0.5), AnnotationSource::Manual);
                    rec.patient_id = format!("patient-{p}");
                    records.push(rec);
                }
            }
        }
        let total = records.len();
        let m = AnnotationManifest::new("all", Split::Train, records)?;
        let frac = r.random_range(0.05..0.95);
        let (train, test) = split_by_patient(&[m], frac, r.random())?;
        let shared: Vec<_> = train.patient_ids().intersection(&test.patient_ids()).map(|s| s.to_string()).collect();
        ensure!(shared.is_empty(), "trial {trial}: patients in both sides: {shared:?}");
        ensure!(train.len() + test.len() == total, "trial {trial}: records lost");
        ensure!(!train.is_empty() && !test.is_empty(), "trial {trial}: empty side");
    }
    Ok("200 random splits with disjoint patients".into())
}

// Model ---------------------------------------------------------------------

fn gradient_check() -> Result<String> {
    let mut r = rng(8);
    let mut net = Network::<f64>::new(Architecture::CompactRef);
    net.init(5);
    let shape = Shape::new(3, 64, 64);
    let x = Tensor::from_vec(4, shape, (0..4 * shape.len()).map(|_| r.random_range(-0.5..0.5)).collect());
    let y = [true, false, true, false];
    let loss = |net: &mut Network<f64>| bce_with_logits(&net.logits(x.clone(), false), &y).0;

    net.zero_grad();
    let (_, g) = bce_with_logits(&net.logits(x.clone(), true), &y);
    net.backward(&g);
    let mut picks = Vec::new();
    net.visit_params(&mut |name, p| {
        for _ in 0..8 {
            let i = r.random_range(0..p.value.len());
            picks.push((name.to_string(), i, p.grad[i]));
        }
    });

    let eps = 1e-5;
    let (mut checked, mut worst) = (0, 0.0f64);
    for (name, i, analytic) in picks {
        let nudge = |net: &mut Network<f64>, d: f64| {
            net.visit_params(&mut |n, p| {
                if n == name {
                    p.value[i] += d;
                }
            })
        };
        nudge(&mut net, eps);
        let up = loss(&mut net);
        nudge(&mut net, -2.0 * eps);
        let down = loss(&mut net);
        nudge(&mut net, eps);
        let numeric = (up - down) / (2.0 * eps);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-9 {
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        ensure!(rel < 1e-3, "{name}[{i}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
        worst = worst.max(rel);
        checked += 1;
    }
    ensure!(checked >= 30, "only {checked} weights had a usable gradient");
    Ok(format!("{checked} COMPACT_REF weights, max relative error {worst:.2e}"))
}

// Synthetic end-to-end ------------------------------------------------------

const CELLS: u32 = 8;
const PATCH_PX: u32 = 100;

struct EndToEnd {
    model: TrainedModel,
    threshold: f64,
}

fn make_slide(i: u32, seed: u64) -> SyntheticSlide {
    let id = format!("e2e-{i:02}");
    let layout = random_layout(CELLS, CELLS, 0.5, seed);
    let spec = SlideSpec {
        slide_id: &id,
        patient_id: &id,
        cancer_type: CancerType::ALL[i as usize % 12],
        n_cols: CELLS,
        n_rows: CELLS,
        patch_px: PATCH_PX,
        seed: seed ^ 0xabc,
    };
    synthetic_slide(&spec, |x, y| layout[(y * CELLS + x) as usize])
}

/// Tiles slides into `dir/tiles` and writes their ground truth as a manifest.
fn tile_and_label(dir: &Path, name: &str, split: Split, slides: &[SyntheticSlide]) -> Result<AnnotationManifest> {
    let mut records = Vec::new();
    for s in slides {
        let summary = write_tiles(&s.slide, &InMemorySource::new(s.image.clone()), PATCH_PX, &dir.join("tiles"), None)?;
        ensure!(summary.written == (CELLS * CELLS) as usize);
        for (gx, gy) in summary.grid.cells() {
            let mut rec = record(&s.slide.slide_id, s.slide.cancer_type, gx, s.is_positive(gx, gy), AnnotationSource::Manual);
            rec.grid_y = gy;
            rec.patient_id = s.slide.patient_id.clone();
            rec.patch_uri = format!("tiles/{}", patch_file_name(&s.slide.slide_id, gx, gy));
            records.push(rec);
        }
    }
    let path = dir.join(format!("{name}.jsonl"));
    AnnotationManifest::new(name, split, records)?.write_jsonl(&path)?;
    Ok(AnnotationManifest::read_jsonl(&path, split)?)
}

fn end_to_end(out: &mut Option<EndToEnd>) -> Result<String> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir()?;
    let slides: Vec<SyntheticSlide> = (0..10).map(|i| make_slide(i, 100 + u64::from(i))).collect();
    let (train_slides, rest) = slides.split_at(6);
    let (val_slides, test_slides) = rest.split_at(2);

    let train_m = tile_and_label(dir.path(), "train", Split::Train, train_slides)?;
    let val_m = tile_and_label(dir.path(), "validation", Split::Validation, val_slides)?;
    let train_data = Dataset::from_manifest(&train_m)?;
    let val_data = Dataset::from_manifest(&val_m)?;

    let config = ModelConfig {
        batch_size: 16,
        max_steps: Some(600),
        learning_rate: 2e-3,
        eval_every: 100,
        rng_seed: 21,
        ..ModelConfig::for_architecture(Architecture::CompactRef)
    };
    let aug = AugmentationConfig {
        rng_seed: 22,
        ..Default::default()
    };
    let model = train_on(&config, &aug, &train_data, Some(&val_data), &train_m.name)?;
    let train_secs = t0.elapsed().as_secs_f64();

    let val_scores = model.predict_batch(val_data.patches());
    let val_set = ScoredSet::new(val_scores.clone(), val_data.labels().to_vec())?;
    let cal = calibrate(&val_set, &EqualErrorRate, &val_m.name)?;
    let t = cal.chosen_threshold;
    let preds = apply_threshold(&val_scores, t)?;
    let (mut fp, mut fn_, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in preds.iter().zip(val_data.labels()) {
        if y {
            pos += 1.0;
            fn_ += f64::from(u8::from(!p));
        } else {
            neg += 1.0;
            fp += f64::from(u8::from(p));
        }
    }
    let gap = (fp / neg - fn_ / pos).abs();

    let mut maps = Vec::new();
    let mut test_records = Vec::new();
    for s in test_slides {
        let grid = build_grid(&s.slide, PATCH_PX)?;
        maps.push(infer_map(&s.slide, &InMemorySource::new(s.image.clone()), &model, &grid, &InferOptions::default())?);
        for (gx, gy) in grid.cells() {
            let mut rec = record(&s.slide.slide_id, s.slide.cancer_type, gx, s.is_positive(gx, gy), AnnotationSource::Manual);
            rec.grid_y = gy;
            rec.patient_id = s.slide.patient_id.clone();
            test_records.push(rec);
        }
    }
    let test_m = AnnotationManifest::new("test", Split::Test, test_records)?;
    let scores = scores_from_maps(&test_m, &maps)?;
    let thresholds = BTreeMap::from([("compact".to_string(), t)]);
    let report = evaluate_scored(&test_m, &[ModelScores { name: "compact".into(), scores }], &thresholds, F1Mode::Positive)?;
    let overall = &report.per_model["compact"].overall;
    let test_auc = overall.auc.ok_or_else(|| anyhow!("test set has one class"))?;
    let elapsed = t0.elapsed();

    let detail = format!(
        "train {train_secs:.0}s; t={t:.4} validation |FPR-FNR|={gap:.4}; test AUC {test_auc:.4} accuracy {:.4} over {} patches; total {:.0}s",
        overall.accuracy,
        report.n_test,
        elapsed.as_secs_f64()
    );
    *out = Some(EndToEnd { model, threshold: t });
    ensure!(test_auc >= 0.99, "test AUC below 0.99: {detail}");
    ensure!(overall.accuracy >= 0.95, "accuracy below 0.95: {detail}");
    ensure!(gap <= 0.05, "validation |FPR-FNR| above 0.05: {detail}");
    ensure!(elapsed <= Duration::from_secs(600), "slower than 10 min: {detail}");
    Ok(detail)
}

fn region_fraction(level: TilLevel) -> f64 {
    match level {
        TilLevel::Low => 0.1,
        TilLevel::Medium => 0.4,
        TilLevel::High => 0.75,
    }
}

/// Crops sub-patch `(gx, gy)` pixel by pixel.
fn crop(region: &RgbImage, gx: u32, gy: u32) -> RgbImage {
    let side = REGION_PX / 8;
    RgbImage::from_fn(side, side, |x, y| *region.get_pixel(gx * side + x, gy * side + y))
}

fn region_aggregation(e2e: Option<&EndToEnd>) -> Result<String> {
    let e2e = e2e.ok_or_else(|| anyhow!("no trained model from the end-to-end run"))?;
    let (model, t) = (&e2e.model, e2e.threshold);
    let mut r = rng(10);
    let mut records = Vec::new();
    for i in 0..50 {
        let level = TilLevel::ALL[i % 3];
        let cells: [bool; 64] = std::array::from_fn(|_| r.random_bool(region_fraction(level)));
        let region = synthetic_region(&cells, r.random());
        let count = region_count(model, &region, t)?;
        let mut oracle = 0;
        for gy in 0..8 {
            for gx in 0..8 {
                let p = PatchImage::new(gx, gy, crop(&region, gx, gy))?;
                if model.score_patches(std::slice::from_ref(&p))?[0] >= t {
                    oracle += 1;
                }
            }
        }
        ensure!(count == oracle, "region {i}: region_count {count}, per-cell {oracle}");
        ensure!(count <= 64);
        records.push(RegionRecord::new(format!("r{i}"), vec![level; 3], count)?);
    }
    let dist = region_distribution(&records);
    let median = |l: TilLevel| dist.classes[&l].quantiles.map(|q| q.median).unwrap_or(f64::NAN);
    let (low, mid, high) = (median(TilLevel::Low), median(TilLevel::Medium), median(TilLevel::High));
    ensure!(high > low, "HIGH median {high} not above LOW median {low}");
    Ok(format!("50 regions match per-cell counts; medians LOW {low} MEDIUM {mid} HIGH {high}"))
}

// Metrics -------------------------------------------------------------------

fn metrics_oracle() -> Result<String> {
    let mut r = rng(12);
    for case in 0..1000 {
        let n = r.random_range(1..300);
        let preds: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let truths: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for (&p, &y) in preds.iter().zip(&truths) {
            match (p, y) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fn_ += 1.0,
            }
        }
        let m = patch_metrics(&preds, &truths)?;
        let accuracy = (tp + tn) / n as f64;
        ensure!((m.accuracy - accuracy).abs() < 1e-12, "case {case}: accuracy {} vs {accuracy}", m.accuracy);
        let f1 = (tp > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_));
        match (m.f1, f1) {
            (Some(a), Some(b)) => ensure!((a - b).abs() < 1e-12, "case {case}: f1 {a} vs {b}"),
            (a, b) => ensure!(a.unwrap_or(0.0) == b.unwrap_or(0.0), "case {case}: f1 {a:?} vs {b:?}"),
        }
    }
    let hand = patch_metrics(&[true, true, false, false], &[true, false, true, false])?;
    ensure!(hand.f1 == Some(0.5) && hand.accuracy == 0.5, "hand case gave f1 {:?} accuracy {}", hand.f1, hand.accuracy);
    Ok("1000 random cases agree; TP=FP=FN=TN=1 gives f1 0.5, accuracy 0.5".into())
}

// Review service ------------------------------------------------------------

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Result<(StatusCode, Value)> {
    use tower::ServiceExt;
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string()))?,
        None => req.body(Body::empty())?,
    };
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await?.to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes)? };
    Ok((status, value))
}

async fn service_checks(dir: &Path) -> Result<String> {
    let store = Arc::new(Store::open(StoreConfig::new(dir))?);
    let app = router(store.clone());
    let mut r = rng(13);
    let maps: Vec<TilMap> = (0..5).map(|i| random_map(&mut r, 80, &format!("svc{i}"))).collect();
    for (i, m) in maps.iter().enumerate() {
        store.add_map(&format!("map{i}"), m)?;
    }
    for pair in 0..100 {
        let i = r.random_range(0..maps.len());
        let m = &maps[i];
        let t = if pair % 4 == 0 { m.probs()[r.random_range(0..m.n_cells())] } else { r.random::<f64>() };
        let (st, v) = call(&app, "GET", &format!("/v1/maps/map{i}/preview?t={t}"), None).await?;
        ensure!(st == StatusCode::OK, "preview {pair}: status {st}");
        let offline = apply_threshold(m.probs(), t)?
            .iter()
            .zip(m.mask())
            .filter(|(&p, &masked)| p && !masked)
            .count();
        let tissue = m.mask().iter().filter(|&&x| !x).count();
        ensure!(v["positive_count"] == json!(offline), "pair {pair} map{i} t={t}: service {} offline {offline}", v["positive_count"]);
        ensure!(v["tissue_cells"] == json!(tissue));
    }

    let (_, s) = call(&app, "POST", "/v1/sessions", Some(json!({"map_id": "map0"}))).await?;
    let sid = s["session_id"].as_str().ok_or_else(|| anyhow!("no session id: {s}"))?.to_string();
    let commit = json!({"t": 0.5, "n_samples": "all", "seed": 1});
    let (first, _) = call(&app, "POST", &format!("/v1/sessions/{sid}/commit"), Some(commit.clone())).await?;
    let (second, body) = call(&app, "POST", &format!("/v1/sessions/{sid}/commit"), Some(commit.clone())).await?;
    ensure!(first == StatusCode::OK, "first commit: {first}");
    ensure!(second == StatusCode::CONFLICT && body["error"] == "conflict", "second commit: {second} {body}");

    let (_, s) = call(&app, "POST", "/v1/sessions", Some(json!({"map_id": "map1"}))).await?;
    let sid = s["session_id"].as_str().unwrap().to_string();
    store.inject_fault(Some(FaultPoint::BeforeManifestRename));
    let (crashed, _) = call(&app, "POST", &format!("/v1/sessions/{sid}/commit"), Some(commit.clone())).await?;
    ensure!(crashed.is_server_error(), "injected crash returned {crashed}");
    drop(app);
    drop(store);
    let store = Arc::new(Store::open(StoreConfig::new(dir))?);
    let leftovers: Vec<_> = std::fs::read_dir(dir.join("manifests"))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(&sid) || n.ends_with(".tmp"))
        .collect();
    ensure!(leftovers.is_empty(), "partial manifest files after crash: {leftovers:?}");
    ensure!(store.session(&sid)?.status == SessionStatus::Open, "crashed session not open");

    let app = router(store.clone());
    let (st, done) = call(&app, "POST", &format!("/v1/sessions/{sid}/commit"), Some(commit.clone())).await?;
    ensure!(st == StatusCode::OK, "retry after crash: {st} {done}");
    let expected = maps[1].mask().iter().filter(|&&m| !m).count();
    let manifest = AnnotationManifest::read_jsonl(&store.manifest_path(&sid), Split::Train)?;
    ensure!(manifest.len() == expected, "retried manifest has {} records, expected {expected}", manifest.len());

    let (_, s) = call(&app, "POST", "/v1/sessions", Some(json!({"map_id": "map2"}))).await?;
    let sid = s["session_id"].as_str().unwrap().to_string();
    store.inject_fault(Some(FaultPoint::BeforeSessionWrite));
    let (crashed, _) = call(&app, "POST", &format!("/v1/sessions/{sid}/commit"), Some(commit.clone())).await?;
    ensure!(crashed.is_server_error());
    drop(app);
    drop(store);
    let store = Store::open(StoreConfig::new(dir))?;
    ensure!(store.session(&sid)?.status == SessionStatus::Committed, "complete manifest not treated as committed");
    let expected = maps[2].mask().iter().filter(|&&m| !m).count();
    let manifest = AnnotationManifest::read_jsonl(&store.manifest_path(&sid), Split::Train)?;
    ensure!(manifest.len() == expected, "manifest after late crash has {} of {expected} records", manifest.len());

    Ok("100 previews match offline counts; double commit -> 409; crashes leave no partial manifest".into())
}

fn service_contract() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service_checks(dir.path()))
}

fn main() {
    let mut suite = Suite { results: Vec::new() };
    suite.run("grid_arithmetic", grid_arithmetic);
    suite.run("youden_oracle", youden_oracle);
    suite.run("auc_oracle", auc_oracle);
    suite.run("threshold_monotonicity", threshold_monotonicity);
    suite.run("mixture_policy", mixture_policy);
    suite.run("harvest_consistency", harvest_consistency);
    suite.run("patient_disjointness", patient_disjointness);
    suite.run("gradient_check", gradient_check);
    let mut e2e = None;
    suite.run("synthetic_end_to_end", || end_to_end(&mut e2e));
    suite.run("region_aggregation", || region_aggregation(e2e.as_ref()));
    suite.run("map_round_trip", map_round_trip);
    suite.run("metrics_oracle", metrics_oracle);
    suite.run("service_contract", service_contract);

    let failed: Vec<&str> = suite.results.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    println!("{} of {} criteria passed", suite.results.len() - failed.len(), suite.results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
