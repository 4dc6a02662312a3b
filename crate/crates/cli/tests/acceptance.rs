//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Every check compares library output against a separate brute-force
//! implementation written here, so a shared bug cannot hide itself.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use docspot::corpus::Corpus;
use docspot::eval::{
    average_precision, evaluate, queries_from_ground_truth, EvalConfig, EvalReport, GroundTruth, QuerySpec,
};
use docspot::geometry::{iou, AspectGate, BBox};
use docspot::index::{
    bench_paths, distance_throughput, index_corpus, search, search_embedding, FeatureStore, QueryRequest,
    RankedHit, SearchMode, SearchOptions,
};
use docspot::proposals::{propose, ProposalParams};
use docspot::siamese::{
    cross_entropy, grad_check, make_pairs, model_from_bytes, model_to_bytes, pair_distance, random_patch, sigmoid,
    train, Architecture, GradCheck, GradCheckOptions, Layer, PairLabel, PairSample, Shape, SiameseModel,
    TrainConfig,
};
use docspot::synth::{generate, random_store, stamp_dataset, SynthConfig};

type Outcome = Result<String, String>;

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, n: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let res = match (res, limit) {
            (Ok(_), Some(l)) if took >= l => Err(format!("took {took:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match res {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{took:.1?}]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bb(x: u32, y: u32, w: u32, h: u32) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

/// Pixel-counting overlap of two boxes.
fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
    let inside = |r: &BBox, x: u32, y: u32| x >= r.x() && x < r.x() + r.w() && y >= r.y() && y < r.y() + r.h();
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..64 {
        for x in 0..64 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if inter == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn random_box(rng: &mut ChaCha8Rng, side: u32) -> BBox {
    let w = rng.gen_range(1..=side);
    let h = rng.gen_range(1..=side);
    bb(rng.gen_range(0..=side - w), rng.gen_range(0..=side - h), w, h)
}

fn c1_iou() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let (a, b) = (random_box(&mut rng, 64), random_box(&mut rng, 64));
        let (got, want) = (iou(&a, &b), pixel_iou(&a, &b));
        ensure(got == want, || format!("pair {i}: {a} {b} gave {got}, oracle {want}"))?;
    }
    let a = bb(0, 0, 10, 10);
    ensure(iou(&a, &a) == 1.0, || "identical boxes".into())?;
    ensure(iou(&a, &bb(20, 20, 5, 5)) == 0.0, || "disjoint boxes".into())?;
    ensure(iou(&a, &bb(5, 0, 10, 10)) == 50.0 / 150.0, || "half overlap".into())?;
    Ok("10000 random pairs and 3 examples exact".into())
}

fn c2_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let model = SiameseModel::seeded(Architecture::desk(Some(32)).unwrap(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let label = if seed % 2 == 0 { PairLabel::Similar } else { PairLabel::Dissimilar };
        let pair = PairSample {
            a: random_patch(32, 32, &mut rng),
            b: random_patch(32, 32, &mut rng),
            label,
        };
        let opts = GradCheckOptions {
            max_params: Some(200),
            seed,
            ..GradCheckOptions::default()
        };
        match grad_check(&model, &pair, &opts).map_err(|e| e.to_string())? {
            GradCheck::Checked { max_rel_error, .. } => {
                ensure(max_rel_error < 1e-4, || format!("model {seed}: relative error {max_rel_error:.3e}"))?;
                worst = worst.max(max_rel_error);
            }
            GradCheck::SkippedAtKink { distance } => return Err(format!("model {seed}: pair distance {distance}")),
        }
    }
    Ok(format!("20 models, worst relative error {worst:.2e}"))
}

/// Cheap encoder so the per-pair path finishes quickly; the property under
/// test does not depend on network size.
fn tiny_model(seed: u64) -> SiameseModel {
    let arch = Architecture::new(
        Shape::new(1, 16, 16),
        vec![
            Layer::Conv { out_channels: 4, kernel: 3, stride: 1 },
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::Dense { out: 16 },
        ],
    )
    .unwrap();
    SiameseModel::seeded(arch, seed)
}

fn c3_paths() -> Outcome {
    let synth = generate(&SynthConfig { pages: 8, seed: 3, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let corpus = synth.corpus();
    let model = tiny_model(5);
    let full = index_corpus(corpus.docs(), &ProposalParams::default(), &model)
        .map_err(|e| e.to_string())?
        .store;
    ensure(full.len() >= 5000, || format!("only {} records indexed", full.len()))?;
    let mut n = 0;
    let store = full.filtered(|_| {
        n += 1;
        n <= 5000
    });

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let requests: Vec<QueryRequest> = (0..50)
        .map(|q| {
            let i = rng.gen_range(0..store.len());
            let patch = corpus.image(store.doc_id(i)).unwrap().crop(&store.bbox(i)).unwrap();
            let mode = if q % 2 == 0 { SearchMode::Retrieval } else { SearchMode::Spotting };
            QueryRequest::new(patch, 10, mode)
        })
        .collect();
    let all = bench_paths(&store, &corpus, &model, &requests).map_err(|e| e.to_string())?;
    ensure(all.identical, || "hit lists differ between paths".into())?;
    ensure(all.extract_once() < all.pair_head, || {
        format!("50 queries: extract-once {:.2?} vs pair head {:.2?}", all.extract_once(), all.pair_head)
    })?;
    let two = bench_paths(&store, &corpus, &model, &requests[..2]).map_err(|e| e.to_string())?;
    ensure(two.identical, || "hit lists differ on 2 queries".into())?;
    ensure(two.extract_once() < two.pair_head, || {
        format!("2 queries: extract-once {:.2?} vs pair head {:.2?}", two.extract_once(), two.pair_head)
    })?;
    Ok(format!(
        "50 queries over 5000 records identical; extract-once {:.2?} vs pair head {:.2?} ({:.1}x); 2 queries {:.2?} vs {:.2?}",
        all.extract_once(),
        all.pair_head,
        all.pair_head.as_secs_f64() / all.extract_once().as_secs_f64(),
        two.extract_once(),
        two.pair_head
    ))
}

fn c4_throughput() -> Outcome {
    let mut rates = Vec::new();
    for dim in [128usize, 256, 512] {
        let store = random_store(dim, 100_000, 4).map_err(|e| e.to_string())?;
        let query: Vec<f32> = store.feature(0).to_vec();
        rates.push(distance_throughput(&store, &query, 5));
    }
    let margin = |a: f64, b: f64| a / b - 1.0;
    let (m1, m2) = (margin(rates[0], rates[1]), margin(rates[1], rates[2]));
    let detail = format!(
        "128: {:.2e}/s, 256: {:.2e}/s, 512: {:.2e}/s; margins {:.0}% and {:.0}%",
        rates[0],
        rates[1],
        rates[2],
        m1 * 100.0,
        m2 * 100.0
    );
    ensure(m1 >= 0.10 && m2 >= 0.10, || detail.clone())?;
    Ok(detail)
}

/// Sorts every eligible record by exact squared distance, then document,
/// then insertion index, and keeps the first hit per document or per box.
fn oracle_search(store: &FeatureStore, query: &[f32], opts: &SearchOptions) -> Vec<(String, BBox, usize)> {
    let q = &opts.query_box;
    let mut rows: Vec<(f64, &str, usize)> = Vec::new();
    for i in 0..store.len() {
        let b = store.bbox(i);
        if let Some(g) = &opts.gate {
            let rel = (b.h() as f64 * q.w() as f64) / (q.h() as f64 * b.w() as f64);
            if rel < 1.0 - g.tolerance() || rel > 1.0 + g.tolerance() {
                continue;
            }
        }
        if let Some(ex) = &opts.exclude {
            if ex.doc_id == store.doc_id(i) && overlap(&ex.bbox, &b) >= ex.min_iou {
                continue;
            }
        }
        let key: f64 = query
            .iter()
            .zip(store.feature(i))
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        rows.push((key, store.doc_id(i), i));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, doc, i) in rows {
        let b = store.bbox(i);
        let fresh = match opts.mode {
            SearchMode::Retrieval => seen.insert((doc.to_string(), None)),
            SearchMode::Spotting => seen.insert((doc.to_string(), Some(b))),
        };
        if fresh {
            out.push((doc.to_string(), b, i));
            if out.len() == opts.topk {
                break;
            }
        }
    }
    out
}

/// Area overlap from corner coordinates.
fn overlap(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x() + a.w()).min(b.x() + b.w()) as i64 - a.x().max(b.x()) as i64;
    let iy = (a.y() + a.h()).min(b.y() + b.h()) as i64 - a.y().max(b.y()) as i64;
    if ix <= 0 || iy <= 0 {
        return 0.0;
    }
    let inter = (ix * iy) as u64;
    inter as f64 / (a.area() + b.area() - inter) as f64
}

fn c5_search_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0usize;
    for s in 0..100 {
        let dim = rng.gen_range(1..=24);
        let records = if s < 5 { 10_000 } else { rng.gen_range(0..=2_000) };
        let docs = rng.gen_range(1..=50);
        // coarse integer features force many exact ties
        let levels = rng.gen_range(2..=5);
        let mut store = FeatureStore::new(dim);
        for i in 0..records {
            let f: Vec<f32> = (0..dim).map(|_| rng.gen_range(0..levels) as f32 * 0.5).collect();
            let b = bb(rng.gen_range(0..8) * 10, rng.gen_range(0..8) * 10, rng.gen_range(1..5) * 10, rng.gen_range(1..5) * 10);
            store.push(format!("d{:02}", (i * 7 + s) % docs), b, &f).unwrap();
        }
        let query: Vec<f32> = (0..dim).map(|_| rng.gen_range(0..levels) as f32 * 0.5).collect();
        let mode = if rng.gen_bool(0.5) { SearchMode::Retrieval } else { SearchMode::Spotting };
        let qbox = bb(0, 0, rng.gen_range(1..5) * 10, rng.gen_range(1..5) * 10);
        let mut opts = SearchOptions::new(qbox, rng.gen_range(1..=120), mode);
        if rng.gen_bool(0.5) {
            opts = opts.with_gate(Some(AspectGate::new(rng.gen_range(0.05..0.9)).unwrap()));
        } else {
            opts = opts.with_gate(None);
        }
        if rng.gen_bool(0.3) {
            opts = opts.excluding(Some(docspot::index::Exclusion::new("d00", bb(10, 10, 20, 20))));
        }
        let got = search_embedding(&store, &query, &opts).map_err(|e| e.to_string())?;
        let want = oracle_search(&store, &query, &opts);
        ensure(got.len() == want.len(), || format!("store {s}: {} hits, oracle {}", got.len(), want.len()))?;
        for (r, (h, w)) in got.iter().zip(&want).enumerate() {
            ensure(h.rank == r + 1 && h.doc_id == w.0 && h.bbox == w.1 && h.record == w.2, || {
                format!("store {s} rank {}: got {} {} #{}, oracle {} {} #{}", r + 1, h.doc_id, h.bbox, h.record, w.0, w.1, w.2)
            })?;
        }
        compared += got.len();
    }
    Ok(format!("100 stores, {compared} ranked hits identical"))
}

fn c6_recall() -> Outcome {
    let synth = generate(&SynthConfig { seed: 7, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    ensure(synth.pages.len() == 20, || "corpus size".into())?;
    let params = ProposalParams::default();
    let (mut found, mut total) = (0, 0);
    for page in &synth.pages {
        let cands = propose(&page.doc_id, &page.image, &params).map_err(|e| e.to_string())?;
        for (_, b) in &page.plants {
            total += 1;
            found += cands.iter().any(|c| iou(&c.bbox, b) >= 0.7) as usize;
        }
    }
    let detail = format!("{found}/{total} planted stamps covered at IoU >= 0.7");
    ensure(found as f64 >= 0.9 * total as f64, || detail.clone())?;
    Ok(detail)
}

struct EndToEnd {
    retrieval: EvalReport,
    spotting: EvalReport,
    detail: String,
}

/// Independent scorer for one query: own gate, own exclusion, own targets,
/// own one-to-one matching.
fn oracle_scores(
    store: &FeatureStore,
    model: &SiameseModel,
    corpus: &Corpus,
    gt: &GroundTruth,
    q: &QuerySpec,
    mode: SearchMode,
    ks: &[usize],
    ious: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let patch = corpus.image(&q.doc_id).unwrap().crop(&q.bbox).unwrap();
    let emb = model.embed_any(&patch).unwrap();
    let max_k = *ks.iter().max().unwrap();
    let opts = SearchOptions::new(q.bbox, max_k, mode)
        .with_gate(Some(AspectGate::default()))
        .excluding(Some(docspot::index::Exclusion::new(q.doc_id.clone(), q.bbox)));
    let hits = oracle_search(store, &emb, &opts);
    let targets: Vec<(&str, BBox)> = gt
        .entries()
        .iter()
        .filter(|e| e.category == q.category && !(e.doc_id == q.doc_id && e.bbox == q.bbox))
        .map(|e| (e.doc_id.as_str(), e.bbox))
        .collect();

    let score = |rel: &[bool], total: usize| -> (Vec<f64>, Vec<f64>) {
        ks.iter()
            .map(|&k| {
                let mut hits_found = 0;
                let mut sum = 0.0;
                for (i, &r) in rel.iter().take(k).enumerate() {
                    if r {
                        hits_found += 1;
                        sum += hits_found as f64 / (i + 1) as f64;
                    }
                }
                let denom = total.min(k);
                let ap = if denom == 0 { 0.0 } else { sum / denom as f64 };
                let recall = if total == 0 { 0.0 } else { hits_found as f64 / total as f64 };
                (ap, recall)
            })
            .unzip()
    };

    match mode {
        SearchMode::Retrieval => {
            let docs: HashSet<&str> = targets.iter().map(|t| t.0).collect();
            let rel: Vec<bool> = hits.iter().map(|h| docs.contains(h.0.as_str())).collect();
            score(&rel, docs.len())
        }
        SearchMode::Spotting => {
            let (mut ap, mut recall) = (Vec::new(), Vec::new());
            for &t in ious {
                let mut used = vec![false; targets.len()];
                let rel: Vec<bool> = hits
                    .iter()
                    .map(|h| {
                        let mut best: Option<(usize, f64)> = None;
                        for (j, tg) in targets.iter().enumerate() {
                            if tg.0 == h.0 {
                                let v = overlap(&h.1, &tg.1);
                                if best.map_or(true, |b| v > b.1) {
                                    best = Some((j, v));
                                }
                            }
                        }
                        match best {
                            Some((j, v)) if v >= t && !used[j] => {
                                used[j] = true;
                                true
                            }
                            _ => false,
                        }
                    })
                    .collect();
                let (a, r) = score(&rel, targets.len());
                ap.extend(a);
                recall.extend(r);
            }
            (ap, recall)
        }
    }
}

fn check_against_oracle(
    report: &EvalReport,
    store: &FeatureStore,
    model: &SiameseModel,
    corpus: &Corpus,
    gt: &GroundTruth,
    queries: &[QuerySpec],
) -> Result<(), String> {
    let counts = gt.category_counts();
    let runnable: Vec<&QuerySpec> = queries.iter().filter(|q| counts[q.category.as_str()] >= 2).collect();
    ensure(report.queries.len() == runnable.len(), || {
        format!("{} queries scored, oracle {}", report.queries.len(), runnable.len())
    })?;
    let by_id: HashMap<&str, &QuerySpec> = runnable.iter().map(|q| (q.query_id.as_str(), *q)).collect();
    for out in &report.queries {
        let q = by_id.get(out.query_id.as_str()).ok_or_else(|| format!("unexpected query {}", out.query_id))?;
        let (ap, recall) = oracle_scores(store, model, corpus, gt, q, report.mode, &report.topk_set, &report.iou_grid);
        ensure(out.ap == ap && out.recall == recall, || {
            format!("{} {}: AP {:?} vs oracle {:?}", report.mode, out.query_id, out.ap, ap)
        })?;
    }
    Ok(())
}

fn end_to_end() -> Result<EndToEnd, String> {
    let err = |e: docspot::Error| e.to_string();
    let model = SiameseModel::seeded(Architecture::desk(Some(32)).map_err(err)?, 1);
    let (w, h) = model.input_size();
    let stamps = stamp_dataset(12, w, h, &SynthConfig { seed: 100, ..SynthConfig::default() }).map_err(err)?;
    let tc = TrainConfig::default();
    let split = make_pairs(&stamps, &tc).map_err(err)?;
    let trained = train(&model, &split.train, &tc).map_err(err)?.model;
    let accuracy = |m: &SiameseModel| {
        split
            .test
            .iter()
            .filter(|p| {
                let t = pair_distance(m, m.head(), &p.a, &p.b, None).unwrap();
                (t.prob >= 0.5) == (p.label == PairLabel::Similar)
            })
            .count() as f64
            / split.test.len() as f64
    };

    let synth = generate(&SynthConfig { seed: 200, ..SynthConfig::default() }).map_err(err)?;
    let corpus = synth.corpus();
    let gt = synth.ground_truth();
    let store = index_corpus(corpus.docs(), &ProposalParams::default(), &trained).map_err(err)?.store;
    let queries = queries_from_ground_truth(&gt);

    let run = |mode| {
        let cfg = EvalConfig { mode, ..EvalConfig::default() };
        evaluate(&store, &trained, &corpus, &gt, &queries, &cfg).map_err(err)
    };
    let retrieval = run(SearchMode::Retrieval)?;
    let spotting = run(SearchMode::Spotting)?;
    check_against_oracle(&retrieval, &store, &trained, &corpus, &gt, &queries)?;
    check_against_oracle(&spotting, &store, &trained, &corpus, &gt, &queries)?;
    let detail = format!(
        "{} train / {} test pairs, held-out accuracy {:.3}; {} records; retrieval mAP@5 {:.4}, spotting mAP@5 IoU 0.5 {:.4}; oracle agrees on {} queries",
        split.train.len(),
        split.test.len(),
        accuracy(&trained),
        store.len(),
        retrieval.mean_ap(5, None).unwrap_or(0.0),
        spotting.mean_ap(5, Some(0.5)).unwrap_or(0.0),
        retrieval.queries.len()
    );
    Ok(EndToEnd { retrieval, spotting, detail })
}

fn c7_end_to_end(e2e: &Result<EndToEnd, String>) -> Outcome {
    let e = e2e.as_ref().map_err(|e| e.clone())?;
    let r = e.retrieval.mean_ap(5, None).unwrap_or(0.0);
    let s = e.spotting.mean_ap(5, Some(0.5)).unwrap_or(0.0);
    ensure(r >= 0.8 && s >= 0.6, || e.detail.clone())?;
    Ok(e.detail.clone())
}

fn c8_closed_forms() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    ensure(sigmoid(0.0) == 0.5, || "sigmoid(0)".into())?;
    for label in [PairLabel::Similar, PairLabel::Dissimilar] {
        let l = cross_entropy(0.0, label);
        ensure((l - ln2).abs() < 1e-9, || format!("loss {l} at prob 0.5"))?;
    }
    let ap = average_precision(&[true, false, true], 2);
    ensure((ap - 5.0 / 6.0).abs() < 1e-9, || format!("AP {ap}"))?;
    ensure((average_precision(&[true, false, false], 1) - 1.0).abs() < 1e-9, || "AP single hit".into())?;
    Ok(format!("loss ln 2 at prob 0.5, AP([1,0,1], R=2) = {ap:.10}"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_docspot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("docspot {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn pipeline(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let (corpus, model, store) = (p("corpus"), p("model.bin"), p("store.spot"));
    let common = ["--seed", "9", "--threads", threads];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(&common).map(|s| s.to_string()).collect() };
    let call = |v: Vec<String>| cli(&v.iter().map(String::as_str).collect::<Vec<_>>());
    call(with(&["synth", "--pages", "3", "--out", &corpus]))?;
    call(with(&["train", "--stamps", "4", "--epochs", "2", "--embed-dim", "16", "--out", &model]))?;
    call(with(&["index", "--corpus", &corpus, "--model", &model, "--out", &store]))?;
    for mode in ["retrieval", "spotting"] {
        let report = p(&format!("{mode}.tsv"));
        let table = p(&format!("{mode}.txt"));
        call(with(&[
            "eval", "--store", &store, "--model", &model, "--corpus", &corpus, "--mode", mode, "--out", &report,
            "--table", &table,
        ]))?;
    }
    let mut files = Vec::new();
    for f in ["model.bin", "store.spot", "retrieval.tsv", "spotting.tsv", "retrieval.txt", "spotting.txt"] {
        files.push((f.to_string(), fs::read(dir.join(f)).map_err(|e| e.to_string())?));
    }
    let mut pages: Vec<_> = fs::read_dir(dir.join("corpus")).map_err(|e| e.to_string())?.flatten().collect();
    pages.sort_by_key(|e| e.file_name());
    for e in pages {
        files.push((e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn c9_determinism() -> Outcome {
    let store = random_store(48, 3000, 9).map_err(|e| e.to_string())?;
    let bytes = store.to_bytes();
    let back = FeatureStore::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(back == store && back.to_bytes() == bytes, || "store round trip".into())?;
    let model = SiameseModel::seeded(Architecture::desk(Some(48)).unwrap(), 9);
    let mbytes = model_to_bytes(&model);
    let mback = model_from_bytes(&mbytes).map_err(|e| e.to_string())?;
    ensure(mback == model && model_to_bytes(&mback) == mbytes, || "model round trip".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let requests: Vec<QueryRequest> = (0..6)
        .map(|i| {
            let mode = if i % 2 == 0 { SearchMode::Retrieval } else { SearchMode::Spotting };
            let mut r = QueryRequest::new(random_patch(40, 30, &mut rng), 25, mode);
            r.options.gate = None;
            r
        })
        .collect();
    let in_pool = |n: usize| -> Vec<Vec<RankedHit>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| requests.iter().map(|r| search(&store, r, &model).unwrap()).collect())
    };
    let one = in_pool(1);
    for n in [2, 4, 7] {
        ensure(in_pool(n) == one, || format!("search differs with {n} workers"))?;
    }

    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path(), "1")?;
    let second = pipeline(b.path(), "3")?;
    ensure(first.len() == second.len(), || "different file sets".into())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "store and model round trips bitwise; search equal on 1/2/4/7 workers; {} pipeline files byte-identical across runs with 1 and 3 threads",
        first.len()
    ))
}

fn c10_monotone(e2e: &Result<EndToEnd, String>) -> Outcome {
    let e = e2e.as_ref().map_err(|e| e.clone())?;
    let r = &e.spotting;
    let mut grid = r.iou_grid.clone();
    grid.sort_by(f64::total_cmp);
    let expected: Vec<f64> = (1..=7).map(|i| i as f64 / 10.0).collect();
    ensure(grid == expected, || format!("IoU grid {grid:?}"))?;
    for q in &r.queries {
        for &k in &r.topk_set {
            let aps: Vec<f64> = grid.iter().map(|&t| r.query_ap(q, k, Some(t)).unwrap()).collect();
            ensure(aps.windows(2).all(|w| w[1] <= w[0]), || format!("{} top-{k}: {aps:?}", q.query_id))?;
        }
    }
    for &k in &r.topk_set {
        let maps: Vec<f64> = grid.iter().map(|&t| r.mean_ap(k, Some(t)).unwrap()).collect();
        ensure(maps.windows(2).all(|w| w[1] <= w[0]), || format!("mAP top-{k}: {maps:?}"))?;
    }
    Ok(format!(
        "{} queries x {} cut-offs non-increasing over IoU 0.1..0.7 (mAP@5 {:.4} -> {:.4})",
        r.queries.len(),
        r.topk_set.len(),
        r.mean_ap(5, Some(0.1)).unwrap_or(0.0),
        r.mean_ap(5, Some(0.7)).unwrap_or(0.0)
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and similar probes expect no work
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let mut suite = Suite { failed: 0 };
    let secs = Duration::from_secs;
    suite.run(1, "iou oracle", Some(secs(5)), c1_iou);
    suite.run(2, "gradient check", Some(secs(60)), c2_gradients);
    suite.run(3, "search path equivalence", None, c3_paths);
    suite.run(4, "throughput direction", Some(secs(120)), c4_throughput);
    suite.run(5, "search oracle", None, c5_search_oracle);
    suite.run(6, "proposal recall", Some(secs(300)), c6_recall);
    let t = Instant::now();
    let e2e = end_to_end();
    let e2e_time = t.elapsed();
    suite.run(7, "end-to-end retrieval and spotting", None, || {
        let r = c7_end_to_end(&e2e);
        if e2e_time >= secs(600) {
            return Err(format!("pipeline took {e2e_time:.1?}, limit 600s"));
        }
        r.map(|d| format!("{d} (pipeline {e2e_time:.1?})"))
    });
    suite.run(8, "closed forms", None, c8_closed_forms);
    suite.run(9, "determinism and round trips", None, c9_determinism);
    suite.run(10, "spotting monotonicity", None, || c10_monotone(&e2e));
    println!(
        "{} of 10 criteria passed in {:.1?}",
        10 - suite.failed,
        start.elapsed()
    );
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
