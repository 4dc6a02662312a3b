use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::{info, warn};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use docspot::corpus::{list_pages, Corpus};
use docspot::eval::{default_iou_grid, evaluate, queries_from_ground_truth, EvalConfig, GroundTruth, DEFAULT_TOPK};
use docspot::geometry::{AspectGate, BBox};
use docspot::image::GrayImage;
use docspot::index::{
    bench_paths, bench_throughput, import_feature_files, index_dir, search, FeatureStore, QueryRequest, SearchMode,
    SearchOptions,
};
use docspot::proposals::{self, write_proposal_dump, ProposalParams};
use docspot::siamese::{
    grad_check, load_model, load_pair_samples, make_pairs, pair_distance, parse_pair_list, random_patch, save_model,
    split_pairs, train as fit, Architecture, GradCheck, GradCheckOptions, PairLabel, PairSample, SiameseModel,
    TrainConfig,
};
use docspot::synth::{generate, random_store, stamp_dataset, SynthConfig, GROUND_TRUTH_FILE};

use crate::config::{FileConfig, List};
use crate::{Common, GateArgs, ProposalArgs};

/// Largest relative gradient error accepted before training starts.
const GRAD_TOLERANCE: f64 = 1e-4;

fn setup(common: &Common) -> Result<(FileConfig, u64)> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    if let Some(n) = cfg.pick_opt(common.threads, "threads")? {
        // a second call in the same process fails; the first pool stays
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialised; --threads ignored");
        }
    }
    let seed = cfg.pick(common.seed, "seed", 0)?;
    info!("seed {seed}");
    Ok((cfg, seed))
}

fn out_path(common: &Common, cfg: &FileConfig) -> Result<Option<PathBuf>> {
    cfg.pick_opt(common.out.clone(), "out")
}

fn require_out(common: &Common, cfg: &FileConfig) -> Result<PathBuf> {
    out_path(common, cfg)?.ok_or_else(|| anyhow!("missing --out"))
}

/// Writes to `path` if given, else to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn proposal_params(a: &ProposalArgs, cfg: &FileConfig) -> Result<ProposalParams> {
    let d = ProposalParams::default();
    let p = ProposalParams {
        block: cfg.pick(a.block, "block", d.block)?,
        offset: cfg.pick(a.offset, "offset", d.offset)?,
        scales: cfg.pick(a.scales.clone(), "scales", List(d.scales.clone()))?.0,
        min_region_px: cfg.pick(a.min_region_px, "min_region_px", d.min_region_px)?,
        max_proposals: cfg.pick(a.max_proposals, "max_proposals", d.max_proposals)?,
        similarity_weights: d.similarity_weights,
    };
    p.validate()?;
    Ok(p)
}

fn gate(a: &GateArgs, cfg: &FileConfig) -> Result<Option<AspectGate>> {
    if a.no_gate || cfg.get::<bool>("no_gate")?.unwrap_or(false) {
        return Ok(None);
    }
    let tol = cfg.pick(a.gate_tolerance, "gate_tolerance", AspectGate::DEFAULT_TOLERANCE)?;
    Ok(Some(AspectGate::new(tol)?))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let (corpus, failures) = Corpus::load_dir(dir).with_context(|| format!("corpus {}", dir.display()))?;
    for (doc, e) in &failures {
        warn!("skipping page {doc}: {e}");
    }
    if corpus.is_empty() {
        bail!("no readable pages in {}", dir.display());
    }
    Ok(corpus)
}

fn load_store_checked(path: &Path, model: &SiameseModel) -> Result<FeatureStore> {
    let store = FeatureStore::load(path).with_context(|| format!("store {}", path.display()))?;
    if store.dim() != model.embed_dim() {
        bail!(
            "store dim {} does not match model embedding dim {}",
            store.dim(),
            model.embed_dim()
        );
    }
    Ok(store)
}

fn load_model_at(path: &Path) -> Result<SiameseModel> {
    load_model(path).with_context(|| format!("model {}", path.display()))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub pages: Option<usize>,
    /// Stamps per page
    #[arg(long)]
    pub plants: Option<usize>,
    /// Leave out the text-line clutter
    #[arg(long)]
    pub no_clutter: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let (cfg, seed) = setup(&a.common)?;
    let out = require_out(&a.common, &cfg)?;
    let d = SynthConfig::default();
    let sc = SynthConfig {
        pages: cfg.pick(a.pages, "pages", d.pages)?,
        plants_per_page: cfg.pick(a.plants, "plants", d.plants_per_page)?,
        clutter: !(a.no_clutter || cfg.get::<bool>("no_clutter")?.unwrap_or(false)),
        seed,
        ..d
    };
    let corpus = generate(&sc)?;
    corpus.write(&out)?;
    info!(
        "wrote {} pages and {} to {}",
        corpus.pages.len(),
        GROUND_TRUTH_FILE,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProposeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub proposal: ProposalArgs,
    #[command(flatten)]
    pub common: Common,
}

pub fn propose_all(dir: &Path, params: &ProposalParams) -> Result<String> {
    use rayon::prelude::*;
    let pages = list_pages(dir)?;
    let dumps = pages
        .par_iter()
        .map(|(doc, path)| -> Result<String> {
            let img = GrayImage::load_pgm(path)?;
            Ok(write_proposal_dump(&proposals::propose(doc, &img, params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dumps.concat())
}

pub fn propose(a: &ProposeArgs) -> Result<()> {
    let (cfg, _) = setup(&a.common)?;
    let corpus: PathBuf = cfg.require(a.corpus.clone(), "corpus")?;
    let params = proposal_params(&a.proposal, &cfg)?;
    let dump = propose_all(&corpus, &params)?;
    emit(out_path(&a.common, &cfg)?.as_deref(), &dump)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Tab-separated `path_a path_b label` pair list (paths relative to the list)
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Corpus whose ground-truth crops form the training set
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Ground truth for --corpus (default: <corpus>/groundtruth.tsv)
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Rendered synthetic stamps per category (used when neither --pairs nor --corpus is given)
    #[arg(long)]
    pub stamps: Option<usize>,
    /// Start from this model instead of a fresh one
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Embedding size of the final dense layer; 0 keeps the unreduced conv features
    #[arg(long)]
    pub embed_dim: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub neg_ratio: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub max_positive: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

/// Default number of rendered stamps per category for training.
pub const DEFAULT_STAMPS: usize = 12;

pub fn train(a: &TrainArgs) -> Result<()> {
    let (cfg, seed) = setup(&a.common)?;
    let out = require_out(&a.common, &cfg)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        lr0: cfg.pick(a.lr, "lr", d.lr0)?,
        decay: cfg.pick(a.decay, "decay", d.decay)?,
        epochs: cfg.pick(a.epochs, "epochs", d.epochs)?,
        batch: cfg.pick(a.batch, "batch", d.batch)?,
        neg_ratio: cfg.pick(a.neg_ratio, "neg_ratio", d.neg_ratio)?,
        split: cfg.pick(a.split, "split", d.split)?,
        seed,
        max_positive: cfg.pick_opt(a.max_positive, "max_positive")?,
    };
    tc.validate()?;

    let model = match cfg.pick_opt(a.init.clone(), "init")? {
        Some(p) => load_model_at(&p)?,
        None => {
            let dim = cfg.pick(a.embed_dim, "embed_dim", 32)?;
            let arch = Architecture::desk((dim > 0).then_some(dim))?;
            SiameseModel::seeded(arch, seed)
        }
    };
    let (w, h) = model.input_size();

    let (train_pairs, test_pairs) = if let Some(list) = cfg.pick_opt(a.pairs.clone(), "pairs")? {
        let text = fs::read_to_string(&list).with_context(|| format!("pair list {}", list.display()))?;
        let base = list.parent().unwrap_or(Path::new("."));
        let samples = load_pair_samples(&parse_pair_list(&text)?, base, (w, h))?;
        split_pairs(samples, tc.split)
    } else {
        let patches = if let Some(dir) = cfg.pick_opt(a.corpus.clone(), "corpus")? {
            let gt_path = cfg.pick(a.gt.clone(), "gt", dir.join(GROUND_TRUTH_FILE))?;
            let gt = GroundTruth::load(&gt_path).with_context(|| format!("ground truth {}", gt_path.display()))?;
            let corpus = load_corpus(&dir)?;
            let (patches, names) = gt.labeled_crops(&corpus, w, h)?;
            info!("{} crops in {} categories", patches.len(), names.len());
            patches
        } else {
            let per = cfg.pick(a.stamps, "stamps", DEFAULT_STAMPS)?;
            let sc = SynthConfig {
                seed,
                ..SynthConfig::default()
            };
            stamp_dataset(per, w, h, &sc)?
        };
        let split = make_pairs(&patches, &tc)?;
        (split.train, split.test)
    };
    info!("{} training pairs, {} held out", train_pairs.len(), test_pairs.len());

    check_gradients(&model, &train_pairs, seed)?;
    let outcome = fit(&model, &train_pairs, &tc)?;
    for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
        info!("epoch {epoch}: mean loss {loss:.6}");
    }
    if !test_pairs.is_empty() {
        info!("held-out pair accuracy {:.4}", pair_accuracy(&outcome.model, &test_pairs)?);
    }
    save_model(&outcome.model, &out)?;
    info!("model saved to {}", out.display());
    Ok(())
}

/// Training precondition: analytic and numeric gradients agree on the
/// first training pair that is not at a non-differentiable point.
fn check_gradients(model: &SiameseModel, pairs: &[PairSample], seed: u64) -> Result<()> {
    let opts = GradCheckOptions {
        max_params: Some(200),
        seed,
        ..GradCheckOptions::default()
    };
    for pair in pairs.iter().take(16) {
        match grad_check(model, pair, &opts)? {
            GradCheck::Checked {
                max_rel_error,
                compared,
                kinks,
            } => {
                info!("gradient check: max relative error {max_rel_error:.3e} over {compared} parameters ({kinks} at kinks)");
                if max_rel_error >= GRAD_TOLERANCE {
                    bail!("gradient check failed: relative error {max_rel_error:.3e} >= {GRAD_TOLERANCE:e}");
                }
                return Ok(());
            }
            GradCheck::SkippedAtKink { .. } => continue,
        }
    }
    warn!("gradient check skipped: every sampled pair sits at zero distance");
    Ok(())
}

pub fn pair_accuracy(model: &SiameseModel, pairs: &[PairSample]) -> Result<f64> {
    let mut right = 0;
    for p in pairs {
        let term = pair_distance(model, model.head(), &p.a, &p.b, None)?;
        if (term.prob >= 0.5) == (p.label == PairLabel::Similar) {
            right += 1;
        }
    }
    Ok(right as f64 / pairs.len().max(1) as f64)
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Raw little-endian f32 matrix to import instead of embedding
    #[arg(long)]
    pub import: Option<PathBuf>,
    /// Row manifest for --import
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Row width for --import
    #[arg(long)]
    pub dim: Option<usize>,
    #[command(flatten)]
    pub proposal: ProposalArgs,
    #[command(flatten)]
    pub common: Common,
}

pub fn index(a: &IndexArgs) -> Result<()> {
    let (cfg, _) = setup(&a.common)?;
    let out = require_out(&a.common, &cfg)?;
    let store = if let Some(matrix) = cfg.pick_opt(a.import.clone(), "import")? {
        let manifest: PathBuf = cfg.require(a.manifest.clone(), "manifest")?;
        let dim: usize = cfg.require(a.dim, "dim")?;
        import_feature_files(&matrix, dim, &manifest)?
    } else {
        let corpus: PathBuf = cfg.require(a.corpus.clone(), "corpus")?;
        let model = load_model_at(&cfg.require::<PathBuf>(a.model.clone(), "model")?)?;
        let params = proposal_params(&a.proposal, &cfg)?;
        let outcome = index_dir(&corpus, &params, &model)?;
        for (doc, e) in &outcome.failures {
            warn!("page {doc} not indexed: {e}");
        }
        outcome.store
    };
    store.save(&out)?;
    info!("{} records of dim {} written to {}", store.len(), store.dim(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Query image file
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Take the query from this corpus page instead (needs --box)
    #[arg(long)]
    pub doc: Option<String>,
    /// Query box `x,y,w,h` on --doc
    #[arg(long = "box")]
    pub bbox: Option<List<u32>>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub topk: Option<usize>,
    /// retrieval or spotting
    #[arg(long)]
    pub mode: Option<SearchMode>,
    #[command(flatten)]
    pub gate: GateArgs,
    #[command(flatten)]
    pub common: Common,
}

fn parse_box(v: &[u32]) -> Result<BBox> {
    match v {
        [x, y, w, h] => Ok(BBox::new(*x, *y, *w, *h)?),
        _ => bail!("--box needs four values x,y,w,h"),
    }
}

pub fn format_hits(hits: &[docspot::index::RankedHit]) -> String {
    hits.iter()
        .map(|h| {
            let b = h.bbox;
            format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\n",
                h.rank,
                h.doc_id,
                b.x(),
                b.y(),
                b.w(),
                b.h(),
                h.distance
            )
        })
        .collect()
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let (cfg, _) = setup(&a.common)?;
    let model = load_model_at(&cfg.require::<PathBuf>(a.model.clone(), "model")?)?;
    let store = load_store_checked(&cfg.require::<PathBuf>(a.store.clone(), "store")?, &model)?;
    let patch = match (cfg.pick_opt(a.query.clone(), "query")?, cfg.pick_opt(a.doc.clone(), "doc")?) {
        (Some(p), _) => GrayImage::load_pgm(&p).with_context(|| format!("query {}", p.display()))?,
        (None, Some(doc)) => {
            let dir: PathBuf = cfg.require(a.corpus.clone(), "corpus")?;
            let b = parse_box(&cfg.require::<List<u32>>(a.bbox.clone(), "box")?.0)?;
            let page = dir.join(format!("{doc}.pgm"));
            GrayImage::load_pgm(&page)
                .with_context(|| format!("page {}", page.display()))?
                .crop(&b)?
        }
        (None, None) => bail!("give --query FILE or --doc ID --box x,y,w,h"),
    };
    let topk = cfg.pick(a.topk, "topk", 10)?;
    let mode = cfg.pick(a.mode, "mode", SearchMode::Retrieval)?;
    let options = SearchOptions::new(patch.bounds(), topk, mode).with_gate(gate(&a.gate, &cfg)?);
    let hits = search(&store, &QueryRequest { patch, options }, &model)?;
    emit(out_path(&a.common, &cfg)?.as_deref(), &format_hits(&hits))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Ground truth (default: <corpus>/groundtruth.tsv)
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// retrieval or spotting
    #[arg(long)]
    pub mode: Option<SearchMode>,
    /// Comma-separated topk values
    #[arg(long)]
    pub topk: Option<List<usize>>,
    /// Comma-separated IoU thresholds (spotting)
    #[arg(long)]
    pub iou: Option<List<f64>>,
    /// Let a query's own candidates into its ranking
    #[arg(long)]
    pub keep_source: bool,
    /// Also write the aligned table here
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub gate: GateArgs,
    #[command(flatten)]
    pub common: Common,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (cfg, seed) = setup(&a.common)?;
    let model = load_model_at(&cfg.require::<PathBuf>(a.model.clone(), "model")?)?;
    let store = load_store_checked(&cfg.require::<PathBuf>(a.store.clone(), "store")?, &model)?;
    let dir: PathBuf = cfg.require(a.corpus.clone(), "corpus")?;
    let gt_path = cfg.pick(a.gt.clone(), "gt", dir.join(GROUND_TRUTH_FILE))?;
    let gt = GroundTruth::load(&gt_path).with_context(|| format!("ground truth {}", gt_path.display()))?;
    let corpus = load_corpus(&dir)?;
    let ec = EvalConfig {
        topk_set: cfg.pick(a.topk.clone(), "topk", List(DEFAULT_TOPK.to_vec()))?.0,
        iou_grid: cfg.pick(a.iou.clone(), "iou", List(default_iou_grid()))?.0,
        mode: cfg.pick(a.mode, "mode", SearchMode::Retrieval)?,
        gate: gate(&a.gate, &cfg)?,
        exclude_source: !(a.keep_source || cfg.get::<bool>("keep_source")?.unwrap_or(false)),
        seed,
    };
    let queries = queries_from_ground_truth(&gt);
    let report = evaluate(&store, &model, &corpus, &gt, &queries, &ec)?;
    info!("evaluated {} queries in {:.2?}", report.queries.len(), report.elapsed);
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = cfg.pick_opt(a.table.clone(), "table")? {
        emit(Some(&p), &table)?;
    }
    if let Some(p) = out_path(&a.common, &cfg)? {
        emit(Some(&p), &report.to_tsv())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Embedding sizes for the throughput table
    #[arg(long)]
    pub dims: Option<List<u32>>,
    /// Synthetic records per throughput store
    #[arg(long)]
    pub records: Option<usize>,
    /// Queries per throughput row
    #[arg(long)]
    pub queries: Option<usize>,
    /// Distance scans per row; the fastest is reported
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Store, model and corpus for the search-path comparison
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Queries for the search-path comparison
    #[arg(long)]
    pub path_queries: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let (cfg, seed) = setup(&a.common)?;
    let dims = cfg.pick(a.dims.clone(), "dims", List(vec![128, 256, 512]))?.0;
    let records = cfg.pick(a.records, "records", 100_000)?;
    let nq = cfg.pick(a.queries, "queries", 3)?;
    let repeats = cfg.pick(a.repeats, "repeats", 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out = String::from("dim\trecords\tcandidates_per_sec\tmean_query_ms\n");
    let patches: Vec<GrayImage> = (0..nq).map(|_| random_patch(32, 32, &mut rng)).collect();
    for &dim in &dims {
        let model = SiameseModel::seeded(Architecture::desk((dim > 0).then_some(dim))?, seed);
        let store = random_store(model.embed_dim(), records, seed)?;
        let requests: Vec<QueryRequest> = patches
            .iter()
            .map(|p| QueryRequest::new(p.clone(), 10, SearchMode::Spotting))
            .collect();
        for row in bench_throughput(&[(&store, &model)], &requests, repeats)? {
            out.push_str(&format!(
                "{}\t{}\t{:.0}\t{:.3}\n",
                row.dim,
                row.records,
                row.candidates_per_sec,
                row.mean_query.as_secs_f64() * 1e3
            ));
        }
    }

    if let Some(store_path) = cfg.pick_opt::<PathBuf>(a.store.clone(), "store")? {
        let model = load_model_at(&cfg.require::<PathBuf>(a.model.clone(), "model")?)?;
        let store = load_store_checked(&store_path, &model)?;
        let corpus = load_corpus(&cfg.require::<PathBuf>(a.corpus.clone(), "corpus")?)?;
        let n = cfg.pick(a.path_queries, "path_queries", 2)?;
        let requests: Vec<QueryRequest> = (0..n)
            .map(|_| -> Result<QueryRequest> {
                let i = rng.gen_range(0..store.len());
                let patch = corpus.image(store.doc_id(i))?.crop(&store.bbox(i))?;
                Ok(QueryRequest::new(patch, 10, SearchMode::Spotting))
            })
            .collect::<Result<_>>()?;
        let b = bench_paths(&store, &corpus, &model, &requests)?;
        out.push_str(&format!(
            "\npath\tqueries\tcandidates\textract_once_ms\tpair_head_ms\tidentical\n\
             compare\t{}\t{}\t{:.1}\t{:.1}\t{}\n",
            b.queries,
            b.candidates,
            b.extract_once().as_secs_f64() * 1e3,
            b.pair_head.as_secs_f64() * 1e3,
            b.identical
        ));
    }
    emit(out_path(&a.common, &cfg)?.as_deref(), &out)
}
