mod load;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use corrxai_core::corr::{rerank_requests, write_requests};
use corrxai_core::eval::{evaluate_topk, explanation_diversity, DirPixelSource, MsSsimParams};
use corrxai_core::explain::{build_explanation, parse_explanation, serialize_explanation};
use corrxai_core::store::{read_feature_bank, read_manifest, validate_manifest, write_feature_bank, Dims, DEFAULT_GRID};
use corrxai_core::study::{build_plan, planned_trial, Dataset, StudyConfig, DEFAULT_SAMPLES_PER_OUTCOME};
use corrxai_core::team::{
    accept_reject_breakdown, breakdown_to_csv, default_thresholds, mann_whitney_u, threshold_sweep, user_accuracy,
    DEFAULT_EXCLUSION_THRESHOLD,
};
use corrxai_core::{FeatureRecord, Method, Split, TrialLog};
use corrxai_service::StudyService;

use load::{bank, class_names, emit, parse_method, ClassifierArgs};

#[derive(Parser)]
#[command(name = "corrxai", version, about = "Exemplar-based classification with visual-correspondence explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or inspect CXFB feature banks.
    Bank {
        #[command(subcommand)]
        action: BankAction,
    },
    /// Sample a frozen study plan from classified queries.
    Plan(PlanArgs),
    /// Classify queries and print one explanation document per line.
    Classify(ClassifyArgs),
    /// Top-1 accuracy over a manifest.
    Evaluate(EvaluateArgs),
    /// List the (query, candidate) pairs the correspondence extractor must map.
    RerankRequests(RequestArgs),
    /// Mean pairwise MS-SSIM among explanation supports.
    Diversity(DiversityArgs),
    /// Human-AI team accuracy across confidence thresholds.
    Sweep(SweepArgs),
    /// Study statistics.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
    /// Run the study HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum BankAction {
    /// Build a bank from JSON lines `{"image_id", "class_id", "global": [..], "patches": [..]}`.
    Write {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Print dimensions and per-class counts.
    Inspect {
        bank: PathBuf,
        /// Also check a manifest against the bank.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Inputs {
    /// Gallery feature bank.
    #[arg(long)]
    gallery: PathBuf,
    /// Query feature bank.
    #[arg(long)]
    queries: PathBuf,
    /// `id<TAB>name` class names.
    #[arg(long)]
    names: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ClassifyArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    /// Only these query ids (default: all).
    #[arg(long = "query-id")]
    query_ids: Vec<String>,
    #[arg(long)]
    hide_boxes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<Split>,
    /// JSON report destination (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-query CSV rows.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RequestArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = corrxai_core::corr::DEFAULT_SHORTLIST)]
    shortlist: usize,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PlanArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    study_id: String,
    #[arg(long, default_value = "imagenet")]
    dataset: Dataset,
    /// Methods to plan for; the classifier options apply to each.
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "knn")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_OUTCOME)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    hide_boxes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DiversityArgs {
    /// Explanation documents, one per line.
    explanations: PathBuf,
    /// Directory of `<image_id>.{png,jpg,jpeg}` files.
    #[arg(long)]
    images: PathBuf,
    /// Resize every image to SIZE x SIZE before comparing.
    #[arg(long)]
    resize: Option<u32>,
    #[arg(long, default_value_t = 5)]
    scales: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Trial log CSV.
    log: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StatsAction {
    /// Two-sided Mann-Whitney U test, on explicit samples or on per-user
    /// accuracies of two methods in a trial log.
    Mannwhitney {
        #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "log")]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "log")]
        b: Vec<f64>,
        #[arg(long, requires_all = ["method_a", "method_b"])]
        log: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method_a: Option<Method>,
        #[arg(long, value_parser = parse_method)]
        method_b: Option<Method>,
        #[arg(long, default_value_t = DEFAULT_EXCLUSION_THRESHOLD)]
        exclude_at_or_below: f64,
    },
    /// Per-user accuracy and per-method cohort summaries.
    Users {
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXCLUSION_THRESHOLD)]
        exclude_at_or_below: f64,
    },
    /// Accept/reject rates by method, AI correctness, and difficulty.
    Breakdown { log: PathBuf },
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "CORRXAI_DATA_DIR")]
    data_dir: PathBuf,
    /// Study plans to register before serving.
    #[arg(long = "plan")]
    plans: Vec<PathBuf>,
}

#[derive(Deserialize)]
struct JsonRecord {
    image_id: String,
    class_id: u32,
    global: Vec<f32>,
    patches: Vec<f32>,
}

fn bank_write(input: &Path, out: &Path, grid: usize) -> Result<()> {
    let reader = BufReader::new(fs::File::open(input).with_context(|| format!("opening {}", input.display()))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: JsonRecord = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        records.push(FeatureRecord::new(r.image_id, r.class_id, r.global, r.patches));
    }
    let Some(first) = records.first() else {
        bail!("{} has no records", input.display());
    };
    let m = grid * grid;
    if grid == 0 || first.patches.len() % m != 0 {
        bail!("first record has {} patch values, not a multiple of {m}", first.patches.len());
    }
    let dims = Dims::new(first.global.len(), first.patches.len() / m, grid);
    write_feature_bank(&records, dims, out)?;
    eprintln!("wrote {} records ({}x{} grid, global {}, patch {})", records.len(), grid, grid, dims.global_dim, dims.patch_dim);
    Ok(())
}

fn bank_inspect(path: &Path, manifest: Option<&Path>) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (dims, records) = read_feature_bank(&bytes)?;
    println!("records\t{}", records.len());
    println!("global_dim\t{}", dims.global_dim);
    println!("patch_dim\t{}", dims.patch_dim);
    println!("grid\t{}", dims.grid);
    let mut classes: BTreeMap<u32, usize> = BTreeMap::new();
    for r in &records {
        *classes.entry(r.class_id).or_default() += 1;
    }
    println!("classes\t{}", classes.len());
    for (c, n) in &classes {
        println!("class\t{c}\t{n}");
    }
    if let Some(m) = manifest {
        let index = corrxai_core::GalleryIndex::with_default_names(dims, records, BTreeMap::new())?;
        let report = validate_manifest(&read_manifest(m)?, &index);
        println!("manifest_issues\t{}", report.issue_count());
        println!("{}", serde_json::to_string(&report)?);
    }
    Ok(())
}

fn classify(args: &ClassifyArgs) -> Result<()> {
    let names = class_names(args.inputs.names.as_deref())?;
    let gallery = bank(&args.inputs.gallery, &names)?;
    let queries = bank(&args.inputs.queries, &names)?;
    let classifier = args.classifier.build(&gallery)?;
    let selected: Vec<&FeatureRecord> = if args.query_ids.is_empty() {
        queries.records().iter().collect()
    } else {
        args.query_ids
            .iter()
            .map(|id| queries.get(id).with_context(|| format!("query {id} not in bank")))
            .collect::<Result<_>>()?
    };
    let mut out = String::new();
    for q in selected {
        let c = classifier.classify(q, &gallery)?;
        let label_name = gallery
            .class_name(c.prediction.label)
            .map_or_else(|| format!("class_{}", c.prediction.label), str::to_string);
        let record = build_explanation(
            &q.image_id,
            &c.prediction,
            c.rerank.as_deref(),
            &label_name,
            gallery.dims().grid,
            args.hide_boxes,
        )?;
        out.push_str(&serialize_explanation(&record));
    }
    emit(args.out.as_deref(), &out)
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let names = class_names(args.inputs.names.as_deref())?;
    let gallery = bank(&args.inputs.gallery, &names)?;
    let queries = bank(&args.inputs.queries, &names)?;
    let manifest = read_manifest(&args.manifest)?;
    let classifier = args.classifier.build(&gallery)?;
    let report = evaluate_topk(&manifest, args.split, &queries, &gallery, classifier.as_ref())?;
    eprintln!(
        "{}: top-1 {:.2}% ({} correct, {} incorrect, {} skipped)",
        report.method, report.accuracy, report.correct, report.incorrect, report.skipped
    );
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv()?)?;
    }
    emit(args.out.as_deref(), &report.to_json())
}

fn requests(args: &RequestArgs) -> Result<()> {
    let gallery = bank(&args.inputs.gallery, &BTreeMap::new())?;
    let queries = bank(&args.inputs.queries, &BTreeMap::new())?;
    let reqs = rerank_requests(queries.records(), &gallery, args.shortlist, args.exclude_self)?;
    emit(args.out.as_deref(), &write_requests(&reqs))
}

fn plan(args: &PlanArgs) -> Result<()> {
    let names = class_names(args.inputs.names.as_deref())?;
    let gallery = bank(&args.inputs.gallery, &names)?;
    let queries = bank(&args.inputs.queries, &names)?;
    let manifest = read_manifest(&args.manifest)?;
    let mut candidates = Vec::new();
    for &method in &args.methods {
        let mut c = args.classifier.clone();
        c.method = method;
        let classifier = c.build(&gallery)?;
        for entry in manifest.active(args.split) {
            let Some(q) = queries.get(&entry.image_id) else { continue };
            let result = classifier.classify(q, &gallery)?;
            candidates.push(planned_trial(entry, &result, &gallery, args.hide_boxes)?);
        }
    }
    let config = StudyConfig {
        study_id: args.study_id.clone(),
        dataset: args.dataset,
        methods: args.methods.clone(),
        samples_per_outcome: args.samples,
        seed: args.seed,
    };
    let plan = build_plan(config, candidates, &gallery)?;
    for (m, mp) in &plan.methods {
        eprintln!(
            "{m}: {} training, {} validation, {} test-pool trials",
            mp.training.len(),
            mp.validation.len(),
            mp.test_pool.len()
        );
    }
    emit(args.out.as_deref(), &plan.to_json())
}

fn diversity(args: &DiversityArgs) -> Result<()> {
    let text = fs::read_to_string(&args.explanations)?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_explanation)
        .collect::<corrxai_core::Result<Vec<_>>>()?;
    let source = DirPixelSource {
        root: args.images.clone(),
        resize: args.resize.map(|s| (s, s)),
    };
    let params = MsSsimParams {
        scales: args.scales,
        ..MsSsimParams::default()
    };
    let report = explanation_diversity(&records, &source, &params);
    for m in &report.methods {
        eprintln!("{}: mean {} {:.4} over {} records", m.method, report.metric, m.mean, m.records);
    }
    emit(args.out.as_deref(), &report.to_json())
}

fn read_log(path: &Path) -> Result<TrialLog> {
    TrialLog::read_csv(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let mut log = read_log(&args.log)?;
    if let Some(m) = args.method {
        log = log.for_method(m);
    }
    let table = threshold_sweep(&log, &default_thresholds())?;
    match table.best_row() {
        Some(b) => eprintln!("best threshold {:.2}: team {:.2}%", b.threshold, b.team_accuracy.unwrap_or(f64::NAN)),
        None => eprintln!("no threshold splits the log between AI and humans"),
    }
    emit(args.out.as_deref(), &table.to_csv()?)
}

fn stats(action: &StatsAction) -> Result<()> {
    match action {
        StatsAction::Mannwhitney {
            a,
            b,
            log,
            method_a,
            method_b,
            exclude_at_or_below,
        } => {
            let (a, b) = match log {
                Some(path) => {
                    let report = user_accuracy(&read_log(path)?, *exclude_at_or_below);
                    (
                        report.scores(method_a.expect("required by clap")),
                        report.scores(method_b.expect("required by clap")),
                    )
                }
                None => (a.clone(), b.clone()),
            };
            let r = mann_whitney_u(&a, &b)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        StatsAction::Users { log, exclude_at_or_below } => {
            let report = user_accuracy(&read_log(log)?, *exclude_at_or_below);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        StatsAction::Breakdown { log } => {
            print!("{}", breakdown_to_csv(&accept_reject_breakdown(&read_log(log)?))?);
        }
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let mut service = StudyService::open(&args.data_dir)?;
    for p in &args.plans {
        let plan = corrxai_core::study::StudyPlan::from_json(&fs::read_to_string(p)?)?;
        service.add_plan(plan)?;
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad host/port")?;
    eprintln!("serving {} on http://{addr}", args.data_dir.display());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(corrxai_service::serve(Arc::new(service), addr))?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Bank { action } => match action {
            BankAction::Write { input, out, grid } => bank_write(input, out, *grid),
            BankAction::Inspect { bank, manifest } => bank_inspect(bank, manifest.as_deref()),
        },
        Command::Plan(a) => plan(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RerankRequests(a) => requests(a),
        Command::Diversity(a) => diversity(a),
        Command::Sweep(a) => sweep(a),
        Command::Stats { action } => stats(action),
        Command::Serve(a) => serve(a),
    }
}
