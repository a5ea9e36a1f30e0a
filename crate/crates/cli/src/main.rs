//! Command-line front end for the social search engine: corpus generation,
//! index builds, search with social query rewriting, rewriter and ranker
//! training, threshold sweeps, and the feature-ablation report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use socsearch_core::eval::{
    generate, load_click_log, run_ablations, save_click_log, SyntheticConfig,
};
use socsearch_core::graph::NodeId;
use socsearch_core::index::{tokenize, InvertedIndex, Term};
use socsearch_core::query::{execute, SExpr};
use socsearch_core::ranker::{rank, train, tr_dense, TrainConfig, TwoTowerModel, AblationSetting};
use socsearch_core::rewriter::{
    load_ground_truth, mean_cost, rewrite, save_ground_truth, sweep_tp, train_weights, PerPrefix,
    PrefixClass, RewriteError, RewriteModel,
};

use socsearch_cli::corpus::{load_corpus, load_workload, save_corpus, save_workload, Corpus};

#[derive(Parser)]
#[command(name = "socsearch", version, about = "Social-graph search engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, click log, ground truth, and workload.
    Generate(GenerateArgs),
    /// Build and persist the inverted index from a corpus file.
    Index(IndexArgs),
    /// Run one query as one searcher and print ranked results.
    Search(SearchArgs),
    /// Fit per-prefix linear weights from ground-truth rows.
    TrainRewriter(TrainRewriterArgs),
    /// Find the largest per-prefix thresholds within a cost budget.
    SweepTp(SweepTpArgs),
    /// Train the two-tower click model on a click log.
    TrainRanker(TrainRankerArgs),
    /// Train every feature setting and print the metric table.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for corpus.tsv, clicks.tsv, ground_truth.tsv,
    /// workload.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    persons: usize,
    #[arg(long, default_value_t = 200)]
    groups: usize,
    #[arg(long, default_value_t = 200)]
    pages: usize,
    #[arg(long, default_value_t = 50000)]
    postings: usize,
    #[arg(long, default_value_t = 20000)]
    sessions: usize,
    #[arg(long, default_value_t = 10)]
    results_per_session: usize,
    #[arg(long, default_value_t = 60)]
    words_per_topic: usize,
    #[arg(long, default_value_t = 4.0)]
    text_weight: f64,
    #[arg(long, default_value_t = 4.5)]
    social_weight: f64,
    #[arg(long, default_value_t = 0.7)]
    noise: f64,
}

#[derive(Args)]
struct IndexArgs {
    /// Corpus file to read.
    #[arg(long)]
    corpus: PathBuf,
    /// Index file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Person id issuing the query.
    #[arg(long)]
    searcher: u64,
    /// Keyword query text.
    #[arg(long)]
    query: String,
    /// Skip social rewriting (keyword-only retrieval).
    #[arg(long)]
    no_rewrite: bool,
    /// Rewrite model file; all connections are kept when omitted.
    #[arg(long)]
    rewrite_model: Option<PathBuf>,
    /// Two-tower checkpoint; BM25 ordering is used when omitted.
    #[arg(long)]
    ranker: Option<PathBuf>,
    /// Number of results to print.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Query time in seconds since epoch; corpus time when omitted.
    #[arg(long)]
    now: Option<u64>,
}

#[derive(Args)]
struct TrainRewriterArgs {
    /// Ground-truth rows file.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
    /// Uniform per-prefix threshold stored with the weights.
    #[arg(long, default_value_t = 3)]
    threshold: u32,
}

#[derive(Args)]
struct SweepTpArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Workload file of `searcher TAB query` lines.
    #[arg(long)]
    workload: PathBuf,
    /// Rewrite model whose weights are swept.
    #[arg(long)]
    model: PathBuf,
    /// Ground-truth rows for recall reporting (optional).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Mean postings-touched budget.
    #[arg(long)]
    budget: f64,
    /// Updated model file to write (optional).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    now: Option<u64>,
}

#[derive(Args)]
struct TrainRankerArgs {
    #[arg(long)]
    index: PathBuf,
    /// Click log to train on.
    #[arg(long)]
    clicks: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Feature setting: ctr_only, tr_only, ctr_tr, ngram_only, ctr_ngram,
    /// or ctr_tr_ngram.
    #[arg(long, default_value = "ctr_tr_ngram")]
    setting: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    clicks: PathBuf,
    /// `all` or a comma-separated list of setting names.
    #[arg(long, default_value = "all")]
    settings: String,
    /// Fraction of sessions used for training.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
}

/// Input and usage problems exit 2; internal failures exit 1.
enum CliError {
    Input(String),
    Internal(String),
}

type CliResult<T> = Result<T, CliError>;

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn internal_err(msg: impl Into<String>) -> CliError {
    CliError::Internal(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Generate(args) => cmd_generate(args),
        Command::Index(args) => cmd_index(args),
        Command::Search(args) => cmd_search(args),
        Command::TrainRewriter(args) => cmd_train_rewriter(args),
        Command::SweepTp(args) => cmd_sweep_tp(args),
        Command::TrainRanker(args) => cmd_train_ranker(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn read_corpus_file(path: &PathBuf) -> CliResult<Corpus> {
    load_corpus(path).map_err(|e| input_err(format!("corpus {}: {e}", path.display())))
}

fn read_index_file(path: &PathBuf) -> CliResult<InvertedIndex> {
    InvertedIndex::load(path).map_err(|e| input_err(format!("index {}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    if args.persons < 2 || args.groups == 0 || args.pages == 0 || args.postings == 0 {
        return Err(input_err(
            "counts must be positive (and at least two persons)",
        ));
    }
    if args.sessions == 0 || args.results_per_session == 0 || args.words_per_topic < 2 {
        return Err(input_err(
            "sessions, results-per-session, and words-per-topic must allow at least one session",
        ));
    }
    let cfg = SyntheticConfig {
        persons: args.persons,
        groups: args.groups,
        pages: args.pages,
        postings: args.postings,
        sessions: args.sessions,
        results_per_session: args.results_per_session,
        words_per_topic: args.words_per_topic,
        text_weight: args.text_weight,
        social_weight: args.social_weight,
        noise: args.noise,
        seed: args.seed,
    };
    let data = generate(&cfg).map_err(|e| internal_err(format!("generation failed: {e}")))?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| input_err(format!("cannot create {}: {e}", args.out.display())))?;

    let docs: Vec<_> = data.index.docs().collect();
    let corpus_path = args.out.join("corpus.tsv");
    save_corpus(&corpus_path, &data.graph, &docs, data.now)
        .map_err(|e| internal_err(format!("writing corpus: {e}")))?;
    save_click_log(args.out.join("clicks.tsv"), &data.records)
        .map_err(|e| internal_err(format!("writing click log: {e}")))?;
    save_ground_truth(&args.out.join("ground_truth.tsv"), &data.ground_truth)
        .map_err(|e| internal_err(format!("writing ground truth: {e}")))?;
    save_workload(&args.out.join("workload.tsv"), &data.workload)
        .map_err(|e| internal_err(format!("writing workload: {e}")))?;

    println!(
        "generated seed={}: {} persons, {} postings, {} sessions, {} click records, {} ground-truth rows",
        args.seed,
        args.persons,
        args.postings,
        data.session_count,
        data.records.len(),
        data.ground_truth.len(),
    );
    println!("wrote corpus.tsv clicks.tsv ground_truth.tsv workload.tsv to {}", args.out.display());
    Ok(())
}

fn cmd_index(args: IndexArgs) -> CliResult<()> {
    let corpus = read_corpus_file(&args.corpus)?;
    let mut idx = InvertedIndex::new();
    for doc in corpus.docs {
        idx.add_doc(doc)
            .map_err(|e| input_err(format!("corpus doc rejected: {e}")))?;
    }
    idx.save(&args.out)
        .map_err(|e| internal_err(format!("writing index: {e}")))?;
    println!(
        "indexed {} docs, {} terms -> {}",
        idx.doc_count(),
        idx.term_count(),
        args.out.display()
    );
    Ok(())
}

fn keyword_expr(query: &str) -> CliResult<SExpr> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(input_err("query has no searchable tokens"));
    }
    let terms = tokens
        .iter()
        .map(|t| Term::text(t).map(SExpr::Term))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| input_err(format!("bad query token: {e}")))?;
    Ok(SExpr::or(terms))
}

fn cmd_search(args: SearchArgs) -> CliResult<()> {
    let idx = read_index_file(&args.index)?;
    let corpus = read_corpus_file(&args.corpus)?;
    let g = corpus.graph;
    let searcher = NodeId(args.searcher);
    if g.node_kind(searcher) != Some(socsearch_core::graph::NodeKind::Person) {
        return Err(input_err(format!("unknown searcher id {searcher}")));
    }
    let now = args.now.unwrap_or(corpus.now);
    let kw = keyword_expr(&args.query)?;

    let expr = if args.no_rewrite {
        kw
    } else {
        let model = match &args.rewrite_model {
            Some(path) => RewriteModel::load(path)
                .map_err(|e| input_err(format!("rewrite model {}: {e}", path.display())))?,
            None => RewriteModel::keep_all(),
        };
        match rewrite(&g, searcher, kw.clone(), &model, now) {
            Ok(expr) => expr,
            Err(RewriteError::NoConnections) => {
                eprintln!("warning: searcher {searcher} has no scored connections; keyword-only search");
                kw
            }
            Err(e) => return Err(internal_err(format!("rewrite failed: {e}"))),
        }
    };
    println!("query: {expr}");

    let result = execute(&idx, &expr);
    println!(
        "matched {} docs (cost: {} postings, {} terms)",
        result.doc_ids.len(),
        result.cost.postings_touched,
        result.cost.terms_opened
    );

    let docs: Vec<_> = result
        .doc_ids
        .iter()
        .map(|id| idx.doc(*id).expect("executed ids are indexed"))
        .collect();
    let mut ranked: Vec<(NodeId, f64)> = match &args.ranker {
        Some(path) => {
            let model = TwoTowerModel::load(path)
                .map_err(|e| input_err(format!("ranker {}: {e}", path.display())))?;
            rank(&model, &idx, &g, &args.query, searcher, &docs, now)
        }
        None => {
            let mut scored: Vec<(NodeId, f64)> = docs
                .iter()
                .map(|d| (d.id, tr_dense(&idx, &args.query, d).bm25))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored
        }
    };
    ranked.truncate(args.top);
    for (rank_pos, (id, score)) in ranked.iter().enumerate() {
        let title = &idx.doc(*id).expect("ranked ids are indexed").title;
        println!("{:>3}. doc {:<8} score {:<12.6} {}", rank_pos + 1, id, score, title);
    }
    Ok(())
}

fn cmd_train_rewriter(args: TrainRewriterArgs) -> CliResult<()> {
    let rows = load_ground_truth(&args.ground_truth)
        .map_err(|e| input_err(format!("ground truth {}: {e}", args.ground_truth.display())))?;
    let weights =
        train_weights(&rows, args.ridge).map_err(|e| input_err(format!("training failed: {e}")))?;
    let model = RewriteModel {
        weights,
        thresholds: PerPrefix::uniform(args.threshold),
    };
    model
        .save(&args.out)
        .map_err(|e| internal_err(format!("writing model: {e}")))?;
    for class in PrefixClass::ALL {
        let w = model.weights.get(class);
        println!(
            "{}: w=[{:.4}, {:.4}, {:.4}, {:.4}, {:.4}] bias={:.4}",
            class.as_str(),
            w.w[0],
            w.w[1],
            w.w[2],
            w.w[3],
            w.w[4],
            w.bias
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_sweep_tp(args: SweepTpArgs) -> CliResult<()> {
    let idx = read_index_file(&args.index)?;
    let corpus = read_corpus_file(&args.corpus)?;
    let workload = load_workload(&args.workload)
        .map_err(|e| input_err(format!("workload {}: {e}", args.workload.display())))?;
    if workload.is_empty() {
        return Err(input_err("workload is empty"));
    }
    if args.budget <= 0.0 {
        return Err(input_err("budget must be positive"));
    }
    let mut model = RewriteModel::load(&args.model)
        .map_err(|e| input_err(format!("model {}: {e}", args.model.display())))?;
    let rows = match &args.ground_truth {
        Some(path) => load_ground_truth(path)
            .map_err(|e| input_err(format!("ground truth {}: {e}", path.display())))?,
        None => Vec::new(),
    };
    let now = args.now.unwrap_or(corpus.now);

    let outcome = sweep_tp(
        &idx,
        &corpus.graph,
        &workload,
        &model.weights,
        &rows,
        args.budget,
        now,
    );
    model.thresholds = outcome.thresholds;
    let cost = mean_cost(&idx, &corpus.graph, &workload, &model, now);

    if outcome.refined {
        let t = &outcome.thresholds;
        let parts: Vec<String> = PrefixClass::ALL
            .iter()
            .map(|&c| format!("{}={}", c.as_str(), t.get(c)))
            .collect();
        println!("t* = {{{}}}", parts.join(", "));
    } else {
        println!("t* = {}", outcome.uniform_t);
    }
    println!("mean cost {cost:.2} within budget {}", args.budget);
    if outcome.at_floor {
        println!("warning: budget only admits the zero threshold");
    }
    if let Some(out) = &args.out {
        model
            .save(out)
            .map_err(|e| internal_err(format!("writing model: {e}")))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn parse_setting(name: &str) -> CliResult<AblationSetting> {
    AblationSetting::from_name(name)
        .ok_or_else(|| input_err(format!("unknown feature setting {name:?}")))
}

fn cmd_train_ranker(args: TrainRankerArgs) -> CliResult<()> {
    let idx = read_index_file(&args.index)?;
    let records = load_click_log(&args.clicks, &idx)
        .map_err(|e| input_err(format!("click log {}: {e}", args.clicks.display())))?;
    let setting = parse_setting(&args.setting)?;
    let cfg = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut model = TwoTowerModel::new(setting, args.seed);
    let report =
        train(&mut model, &records, &cfg).map_err(|e| input_err(format!("training failed: {e}")))?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {}: mean loss {loss:.6}", i + 1);
    }
    model
        .save(&args.out)
        .map_err(|e| internal_err(format!("writing checkpoint: {e}")))?;
    println!("wrote {} ({} records, setting {})", args.out.display(), records.len(), setting.as_str());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let idx = read_index_file(&args.index)?;
    let records = load_click_log(&args.clicks, &idx)
        .map_err(|e| input_err(format!("click log {}: {e}", args.clicks.display())))?;
    if !(0.0..1.0).contains(&args.train_frac) || args.train_frac <= 0.0 {
        return Err(input_err("train fraction must be in (0, 1)"));
    }
    let settings: Vec<AblationSetting> = if args.settings == "all" {
        AblationSetting::ALL.to_vec()
    } else {
        args.settings
            .split(',')
            .map(parse_setting)
            .collect::<CliResult<Vec<_>>>()?
    };
    let cfg = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let reports = run_ablations(&records, &cfg, args.train_frac)
        .map_err(|e| input_err(format!("ablation failed: {e}")))?;

    println!("{:<14} {:>8} {:>8}", "setting", "auc", "ndcg");
    for r in reports.iter().filter(|r| settings.contains(&r.setting)) {
        println!("{:<14} {:>8.4} {:>8.4}", r.setting.as_str(), r.auc, r.ndcg);
    }
    for r in reports.iter().filter(|r| settings.contains(&r.setting)) {
        println!("auc.{}={:.6}", r.setting.as_str(), r.auc);
        println!("ndcg.{}={:.6}", r.setting.as_str(), r.ndcg);
    }
    Ok(())
}
