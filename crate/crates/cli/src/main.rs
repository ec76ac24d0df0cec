//! `bundlebargain`: generate corpora, run simulations and sweeps, score
//! dialogues, train the agent policy and serve live sessions.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use bundlebargain::corpus::{read_corpus, write_dataset, CorpusError};
use bundlebargain::flow::{generate_corpus, FlowConfig, RuleAgent};
use bundlebargain::policy::{
    demonstrations, imitation_init, log_csv, train, ImitationConfig, PolicyAgent, PolicyError,
    PolicyParams, PpoConfig,
};
use bundlebargain::realize::{ExternalGenerator, ExternalRealizer, ShotBank, TemplateLibrary};
use bundlebargain::reward::{score_dialogue, IntentClassifier, RewardWeights};
use bundlebargain::sim::{corpus_stats, k_sweep, run_episodes, Episode, SimEnv, SimError, TABLE_GRID};
use bundlebargain::{Catalog, CatalogError, NegotiationConfig, Price};
use bundlebargain_service::{AppState, ServiceConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::IoFailure { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "bundlebargain", version, about = "Bundle negotiation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dialogue corpus with train/test/valid splits.
    Generate(GenerateArgs),
    /// Run episodes between the simulated customer and an agent.
    Simulate(SimulateArgs),
    /// Sweep concession rates and report utilities as CSV.
    Sweep(SweepArgs),
    /// Score dialogues from a JSON-lines corpus.
    Score(ScoreArgs),
    /// Train the agent policy.
    Train(TrainArgs),
    /// Serve live negotiation sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct NegotiationArgs {
    #[arg(long, default_value_t = 0.6)]
    k_seller: f64,
    #[arg(long, default_value_t = 0.4)]
    k_buyer: f64,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    /// Price-only rounds before a bundle move is forced.
    #[arg(long, default_value_t = 2)]
    d: u32,
    #[arg(long, default_value_t = 20)]
    max_turns: u32,
}

impl NegotiationArgs {
    fn flow(&self) -> Result<FlowConfig> {
        let n = NegotiationConfig {
            k_seller: self.k_seller,
            k_buyer: self.k_buyer,
            tol: self.tol,
            d: self.d,
            max_turns: self.max_turns,
            ..NegotiationConfig::default()
        };
        n.validate().map_err(config_err)?;
        Ok(FlowConfig::with_negotiation(n))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RealizeMode {
    Template,
    Endpoint,
}

#[derive(Args)]
struct GenerateArgs {
    /// Catalog JSON; the builtin catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "template")]
    realize: RealizeMode,
    /// Text-generation URL for `--realize endpoint`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Seconds to wait for each endpoint call.
    #[arg(long, default_value_t = 30)]
    endpoint_timeout: u64,
    /// train:test:valid proportions.
    #[arg(long, default_value = "80:12:8")]
    ratios: String,
    #[command(flatten)]
    negotiation: NegotiationArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 10)]
    seed: u64,
    /// Trained policy JSON; the rule agent when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Reward weights, four comma-separated numbers.
    #[arg(long, default_value = "0.2,0.2,0.3,0.2")]
    weights: String,
    /// Per-episode CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    negotiation: NegotiationArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated `k_buyer:k_seller` pairs.
    #[arg(long, default_value = "0.2:0.8,0.4:0.6,0.6:0.4,0.8:0.2")]
    grid: String,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// JSON-lines corpus.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "0.2,0.2,0.3,0.2")]
    weights: String,
    /// Divide the combined reward by the weight sum.
    #[arg(long)]
    renormalize: bool,
    /// Seller reserve price. Defaults to 87.5% of each dialogue's list price.
    #[arg(long)]
    pmin: Option<u64>,
    /// Saved intent classifier; one is trained when omitted.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 17)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    clip: f64,
    #[arg(long, default_value_t = 10)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_episodes: usize,
    #[arg(long, default_value_t = 8)]
    update_steps: usize,
    /// Rule-agent dialogues used for the imitation start.
    #[arg(long, default_value_t = 1000)]
    demos: usize,
    #[arg(long, default_value = "0.2,0.2,0.3,0.2")]
    weights: String,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Directory for policy.json and train_log.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Trained policy JSON, enabling `"agent": "policy"` sessions.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// JSON-lines file closed sessions are appended to.
    #[arg(long, default_value = "sessions.jsonl")]
    store: PathBuf,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Idle minutes before a session is closed.
    #[arg(long, default_value_t = 30)]
    expiry_mins: u64,
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => Ok(Catalog::load(p)?),
        None => Ok(Catalog::builtin()),
    }
}

fn parse_weights(s: &str, renormalize: bool) -> Result<RewardWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Config(format!("bad --weights `{s}`: {e}")))?;
    let gamma: [f64; 4] = parts
        .try_into()
        .map_err(|_| CliError::Config(format!("--weights needs four values, got `{s}`")))?;
    let mut w = RewardWeights::new(gamma).map_err(config_err)?;
    w.renormalize = renormalize;
    Ok(w)
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Config(format!("bad --ratios `{s}`: {e}")))?;
    let [a, b, c]: [f64; 3] = parts
        .try_into()
        .map_err(|_| CliError::Config(format!("--ratios needs three values, got `{s}`")))?;
    let total = a + b + c;
    if !(total > 0.0) || [a, b, c].iter().any(|r| *r < 0.0) {
        return Err(CliError::Config(format!("bad --ratios `{s}`")));
    }
    Ok([a / total, b / total, c / total])
}

fn parse_grid(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|cell| {
            let (b, k) = cell
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("grid cell `{cell}` is not k_buyer:k_seller")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Config(format!("grid cell `{cell}`: {e}")))
            };
            Ok((parse(b)?, parse(k)?))
        })
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_policy(path: &Path) -> Result<PolicyParams> {
    if !path.exists() {
        return Err(CliError::Config(format!("policy file {} not found", path.display())));
    }
    Ok(PolicyParams::load(path)?)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let catalog = load_catalog(a.catalog.as_deref())?;
    let flow = a.negotiation.flow()?;
    let ratios = parse_ratios(&a.ratios)?;
    if a.n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    let templates = TemplateLibrary::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let skeletons = generate_corpus(&catalog, a.n, &flow, &mut rng).map_err(config_err)?;
    let corpus = match a.realize {
        RealizeMode::Template => skeletons
            .iter()
            .map(|s| templates.realize_skeleton(s, &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(config_err)?,
        RealizeMode::Endpoint => {
            let url = a
                .endpoint
                .ok_or_else(|| CliError::Config("--realize endpoint needs --endpoint URL".into()))?;
            // few-shot examples come from a separately seeded template corpus
            let mut shot_rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed);
            let pilot = generate_corpus(&catalog, 50, &flow, &mut shot_rng).map_err(config_err)?;
            let pilot_text = pilot
                .iter()
                .map(|s| templates.realize_skeleton(s, &mut shot_rng))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(config_err)?;
            let bank = ShotBank::from_dialogues(pilot.iter().zip(&pilot_text), 4);
            let gen = ExternalGenerator::new(url).with_timeout(Duration::from_secs(a.endpoint_timeout));
            let mut realizer = ExternalRealizer::new(gen, bank);
            let corpus = skeletons
                .iter()
                .map(|s| realizer.realize_skeleton(s, &flow.negotiation, &templates, &mut rng))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(config_err)?;
            if realizer.fallbacks > 0 {
                tracing::warn!(
                    fallback_turns = realizer.fallbacks,
                    endpoint_turns = realizer.external,
                    "some turns were realized from templates"
                );
            }
            corpus
        }
    };
    let stats = corpus_stats(&corpus, a.seed)?;
    let manifest = write_dataset(corpus, &a.out, ratios, a.seed, &catalog)?;
    let stats_json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    let stats_path = a.out.join("stats.json");
    fs::write(&stats_path, stats_json + "\n").map_err(io_err(&stats_path))?;

    println!("dialogues      {}", stats.dialogues);
    println!("utterances     {}", stats.utterances);
    println!("mean turns     {:.2}", stats.mean_turns);
    println!("words/customer {:.2}", stats.mean_words_customer);
    println!("words/agent    {:.2}", stats.mean_words_agent);
    println!("unique words   {}", stats.unique_words);
    match stats.self_bleu1 {
        Some(b) => println!("self-BLEU-1    {b:.4}"),
        None => println!("self-BLEU-1    n/a"),
    }
    println!("accept rate    {:.3}", stats.accept_rate);
    let c = manifest.counts;
    println!("splits         {}/{}/{}", c.train, c.test, c.valid);
    println!("checksum       {}", manifest.checksum);
    Ok(())
}

fn episode_csv(episodes: &[Episode]) -> String {
    let mut out = String::from("episode,accepted,final_price,turns,buyer_utility,seller_utility,reward\n");
    for (i, e) in episodes.iter().enumerate() {
        let m = &e.metrics;
        let price = m.final_price.map(|p| p.0.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{i},{},{price},{},{:.6},{:.6},{:.6}",
            m.accepted, m.turns, m.buyer_utility, m.seller_utility, m.episode_reward
        );
    }
    out
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(CliError::Config("--episodes must be positive".into()));
    }
    let catalog = load_catalog(a.catalog.as_deref())?;
    let flow = a.negotiation.flow()?;
    let weights = parse_weights(&a.weights, false)?;
    let policy = a.policy.as_deref().map(load_policy).transpose()?;
    let (env, _) = SimEnv::standard(&catalog, flow, weights, a.seed)?;
    let episodes = match &policy {
        Some(p) => run_episodes(&env, a.episodes, a.seed, || PolicyAgent::new(p))?,
        None => run_episodes(&env, a.episodes, a.seed, || RuleAgent::new(env.flow.table()))?,
    };
    let n = episodes.len() as f64;
    let mean = |f: fn(&Episode) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    eprintln!(
        "episodes {} accept_rate {:.3} mean_reward {:.4} buyer_utility {:.4} seller_utility {:.4}",
        episodes.len(),
        mean(|e| e.metrics.accepted as u8 as f64),
        mean(|e| e.metrics.episode_reward),
        mean(|e| e.metrics.buyer_utility),
        mean(|e| e.metrics.seller_utility),
    );
    emit(a.out.as_deref(), &episode_csv(&episodes))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let grid = if a.grid.trim().is_empty() {
        TABLE_GRID.to_vec()
    } else {
        parse_grid(&a.grid)?
    };
    if a.episodes == 0 {
        return Err(CliError::Config("--episodes must be positive".into()));
    }
    let catalog = load_catalog(a.catalog.as_deref())?;
    let result = k_sweep(&grid, a.episodes, &FlowConfig::default(), &catalog.bundles(), a.seed)?;
    emit(a.out.as_deref(), &result.to_csv())
}

fn score(a: ScoreArgs) -> Result<()> {
    let weights = parse_weights(&a.weights, a.renormalize)?;
    let corpus = read_corpus(&a.input)?;
    if corpus.is_empty() {
        return Err(CliError::Config(format!("{} holds no dialogues", a.input.display())));
    }
    let classifier = match &a.classifier {
        Some(p) => IntentClassifier::load(p).map_err(config_err)?,
        None => {
            let (env, _) = SimEnv::standard(&Catalog::builtin(), FlowConfig::default(), weights, a.seed)?;
            env.classifier
        }
    };
    let mut out = String::from("id,turns,outcome,initial_price,final_price,pmin,r2,r3,total\n");
    for d in &corpus {
        let pmin = a
            .pmin
            .map(Price)
            .unwrap_or_else(|| Price::round_half_up(d.bundle.price().as_f64() * 0.875));
        let s = score_dialogue(d, &classifier, &weights, pmin)
            .map_err(|e| CliError::Config(format!("dialogue {}: {e}", d.id)))?;
        let last = s.turns.last().map(|(_, b)| *b).expect("a scored dialogue has agent turns");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let status = match d.outcome.status {
            bundlebargain::OutcomeStatus::Accepted => "accepted",
            bundlebargain::OutcomeStatus::Rejected => "rejected",
        };
        let _ = writeln!(
            out,
            "{},{},{status},{},{},{},{},{},{:.6}",
            d.id,
            d.turns.len(),
            s.initial_price.0,
            s.final_price.0,
            pmin.0,
            opt(last.r2),
            opt(last.r3),
            s.total
        );
    }
    emit(a.out.as_deref(), &out)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = PpoConfig {
        clip: a.clip,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_episodes: a.batch_episodes,
        update_steps: a.update_steps,
        seed: a.seed,
    };
    cfg.validate()?;
    if a.demos == 0 {
        return Err(CliError::Config("--demos must be positive".into()));
    }
    let weights = parse_weights(&a.weights, false)?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let flow = FlowConfig::default();
    let (env, report) = SimEnv::standard(&catalog, flow.clone(), weights, a.seed)?;
    tracing::info!(accuracy = report.heldout_accuracy, "intent classifier trained");
    let demos = demonstrations(&catalog, &flow, a.demos, a.seed)?;
    let (init, im) = imitation_init(
        &demos,
        &ImitationConfig {
            seed: a.seed,
            ..ImitationConfig::default()
        },
    )?;
    tracing::info!(decision_accuracy = im.decision_accuracy, "imitation start fitted");
    let (policy, log) = train(&env, &cfg, &init)?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let policy_path = a.out.join("policy.json");
    policy.save(&policy_path)?;
    let log_path = a.out.join("train_log.csv");
    fs::write(&log_path, log_csv(&log)).map_err(io_err(&log_path))?;
    println!("policy  {}", policy_path.display());
    println!("log     {}", log_path.display());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let catalog = load_catalog(a.catalog.as_deref())?;
    let policy = a.policy.as_deref().map(load_policy).transpose()?;
    let mut cfg = ServiceConfig::standard(catalog, FlowConfig::default(), a.seed).map_err(CliError::Config)?;
    cfg.policy = policy;
    cfg.store = Some(a.store);
    cfg.expiry = Duration::from_secs(a.expiry_mins * 60);
    cfg.seed = Some(a.seed);
    let state = AppState::new(cfg);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{local}");
        bundlebargain_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("interrupt received, shutting down");
        })
        .await
        .map_err(|e| CliError::Io(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let res = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Score(a) => score(a),
        Command::Train(a) => train_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Config(m) => format!("error: {m}"),
                CliError::Io(m) => format!("i/o error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(e.code())
        }
    }
}
