//! `retouch` command-line tool.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use retouch_core::agents::{AgentBackendConfig, HttpChatBackend};
use retouch_core::evaluation::{build_reference_pairs, EvalError, MetricReport};
use retouch_core::filters::execute_program;
use retouch_core::orchestrator::{run_session, AgentKind, Agents, ScoreKind, SessionConfig, SessionError};
use retouch_core::program::parse_program_any;
use retouch_core::raster::{load_image, load_image_detailed, save_image, ImageBuffer};
use retouch_core::scoring::{DistributionProvider, EmbeddingProvider, HttpEmbeddingBackend, PromptSet, PromptSetKind, StatsProvider};
use retouch_service::{AgentResolver, AppState};

const EMBED_TIMEOUT: Duration = Duration::from_secs(60);
const EMBED_MAX_SIDE: usize = 224;

#[derive(Parser)]
#[command(name = "retouch", version, about = "White-box iterative photo retouching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Retouch a source image toward reference images.
    Run(RunArgs),
    /// Apply a saved program to an image.
    Apply(ApplyArgs),
    /// PSNR, SSIM and ΔE between a prediction and its ground truth.
    Eval(EvalArgs),
    /// Pick the most style-similar references for every image in a directory.
    Pairs(PairsArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    ClipKlGlobal,
    ClipKlAll,
    RgbHist,
    YuvHist,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::ClipKlGlobal => ScoreKind::ClipKlGlobal,
            ScoreArg::ClipKlAll => ScoreKind::ClipKlAll,
            ScoreArg::RgbHist => ScoreKind::RgbHist,
            ScoreArg::YuvHist => ScoreKind::YuvHist,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Rule,
    Chat,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptArg {
    Global,
    All,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Joint image-text embedding service; without it prompt scores use image statistics.
    #[arg(long, env = "RETOUCH_EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
    /// Chat-completion endpoint for the chat agents.
    #[arg(long, env = "RETOUCH_CHAT_ENDPOINT")]
    chat_endpoint: Option<String>,
    /// Chat model name.
    #[arg(long)]
    model: Option<String>,
}

impl BackendArgs {
    fn provider(&self) -> Arc<dyn DistributionProvider> {
        match &self.embed_endpoint {
            Some(url) => Arc::new(EmbeddingProvider::new(HttpEmbeddingBackend::new(url.clone(), EMBED_TIMEOUT, EMBED_MAX_SIDE))),
            None => Arc::new(StatsProvider),
        }
    }

    fn chat_config(&self) -> AgentBackendConfig {
        let mut config = AgentBackendConfig::default();
        if let Some(endpoint) = &self.chat_endpoint {
            config.endpoint = endpoint.clone();
        }
        if let Some(model) = &self.model {
            config.model = model.clone();
        }
        config
    }

    fn agents(&self, kind: AgentKind) -> Result<Agents, String> {
        match kind {
            AgentKind::Rule => Ok(Agents::rule()),
            AgentKind::Chat => {
                let config = self.chat_config();
                config.validate().map_err(|e| e.to_string())?;
                let temperatures = config.temperatures;
                let backend = HttpChatBackend::from_env(config).map_err(|e| e.to_string())?;
                Ok(Agents::chat(Arc::new(backend), temperatures))
            }
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    source: PathBuf,
    /// Reference image; repeat for each (five expected).
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    candidates: usize,
    #[arg(long, value_enum, default_value = "clip-kl-global")]
    score: ScoreArg,
    #[arg(long, value_enum, default_value = "rule")]
    agent: AgentArg,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "out.png")]
    out: PathBuf,
    #[arg(long)]
    program_out: Option<PathBuf>,
    /// Directory for the final image, program and transcript.
    #[arg(long)]
    session_out: Option<PathBuf>,
    #[arg(long)]
    no_warm_start: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ApplyArgs {
    /// Program as JSON or as filter calls.
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    prompts: PromptArg,
    #[arg(long, env = "RETOUCH_EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Mirror every session into this directory.
    #[arg(long)]
    persist: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Apply(args) => cmd_apply(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pairs(args) => cmd_pairs(args),
        Command::Serve(args) => cmd_serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("retouch: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = SessionConfig {
        max_iters: args.iters,
        n_candidates: args.candidates,
        n_refs: args.refs.len(),
        score: args.score.into(),
        agent: match args.agent {
            AgentArg::Rule => AgentKind::Rule,
            AgentArg::Chat => AgentKind::Chat,
        },
        warm_start: !args.no_warm_start,
        seed: args.seed,
        ..SessionConfig::default()
    };
    config.validate().map_err(|e| fail(2, e.to_string()))?;
    if args.refs.len() != 5 {
        log::warn!("{} reference images given, five expected", args.refs.len());
    }
    let agents = args.backend.agents(config.agent).map_err(|e| fail(2, e))?;
    let source = load_image_detailed(&args.source).map_err(|e| fail(2, e.to_string()))?;
    let refs = args
        .refs
        .iter()
        .map(load_image)
        .collect::<Result<Vec<ImageBuffer>, _>>()
        .map_err(|e| fail(2, e.to_string()))?;
    let scorer = config.score.scorer(args.backend.provider());
    let result = run_session(source.image, refs, config, &agents, &scorer).map_err(|e| match e {
        e if e.is_backend() => fail(3, e.to_string()),
        e @ SessionError::Io(_) => fail(1, e.to_string()),
        e => fail(2, e.to_string()),
    })?;
    save_image(&result.final_image, &args.out, source.bit_depth).map_err(|e| fail(1, e.to_string()))?;
    if let Some(path) = &args.program_out {
        write_text(path, &result.program.to_json_pretty())?;
    }
    if let Some(dir) = &args.session_out {
        result.session.export(dir, source.bit_depth).map_err(|e| fail(1, e.to_string()))?;
    }
    let summary = json!({
        "status": result.session.status(),
        "iterations": result.session.history().len(),
        "score": result.session.current_score().ok().flatten(),
        "program": result.program,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_apply(args: ApplyArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.program).map_err(|e| fail(1, format!("{}: {e}", args.program.display())))?;
    let program = parse_program_any(&text).map_err(|e| fail(2, format!("{}: {e}", args.program.display())))?;
    let input = load_image_detailed(&args.input).map_err(|e| fail(1, e.to_string()))?;
    let output = execute_program(&input.image, &program).map_err(|e| fail(2, e.to_string()))?;
    save_image(&output, &args.output, input.bit_depth).map_err(|e| fail(1, e.to_string()))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let pred = load_image(&args.pred).map_err(|e| fail(1, e.to_string()))?;
    let gt = load_image(&args.gt).map_err(|e| fail(1, e.to_string()))?;
    let report = MetricReport::compute(&pred, &gt).map_err(|e| fail(1, e.to_string()))?;
    println!("{}", serde_json::to_string(&report).expect("plain numbers"));
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| fail(1, format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_pairs(args: PairsArgs) -> Result<(), Failure> {
    let files = image_files(&args.dir)?;
    let dataset = files
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(1, e.to_string()))?;
    let provider: Arc<dyn DistributionProvider> = match &args.embed_endpoint {
        Some(url) => Arc::new(EmbeddingProvider::new(HttpEmbeddingBackend::new(url.clone(), EMBED_TIMEOUT, EMBED_MAX_SIDE))),
        None => Arc::new(StatsProvider),
    };
    let prompts = PromptSet::new(match args.prompts {
        PromptArg::Global => PromptSetKind::GlobalOnly,
        PromptArg::All => PromptSetKind::AllFilters,
    });
    let pairs = build_reference_pairs(&dataset, provider.as_ref(), &prompts, args.m).map_err(|e| match e {
        EvalError::Scoring(e) => fail(3, e.to_string()),
        e => fail(1, e.to_string()),
    })?;
    let name = |i: usize| files[i].file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let doc: Vec<_> = pairs
        .iter()
        .enumerate()
        .map(|(i, refs)| json!({ "source": name(i), "refs": refs.iter().map(|&j| name(j)).collect::<Vec<_>>() }))
        .collect();
    let text = serde_json::to_string_pretty(&doc).expect("strings only");
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let backend = args.backend.clone();
    let resolver: AgentResolver = Arc::new(move |kind| backend.agents(kind));
    let state = AppState::new(args.backend.provider(), resolver, args.persist.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail(1, e.to_string()))?;
    let addr = SocketAddr::new(args.host, args.port);
    eprintln!("retouch: serving on http://{addr}");
    runtime.block_on(retouch_service::serve(addr, state)).map_err(|e| fail(1, format!("{addr}: {e}")))
}
