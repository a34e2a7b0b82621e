use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::{info, warn};

use radar::{publish, router, router_with_static, shared, Config, Shared};
use radar_core::classifier::{format_instances, parse_instances, LogRegModel, LogRegParams, FEATURE_COUNT};
use radar_core::engine::{DetectionMode, Engine};
use radar_core::ingest::{read_stream_file, Stopwords, Tweet};
use radar_core::persist::{load_events, load_state, save_state};
use radar_core::store::{Area, EventQuery};
use radar_core::synth::{PlantedBurst, SynthParams, SynthStream};

#[derive(Parser)]
#[command(name = "radar", version, about = "Local event detection over geo-tagged tweet streams")]
struct Cli {
    /// TOML config file; falls back to $RADAR_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a stream through the detector, optionally serving the HTTP API.
    Run(RunArgs),
    /// Run incremental and batch detection side by side and print per-shift timings as CSV.
    Bench(BenchArgs),
    /// Query the events saved in a state directory.
    Query(QueryArgs),
    /// Replay a stream and write the engine state to a directory.
    Save(SaveArgs),
    /// Restore an engine from a state directory, optionally continue a stream and serve.
    Load(LoadArgs),
    /// Write a synthetic stream with planted bursts.
    Synth(SynthArgs),
    /// Train the event classifier.
    Train(TrainArgs),
}

#[derive(Args, Clone, Default)]
struct EngineFlags {
    /// Tweet stream, one JSON record per line.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Older tweets used to warm up the keyword graph, embedding and timeline.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    window_hours: Option<f64>,
    #[arg(long)]
    step_minutes: Option<f64>,
    /// Stopword file, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Classifier weights written by `radar train`.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, value_parser = ["incremental", "batch"])]
    mode: Option<String>,
}

#[derive(Args)]
struct ServeFlags {
    /// Serve the HTTP API on this address and keep serving after the replay.
    #[arg(long)]
    listen: Option<String>,
    /// Directory of static files served under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineFlags,
    #[command(flatten)]
    serve: ServeFlags,
    /// Save the final state here.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long)]
    max_shifts: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineFlags,
    #[arg(long, default_value_t = 20)]
    shifts: usize,
    /// Shifts to run before timing starts.
    #[arg(long, default_value_t = 0)]
    skip: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    from: u64,
    #[arg(long, default_value_t = u64::MAX)]
    to: u64,
    #[arg(long)]
    keyword: Option<String>,
    #[arg(long, requires_all = ["lon", "radius_m"])]
    lat: Option<f64>,
    #[arg(long, requires_all = ["lat", "radius_m"])]
    lon: Option<f64>,
    #[arg(long, requires_all = ["lat", "lon"])]
    radius_m: Option<f64>,
}

#[derive(Args)]
struct SaveArgs {
    #[command(flatten)]
    engine: EngineFlags,
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long)]
    max_shifts: Option<usize>,
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    state_dir: Option<PathBuf>,
    /// Continue with the tweets of this stream that follow the saved window.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[command(flatten)]
    serve: ServeFlags,
    /// Write the state back after continuing.
    #[arg(long)]
    save: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted bursts as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    tweets: Option<usize>,
    #[arg(long)]
    bursts: Option<usize>,
    /// Prefix for tweet ids.
    #[arg(long)]
    id_prefix: Option<String>,
    /// Write a burst-free stream covering this many hours before the main one.
    #[arg(long, requires = "history_out")]
    history_hours: Option<f64>,
    #[arg(long)]
    history_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    engine: EngineFlags,
    /// Planted bursts written by `radar synth --truth`; labels come from them.
    #[arg(long, conflicts_with = "instances")]
    truth: Option<PathBuf>,
    /// Labeled instances, one `label,f1,...,f8` line each.
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Write the labeled instances gathered from the stream.
    #[arg(long)]
    instances_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Run(a) => cmd_run(config, a),
        Command::Bench(a) => cmd_bench(config, a),
        Command::Query(a) => cmd_query(config, a),
        Command::Save(a) => cmd_save(config, a),
        Command::Load(a) => cmd_load(config, a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(config, a),
    }
}

fn apply(mut config: Config, flags: &EngineFlags) -> Result<Config> {
    if let Some(p) = &flags.stream {
        config.stream = Some(p.clone());
    }
    if let Some(p) = &flags.history {
        config.history = Some(p.clone());
    }
    if let Some(p) = &flags.stopwords {
        config.stopwords = Some(p.clone());
    }
    if let Some(p) = &flags.classifier {
        config.classifier = Some(p.clone());
    }
    if let Some(h) = flags.window_hours {
        config.engine.window_s = (h * 3600.0).round() as u64;
    }
    if let Some(m) = flags.step_minutes {
        config.engine.step_s = (m * 60.0).round() as u64;
    }
    if let Some(m) = &flags.mode {
        config.engine.mode = if m == "batch" { DetectionMode::Batch } else { DetectionMode::Incremental };
    }
    config.engine.validate().context("invalid engine settings")?;
    Ok(config)
}

fn stopwords(path: Option<&Path>) -> Result<Stopwords> {
    match path {
        Some(p) => Stopwords::load(p).with_context(|| format!("reading stopwords {}", p.display())),
        None => Ok(Stopwords::default()),
    }
}

fn read_tweets(path: &Path, stop: &Stopwords) -> Result<Vec<Arc<Tweet>>> {
    let (tweets, stats) = read_stream_file(path, stop).with_context(|| format!("reading stream {}", path.display()))?;
    info!(path = %path.display(), accepted = stats.accepted, rejected = stats.rejected(), "stream loaded");
    Ok(tweets)
}

fn classifier(config: &Config) -> Result<LogRegModel> {
    match &config.classifier {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading classifier {}", p.display()))?;
            Ok(LogRegModel::from_text(&text)?)
        }
        None => {
            warn!("no classifier given; every candidate with history scores 0.5");
            Ok(LogRegModel::zeros(FEATURE_COUNT))
        }
    }
}

/// A fresh engine, primed with the configured history, positioned before
/// the first tweet of `stream`.
fn build_engine(config: &Config, model: LogRegModel, stream: &[Arc<Tweet>], stop: &Stopwords) -> Result<Engine> {
    let history = match &config.history {
        Some(p) => read_tweets(p, stop)?,
        None => Vec::new(),
    };
    let origin = history.first().or(stream.first()).map_or(0, |t| t.timestamp);
    let mut engine = Engine::new(config.engine.clone(), model, origin)?;
    if !history.is_empty() {
        engine.prime(&history)?;
        if stream.first().is_some_and(|t| t.timestamp < engine.window().end()) {
            bail!("the stream starts before the history ends");
        }
    }
    Ok(engine)
}

fn stream_of(config: &Config, stop: &Stopwords) -> Result<Vec<Arc<Tweet>>> {
    match &config.stream {
        Some(p) => read_tweets(p, stop),
        None => bail!("no stream given (use --stream or `stream` in the config file)"),
    }
}

fn replay(engine: &mut Engine, stream: &[Arc<Tweet>], max_shifts: Option<usize>, shared: Option<&Shared>) -> Result<()> {
    let mut done = 0;
    while !engine.exhausted(stream) && max_shifts.is_none_or(|m| done < m) {
        let r = engine.step_stream(stream)?;
        done += 1;
        if let Some(s) = shared {
            publish(s, engine);
        }
        info!(
            shift = r.shift,
            window_end = r.window_end,
            tweets = r.window_tweets,
            candidates = r.candidates,
            events = r.events,
            ms = r.timings.maintenance.as_secs_f64() * 1e3 + r.timings.detection().as_secs_f64() * 1e3,
            "shift"
        );
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Replays on a blocking thread while serving, then serves until Ctrl-C.
fn serve_during(
    serve: &ServeFlags,
    config: &Config,
    engine: Engine,
    work: impl FnOnce(&mut Engine, &Shared) -> Result<()> + Send + 'static,
) -> Result<Engine> {
    let addr = serve.listen.clone().unwrap_or_else(|| config.listen.clone());
    let addr: SocketAddr = addr.parse().with_context(|| format!("bad listen address {addr}"))?;
    let state = shared(&engine);
    let app = match serve.static_dir.as_ref().or(config.static_dir.as_ref()) {
        Some(dir) => router_with_static(state.clone(), dir),
        None => router(state.clone()),
    };
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!(%addr, "serving");
        let server = tokio::spawn(async move { axum::serve(listener, app).await });
        let worker_state = state.clone();
        let engine = tokio::task::spawn_blocking(move || {
            let mut engine = engine;
            work(&mut engine, &worker_state).map(|_| engine)
        })
        .await??;
        publish(&state, &engine);
        info!("replay finished; press Ctrl-C to stop");
        tokio::select! {
            r = server => { r??; }
            r = tokio::signal::ctrl_c() => { r?; }
        }
        Ok(engine)
    })
}

fn print_status(engine: &Engine) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&engine.status())?);
    Ok(())
}

fn cmd_run(config: Config, a: RunArgs) -> Result<()> {
    let config = apply(config, &a.engine)?;
    let stop = stopwords(config.stopwords.as_deref())?;
    let stream = stream_of(&config, &stop)?;
    let engine = build_engine(&config, classifier(&config)?, &stream, &stop)?;
    let state_dir = a.state_dir.or(config.state_dir.clone());
    let max = a.max_shifts;
    let engine = if a.serve.listen.is_some() {
        serve_during(&a.serve, &config, engine, move |e, s| replay(e, &stream, max, Some(s)))?
    } else {
        let mut engine = engine;
        replay(&mut engine, &stream, max, None)?;
        engine
    };
    if let Some(dir) = state_dir {
        save_state(&engine, &dir)?;
        info!(dir = %dir.display(), "state saved");
    }
    print_status(&engine)
}

fn cmd_bench(config: Config, a: BenchArgs) -> Result<()> {
    let config = apply(config, &a.engine)?;
    let stop = stopwords(config.stopwords.as_deref())?;
    let stream = stream_of(&config, &stop)?;
    let model = classifier(&config)?;
    let mut inc_cfg = config.clone();
    inc_cfg.engine.mode = DetectionMode::Incremental;
    let mut bat_cfg = config.clone();
    bat_cfg.engine.mode = DetectionMode::Batch;
    let mut inc = build_engine(&inc_cfg, model.clone(), &stream, &stop)?;
    let mut bat = build_engine(&bat_cfg, model, &stream, &stop)?;
    for _ in 0..a.skip {
        if inc.exhausted(&stream) {
            break;
        }
        inc.step_stream(&stream)?;
        bat.step_stream(&stream)?;
    }
    println!("shift,window_end,window_tweets,inserted,removed,churn,incremental_ms,batch_ms,ratio,identical");
    let (mut ti, mut tb) = (0.0, 0.0);
    let started = Instant::now();
    for _ in 0..a.shifts {
        if inc.exhausted(&stream) {
            break;
        }
        let ri = inc.step_stream(&stream)?;
        let rb = bat.step_stream(&stream)?;
        let same = inc.assignments() == bat.assignments() && inc.last_candidates() == bat.last_candidates();
        let (i_ms, b_ms) = (ri.timings.detection().as_secs_f64() * 1e3, rb.timings.detection().as_secs_f64() * 1e3);
        ti += i_ms;
        tb += b_ms;
        let churn = (ri.inserted + ri.removed) as f64 / ri.window_tweets.max(1) as f64;
        println!(
            "{},{},{},{},{},{churn:.4},{i_ms:.3},{b_ms:.3},{:.4},{same}",
            ri.shift,
            ri.window_end,
            ri.window_tweets,
            ri.inserted,
            ri.removed,
            if b_ms > 0.0 { i_ms / b_ms } else { 0.0 }
        );
    }
    info!(
        ratio = if tb > 0.0 { ti / tb } else { 0.0 },
        seconds = started.elapsed().as_secs_f64(),
        "bench finished"
    );
    Ok(())
}

fn state_dir(explicit: Option<PathBuf>, config: &Config) -> Result<PathBuf> {
    explicit
        .or(config.state_dir.clone())
        .context("no state directory given (use --state-dir or `state_dir` in the config file)")
}

fn cmd_query(config: Config, a: QueryArgs) -> Result<()> {
    let dir = state_dir(a.state_dir, &config)?;
    let store = load_events(&dir)?;
    let area = match (a.lat, a.lon, a.radius_m) {
        (Some(lat), Some(lon), Some(radius_m)) => Some(Area { lat, lon, radius_m }),
        _ => None,
    };
    let q = EventQuery {
        from: a.from,
        to: a.to,
        keyword: a.keyword,
        area,
    };
    let hits = store.query(&q)?;
    println!("{}", serde_json::to_string_pretty(&hits)?);
    eprintln!("{} events", hits.len());
    Ok(())
}

fn cmd_save(config: Config, a: SaveArgs) -> Result<()> {
    let config = apply(config, &a.engine)?;
    let dir = state_dir(a.state_dir, &config)?;
    let stop = stopwords(config.stopwords.as_deref())?;
    let stream = stream_of(&config, &stop)?;
    let mut engine = build_engine(&config, classifier(&config)?, &stream, &stop)?;
    replay(&mut engine, &stream, a.max_shifts, None)?;
    save_state(&engine, &dir)?;
    info!(dir = %dir.display(), "state saved");
    print_status(&engine)
}

fn cmd_load(config: Config, a: LoadArgs) -> Result<()> {
    let dir = state_dir(a.state_dir, &config)?;
    let engine = load_state(&dir).with_context(|| format!("loading state from {}", dir.display()))?;
    info!(dir = %dir.display(), shifts = engine.status().shifts, "state loaded");
    let stream = match a.stream.or(config.stream.clone()) {
        Some(p) => {
            let stop = stopwords(a.stopwords.as_deref().or(config.stopwords.as_deref()))?;
            let end = engine.window().end();
            read_tweets(&p, &stop)?.into_iter().filter(|t| t.timestamp >= end).collect()
        }
        None => Vec::new(),
    };
    let engine = if a.serve.listen.is_some() {
        serve_during(&a.serve, &config, engine, move |e, s| replay(e, &stream, None, Some(s)))?
    } else {
        let mut engine = engine;
        replay(&mut engine, &stream, None, None)?;
        engine
    };
    if a.save {
        save_state(&engine, &dir)?;
    }
    print_status(&engine)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthParams::default();
    let mut p = SynthParams {
        seed: a.seed.unwrap_or(defaults.seed),
        bursts: a.bursts.unwrap_or(defaults.bursts),
        ..defaults.clone()
    };
    if let Some(h) = a.hours {
        p.duration_s = (h * 3600.0).round() as u64;
        if a.tweets.is_none() {
            p.background_tweets = (defaults.background_tweets as f64 * p.duration_s as f64 / defaults.duration_s as f64) as usize;
        }
    }
    if let Some(n) = a.tweets {
        p.background_tweets = n;
    }
    if let Some(prefix) = a.id_prefix {
        p.id_prefix = prefix;
    }
    let s = SynthStream::generate(&p);
    fs::write(&a.out, s.to_records())?;
    if let Some(path) = a.truth {
        fs::write(path, serde_json::to_string_pretty(&s.bursts)?)?;
    }
    if let (Some(h), Some(path)) = (a.history_hours, a.history_out) {
        let hist = SynthStream::generate(&p.history((h * 3600.0).round() as u64));
        fs::write(path, hist.to_records())?;
    }
    eprintln!("{} tweets, {} bursts", s.tweets.len(), s.bursts.len());
    Ok(())
}

fn cmd_train(config: Config, a: TrainArgs) -> Result<()> {
    let config = apply(config, &a.engine)?;
    let instances = match (&a.instances, &a.truth) {
        (Some(path), _) => parse_instances(&fs::read_to_string(path)?)?,
        (None, Some(truth)) => {
            let stop = stopwords(config.stopwords.as_deref())?;
            let tweets = stream_of(&config, &stop)?;
            let bursts: Vec<PlantedBurst> = serde_json::from_str(&fs::read_to_string(truth)?)?;
            let labelled = SynthStream::from_parts(tweets, bursts);
            let mut engine = build_engine(&config, LogRegModel::zeros(FEATURE_COUNT), &labelled.tweets, &stop)?;
            let mut out = Vec::new();
            while !engine.exhausted(&labelled.tweets) {
                engine.step_stream(&labelled.tweets)?;
                for c in engine.last_candidates() {
                    if let Some(f) = &c.features {
                        let planted = labelled.majority_burst(c.candidate.members.iter().map(|t| t.id.as_str())).is_some();
                        out.push((f.to_array().to_vec(), planted));
                    }
                }
            }
            out
        }
        (None, None) => bail!("give --instances, or --stream with --truth"),
    };
    if let Some(path) = &a.instances_out {
        fs::write(path, format_instances(&instances))?;
    }
    let defaults = LogRegParams::default();
    let params = LogRegParams {
        l2: a.l2.unwrap_or(defaults.l2),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        ..defaults
    };
    let mut model = LogRegModel::train(&instances, &params)?;
    model.threshold = config.engine.threshold;
    let correct = instances.iter().filter(|(x, y)| model.classify(x).map(|r| r.1 == *y).unwrap_or(false)).count();
    fs::write(&a.out, model.to_text())?;
    eprintln!(
        "{} instances, training accuracy {:.3}, model written to {}",
        instances.len(),
        correct as f64 / instances.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}
