use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use deepwolf::agent::load_pools;
use deepwolf::augment::{augment_dataset, augment_sliced, balance_sides, read_export, write_export, TrainingExample};
use deepwolf::engine::{GameConfig, PlayerId, Role, RoleMap};
use deepwolf::eval::{compute_win_rates, export_table, run_matches, MatchSpec, TableFormat};
use deepwolf::logfmt::{load_record, load_records_dir, parse, project, save_record, GameRecord, LogError};
use deepwolf::oracle::{train_baseline, OracleKey, OracleRegistry, TrainParams};
use deepwolf::replay::{replay_events, replay_record};
use deepwolf::server::{serve, GameService, RecordStore};
use deepwolf::sim::{game_seed, play_game, PolicySpec, Resources};

#[derive(Parser)]
#[command(name = "deepwolf", version, about = "Five-player Werewolf: server, simulator, dataset tools, trainer, evaluator")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the game server.
    Serve(ServeArgs),
    /// Play games between scripted or agent seats and save the records.
    Simulate(SimulateArgs),
    /// Dataset tools over saved records.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train one baseline model per (role, seat) found in an export.
    TrainBaseline(TrainArgs),
    /// Run a match spec and print its win-rate table.
    Eval(EvalArgs),
    /// Check a game log against the rules and report the outcome.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct PolicyDirs {
    /// Directory of `<role>.txt` candidate pools.
    #[arg(long)]
    pools_dir: Option<PathBuf>,
    /// Directory of `<role>-<n>.bin` baseline models.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    /// Score with a remote model server instead of local models.
    #[arg(long, conflicts_with = "models_dir")]
    oracle_url: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 7070)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    dirs: PolicyDirs,
    /// Seconds before a phase times out.
    #[arg(long, default_value_t = 600)]
    session_timeout: u64,
    /// Where finished games are written.
    #[arg(long, default_value = "records")]
    records_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    games: usize,
    /// Output directory for `.log` / `.json` records.
    #[arg(long)]
    out: PathBuf,
    /// Five comma-separated policies: agent, random-legal, first-candidate.
    #[arg(long, default_value = "random-legal,random-legal,random-legal,random-legal,random-legal")]
    policies: String,
    #[command(flatten)]
    dirs: PolicyDirs,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Print one seat's masked view of a record.
    Project {
        /// A `.json` manifest.
        record: PathBuf,
        #[arg(long)]
        player: u8,
        /// Keep only the first N events.
        #[arg(long)]
        upto: Option<usize>,
    },
    /// Count the examples augmentation would produce.
    Augment(DatasetArgs),
    /// Write augmented examples as JSON lines.
    Export {
        #[command(flatten)]
        args: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DatasetArgs {
    /// Directory of `.json` manifests.
    #[arg(long)]
    records: PathBuf,
    /// One example per decision point instead of per whole game.
    #[arg(long)]
    slice: bool,
    /// Drop records until both sides have the same number of wins.
    #[arg(long)]
    balance_sides: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON-lines export.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Step size relative to the mean squared feature norm.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Feature dimension, a power of two.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Match spec (`.toml` or `.json`).
    #[arg(long)]
    spec: PathBuf,
    /// Table destination; format follows the extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save every game record here.
    #[arg(long)]
    records_out: Option<PathBuf>,
    #[arg(long)]
    oracle_url: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// A `.log` text log or a `.json` manifest.
    path: PathBuf,
    /// Roles for a text log, e.g. `1=seer,2=villager,3=werewolf,4=villager,5=betrayer`.
    /// Defaults to `<stem>.roles.json` next to the log.
    #[arg(long)]
    roles: Option<String>,
}

enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Validation(e.to_string())
}

fn io(e: impl ToString) -> Failure {
    Failure::Io(e.to_string())
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    let seed = cli.seed.unwrap_or(0);
    let result = match cli.command {
        Command::Serve(a) => cmd_serve(a),
        Command::Simulate(a) => cmd_simulate(a, seed),
        Command::Dataset(d) => cmd_dataset(d, seed),
        Command::TrainBaseline(a) => cmd_train(a, seed),
        Command::Eval(a) => cmd_eval(a, cli.seed),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn load_resources(
    pools_dir: Option<&Path>,
    models_dir: Option<&Path>,
    oracle_url: Option<&str>,
) -> Result<Resources, Failure> {
    let pools = match pools_dir {
        Some(dir) => load_pools(dir).map_err(io)?,
        None => Default::default(),
    };
    let oracles = match (models_dir, oracle_url) {
        (_, Some(url)) => OracleRegistry::remote(url, Default::default()),
        (Some(dir), None) => OracleRegistry::load_dir(dir).map_err(invalid)?,
        (None, None) => OracleRegistry::new(),
    };
    log::info!("{} pools, {} oracles loaded", pools.len(), oracles.len());
    Ok(Resources { pools, oracles })
}

fn cmd_serve(a: ServeArgs) -> CliResult {
    let res = load_resources(a.dirs.pools_dir.as_deref(), a.dirs.models_dir.as_deref(), a.dirs.oracle_url.as_deref())?;
    let service = Arc::new(GameService::new(
        Arc::new(res),
        Some(RecordStore::new(a.records_dir)),
        Duration::from_secs(a.session_timeout),
    ));
    println!("serving on {}:{}", a.host, a.port);
    serve(service, (a.host.as_str(), a.port)).map_err(io)
}

fn parse_policies(s: &str) -> Result<[PolicySpec; 5], Failure> {
    let list: Vec<PolicySpec> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(invalid)?;
    list.try_into()
        .map_err(|v: Vec<PolicySpec>| invalid(format!("need 5 policies, got {}", v.len())))
}

fn cmd_simulate(a: SimulateArgs, seed: u64) -> CliResult {
    let policies = parse_policies(&a.policies)?;
    let res = load_resources(a.dirs.pools_dir.as_deref(), a.dirs.models_dir.as_deref(), a.dirs.oracle_url.as_deref())?;
    let records: Vec<GameRecord> = (0..a.games as u64)
        .into_par_iter()
        .map(|i| play_game(GameConfig::seeded(game_seed(seed, i)), &policies, &res))
        .collect::<Result<_, _>>()
        .map_err(invalid)?;
    for (i, r) in records.iter().enumerate() {
        save_record(&a.out, &format!("game-{i:05}"), r)?;
    }
    let villager = records.iter().filter(|r| r.winner == Some(deepwolf::Side::Villager)).count();
    println!("{} games written to {}; villager side won {villager}", records.len(), a.out.display());
    Ok(())
}

fn dataset_examples(args: &DatasetArgs, seed: u64) -> Result<Vec<TrainingExample>, Failure> {
    let mut records = load_records_dir(&args.records)?;
    if args.balance_sides {
        records = balance_sides(&records, seed);
    }
    let examples = if args.slice { augment_sliced(&records) } else { augment_dataset(&records) };
    let examples = examples.map_err(invalid)?;
    println!("records: {}", records.len());
    Ok(examples)
}

fn print_counts(examples: &[TrainingExample]) {
    let positive = examples.iter().filter(|e| e.label == 1).count();
    println!("examples: {}", examples.len());
    println!("label 1: {positive}");
    println!("label 0: {}", examples.len() - positive);
}

fn cmd_dataset(d: DatasetCommand, seed: u64) -> CliResult {
    match d {
        DatasetCommand::Project { record, player, upto } => {
            let rec = load_record(&record)?;
            let viewer = PlayerId::new(player).map_err(invalid)?;
            print!("{}", project(&rec, viewer, upto).text());
        }
        DatasetCommand::Augment(args) => print_counts(&dataset_examples(&args, seed)?),
        DatasetCommand::Export { args, out } => {
            let examples = dataset_examples(&args, seed)?;
            write_export(&out, &examples).map_err(io)?;
            print_counts(&examples);
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: u64) -> CliResult {
    let examples = read_export(&a.data).map_err(|e| match e {
        deepwolf::augment::AugmentError::Io(_) => io(e),
        other => invalid(other),
    })?;
    let mut params = TrainParams { seed, ..TrainParams::default() };
    params.epochs = a.epochs.unwrap_or(params.epochs);
    params.learning_rate = a.lr.unwrap_or(params.learning_rate);
    params.batch_size = a.batch_size.unwrap_or(params.batch_size);
    params.dim = a.dim.unwrap_or(params.dim);
    let mut by_key: BTreeMap<OracleKey, Vec<TrainingExample>> = BTreeMap::new();
    for e in examples {
        by_key.entry(e.key).or_default().push(e);
    }
    std::fs::create_dir_all(&a.out_dir).map_err(io)?;
    let results: Vec<_> = by_key
        .par_iter()
        .map(|(key, data)| {
            let (model, report) = train_baseline(data, *key, &params).map_err(invalid)?;
            model.save(&a.out_dir.join(key.file_name())).map_err(io)?;
            Ok::<_, Failure>((*key, report))
        })
        .collect::<Result<_, _>>()?;
    for (key, r) in results {
        println!("{key}: {} examples, loss {:.4} -> {:.4}", r.examples, r.initial_loss, r.final_loss);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, seed: Option<u64>) -> CliResult {
    let mut spec = MatchSpec::load(&a.spec).map_err(|e| match e {
        deepwolf::eval::EvalError::Io { .. } => io(e),
        other => invalid(other),
    })?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let res = load_resources(spec.pools_dir.as_deref(), spec.models_dir.as_deref(), a.oracle_url.as_deref())?;
    let records = run_matches(&spec, &res).map_err(invalid)?;
    if let Some(dir) = &a.records_out {
        for (i, r) in records.iter().enumerate() {
            save_record(dir, &format!("game-{i:05}"), r)?;
        }
    }
    let table = compute_win_rates(&records, &spec.attribution());
    print!("{}", export_table(&table, TableFormat::Text));
    if let Some(out) = &a.out {
        let format = match out.extension().and_then(|e| e.to_str()) {
            Some("csv") => TableFormat::Csv,
            _ => TableFormat::Text,
        };
        std::fs::write(out, export_table(&table, format)).map_err(io)?;
    }
    Ok(())
}

fn parse_roles(s: &str) -> Result<RoleMap, Failure> {
    s.split(',')
        .map(|pair| {
            let (n, r) = pair.split_once('=').ok_or_else(|| invalid(format!("expected n=role, got {pair:?}")))?;
            let p = n.trim().parse::<u8>().map_err(invalid).and_then(|n| PlayerId::new(n).map_err(invalid))?;
            let role = Role::parse(r.trim()).ok_or_else(|| invalid(format!("unknown role {r:?}")))?;
            Ok((p, role))
        })
        .collect()
}

fn cmd_replay(a: ReplayArgs) -> CliResult {
    let report = if a.path.extension().is_some_and(|e| e == "json") {
        replay_record(&load_record(&a.path)?).map_err(invalid)?
    } else {
        let text = std::fs::read_to_string(&a.path).map_err(io)?;
        let events = parse(&text).map_err(|e| invalid(format!("parse error at {e}")))?;
        let roles = match &a.roles {
            Some(s) => parse_roles(s)?,
            None => {
                let sidecar = a.path.with_extension("roles.json");
                let bytes = std::fs::read(&sidecar)
                    .map_err(|e| io(format!("{}: {e} (pass --roles)", sidecar.display())))?;
                serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", sidecar.display())))?
            }
        };
        replay_events(GameConfig::with_roles(0, roles), &events).map_err(invalid)?
    };
    print!("{report}");
    Ok(())
}
