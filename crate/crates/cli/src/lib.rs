//! Subcommand implementations behind the `skillmine` binary.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use skillmine_api::{ApiConfig, AppState, OPERATOR_TOKEN_VAR};
use skillmine_core::chunker::DEFAULT_RESERVED_OUTPUT;
use skillmine_core::evaluator::{build_pairs, model_report, per_user_report, EvalPair, PerUserReport, RatingTable};
use skillmine_core::extractor::{load_records, Extractor, ExtractorConfig, RunClock, RunManifest, DEFAULT_PARALLELISM};
use skillmine_core::fsutil::{path_component, read_json, write_json_atomic};
use skillmine_core::ingest::{build_membership, filter_members, parse_export, MemberFilter};
use skillmine_core::profiler::aggregate;
use skillmine_core::providers::{build_provider, ConfigOverrides, Provider, ProviderConfig};
use skillmine_core::store::Store;
use skillmine_core::SkillProfileF64;
use thiserror::Error;

pub const PROFILES_DIR: &str = "profiles";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const PER_USER_CSV: &str = "per_user.csv";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing inputs, credentials or connectivity. Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Some users or channels failed; the rest was written. Exit code 2.
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Partial(_) => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "skillmine", version, about = "Estimate skill profiles from chat exports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract knowledge items per user and channel
    Extract(ExtractArgs),
    /// Aggregate extraction outputs into skill profiles
    Profile(ProfileArgs),
    /// Serve the annotation API over a store
    Serve(ServeArgs),
    /// Compare estimated scores against self-ratings
    Eval(EvalArgs),
    /// Provision a member account (password read from stdin)
    Account(AccountArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Export root (channel directories plus users.json)
    #[arg(long)]
    pub root: PathBuf,
    /// Output root
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated user ids [default: all filtered members]
    #[arg(long, value_delimiter = ',')]
    pub users: Vec<String>,
    /// Keep only members with active billing
    #[arg(long)]
    pub filter_billing: bool,
    /// Drop deleted and bot accounts
    #[arg(long)]
    pub filter_active: bool,
    /// Target model
    #[arg(long, default_value = "mock")]
    pub model: String,
    /// Context window override in tokens [default: per-model table]
    #[arg(long)]
    pub context_window: Option<u64>,
    /// Safety factor override in (0, 1] [default: per-provider table]
    #[arg(long)]
    pub safety_factor: Option<f64>,
    /// Sampling temperature, ignored by models without one [default: 0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Maximum chunks per channel [default: unlimited]
    #[arg(long)]
    pub max_chunks: Option<usize>,
    /// Concurrent provider requests
    #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
    pub parallelism: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// Output root holding `<model>/` extraction results
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Model whose results to aggregate
    #[arg(long, default_value = "mock")]
    pub model: String,
    /// Also publish profiles to this store [default: none]
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Store root
    #[arg(long)]
    pub store: PathBuf,
    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Output root holding `profiles/<model>/`; reports are written here
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Store root holding self-annotations
    #[arg(long)]
    pub store: PathBuf,
    /// Models to evaluate [default: every profiled model]
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    /// JSON object of user id to message count for the per-user report
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Export root to count messages from when --counts is absent
    #[arg(long)]
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AccountArgs {
    /// Store root
    #[arg(long)]
    pub store: PathBuf,
    /// Member user id
    #[arg(long)]
    pub user: String,
    /// Login email
    #[arg(long)]
    pub email: String,
    /// Operator recorded as creator
    #[arg(long, default_value = "operator")]
    pub operator: String,
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract(args) => extract(&args, None).await.map(|_| ()),
        Command::Profile(args) => profile(&args).map(|_| ()),
        Command::Serve(args) => serve(&args).await,
        Command::Eval(args) => eval(&args).map(|out| print!("{}", out.report_txt)),
        Command::Account(args) => {
            let mut password = String::new();
            std::io::stdin().lock().read_line(&mut password).map_err(config_err)?;
            account(&args, password.trim_end_matches(['\r', '\n']))
        }
    }
}

pub fn provider_config(args: &ExtractArgs) -> Result<ProviderConfig, CliError> {
    if args.parallelism == 0 {
        return Err(CliError::Config("--parallelism must be at least 1".into()));
    }
    let overrides = ConfigOverrides {
        context_window: args.context_window,
        safety_factor: args.safety_factor,
        temperature: args.temperature,
        ..Default::default()
    };
    ProviderConfig::for_model(&args.model, overrides).map_err(config_err)
}

/// Runs extraction. `provider` replaces the one built from `--model`.
pub async fn extract(args: &ExtractArgs, provider: Option<Arc<dyn Provider>>) -> Result<RunManifest, CliError> {
    let provider = match provider {
        Some(p) => p,
        None => {
            let config = provider_config(args)?;
            // fail on a missing key before touching the dataset
            config.api_key().map_err(config_err)?;
            build_provider(config).map_err(config_err)?
        }
    };
    if !args.root.is_dir() {
        return Err(CliError::Config(format!("export root {} is not a directory", args.root.display())));
    }
    provider.check_connection().await.map_err(|e| CliError::Config(format!("connection check failed: {e}")))?;

    let export = parse_export(&args.root).map_err(config_err)?;
    let index = build_membership(&export.channels);
    let users = if args.users.is_empty() {
        let filter = MemberFilter { billing_active: args.filter_billing, active: args.filter_active };
        if export.members.is_empty() {
            let mut seen: Vec<String> = export.message_counts().into_keys().collect();
            seen.sort();
            seen
        } else {
            filter_members(&export.members, filter).into_iter().map(|m| m.user_id).collect()
        }
    } else {
        args.users.iter().map(|u| u.trim().to_string()).filter(|u| !u.is_empty()).collect()
    };
    tracing::info!(users = users.len(), channels = export.channels.len(), "export loaded");

    let config = ExtractorConfig {
        output_root: args.out.clone(),
        parallelism: args.parallelism.max(1),
        max_chunks: args.max_chunks,
        reserved_output: DEFAULT_RESERVED_OUTPUT,
        clock: RunClock::from_env(provider.config().family),
    };
    let extractor = Extractor::new(provider, config);
    let (_, manifest) = extractor.run(&users, &export, &index).await.map_err(config_err)?;
    for warning in &manifest.warnings {
        tracing::warn!("{warning}");
    }
    if manifest.has_failures() {
        return Err(CliError::Partial(format!(
            "{} channel(s) incomplete: {}",
            manifest.failed.len(),
            manifest.failed.join("; ")
        )));
    }
    Ok(manifest)
}

pub fn profile_dir(out: &Path, model: &str) -> PathBuf {
    out.join(PROFILES_DIR).join(path_component(model))
}

/// Aggregates `<out>/<model>/` into `<out>/profiles/<model>/<user>.json`.
pub fn profile(args: &ProfileArgs) -> Result<Vec<SkillProfileF64>, CliError> {
    let model_dir = args.out.join(path_component(&args.model));
    if !model_dir.is_dir() {
        return Err(CliError::Config(format!("no extraction results at {}", model_dir.display())));
    }
    let grouped = load_records(&model_dir).map_err(|e| CliError::Config(format!("{}: {e}", model_dir.display())))?;
    let dir = profile_dir(&args.out, &args.model);
    let store = args.store.as_ref().map(Store::open);
    let mut profiles = Vec::with_capacity(grouped.len());
    for (user, records) in grouped {
        let mut profile: SkillProfileF64 = aggregate(&user, &records);
        profile.model = Some(args.model.clone());
        let path = dir.join(format!("{}.json", path_component(&user)));
        write_json_atomic(&path, &profile).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(store) = &store {
            store.put_profile(&profile).map_err(config_err)?;
        }
        tracing::info!(user = %user, skills = profile.entries.len(), "profile written");
        profiles.push(profile);
    }
    Ok(profiles)
}

pub async fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(&args.listen)
        .await
        .map_err(|e| CliError::Config(format!("cannot listen on {}: {e}", args.listen)))?;
    let operator_token = std::env::var(OPERATOR_TOKEN_VAR).ok();
    if operator_token.is_none() {
        tracing::warn!("{OPERATOR_TOKEN_VAR} is not set; operator routes are unreachable");
    }
    let state = AppState::new(Store::open(&args.store), ApiConfig { operator_token, ..Default::default() });
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    skillmine_api::serve(listener, state, shutdown).await.map_err(config_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report_txt: String,
    pub report_csv: String,
    pub per_user_csv: Option<String>,
}

fn load_profiles(dir: &Path) -> Result<Vec<SkillProfileF64>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut profiles = Vec::new();
    for file in files {
        let profile: Option<SkillProfileF64> =
            read_json(&file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
        profiles.extend(profile);
    }
    Ok(profiles)
}

fn message_counts(args: &EvalArgs) -> Result<Option<BTreeMap<String, usize>>, CliError> {
    if let Some(path) = &args.counts {
        let counts: Option<BTreeMap<String, usize>> =
            read_json(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return counts.map(Some).ok_or_else(|| CliError::Config(format!("counts file {} not found", path.display())));
    }
    match &args.root {
        Some(root) => Ok(Some(parse_export(root).map_err(config_err)?.message_counts())),
        None => Ok(None),
    }
}

/// Writes `report.txt`, `report.csv` and, given message counts,
/// `per_user.csv` under `--out`.
pub fn eval(args: &EvalArgs) -> Result<EvalOutput, CliError> {
    let profiles_root = args.out.join(PROFILES_DIR);
    let models: Vec<String> = if args.model.is_empty() {
        let entries = std::fs::read_dir(&profiles_root)
            .map_err(|e| CliError::Config(format!("{}: {e}", profiles_root.display())))?;
        let mut m: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        m.sort();
        m
    } else {
        args.model.clone()
    };

    let store = Store::open(&args.store);
    let mut ratings = RatingTable::new();
    let mut groups: BTreeMap<String, Vec<EvalPair<f64>>> = BTreeMap::new();
    for model in &models {
        let profiles = load_profiles(&profile_dir(&args.out, model))?;
        for p in &profiles {
            if !ratings.contains_key(&p.user) {
                let user_ratings = store
                    .annotations(&p.user)
                    .map_err(config_err)?
                    .into_iter()
                    .map(|a| (a.term, a.self_score.get()))
                    .collect();
                ratings.insert(p.user.clone(), user_ratings);
            }
        }
        let pairs = build_pairs(model, &profiles, &ratings);
        if !pairs.is_empty() {
            groups.insert(model.clone(), pairs);
        }
    }
    if groups.is_empty() {
        return Err(CliError::Config("no evaluable pairs".into()));
    }

    let report = model_report(&groups).map_err(config_err)?;
    let report_txt = report.to_text();
    let report_csv = report.to_csv();
    let per_user_csv = match message_counts(args)? {
        Some(counts) => {
            let mut csv = String::from(PerUserReport::<f64>::CSV_HEADER);
            for (model, pairs) in &groups {
                let per_user = per_user_report(pairs, &counts).map_err(config_err)?;
                if let Some(s) = &per_user.summary {
                    tracing::info!(model = %model, max = s.max, mean = s.mean, median = s.median, "message counts");
                }
                csv.push_str(&per_user.csv_rows(model));
            }
            Some(csv)
        }
        None => None,
    };

    let write = |name: &str, body: &str| {
        let path = args.out.join(name);
        std::fs::create_dir_all(&args.out)
            .and_then(|_| std::fs::write(&path, body))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    };
    write(REPORT_TXT, &report_txt)?;
    write(REPORT_CSV, &report_csv)?;
    if let Some(csv) = &per_user_csv {
        write(PER_USER_CSV, csv)?;
    }
    Ok(EvalOutput { report_txt, report_csv, per_user_csv })
}

pub fn account(args: &AccountArgs, password: &str) -> Result<(), CliError> {
    if password.is_empty() {
        return Err(CliError::Config("empty password on stdin".into()));
    }
    Store::open(&args.store).put_account(&args.user, &args.email, password, &args.operator).map_err(config_err)?;
    tracing::info!(user = %args.user, "account provisioned");
    Ok(())
}
