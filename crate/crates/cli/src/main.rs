mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use cpkit::corpus::{
    adapt_dataset, assign_deepform_pages, base_dir, emit_canonical, parse_canonical,
    relative_path, AdapterDescriptor, Dataset, Split,
};
use cpkit::endpoint::{Endpoint, RetryPolicy};
use cpkit::harness::{
    read_responses, run_pairs, write_responses, AnswerExtractors, EndpointConfig, Profile,
    ResponseCache, RunOptions,
};
use cpkit::pairgen::{build_eval_pairs, read_pairs, BuildOptions, LocateOptions};
use cpkit::report::{build_report, render_report, ReportFormat};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(
    name = "cpkit",
    version,
    about = "Cognition/perception consistency toolkit for document MLLMs",
    after_help = "The endpoint API key is read from the environment variable named by \
                  `endpoint.api_key_env` in the config file (CPKIT_API_KEY by default)."
)]
struct Cli {
    /// TOML config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every randomized step [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// error, warn, info, debug or trace [default: info].
    #[arg(long, global = true)]
    log_level: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a dataset source tree into a canonical record file.
    Ingest {
        /// docvqa, dude, deepform, funsd, chartqa or custom.
        #[arg(long)]
        adapter: String,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[command(flatten)]
        endpoint: EndpointFlags,
    },
    /// Build cognitive/perceptual query pairs and render red-box images.
    BuildPairs {
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Allow one edit per word when no exact match exists.
        #[arg(long)]
        fuzzy: bool,
        #[command(flatten)]
        endpoint: EndpointFlags,
    },
    /// Ask a model both queries of every pair and score the answers.
    Evaluate {
        /// Pair manifest written by build-pairs.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        endpoint: EndpointFlags,
    },
    /// Write link-token and connector fine-tuning records.
    Ftgen {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        endpoint: EndpointFlags,
    },
    /// Score an existing response manifest.
    Report {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// json, csv or markdown.
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct EndpointFlags {
    /// Use the model endpoint for steps that can run offline.
    #[arg(long)]
    endpoint: bool,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Maximum pairs in flight.
    #[arg(long)]
    parallel: Option<usize>,
    /// Request timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// closed or sft.
    #[arg(long)]
    profile: Option<Profile>,
}

struct Resolved {
    seed: u64,
    endpoint: EndpointConfig,
    extractors: AnswerExtractors,
}

fn resolve(cli_seed: Option<u64>, flags: Option<&EndpointFlags>, file: &FileConfig) -> Result<Resolved> {
    let mut ep = EndpointConfig::default();
    let f = &file.endpoint;
    if let Some(v) = &f.base_url {
        ep.base_url = v.clone();
    }
    if let Some(v) = &f.model {
        ep.model_name = v.clone();
    }
    if let Some(v) = &f.api_key_env {
        ep.api_key_env = v.clone();
    }
    if let Some(v) = f.parallel {
        ep.max_parallel = v;
    }
    if let Some(v) = f.timeout {
        ep.timeout_secs = v;
    }
    if let Some(v) = &f.profile {
        ep.profile = v.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(flags) = flags {
        if let Some(v) = &flags.base_url {
            ep.base_url = v.clone();
        }
        if let Some(v) = &flags.model {
            ep.model_name = v.clone();
        }
        if let Some(v) = flags.parallel {
            ep.max_parallel = v;
        }
        if let Some(v) = flags.timeout {
            ep.timeout_secs = v;
        }
        if let Some(v) = flags.profile {
            ep.profile = v;
        }
    }
    ep.validate().map_err(anyhow::Error::msg)?;

    let mut extractors = AnswerExtractors::standard();
    for (name, pattern) in &file.extract {
        let dataset: Dataset = name.parse()?;
        extractors
            .set(dataset, pattern)
            .with_context(|| format!("bad extraction pattern for {name}"))?;
    }
    Ok(Resolved {
        seed: cli_seed.or(file.seed).unwrap_or(0),
        endpoint: ep,
        extractors,
    })
}

fn connect(cfg: &EndpointConfig) -> Result<Box<dyn Endpoint>> {
    if std::env::var_os(&cfg.api_key_env).is_none() {
        warn!("{} is not set; sending requests without a key", cfg.api_key_env);
    }
    Ok(Box::new(cfg.connect()?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let level = cli
        .log_level
        .clone()
        .or_else(|| file.log_level.clone())
        .unwrap_or_else(|| "info".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();

    let flags = match &cli.command {
        Command::Ingest { endpoint, .. }
        | Command::BuildPairs { endpoint, .. }
        | Command::Evaluate { endpoint, .. }
        | Command::Ftgen { endpoint, .. } => Some(endpoint),
        Command::Report { .. } => None,
    };
    let resolved = resolve(cli.seed, flags, &file)?;
    info!(
        "resolved config: seed={} base_url={} model={} parallel={} timeout={}s profile={:?} key_env={}",
        resolved.seed,
        resolved.endpoint.base_url,
        resolved.endpoint.model_name,
        resolved.endpoint.max_parallel,
        resolved.endpoint.timeout_secs,
        resolved.endpoint.profile,
        resolved.endpoint.api_key_env,
    );
    let optional_endpoint = |wanted: bool| -> Result<Option<Box<dyn Endpoint>>> {
        if wanted {
            connect(&resolved.endpoint).map(Some)
        } else {
            Ok(None)
        }
    };

    match cli.command {
        Command::Ingest {
            adapter,
            src,
            out,
            split,
            endpoint,
        } => {
            let client = optional_endpoint(endpoint.endpoint)?;
            cmd_ingest(&adapter, &src, &out, split, client.as_deref())
        }
        Command::BuildPairs {
            canonical,
            out_dir,
            fuzzy,
            endpoint,
        } => {
            let client = optional_endpoint(endpoint.endpoint)?;
            cmd_build_pairs(&canonical, &out_dir, fuzzy, client.as_deref())
        }
        Command::Evaluate {
            pairs, cache, out, ..
        } => {
            let client = connect(&resolved.endpoint)?;
            cmd_evaluate(&pairs, cache.as_deref(), &out, client.as_ref(), &resolved)
        }
        Command::Ftgen {
            pairs,
            out,
            endpoint,
        } => {
            let client = optional_endpoint(endpoint.endpoint)?;
            cmd_ftgen(&pairs, &out, resolved.seed, client.as_deref())
        }
        Command::Report {
            responses,
            pairs,
            format,
            out,
        } => cmd_report(&responses, &pairs, format, out.as_deref()),
    }
}

fn cmd_ingest(
    adapter: &str,
    src: &Path,
    out: &Path,
    split: Split,
    client: Option<&dyn Endpoint>,
) -> Result<()> {
    let mut records = adapt_dataset(&AdapterDescriptor::new(adapter, src, split))?;
    if adapter == "deepform" {
        assign_deepform_pages(&mut records, client, src)?;
    }
    let out_dir = base_dir(out);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for r in &mut records {
        let abs = src.join(&r.image_path);
        r.image_path = relative_path(&abs, &out_dir).to_string_lossy().replace('\\', "/");
    }
    emit_canonical(&records, out)?;
    let qa: usize = records.iter().map(|r| r.qa.len()).sum();
    println!("{} records, {qa} qa written to {}", records.len(), out.display());
    Ok(())
}

fn cmd_build_pairs(
    canonical: &Path,
    out_dir: &Path,
    fuzzy: bool,
    client: Option<&dyn Endpoint>,
) -> Result<()> {
    let records = parse_canonical(canonical)?;
    let opts = BuildOptions {
        locate: LocateOptions { fuzzy },
    };
    let outcome = build_eval_pairs(&records, &base_dir(canonical), client, out_dir, &opts)?;
    if outcome.pairs.is_empty() && !outcome.failures.is_empty() {
        bail!(
            "every record failed ({} failures); first: {}",
            outcome.failures.len(),
            outcome.failures[0].1
        );
    }
    let counts = outcome.counts();
    println!("{:<10} {:>8} {:>8}", "dataset", "pairs", "images");
    let (mut pairs, mut images) = (0, 0);
    for (dataset, c) in &counts {
        println!("{:<10} {:>8} {:>8}", dataset.as_str(), c.pairs, c.images);
        pairs += c.pairs;
        images += c.images;
    }
    println!("{:<10} {:>8} {:>8}", "total", pairs, images);
    if !outcome.failures.is_empty() {
        eprintln!("{} records or pairs failed; see log", outcome.failures.len());
    }
    Ok(())
}

fn cmd_evaluate(
    pairs_path: &Path,
    cache: Option<&Path>,
    out: &Path,
    client: &dyn Endpoint,
    resolved: &Resolved,
) -> Result<()> {
    let pairs = read_pairs(pairs_path)?;
    if pairs.is_empty() {
        bail!("{} holds no pairs", pairs_path.display());
    }
    let cache = cache.map(ResponseCache::open).transpose()?;
    let opts = RunOptions {
        max_parallel: resolved.endpoint.max_parallel,
        profile: resolved.endpoint.profile,
        retry: RetryPolicy::default(),
        extractors: resolved.extractors.clone(),
    };
    let outcome = run_pairs(client, &pairs, &base_dir(pairs_path), cache.as_ref(), &opts)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_responses(&out.join("responses.jsonl"), &outcome.records)?;
    if outcome.n_failed() == pairs.len() {
        bail!(
            "no pair succeeded; first error: {}",
            outcome.failures[0].1
        );
    }
    let mut report = build_report(&outcome.records, &pairs)?;
    report.model = Some(resolved.endpoint.model_name.clone());
    for (format, name) in [
        (ReportFormat::Json, "report.json"),
        (ReportFormat::Csv, "report.csv"),
        (ReportFormat::Markdown, "report.md"),
    ] {
        let path = out.join(name);
        std::fs::write(&path, render_report(&report, format))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(())
}

fn cmd_ftgen(pairs_path: &Path, out: &Path, seed: u64, client: Option<&dyn Endpoint>) -> Result<()> {
    let pairs = read_pairs(pairs_path)?;
    let outcome = cpkit::ftgen::emit_training_set(&pairs, &base_dir(pairs_path), seed, client, out)?;
    let counts: Vec<String> = outcome
        .kind_counts()
        .iter()
        .map(|(k, n)| format!("{}: {n}", k.as_str()))
        .collect();
    println!("{} records ({})", outcome.records.len(), counts.join(", "));
    if !outcome.failures.is_empty() {
        eprintln!("{} pairs failed; see log", outcome.failures.len());
    }
    Ok(())
}

fn cmd_report(responses: &Path, pairs: &Path, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let report = build_report(&read_responses(responses)?, &read_pairs(pairs)?)?;
    let text = render_report(&report, format);
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
