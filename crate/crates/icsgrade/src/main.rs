//! Command-line entry point: ingest, score, review, report,
//! sample-reports, and cache stats over a run directory.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use icsgrade::config::{BackendChoice, RunConfig};
use icsgrade::corpus::{self, EvaluationDataset};
use icsgrade::llm::{
    Backend, Client, CompletionRequest, HttpBackend, MockBackend, ResponseCache, RetryPolicy,
};
use icsgrade::report::{write_report, ReportError, RunDescription};
use icsgrade::scoring::{
    self, append_record, apply_manual_score, archive_path, read_archive, rewrite_archive,
    sample_reports, ParseStatus, ScoreRecord,
};
use icsgrade::{build_user_prompt, system_prompt};

const EXIT_CONFIG: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_EMPTY_REPORT: u8 = 3;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "icsgrade", about = "Score impact case studies with an LLM and evaluate against published departmental score profiles")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set n_iterations=5. Repeatable;
    /// overrides win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load corpus and profiles, join them, and print the ingestion report.
    Ingest,
    /// Run the scoring iterations, resumable and cache-backed.
    Score {
        /// Test hook: exit after appending this many records.
        #[arg(long, hide = true)]
        abort_after: Option<usize>,
    },
    /// Interactively enter scores for unparsed reports.
    Review,
    /// Emit correlation tables, convergence series, and the run summary.
    Report,
    /// Write a reproducible random sample of raw reports.
    SampleReports {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Response-cache inspection.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Print cache entry count and on-disk size.
    Stats,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let code = match cli.command {
        Command::Ingest => cmd_ingest(&config),
        Command::Score { abort_after } => cmd_score(&config, abort_after),
        Command::Review => cmd_review(&config),
        Command::Report => cmd_report(&config),
        Command::SampleReports { k, seed, out } => cmd_sample_reports(&config, k, seed, out),
        Command::Cache {
            command: CacheCommand::Stats,
        } => cmd_cache_stats(&config),
    };
    ExitCode::from(code)
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| "--config is required".to_string())?;
    let mut overrides = BTreeMap::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    RunConfig::from_file(path, &overrides).map_err(|e| e.to_string())
}

fn ingest(config: &RunConfig) -> Result<(EvaluationDataset, corpus::IngestReport), String> {
    let (cases, case_errors) =
        corpus::load_corpus(&config.corpus_path, &config.corpus_columns, config.delimiter)
            .map_err(|e| e.to_string())?;
    let (profiles, profile_errors) = corpus::load_profiles(
        &config.profiles_path,
        &config.profile_columns,
        config.delimiter,
    )
    .map_err(|e| e.to_string())?;
    if cases.is_empty() {
        return Err(format!(
            "no cases ingested from {}",
            config.corpus_path.display()
        ));
    }
    let mut report = corpus::IngestReport {
        cases_loaded: cases.len(),
        case_rows_skipped: case_errors.len(),
        case_errors,
        profiles_loaded: profiles.len(),
        profile_rows_skipped: profile_errors.len(),
        profile_errors,
        ..Default::default()
    };
    let dataset = corpus::join_dataset(cases, profiles);
    report.matched = dataset.matched_count();
    report.unmatched = dataset.unmatched_cases.len();
    Ok((dataset, report))
}

fn cmd_ingest(config: &RunConfig) -> u8 {
    match ingest(config) {
        Ok((_, report)) => {
            println!("{report}");
            0
        }
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_CONFIG
        }
    }
}

fn build_client(config: &RunConfig) -> Result<Client, (u8, String)> {
    let cache_dir = config.run_dir.join("cache");
    let cache = ResponseCache::open(&cache_dir).map_err(|e| (EXIT_BACKEND, e.to_string()))?;
    let backend: Box<dyn Backend> = match config.backend {
        BackendChoice::Mock => Box::new(MockBackend::new(config.mock.clone())),
        BackendChoice::Live => {
            let key = std::env::var(&config.credential_env).map_err(|_| {
                (
                    EXIT_CONFIG,
                    format!(
                        "credential environment variable {} is not set",
                        config.credential_env
                    ),
                )
            })?;
            Box::new(HttpBackend::new(config.endpoint_url.clone(), key))
        }
    };
    Ok(Client::new(
        backend,
        cache,
        RetryPolicy::default(),
        config.max_in_flight,
        config.requests_per_minute,
    ))
}

fn cmd_score(config: &RunConfig, abort_after: Option<usize>) -> u8 {
    let (dataset, ingest_report) = match ingest(config) {
        Ok(v) => v,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&config.run_dir) {
        eprintln!("error: cannot create run directory: {e}");
        return EXIT_CONFIG;
    }
    write_run_meta(config);
    println!("{ingest_report}");

    let client = match build_client(config) {
        Ok(c) => c,
        Err((code, message)) => {
            eprintln!("error: {message}");
            return code;
        }
    };

    // Already-archived (case, iteration) pairs are skipped on resume.
    let existing: HashSet<(String, u32)> = match read_archive(&config.run_dir) {
        Ok(records) => records
            .into_iter()
            .map(|r| (r.case_id, r.iteration_index))
            .collect(),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BACKEND;
        }
    };

    let mut archive = match std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(archive_path(&config.run_dir))
    {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open archive: {e}");
            return EXIT_BACKEND;
        }
    };

    let total = dataset.cases.len() as u64 * config.n_iterations as u64;
    let mut completed = existing.len() as u64;
    let mut appended = 0usize;
    let system_text = system_prompt(config.strategy).to_string();

    for case in &dataset.cases {
        let user_text = build_user_prompt(case, config.variant);
        let pending: Vec<u32> = (0..config.n_iterations)
            .filter(|i| !existing.contains(&(case.case_id.clone(), *i)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let results: Mutex<Vec<(u32, Result<ScoreRecord, scoring::ScoringError>)>> =
            Mutex::new(Vec::new());
        let workers = config.max_in_flight.min(pending.len()).max(1);
        let client_ref = &client;
        let results_ref = &results;
        let system_ref = &system_text;
        let user_ref = &user_text;
        std::thread::scope(|scope| {
            for chunk in pending.chunks(pending.len().div_ceil(workers)) {
                scope.spawn(move || {
                    for &iteration_index in chunk {
                        let req = CompletionRequest {
                            model_id: config.model_id.clone(),
                            system_text: system_ref.clone(),
                            user_text: user_ref.clone(),
                            iteration_index,
                            sampling_temperature: config.sampling_temperature,
                        };
                        let result = scoring::score_iteration(
                            case,
                            &req,
                            config.variant,
                            config.strategy,
                            client_ref,
                        );
                        results_ref.lock().unwrap().push((iteration_index, result));
                    }
                });
            }
        });
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|(i, _)| *i);
        for (_, result) in results {
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_BACKEND;
                }
            };
            if let Err(e) = append_record(&mut archive, &record) {
                eprintln!("error: {e}");
                return EXIT_BACKEND;
            }
            completed += 1;
            appended += 1;
            if let Some(limit) = abort_after {
                if appended >= limit {
                    println!("aborting after {appended} records (test hook)");
                    return EXIT_INTERRUPTED;
                }
            }
        }
        println!("progress: {completed}/{total} iterations");
    }
    println!(
        "done: {completed}/{total} iterations; backend calls: {}, cache hits: {}",
        client.backend_calls(),
        client.cache_hits()
    );
    0
}

fn write_run_meta(config: &RunConfig) {
    let path = config.run_dir.join("run_meta.json");
    if path.exists() {
        return;
    }
    let meta = serde_json::json!({
        "strategy": config.strategy.name(),
        "variant": config.variant.name(),
        "model_id": config.model_id,
        "n_iterations": config.n_iterations,
        "temperature": config.sampling_temperature,
        "backend": match config.backend { BackendChoice::Live => "live", BackendChoice::Mock => "mock" },
    });
    let _ = std::fs::write(path, serde_json::to_string_pretty(&meta).unwrap());
}

fn cmd_review(config: &RunConfig) -> u8 {
    let mut records = match read_archive(&config.run_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let stdin = std::io::stdin();
    let mut skipped: HashSet<(String, u32)> = HashSet::new();
    loop {
        let queue: Vec<usize> = {
            let mut idx: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    r.parse_status == ParseStatus::Unparsed
                        && !skipped.contains(&(r.case_id.clone(), r.iteration_index))
                })
                .map(|(i, _)| i)
                .collect();
            idx.sort_by(|&a, &b| {
                (&records[a].case_id, records[a].iteration_index)
                    .cmp(&(&records[b].case_id, records[b].iteration_index))
            });
            idx
        };
        let Some(&i) = queue.first() else {
            println!("review queue empty");
            return 0;
        };
        println!("--- case {} iteration {} ({} remaining) ---", records[i].case_id, records[i].iteration_index, queue.len());
        println!("{}", records[i].report_text);
        print!("score (1-4 in halves), 's' to skip, 'q' to quit: ");
        let _ = std::io::stdout().flush();
        let mut line = String::new();
        if stdin.read_line(&mut line).unwrap_or(0) == 0 {
            return 0;
        }
        match line.trim() {
            "q" => return 0,
            "s" => {
                println!("skipped (record stays unparsed)");
                skipped.insert((records[i].case_id.clone(), records[i].iteration_index));
                continue;
            }
            input => match input.parse::<f64>() {
                Ok(score) => match apply_manual_score(&mut records[i], score) {
                    Ok(()) => {
                        if let Err(e) = rewrite_archive(&config.run_dir, &records) {
                            eprintln!("error: {e}");
                            return EXIT_BACKEND;
                        }
                        println!("recorded {score}");
                    }
                    Err(e) => println!("rejected: {e}"),
                },
                Err(_) => println!("rejected: not a number"),
            },
        }
    }
}

fn cmd_report(config: &RunConfig) -> u8 {
    let (dataset, _) = match ingest(config) {
        Ok(v) => v,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_CONFIG;
        }
    };
    let records = match read_archive(&config.run_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let desc = RunDescription {
        strategy: config.strategy.name().to_string(),
        variant: config.variant.name().to_string(),
        model_id: config.model_id.clone(),
        temperature: config.sampling_temperature,
    };
    match write_report(&config.run_dir, &records, &dataset, &desc, 0.95) {
        Ok(outputs) => {
            for f in &outputs.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e @ ReportError::NothingToReport(_)) => {
            eprintln!("error: {e}");
            EXIT_EMPTY_REPORT
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_sample_reports(config: &RunConfig, k: usize, seed: u64, out: Option<PathBuf>) -> u8 {
    let records = match read_archive(&config.run_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if k > records.len() {
        eprintln!("error: k = {k} exceeds {} archived records", records.len());
        return EXIT_CONFIG;
    }
    let sample = sample_reports(&records, k, seed);
    let path = out.unwrap_or_else(|| config.run_dir.join("sampled_reports.txt"));
    let mut text = String::new();
    for (i, report) in sample.iter().enumerate() {
        text.push_str(&format!("=== report {} of {} ===\n{report}\n", i + 1, sample.len()));
    }
    if let Err(e) = std::fs::write(&path, text) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return EXIT_CONFIG;
    }
    println!("wrote {} reports to {}", sample.len(), path.display());
    0
}

fn cmd_cache_stats(config: &RunConfig) -> u8 {
    let cache_dir = config.run_dir.join("cache");
    match ResponseCache::open(&cache_dir) {
        Ok(cache) => {
            let size = std::fs::metadata(cache.path()).map(|m| m.len()).unwrap_or(0);
            println!("cache entries: {}", cache.len());
            println!("cache file: {} ({size} bytes)", cache.path().display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BACKEND
        }
    }
}
