//! `dxagent` command-line tool.

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dxagent::dcp::DcpFilter;
use dxagent::runner::Regime;
use dxagent::workspace::{
    cmd_accrue, cmd_analyze, cmd_dcp_list, cmd_dcp_retract, cmd_dcp_show, cmd_evaluate, cmd_index_guidelines,
    cmd_validate, render_dcp_details, AccrueOptions, AnalyzeOptions, EvaluateOptions, Workspace, WorkspaceError,
};

#[derive(Parser)]
#[command(name = "dxagent", version, about = "Evidence-gated diagnostic agent workspace tool")]
struct Cli {
    /// Workspace root holding dxagent.toml, cohorts/, repos/, runs/ and rulepacks/.
    #[arg(short, long, global = true, default_value = ".")]
    workspace: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a cohort file's schema and scan it for diagnosis labels.
    Validate { cohort: PathBuf },
    /// Chunk, embed and index the guideline corpus.
    IndexGuidelines {
        /// Corpus directory; defaults to guidelines.corpus from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run an accrual cohort in order and consolidate each episode into a repository.
    Accrue(AccrueArgs),
    /// Run an evaluation cohort and write per-encounter artifacts and report.json.
    Evaluate(EvaluateArgs),
    /// Compare an experience run with its ablation.
    Analyze(AnalyzeArgs),
    /// Inspect and curate a DCP repository.
    Dcp {
        #[command(subcommand)]
        command: DcpCommand,
    },
}

#[derive(Args)]
struct AccrueArgs {
    cohort: PathBuf,
    /// Repository name under repos/.
    #[arg(long)]
    repo: String,
    /// Reply script overriding backend.script.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Process at most this many new encounters.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Interactive,
    Fi,
}

#[derive(Args)]
struct EvaluateArgs {
    cohort: PathBuf,
    #[arg(long, value_enum, default_value = "interactive")]
    mode: Mode,
    /// Repository name under repos/; required unless --no-dcp or --mode fi.
    #[arg(long)]
    repo: Option<String>,
    #[arg(long)]
    no_dcp: bool,
    #[arg(long)]
    no_guidelines: bool,
    #[arg(long)]
    no_pubmed: bool,
    /// Restrict retrieval to DCPs with exposure index <= K.
    #[arg(long, value_name = "K")]
    snapshot: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Run name under runs/.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Save every prompt and reply as a keyed replay script.
    #[arg(long)]
    record_script: Option<PathBuf>,
    /// Leave backend failures out of the accuracy denominator.
    #[arg(long)]
    exclude_backend_failures: bool,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run name with experience retrieval enabled.
    #[arg(long = "with")]
    with_run: String,
    /// Run name of the experience-free ablation.
    #[arg(long = "without")]
    without_run: String,
    /// Run supplying burden footprints; defaults to --without.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    repo: String,
    /// Exposure window FIRST-LAST for retrieval usage; repeatable.
    #[arg(long = "window", value_parser = parse_window)]
    windows: Vec<(usize, usize)>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum DcpCommand {
    List {
        #[arg(long)]
        repo: String,
        #[arg(long)]
        pathology: Option<String>,
        /// Only DCPs consolidated from incorrect episodes.
        #[arg(long, conflicts_with = "correct_source")]
        incorrect_source: bool,
        /// Only DCPs consolidated from correct episodes.
        #[arg(long)]
        correct_source: bool,
        #[arg(long)]
        include_retracted: bool,
    },
    Show {
        id: String,
        #[arg(long)]
        repo: String,
    },
    Retract {
        id: String,
        #[arg(long)]
        repo: String,
        #[arg(long)]
        reason: String,
    },
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or("expected FIRST-LAST")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a == 0 || a > b {
        return Err("window must satisfy 1 <= FIRST <= LAST".into());
    }
    Ok((a, b))
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "no data".into())
}

fn run(cli: Cli) -> Result<u8> {
    let ws =
        Workspace::open(&cli.workspace).with_context(|| format!("opening workspace {}", cli.workspace.display()))?;
    match cli.command {
        Command::Validate { cohort } => {
            let report = cmd_validate(&ws, &cohort)?;
            if report.is_clean() {
                println!("{} records OK", report.records);
                return Ok(0);
            }
            for p in &report.problems {
                println!("{p}");
            }
            println!("{} records OK, {} problem(s)", report.records, report.problems.len());
            Ok(2)
        }
        Command::IndexGuidelines { corpus } => {
            let (path, chunks) = cmd_index_guidelines(&ws, corpus.as_deref())?;
            println!("indexed {chunks} chunks into {}", path.display());
            Ok(0)
        }
        Command::Accrue(a) => {
            let s = cmd_accrue(
                &ws,
                &AccrueOptions {
                    cohort: a.cohort,
                    repo: a.repo,
                    script: a.script,
                    limit: a.limit,
                },
            )?;
            println!(
                "processed {} encounters ({} already done): {} DCPs created, {} skipped; repository holds {}",
                s.processed, s.already_processed, s.created, s.skipped, s.repository_size
            );
            println!("running accuracy: {}", fmt_rate(s.running_accuracy));
            Ok(0)
        }
        Command::Evaluate(a) => {
            let opts = EvaluateOptions {
                cohort: a.cohort,
                mode: match a.mode {
                    Mode::Interactive => Regime::Interactive,
                    Mode::Fi => Regime::FullInformation,
                },
                repo: a.repo,
                no_dcp: a.no_dcp,
                no_guidelines: a.no_guidelines,
                no_pubmed: a.no_pubmed,
                snapshot: a.snapshot,
                workers: a.workers,
                out: a.out,
                script: a.script,
                record_script: a.record_script,
                exclude_backend_failures: a.exclude_backend_failures,
                force: a.force,
            };
            let s = cmd_evaluate(&ws, &opts)?;
            println!(
                "{} encounters, accuracy {:.4}; report in {}",
                s.report.encounters,
                s.report.accuracy,
                s.run_dir.display()
            );
            if s.backend_failures > 0 {
                eprintln!("{} episode(s) ended in backend failure", s.backend_failures);
                if !opts.exclude_backend_failures {
                    return Ok(4);
                }
            }
            Ok(0)
        }
        Command::Analyze(a) => {
            let (out, r) = cmd_analyze(
                &ws,
                &AnalyzeOptions {
                    with_run: a.with_run,
                    without_run: a.without_run,
                    baseline_run: a.baseline,
                    repo: a.repo,
                    windows: a.windows,
                    out: a.out,
                },
            )?;
            println!("improvement cases: {}", r.improvement_cases.len());
            for id in &r.improvement_cases {
                println!("  {id}");
            }
            println!(
                "incorrect-source rate: improvement {}, all {}, delta {}",
                fmt_rate(r.provenance.rate_improvement),
                fmt_rate(r.provenance.rate_all),
                fmt_rate(r.provenance.delta)
            );
            println!(
                "burden median {}: low delta {}, high delta {}",
                r.burden.median,
                fmt_rate(r.burden.low.delta),
                fmt_rate(r.burden.high.delta)
            );
            if r.retrieval_usage.is_empty() {
                println!("retrieval usage: no data");
            }
            for w in &r.retrieval_usage {
                println!(
                    "window {}-{}: rate all {}, rate correcting {}",
                    w.first,
                    w.last,
                    fmt_rate(w.usage.window_rate_all),
                    fmt_rate(w.usage.window_rate_correcting)
                );
            }
            println!("analysis in {}", out.display());
            Ok(0)
        }
        Command::Dcp { command } => match command {
            DcpCommand::List {
                repo,
                pathology,
                incorrect_source,
                correct_source,
                include_retracted,
            } => {
                let filter = DcpFilter {
                    pathology,
                    source_correct: match (correct_source, incorrect_source) {
                        (true, _) => Some(true),
                        (_, true) => Some(false),
                        _ => None,
                    },
                    include_retracted,
                    ..Default::default()
                };
                let dcps = cmd_dcp_list(&ws, &repo, &filter)?;
                println!("id\texposure\tpathology\tsource\tretracted\tpattern");
                for d in &dcps {
                    let pattern: String = d.pattern.chars().take(60).collect();
                    println!(
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        d.id,
                        d.exposure_index,
                        d.pathology,
                        if d.source_correct { "correct" } else { "incorrect" },
                        d.retracted,
                        pattern
                    );
                }
                Ok(0)
            }
            DcpCommand::Show { id, repo } => {
                print!("{}", render_dcp_details(&cmd_dcp_show(&ws, &repo, &id)?));
                Ok(0)
            }
            DcpCommand::Retract { id, repo, reason } => {
                if reason.trim().is_empty() {
                    bail!("--reason must not be empty");
                }
                let d = cmd_dcp_retract(&ws, &repo, &id, &reason)?;
                println!("retracted {}", d.id);
                Ok(0)
            }
        },
    }
}

/// Joins the error chain, skipping causes whose text a previous link already
/// embeds.
fn render_error(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", render_error(&err));
            let code = err
                .downcast_ref::<WorkspaceError>()
                .map(WorkspaceError::exit_code)
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
