use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use safeguard::auth::{read_token_from_eml, Auth, OutboxMailer};
use safeguard::gateway::{self, ServiceConfig};
use safeguard::notify::PUSH_OUTBOX_FILE;
use safeguard::sos::SMS_OUTBOX_FILE;
use safeguard::treestore::TreeStore;

/// Self-hosted personal-safety backend.
#[derive(Parser)]
#[command(name = "safeguard", version)]
struct Cli {
    /// Config file; defaults to $SAFEGUARD_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service until Ctrl-C.
    Serve,
    /// Replace the place directory with the rows of a CSV file.
    SeedPois { csv: PathBuf },
    /// Grant admin rights, creating a verified account if needed.
    /// Run while the service is stopped.
    CreateAdmin { email: String },
    /// Inspect outbound message logs.
    Outbox {
        #[command(subcommand)]
        action: OutboxAction,
    },
}

#[derive(Subcommand)]
enum OutboxAction {
    /// Print the last entries of an outbox.
    Tail {
        kind: OutboxKind,
        #[arg(short = 'n', long, default_value_t = 20)]
        lines: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutboxKind {
    Sms,
    Push,
    Mail,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "safeguard=info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn run(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::from_env()?,
    };
    match cli.command {
        Command::Serve => serve(config),
        Command::SeedPois { csv } => {
            let report = gateway::seed_pois(&config, &csv)?;
            println!(
                "accepted {} rejected {}",
                report.accepted,
                report.rejected.len()
            );
            for row in &report.rejected {
                println!("  line {}: {}", row.line, row.reason);
            }
            Ok(())
        }
        Command::CreateAdmin { email } => create_admin(&config, &email),
        Command::Outbox {
            action: OutboxAction::Tail { kind, lines },
        } => tail(&config, kind, lines),
    }
}

fn serve(config: ServiceConfig) -> CliResult {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let handle = gateway::serve(config).await?;
        println!("listening on http://{}", handle.addr());
        let commit = handle.run_until_ctrl_c().await?;
        println!("stopped at commit {commit}");
        Ok(())
    })
}

fn create_admin(config: &ServiceConfig, email: &str) -> CliResult {
    let store = Arc::new(TreeStore::load_from(&config.snapshot_file())?);
    let mailer = Arc::new(OutboxMailer::new(config.outbox_dir())?);
    let auth = Auth::new(store.clone(), mailer, config.auth_config());
    let (id, password) = auth.create_admin(email, safeguard::time::now_ms())?;
    store.flush();
    store.save_to(&config.snapshot_file())?;
    match password {
        Some(pw) => println!("created admin {id} <{email}> password {pw}"),
        None => println!("granted admin to {id} <{email}>"),
    }
    Ok(())
}

fn tail(config: &ServiceConfig, kind: OutboxKind, lines: usize) -> CliResult {
    let dir = config.outbox_dir();
    let entries: Vec<String> = match kind {
        OutboxKind::Sms | OutboxKind::Push => {
            let file = dir.join(match kind {
                OutboxKind::Sms => SMS_OUTBOX_FILE,
                _ => PUSH_OUTBOX_FILE,
            });
            match std::fs::read_to_string(&file) {
                Ok(text) => text.lines().map(str::to_string).collect(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(e.into()),
            }
        }
        OutboxKind::Mail => {
            let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
                Ok(rd) => rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "eml"))
                    .collect(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            files.sort();
            files
                .iter()
                .map(|p| {
                    let to = std::fs::read_to_string(p)
                        .ok()
                        .and_then(|t| {
                            t.lines()
                                .find_map(|l| l.strip_prefix("To: ").map(str::to_string))
                        })
                        .unwrap_or_default();
                    let token = read_token_from_eml(p).ok().flatten().unwrap_or_default();
                    let name = p.file_name().unwrap_or_default().to_string_lossy();
                    format!("{name}\t{to}\t{token}")
                })
                .collect()
        }
    };
    for line in &entries[entries.len().saturating_sub(lines)..] {
        println!("{line}");
    }
    Ok(())
}
