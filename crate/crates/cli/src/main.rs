use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acdc_core::{CodePolicy, Deployment};
use acdc_service::{LabCredentials, ServiceConfig, StartError};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

mod batch;
mod sim;

/// Exit status for a missing or invalid config file.
const EXIT_CONFIG: u8 = 3;
/// Exit status when the listen address is taken.
const EXIT_ADDRESS_IN_USE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "acdc",
    version,
    about = "Anonymous voucher-based contact tracing: service, paper batches, admin, simulation",
    after_help = "Environment:\n  ACDC_STORE_DIR  store directory; overrides store_dir from a service config\n  RUST_LOG        log filter for `serve` (default: info)\n\n\
                  Exit status: 0 success, 1 failure, 2 usage error, 3 config error, 4 address in use."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Store directory, overriding the config file.
        #[arg(long, env = "ACDC_STORE_DIR")]
        store: Option<PathBuf>,
    },
    /// Generate paper vouchers: a codes file for envelopes and a separate
    /// checklist for the testing center. Codes are registered in the store.
    Batch {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = acdc_core::voucher::DEFAULT_VOUCHER_CAP)]
        cap: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 14)]
        ttl_days: u32,
        #[arg(long, env = "ACDC_STORE_DIR")]
        store: Option<PathBuf>,
    },
    /// Run the outbreak simulator and print a tab-separated metrics table.
    Sim(sim::SimArgs),
    /// Add locations, slots, or lab credentials directly in the store.
    Admin {
        #[arg(long, env = "ACDC_STORE_DIR", global = true)]
        store: Option<PathBuf>,
        #[command(subcommand)]
        action: AdminAction,
    },
}

#[derive(Subcommand)]
#[allow(clippy::enum_variant_names)]
enum AdminAction {
    /// Prints the new location as JSON.
    AddLocation {
        #[arg(long)]
        label: String,
        #[arg(long)]
        address: String,
    },
    /// Imports slots from CSV with header `location_id,window_start,window_end,capacity`
    /// (RFC 3339 timestamps). Prints one JSON object per slot.
    AddSlots {
        #[arg(long)]
        file: PathBuf,
    },
    /// Registers a lab and prints its secret. The secret is shown only once;
    /// the file keeps a salted hash.
    AddLab {
        #[arg(long)]
        lab_id: String,
        /// Defaults to lab_credentials.txt in the store directory.
        #[arg(long)]
        credentials: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, store } => return serve(&config, store),
        Command::Batch {
            n,
            cap,
            out,
            ttl_days,
            store,
        } => require_store(store.as_deref()).and_then(|s| batch::run(n, cap, &out, ttl_days, s)),
        Command::Sim(args) => sim::run(&args),
        Command::Admin { store, action } => admin(store.as_deref(), action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config_path: &Path, store: Option<PathBuf>) -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let fail = |code: u8, msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(code)
    };
    let mut config = match ServiceConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e.to_string()),
    };
    if store.is_some() {
        config.store_dir = store;
    }
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => return fail(1, format!("cannot start runtime: {e}")),
    };
    runtime.block_on(async {
        let service = match acdc_service::start(config).await {
            Ok(s) => s,
            Err(e @ StartError::AddressInUse(_)) => {
                return fail(EXIT_ADDRESS_IN_USE, e.to_string())
            }
            Err(e @ StartError::Config(_)) => return fail(EXIT_CONFIG, e.to_string()),
            Err(e) => return fail(1, e.to_string()),
        };
        // Install the handler before announcing the address, so an
        // interrupt sent right after the announcement is not fatal.
        let interrupt = match Interrupt::install() {
            Ok(i) => i,
            Err(e) => return fail(1, format!("cannot wait for interrupt: {e}")),
        };
        println!("listening on http://{}", service.local_addr());
        interrupt.wait().await;
        match service.shutdown().await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(1, format!("shutdown: {e}")),
        }
    })
}

fn require_store(store: Option<&Path>) -> anyhow::Result<&Path> {
    store.ok_or_else(|| anyhow!("no store directory: pass --store or set ACDC_STORE_DIR"))
}

fn admin(store: Option<&Path>, action: AdminAction) -> anyhow::Result<()> {
    match action {
        AdminAction::AddLocation { label, address } => {
            let d = open_store(require_store(store)?)?;
            let loc = d.flow.add_location(&label, &address)?;
            println!("{}", serde_json::to_string(&loc)?);
        }
        AdminAction::AddSlots { file } => {
            let d = open_store(require_store(store)?)?;
            let reader = std::fs::File::open(&file)
                .with_context(|| format!("cannot open {}", file.display()))?;
            let rows = acdc_core::testing_flow::import_slots(reader)
                .with_context(|| file.display().to_string())?;
            for slot in d
                .flow
                .add_slot_rows(&rows)
                .with_context(|| file.display().to_string())?
            {
                println!("{}", serde_json::to_string(&slot)?);
            }
        }
        AdminAction::AddLab {
            lab_id,
            credentials,
        } => {
            let path = match credentials {
                Some(p) => p,
                None => require_store(store)?.join(acdc_service::auth::DEFAULT_CREDENTIALS_FILE),
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut labs = LabCredentials::load(&path)?;
            let secret = labs.add(&lab_id)?;
            labs.save(&path)?;
            println!(
                "{}",
                serde_json::json!({ "lab_id": lab_id, "secret": secret })
            );
        }
    }
    Ok(())
}

fn open_store(dir: &Path) -> anyhow::Result<Deployment> {
    Deployment::open(dir, CodePolicy::default())
        .with_context(|| format!("cannot open store {}", dir.display()))
}

#[cfg(unix)]
struct Interrupt(tokio::signal::unix::Signal);

#[cfg(unix)]
impl Interrupt {
    fn install() -> std::io::Result<Self> {
        tokio::signal::unix::signal(tokio::signal::unix::SignalKind::interrupt()).map(Interrupt)
    }

    async fn wait(mut self) {
        self.0.recv().await;
    }
}

#[cfg(not(unix))]
struct Interrupt;

#[cfg(not(unix))]
impl Interrupt {
    fn install() -> std::io::Result<Self> {
        Ok(Interrupt)
    }

    async fn wait(self) {
        let _ = tokio::signal::ctrl_c().await;
    }
}
