//! `vpe`: start the platform services, manage modules, submit tasks, inject
//! faults and export feedback.
//!
//! Exit codes: 0 success, 1 I/O or connection failure, 2 rejected input,
//! 3 module already running or not running.

mod client;
mod servers;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub exit: u8,
    pub msg: String,
}

impl CliError {
    pub fn io(msg: impl Into<String>) -> Self {
        Self {
            exit: 1,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self {
            exit: 2,
            msg: msg.into(),
        }
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Self {
            exit: 3,
            msg: msg.into(),
        }
    }
}

pub type CliResult = Result<(), CliError>;

fn env_addr(var: &str, port_var: &str, default_port: u16) -> String {
    if let Ok(a) = std::env::var(var) {
        return a;
    }
    let port = std::env::var(port_var)
        .ok()
        .and_then(|p| p.parse::<u16>().ok())
        .unwrap_or(default_port);
    format!("127.0.0.1:{port}")
}

#[derive(Debug, Args)]
pub struct Endpoints {
    /// Gateway address [env: VPE_GATEWAY, or 127.0.0.1:$VPE_GATEWAY_PORT]
    #[arg(long, global = true)]
    gateway: Option<String>,
    /// Launcher address [env: VPE_LAUNCHER, or 127.0.0.1:$VPE_LAUNCHER_PORT]
    #[arg(long, global = true)]
    launcher: Option<String>,
    /// Metastore address [env: VPE_STORE, or 127.0.0.1:$VPE_STORE_PORT]
    #[arg(long, global = true)]
    store: Option<String>,
    /// Broker address [env: VPE_BUS, or 127.0.0.1:$VPE_BUS_PORT]
    #[arg(long, global = true)]
    bus: Option<String>,
}

impl Endpoints {
    pub fn gateway(&self) -> String {
        self.gateway.clone().unwrap_or_else(|| {
            env_addr("VPE_GATEWAY", "VPE_GATEWAY_PORT", vpe_gateway::DEFAULT_PORT)
        })
    }

    pub fn launcher(&self) -> String {
        self.launcher.clone().unwrap_or_else(|| {
            env_addr(
                "VPE_LAUNCHER",
                "VPE_LAUNCHER_PORT",
                vpe_runtime::launcher::DEFAULT_PORT,
            )
        })
    }

    pub fn store(&self) -> String {
        self.store
            .clone()
            .unwrap_or_else(|| env_addr("VPE_STORE", "VPE_STORE_PORT", vpe_metastore::DEFAULT_PORT))
    }

    pub fn bus(&self) -> String {
        self.bus
            .clone()
            .unwrap_or_else(|| env_addr("VPE_BUS", "VPE_BUS_PORT", vpe_msgbus::DEFAULT_PORT))
    }
}

#[derive(Debug, Parser)]
#[command(name = "vpe", version, about = "Video parsing platform operator tool")]
struct Cli {
    #[command(flatten)]
    endpoints: Endpoints,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Message broker.
    Bus {
        #[command(subcommand)]
        action: ServerAction<BusStart>,
    },
    /// Result and feedback store.
    Store {
        #[command(subcommand)]
        action: ServerAction<StoreStart>,
    },
    /// Module launcher and supervisor.
    Launcher {
        #[command(subcommand)]
        action: ServerAction<LauncherStart>,
    },
    /// HTTP gateway.
    Gateway {
        #[command(subcommand)]
        action: ServerAction<GatewayStart>,
    },
    /// Launch, stop and list modules.
    Module {
        #[command(subcommand)]
        action: ModuleAction,
    },
    /// Submit tasks and read their status.
    Task {
        #[command(subcommand)]
        action: TaskAction,
    },
    /// Crash modules on purpose.
    Fault {
        #[command(subcommand)]
        action: FaultAction,
    },
    /// Export stored feedback.
    Feedback {
        #[command(subcommand)]
        action: FeedbackAction,
    },
}

#[derive(Debug, Subcommand)]
enum ServerAction<T: Args> {
    /// Run in the foreground until SIGTERM or SIGINT.
    Start(T),
}

#[derive(Debug, Args)]
pub struct BusStart {
    #[arg(long, env = "VPE_BUS_PORT", default_value_t = vpe_msgbus::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "VPE_BUS_DIR", default_value = "vpe-bus")]
    pub dir: PathBuf,
    /// fsync every append and commit.
    #[arg(long)]
    pub fsync: bool,
}

#[derive(Debug, Args)]
pub struct StoreStart {
    #[arg(long, env = "VPE_STORE_PORT", default_value_t = vpe_metastore::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "VPE_STORE_DIR", default_value = "vpe-store")]
    pub dir: PathBuf,
    #[arg(long)]
    pub fsync: bool,
}

#[derive(Debug, Args)]
pub struct LauncherStart {
    #[arg(long, env = "VPE_LAUNCHER_PORT", default_value_t = vpe_runtime::launcher::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "VPE_LAUNCHER_DIR", default_value = "vpe-launcher")]
    pub dir: PathBuf,
    /// Module state (ledgers); defaults to <dir>/state.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Accumulator entries pending longer than this are dead-lettered.
    #[arg(long, default_value_t = 3_600_000)]
    pub ttl_ms: u64,
    /// Time a module gets to exit after SIGTERM.
    #[arg(long, default_value_t = 5_000)]
    pub grace_ms: u64,
}

#[derive(Debug, Args)]
pub struct GatewayStart {
    #[arg(long, env = "VPE_GATEWAY_PORT", default_value_t = vpe_gateway::DEFAULT_PORT)]
    pub port: u16,
    /// Report a task STALLED after this long without a new result.
    #[arg(long, default_value_t = 3_600_000)]
    pub stall_ms: u64,
}

#[derive(Debug, Subcommand)]
enum ModuleAction {
    /// Register and launch a module.
    Start(client::ModuleStart),
    /// Stop a module; its topics keep accumulating messages.
    Stop {
        module_id: String,
        #[arg(long)]
        deadline_ms: Option<u64>,
    },
    /// Show registered modules.
    List,
    /// Run a module in this process (what the launcher executes).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TaskAction {
    /// Submit a graph; prints the task id.
    Submit {
        #[arg(long)]
        graph: PathBuf,
        /// JSON object: source node id -> {datatype, records}.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Print a task's status.
    Status { task_id: String },
}

#[derive(Debug, Subcommand)]
enum FaultAction {
    /// Kill a module now, or arm it to die at a stage boundary.
    Kill {
        module_id: String,
        /// after-poll, after-execute or after-publish
        #[arg(long)]
        at: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum FeedbackAction {
    /// Write matching feedback as JSON lines.
    Export(client::FeedbackExport),
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn run(cli: Cli) -> CliResult {
    let ep = &cli.endpoints;
    match cli.command {
        Command::Bus {
            action: ServerAction::Start(a),
        } => servers::bus(a),
        Command::Store {
            action: ServerAction::Start(a),
        } => servers::store(a),
        Command::Launcher {
            action: ServerAction::Start(a),
        } => servers::launcher(a, ep),
        Command::Gateway {
            action: ServerAction::Start(a),
        } => servers::gateway(a, ep),
        Command::Module { action } => match action {
            ModuleAction::Start(a) => client::module_start(a, ep),
            ModuleAction::Stop {
                module_id,
                deadline_ms,
            } => client::module_stop(&module_id, deadline_ms, ep),
            ModuleAction::List => client::module_list(ep),
            ModuleAction::Run { config } => servers::module(&config),
        },
        Command::Task { action } => match action {
            TaskAction::Submit { graph, source } => {
                client::task_submit(&graph, source.as_deref(), ep)
            }
            TaskAction::Status { task_id } => client::task_status(&task_id, ep),
        },
        Command::Fault {
            action: FaultAction::Kill { module_id, at },
        } => client::fault_kill(&module_id, at.as_deref(), ep),
        Command::Feedback {
            action: FeedbackAction::Export(a),
        } => client::feedback_export(a, ep),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vpe: {}", e.msg);
            ExitCode::from(e.exit)
        }
    }
}
