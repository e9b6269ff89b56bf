//! Foreground service commands and the module process entry point.

use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use signal_hook::consts::{SIGINT, SIGTERM};
use signal_hook::iterator::Signals;
use vpe_core::processors::ProcessorRegistry;
use vpe_gateway::Gateway;
use vpe_metastore::{RemoteStore, Store, StoreOptions};
use vpe_msgbus::{Broker, BrokerOptions, RemoteBus};
use vpe_runtime::launcher::{Launcher, LauncherDirectory, LauncherOptions, RemoteLauncher};
use vpe_runtime::{
    Directory, FaultAction, FaultPoint, HostOptions, ModuleConfig, ModuleHost, StaticDirectory,
    FAULT_ENV,
};

use crate::{BusStart, CliError, CliResult, Endpoints, GatewayStart, LauncherStart, StoreStart};

fn bind(port: u16) -> Result<(TcpListener, SocketAddr), CliError> {
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| CliError::io(format!("bind 127.0.0.1:{port}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::io(e.to_string()))?;
    Ok((listener, addr))
}

/// Announces the bound address on stdout for scripts that started us with port 0.
fn ready(addr: SocketAddr) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "READY {addr}");
    let _ = out.flush();
}

fn wait_for_signal() -> CliResult {
    let mut signals = Signals::new([SIGTERM, SIGINT]).map_err(|e| CliError::io(e.to_string()))?;
    if let Some(sig) = signals.forever().next() {
        tracing::info!(signal = sig, "shutting down");
    }
    Ok(())
}

fn serve_in_background(
    name: &'static str,
    f: impl FnOnce() -> std::io::Result<()> + Send + 'static,
) {
    thread::spawn(move || {
        if let Err(e) = f() {
            tracing::error!(service = name, error = %e, "server stopped");
            std::process::exit(1);
        }
    });
}

pub fn bus(a: BusStart) -> CliResult {
    let broker = Broker::open(&a.dir, BrokerOptions { fsync: a.fsync })
        .map_err(|e| CliError::io(format!("open {}: {e}", a.dir.display())))?;
    let (listener, addr) = bind(a.port)?;
    let broker = Arc::new(broker);
    serve_in_background("bus", move || vpe_msgbus::serve(broker, listener));
    tracing::info!(%addr, dir = %a.dir.display(), "broker listening");
    ready(addr);
    wait_for_signal()
}

pub fn store(a: StoreStart) -> CliResult {
    let store = Store::open(&a.dir, StoreOptions { fsync: a.fsync })
        .map_err(|e| CliError::io(format!("open {}: {e}", a.dir.display())))?;
    let (listener, addr) = bind(a.port)?;
    let store = Arc::new(store);
    serve_in_background("store", move || vpe_metastore::serve(store, listener));
    tracing::info!(%addr, dir = %a.dir.display(), "metastore listening");
    ready(addr);
    wait_for_signal()
}

pub fn launcher(a: LauncherStart, ep: &Endpoints) -> CliResult {
    let program = std::env::current_exe().map_err(|e| CliError::io(e.to_string()))?;
    let (listener, addr) = bind(a.port)?;
    let mut opts = LauncherOptions::new(&a.dir, program, &ep.bus(), &ep.store());
    opts.args = vec!["module".into(), "run".into()];
    opts.self_addr = Some(addr.to_string());
    if let Some(s) = a.state_dir {
        opts.state_dir = s;
    }
    opts.ttl = Duration::from_millis(a.ttl_ms);
    opts.grace = Duration::from_millis(a.grace_ms);
    let bus = Arc::new(RemoteBus::new(ep.bus()));
    let launcher = Launcher::open(opts, bus, ProcessorRegistry::builtin())
        .map_err(|e| CliError::io(format!("launcher: {e}")))?;
    {
        let launcher = Arc::clone(&launcher);
        serve_in_background("launcher", move || {
            vpe_runtime::launcher::serve(launcher, listener)
        });
    }
    tracing::info!(%addr, dir = %a.dir.display(), "launcher listening");
    ready(addr);
    let r = wait_for_signal();
    launcher.shutdown();
    r
}

pub fn gateway(a: GatewayStart, ep: &Endpoints) -> CliResult {
    let (listener, addr) = bind(a.port)?;
    let gw = Gateway {
        store: Arc::new(RemoteStore::new(ep.store())),
        bus: Arc::new(RemoteBus::new(ep.bus())),
        modules: Arc::new(RemoteLauncher::new(ep.launcher())),
        stall_after: Duration::from_millis(a.stall_ms),
    };
    let running =
        vpe_gateway::Running::start(listener, gw).map_err(|e| CliError::io(e.to_string()))?;
    tracing::info!(%addr, "gateway listening");
    ready(addr);
    let r = wait_for_signal();
    running.stop().map_err(|e| CliError::io(e.to_string()))?;
    r
}

pub fn module(config: &Path) -> CliResult {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::io(format!("{}: {e}", config.display())))?;
    let cfg = ModuleConfig::parse(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", config.display())))?;
    let processor = ProcessorRegistry::builtin()
        .get(&cfg.descriptor.processor_id)
        .ok_or_else(|| {
            CliError::invalid(format!(
                "UNKNOWN_PROCESSOR: {}",
                cfg.descriptor.processor_id
            ))
        })?;
    let directory: Arc<dyn Directory> = match &cfg.launcher {
        Some(addr) => Arc::new(LauncherDirectory::new(addr.clone())),
        None => Arc::new(StaticDirectory::new([cfg.descriptor.clone()])),
    };
    let mut opts = HostOptions::new(&cfg.state_dir);
    opts.ttl = cfg.ttl;
    opts.fault_action = FaultAction::Kill;
    if let Ok(v) = std::env::var(FAULT_ENV) {
        let point: FaultPoint = v.parse().map_err(CliError::invalid)?;
        tracing::warn!(point = %point, "fault armed");
        opts.fault = Some(point);
    }
    let host = ModuleHost::new(
        cfg.descriptor.clone(),
        processor,
        Arc::new(RemoteBus::new(cfg.bus.clone())),
        Arc::new(RemoteStore::new(cfg.store.clone())),
        directory,
        opts,
    )
    .map_err(|e| CliError::io(format!("module {}: {e}", cfg.descriptor.module_id)))?;
    for sig in [SIGTERM, SIGINT] {
        signal_hook::flag::register(sig, host.stop_handle())
            .map_err(|e| CliError::io(e.to_string()))?;
    }
    host.run().map_err(|e| CliError::io(e.to_string()))
}
