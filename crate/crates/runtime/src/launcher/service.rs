use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use vpe_core::module::check_topic_collisions;
use vpe_core::processors::ProcessorRegistry;
use vpe_core::recordlog::write_atomic;
use vpe_core::wire::{decode_request, err_reply, ok_reply, serve_frames};
use vpe_core::{ModuleDescriptor, ModuleId};
use vpe_msgbus::Bus;

use super::protocol::*;
use super::LaunchError;
use crate::config::ModuleConfig;
use crate::fault::{FaultPoint, FAULT_ENV};

#[derive(Debug, Clone)]
pub struct LauncherOptions {
    /// Registry, generated module configs and logs live here.
    pub dir: PathBuf,
    /// Executable run for each module, followed by `args` and `--config <file>`.
    pub program: PathBuf,
    pub args: Vec<String>,
    pub bus: String,
    pub store: String,
    /// Address modules use to look up other modules' descriptors.
    pub self_addr: Option<String>,
    /// Module state (ledgers) directory handed to every module.
    pub state_dir: PathBuf,
    pub ttl: Duration,
    /// How long a graceful stop may take before the module is killed.
    pub grace: Duration,
    pub supervise_every: Duration,
}

impl LauncherOptions {
    pub fn new(
        dir: impl Into<PathBuf>,
        program: impl Into<PathBuf>,
        bus: &str,
        store: &str,
    ) -> Self {
        let dir = dir.into();
        Self {
            state_dir: dir.join("state"),
            dir,
            program: program.into(),
            args: Vec::new(),
            bus: bus.to_owned(),
            store: store.to_owned(),
            self_addr: None,
            ttl: Duration::from_secs(3600),
            grace: Duration::from_secs(5),
            supervise_every: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryEntry {
    descriptor: ModuleDescriptor,
    running: bool,
    #[serde(default)]
    pid: Option<u32>,
}

#[derive(Debug)]
struct Slot {
    descriptor: ModuleDescriptor,
    /// Should be running; the supervisor relaunches it if it exits.
    wanted: bool,
    child: Option<Child>,
    /// A stop is in progress outside the lock.
    stopping: bool,
    restarts: u32,
    armed: Option<FaultPoint>,
}

impl Slot {
    fn alive(&mut self) -> bool {
        match &mut self.child {
            Some(c) => matches!(c.try_wait(), Ok(None)),
            None => false,
        }
    }
}

pub struct Launcher {
    opts: LauncherOptions,
    bus: Arc<dyn Bus>,
    processors: ProcessorRegistry,
    slots: Mutex<BTreeMap<ModuleId, Slot>>,
    closed: AtomicBool,
}

impl std::fmt::Debug for Launcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Launcher")
            .field("dir", &self.opts.dir)
            .finish_non_exhaustive()
    }
}

fn registry_path(dir: &Path) -> PathBuf {
    dir.join("registry.json")
}

fn signal(child: &Child, sig: libc::c_int) {
    // SAFETY: plain syscall on a pid we own.
    unsafe {
        libc::kill(child.id() as libc::pid_t, sig);
    }
}

/// Kills a process left over from an earlier launcher run, if `pid` still
/// runs the given module config.
fn reap_orphan(pid: u32, config: &Path) {
    let Ok(cmdline) = fs::read(format!("/proc/{pid}/cmdline")) else {
        return;
    };
    let needle = config.to_string_lossy();
    if String::from_utf8_lossy(&cmdline).contains(needle.as_ref()) {
        tracing::warn!(pid, "killing module process left by a previous launcher");
        // SAFETY: plain syscall.
        unsafe {
            libc::kill(pid as libc::pid_t, libc::SIGKILL);
        }
    }
}

impl Launcher {
    /// Opens the registry and relaunches every module that was running when
    /// the launcher last stopped.
    pub fn open(
        opts: LauncherOptions,
        bus: Arc<dyn Bus>,
        processors: ProcessorRegistry,
    ) -> Result<Arc<Self>, LaunchError> {
        fs::create_dir_all(opts.dir.join("modules"))?;
        fs::create_dir_all(opts.dir.join("logs"))?;
        let entries: Vec<RegistryEntry> = match fs::read(registry_path(&opts.dir)) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("registry: {e}"))
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let launcher = Arc::new(Self {
            opts,
            bus,
            processors,
            slots: Mutex::new(BTreeMap::new()),
            closed: AtomicBool::new(false),
        });
        {
            let mut slots = launcher.slots.lock().expect("slots lock");
            for e in entries {
                if let Some(pid) = e.pid {
                    reap_orphan(pid, &launcher.config_path(&e.descriptor.module_id));
                }
                let mut slot = Slot {
                    descriptor: e.descriptor,
                    wanted: e.running,
                    child: None,
                    stopping: false,
                    restarts: 0,
                    armed: None,
                };
                if slot.wanted {
                    if let Err(err) = launcher.spawn(&mut slot, None) {
                        tracing::error!(module = %slot.descriptor.module_id, error = %err, "relaunch failed");
                    }
                }
                slots.insert(slot.descriptor.module_id.clone(), slot);
            }
            launcher.persist(&slots)?;
        }
        let weak = Arc::downgrade(&launcher);
        let every = launcher.opts.supervise_every;
        thread::spawn(move || loop {
            thread::sleep(every);
            match weak.upgrade() {
                Some(l) if !l.closed.load(Ordering::SeqCst) => l.supervise(),
                _ => return,
            }
        });
        Ok(launcher)
    }

    fn config_path(&self, id: &ModuleId) -> PathBuf {
        self.opts.dir.join("modules").join(format!("{id}.conf"))
    }

    pub fn log_path(&self, id: &ModuleId) -> PathBuf {
        self.opts.dir.join("logs").join(format!("{id}.log"))
    }

    fn persist(&self, slots: &BTreeMap<ModuleId, Slot>) -> Result<(), LaunchError> {
        let entries: Vec<RegistryEntry> = slots
            .values()
            .map(|s| RegistryEntry {
                descriptor: s.descriptor.clone(),
                running: s.wanted,
                pid: s.child.as_ref().map(Child::id),
            })
            .collect();
        let bytes = serde_json::to_vec_pretty(&entries).expect("registry serializes");
        write_atomic(&registry_path(&self.opts.dir), &bytes, false)?;
        Ok(())
    }

    fn spawn(&self, slot: &mut Slot, fault: Option<FaultPoint>) -> Result<(), LaunchError> {
        let d = &slot.descriptor;
        let config = ModuleConfig {
            descriptor: d.clone(),
            bus: self.opts.bus.clone(),
            store: self.opts.store.clone(),
            launcher: self.opts.self_addr.clone(),
            state_dir: self.opts.state_dir.clone(),
            ttl: self.opts.ttl,
        };
        let path = self.config_path(&d.module_id);
        write_atomic(&path, config.render().as_bytes(), false)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path(&d.module_id))?;
        let mut cmd = Command::new(&self.opts.program);
        cmd.args(&self.opts.args)
            .arg("--config")
            .arg(&path)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log);
        match fault {
            Some(p) => cmd.env(FAULT_ENV, p.as_str()),
            None => cmd.env_remove(FAULT_ENV),
        };
        let child = cmd.spawn()?;
        tracing::info!(module = %d.module_id, pid = child.id(), fault = ?fault, "module launched");
        slot.child = Some(child);
        slot.armed = fault;
        Ok(())
    }

    fn ensure_topics(&self, d: &ModuleDescriptor) -> Result<(), LaunchError> {
        let io = |e: vpe_msgbus::BusError| LaunchError::Remote {
            code: e.code().to_owned(),
            detail: format!("creating topics: {e}"),
        };
        for (_, t) in d.owned_topics() {
            self.bus.create_topic(&t).map_err(io)?;
        }
        self.bus.create_topic(&d.dead_letter_topic()).map_err(io)?;
        Ok(())
    }

    fn produces(&self, d: &ModuleDescriptor) -> Vec<String> {
        self.processors
            .get(&d.processor_id)
            .map(|p| {
                p.contract()
                    .produces
                    .iter()
                    .map(|t| t.to_string())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn status(&self, slot: &mut Slot) -> ModuleStatus {
        let running = slot.alive();
        ModuleStatus {
            produces: self.produces(&slot.descriptor),
            descriptor: slot.descriptor.clone(),
            running,
            pid: slot.child.as_ref().filter(|_| running).map(Child::id),
            restarts: slot.restarts,
            armed_fault: slot.armed.map(|p| p.as_str().to_owned()),
        }
    }

    pub fn launch(&self, descriptor: ModuleDescriptor) -> Result<ModuleStatus, LaunchError> {
        descriptor
            .check()
            .map_err(|e| LaunchError::BadDescriptor(e.to_string()))?;
        let processor = self
            .processors
            .get(&descriptor.processor_id)
            .ok_or_else(|| LaunchError::UnknownProcessor(descriptor.processor_id.clone()))?;
        if let Some(d) = descriptor
            .input_datatypes
            .iter()
            .find(|d| !processor.contract().accepts.contains(*d))
        {
            return Err(LaunchError::BadDescriptor(format!(
                "processor {} does not accept {d}",
                descriptor.processor_id
            )));
        }
        let mut slots = self.slots.lock().expect("slots lock");
        if let Some(slot) = slots.get_mut(&descriptor.module_id) {
            if slot.stopping || slot.alive() {
                return Err(LaunchError::AlreadyRunning(
                    descriptor.module_id.to_string(),
                ));
            }
        }
        check_topic_collisions(&descriptor, slots.values().map(|s| &s.descriptor))
            .map_err(|e| LaunchError::TopicCollision(e.to_string()))?;
        self.ensure_topics(&descriptor)?;
        let id = descriptor.module_id.clone();
        let slot = slots.entry(id.clone()).or_insert_with(|| Slot {
            descriptor: descriptor.clone(),
            wanted: false,
            child: None,
            stopping: false,
            restarts: 0,
            armed: None,
        });
        slot.descriptor = descriptor;
        self.spawn(slot, None)?;
        slot.wanted = true;
        let status = self.status(slot);
        self.persist(&slots)?;
        Ok(status)
    }

    /// Takes the child out of its slot for a stop performed without the lock.
    fn begin_stop(&self, id: &str, keep_wanted: bool) -> Result<Child, LaunchError> {
        let mid = ModuleId::new(id).map_err(|_| LaunchError::NotRunning(id.to_owned()))?;
        let mut slots = self.slots.lock().expect("slots lock");
        let slot = slots
            .get_mut(&mid)
            .filter(|s| !s.stopping)
            .ok_or_else(|| LaunchError::NotRunning(id.to_owned()))?;
        if !slot.alive() {
            return Err(LaunchError::NotRunning(id.to_owned()));
        }
        slot.stopping = true;
        slot.wanted = keep_wanted;
        let child = slot.child.take().expect("alive slot has a child");
        // The child is ours to stop now; callers persist again once it is gone.
        if let Err(e) = self.persist(&slots) {
            tracing::warn!(module = id, error = %e, "registry write failed before stop");
        }
        Ok(child)
    }

    /// SIGTERM, then SIGKILL once `deadline` passes. Returns whether it was killed.
    fn stop_child(mut child: Child, deadline: Duration) -> bool {
        signal(&child, libc::SIGTERM);
        let until = Instant::now() + deadline;
        while Instant::now() < until {
            if let Ok(Some(_)) = child.try_wait() {
                return false;
            }
            thread::sleep(Duration::from_millis(20));
        }
        let _ = child.kill();
        let _ = child.wait();
        true
    }

    pub fn terminate(
        &self,
        id: &str,
        deadline: Option<Duration>,
    ) -> Result<TerminateReply, LaunchError> {
        let child = self.begin_stop(id, false)?;
        let forced = Self::stop_child(child, deadline.unwrap_or(self.opts.grace));
        let mid = ModuleId::new(id).expect("checked in begin_stop");
        let mut slots = self.slots.lock().expect("slots lock");
        if let Some(slot) = slots.get_mut(&mid) {
            slot.stopping = false;
            slot.armed = None;
        }
        self.persist(&slots)?;
        tracing::info!(module = id, forced, "module terminated");
        Ok(TerminateReply {
            module_id: id.to_owned(),
            forced,
        })
    }

    /// Kills the module now, or restarts it armed to crash at `at`. Either
    /// way the supervisor relaunches it afterwards.
    pub fn fault(&self, id: &str, at: Option<FaultPoint>) -> Result<ModuleStatus, LaunchError> {
        let mid = ModuleId::new(id).map_err(|_| LaunchError::NotRunning(id.to_owned()))?;
        let Some(point) = at else {
            let mut slots = self.slots.lock().expect("slots lock");
            let slot = slots
                .get_mut(&mid)
                .filter(|s| !s.stopping)
                .ok_or_else(|| LaunchError::NotRunning(id.to_owned()))?;
            if !slot.alive() {
                return Err(LaunchError::NotRunning(id.to_owned()));
            }
            if let Some(c) = &mut slot.child {
                let _ = c.kill();
            }
            tracing::warn!(module = id, "fault: killed");
            return Ok(self.status(slot));
        };
        let child = self.begin_stop(id, true)?;
        Self::stop_child(child, self.opts.grace);
        let mut slots = self.slots.lock().expect("slots lock");
        let slot = slots.get_mut(&mid).expect("slot exists");
        slot.stopping = false;
        let spawned = self.spawn(slot, Some(point));
        slot.restarts += 1;
        let status = self.status(slot);
        self.persist(&slots)?;
        spawned?;
        tracing::warn!(module = id, point = %point, "fault: armed");
        Ok(status)
    }

    pub fn list(&self) -> Vec<ModuleStatus> {
        let mut slots = self.slots.lock().expect("slots lock");
        slots.values_mut().map(|s| self.status(s)).collect()
    }

    /// Relaunches wanted modules whose process has exited.
    fn supervise(&self) {
        let mut slots = self.slots.lock().expect("slots lock");
        let mut changed = false;
        for slot in slots.values_mut() {
            if !slot.wanted || slot.stopping {
                continue;
            }
            if let Some(c) = &mut slot.child {
                match c.try_wait() {
                    Ok(None) => continue,
                    Ok(Some(status)) => {
                        tracing::warn!(module = %slot.descriptor.module_id, %status, "module exited, relaunching");
                    }
                    Err(e) => {
                        tracing::warn!(module = %slot.descriptor.module_id, error = %e, "wait failed");
                        continue;
                    }
                }
            }
            slot.child = None;
            slot.restarts += 1;
            if let Err(e) = self.spawn(slot, None) {
                tracing::error!(module = %slot.descriptor.module_id, error = %e, "relaunch failed");
            }
            changed = true;
        }
        if changed {
            if let Err(e) = self.persist(&slots) {
                tracing::error!(error = %e, "registry write failed");
            }
        }
    }

    /// Stops every module gracefully, keeping the registry's running flags so
    /// the next launcher brings them back.
    pub fn shutdown(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let children: Vec<Child> = {
            let mut slots = self.slots.lock().expect("slots lock");
            let taken = slots.values_mut().filter_map(|s| s.child.take()).collect();
            if let Err(e) = self.persist(&slots) {
                tracing::error!(error = %e, "registry write failed");
            }
            taken
        };
        let grace = self.opts.grace;
        let handles: Vec<_> = children
            .into_iter()
            .map(|c| thread::spawn(move || Self::stop_child(c, grace)))
            .collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

pub fn handle_request(launcher: &Launcher, opcode: u8, body: &[u8]) -> Vec<u8> {
    macro_rules! req {
        ($t:ty) => {
            match decode_request::<$t>(body) {
                Ok(r) => r,
                Err(reply) => return reply,
            }
        };
    }
    fn reply<T: Serialize>(r: Result<T, LaunchError>) -> Vec<u8> {
        match r {
            Ok(v) => ok_reply(&v),
            Err(e) => err_reply(e.code(), &e.to_string()),
        }
    }
    match opcode {
        OP_LAUNCH => reply(launcher.launch(req!(LaunchRequest).descriptor)),
        OP_TERMINATE => {
            let r = req!(TerminateRequest);
            reply(launcher.terminate(&r.module_id, r.deadline_ms.map(Duration::from_millis)))
        }
        OP_LIST => {
            let _ = req!(Empty);
            ok_reply(&ListReply {
                modules: launcher.list(),
            })
        }
        OP_FAULT => {
            let r = req!(FaultRequest);
            let at = match r.at.as_deref().map(str::parse::<FaultPoint>).transpose() {
                Ok(a) => a,
                Err(e) => return err_reply("BAD_REQUEST", &e),
            };
            reply(launcher.fault(&r.module_id, at))
        }
        other => err_reply("BAD_REQUEST", &format!("unknown opcode {other}")),
    }
}

pub fn serve(launcher: Arc<Launcher>, listener: TcpListener) -> std::io::Result<()> {
    serve_frames(
        listener,
        Arc::new(move |op, body: &[u8]| handle_request(&launcher, op, body)),
    )
}
