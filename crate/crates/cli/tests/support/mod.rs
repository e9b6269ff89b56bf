//! Runs the platform as real processes of the `vpe` binary.
#![allow(dead_code)]

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;
use uuid::Uuid;
use vpe_metastore::{MetaStore, RemoteStore};
use vpe_runtime::launcher::{ModuleStatus, RemoteLauncher};

pub const BIN: &str = env!("CARGO_BIN_EXE_vpe");

pub struct Service {
    child: Child,
    pub addr: String,
}

impl Service {
    /// Starts `vpe <args> --port 0` and waits for its READY line.
    pub fn spawn(args: &[&str], log: &Path) -> Self {
        let log = File::create(log).unwrap();
        let mut child = Command::new(BIN)
            .args(args)
            .args(["--port", "0"])
            .env("RUST_LOG", "warn")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(log)
            .spawn()
            .unwrap();
        let stdout = child.stdout.take().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            if let Some(Ok(l)) = lines.next() {
                let _ = tx.send(l);
            }
            for _ in lines {}
        });
        let line = rx
            .recv_timeout(Duration::from_secs(20))
            .unwrap_or_else(|_| panic!("{args:?} did not become ready"));
        let addr = line.strip_prefix("READY ").expect("READY line").to_owned();
        Self { child, addr }
    }

    pub fn signal(&self, sig: libc::c_int) {
        // SAFETY: plain syscall on our own child.
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, sig);
        }
    }

    /// SIGKILL, no cleanup.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// SIGTERM and wait.
    pub fn stop(mut self) {
        self.signal(libc::SIGTERM);
        let _ = self.child.wait();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.signal(libc::SIGTERM);
            let until = Instant::now() + Duration::from_secs(10);
            while Instant::now() < until {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(20));
            }
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

pub struct Platform {
    pub dir: TempDir,
    pub bus: Option<Service>,
    pub store: Option<Service>,
    pub launcher: Option<Service>,
    pub gateway: Option<Service>,
}

impl Platform {
    pub fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = |s: &str| dir.path().join(s);
        let bus_dir = p("bus");
        let bus = Service::spawn(
            &["bus", "start", "--dir", bus_dir.to_str().unwrap()],
            &p("bus.log"),
        );
        let store_dir = p("store");
        let store = Service::spawn(
            &["store", "start", "--dir", store_dir.to_str().unwrap()],
            &p("store.log"),
        );
        let launcher_dir = p("launcher");
        let launcher = Service::spawn(
            &[
                "--bus",
                &bus.addr,
                "--store",
                &store.addr,
                "launcher",
                "start",
                "--dir",
                launcher_dir.to_str().unwrap(),
                "--grace-ms",
                "3000",
            ],
            &p("launcher.log"),
        );
        let gateway = Service::spawn(
            &[
                "--bus",
                &bus.addr,
                "--store",
                &store.addr,
                "--launcher",
                &launcher.addr,
                "gateway",
                "start",
            ],
            &p("gateway.log"),
        );
        Self {
            dir,
            bus: Some(bus),
            store: Some(store),
            launcher: Some(launcher),
            gateway: Some(gateway),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn bus_addr(&self) -> String {
        self.bus.as_ref().unwrap().addr.clone()
    }

    pub fn store_addr(&self) -> String {
        self.store.as_ref().unwrap().addr.clone()
    }

    pub fn launcher_addr(&self) -> String {
        self.launcher.as_ref().unwrap().addr.clone()
    }

    pub fn gateway_addr(&self) -> String {
        self.gateway.as_ref().unwrap().addr.clone()
    }

    /// Runs the CLI against this platform.
    pub fn vpe(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(BIN);
        for (flag, svc) in [
            ("--bus", &self.bus),
            ("--store", &self.store),
            ("--launcher", &self.launcher),
            ("--gateway", &self.gateway),
        ] {
            if let Some(s) = svc {
                cmd.args([flag, &s.addr]);
            }
        }
        cmd.args(args).env("RUST_LOG", "warn").output().unwrap()
    }

    pub fn vpe_ok(&self, args: &[&str]) -> String {
        let out = self.vpe(args);
        assert!(
            out.status.success(),
            "vpe {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn start_module(&self, id: &str, datatypes: &str, processor: &str) {
        self.vpe_ok(&[
            "module",
            "start",
            id,
            "--datatypes",
            datatypes,
            "--processor",
            processor,
        ]);
    }

    pub fn launcher_client(&self) -> RemoteLauncher {
        RemoteLauncher::new(self.launcher_addr())
    }

    pub fn store_client(&self) -> RemoteStore {
        RemoteStore::new(self.store_addr())
    }

    pub fn module(&self, id: &str) -> ModuleStatus {
        self.launcher_client()
            .list()
            .unwrap()
            .into_iter()
            .find(|m| m.descriptor.module_id.as_str() == id)
            .unwrap()
    }

    pub fn http(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let url = format!("http://{}{path}", self.gateway_addr());
        let mut r = self.http().post(&url).send_json(body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let url = format!("http://{}{path}", self.gateway_addr());
        let mut r = self.http().get(&url).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn submit(&self, body: &Value) -> Uuid {
        let (code, r) = self.post("/tasks", body);
        assert_eq!(code, 201, "{r}");
        r["task_id"].as_str().unwrap().parse().unwrap()
    }

    pub fn results(&self, task: Uuid) -> usize {
        self.store_client().query_results(task, None).unwrap().len()
    }

    /// Waits until every task has `nodes` results; returns the stragglers on timeout.
    pub fn await_complete(&self, tasks: &[Uuid], nodes: usize, limit: Duration) -> Vec<Uuid> {
        let store = self.store_client();
        let mut pending: Vec<Uuid> = tasks.to_vec();
        let until = Instant::now() + limit;
        loop {
            pending.retain(|t| store.query_results(*t, None).unwrap().len() < nodes);
            if pending.is_empty() || Instant::now() > until {
                return pending;
            }
            thread::sleep(Duration::from_millis(50));
        }
    }

    /// Log of a module process, for failure messages.
    pub fn module_log(&self, id: &str) -> String {
        std::fs::read_to_string(self.path(&format!("launcher/logs/{id}.log"))).unwrap_or_default()
    }
}

impl Drop for Platform {
    fn drop(&mut self) {
        // The launcher stops its modules before the services they use go away.
        drop(self.gateway.take());
        drop(self.launcher.take());
        drop(self.store.take());
        drop(self.bus.take());
    }
}

pub fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let until = Instant::now() + limit;
    while Instant::now() < until {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(20));
    }
    f()
}
