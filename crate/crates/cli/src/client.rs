//! Commands that talk to running services.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde_json::Value;
use vpe_core::{DataType, ModuleDescriptor, ModuleId};
use vpe_metastore::{FeedbackFilter, FeedbackKind, MetaStore, RemoteStore};
use vpe_runtime::launcher::{LaunchError, RemoteLauncher};
use vpe_runtime::FaultPoint;

use crate::{CliError, CliResult, Endpoints};

fn launch_error(e: LaunchError) -> CliError {
    match e.code() {
        "ALREADY_RUNNING" | "NOT_RUNNING" => CliError::state(e.to_string()),
        "IO_FAIL" | "PROTOCOL" => CliError::io(e.to_string()),
        _ => CliError::invalid(e.to_string()),
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

#[derive(Debug, Args)]
pub struct ModuleStart {
    pub module_id: String,
    /// Comma-separated input datatypes.
    #[arg(long, value_delimiter = ',', required_unless_present = "descriptor")]
    pub datatypes: Vec<String>,
    #[arg(long, required_unless_present = "descriptor")]
    pub processor: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub instances: u32,
    /// Build label recorded with the module.
    #[arg(long)]
    pub version: Option<String>,
    /// Read the whole descriptor from a JSON file instead.
    #[arg(long, conflicts_with_all = ["datatypes", "processor"])]
    pub descriptor: Option<PathBuf>,
}

fn descriptor(a: &ModuleStart) -> Result<ModuleDescriptor, CliError> {
    if let Some(path) = &a.descriptor {
        let text =
            std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let d: ModuleDescriptor = serde_json::from_slice(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        if d.module_id.as_str() != a.module_id {
            return Err(CliError::invalid(format!(
                "descriptor names module {}, not {}",
                d.module_id, a.module_id
            )));
        }
        return Ok(d);
    }
    let module_id =
        ModuleId::new(a.module_id.as_str()).map_err(|e| CliError::invalid(e.to_string()))?;
    let datatypes = a
        .datatypes
        .iter()
        .map(|d| DataType::new(d.trim()).map_err(|e| CliError::invalid(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut d = ModuleDescriptor::new(
        module_id,
        datatypes,
        a.processor.clone().unwrap_or_default(),
    );
    d.instance_count = a.instances;
    d.version = a.version.clone();
    Ok(d)
}

pub fn module_start(a: ModuleStart, ep: &Endpoints) -> CliResult {
    let d = descriptor(&a)?;
    let status = RemoteLauncher::new(ep.launcher())
        .launch(&d)
        .map_err(launch_error)?;
    print_json(&status);
    Ok(())
}

pub fn module_stop(module_id: &str, deadline_ms: Option<u64>, ep: &Endpoints) -> CliResult {
    let r = RemoteLauncher::new(ep.launcher())
        .terminate(module_id, deadline_ms.map(Duration::from_millis))
        .map_err(launch_error)?;
    print_json(&r);
    Ok(())
}

pub fn module_list(ep: &Endpoints) -> CliResult {
    let list = RemoteLauncher::new(ep.launcher())
        .list()
        .map_err(launch_error)?;
    print_json(&list);
    Ok(())
}

pub fn fault_kill(module_id: &str, at: Option<&str>, ep: &Endpoints) -> CliResult {
    let at = at
        .map(str::parse::<FaultPoint>)
        .transpose()
        .map_err(CliError::invalid)?;
    let st = RemoteLauncher::new(ep.launcher())
        .fault(module_id, at)
        .map_err(launch_error)?;
    print_json(&st);
    Ok(())
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// The graph file holds either a bare graph or a whole request body.
pub fn submission_body(graph: &Path, source: Option<&Path>) -> Result<Value, CliError> {
    let g = read_json(graph)?;
    let mut body = if g.get("graph").is_some() {
        g
    } else {
        serde_json::json!({ "graph": g, "source_payloads": {} })
    };
    if let Some(s) = source {
        body["source_payloads"] = read_json(s)?;
    }
    Ok(body)
}

pub fn task_submit(graph: &Path, source: Option<&Path>, ep: &Endpoints) -> CliResult {
    let body = submission_body(graph, source)?;
    let url = format!("http://{}/tasks", ep.gateway());
    let mut resp = agent()
        .post(&url)
        .send_json(&body)
        .map_err(|e| CliError::io(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let reply: Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| CliError::io(format!("{url}: {e}")))?;
    match status {
        201 => {
            println!("{}", reply["task_id"].as_str().unwrap_or_default());
            Ok(())
        }
        400 | 409 | 422 => Err(CliError::invalid(format!(
            "rejected ({status}):\n{}",
            serde_json::to_string_pretty(&reply).expect("serializes")
        ))),
        _ => Err(CliError::io(format!("gateway answered {status}: {reply}"))),
    }
}

pub fn task_status(task_id: &str, ep: &Endpoints) -> CliResult {
    let url = format!("http://{}/tasks/{task_id}", ep.gateway());
    let mut resp = agent()
        .get(&url)
        .call()
        .map_err(|e| CliError::io(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let reply: Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| CliError::io(format!("{url}: {e}")))?;
    match status {
        200 => {
            print_json(&reply);
            Ok(())
        }
        400 => Err(CliError::invalid(
            reply["detail"].as_str().unwrap_or_default().to_owned(),
        )),
        _ => Err(CliError::io(format!(
            "{status}: {}",
            reply["detail"].as_str().unwrap_or_default()
        ))),
    }
}

#[derive(Debug, Args)]
pub struct FeedbackExport {
    #[arg(long)]
    pub module: Option<String>,
    /// SATISFACTION, SELECTION or REVISION
    #[arg(long)]
    pub kind: Option<String>,
    /// Only feedback created at or after this time (ms since epoch).
    #[arg(long)]
    pub since: Option<u64>,
    /// Output file; `-` writes to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn feedback_export(a: FeedbackExport, ep: &Endpoints) -> CliResult {
    let kind = a
        .kind
        .as_deref()
        .map(|k| {
            serde_json::from_value::<FeedbackKind>(Value::String(k.to_ascii_uppercase()))
                .map_err(|_| CliError::invalid(format!("unknown feedback kind {k:?}")))
        })
        .transpose()?;
    let filter = FeedbackFilter {
        module_id: a.module,
        kind,
        since: a.since,
    };
    let records = RemoteStore::new(ep.store())
        .export_feedback(&filter)
        .map_err(|e| CliError::io(e.to_string()))?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        for r in &records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    let result = if a.out.as_os_str() == "-" {
        write(&mut std::io::stdout().lock())
    } else {
        let file =
            File::create(&a.out).map_err(|e| CliError::io(format!("{}: {e}", a.out.display())))?;
        write(&mut BufWriter::new(file))
    };
    result.map_err(|e| CliError::io(format!("{}: {e}", a.out.display())))?;
    eprintln!("exported {} feedback records", records.len());
    Ok(())
}
