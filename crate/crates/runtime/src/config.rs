//! Module config files: `key=value` lines, `#` comments.
//!
//! ```text
//! module_id=M1
//! datatypes=Pedestrian-Attribute,Pedestrian-Track
//! processor_id=reid-ranker
//! bus=127.0.0.1:7611
//! store=127.0.0.1:7613
//! launcher=127.0.0.1:7612
//! instance_count=2
//! state_dir=/var/lib/vpe
//! ttl_ms=3600000
//! version=v2
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;
use vpe_core::{DataType, ModuleDescriptor, ModuleId};

const KEYS: &[&str] = &[
    "module_id",
    "datatypes",
    "processor_id",
    "bus",
    "store",
    "launcher",
    "instance_count",
    "state_dir",
    "ttl_ms",
    "version",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("BAD_CONFIG: line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleConfig {
    pub descriptor: ModuleDescriptor,
    pub bus: String,
    pub store: String,
    pub launcher: Option<String>,
    pub state_dir: PathBuf,
    pub ttl: Duration,
}

impl ModuleConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let err = |msg: String| ConfigError { line, msg };
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {l:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(err(format!("unknown key {k:?}")));
            }
            if kv.insert(k, (line, v)).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        let last = text.lines().count();
        let need = |k: &str| {
            kv.get(k).copied().ok_or_else(|| ConfigError {
                line: last,
                msg: format!("missing key {k:?}"),
            })
        };
        let at = |line: usize| move |msg: String| ConfigError { line, msg };

        let (l, v) = need("module_id")?;
        let module_id = ModuleId::new(v).map_err(|e| at(l)(e.to_string()))?;
        let (l, v) = need("datatypes")?;
        let input_datatypes = v
            .split(',')
            .map(|d| DataType::new(d.trim()).map_err(|e| at(l)(e.to_string())))
            .collect::<Result<_, _>>()?;
        let (_, processor_id) = need("processor_id")?;
        let instance_count = match kv.get("instance_count") {
            Some(&(l, v)) => v
                .parse::<u32>()
                .map_err(|e| at(l)(format!("instance_count: {e}")))?,
            None => 1,
        };
        let version = kv
            .get("version")
            .map(|(_, v)| v.to_string())
            .filter(|v| !v.is_empty());
        let descriptor = ModuleDescriptor {
            module_id,
            input_datatypes,
            processor_id: processor_id.to_owned(),
            instance_count,
            version,
        };
        let id_line = need("module_id")?.0;
        descriptor.check().map_err(|e| at(id_line)(e.to_string()))?;

        let ttl = match kv.get("ttl_ms") {
            Some(&(l, v)) => Duration::from_millis(
                v.parse::<u64>()
                    .map_err(|e| at(l)(format!("ttl_ms: {e}")))?,
            ),
            None => Duration::from_secs(3600),
        };
        Ok(Self {
            descriptor,
            bus: need("bus")?.1.to_owned(),
            store: need("store")?.1.to_owned(),
            launcher: kv.get("launcher").map(|(_, v)| v.to_string()),
            state_dir: kv
                .get("state_dir")
                .map_or_else(|| PathBuf::from("vpe-state"), |(_, v)| PathBuf::from(v)),
            ttl,
        })
    }

    pub fn render(&self) -> String {
        let d = &self.descriptor;
        let mut out = format!(
            "module_id={}\ndatatypes={}\nprocessor_id={}\nbus={}\nstore={}\n",
            d.module_id,
            d.input_datatypes
                .iter()
                .map(DataType::as_str)
                .collect::<Vec<_>>()
                .join(","),
            d.processor_id,
            self.bus,
            self.store
        );
        if let Some(l) = &self.launcher {
            out.push_str(&format!("launcher={l}\n"));
        }
        out.push_str(&format!(
            "instance_count={}\nstate_dir={}\nttl_ms={}\n",
            d.instance_count,
            self.state_dir.display(),
            self.ttl.as_millis()
        ));
        if let Some(v) = &d.version {
            out.push_str(&format!("version={v}\n"));
        }
        out
    }
}
