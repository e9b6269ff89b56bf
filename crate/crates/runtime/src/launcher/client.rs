use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use vpe_core::wire::{FrameClient, RemoteError};
use vpe_core::{ModuleDescriptor, ModuleId};

use super::protocol::*;
use super::LaunchError;
use crate::fault::FaultPoint;
use crate::routing::Directory;

impl From<RemoteError> for LaunchError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Io(io) => LaunchError::Io(io),
            RemoteError::Remote { code, detail } => LaunchError::Remote { code, detail },
            RemoteError::Protocol(p) => LaunchError::Remote {
                code: "PROTOCOL".into(),
                detail: p,
            },
        }
    }
}

#[derive(Debug)]
pub struct RemoteLauncher {
    client: FrameClient,
}

impl RemoteLauncher {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            client: FrameClient::new(addr),
        }
    }

    pub fn addr(&self) -> &str {
        self.client.addr()
    }

    pub fn launch(&self, descriptor: &ModuleDescriptor) -> Result<ModuleStatus, LaunchError> {
        let req = LaunchRequest {
            descriptor: descriptor.clone(),
        };
        Ok(self.client.call(OP_LAUNCH, &req)?)
    }

    pub fn terminate(
        &self,
        module_id: &str,
        deadline: Option<Duration>,
    ) -> Result<TerminateReply, LaunchError> {
        let req = TerminateRequest {
            module_id: module_id.to_owned(),
            deadline_ms: deadline.map(|d| d.as_millis() as u64),
        };
        Ok(self.client.call(OP_TERMINATE, &req)?)
    }

    pub fn list(&self) -> Result<Vec<ModuleStatus>, LaunchError> {
        let r: ListReply = self.client.call(OP_LIST, &Empty {})?;
        Ok(r.modules)
    }

    pub fn fault(
        &self,
        module_id: &str,
        at: Option<FaultPoint>,
    ) -> Result<ModuleStatus, LaunchError> {
        let req = FaultRequest {
            module_id: module_id.to_owned(),
            at: at.map(|p| p.as_str().to_owned()),
        };
        Ok(self.client.call(OP_FAULT, &req)?)
    }
}

/// Module descriptors fetched from a launcher, cached briefly and refreshed
/// on a miss.
#[derive(Debug)]
pub struct LauncherDirectory {
    launcher: RemoteLauncher,
    max_age: Duration,
    cache: Mutex<Option<(Instant, BTreeMap<ModuleId, ModuleDescriptor>)>>,
}

impl LauncherDirectory {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            launcher: RemoteLauncher::new(addr),
            max_age: Duration::from_secs(2),
            cache: Mutex::new(None),
        }
    }

    fn refresh(&self) -> Result<BTreeMap<ModuleId, ModuleDescriptor>, String> {
        let list = self.launcher.list().map_err(|e| e.to_string())?;
        let map: BTreeMap<_, _> = list
            .into_iter()
            .map(|s| (s.descriptor.module_id.clone(), s.descriptor))
            .collect();
        *self.cache.lock().expect("cache lock") = Some((Instant::now(), map.clone()));
        Ok(map)
    }
}

impl Directory for LauncherDirectory {
    fn lookup(&self, module: &ModuleId) -> Result<Option<ModuleDescriptor>, String> {
        if let Some((at, map)) = &*self.cache.lock().expect("cache lock") {
            if at.elapsed() < self.max_age {
                if let Some(d) = map.get(module) {
                    return Ok(Some(d.clone()));
                }
            }
        }
        Ok(self.refresh()?.get(module).cloned())
    }
}
