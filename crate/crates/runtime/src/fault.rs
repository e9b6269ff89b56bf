//! Kill points at stage boundaries of the consume loop, for crash testing.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

pub const FAULT_ENV: &str = "VPE_FAULT_POINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultPoint {
    /// A non-empty batch was polled; nothing processed yet.
    AfterPoll,
    /// A node executed and its ledger entry is written; nothing persisted or published.
    AfterExecute,
    /// Outputs were published; offsets not yet committed.
    AfterPublish,
}

impl FaultPoint {
    pub const ALL: [FaultPoint; 3] = [
        FaultPoint::AfterPoll,
        FaultPoint::AfterExecute,
        FaultPoint::AfterPublish,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultPoint::AfterPoll => "after-poll",
            FaultPoint::AfterExecute => "after-execute",
            FaultPoint::AfterPublish => "after-publish",
        }
    }
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultPoint::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                format!("unknown fault point {s:?} (after-poll, after-execute, after-publish)")
            })
    }
}

/// What an armed fault does when reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultAction {
    /// Stop the worker with [`crate::HostError::Crashed`] before committing.
    #[default]
    Return,
    /// SIGKILL the current process.
    Kill,
}

/// A fault that fires at most once.
#[derive(Debug, Default)]
pub struct FaultHook {
    point: Option<FaultPoint>,
    action: FaultAction,
    fired: AtomicBool,
}

impl FaultHook {
    pub fn new(point: Option<FaultPoint>, action: FaultAction) -> Self {
        Self {
            point,
            action,
            fired: AtomicBool::new(false),
        }
    }

    pub fn armed(&self) -> Option<FaultPoint> {
        self.point.filter(|_| !self.fired.load(Ordering::SeqCst))
    }

    /// Returns true if the fault fired and the caller must stop as if crashed.
    pub fn reached(&self, at: FaultPoint) -> bool {
        if self.point != Some(at) || self.fired.swap(true, Ordering::SeqCst) {
            return false;
        }
        tracing::warn!(point = %at, "fault point reached");
        if self.action == FaultAction::Kill {
            kill_self();
        }
        true
    }
}

fn kill_self() -> ! {
    // SAFETY: plain syscalls with no memory arguments.
    unsafe {
        libc::kill(libc::getpid(), libc::SIGKILL);
    }
    loop {
        std::thread::park();
    }
}
