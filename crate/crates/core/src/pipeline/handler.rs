use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use parking_lot::RwLock;

use super::FunctionContext;
use crate::mlops::{PointBlock, Verdict};

pub type HandlerError = Box<dyn std::error::Error + Send + Sync>;
pub type HandlerResult<T> = Result<T, HandlerError>;

pub type ProduceFn = dyn Fn(&FunctionContext) -> HandlerResult<PointBlock> + Send + Sync;
pub type EdgeFn = dyn Fn(&FunctionContext, PointBlock) -> HandlerResult<PointBlock> + Send + Sync;
pub type CloudFn = dyn Fn(&FunctionContext, &PointBlock) -> HandlerResult<Vec<Verdict>> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HandlerRole {
    Produce,
    EdgeProcess,
    CloudProcess,
}

impl HandlerRole {
    pub const ALL: [HandlerRole; 3] = [
        HandlerRole::Produce,
        HandlerRole::EdgeProcess,
        HandlerRole::CloudProcess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HandlerRole::Produce => "produce",
            HandlerRole::EdgeProcess => "edge-process",
            HandlerRole::CloudProcess => "cloud-process",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for HandlerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A user function for one of the three pipeline roles.
#[derive(Clone)]
pub enum Handler {
    Produce(Arc<ProduceFn>),
    Edge(Arc<EdgeFn>),
    Cloud(Arc<CloudFn>),
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handler({})", self.role())
    }
}

impl Handler {
    pub fn produce(
        f: impl Fn(&FunctionContext) -> HandlerResult<PointBlock> + Send + Sync + 'static,
    ) -> Self {
        Handler::Produce(Arc::new(f))
    }

    pub fn edge(
        f: impl Fn(&FunctionContext, PointBlock) -> HandlerResult<PointBlock> + Send + Sync + 'static,
    ) -> Self {
        Handler::Edge(Arc::new(f))
    }

    pub fn cloud(
        f: impl Fn(&FunctionContext, &PointBlock) -> HandlerResult<Vec<Verdict>> + Send + Sync + 'static,
    ) -> Self {
        Handler::Cloud(Arc::new(f))
    }

    /// Edge pass-through.
    pub fn identity_edge() -> Self {
        Handler::edge(|_, block| Ok(block))
    }

    /// Cloud handler that accepts every block and emits no verdicts.
    pub fn identity_cloud() -> Self {
        Handler::cloud(|_, _| Ok(Vec::new()))
    }

    pub fn role(&self) -> HandlerRole {
        match self {
            Handler::Produce(_) => HandlerRole::Produce,
            Handler::Edge(_) => HandlerRole::EdgeProcess,
            Handler::Cloud(_) => HandlerRole::CloudProcess,
        }
    }
}

/// The current handler of a role and its version. Versions start at 1 and
/// grow by one per swap.
pub struct HandlerSlot {
    role: HandlerRole,
    current: RwLock<(Handler, u64)>,
}

impl HandlerSlot {
    pub fn new(handler: Handler) -> Self {
        Self {
            role: handler.role(),
            current: RwLock::new((handler, 1)),
        }
    }

    pub fn role(&self) -> HandlerRole {
        self.role
    }

    pub fn load(&self) -> (Handler, u64) {
        let g = self.current.read();
        (g.0.clone(), g.1)
    }

    pub fn version(&self) -> u64 {
        self.current.read().1
    }

    fn swap(&self, handler: Handler) -> u64 {
        debug_assert_eq!(handler.role(), self.role);
        let mut g = self.current.write();
        g.0 = handler;
        g.1 += 1;
        g.1
    }
}

/// One slot per role.
pub struct HandlerSlots {
    slots: [HandlerSlot; 3],
}

impl HandlerSlots {
    pub fn new(produce: Handler, edge: Handler, cloud: Handler) -> Self {
        Self {
            slots: [
                HandlerSlot::new(produce),
                HandlerSlot::new(edge),
                HandlerSlot::new(cloud),
            ],
        }
    }

    pub fn get(&self, role: HandlerRole) -> &HandlerSlot {
        &self.slots[role.index()]
    }

    /// Installs `handler` in the slot of its role and returns the new version.
    pub fn swap(&self, handler: Handler) -> u64 {
        self.slots[handler.role().index()].swap(handler)
    }
}

/// Runs `f`, turning both returned errors and panics into a message.
pub(crate) fn guarded<T>(f: impl FnOnce() -> HandlerResult<T>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(if let Some(s) = panic.downcast_ref::<&str>() {
            format!("panicked: {s}")
        } else if let Some(s) = panic.downcast_ref::<String>() {
            format!("panicked: {s}")
        } else {
            "panicked".to_string()
        }),
    }
}
