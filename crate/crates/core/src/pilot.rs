//! Pilots: placeholder resource containers acquired before any workload is
//! bound to them.
//!
//! A [`PilotManager`] resolves a [`PilotDescription`] against a registry of
//! [`ResourceBackend`]s and hands back a [`PilotHandle`] in `Pending`. The
//! backend spawns the worker pool asynchronously; the handle moves to
//! `Running` once every worker reported ready. Tasks are then submitted to
//! the handle, which can be scaled and cancelled at runtime.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;
use uuid::Uuid;

/// Default time in-flight tasks get to finish when a pilot is cancelled.
pub const DEFAULT_DRAIN: Duration = Duration::from_secs(5);

const WORKER_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Edge,
    Cloud,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Edge => f.write_str("edge"),
            Tier::Cloud => f.write_str("cloud"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PilotState {
    Pending,
    Running,
    ScalingUp,
    ScalingDown,
    Cancelled,
    Failed,
}

impl PilotState {
    pub fn is_terminal(self) -> bool {
        matches!(self, PilotState::Cancelled | PilotState::Failed)
    }

    /// Whether `self -> next` is an edge of the lifecycle graph.
    pub fn can_transition_to(self, next: PilotState) -> bool {
        use PilotState::*;
        matches!(
            (self, next),
            (Pending, Running)
                | (Pending, Failed)
                | (Running, ScalingUp)
                | (Running, ScalingDown)
                | (ScalingUp, Running)
                | (ScalingDown, Running)
                | (Running, Cancelled)
                | (Running, Failed)
        )
    }
}

/// A request for a pool of workers on one tier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotDescription {
    pub backend_name: String,
    pub tier: Tier,
    pub worker_count: usize,
    /// Recorded for bookkeeping, never enforced.
    pub worker_memory_mb: u64,
    pub labels: BTreeMap<String, String>,
}

impl PilotDescription {
    pub fn new(backend_name: impl Into<String>, tier: Tier, worker_count: usize) -> Self {
        Self {
            backend_name: backend_name.into(),
            tier,
            worker_count,
            worker_memory_mb: 4096,
            labels: BTreeMap::new(),
        }
    }

    pub fn local(tier: Tier, worker_count: usize) -> Self {
        Self::new(LocalBackend::NAME, tier, worker_count)
    }

    pub fn with_label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub spawn: bool,
    pub scale: bool,
    pub cancel: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        spawn: true,
        scale: true,
        cancel: true,
    };
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct BackendError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PilotError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("invalid pilot description: {0}")]
    InvalidDescription(String),
    #[error("pilot failed to spawn: {0}")]
    SpawnFailure(String),
    #[error("timed out waiting for pilot, last observed state {last:?}")]
    Timeout { last: PilotState },
    #[error("operation not allowed in state {0:?}")]
    InvalidState(PilotState),
    #[error("backend `{backend}` does not support {capability}")]
    UnsupportedCapability {
        backend: String,
        capability: &'static str,
    },
    #[error("scaling failed, restored {restored} workers: {cause}")]
    ScaleFailure { restored: usize, cause: String },
    #[error("task submission failed: {0}")]
    Submit(String),
}

/// Handed to every task; exposes the worker's identity and the forced
/// cancellation flag raised once a cancel drain window expires.
#[derive(Clone)]
pub struct WorkerContext {
    pub pilot_id: Uuid,
    pub worker_index: usize,
    cancelled: Arc<AtomicBool>,
}

impl WorkerContext {
    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Acquire)
    }
}

pub type Task = Box<dyn FnOnce(&WorkerContext) + Send + 'static>;

/// Outcome of shutting a worker pool down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutdownOutcome {
    pub drained: bool,
    /// Workers still busy when the drain window closed.
    pub abandoned: usize,
}

/// A live set of workers owned by one pilot.
pub trait WorkerPool: Send + Sync {
    fn live_workers(&self) -> usize;
    fn submit(&self, task: Task) -> Result<(), BackendError>;
    fn resize(&self, workers: usize) -> Result<(), BackendError>;
    fn shutdown(&self, drain: Duration) -> ShutdownOutcome;
}

/// Plugin interface for resource providers.
pub trait ResourceBackend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    /// Blocks until all workers are ready or spawning failed.
    fn spawn(
        &self,
        pilot_id: Uuid,
        desc: &PilotDescription,
    ) -> Result<Arc<dyn WorkerPool>, BackendError>;
}

#[derive(Default)]
pub struct BackendRegistry {
    backends: RwLock<HashMap<String, Arc<dyn ResourceBackend>>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding only the in-process [`LocalBackend`].
    pub fn with_local() -> Self {
        let reg = Self::new();
        reg.register(Arc::new(LocalBackend))
            .expect("empty registry");
        reg
    }

    pub fn register(&self, backend: Arc<dyn ResourceBackend>) -> Result<(), PilotError> {
        let mut map = self.backends.write();
        let name = backend.name().to_string();
        if map.contains_key(&name) {
            return Err(PilotError::DuplicateBackend(name));
        }
        map.insert(name, backend);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn ResourceBackend>> {
        self.backends.read().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.backends.read().keys().cloned().collect();
        names.sort();
        names
    }
}

/// Fired after a successful scale operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleEvent {
    pub pilot_id: Uuid,
    pub old_workers: usize,
    pub new_workers: usize,
}

type ScaleListener = Box<dyn Fn(&ScaleEvent) + Send + Sync>;

struct Lifecycle {
    state: PilotState,
    current_workers: usize,
    failure: Option<String>,
    history: Vec<PilotState>,
    pool: Option<Arc<dyn WorkerPool>>,
}

impl Lifecycle {
    fn transition(&mut self, next: PilotState) {
        debug_assert!(
            self.state.can_transition_to(next),
            "illegal transition {:?} -> {next:?}",
            self.state
        );
        self.state = next;
        self.history.push(next);
    }
}

struct PilotInner {
    id: Uuid,
    description: PilotDescription,
    backend: Arc<dyn ResourceBackend>,
    drain: Duration,
    lifecycle: Mutex<Lifecycle>,
    changed: Condvar,
    listeners: Mutex<Vec<ScaleListener>>,
}

/// Shared handle to a pilot; cheap to clone and safe to query from any
/// thread. State transitions are serialized by an internal lock.
#[derive(Clone)]
pub struct PilotHandle {
    inner: Arc<PilotInner>,
}

impl fmt::Debug for PilotHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PilotHandle")
            .field("id", &self.inner.id)
            .field("tier", &self.inner.description.tier)
            .field("state", &self.state())
            .field("current_workers", &self.current_workers())
            .finish()
    }
}

impl PilotHandle {
    pub fn id(&self) -> Uuid {
        self.inner.id
    }

    pub fn description(&self) -> &PilotDescription {
        &self.inner.description
    }

    pub fn tier(&self) -> Tier {
        self.inner.description.tier
    }

    pub fn state(&self) -> PilotState {
        self.inner.lifecycle.lock().state
    }

    pub fn current_workers(&self) -> usize {
        self.inner.lifecycle.lock().current_workers
    }

    pub fn failure(&self) -> Option<String> {
        self.inner.lifecycle.lock().failure.clone()
    }

    /// Every state the pilot has been in, starting with `Pending`.
    pub fn history(&self) -> Vec<PilotState> {
        self.inner.lifecycle.lock().history.clone()
    }

    /// Worker count as reported by the backend itself.
    pub fn live_workers(&self) -> usize {
        let pool = self.inner.lifecycle.lock().pool.clone();
        pool.map_or(0, |p| p.live_workers())
    }

    /// Waits until the pilot reaches `target`. Gives up early with
    /// `Timeout` if the pilot lands in a different terminal state.
    pub fn wait_state(&self, target: PilotState, timeout: Duration) -> Result<PilotState, PilotError> {
        let deadline = Instant::now() + timeout;
        let mut lc = self.inner.lifecycle.lock();
        loop {
            if lc.state == target {
                return Ok(target);
            }
            if lc.state.is_terminal() {
                return Err(PilotError::Timeout { last: lc.state });
            }
            if self.inner.changed.wait_until(&mut lc, deadline).timed_out() {
                return if lc.state == target {
                    Ok(target)
                } else {
                    Err(PilotError::Timeout { last: lc.state })
                };
            }
        }
    }

    /// Like [`wait_state`](Self::wait_state) for `Running`, surfacing the
    /// backend's cause when spawning failed.
    pub fn wait_running(&self, timeout: Duration) -> Result<(), PilotError> {
        match self.wait_state(PilotState::Running, timeout) {
            Ok(_) => Ok(()),
            Err(PilotError::Timeout {
                last: PilotState::Failed,
            }) => Err(PilotError::SpawnFailure(
                self.failure().unwrap_or_else(|| "unknown cause".into()),
            )),
            Err(e) => Err(e),
        }
    }

    pub fn submit(&self, task: Task) -> Result<(), PilotError> {
        let pool = {
            let lc = self.inner.lifecycle.lock();
            match lc.state {
                PilotState::Running | PilotState::ScalingUp | PilotState::ScalingDown => {}
                other => return Err(PilotError::InvalidState(other)),
            }
            lc.pool.clone()
        };
        pool.ok_or(PilotError::InvalidState(PilotState::Pending))?
            .submit(task)
            .map_err(|e| PilotError::Submit(e.0))
    }

    /// Registers a callback run after every completed scale operation.
    pub fn on_scale(&self, listener: impl Fn(&ScaleEvent) + Send + Sync + 'static) {
        self.inner.listeners.lock().push(Box::new(listener));
    }

    /// Resizes the worker pool. Passing the current count is a no-op.
    pub fn scale(&self, new_worker_count: usize) -> Result<(), PilotError> {
        if new_worker_count == 0 {
            return Err(PilotError::InvalidDescription(
                "worker count must be at least 1".into(),
            ));
        }
        let caps = self.inner.backend.capabilities();
        let (pool, old) = {
            let mut lc = self.inner.lifecycle.lock();
            if lc.state != PilotState::Running {
                return Err(PilotError::InvalidState(lc.state));
            }
            if !caps.scale {
                return Err(PilotError::UnsupportedCapability {
                    backend: self.inner.backend.name().to_string(),
                    capability: "scale",
                });
            }
            let old = lc.current_workers;
            if new_worker_count == old {
                return Ok(());
            }
            lc.transition(if new_worker_count > old {
                PilotState::ScalingUp
            } else {
                PilotState::ScalingDown
            });
            self.inner.changed.notify_all();
            (lc.pool.clone().expect("running pilot has a pool"), old)
        };

        let result = pool.resize(new_worker_count);

        let mut lc = self.inner.lifecycle.lock();
        lc.transition(PilotState::Running);
        let outcome = match result {
            Ok(()) => {
                lc.current_workers = new_worker_count;
                Ok(())
            }
            Err(e) => {
                lc.current_workers = old;
                Err(PilotError::ScaleFailure {
                    restored: old,
                    cause: e.0,
                })
            }
        };
        self.inner.changed.notify_all();
        drop(lc);

        if outcome.is_ok() {
            let event = ScaleEvent {
                pilot_id: self.inner.id,
                old_workers: old,
                new_workers: new_worker_count,
            };
            for l in self.inner.listeners.lock().iter() {
                l(&event);
            }
        }
        outcome
    }

    /// Stops all workers, giving in-flight tasks the drain window to
    /// finish. Idempotent once the pilot is cancelled.
    pub fn cancel(&self) -> Result<ShutdownOutcome, PilotError> {
        let pool = {
            let mut lc = self.inner.lifecycle.lock();
            // wait out spawn and scale operations so the graph stays intact
            while matches!(
                lc.state,
                PilotState::Pending | PilotState::ScalingUp | PilotState::ScalingDown
            ) {
                self.inner.changed.wait(&mut lc);
            }
            match lc.state {
                PilotState::Cancelled => {
                    return Ok(ShutdownOutcome {
                        drained: true,
                        abandoned: 0,
                    })
                }
                PilotState::Failed => return Err(PilotError::InvalidState(PilotState::Failed)),
                _ => {}
            }
            lc.transition(PilotState::Cancelled);
            lc.current_workers = 0;
            self.inner.changed.notify_all();
            lc.pool.take()
        };
        Ok(pool.map_or(
            ShutdownOutcome {
                drained: true,
                abandoned: 0,
            },
            |p| p.shutdown(self.inner.drain),
        ))
    }
}

pub struct PilotManager {
    registry: Arc<BackendRegistry>,
    drain: Duration,
}

impl Default for PilotManager {
    fn default() -> Self {
        Self::new(Arc::new(BackendRegistry::with_local()))
    }
}

impl PilotManager {
    pub fn new(registry: Arc<BackendRegistry>) -> Self {
        Self {
            registry,
            drain: DEFAULT_DRAIN,
        }
    }

    pub fn with_drain(mut self, drain: Duration) -> Self {
        self.drain = drain;
        self
    }

    pub fn registry(&self) -> &Arc<BackendRegistry> {
        &self.registry
    }

    /// Submits a pilot request. Returns immediately with the handle in
    /// `Pending`; the backend spawns workers on a background thread.
    pub fn submit_pilot(&self, desc: PilotDescription) -> Result<PilotHandle, PilotError> {
        if desc.worker_count == 0 {
            return Err(PilotError::InvalidDescription(
                "worker_count must be at least 1".into(),
            ));
        }
        let backend = self
            .registry
            .get(&desc.backend_name)
            .ok_or_else(|| PilotError::UnknownBackend(desc.backend_name.clone()))?;
        if !backend.capabilities().spawn {
            return Err(PilotError::UnsupportedCapability {
                backend: desc.backend_name.clone(),
                capability: "spawn",
            });
        }

        let handle = PilotHandle {
            inner: Arc::new(PilotInner {
                id: Uuid::new_v4(),
                description: desc,
                backend,
                drain: self.drain,
                lifecycle: Mutex::new(Lifecycle {
                    state: PilotState::Pending,
                    current_workers: 0,
                    failure: None,
                    history: vec![PilotState::Pending],
                    pool: None,
                }),
                changed: Condvar::new(),
                listeners: Mutex::new(Vec::new()),
            }),
        };

        let spawned = handle.clone();
        std::thread::Builder::new()
            .name(format!("pilot-spawn-{}", handle.id()))
            .spawn(move || {
                let inner = &spawned.inner;
                let result = inner.backend.spawn(inner.id, &inner.description);
                let mut lc = inner.lifecycle.lock();
                match result {
                    Ok(pool) => {
                        lc.current_workers = pool.live_workers();
                        lc.pool = Some(pool);
                        lc.transition(PilotState::Running);
                    }
                    Err(e) => {
                        log::warn!("pilot {} failed to spawn: {e}", inner.id);
                        lc.failure = Some(e.0);
                        lc.transition(PilotState::Failed);
                    }
                }
                inner.changed.notify_all();
            })
            .map_err(|e| PilotError::SpawnFailure(e.to_string()))?;
        Ok(handle)
    }
}

/// In-process backend: each worker is an OS thread pulling tasks from a
/// shared queue.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalBackend;

impl LocalBackend {
    pub const NAME: &'static str = "local";
}

impl ResourceBackend for LocalBackend {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn spawn(
        &self,
        pilot_id: Uuid,
        desc: &PilotDescription,
    ) -> Result<Arc<dyn WorkerPool>, BackendError> {
        let pool = LocalPool::new(pilot_id, desc.tier);
        pool.resize(desc.worker_count)?;
        Ok(Arc::new(pool))
    }
}

struct LocalWorker {
    stop: Arc<AtomicBool>,
    done: Arc<AtomicBool>,
    join: JoinHandle<()>,
}

/// Decrements the live counter however the worker thread exits.
struct LiveGuard {
    live: Arc<AtomicUsize>,
    done: Arc<AtomicBool>,
}

impl Drop for LiveGuard {
    fn drop(&mut self) {
        self.done.store(true, Ordering::Release);
        self.live.fetch_sub(1, Ordering::AcqRel);
    }
}

pub struct LocalPool {
    pilot_id: Uuid,
    tier: Tier,
    tx: Sender<Task>,
    rx: Receiver<Task>,
    workers: Mutex<Vec<LocalWorker>>,
    next_index: AtomicUsize,
    live: Arc<AtomicUsize>,
    cancelled: Arc<AtomicBool>,
    closed: AtomicBool,
}

impl LocalPool {
    fn new(pilot_id: Uuid, tier: Tier) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded();
        Self {
            pilot_id,
            tier,
            tx,
            rx,
            workers: Mutex::new(Vec::new()),
            next_index: AtomicUsize::new(0),
            live: Arc::new(AtomicUsize::new(0)),
            cancelled: Arc::new(AtomicBool::new(false)),
            closed: AtomicBool::new(false),
        }
    }

    fn start_worker(&self) -> Result<LocalWorker, BackendError> {
        let index = self.next_index.fetch_add(1, Ordering::Relaxed);
        let stop = Arc::new(AtomicBool::new(false));
        let done = Arc::new(AtomicBool::new(false));
        let ctx = WorkerContext {
            pilot_id: self.pilot_id,
            worker_index: index,
            cancelled: self.cancelled.clone(),
        };
        let rx = self.rx.clone();
        let (ready_tx, ready_rx) = crossbeam_channel::bounded(1);
        let guard = LiveGuard {
            live: self.live.clone(),
            done: done.clone(),
        };
        self.live.fetch_add(1, Ordering::AcqRel);
        let thread_stop = stop.clone();
        let join = std::thread::Builder::new()
            .name(format!("{}-worker-{index}", self.tier))
            .spawn(move || {
                let _guard = guard;
                let _ = ready_tx.send(());
                while !thread_stop.load(Ordering::Acquire) {
                    match rx.recv_timeout(WORKER_POLL) {
                        Ok(task) => {
                            if catch_unwind(AssertUnwindSafe(|| task(&ctx))).is_err() {
                                log::error!("task panicked on worker {}", ctx.worker_index);
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            })
            .map_err(|e| {
                self.live.fetch_sub(1, Ordering::AcqRel);
                BackendError(format!("cannot start worker thread: {e}"))
            })?;
        ready_rx
            .recv()
            .map_err(|_| BackendError("worker exited before reporting ready".into()))?;
        Ok(LocalWorker { stop, done, join })
    }
}

impl WorkerPool for LocalPool {
    fn live_workers(&self) -> usize {
        self.live.load(Ordering::Acquire)
    }

    fn submit(&self, task: Task) -> Result<(), BackendError> {
        if self.closed.load(Ordering::Acquire) {
            return Err(BackendError("pool is shut down".into()));
        }
        self.tx
            .send(task)
            .map_err(|_| BackendError("task queue disconnected".into()))
    }

    fn resize(&self, target: usize) -> Result<(), BackendError> {
        let mut workers = self.workers.lock();
        while workers.len() < target {
            workers.push(self.start_worker()?);
        }
        if workers.len() > target {
            let retired: Vec<_> = workers.drain(target..).collect();
            for w in &retired {
                w.stop.store(true, Ordering::Release);
            }
            // retired workers finish their current task first
            for w in retired {
                let _ = w.join.join();
            }
        }
        Ok(())
    }

    fn shutdown(&self, drain: Duration) -> ShutdownOutcome {
        self.closed.store(true, Ordering::Release);
        let workers: Vec<_> = self.workers.lock().drain(..).collect();
        for w in &workers {
            w.stop.store(true, Ordering::Release);
        }
        let deadline = Instant::now() + drain;
        while Instant::now() < deadline && workers.iter().any(|w| !w.done.load(Ordering::Acquire)) {
            std::thread::sleep(Duration::from_millis(5));
        }
        let mut abandoned = 0;
        for w in workers {
            if w.done.load(Ordering::Acquire) {
                let _ = w.join.join();
            } else {
                abandoned += 1;
            }
        }
        if abandoned > 0 {
            self.cancelled.store(true, Ordering::Release);
            log::warn!("{abandoned} worker(s) still busy after drain window; detached");
        }
        while self.rx.try_recv().is_ok() {}
        ShutdownOutcome {
            drained: abandoned == 0,
            abandoned,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU64;

    struct FailingBackend;

    impl ResourceBackend for FailingBackend {
        fn name(&self) -> &str {
            "failing"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::ALL
        }
        fn spawn(&self, _: Uuid, _: &PilotDescription) -> Result<Arc<dyn WorkerPool>, BackendError> {
            std::thread::sleep(Duration::from_millis(20));
            Err(BackendError("no capacity".into()))
        }
    }

    struct FixedBackend;

    impl ResourceBackend for FixedBackend {
        fn name(&self) -> &str {
            "fixed"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                spawn: true,
                scale: false,
                cancel: true,
            }
        }
        fn spawn(&self, id: Uuid, desc: &PilotDescription) -> Result<Arc<dyn WorkerPool>, BackendError> {
            LocalBackend.spawn(id, desc)
        }
    }

    fn manager() -> PilotManager {
        let reg = BackendRegistry::with_local();
        reg.register(Arc::new(FailingBackend)).unwrap();
        reg.register(Arc::new(FixedBackend)).unwrap();
        PilotManager::new(Arc::new(reg))
    }

    fn running(m: &PilotManager, tier: Tier, n: usize) -> PilotHandle {
        let h = m.submit_pilot(PilotDescription::local(tier, n)).unwrap();
        h.wait_running(Duration::from_secs(10)).unwrap();
        h
    }

    #[test]
    fn edge_pilot_with_one_worker() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        assert_eq!(h.state(), PilotState::Running);
        assert_eq!(h.current_workers(), 1);
        assert_eq!(h.live_workers(), 1);
        h.cancel().unwrap();
    }

    #[test]
    fn cloud_pilot_with_ten_workers() {
        let m = manager();
        let h = running(&m, Tier::Cloud, 10);
        assert_eq!(h.current_workers(), 10);
        assert_eq!(h.live_workers(), 10);
        h.cancel().unwrap();
    }

    #[test]
    fn unknown_backend_rejected() {
        let m = manager();
        let err = m
            .submit_pilot(PilotDescription::new("nosuch", Tier::Edge, 1))
            .unwrap_err();
        assert_eq!(err, PilotError::UnknownBackend("nosuch".into()));
    }

    #[test]
    fn zero_workers_rejected() {
        let m = manager();
        assert!(matches!(
            m.submit_pilot(PilotDescription::local(Tier::Edge, 0)),
            Err(PilotError::InvalidDescription(_))
        ));
    }

    #[test]
    fn duplicate_backend_rejected() {
        let reg = BackendRegistry::with_local();
        assert_eq!(
            reg.register(Arc::new(LocalBackend)),
            Err(PilotError::DuplicateBackend("local".into()))
        );
    }

    #[test]
    fn wait_on_running_returns_immediately() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        let t = Instant::now();
        assert_eq!(
            h.wait_state(PilotState::Running, Duration::from_secs(1)),
            Ok(PilotState::Running)
        );
        assert!(t.elapsed() < Duration::from_millis(50));
        h.cancel().unwrap();
    }

    #[test]
    fn failing_backend_times_out_with_failed() {
        let m = manager();
        let h = m
            .submit_pilot(PilotDescription::new("failing", Tier::Edge, 1))
            .unwrap();
        let t = Instant::now();
        let err = h
            .wait_state(PilotState::Running, Duration::from_secs(2))
            .unwrap_err();
        assert_eq!(
            err,
            PilotError::Timeout {
                last: PilotState::Failed
            }
        );
        assert!(t.elapsed() <= Duration::from_secs(2) + Duration::from_millis(50));
        assert_eq!(h.failure().as_deref(), Some("no capacity"));
        assert_eq!(
            h.wait_running(Duration::from_secs(1)),
            Err(PilotError::SpawnFailure("no capacity".into()))
        );
        assert_eq!(h.history(), vec![PilotState::Pending, PilotState::Failed]);
    }

    #[test]
    fn wait_never_blocks_past_timeout() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        let t = Instant::now();
        let err = h
            .wait_state(PilotState::Cancelled, Duration::from_millis(100))
            .unwrap_err();
        assert_eq!(
            err,
            PilotError::Timeout {
                last: PilotState::Running
            }
        );
        assert!(t.elapsed() < Duration::from_millis(300));
        h.cancel().unwrap();
    }

    #[test]
    fn local_spawn_is_fast() {
        let m = manager();
        let t = Instant::now();
        let h = m.submit_pilot(PilotDescription::local(Tier::Edge, 1)).unwrap();
        h.wait_state(PilotState::Running, Duration::from_secs(10))
            .unwrap();
        assert!(t.elapsed() < Duration::from_millis(100), "{:?}", t.elapsed());
        h.cancel().unwrap();
    }

    #[test]
    fn scale_up_and_down() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        h.on_scale(move |e| s.lock().push((e.old_workers, e.new_workers)));

        h.scale(4).unwrap();
        assert_eq!(h.state(), PilotState::Running);
        assert_eq!(h.current_workers(), 4);
        assert_eq!(h.live_workers(), 4);

        h.scale(2).unwrap();
        assert_eq!(h.live_workers(), 2);
        assert_eq!(*seen.lock(), vec![(1, 4), (4, 2)]);
        assert_eq!(
            h.history(),
            vec![
                PilotState::Pending,
                PilotState::Running,
                PilotState::ScalingUp,
                PilotState::Running,
                PilotState::ScalingDown,
                PilotState::Running
            ]
        );
        h.cancel().unwrap();
    }

    #[test]
    fn scale_to_same_count_is_noop() {
        let m = manager();
        let h = running(&m, Tier::Edge, 4);
        h.scale(4).unwrap();
        assert_eq!(h.current_workers(), 4);
        assert_eq!(h.history(), vec![PilotState::Pending, PilotState::Running]);
        h.cancel().unwrap();
    }

    #[test]
    fn scale_requires_running_and_capability() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        h.cancel().unwrap();
        assert_eq!(h.scale(2), Err(PilotError::InvalidState(PilotState::Cancelled)));

        let fixed = m
            .submit_pilot(PilotDescription::new("fixed", Tier::Cloud, 1))
            .unwrap();
        fixed.wait_running(Duration::from_secs(5)).unwrap();
        assert!(matches!(
            fixed.scale(3),
            Err(PilotError::UnsupportedCapability { .. })
        ));
        fixed.cancel().unwrap();
    }

    #[test]
    fn cancel_releases_workers_and_is_idempotent() {
        let m = manager();
        let h = running(&m, Tier::Cloud, 3);
        let out = h.cancel().unwrap();
        assert!(out.drained);
        assert_eq!(h.state(), PilotState::Cancelled);
        assert_eq!(h.current_workers(), 0);
        assert_eq!(h.live_workers(), 0);
        h.cancel().unwrap();
        assert_eq!(h.state(), PilotState::Cancelled);
        assert!(h.submit(Box::new(|_| {})).is_err());
    }

    #[test]
    fn cancel_drains_in_flight_task() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        let finished = Arc::new(AtomicBool::new(false));
        let started = Arc::new(AtomicBool::new(false));
        let (f, s) = (finished.clone(), started.clone());
        h.submit(Box::new(move |_| {
            s.store(true, Ordering::SeqCst);
            std::thread::sleep(Duration::from_secs(1));
            f.store(true, Ordering::SeqCst);
        }))
        .unwrap();
        while !started.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(1));
        }
        let t = Instant::now();
        let out = h.cancel().unwrap();
        assert!(out.drained);
        assert!(finished.load(Ordering::SeqCst));
        assert!(t.elapsed() < DEFAULT_DRAIN);
    }

    #[test]
    fn drain_window_expiry_abandons_and_flags_cancel() {
        let m = PilotManager::default().with_drain(Duration::from_millis(100));
        let h = running(&m, Tier::Edge, 1);
        let observed = Arc::new(AtomicBool::new(false));
        let started = Arc::new(AtomicBool::new(false));
        let (o, s) = (observed.clone(), started.clone());
        h.submit(Box::new(move |ctx| {
            s.store(true, Ordering::SeqCst);
            let t = Instant::now();
            while t.elapsed() < Duration::from_secs(3) {
                if ctx.is_cancelled() {
                    o.store(true, Ordering::SeqCst);
                    return;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
        }))
        .unwrap();
        while !started.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(1));
        }
        let out = h.cancel().unwrap();
        assert_eq!(out.abandoned, 1);
        let t = Instant::now();
        while !observed.load(Ordering::SeqCst) && t.elapsed() < Duration::from_secs(2) {
            std::thread::sleep(Duration::from_millis(5));
        }
        assert!(observed.load(Ordering::SeqCst));
    }

    #[test]
    fn tasks_run_on_workers() {
        let m = manager();
        let h = running(&m, Tier::Cloud, 3);
        let counter = Arc::new(AtomicU64::new(0));
        let (tx, rx) = crossbeam_channel::unbounded();
        for _ in 0..30 {
            let c = counter.clone();
            let tx = tx.clone();
            h.submit(Box::new(move |ctx| {
                c.fetch_add(1, Ordering::SeqCst);
                tx.send(ctx.worker_index).unwrap();
            }))
            .unwrap();
        }
        for _ in 0..30 {
            assert!(rx.recv_timeout(Duration::from_secs(5)).unwrap() < 3);
        }
        assert_eq!(counter.load(Ordering::SeqCst), 30);
        h.cancel().unwrap();
    }

    #[test]
    fn panicking_task_does_not_kill_worker() {
        let m = manager();
        let h = running(&m, Tier::Edge, 1);
        h.submit(Box::new(|_| panic!("boom"))).unwrap();
        let (tx, rx) = crossbeam_channel::bounded(1);
        h.submit(Box::new(move |_| tx.send(()).unwrap())).unwrap();
        rx.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(h.live_workers(), 1);
        h.cancel().unwrap();
    }
}
