//! Path-addressed tree database with push keys, post-commit triggers and
//! text snapshots.
//!
//! Every write goes through one write lock and receives a strictly
//! increasing commit number. Triggers matching the written path are queued
//! while the lock is held, so the queue is in commit order, and a dedicated
//! drain thread invokes them after the lock is released.

mod path;
mod persist;
mod push_id;
mod value;

use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Weak};
use std::thread;

use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

pub use path::{escape_key, unescape_key, validate_segment, PathPattern, TreePath};
pub use push_id::{PushId, PushIdGenerator, MAX_PUSH_TIMESTAMP, PUSH_ALPHABET, PUSH_ID_LEN};
pub use value::TreeValue;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("handler id {0:?} is already registered")]
    DuplicateHandler(String),
    #[error("corrupt snapshot document (line {line}): {reason}")]
    CorruptDocument { line: usize, reason: String },
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
}

/// A committed write as seen by triggers.
#[derive(Clone, Debug, PartialEq)]
pub struct WriteEvent {
    pub commit: u64,
    pub path: TreePath,
    pub old: TreeValue,
    pub new: TreeValue,
}

/// Pattern plus a unique handler id.
#[derive(Clone, Debug)]
pub struct TriggerRegistration {
    pub pattern: PathPattern,
    pub handler_id: String,
}

impl TriggerRegistration {
    pub fn new(pattern: &str, handler_id: impl Into<String>) -> Result<Self, TreeError> {
        Ok(Self {
            pattern: PathPattern::parse(pattern)?,
            handler_id: handler_id.into(),
        })
    }
}

type Handler = Arc<dyn Fn(&WriteEvent) + Send + Sync>;

struct Registration {
    id: String,
    pattern: PathPattern,
    handler: Handler,
    active: Arc<AtomicBool>,
}

enum Job {
    Marker(u64),
    Fire {
        event: WriteEvent,
        handlers: Vec<(Handler, Arc<AtomicBool>)>,
    },
}

#[derive(Default)]
struct Progress {
    delivered: Mutex<u64>,
    cv: Condvar,
    drain_thread: Mutex<Option<thread::ThreadId>>,
}

struct Inner {
    root: TreeValue,
    commit: u64,
    ids: PushIdGenerator,
}

/// Handle returned by [`TreeStore::subscribe`]. Dropping it keeps the
/// trigger registered; call [`Subscription::unsubscribe`] to stop delivery.
pub struct Subscription {
    id: String,
    active: Arc<AtomicBool>,
    registry: Weak<RwLock<Vec<Registration>>>,
}

impl Subscription {
    pub fn handler_id(&self) -> &str {
        &self.id
    }

    pub fn unsubscribe(self) {
        self.active.store(false, Ordering::SeqCst);
        if let Some(registry) = self.registry.upgrade() {
            registry.write().retain(|r| r.id != self.id);
        }
    }
}

pub struct TreeStore {
    inner: RwLock<Inner>,
    registry: Arc<RwLock<Vec<Registration>>>,
    queue: Mutex<mpsc::Sender<Job>>,
    progress: Arc<Progress>,
}

impl Default for TreeStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TreeStore {
    pub fn new() -> Self {
        Self::with_state(TreeValue::Absent, 0)
    }

    fn with_state(root: TreeValue, commit: u64) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let progress = Arc::new(Progress::default());
        *progress.delivered.lock() = commit;

        let drain_progress = progress.clone();
        let handle = thread::Builder::new()
            .name("treestore-triggers".into())
            .spawn(move || drain(rx, drain_progress))
            .expect("spawn trigger drain thread");
        *progress.drain_thread.lock() = Some(handle.thread().id());

        Self {
            inner: RwLock::new(Inner {
                root,
                commit,
                ids: PushIdGenerator::new(),
            }),
            registry: Arc::new(RwLock::new(Vec::new())),
            queue: Mutex::new(tx),
            progress,
        }
    }

    /// Deep copy of the subtree at `path`, or `Absent`.
    pub fn get(&self, path: &TreePath) -> TreeValue {
        let inner = self.inner.read();
        lookup(&inner.root, path.segments()).clone()
    }

    /// Children of the map at `path` whose keys sort strictly after `after`,
    /// in key order, at most `limit` of them.
    pub fn children_after(
        &self,
        path: &TreePath,
        after: Option<&str>,
        limit: usize,
    ) -> Vec<(String, TreeValue)> {
        use std::ops::Bound;
        let inner = self.inner.read();
        let Some(map) = lookup(&inner.root, path.segments()).as_map() else {
            return Vec::new();
        };
        let lower = match after {
            Some(a) => Bound::Excluded(a.to_string()),
            None => Bound::Unbounded,
        };
        map.range((lower, Bound::Unbounded))
            .take(limit)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Keys of the map at `path`.
    pub fn child_keys(&self, path: &TreePath) -> Vec<String> {
        let inner = self.inner.read();
        lookup(&inner.root, path.segments())
            .as_map()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Replaces the subtree at `path`. Writing `Absent` deletes it.
    pub fn set(&self, path: &TreePath, value: TreeValue) -> Result<u64, TreeError> {
        let value = prepare(path, value)?;
        let mut inner = self.inner.write();
        Ok(self.commit_locked(&mut inner, path.clone(), value))
    }

    /// Stores `value` under a fresh push key below `path`.
    pub fn push(
        &self,
        path: &TreePath,
        value: TreeValue,
        now_ms: u64,
    ) -> Result<(PushId, u64), TreeError> {
        let value = value.normalized()?;
        let mut inner = self.inner.write();
        if lookup(&inner.root, path.segments()).is_scalar() {
            return Err(TreeError::InvalidPath(format!(
                "{path} holds a scalar, cannot push children"
            )));
        }
        let id = inner.ids.next(now_ms);
        let child = path.child(id.as_str())?;
        let commit = self.commit_locked(&mut inner, child, value);
        Ok((id, commit))
    }

    /// Mints a push key without writing anything.
    pub fn next_push_id(&self, now_ms: u64) -> PushId {
        self.inner.write().ids.next(now_ms)
    }

    /// Read-modify-write of one path under the write lock. The closure sees
    /// the current value and returns `Some(new)` to commit or `None` to leave
    /// the store untouched.
    pub fn transaction<E, F>(&self, path: &TreePath, f: F) -> Result<Option<u64>, E>
    where
        F: FnOnce(&TreeValue) -> Result<Option<TreeValue>, E>,
        E: From<TreeError>,
    {
        validate_target(path)?;
        let mut inner = self.inner.write();
        let current = lookup(&inner.root, path.segments());
        let Some(next) = f(current)? else {
            return Ok(None);
        };
        let next = prepare(path, next)?;
        Ok(Some(self.commit_locked(&mut inner, path.clone(), next)))
    }

    fn commit_locked(&self, inner: &mut Inner, path: TreePath, value: TreeValue) -> u64 {
        let handlers: Vec<(Handler, Arc<AtomicBool>)> = self
            .registry
            .read()
            .iter()
            .filter(|r| r.pattern.matches(&path))
            .map(|r| (r.handler.clone(), r.active.clone()))
            .collect();

        let new_copy = (!handlers.is_empty()).then(|| value.clone());
        let old = write_at(&mut inner.root, path.segments(), value);
        inner.commit += 1;
        let commit = inner.commit;

        let job = match new_copy {
            None => Job::Marker(commit),
            Some(new) => Job::Fire {
                event: WriteEvent {
                    commit,
                    path,
                    old,
                    new,
                },
                handlers,
            },
        };
        // The receiver only disappears if the drain thread panicked outside a
        // handler; writes must still succeed.
        let _ = self.queue.lock().send(job);
        commit
    }

    /// Registers `handler` for every later write whose path matches.
    pub fn subscribe<F>(
        &self,
        registration: TriggerRegistration,
        handler: F,
    ) -> Result<Subscription, TreeError>
    where
        F: Fn(&WriteEvent) + Send + Sync + 'static,
    {
        // Taking the write lock orders the registration against commits.
        let _inner = self.inner.write();
        let mut registry = self.registry.write();
        if registry.iter().any(|r| r.id == registration.handler_id) {
            return Err(TreeError::DuplicateHandler(registration.handler_id));
        }
        let active = Arc::new(AtomicBool::new(true));
        registry.push(Registration {
            id: registration.handler_id.clone(),
            pattern: registration.pattern,
            handler: Arc::new(handler),
            active: active.clone(),
        });
        Ok(Subscription {
            id: registration.handler_id,
            active,
            registry: Arc::downgrade(&self.registry),
        })
    }

    /// Blocks until every trigger for commits made so far has run. Returns
    /// immediately when called from inside a trigger handler.
    pub fn flush(&self) {
        if *self.progress.drain_thread.lock() == Some(thread::current().id()) {
            return;
        }
        let target = self.inner.read().commit;
        let mut delivered = self.progress.delivered.lock();
        while *delivered < target {
            self.progress.cv.wait(&mut delivered);
        }
    }

    pub fn commit_number(&self) -> u64 {
        self.inner.read().commit
    }

    /// Whole tree as a persistence document.
    pub fn snapshot(&self) -> String {
        let inner = self.inner.read();
        persist::encode(&inner.root, inner.commit)
    }

    /// Builds a fresh store from a document produced by [`TreeStore::snapshot`].
    pub fn restore(document: &str) -> Result<Self, TreeError> {
        let (root, commit) = persist::decode(document)?;
        Ok(Self::with_state(root, commit))
    }

    /// Writes a snapshot atomically (temp file + rename). Returns the commit
    /// number it captured.
    pub fn save_to(&self, file: &Path) -> Result<u64, TreeError> {
        let (doc, commit) = {
            let inner = self.inner.read();
            (persist::encode(&inner.root, inner.commit), inner.commit)
        };
        let tmp = file.with_extension("tmp");
        fs::write(&tmp, doc)?;
        fs::rename(&tmp, file)?;
        Ok(commit)
    }

    /// Restores from `file`, or returns an empty store when it does not exist.
    pub fn load_from(file: &Path) -> Result<Self, TreeError> {
        match fs::read_to_string(file) {
            Ok(doc) => Self::restore(&doc),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }
}

fn drain(rx: mpsc::Receiver<Job>, progress: Arc<Progress>) {
    while let Ok(job) = rx.recv() {
        let commit = match job {
            Job::Marker(commit) => commit,
            Job::Fire { event, handlers } => {
                for (handler, active) in handlers {
                    if !active.load(Ordering::SeqCst) {
                        continue;
                    }
                    let outcome =
                        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| handler(&event)));
                    if outcome.is_err() {
                        tracing::error!(path = %event.path, "trigger handler panicked");
                    }
                }
                event.commit
            }
        };
        *progress.delivered.lock() = commit;
        progress.cv.notify_all();
    }
}

fn validate_target(path: &TreePath) -> Result<(), TreeError> {
    for s in path.segments() {
        validate_segment(s)?;
    }
    Ok(())
}

fn prepare(path: &TreePath, value: TreeValue) -> Result<TreeValue, TreeError> {
    validate_target(path)?;
    let value = value.normalized()?;
    if path.is_root() && value.is_scalar() {
        return Err(TreeError::InvalidPath(
            "the root can only hold a map".into(),
        ));
    }
    Ok(value)
}

fn lookup<'a>(mut node: &'a TreeValue, segments: &[String]) -> &'a TreeValue {
    for s in segments {
        node = node.child(s);
    }
    node
}

/// Replaces the value at `segments` and returns the previous one. Missing
/// intermediate maps are created; emptied maps are pruned on the way out.
fn write_at(node: &mut TreeValue, segments: &[String], value: TreeValue) -> TreeValue {
    let Some((head, rest)) = segments.split_first() else {
        return std::mem::replace(node, value);
    };
    if !matches!(node, TreeValue::Map(_)) {
        if value.is_absent() {
            return TreeValue::Absent;
        }
        *node = TreeValue::map();
    }
    let TreeValue::Map(map) = node else {
        unreachable!()
    };
    let child = map.entry(head.clone()).or_default();
    let old = write_at(child, rest, value);
    if child.is_absent() {
        map.remove(head);
    }
    if map.is_empty() {
        *node = TreeValue::Absent;
    }
    old
}
