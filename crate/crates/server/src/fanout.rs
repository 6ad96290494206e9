//! Broadcast to viewer clients through bounded per-client queues.
//!
//! `broadcast` never waits: a client whose queue is full (it stopped reading) or
//! closed is removed on the spot, and its writer task is aborted.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::mpsc;
use tokio::task::AbortHandle;

pub type Update = Arc<str>;

struct Client {
    id: u64,
    tx: mpsc::Sender<Update>,
    writer: Option<AbortHandle>,
}

pub struct Fanout {
    capacity: usize,
    clients: Mutex<Vec<Client>>,
    next_id: AtomicU64,
    pub dropped: AtomicU64,
    pub sent: AtomicU64,
}

impl Fanout {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            clients: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            sent: AtomicU64::new(0),
        }
    }

    pub fn subscribe(&self) -> (u64, mpsc::Receiver<Update>) {
        let (tx, rx) = mpsc::channel(self.capacity);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.clients.lock().unwrap().push(Client { id, tx, writer: None });
        (id, rx)
    }

    /// Registers the task draining a client's queue so a drop can stop it.
    pub fn attach_writer(&self, id: u64, writer: AbortHandle) {
        let mut clients = self.clients.lock().unwrap();
        match clients.iter_mut().find(|c| c.id == id) {
            Some(c) => c.writer = Some(writer),
            // Already dropped before the writer started.
            None => writer.abort(),
        }
    }

    pub fn unsubscribe(&self, id: u64) {
        self.clients.lock().unwrap().retain(|c| c.id != id);
    }

    /// Ends every client's queue. Writers drain what is queued, then close.
    pub fn close_all(&self) {
        self.clients.lock().unwrap().clear();
    }

    pub fn len(&self) -> usize {
        self.clients.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Queues `update` for every client; returns how many clients were dropped.
    pub fn broadcast(&self, update: &Update) -> usize {
        let mut clients = self.clients.lock().unwrap();
        let before = clients.len();
        clients.retain(|c| match c.tx.try_send(Arc::clone(update)) {
            Ok(()) => true,
            Err(e) => {
                let why = match e {
                    mpsc::error::TrySendError::Full(_) => "buffer full",
                    mpsc::error::TrySendError::Closed(_) => "closed",
                };
                tracing::warn!(client = c.id, why, "dropping viewer client");
                if let Some(w) = &c.writer {
                    w.abort();
                }
                false
            }
        });
        let dropped = before - clients.len();
        self.sent.fetch_add(clients.len() as u64, Ordering::Relaxed);
        self.dropped.fetch_add(dropped as u64, Ordering::Relaxed);
        dropped
    }
}
