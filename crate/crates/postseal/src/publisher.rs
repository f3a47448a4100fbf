//! Forwarding of posts to the micro-blog service.
//!
//! Only a local mock exists: [`OutboxPublisher`] appends each delivery to a
//! JSON-lines outbox file. [`FailingPublisher`] always refuses, for
//! exercising the local-first path.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::Serialize;

use crate::store::ImageRef;

#[derive(Clone, Debug, Serialize)]
pub struct Delivery<'a> {
    pub post_id: &'a str,
    pub user_id: &'a str,
    pub message: &'a str,
    pub keycode: &'a str,
    pub images: &'a [ImageRef],
}

#[derive(Debug, thiserror::Error)]
#[error("publisher: {0}")]
pub struct PublishError(pub String);

pub trait Publisher: Send + Sync {
    /// Returns the external reference of the published post.
    fn publish(&self, delivery: &Delivery<'_>) -> Result<String, PublishError>;
}

pub struct OutboxPublisher {
    path: PathBuf,
    lock: Mutex<()>,
}

impl OutboxPublisher {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl Publisher for OutboxPublisher {
    fn publish(&self, delivery: &Delivery<'_>) -> Result<String, PublishError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut line = serde_json::to_vec(delivery).map_err(|e| PublishError(e.to_string()))?;
        line.push(b'\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(&line))
            .map_err(|e| PublishError(format!("{}: {e}", self.path.display())))?;
        Ok(format!("outbox:{}", delivery.post_id))
    }
}

pub struct FailingPublisher(pub String);

impl Publisher for FailingPublisher {
    fn publish(&self, _: &Delivery<'_>) -> Result<String, PublishError> {
        Err(PublishError(self.0.clone()))
    }
}
