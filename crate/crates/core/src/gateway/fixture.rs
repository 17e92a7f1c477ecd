use std::fs;
use std::path::{Path, PathBuf};

use super::{ChatBackend, ChatExchange, ChatRequest, GatewayError};

/// Replays exchanges stored as `<fixture_key>.json` files. Never opens a
/// network connection.
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let key = request.fixture_key();
        let path = self.dir.join(format!("{key}.json"));
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(GatewayError::MissingFixture {
                    key,
                    dir: self.dir.clone(),
                })
            }
            Err(e) => {
                return Err(GatewayError::Fixture {
                    path,
                    message: e.to_string(),
                })
            }
        };
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Fixture {
            path,
            message: e.to_string(),
        })
    }
}

/// Stores `reply` as the recorded answer to `request` under `dir`.
pub fn write_fixture(dir: &Path, request: &ChatRequest, reply: &str) -> std::io::Result<PathBuf> {
    let exchange = ChatExchange {
        prompt: request.prompt().to_string(),
        reply: reply.to_string(),
        usage: None,
    };
    store(dir, request, &exchange)
}

fn store(dir: &Path, request: &ChatRequest, exchange: &ChatExchange) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", request.fixture_key()));
    fs::write(&path, serde_json::to_vec_pretty(exchange)?)?;
    Ok(path)
}

/// Wraps a live backend and writes every exchange out as a fixture.
pub(super) struct Recording<B> {
    inner: B,
    dir: PathBuf,
}

impl<B> Recording<B> {
    pub(super) fn new(inner: B, dir: PathBuf) -> Self {
        Self { inner, dir }
    }
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let exchange = self.inner.complete(request)?;
        if let Err(e) = store(&self.dir, request, &exchange) {
            log::warn!("could not record exchange to {}: {e}", self.dir.display());
        }
        Ok(exchange)
    }
}
