//! Record-and-replay fixtures for live provider sessions.
//!
//! [`RecordingChat`] wraps a live provider and appends one record per
//! successful call to a JSONL fixture; [`ReplayChat`] serves a fixture
//! back, keyed by request fingerprint. A replayed session therefore
//! reproduces a live run exactly, including its usage totals, without
//! network access.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{request_fingerprint, ChatProvider, CompletionRequest, ProviderError, RawCompletion};

/// One fixture line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub fingerprint: String,
    pub model: String,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Pass-through provider that persists every successful completion.
pub struct RecordingChat {
    inner: Arc<dyn ChatProvider>,
    out: Mutex<File>,
}

impl RecordingChat {
    pub fn create(inner: Arc<dyn ChatProvider>, path: &Path) -> std::io::Result<Self> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl ChatProvider for RecordingChat {
    fn name(&self) -> &str {
        "recording"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let raw = self.inner.complete(request)?;
        let record = FixtureRecord {
            fingerprint: request_fingerprint(request),
            model: request.model.clone(),
            text: raw.text.clone(),
            prompt_tokens: raw.prompt_tokens,
            completion_tokens: raw.completion_tokens,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut out = self.out.lock().expect("recorder lock");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| ProviderError::Transport(format!("cannot write fixture: {e}")))?;
        Ok(raw)
    }
}

/// Serves recorded responses; any request without a recorded fingerprint
/// is a terminal error, keeping replayed runs honest.
#[derive(Debug)]
pub struct ReplayChat {
    records: HashMap<String, FixtureRecord>,
}

impl ReplayChat {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: bad fixture record: {e}", path.display(), idx + 1),
                )
            })?;
            records.insert(record.fingerprint.clone(), record);
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatProvider for ReplayChat {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let fp = request_fingerprint(request);
        match self.records.get(&fp) {
            Some(r) => Ok(RawCompletion {
                text: r.text.clone(),
                prompt_tokens: r.prompt_tokens,
                completion_tokens: r.completion_tokens,
                meta: Default::default(),
            }),
            None => Err(ProviderError::NotRecorded(fp)),
        }
    }
}
