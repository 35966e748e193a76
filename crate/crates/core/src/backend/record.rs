use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{prompt_hash, Backend, BackendError, Completion, GenRequest, ReplayEntry, ScriptedCompletion};

/// Wraps a backend and appends every answered request to a replay script.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    sink: Mutex<BufWriter<File>>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn Backend>, path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn max_n(&self) -> usize {
        self.inner.max_n()
    }

    fn generate(&self, request: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        let completions = self.inner.generate(request)?;
        let entry = ReplayEntry {
            prompt_hash: Some(prompt_hash(&request.prompt)),
            instance_id: request.scope.clone(),
            completions: completions.iter().cloned().map(ScriptedCompletion::Full).collect(),
        };
        let mut sink = self.sink.lock().unwrap();
        let line = serde_json::to_string(&entry).expect("replay entries serialize");
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            log::warn!("failed to record replay entry: {e}");
        }
        Ok(completions)
    }
}
