use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
    Passthrough,
}

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fp: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Ordered transcript of model exchanges.
///
/// Replay consumes entries per fingerprint in recorded order, so a repeated
/// identical request gets the next recorded response.
#[derive(Debug, Clone)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    consumed: Vec<bool>,
    mode: CassetteMode,
    sink: Option<PathBuf>,
}

/// SHA-256 hex of the model, temperature and whitespace-normalized messages.
pub fn fingerprint(req: &ChatRequest) -> String {
    let messages: Vec<_> = req
        .messages
        .iter()
        .map(|m| json!([m.role, m.content.split_whitespace().collect::<Vec<_>>().join(" ")]))
        .collect();
    let canonical = json!({
        "model": req.model,
        "temperature": format!("{:.4}", req.temperature),
        "messages": messages,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

impl Cassette {
    pub fn in_memory(mode: CassetteMode) -> Self {
        Cassette { entries: Vec::new(), consumed: Vec::new(), mode, sink: None }
    }

    /// Loads a JSON Lines cassette for replay.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let io_err = |message: String| LlmError::CassetteIo { path: path.display().to_string(), message };
        let file = File::open(path).map_err(|e| io_err(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| io_err(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Cassette::from_entries(entries, CassetteMode::Replay))
    }

    /// Starts an empty recording cassette that writes each entry to `path`
    /// as it is appended. An existing file is truncated.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|e| LlmError::CassetteIo { path: dir.display().to_string(), message: e.to_string() })?;
        }
        File::create(path)
            .map_err(|e| LlmError::CassetteIo { path: path.display().to_string(), message: e.to_string() })?;
        let mut c = Cassette::in_memory(CassetteMode::Record);
        c.sink = Some(path.to_path_buf());
        Ok(c)
    }

    pub fn from_entries(entries: Vec<CassetteEntry>, mode: CassetteMode) -> Self {
        let consumed = vec![false; entries.len()];
        Cassette { entries, consumed, mode, sink: None }
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: CassetteMode) {
        self.mode = mode;
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|c| !**c).count()
    }

    /// Consumes the earliest unconsumed entry with fingerprint `fp`.
    pub fn take(&mut self, fp: &str) -> Option<ChatResponse> {
        let i = self.entries.iter().zip(&self.consumed).position(|(e, used)| !used && e.fp == fp)?;
        self.consumed[i] = true;
        Some(self.entries[i].response.clone())
    }

    pub fn append(&mut self, entry: CassetteEntry) -> Result<(), LlmError> {
        if let Some(path) = &self.sink {
            let io_err =
                |e: std::io::Error| LlmError::CassetteIo { path: path.display().to_string(), message: e.to_string() };
            let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(io_err)?;
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(f, "{line}").map_err(io_err)?;
        }
        self.entries.push(entry);
        self.consumed.push(false);
        Ok(())
    }

    /// Writes all entries as JSON Lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)
            .map_err(|e| LlmError::CassetteIo { path: path.display().to_string(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ChatMessage, Llm, ScriptedBackend};
    use super::*;
    use proptest::prelude::*;

    fn req(model: &str, t: f64, msgs: &[&str]) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            temperature: t,
            messages: msgs.iter().map(|m| ChatMessage::user(*m)).collect(),
        }
    }

    #[test]
    fn fingerprint_ignores_whitespace_layout() {
        let a = req("m", 1.0, &["def  f(x):\n    return x"]);
        let b = req("m", 1.0, &["def f(x): return x  "]);
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&req("m", 0.2, &["def f(x): return x"])));
        assert_ne!(fingerprint(&a), fingerprint(&req("n", 1.0, &["def f(x): return x"])));
        assert_eq!(fingerprint(&a).len(), 64);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/c.jsonl");
        let llm = Llm::record(ScriptedBackend::new(["a", "b"]), Cassette::create(&path).unwrap());
        llm.complete(&req("m", 1.0, &["x"])).unwrap();
        llm.complete(&req("m", 1.0, &["y"])).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.get("fp").is_some() && first.get("request").is_some() && first.get("response").is_some());

        let loaded = Cassette::load(&path).unwrap();
        assert_eq!(loaded.entries(), llm.cassette().entries());
        let replay = Llm::replay(loaded);
        assert_eq!(replay.complete(&req("m", 1.0, &["y"])).unwrap().content, "b");
        assert_eq!(replay.complete(&req("m", 1.0, &["x"])).unwrap().content, "a");
    }

    #[test]
    fn bad_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        let err = Cassette::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    proptest! {
        #[test]
        fn replay_of_record_is_identity(prompts in prop::collection::vec("[a-c ]{1,6}", 1..12)) {
            let responses: Vec<String> = (0..prompts.len()).map(|i| format!("response {i}")).collect();
            let llm = Llm::record(ScriptedBackend::new(responses.clone()), Cassette::in_memory(CassetteMode::Record));
            let requests: Vec<ChatRequest> = prompts.iter().map(|p| req("m", 1.0, &[p])).collect();
            let recorded: Vec<String> = requests.iter().map(|r| llm.complete(r).unwrap().content).collect();
            prop_assert_eq!(&recorded, &responses);
            let replay = Llm::replay(llm.cassette().clone());
            let replayed: Vec<String> = requests.iter().map(|r| replay.complete(r).unwrap().content).collect();
            prop_assert_eq!(replayed, responses);
        }
    }
}
