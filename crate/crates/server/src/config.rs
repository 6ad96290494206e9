//! Server configuration: a TOML file, with command-line overrides applied on top.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Deserialize;

use arsls_core::scene::{load_scene, SceneConfig};
use arsls_core::session::{load_plan, SessionPlan};
use arsls_core::verse::{bundled_corpus, load_corpus, VerseCorpus};

pub const DEFAULT_CLIENT_BUFFER: usize = 128;
pub const DEFAULT_INGEST_QUEUE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// HTTP and WebSocket listener (`/scene`, `/board`, `/ws`, `/ingest`, ...).
    pub http_addr: String,
    /// Raw TCP line ingest listener.
    pub ingest_addr: String,
    pub seed: Option<u64>,
    pub scene: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    /// Append-only event log of everything the sequencer applied.
    pub record: Option<PathBuf>,
    /// Where the end-of-session report goes; defaults to `<record>.report.json`.
    pub report: Option<PathBuf>,
    /// Client updates per second; defaults to the tick rate.
    pub fanout_hz: Option<u32>,
    pub client_buffer: usize,
    pub ingest_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            http_addr: "127.0.0.1:8080".into(),
            ingest_addr: "127.0.0.1:9000".into(),
            seed: None,
            scene: None,
            corpus: None,
            plan: None,
            record: None,
            report: None,
            fanout_hz: None,
            client_buffer: DEFAULT_CLIENT_BUFFER,
            ingest_queue: DEFAULT_INGEST_QUEUE,
        }
    }
}

impl ServerConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn report_path(&self) -> Option<PathBuf> {
        self.report.clone().or_else(|| {
            self.record.as_ref().map(|r| {
                let mut s = r.clone().into_os_string();
                s.push(".report.json");
                PathBuf::from(s)
            })
        })
    }
}

/// Scene, corpus and plan, resolved from paths or built-in defaults.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub scene: Arc<SceneConfig>,
    pub corpus: Arc<VerseCorpus>,
    pub plan: SessionPlan,
}

impl Inputs {
    pub fn load(scene: Option<&Path>, corpus: Option<&Path>, plan: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let scene = match scene {
            Some(p) => {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                load_scene(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            }
            None => SceneConfig::demo(),
        };
        let corpus = match corpus {
            Some(p) => {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                load_corpus(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            }
            None => bundled_corpus(),
        };
        let mut plan = match plan {
            Some(p) => {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                load_plan(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            }
            None => SessionPlan::default(),
        };
        if let Some(s) = seed {
            plan.seed = s;
        }
        Ok(Self { scene: Arc::new(scene), corpus: Arc::new(corpus), plan })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg: ServerConfig = toml::from_str("seed = 7\nrecord = \"room.log\"\n").unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.client_buffer, 128);
        assert_eq!(cfg.report_path().unwrap(), PathBuf::from("room.log.report.json"));
        assert!(toml::from_str::<ServerConfig>("bogus = 1").is_err());
    }

    #[test]
    fn missing_files_are_errors() {
        assert!(Inputs::load(Some(Path::new("/nonexistent/scene.json")), None, None, None).is_err());
        let inputs = Inputs::load(None, None, None, Some(5)).unwrap();
        assert_eq!(inputs.plan.seed, 5);
        assert!(inputs.corpus.len() >= 50);
    }

    #[test]
    fn shipped_samples_load() {
        let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        let cfg = ServerConfig::from_file(&data.join("server.toml")).unwrap();
        assert_eq!(cfg.fanout_hz, Some(30));
        let inputs = Inputs::load(Some(&data.join("scene.json")), None, Some(&data.join("plan.json")), cfg.seed).unwrap();
        assert_eq!(*inputs.scene, SceneConfig::demo());
        assert_eq!(inputs.plan, SessionPlan { seed: 20240501, ..SessionPlan::default() });
    }
}
