//! Run configuration and presets.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchoring::AnchorConfig;
use crate::construction::DEFAULT_JUDGE_BATCH;
use crate::error::{Error, Result};
use crate::oracle::{GatewayConfig, MockFixtures, MockOracle, OracleBackend, OracleGateway};
use crate::reasoning::ReasonConfig;
use crate::retrieval::RetrievalConfig;

pub use crate::reasoning::SearchStrategy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Full,
    Lite,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "proh" => Ok(Preset::Full),
            "lite" | "proh-lite" | "proh-l" => Ok(Preset::Lite),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (full or lite)"
            ))),
        }
    }
}

/// Where oracle calls go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Deterministic offline backend, optionally with a fixture file.
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixtures: Option<PathBuf>,
    },
    Http {
        url: String,
        /// `oracle` for the native envelope, `chat` for chat-completion servers.
        #[serde(default = "default_style")]
        style: String,
        #[serde(default)]
        chat_model: String,
        #[serde(default)]
        embed_model: String,
        /// Environment variable holding the bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_style() -> String {
    "oracle".into()
}

fn default_timeout() -> u64 {
    60
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock { fixtures: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Preset,
    /// Similarity threshold for synonym candidates.
    pub tau: f64,
    pub judge_batch: usize,
    pub anchor: AnchorConfig,
    /// Layers of the plan context graph.
    pub plan_depth: usize,
    pub plan_width: usize,
    pub plan_budget: usize,
    pub n0: usize,
    pub k: usize,
    pub strategy: SearchStrategy,
    pub branch_cap: usize,
    pub retrieval: RetrievalConfig,
    pub answer_budget: usize,
    pub backend: BackendSpec,
    pub gateway: GatewayConfig,
    pub seed: u64,
    /// Questions evaluated in parallel.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            preset,
            tau: 0.85,
            judge_batch: DEFAULT_JUDGE_BATCH,
            anchor: AnchorConfig::default(),
            plan_depth: 3,
            plan_width: 5,
            plan_budget: 4000,
            n0: 2,
            k: 2,
            strategy: SearchStrategy::Dfs,
            branch_cap: 6,
            retrieval: RetrievalConfig::default(),
            answer_budget: 8000,
            backend: BackendSpec::default(),
            gateway: GatewayConfig::default(),
            seed: 0,
            workers: 4,
        };
        cfg.apply_preset(preset);
        cfg
    }

    /// Overwrites the preset-controlled fields.
    pub fn apply_preset(&mut self, preset: Preset) {
        self.preset = preset;
        match preset {
            Preset::Full => {
                self.plan_depth = 3;
                self.retrieval.d_max = 3;
                self.n0 = 2;
                self.k = 2;
                self.retrieval.lite_mode = false;
            }
            Preset::Lite => {
                self.plan_depth = 2;
                self.retrieval.d_max = 3;
                self.n0 = 1;
                self.k = 1;
                self.retrieval.lite_mode = true;
            }
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau = {} outside [-1, 1]", self.tau)));
        }
        for (name, v) in [
            ("judge_batch", self.judge_batch),
            ("plan_width", self.plan_width),
            ("n0", self.n0),
            ("k", self.k),
            ("branch_cap", self.branch_cap),
            ("workers", self.workers),
            ("plan_budget", self.plan_budget),
            ("answer_budget", self.answer_budget),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.anchor.validate()?;
        self.retrieval.validate()
    }

    pub fn reason_config(&self) -> ReasonConfig {
        ReasonConfig {
            k: self.k,
            strategy: self.strategy,
            branch_cap: self.branch_cap,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Builds the oracle gateway described by `backend`. The mock backend
    /// takes its seed from `seed`.
    pub fn gateway(&self) -> Result<OracleGateway> {
        let backend: Arc<dyn OracleBackend> = match &self.backend {
            BackendSpec::Mock { fixtures } => {
                let mut f = match fixtures {
                    Some(p) => MockFixtures::from_path(p)?,
                    None => MockFixtures::default(),
                };
                f.seed = self.seed;
                Arc::new(MockOracle::new(f))
            }
            BackendSpec::Http { .. } => http_backend(&self.backend)?,
        };
        Ok(OracleGateway::new(backend, self.gateway.clone()))
    }
}

#[cfg(feature = "http")]
fn http_backend(spec: &BackendSpec) -> Result<Arc<dyn OracleBackend>> {
    use crate::oracle::{HttpBackend, ProtocolStyle};
    let BackendSpec::Http {
        url,
        style,
        chat_model,
        embed_model,
        api_key_env,
        timeout_secs,
    } = spec
    else {
        unreachable!("called with an http spec")
    };
    let style = match style.as_str() {
        "oracle" => ProtocolStyle::Oracle,
        "chat" => ProtocolStyle::ChatCompletion {
            chat_model: chat_model.clone(),
            embed_model: embed_model.clone(),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown http style {other:?} (oracle or chat)"
            )))
        }
    };
    let api_key = api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
    Ok(Arc::new(HttpBackend::new(
        url.clone(),
        style,
        api_key,
        std::time::Duration::from_secs(*timeout_secs),
    )))
}

#[cfg(not(feature = "http"))]
fn http_backend(_: &BackendSpec) -> Result<Arc<dyn OracleBackend>> {
    Err(Error::Config(
        "this build has no http backend; rebuild with the `http` feature".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let full = RunConfig::preset(Preset::Full);
        assert_eq!(
            (full.plan_depth, full.retrieval.d_max, full.n0, full.k),
            (3, 3, 2, 2)
        );
        assert!(!full.retrieval.lite_mode);
        let lite = RunConfig::preset(Preset::Lite);
        assert_eq!(
            (lite.plan_depth, lite.retrieval.d_max, lite.n0, lite.k),
            (2, 3, 1, 1)
        );
        assert!(lite.retrieval.lite_mode);
        assert_eq!("proh-lite".parse::<Preset>().unwrap(), Preset::Lite);
        assert_eq!("PROH".parse::<Preset>().unwrap(), Preset::Full);
        assert!("other".parse::<Preset>().is_err());
    }

    #[test]
    fn round_trip_keeps_hash() {
        let mut cfg = RunConfig::preset(Preset::Lite);
        cfg.seed = 7;
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        assert_ne!(RunConfig::default().config_hash(), cfg.config_hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"k": 3, "retrieval": {"beam": 2}}"#).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.retrieval.beam, 2);
        assert_eq!(cfg.retrieval.d_max, 3);
        assert_eq!(cfg.tau, 0.85);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.retrieval.beam = 0;
        assert!(cfg.validate().is_err());
    }

    #[cfg(not(feature = "http"))]
    #[test]
    fn http_backend_needs_feature() {
        let cfg = RunConfig {
            backend: BackendSpec::Http {
                url: "http://localhost:1".into(),
                style: "oracle".into(),
                chat_model: String::new(),
                embed_model: String::new(),
                api_key_env: None,
                timeout_secs: 1,
            },
            ..Default::default()
        };
        assert!(matches!(cfg.gateway(), Err(Error::Config(_))));
    }
}
