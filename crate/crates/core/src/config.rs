//! Run configuration, read from one TOML file with `key.path=value`
//! overrides. Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ensemble::TrainConfig;
use crate::error::{Error, Result};
use crate::gateway::{
    Backend, BatchSpec, HttpBackend, HttpConfig, MockBackend, MockConfig, Preprocessing, PromptId, RetryPolicy,
    SamplerConfig, SamplerKind, DEFAULT_INPUT_SIZE, DEFAULT_MAX_TOKENS,
};
use crate::manifest::Split;

/// Environment variable holding the HTTP backend's bearer token.
pub const TOKEN_ENV: &str = "SHORTVQA_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    pub sigma: f64,
    pub nonsense_rate: f64,
    /// JSON object mapping video id to latent quality on `[1, 5]`.
    pub latent: Option<PathBuf>,
}

impl Default for MockSection {
    fn default() -> Self {
        let d = MockConfig::default();
        MockSection {
            sigma: d.sigma,
            nonsense_rate: d.nonsense_rate,
            latent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub url: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_tokens: u32,
    pub input_size: usize,
    pub max_attempts: u32,
    pub backoff_base_s: f64,
    pub mock: MockSection,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Mock,
            url: "http://127.0.0.1:8080/infer".into(),
            model: "paligemma-3b-mix-448".into(),
            timeout_s: 30.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            input_size: DEFAULT_INPUT_SIZE,
            max_attempts: 3,
            backoff_base_s: 0.5,
            mock: MockSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub p: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            kind: SamplerKind::Nucleus,
            p: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub trials: Vec<usize>,
    pub resamples: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            trials: vec![10, 50, 200],
            resamples: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Directory of `<video_id>.vqef` files.
    pub embeddings_dir: PathBuf,
    /// MLLM scores as written by `aggregate`.
    pub qp_scores: PathBuf,
    /// Conventional model scores, one `{"video_id", "score"}` per line.
    pub ql_scores: PathBuf,
    pub ql_min: f64,
    pub ql_max: f64,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub predictions: PathBuf,
    pub train_split: Split,
    /// Splits that `blend` writes predictions for; empty means all.
    pub blend_splits: Vec<Split>,
    pub hidden: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        EnsembleSection {
            embeddings_dir: "embeddings".into(),
            qp_scores: "scores.jsonl".into(),
            ql_scores: "ql.jsonl".into(),
            ql_min: 0.0,
            ql_max: 1.0,
            checkpoint: "gate.vqgm".into(),
            loss_log: "loss.jsonl".into(),
            predictions: "predictions.jsonl".into(),
            train_split: Split::Train,
            blend_splits: Vec::new(),
            hidden: t.hidden,
            lr: t.lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha_min: f64,
    pub delta_min: f64,
    pub report: PathBuf,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            alpha_min: 0.6,
            delta_min: 0.1,
            report: "analysis.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    pub prompt: PromptId,
    pub key_frames: usize,
    pub crops_per_frame: usize,
    pub trials_per_image: usize,
    pub max_in_flight: usize,
    pub trial_cache: PathBuf,
    pub scores: PathBuf,
    pub profile_report: PathBuf,
    pub evaluation_report: PathBuf,
    pub sampler: SamplerSection,
    pub backend: BackendSection,
    pub profile: ProfileSection,
    pub ensemble: EnsembleSection,
    pub analysis: AnalysisSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BatchSpec::default();
        RunConfig {
            manifest: "manifest.csv".into(),
            seed: 0,
            preprocessing: b.preprocessing,
            prompt: b.prompt,
            key_frames: b.key_frames,
            crops_per_frame: b.crops_per_frame,
            trials_per_image: b.trials_per_image,
            max_in_flight: b.max_in_flight,
            trial_cache: "trials.jsonl".into(),
            scores: "scores.jsonl".into(),
            profile_report: "profile.json".into(),
            evaluation_report: "evaluation.txt".into(),
            sampler: SamplerSection::default(),
            backend: BackendSection::default(),
            profile: ProfileSection::default(),
            ensemble: EnsembleSection::default(),
            analysis: AnalysisSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse_override(assignment: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    // accept TOML literals (numbers, bools, arrays, quoted strings), else a bare string
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path through non-table {p:?}")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text plus overrides; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("key_frames", self.key_frames),
            ("crops_per_frame", self.crops_per_frame),
            ("trials_per_image", self.trials_per_image),
            ("max_in_flight", self.max_in_flight),
            ("backend.input_size", self.backend.input_size),
            ("backend.max_attempts", self.backend.max_attempts as usize),
            ("profile.resamples", self.profile.resamples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.profile.trials.contains(&0) {
            return Err(Error::Config("profile.trials entries must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sampler.p) {
            return Err(Error::Config(format!("sampler.p {} outside [0, 1]", self.sampler.p)));
        }
        if !(self.backend.timeout_s > 0.0 && self.backend.timeout_s.is_finite()) {
            return Err(Error::Config("backend.timeout_s must be positive".into()));
        }
        if !(self.backend.backoff_base_s >= 0.0 && self.backend.backoff_base_s.is_finite()) {
            return Err(Error::Config("backend.backoff_base_s must be >= 0".into()));
        }
        if !(self.ensemble.ql_min < self.ensemble.ql_max) {
            return Err(Error::Config("ensemble.ql_min must be below ensemble.ql_max".into()));
        }
        if !(0.0..=1.0).contains(&self.analysis.alpha_min) || self.analysis.delta_min < 0.0 {
            return Err(Error::Config("analysis thresholds out of range".into()));
        }
        self.train_config().validate()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            kind: self.sampler.kind,
            p: self.sampler.p,
        }
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            preprocessing: self.preprocessing,
            prompt: self.prompt,
            sampler: self.sampler(),
            key_frames: self.key_frames,
            crops_per_frame: self.crops_per_frame,
            trials_per_image: self.trials_per_image,
            seed: self.seed,
            max_in_flight: self.max_in_flight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let e = &self.ensemble;
        TrainConfig {
            hidden: e.hidden,
            lr: e.lr,
            lr_decay: e.lr_decay,
            decay_every: e.decay_every,
            epochs: e.epochs,
            batch_size: e.batch_size,
            seed: self.seed,
        }
    }

    pub fn mock_config(&self) -> Result<MockConfig> {
        let latent = match &self.backend.mock.latent {
            Some(p) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)?
            }
            None => Default::default(),
        };
        Ok(MockConfig {
            sigma: self.backend.mock.sigma,
            nonsense_rate: self.backend.mock.nonsense_rate,
            seed: self.seed,
            latent,
            input_size: self.backend.input_size,
        })
    }

    pub fn http_config(&self) -> HttpConfig {
        let b = &self.backend;
        HttpConfig {
            url: b.url.clone(),
            model: b.model.clone(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            timeout: Duration::from_secs_f64(b.timeout_s),
            max_tokens: b.max_tokens,
            input_size: b.input_size,
            retry: RetryPolicy {
                max_attempts: b.max_attempts,
                base_delay: Duration::from_secs_f64(b.backoff_base_s),
                factor: 2.0,
            },
        }
    }

    pub fn build_backend(&self) -> Result<Box<dyn Backend>> {
        Ok(match self.backend.kind {
            BackendKind::Mock => Box::new(MockBackend::new(self.mock_config()?)?),
            BackendKind::Http => Box::new(HttpBackend::new(self.http_config())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = RunConfig::from_toml("", Path::new("/base"), &[]).unwrap();
        assert_eq!((c.key_frames, c.crops_per_frame, c.trials_per_image), (5, 10, 20));
        assert_eq!(c.sampler.p, 0.9);
        assert_eq!(c.preprocessing, Preprocessing::Crop);
        assert_eq!(c.resolve(Path::new("m.csv")), Path::new("/base/m.csv"));
        assert_eq!(c.batch_spec().trials_per_frame(), 200);
    }

    #[test]
    fn spec_keys_parse() {
        let text = r#"
            seed = 9
            preprocessing = "resize"
            trials_per_image = 7
            crops_per_frame = 3
            [backend]
            kind = "http"
            url = "http://example.invalid/x"
            timeout_s = 2.5
            [sampler]
            p = 0.2
        "#;
        let c = RunConfig::from_toml(text, Path::new("."), &[]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.preprocessing, Preprocessing::Resize);
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.http_config().timeout, Duration::from_millis(2500));
        assert_eq!(c.sampler().p, 0.2);
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::from_toml(
            "seed = 1\n[sampler]\np = 0.5\n",
            Path::new("."),
            &["seed=4".into(), "sampler.p=0.0".into(), "ensemble.embeddings_dir=emb".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.sampler.p, 0.0);
        assert_eq!(c.ensemble.embeddings_dir, Path::new("emb"));
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in ["trials_per_image = 0", "[sampler]\np = 1.5", "unknown_key = 1", "[ensemble]\nepochs = 0"] {
            assert!(RunConfig::from_toml(bad, Path::new("."), &[]).is_err(), "{bad}");
        }
        assert!(RunConfig::from_toml("", Path::new("."), &["novalue".into()]).is_err());
    }
}
