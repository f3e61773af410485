//! MLLM inference backends and the repeated zero-shot trial protocol.

mod batch;
mod http;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::FrameImage;
use crate::parser::ParsedResponse;

pub use batch::{run_trial_batch, BatchOutcome, BatchSpec, Preprocessing, TrialCache};
pub use http::{HttpBackend, HttpConfig, InferRequestBody, InferResponseBody, RetryPolicy};
pub use mock::{MockBackend, MockConfig, NONSENSE_RESPONSES};

pub const DEFAULT_INPUT_SIZE: usize = 448;
pub const DEFAULT_MAX_TOKENS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Greedy,
    Nucleus,
}

/// Next-token sampling strategy. `p` is the nucleus mass and is ignored by
/// greedy decoding; nucleus with `p = 0` behaves greedily.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub p: f64,
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        SamplerConfig {
            kind: SamplerKind::Greedy,
            p: 0.0,
        }
    }

    pub fn nucleus(p: f64) -> Self {
        SamplerConfig {
            kind: SamplerKind::Nucleus,
            p,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if (0.0..=1.0).contains(&self.p) {
            Ok(())
        } else {
            Err(BackendError::Config(format!("sampler p {} outside [0, 1]", self.p)))
        }
    }

    /// Randomness actually applied: zero for greedy.
    pub fn effective_p(&self) -> f64 {
        match self.kind {
            SamplerKind::Greedy => 0.0,
            SamplerKind::Nucleus => self.p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    ScoreRelated,
    LevelRelated,
}

impl PromptId {
    pub fn template(self) -> PromptTemplate {
        PromptTemplate::new(self)
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptId::ScoreRelated => "score_related",
            PromptId::LevelRelated => "level_related",
        })
    }
}

pub const SCORE_PROMPT: &str = "Describe the quality characteristics of the image. Rate the image quality on a scale of 1 to 5, with 1 being the lowest quality and 5 being the highest quality.";
pub const LEVEL_PROMPT: &str = "Describe the quality characteristics of the image. Is it of low, medium low, medium, medium high, or high quality?";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn new(id: PromptId) -> Self {
        let text = match id {
            PromptId::ScoreRelated => SCORE_PROMPT,
            PromptId::LevelRelated => LEVEL_PROMPT,
        };
        PromptTemplate { id, text }
    }
}

/// Identity of one zero-shot trial. Two records with equal keys are the
/// same trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialKey {
    pub video_id: String,
    pub frame_index: usize,
    /// `None` for a resized whole frame.
    pub crop_index: Option<usize>,
    pub trial_index: usize,
    pub prompt_id: PromptId,
    pub sampler: SamplerConfig,
}

impl TrialKey {
    /// Total order used for cache layout; `p` compares by bit pattern.
    pub(crate) fn sort_key(&self) -> (&str, usize, Option<usize>, usize, PromptId, SamplerKind, u64) {
        (
            &self.video_id,
            self.frame_index,
            self.crop_index,
            self.trial_index,
            self.prompt_id,
            self.sampler.kind,
            self.sampler.p.to_bits(),
        )
    }
}

/// One zero-shot response and its parsed outcome. Serialized one per line
/// in the trial cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub crop_index: Option<usize>,
    pub trial_index: usize,
    pub sampler: SamplerConfig,
    pub prompt_id: PromptId,
    pub raw_text: String,
    pub parsed: ParsedResponse,
}

impl TrialRecord {
    pub fn new(key: TrialKey, raw_text: String, parsed: ParsedResponse) -> Self {
        TrialRecord {
            video_id: key.video_id,
            frame_index: key.frame_index,
            crop_index: key.crop_index,
            trial_index: key.trial_index,
            sampler: key.sampler,
            prompt_id: key.prompt_id,
            raw_text,
            parsed,
        }
    }

    pub fn key(&self) -> TrialKey {
        TrialKey {
            video_id: self.video_id.clone(),
            frame_index: self.frame_index,
            crop_index: self.crop_index,
            trial_index: self.trial_index,
            prompt_id: self.prompt_id,
            sampler: self.sampler,
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.parsed.value()
    }
}

/// Everything a backend sees for one call. `key` lets simulated backends
/// derive their randomness; real backends ignore it.
#[derive(Debug, Clone, Copy)]
pub struct InferRequest<'a> {
    pub image: &'a FrameImage,
    pub prompt: PromptTemplate,
    pub sampler: SamplerConfig,
    pub key: &'a TrialKey,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend refused: {0}")]
    Refused(String),

    #[error("image is {height}x{width}, backend expects {expected}x{expected}")]
    WrongImageSize {
        height: usize,
        width: usize,
        expected: usize,
    },

    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether the backend could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// A multimodal model answering one prompt about one square image.
pub trait Backend: Send + Sync {
    /// Side length of the square input this backend accepts.
    fn input_size(&self) -> usize;

    fn infer(&self, request: &InferRequest<'_>) -> Result<String, BackendError>;

    fn check_size(&self, image: &FrameImage) -> Result<(), BackendError> {
        let expected = self.input_size();
        if image.height() == expected && image.width() == expected {
            Ok(())
        } else {
            Err(BackendError::WrongImageSize {
                height: image.height(),
                width: image.width(),
                expected,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::Rejection;

    #[test]
    fn prompts_are_verbatim() {
        assert!(PromptId::ScoreRelated
            .template()
            .text
            .contains("Rate the image quality on a scale of 1 to 5"));
        assert!(PromptId::LevelRelated
            .template()
            .text
            .ends_with("Is it of low, medium low, medium, medium high, or high quality?"));
    }

    #[test]
    fn record_json_fields() {
        let key = TrialKey {
            video_id: "v1".into(),
            frame_index: 2,
            crop_index: None,
            trial_index: 7,
            prompt_id: PromptId::LevelRelated,
            sampler: SamplerConfig::nucleus(0.9),
        };
        let rec = TrialRecord::new(key.clone(), "nope".into(), ParsedResponse::Rejected(Rejection::NoMatch));
        let json: serde_json::Value = serde_json::to_value(&rec).unwrap();
        let obj = json.as_object().unwrap();
        let mut fields: Vec<_> = obj.keys().cloned().collect();
        fields.sort();
        assert_eq!(
            fields,
            ["crop_index", "frame_index", "parsed", "prompt_id", "raw_text", "sampler", "trial_index", "video_id"]
        );
        assert_eq!(obj["parsed"], "no_match");
        assert_eq!(obj["sampler"]["kind"], "nucleus");
        let back: TrialRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.key(), key);

        let valued = TrialRecord::new(key, "high".into(), ParsedResponse::Value(5.0));
        let line = serde_json::to_string(&valued).unwrap();
        assert!(line.contains("\"parsed\":5.0"));
        assert_eq!(serde_json::from_str::<TrialRecord>(&line).unwrap(), valued);
    }

    #[test]
    fn sampler_validation() {
        assert!(SamplerConfig::nucleus(0.9).validate().is_ok());
        assert!(SamplerConfig::nucleus(1.2).validate().is_err());
        assert_eq!(SamplerConfig::greedy().effective_p(), 0.0);
    }
}
