use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InferRequest, PromptId};
use crate::parser::level_phrase;
use crate::rng::StreamKey;
use crate::score::{MLLM_MAX, MLLM_MIN};

/// Responses the mock emits instead of a rating. Every entry is rejected by
/// both the level and the score parser.
pub const NONSENSE_RESPONSES: [&str; 5] = [
    "A cat sitting on a mat.",
    "I cannot answer that.",
    "It could be low or high quality, hard to say.",
    "Quality: 7",
    "...",
];

const DESCRIPTIONS: [&str; 4] = [
    "soft edges and mild sensor noise",
    "clear detail with some blocking in flat areas",
    "a busy scene with visible motion blur",
    "saturated colors and a slightly dark background",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Spread of the level distribution at `p = 1`; the spread used is `sigma·p`.
    pub sigma: f64,
    pub nonsense_rate: f64,
    pub seed: u64,
    /// Latent quality on `[1, 5]` per video. Videos not listed take their
    /// latent quality from image brightness.
    pub latent: BTreeMap<String, f64>,
    pub input_size: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            sigma: 0.7,
            nonsense_rate: 0.0,
            seed: 0,
            latent: BTreeMap::new(),
            input_size: super::DEFAULT_INPUT_SIZE,
        }
    }
}

/// A simulated rater: levels are drawn from a discretized Gaussian centred
/// on the video's latent quality, widening with the nucleus mass.
#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Result<Self, BackendError> {
        if !(config.sigma >= 0.0 && config.sigma.is_finite()) {
            return Err(BackendError::Config(format!("mock sigma {} must be >= 0", config.sigma)));
        }
        if !(0.0..1.0).contains(&config.nonsense_rate) {
            return Err(BackendError::Config(format!(
                "mock nonsense rate {} must be in [0, 1)",
                config.nonsense_rate
            )));
        }
        if config.input_size == 0 {
            return Err(BackendError::Config("mock input size must be >= 1".into()));
        }
        if let Some((id, mu)) = config
            .latent
            .iter()
            .find(|(_, mu)| !(MLLM_MIN..=MLLM_MAX).contains(*mu))
        {
            return Err(BackendError::Config(format!("latent quality {mu} for {id} outside [1, 5]")));
        }
        Ok(MockBackend { config })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn latent(&self, request: &InferRequest<'_>) -> f64 {
        match self.config.latent.get(&request.key.video_id) {
            Some(mu) => *mu,
            None => MLLM_MIN + (MLLM_MAX - MLLM_MIN) * request.image.mean_intensity() / 255.0,
        }
    }

    /// Probability of each level 1..=5 for latent quality `mu` at nucleus mass `p`.
    pub fn level_distribution(&self, mu: f64, p: f64) -> [f64; 5] {
        let spread = self.config.sigma * p;
        let mut probs = [0.0; 5];
        if spread == 0.0 {
            let mode = mu.round().clamp(MLLM_MIN, MLLM_MAX) as usize;
            probs[mode - 1] = 1.0;
            return probs;
        }
        for (i, w) in probs.iter_mut().enumerate() {
            let d = (i + 1) as f64 - mu;
            *w = (-d * d / (2.0 * spread * spread)).exp();
        }
        let total: f64 = probs.iter().sum();
        if total == 0.0 || !total.is_finite() {
            let mode = mu.round().clamp(MLLM_MIN, MLLM_MAX) as usize;
            probs = [0.0; 5];
            probs[mode - 1] = 1.0;
            return probs;
        }
        probs.map(|w| w / total)
    }
}

impl Backend for MockBackend {
    fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn infer(&self, request: &InferRequest<'_>) -> Result<String, BackendError> {
        self.check_size(request.image)?;
        request.sampler.validate()?;
        let p = request.sampler.effective_p();
        let key = request.key;
        let mut rng = StreamKey::new("mock", self.config.seed)
            .str(&key.video_id)
            .u64(key.frame_index as u64)
            .opt(key.crop_index.map(|c| c as u64))
            .u64(key.trial_index as u64)
            .f64(p)
            .rng();

        let nonsense: f64 = rng.random();
        let pick: f64 = rng.random();
        let desc = DESCRIPTIONS[rng.random_range(0..DESCRIPTIONS.len())];
        if nonsense < self.config.nonsense_rate {
            return Ok(NONSENSE_RESPONSES[rng.random_range(0..NONSENSE_RESPONSES.len())].to_string());
        }

        let probs = self.level_distribution(self.latent(request), p);
        let mut acc = 0.0;
        let mut level = 5u8;
        for (i, w) in probs.iter().enumerate() {
            acc += w;
            if pick < acc {
                level = i as u8 + 1;
                break;
            }
        }
        Ok(match request.prompt.id {
            PromptId::LevelRelated => format!(
                "The image shows {desc}. It is of {} quality.",
                level_phrase(level).expect("level in 1..=5")
            ),
            PromptId::ScoreRelated => format!("The image shows {desc}. I would rate it {level} out of 5."),
        })
    }
}
