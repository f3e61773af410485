use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{Backend, InferRequest, PromptId, SamplerConfig, SamplerKind, TrialKey, TrialRecord};
use crate::error::{Error, Result};
use crate::frame::{key_frame_indices, load_frame, random_crops, resize_bilinear, FrameImage};
use crate::io::{read_jsonl, write_jsonl};
use crate::manifest::Manifest;
use crate::parser::{parse_response, ParsedResponse, Rejection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocessing {
    Resize,
    Crop,
}

impl FromStr for Preprocessing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "resize" => Ok(Preprocessing::Resize),
            "crop" => Ok(Preprocessing::Crop),
            other => Err(format!("unknown preprocessing {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub preprocessing: Preprocessing,
    pub prompt: PromptId,
    pub sampler: SamplerConfig,
    pub key_frames: usize,
    pub crops_per_frame: usize,
    pub trials_per_image: usize,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            preprocessing: Preprocessing::Crop,
            prompt: PromptId::LevelRelated,
            sampler: SamplerConfig::nucleus(0.9),
            key_frames: 5,
            crops_per_frame: 10,
            trials_per_image: 20,
            seed: 0,
            max_in_flight: 4,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("key_frames", self.key_frames),
            ("crops_per_frame", self.crops_per_frame),
            ("trials_per_image", self.trials_per_image),
            ("max_in_flight", self.max_in_flight),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        self.sampler.validate()?;
        Ok(())
    }

    /// Images fed to the backend per key frame.
    pub fn images_per_frame(&self) -> usize {
        match self.preprocessing {
            Preprocessing::Resize => 1,
            Preprocessing::Crop => self.crops_per_frame,
        }
    }

    pub fn trials_per_frame(&self) -> usize {
        self.images_per_frame() * self.trials_per_image
    }

    pub fn trials_per_video(&self) -> usize {
        self.key_frames * self.trials_per_frame()
    }

    /// Whether a cached record belongs to the experiment this spec describes.
    pub fn matches(&self, r: &TrialRecord) -> bool {
        let crop_ok = match self.preprocessing {
            Preprocessing::Resize => r.crop_index.is_none(),
            Preprocessing::Crop => r.crop_index.is_some_and(|c| c < self.crops_per_frame),
        };
        crop_ok
            && r.prompt_id == self.prompt
            && r.sampler.kind == self.sampler.kind
            && r.sampler.p.to_bits() == self.sampler.p.to_bits()
            && r.frame_index < self.key_frames
            && r.trial_index < self.trials_per_image
    }
}

type CacheKey = (String, usize, Option<usize>, usize, PromptId, SamplerKind, u64);

fn cache_key(key: &TrialKey) -> CacheKey {
    let (v, f, c, t, p, k, bits) = key.sort_key();
    (v.to_string(), f, c, t, p, k, bits)
}

/// Trial records keyed by trial identity, stored as JSON lines in key order.
#[derive(Debug, Clone, Default)]
pub struct TrialCache {
    records: BTreeMap<CacheKey, TrialRecord>,
}

impl TrialCache {
    /// Loads `path`, or starts empty when it does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = TrialCache::default();
        if path.exists() {
            for r in read_jsonl::<TrialRecord>(path)? {
                cache.insert(r);
            }
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.records.values())
    }

    pub fn insert(&mut self, record: TrialRecord) {
        self.records.insert(cache_key(&record.key()), record);
    }

    /// A trial counts as done unless its last attempt failed in the backend.
    pub fn is_done(&self, key: &TrialKey) -> bool {
        self.records
            .get(&cache_key(key))
            .is_some_and(|r| r.parsed != ParsedResponse::Rejected(Rejection::BackendError))
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    /// Records written by this run, including backend failures.
    pub new_trials: usize,
    pub backend_calls: usize,
    pub backend_failures: usize,
    pub unreachable_failures: usize,
}

struct Job {
    key: TrialKey,
    image: usize,
}

/// Runs every missing trial of the experiment described by `spec` and
/// stores the results in `cache`. Backend failures become rejected records;
/// only manifest, config and frame-loading problems abort the batch.
pub fn run_trial_batch(
    manifest: &Manifest,
    spec: &BatchSpec,
    backend: &dyn Backend,
    cache: &mut TrialCache,
) -> Result<BatchOutcome> {
    spec.validate()?;
    let size = backend.input_size();
    let prompt = spec.prompt.template();
    let mut outcome = BatchOutcome::default();

    for entry in manifest.entries() {
        let indices = key_frame_indices(entry.frame_paths.len(), spec.key_frames)?;
        let mut images: Vec<FrameImage> = Vec::new();
        let mut jobs = Vec::new();
        for (frame_index, &source) in indices.iter().enumerate() {
            let crop_slots: Vec<Option<usize>> = match spec.preprocessing {
                Preprocessing::Resize => vec![None],
                Preprocessing::Crop => (0..spec.crops_per_frame).map(Some).collect(),
            };
            let keys: Vec<TrialKey> = crop_slots
                .iter()
                .flat_map(|&crop_index| {
                    (0..spec.trials_per_image).map(move |trial_index| TrialKey {
                        video_id: entry.video_id.clone(),
                        frame_index,
                        crop_index,
                        trial_index,
                        prompt_id: spec.prompt,
                        sampler: spec.sampler,
                    })
                })
                .filter(|k| !cache.is_done(k))
                .collect();
            if keys.is_empty() {
                continue;
            }
            let frame = load_frame(&entry.frame_paths[source])?;
            let base = images.len();
            match spec.preprocessing {
                Preprocessing::Resize => images.push(resize_bilinear(&frame, size, size)?),
                Preprocessing::Crop => images.extend(random_crops(
                    &frame,
                    spec.crops_per_frame,
                    size,
                    spec.seed,
                    &entry.video_id,
                    frame_index,
                )?),
            }
            jobs.extend(keys.into_iter().map(|key| Job {
                image: base + key.crop_index.unwrap_or(0),
                key,
            }));
        }
        if jobs.is_empty() {
            continue;
        }

        let results = execute(&jobs, &images, prompt, spec, backend);
        for (job, result) in jobs.iter().zip(results) {
            outcome.backend_calls += 1;
            let record = match result {
                Ok(text) => {
                    let parsed = parse_response(spec.prompt, &text);
                    TrialRecord::new(job.key.clone(), text, parsed)
                }
                Err(e) => {
                    outcome.backend_failures += 1;
                    if e.is_unreachable() {
                        outcome.unreachable_failures += 1;
                    }
                    TrialRecord::new(
                        job.key.clone(),
                        e.to_string(),
                        ParsedResponse::Rejected(Rejection::BackendError),
                    )
                }
            };
            cache.insert(record);
            outcome.new_trials += 1;
        }
    }
    Ok(outcome)
}

/// Calls the backend for every job with at most `max_in_flight` concurrent
/// calls. Results come back in job order regardless of completion order.
fn execute(
    jobs: &[Job],
    images: &[FrameImage],
    prompt: super::PromptTemplate,
    spec: &BatchSpec,
    backend: &dyn Backend,
) -> Vec<std::result::Result<String, super::BackendError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<_>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = spec.max_in_flight.min(jobs.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let result = backend.infer(&InferRequest {
                    image: &images[job.image],
                    prompt,
                    sampler: spec.sampler,
                    key: &job.key,
                });
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}
