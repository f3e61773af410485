//! Per-video averaging of trial ratings and the stability of that average
//! as the number of trials per frame varies.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::TrialRecord;
use crate::parser::filter_valid;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    /// Mean rating on the MLLM's `[1, 5]` scale.
    pub q_p_raw: f64,
    #[serde(rename = "kept")]
    pub kept_trials: usize,
    #[serde(rename = "rejected")]
    pub rejected_trials: usize,
}

/// Flat mean of every kept rating across all frames and crops of one video.
pub fn aggregate_video(video_id: &str, records: &[&TrialRecord]) -> Result<VideoScore> {
    let filtered = filter_valid(records.iter().copied());
    if filtered.kept.is_empty() {
        return Err(Error::NoKeptTrials {
            video_id: video_id.to_string(),
            rejected: filtered.rejected_total(),
        });
    }
    let sum: f64 = filtered.kept.iter().filter_map(|r| r.value()).sum();
    Ok(VideoScore {
        video_id: video_id.to_string(),
        q_p_raw: sum / filtered.kept.len() as f64,
        kept_trials: filtered.kept.len(),
        rejected_trials: filtered.rejected_total(),
    })
}

/// Groups records by video id.
pub fn group_by_video<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> BTreeMap<&'a str, Vec<&'a TrialRecord>> {
    let mut groups: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.video_id.as_str()).or_default().push(r);
    }
    groups
}

/// Spread of resampled video scores at one trial count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdDevProfile {
    pub trials_per_frame: usize,
    pub resamples: usize,
    pub video_ids: Vec<String>,
    pub per_video_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub trials_per_frame: usize,
    pub resamples: usize,
    pub videos: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl StdDevProfile {
    pub fn summary(&self) -> ProfileSummary {
        let mut s = self.per_video_std.clone();
        s.sort_by(f64::total_cmp);
        let q = |p| if s.is_empty() { 0.0 } else { quantile(&s, p) };
        ProfileSummary {
            trials_per_frame: self.trials_per_frame,
            resamples: self.resamples,
            videos: s.len(),
            min: q(0.0),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: q(1.0),
        }
    }

    pub fn median(&self) -> f64 {
        self.summary().median
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// For each trial count `T`, draws `T` trials per key frame without
/// replacement (`resamples` times), scores each draw like
/// [`aggregate_video`], and records the standard deviation of those scores
/// per video.
///
/// Draws include rejected trials, mirroring a re-run of `T` inferences
/// followed by filtering; a draw with no kept rating is an error.
pub fn stddev_profile(
    records: &[TrialRecord],
    trials_list: &[usize],
    resamples: usize,
    seed: u64,
) -> Result<Vec<StdDevProfile>> {
    if resamples == 0 {
        return Err(Error::Config("resamples must be >= 1".into()));
    }
    // video -> frame -> records, in record (cache) order
    let mut frames: BTreeMap<&str, BTreeMap<usize, Vec<&TrialRecord>>> = BTreeMap::new();
    for r in records {
        frames
            .entry(r.video_id.as_str())
            .or_default()
            .entry(r.frame_index)
            .or_default()
            .push(r);
    }

    let mut profiles = Vec::with_capacity(trials_list.len());
    for &t in trials_list {
        if t == 0 {
            return Err(Error::Config("trial counts must be >= 1".into()));
        }
        let mut video_ids = Vec::with_capacity(frames.len());
        let mut per_video_std = Vec::with_capacity(frames.len());
        for (&video_id, by_frame) in &frames {
            for (&frame_index, pool) in by_frame {
                if pool.len() < t {
                    return Err(Error::InsufficientTrials {
                        video_id: video_id.to_string(),
                        frame_index,
                        needed: t,
                        available: pool.len(),
                    });
                }
            }
            let mut scores = Vec::with_capacity(resamples);
            for r in 0..resamples {
                let mut rng = StreamKey::new("profile", seed)
                    .str(video_id)
                    .u64(t as u64)
                    .u64(r as u64)
                    .rng();
                let mut drawn: Vec<&TrialRecord> = Vec::new();
                for pool in by_frame.values() {
                    let mut picks = index::sample(&mut rng, pool.len(), t).into_vec();
                    // fixed summation order, so identical subsets give identical means
                    picks.sort_unstable();
                    drawn.extend(picks.into_iter().map(|i| pool[i]));
                }
                scores.push(aggregate_video(video_id, &drawn)?.q_p_raw);
            }
            video_ids.push(video_id.to_string());
            per_video_std.push(population_std(&scores));
        }
        profiles.push(StdDevProfile {
            trials_per_frame: t,
            resamples,
            video_ids,
            per_video_std,
        });
    }
    Ok(profiles)
}
