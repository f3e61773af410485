//! Synthetic datasets with known structure.
//!
//! Videos fall into two content clusters with well-separated embeddings. In
//! cluster A the MLLM prediction equals the ground truth and the
//! conventional model is noisy; in cluster B the roles swap. A gate that
//! reads content can therefore beat both predictors and their fixed average.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::VideoScore;
use crate::ensemble::EmbeddingBlock;
use crate::error::{Error, Result};
use crate::frame::FrameImage;
use crate::io::{write_atomic, write_jsonl};
use crate::manifest::{render_manifest, Split};
use crate::rng::StreamKey;
use crate::score::{MLLM_MAX, MLLM_MIN};

pub const FRAMES_PER_VIDEO: usize = 5;
pub const FRAME_HEIGHT: usize = 40;
pub const FRAME_WIDTH: usize = 56;
pub const GRID: usize = 4;
pub const DIM: usize = 8;
/// Per-entry embedding noise; cluster centres differ by 2.0 per channel.
pub const EMBED_NOISE: f64 = 0.1;
/// Spread of the noisy predictor around the truth.
pub const PREDICTOR_NOISE: f64 = 0.25;
pub const MOS_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cluster {
    /// MLLM is right.
    A,
    /// Conventional model is right.
    B,
}

/// Ground truth for one synthetic video, in normalized score space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub video_id: String,
    pub cluster: Cluster,
    pub split: Split,
    pub q_p: f64,
    pub q_l: f64,
    pub mos_norm: f64,
}

/// Conventional-model score file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub video_id: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub truth: Vec<FixtureTruth>,
}

pub const CONFIG_NAME: &str = "config.toml";

/// Settings written alongside the data. Trial counts are the protocol
/// defaults; the gate schedule is scaled to a few dozen training videos.
const FIXTURE_CONFIG: &str = r#"manifest = "manifest.csv"
seed = {seed}
preprocessing = "crop"
prompt = "level_related"
key_frames = 5
crops_per_frame = 10
trials_per_image = 20
max_in_flight = 4
trial_cache = "out/trials.jsonl"
scores = "out/scores.jsonl"
profile_report = "out/profile.json"
evaluation_report = "out/evaluation.txt"

[sampler]
kind = "nucleus"
p = 0.9

[backend]
kind = "mock"
input_size = 32

[backend.mock]
sigma = 0.7
nonsense_rate = 0.02
latent = "mock_latent.json"

[profile]
trials = [10, 50, 200]
resamples = 30

[ensemble]
embeddings_dir = "embeddings"
qp_scores = "qp.jsonl"
ql_scores = "ql.jsonl"
ql_min = 0.0
ql_max = 1.0
checkpoint = "out/gate.vqgm"
loss_log = "out/loss.jsonl"
predictions = "out/predictions.jsonl"
train_split = "train"
blend_splits = ["test"]
hidden = 128
lr = {lr}
lr_decay = 0.95
decay_every = 2
epochs = {epochs}
batch_size = 32

[analysis]
alpha_min = 0.6
delta_min = 0.1
report = "out/analysis.txt"
"#;

/// Learning rate and epoch count used by the fixture config.
pub const FIXTURE_LR: f64 = 1e-2;
pub const FIXTURE_EPOCHS: usize = 100;

fn split_for(i: usize) -> Split {
    if i % 10 >= 7 {
        Split::Test
    } else {
        Split::Train
    }
}

fn cluster_center(cluster: Cluster) -> f64 {
    match cluster {
        Cluster::A => 1.0,
        Cluster::B => -1.0,
    }
}

fn video_frames(seed: u64, video_id: &str, cluster: Cluster, quality: f64) -> Result<Vec<FrameImage>> {
    let base: [f64; 3] = match cluster {
        Cluster::A => [200.0, 120.0, 80.0],
        Cluster::B => [60.0, 110.0, 200.0],
    };
    let gain = 0.4 + 0.6 * quality;
    (0..FRAMES_PER_VIDEO)
        .map(|f| {
            let mut rng = StreamKey::new("fixture-frame", seed).str(video_id).u64(f as u64).rng();
            let mut pixels = Vec::with_capacity(FRAME_HEIGHT * FRAME_WIDTH * 3);
            for r in 0..FRAME_HEIGHT {
                for c in 0..FRAME_WIDTH {
                    let ramp = 20.0 * ((r + c + 3 * f) as f64 / (FRAME_HEIGHT + FRAME_WIDTH) as f64);
                    for b in base {
                        let v = b * gain + ramp + rng.random_range(-12.0..12.0);
                        pixels.push(v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            FrameImage::new(FRAME_HEIGHT, FRAME_WIDTH, pixels)
        })
        .collect()
}

fn embedding(seed: u64, video_id: &str, cluster: Cluster) -> Result<EmbeddingBlock> {
    let mut rng = StreamKey::new("fixture-embedding", seed).str(video_id).rng();
    let noise = Normal::new(0.0, EMBED_NOISE).expect("valid normal");
    let center = cluster_center(cluster);
    // the last channel is cluster-independent nuisance content
    let nuisance: f64 = rng.random_range(-1.0..1.0);
    let mut data = Vec::with_capacity(FRAMES_PER_VIDEO * GRID * GRID * DIM);
    for _ in 0..FRAMES_PER_VIDEO * GRID * GRID {
        for ch in 0..DIM {
            let mean = if ch == DIM - 1 { nuisance } else { center };
            data.push((mean + noise.sample(&mut rng)) as f32);
        }
    }
    EmbeddingBlock::new(video_id, FRAMES_PER_VIDEO, GRID, GRID, DIM, data)
}

/// Writes a complete synthetic dataset under `dir`: manifest, frames,
/// embeddings, both prediction files, mock latents, ground truth, and a
/// ready-to-run `config.toml`. Output is byte-identical for a given seed.
pub fn synth_fixture(dir: &Path, seed: u64, n_videos: usize) -> Result<Fixture> {
    if n_videos < 2 {
        return Err(Error::Config("fixture needs at least 2 videos".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = StreamKey::new("fixture", seed).u64(n_videos as u64).rng();
    let noise = Normal::new(0.0, PREDICTOR_NOISE).expect("valid normal");

    let mut rows = Vec::with_capacity(n_videos);
    let mut truth = Vec::with_capacity(n_videos);
    let mut qp_rows = Vec::with_capacity(n_videos);
    let mut ql_rows = Vec::with_capacity(n_videos);
    let mut latent = BTreeMap::new();

    for i in 0..n_videos {
        let video_id = format!("vid{i:03}");
        let cluster = if i % 2 == 0 { Cluster::A } else { Cluster::B };
        let split = split_for(i);
        let mos_norm: f64 = rng.random_range(0.05..0.95);
        let noisy = (mos_norm + noise.sample(&mut rng)).clamp(0.0, 1.0);
        let (q_p, q_l) = match cluster {
            Cluster::A => (mos_norm, noisy),
            Cluster::B => (noisy, mos_norm),
        };
        let q_p_raw = MLLM_MIN + (MLLM_MAX - MLLM_MIN) * q_p;

        let frame_dir = dir.join("frames").join(&video_id);
        fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        for (f, frame) in video_frames(seed, &video_id, cluster, q_p)?.iter().enumerate() {
            frame.save_png(&frame_dir.join(format!("frame_{f:03}.png")))?;
        }
        embedding(seed, &video_id, cluster)?.save(&dir.join("embeddings").join(format!("{video_id}.vqef")))?;

        rows.push((
            video_id.clone(),
            format!("frames/{video_id}"),
            mos_norm * MOS_MAX,
            0.0,
            MOS_MAX,
            split,
        ));
        qp_rows.push(VideoScore {
            video_id: video_id.clone(),
            q_p_raw,
            kept_trials: 1000,
            rejected_trials: 0,
        });
        ql_rows.push(ExternalScore {
            video_id: video_id.clone(),
            score: q_l,
        });
        latent.insert(video_id.clone(), q_p_raw);
        truth.push(FixtureTruth {
            video_id,
            cluster,
            split,
            q_p,
            q_l,
            mos_norm,
        });
    }

    write_atomic(&dir.join("manifest.csv"), render_manifest(&rows).as_bytes())?;
    write_jsonl(&dir.join("qp.jsonl"), &qp_rows)?;
    write_jsonl(&dir.join("ql.jsonl"), &ql_rows)?;
    write_jsonl(&dir.join("truth.jsonl"), &truth)?;
    write_atomic(
        &dir.join("mock_latent.json"),
        serde_json::to_string_pretty(&latent)?.as_bytes(),
    )?;
    let config = FIXTURE_CONFIG
        .replace("{seed}", &seed.to_string())
        .replace("{lr}", &format!("{FIXTURE_LR:e}"))
        .replace("{epochs}", &FIXTURE_EPOCHS.to_string());
    let config_path = dir.join(CONFIG_NAME);
    write_atomic(&config_path, config.as_bytes())?;

    Ok(Fixture {
        dir: dir.to_path_buf(),
        config: config_path,
        truth,
    })
}
