//! End-to-end stages driven by a [`RunConfig`]. Each stage reads the files
//! the previous one wrote and writes its own outputs atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_video, group_by_video, stddev_profile, ProfileSummary, VideoScore};
use crate::config::RunConfig;
use crate::ensemble::{
    analyze_weights, blend, load_embeddings, naive_blend, pool_features, train, GateModel, TrainedGate,
    TrainingRecord, WeightFinding,
};
use crate::error::{Error, Result};
use crate::fixture::ExternalScore;
use crate::gateway::{run_trial_batch, Backend, BackendError, BatchOutcome, TrialCache, TrialRecord};
use crate::io::{read_jsonl, write_atomic, write_jsonl};
use crate::manifest::{load_manifest, Manifest, Split, VideoManifestEntry};
use crate::metrics::MetricPair;
use crate::score::{normalize_score, PredictionTriple, MLLM_MAX, MLLM_MIN};

/// Runs missing trials with the backend named in the config.
pub fn run_trials(cfg: &RunConfig) -> Result<BatchOutcome> {
    let backend = cfg.build_backend()?;
    run_trials_with(cfg, backend.as_ref())
}

/// Runs missing trials against `backend` and saves the cache. When every
/// backend call failed to connect, the cache is still saved and the run
/// reports the backend as unreachable.
pub fn run_trials_with(cfg: &RunConfig, backend: &dyn Backend) -> Result<BatchOutcome> {
    let manifest = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let cache_path = cfg.resolve(&cfg.trial_cache);
    let mut cache = TrialCache::load(&cache_path)?;
    let outcome = run_trial_batch(&manifest, &cfg.batch_spec(), backend, &mut cache)?;
    cache.save(&cache_path)?;
    if outcome.backend_calls > 0 && outcome.unreachable_failures == outcome.backend_calls {
        return Err(Error::Backend(BackendError::Transport {
            attempts: cfg.backend.max_attempts,
            message: format!("all {} backend calls failed to connect", outcome.backend_calls),
        }));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub summaries: Vec<ProfileSummary>,
    /// Requested trial counts above what the cache holds per frame.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutput {
    pub scores: Vec<VideoScore>,
    pub profile: ProfileReport,
}

/// Averages cached trials per manifest video and profiles score stability.
pub fn aggregate(cfg: &RunConfig) -> Result<AggregateOutput> {
    let manifest = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let spec = cfg.batch_spec();
    let cache = TrialCache::load(&cfg.resolve(&cfg.trial_cache))?;
    let records: Vec<TrialRecord> = cache.records().filter(|r| spec.matches(r)).cloned().collect();
    let groups = group_by_video(&records);

    let mut scores = Vec::with_capacity(manifest.len());
    for entry in manifest.entries() {
        let group = groups.get(entry.video_id.as_str()).ok_or_else(|| Error::MissingVideo {
            video_id: entry.video_id.clone(),
            what: "trials".into(),
        })?;
        scores.push(aggregate_video(&entry.video_id, group)?);
    }
    write_jsonl(&cfg.resolve(&cfg.scores), &scores)?;

    let available = spec.trials_per_frame();
    let (usable, skipped): (Vec<usize>, Vec<usize>) =
        cfg.profile.trials.iter().partition(|&&t| t <= available);
    let summaries = stddev_profile(&records, &usable, cfg.profile.resamples, cfg.seed)?
        .iter()
        .map(|p| p.summary())
        .collect();
    let profile = ProfileReport { summaries, skipped };
    write_atomic(
        &cfg.resolve(&cfg.profile_report),
        format!("{}\n", serde_json::to_string_pretty(&profile)?).as_bytes(),
    )?;
    Ok(AggregateOutput { scores, profile })
}

/// MLLM scores as written by [`aggregate`], normalized to `[0, 1]`.
pub fn load_qp_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    read_jsonl::<VideoScore>(path)?
        .into_iter()
        .map(|s| Ok((s.video_id, normalize_score(s.q_p_raw, MLLM_MIN, MLLM_MAX)?)))
        .collect()
}

/// Conventional model scores, normalized from `[lo, hi]` to `[0, 1]`.
pub fn load_ql_scores(path: &Path, lo: f64, hi: f64) -> Result<BTreeMap<String, f64>> {
    read_jsonl::<ExternalScore>(path)?
        .into_iter()
        .map(|s| Ok((s.video_id, normalize_score(s.score, lo, hi)?)))
        .collect()
}

fn lookup(map: &BTreeMap<String, f64>, video_id: &str, what: &str) -> Result<f64> {
    map.get(video_id).copied().ok_or_else(|| Error::MissingVideo {
        video_id: video_id.to_string(),
        what: what.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub predictor: &'static str,
    pub metrics: MetricPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvaluationRow>,
}

impl Evaluation {
    pub fn get(&self, predictor: &str) -> Option<&MetricPair> {
        self.rows.iter().find(|r| r.predictor == predictor).map(|r| &r.metrics)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<12} {:>5}  SRCC / PLCC\n", "predictor", "n");
        for r in &self.rows {
            let _ = writeln!(out, "{:<12} {:>5}  {}", r.predictor, r.metrics.n, r.metrics);
        }
        out
    }
}

fn metric_row(predictor: &'static str, pred: &[f64], truth: &[f64]) -> Result<EvaluationRow> {
    Ok(EvaluationRow {
        predictor,
        metrics: MetricPair::compute(pred, truth)?,
    })
}

/// Correlates predictions with normalized MOS. With a predictions file
/// present, compares all four predictors on the videos it covers; otherwise
/// scores the aggregated MLLM output (plus the conventional model when its
/// score file exists) on every manifest video.
pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let predictions = cfg.resolve(&cfg.ensemble.predictions);
    let evaluation = if predictions.exists() {
        evaluate_triples(&read_jsonl::<PredictionTriple>(&predictions)?)?
    } else {
        evaluate_scores(cfg)?
    };
    write_atomic(&cfg.resolve(&cfg.evaluation_report), evaluation.render().as_bytes())?;
    Ok(evaluation)
}

pub fn evaluate_triples(triples: &[PredictionTriple]) -> Result<Evaluation> {
    for t in triples {
        t.validate()?;
    }
    let truth: Vec<f64> = triples.iter().map(|t| t.mos_norm).collect();
    let column = |f: fn(&PredictionTriple) -> Option<f64>, what: &str| -> Result<Vec<f64>> {
        triples
            .iter()
            .map(|t| {
                f(t).ok_or_else(|| Error::MissingVideo {
                    video_id: t.video_id.clone(),
                    what: what.to_string(),
                })
            })
            .collect()
    };
    let q_p: Vec<f64> = triples.iter().map(|t| t.q_p).collect();
    let q_l: Vec<f64> = triples.iter().map(|t| t.q_l).collect();
    let naive = column(|t| t.q_naive, "naive blend")?;
    let q_e = column(|t| t.q_e, "ensemble score")?;
    Ok(Evaluation {
        rows: vec![
            metric_row("mllm", &q_p, &truth)?,
            metric_row("conventional", &q_l, &truth)?,
            metric_row("naive", &naive, &truth)?,
            metric_row("ensemble", &q_e, &truth)?,
        ],
    })
}

fn evaluate_scores(cfg: &RunConfig) -> Result<Evaluation> {
    let manifest = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let q_p = load_qp_scores(&cfg.resolve(&cfg.scores))?;
    let ql_path = cfg.resolve(&cfg.ensemble.ql_scores);
    let q_l = if ql_path.exists() {
        Some(load_ql_scores(&ql_path, cfg.ensemble.ql_min, cfg.ensemble.ql_max)?)
    } else {
        None
    };
    let mut truth = Vec::new();
    let mut p = Vec::new();
    let mut l = Vec::new();
    for e in manifest.entries() {
        truth.push(e.mos_norm());
        p.push(lookup(&q_p, &e.video_id, "MLLM score")?);
        if let Some(q_l) = &q_l {
            l.push(lookup(q_l, &e.video_id, "conventional score")?);
        }
    }
    let mut rows = vec![metric_row("mllm", &p, &truth)?];
    if q_l.is_some() {
        rows.push(metric_row("conventional", &l, &truth)?);
    }
    Ok(Evaluation { rows })
}

/// Gate inputs and targets for `entries`.
pub fn training_records<'a>(
    cfg: &RunConfig,
    entries: impl IntoIterator<Item = &'a VideoManifestEntry>,
) -> Result<Vec<TrainingRecord>> {
    let e = &cfg.ensemble;
    let q_p = load_qp_scores(&cfg.resolve(&e.qp_scores))?;
    let q_l = load_ql_scores(&cfg.resolve(&e.ql_scores), e.ql_min, e.ql_max)?;
    let dir = cfg.resolve(&e.embeddings_dir);
    entries
        .into_iter()
        .map(|entry| {
            let id = &entry.video_id;
            let path = dir.join(format!("{id}.vqef"));
            if !path.exists() {
                return Err(Error::MissingVideo {
                    video_id: id.clone(),
                    what: format!("embedding {}", path.display()),
                });
            }
            Ok(TrainingRecord {
                video_id: id.clone(),
                features: pool_features(&load_embeddings(&path)?),
                q_p: lookup(&q_p, id, "MLLM score")?,
                q_l: lookup(&q_l, id, "conventional score")?,
                mos_norm: entry.mos_norm(),
            })
        })
        .collect()
}

/// Trains the gate on the training split, then saves the checkpoint and
/// per-epoch loss log.
pub fn train_ensemble(cfg: &RunConfig) -> Result<TrainedGate> {
    let manifest = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let records = training_records(cfg, manifest.split(cfg.ensemble.train_split))?;
    let trained = train(&records, &cfg.train_config())?;
    trained.model.save(&cfg.resolve(&cfg.ensemble.checkpoint))?;
    write_jsonl(&cfg.resolve(&cfg.ensemble.loss_log), &trained.epochs)?;
    Ok(trained)
}

fn blend_entries<'a>(cfg: &RunConfig, manifest: &'a Manifest) -> Vec<&'a VideoManifestEntry> {
    let splits: &[Split] = &cfg.ensemble.blend_splits;
    manifest
        .entries()
        .iter()
        .filter(|e| splits.is_empty() || splits.contains(&e.split))
        .collect()
}

/// Applies a trained gate to `records`.
pub fn predict(model: &GateModel, records: &[TrainingRecord]) -> Result<Vec<PredictionTriple>> {
    records
        .iter()
        .map(|r| {
            let alpha = model.predict_alpha(&r.features)?;
            Ok(PredictionTriple {
                video_id: r.video_id.clone(),
                q_p: r.q_p,
                q_l: r.q_l,
                alpha: Some(alpha),
                q_e: Some(blend(alpha, r.q_p, r.q_l)?),
                q_naive: Some(naive_blend(r.q_p, r.q_l)),
                mos_norm: r.mos_norm,
            })
        })
        .collect()
}

/// Writes blended predictions for the configured splits.
pub fn blend_predictions(cfg: &RunConfig) -> Result<Vec<PredictionTriple>> {
    let manifest = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let model = GateModel::load(&cfg.resolve(&cfg.ensemble.checkpoint))?;
    let records = training_records(cfg, blend_entries(cfg, &manifest))?;
    if records.is_empty() {
        return Err(Error::Empty("videos in the blend splits"));
    }
    let triples = predict(&model, &records)?;
    write_jsonl(&cfg.resolve(&cfg.ensemble.predictions), &triples)?;
    Ok(triples)
}

pub fn render_findings(findings: &[WeightFinding]) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>6} {:>6} {:>6}  direction\n",
        "video_id", "alpha", "q_p", "q_l", "|d|"
    );
    for f in findings {
        let direction = serde_json::to_value(f.direction)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<16} {:>6.3} {:>6.3} {:>6.3} {:>6.3}  {}",
            f.video_id, f.alpha, f.q_p, f.q_l, f.delta, direction
        );
    }
    out
}

/// Lists videos where the gate leaned on the MLLM against a disagreeing
/// conventional prediction.
pub fn analyze(cfg: &RunConfig) -> Result<Vec<WeightFinding>> {
    let triples = read_jsonl::<PredictionTriple>(&cfg.resolve(&cfg.ensemble.predictions))?;
    let findings = analyze_weights(&triples, cfg.analysis.alpha_min, cfg.analysis.delta_min)?;
    write_atomic(&cfg.resolve(&cfg.analysis.report), render_findings(&findings).as_bytes())?;
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Direction;
    use crate::metrics::MetricError;

    fn triple(id: &str, q_p: f64, q_l: f64, alpha: f64, mos: f64) -> PredictionTriple {
        PredictionTriple {
            video_id: id.into(),
            q_p,
            q_l,
            alpha: Some(alpha),
            q_e: Some(blend(alpha, q_p, q_l).unwrap()),
            q_naive: Some(naive_blend(q_p, q_l)),
            mos_norm: mos,
        }
    }

    #[test]
    fn evaluation_columns_and_format() {
        let t = vec![
            triple("a", 0.1, 0.2, 0.5, 0.1),
            triple("b", 0.5, 0.4, 0.5, 0.6),
            triple("c", 0.9, 0.7, 0.5, 0.8),
        ];
        let ev = evaluate_triples(&t).unwrap();
        let names: Vec<_> = ev.rows.iter().map(|r| r.predictor).collect();
        assert_eq!(names, ["mllm", "conventional", "naive", "ensemble"]);
        assert!((ev.get("mllm").unwrap().srcc - 1.0).abs() < 1e-12);
        let text = ev.render();
        assert!(text.starts_with("predictor"));
        assert!(text.contains("1.000 / "));
    }

    #[test]
    fn evaluation_errors() {
        let one = vec![triple("a", 0.1, 0.2, 0.5, 0.1)];
        assert!(matches!(evaluate_triples(&one), Err(Error::Metric(MetricError::TooFew(1)))));
        let flat = vec![triple("a", 0.3, 0.2, 0.5, 0.1), triple("b", 0.3, 0.4, 0.5, 0.6)];
        assert!(matches!(evaluate_triples(&flat), Err(Error::Metric(MetricError::ConstantInput))));
        let mut bad = triple("a", 0.1, 0.2, 0.5, 0.1);
        bad.q_e = Some(0.9);
        assert!(evaluate_triples(&[bad.clone(), bad]).is_err());
    }

    #[test]
    fn findings_table() {
        let f = analyze_weights(&[triple("x", 0.9, 0.2, 0.8, 0.9)], 0.6, 0.1).unwrap();
        assert_eq!(f[0].direction, Direction::Up);
        let table = render_findings(&f);
        assert_eq!(table.lines().nth(1).unwrap(), "x                 0.800  0.900  0.200  0.700  up");
    }
}
