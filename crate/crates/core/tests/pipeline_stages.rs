use std::fs;

use shortvqa::config::RunConfig;
use shortvqa::fixture::synth_fixture;
use shortvqa::gateway::{Backend, BackendError, InferRequest};
use shortvqa::io::read_jsonl;
use shortvqa::metrics::MetricError;
use shortvqa::pipeline;
use shortvqa::score::PredictionTriple;
use shortvqa::Error;

fn small(dir: &std::path::Path, extra: &[&str]) -> RunConfig {
    let fx = synth_fixture(dir, 11, 10).unwrap();
    let mut overrides = vec!["crops_per_frame=2".to_string(), "trials_per_image=5".to_string(), "profile.trials=[2,5,20]".to_string()];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(&fx.config, &overrides).unwrap()
}

#[test]
fn aggregate_skips_profile_counts_beyond_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &[]);
    let outcome = pipeline::run_trials(&cfg).unwrap();
    assert_eq!(outcome.new_trials, 10 * 5 * 2 * 5);
    let out = pipeline::aggregate(&cfg).unwrap();
    assert_eq!(out.scores.len(), 10);
    assert!(out.scores.iter().all(|s| s.kept_trials + s.rejected_trials == 50));
    let counts: Vec<usize> = out.profile.summaries.iter().map(|s| s.trials_per_frame).collect();
    assert_eq!(counts, [2, 5]);
    assert_eq!(out.profile.skipped, [20]);
    // a second run finds nothing to do
    assert_eq!(pipeline::run_trials(&cfg).unwrap().backend_calls, 0);
}

#[test]
fn mllm_scores_track_latent_quality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &["trials_per_image=20"]);
    pipeline::run_trials(&cfg).unwrap();
    pipeline::aggregate(&cfg).unwrap();
    let ev = pipeline::evaluate(&cfg).unwrap();
    assert_eq!(ev.rows.len(), 2);
    assert!(ev.get("mllm").unwrap().srcc > 0.5, "{}", ev.render());
    let report = fs::read_to_string(dir.path().join("out/evaluation.txt")).unwrap();
    assert!(report.contains("SRCC / PLCC"));
}

#[test]
fn aggregate_requires_every_manifest_video() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &[]);
    pipeline::run_trials(&cfg).unwrap();
    // trials were run with two crops; asking for resize finds no matching records
    let resize = RunConfig {
        preprocessing: shortvqa::gateway::Preprocessing::Resize,
        ..cfg
    };
    assert!(matches!(pipeline::aggregate(&resize), Err(Error::MissingVideo { .. })));
}

struct Down;

impl Backend for Down {
    fn input_size(&self) -> usize {
        32
    }

    fn infer(&self, _: &InferRequest<'_>) -> Result<String, BackendError> {
        Err(BackendError::Transport {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn unreachable_backend_saves_failures_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &[]);
    let err = pipeline::run_trials_with(&cfg, &Down).unwrap_err();
    assert!(matches!(err, Error::Backend(ref e) if e.is_unreachable()));
    let cached: Vec<shortvqa::gateway::TrialRecord> = read_jsonl(&dir.path().join("out/trials.jsonl")).unwrap();
    assert_eq!(cached.len(), 500);
    // failed trials are retried on the next run
    assert_eq!(pipeline::run_trials(&cfg).unwrap().backend_calls, 500);
}

#[test]
fn ensemble_stages_write_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &["ensemble.blend_splits=[]"]);
    let trained = pipeline::train_ensemble(&cfg).unwrap();
    assert_eq!(trained.epochs.len(), cfg.ensemble.epochs);
    let log: Vec<shortvqa::ensemble::EpochLog> = read_jsonl(&dir.path().join("out/loss.jsonl")).unwrap();
    assert_eq!(log, trained.epochs);

    let triples = pipeline::blend_predictions(&cfg).unwrap();
    assert_eq!(triples.len(), 10);
    let reread: Vec<PredictionTriple> = read_jsonl(&dir.path().join("out/predictions.jsonl")).unwrap();
    assert_eq!(reread, triples);
    for t in &triples {
        t.validate().unwrap();
    }
    assert_eq!(pipeline::evaluate(&cfg).unwrap().rows.len(), 4);

    let findings = pipeline::analyze(&cfg).unwrap();
    let report = fs::read_to_string(dir.path().join("out/analysis.txt")).unwrap();
    assert_eq!(report.lines().count(), findings.len() + 1);
    assert!(findings.windows(2).all(|w| w[0].salience() >= w[1].salience()));
}

#[test]
fn constant_predictions_are_a_metric_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &[]);
    let path = dir.path().join("out/predictions.jsonl");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let line = |id: &str, mos: f64| {
        format!(r#"{{"video_id":"{id}","q_p":0.5,"q_l":0.5,"alpha":0.5,"q_e":0.5,"q_naive":0.5,"mos_norm":{mos}}}"#)
    };
    fs::write(&path, format!("{}\n{}\n", line("a", 0.1), line("b", 0.9))).unwrap();
    assert!(matches!(
        pipeline::evaluate(&cfg),
        Err(Error::Metric(MetricError::ConstantInput))
    ));
}

#[test]
fn missing_embedding_is_reported_by_video() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), &[]);
    fs::remove_file(dir.path().join("embeddings/vid000.vqef")).unwrap();
    match pipeline::train_ensemble(&cfg) {
        Err(Error::MissingVideo { video_id, .. }) => assert_eq!(video_id, "vid000"),
        other => panic!("{other:?}"),
    }
}
