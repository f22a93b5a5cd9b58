//! Model artifact persistence.

use cardcorr::artifact::{ModelArtifact, ModelBody, ModelKind, ARTIFACT_FORMAT_VERSION};
use cardcorr::dataset::samples_for;
use cardcorr::pipeline::{predict_samples, train, TrainConfig};
use cardcorr::synthgen::{generate, GenSpec};
use cardcorr::targets::{make_target, TargetMode};
use cardcorr::trace::{GroupMapping, TraceCorpus};
use cardcorr::Error;

fn corpus() -> TraceCorpus {
    generate(&GenSpec {
        n_executions: 50,
        seed: 8,
        ..GenSpec::default()
    })
    .unwrap()
}

fn trained(kind: ModelKind) -> (TraceCorpus, ModelArtifact) {
    let c = corpus();
    let cfg = TrainConfig {
        model: kind,
        ..TrainConfig::default()
    };
    let a = train(&c, &cfg, &GroupMapping::default()).unwrap();
    (c, a)
}

#[test]
fn every_kind_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let (c, a) = trained(kind);
        let path = dir.path().join(format!("{kind}.json"));
        a.save(&path).unwrap();
        let loaded = ModelArtifact::load(&path).unwrap();
        assert_eq!(loaded.to_json_bytes().unwrap(), std::fs::read(&path).unwrap(), "{kind}");
        assert_eq!(loaded.header.model, kind);
        let samples = samples_for(&c, &a.metadata.split.test, &GroupMapping::default());
        let before = predict_samples(&a, &samples).unwrap().log_factors;
        let after = predict_samples(&loaded, &samples).unwrap().log_factors;
        assert_eq!(before, after, "{kind}");
    }
}

#[test]
fn refset_stores_reference_matrix_verbatim() {
    let (c, a) = trained(ModelKind::Refset);
    let ModelBody::Refset(m) = &a.model else {
        panic!("expected a reference-set body");
    };
    let train_samples = samples_for(&c, &a.metadata.split.train, &GroupMapping::default());
    let schema = a.schema.as_ref().unwrap();
    assert_eq!(m.reference_features, schema.encode(&train_samples));
    let targets: Vec<f64> = train_samples
        .iter()
        .map(|s| make_target(s.est_rows, s.act(), TargetMode::Correction))
        .collect();
    assert_eq!(m.reference_targets, targets);
}

#[test]
fn future_format_version_is_rejected() {
    let (_, a) = trained(ModelKind::GroupScale);
    let mut v: serde_json::Value = serde_json::from_slice(&a.to_json_bytes().unwrap()).unwrap();
    v["header"]["format_version"] = serde_json::json!(ARTIFACT_FORMAT_VERSION + 1);
    let err = ModelArtifact::from_json_slice(&serde_json::to_vec(&v).unwrap()).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { found, .. } if found == ARTIFACT_FORMAT_VERSION + 1));
}

#[test]
fn header_and_body_kinds_must_agree() {
    let (_, a) = trained(ModelKind::Isotonic);
    let mut v: serde_json::Value = serde_json::from_slice(&a.to_json_bytes().unwrap()).unwrap();
    v["header"]["model"] = serde_json::json!("gbr");
    assert!(ModelArtifact::from_json_slice(&serde_json::to_vec(&v).unwrap()).is_err());
}

#[test]
fn fingerprint_ignores_wall_clock_fields() {
    let (_, a) = trained(ModelKind::Gbr);
    let mut b = a.clone();
    b.header.created_unix += 1000;
    b.metadata.train_seconds += 3.0;
    b.metadata.total_seconds += 3.0;
    assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    b.metadata.n_train_samples += 1;
    assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
}
