//! End-to-end train, predict and evaluate over a trace corpus.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::artifact::{creation_time, ArtifactHeader, KTrial, ModelArtifact, ModelBody, ModelKind, TrainingMetadata, ARTIFACT_FORMAT_VERSION};
use crate::baselines::{GroupScaleModel, IsotonicModel, LiteCardModel, DEFAULT_MIN_SUPPORT};
use crate::dataset::{
    extract_raw_features, samples_for, split_by_execution, FeatureMatrix, FeatureSchema, OperatorSample, SplitAssignment,
    SplitFractions,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, native_rows, node_qerrors, stats, CorrectedRows, EvalReport, TimingReport};
use crate::learners::{GbdtModel, GbdtParams, ReferenceSetModel, Weighting, ZeroClassifier};
use crate::policy::{apply_policy, calibrate_clamp, ClampBounds, ClampCalibration, CorrectedTrace, PolicyConfig};
use crate::quantile;
use crate::targets::{fit_clip_range, invert, make_target, rows_to_correction, TargetMode, TargetSpec};
use crate::trace::{GroupMapping, PlanTrace, TraceCorpus};

/// Everything `train` needs besides the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub split: SplitFractions,
    pub stratify_by_tag: bool,
    pub model: ModelKind,
    /// Number of selected features.
    pub k: usize,
    /// Choose `k` from `k_grid` by validation P90 Q-error instead of using `k`.
    pub tune_k: bool,
    /// Candidate `k` values; 0 stands for "all encoded features".
    pub k_grid: Vec<usize>,
    pub target_mode: TargetMode,
    /// IQR clipping of training targets. Off by default: when most targets
    /// are exactly zero the fences collapse to a single point.
    pub clip: bool,
    /// Also clip in direct mode; by default clipping applies to correction
    /// targets only.
    pub clip_direct: bool,
    pub gbdt: GbdtParams,
    pub refset_k: usize,
    pub refset_weighting: Weighting,
    pub litecard_min_support: usize,
    /// Also train the zero-output classifier used by the two-stage policy.
    pub zero_classifier: bool,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            split: SplitFractions::default(),
            stratify_by_tag: false,
            model: ModelKind::Gbr,
            k: 10,
            tune_k: false,
            k_grid: vec![4, 6, 8, 10, 12, 0],
            target_mode: TargetMode::Correction,
            clip: false,
            clip_direct: false,
            gbdt: GbdtParams::default(),
            refset_k: 8,
            refset_weighting: Weighting::InverseDistance,
            litecard_min_support: DEFAULT_MIN_SUPPORT,
            zero_classifier: false,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn clip_enabled(&self) -> bool {
        self.clip && (self.target_mode == TargetMode::Correction || self.clip_direct)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.gbdt.validate()?;
        self.policy.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.tune_k && self.k_grid.is_empty() {
            return Err(Error::invalid("tune_k needs a non-empty k_grid"));
        }
        if self.refset_k == 0 {
            return Err(Error::invalid("refset_k must be positive"));
        }
        Ok(())
    }

    fn hyperparams(&self) -> serde_json::Value {
        match self.model {
            ModelKind::Gbr => serde_json::json!({ "gbdt": self.gbdt, "k": self.k }),
            ModelKind::Refset => serde_json::json!({
                "k_neighbors": self.refset_k,
                "weighting": self.refset_weighting,
                "k": self.k,
            }),
            ModelKind::Litecard => serde_json::json!({ "min_support": self.litecard_min_support }),
            ModelKind::GroupScale | ModelKind::Isotonic => serde_json::json!({}),
        }
    }
}

struct Learned {
    schema: FeatureSchema,
    body: ModelBody,
    seconds: f64,
}

fn fit_learned(cfg: &TrainConfig, train: &[OperatorSample], y: &[f64], k: usize) -> Result<Learned> {
    let schema = FeatureSchema::fit(train, y, k)?;
    let x = schema.encode(train);
    let (body, seconds) = match cfg.model {
        ModelKind::Gbr => {
            let params = GbdtParams {
                seed: cfg.seed,
                ..cfg.gbdt
            };
            let f = GbdtModel::train(&x, y, params)?;
            (ModelBody::Gbr(f.model), f.seconds)
        }
        ModelKind::Refset => {
            let k = cfg.refset_k.min(x.n_rows);
            let f = ReferenceSetModel::setup(&x, y, k, cfg.refset_weighting)?;
            (ModelBody::Refset(f.model), f.seconds)
        }
        other => unreachable!("{other} does not use features"),
    };
    Ok(Learned { schema, body, seconds })
}

fn predict_body(body: &ModelBody, schema: Option<&FeatureSchema>, mode: TargetMode, samples: &[OperatorSample]) -> Result<Vec<f64>> {
    let encoded = |schema: Option<&FeatureSchema>| -> Result<FeatureMatrix> {
        Ok(schema.ok_or_else(|| Error::invalid("learned model without a feature schema"))?.encode(samples))
    };
    let to_corr = |raw: Vec<f64>| -> Vec<f64> {
        match mode {
            TargetMode::Correction => raw,
            TargetMode::Direct => raw
                .into_iter()
                .zip(samples)
                .map(|(p, s)| rows_to_correction(invert(p, s.est_rows, TargetMode::Direct), s.est_rows))
                .collect(),
        }
    };
    let from_rows = |f: &dyn Fn(&OperatorSample) -> f64| samples.iter().map(|s| rows_to_correction(f(s), s.est_rows)).collect();
    Ok(match body {
        ModelBody::Gbr(m) => to_corr(m.predict(&encoded(schema)?)?),
        ModelBody::Refset(m) => to_corr(m.predict(&encoded(schema)?)?),
        ModelBody::GroupScale(m) => from_rows(&|s| m.predict(s)),
        ModelBody::Isotonic(m) => from_rows(&|s| m.predict(s)),
        ModelBody::Litecard(m) => from_rows(&|s| m.predict(s)),
    })
}

/// Node-level P90 Q-error of log-factor predictions, before any policy.
fn raw_p90(samples: &[OperatorSample], log_factors: &[f64]) -> Result<f64> {
    let qs: Vec<f64> = samples
        .iter()
        .zip(log_factors)
        .map(|(s, p)| crate::eval::qerror(invert(*p, s.est_rows, TargetMode::Correction), s.act() as f64))
        .collect();
    quantile::quantile(&qs, 0.9)
}

/// Splits the corpus, fits features, targets and the configured model, and
/// calibrates the policy on the validation split.
pub fn train(corpus: &TraceCorpus, cfg: &TrainConfig, groups: &GroupMapping) -> Result<ModelArtifact> {
    let start = Instant::now();
    cfg.validate()?;
    let split = split_by_execution(corpus, cfg.split, cfg.seed, cfg.stratify_by_tag)?;
    let train_s = samples_for(corpus, &split.train, groups);
    let val_s = samples_for(corpus, &split.validation, groups);
    let test_n = samples_for(corpus, &split.test, groups).len();
    if train_s.is_empty() {
        return Err(Error::EmptyTraining);
    }
    info!(
        "split: {} / {} / {} executions, {} / {} / {} samples",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        train_s.len(),
        val_s.len(),
        test_n
    );

    let mut y: Vec<f64> = train_s.iter().map(|s| make_target(s.est_rows, s.act(), cfg.target_mode)).collect();
    let clip = if cfg.clip_enabled() {
        let c = fit_clip_range(&y)?;
        y.iter_mut().for_each(|v| *v = c.apply(*v));
        Some(c)
    } else {
        None
    };
    let target = TargetSpec {
        mode: cfg.target_mode,
        clip,
    };

    let mut k_trials = Vec::new();
    let (schema, body, train_seconds) = if cfg.model.uses_features() {
        let k = if cfg.tune_k {
            if val_s.is_empty() {
                return Err(Error::EmptyValidation);
            }
            let width = FeatureSchema::fit(&train_s, &y, 1)?.encoded_feature_count();
            let mut best: Option<KTrial> = None;
            for &cand in &cfg.k_grid {
                let k = if cand == 0 { width } else { cand.min(width) };
                let fitted = fit_learned(cfg, &train_s, &y, k)?;
                let preds = predict_body(&fitted.body, Some(&fitted.schema), cfg.target_mode, &val_s)?;
                let trial = KTrial {
                    k,
                    validation_p90: raw_p90(&val_s, &preds)?,
                };
                debug!("k={} validation P90 {:.4}", trial.k, trial.validation_p90);
                if best.is_none_or(|b| trial.validation_p90 < b.validation_p90) {
                    best = Some(trial);
                }
                k_trials.push(trial);
            }
            best.expect("grid is non-empty").k
        } else {
            cfg.k
        };
        let fitted = fit_learned(cfg, &train_s, &y, k)?;
        (Some(fitted.schema), fitted.body, fitted.seconds)
    } else {
        let t = Instant::now();
        let body = match cfg.model {
            ModelKind::GroupScale => ModelBody::GroupScale(GroupScaleModel::fit(&train_s)?),
            ModelKind::Isotonic => ModelBody::Isotonic(IsotonicModel::fit(&train_s)?),
            ModelKind::Litecard => ModelBody::Litecard(LiteCardModel::fit(&train_s, cfg.litecard_min_support)?),
            _ => unreachable!(),
        };
        (None, body, t.elapsed().as_secs_f64())
    };

    let zero_classifier = if cfg.zero_classifier || cfg.policy.two_stage.enabled {
        let schema = match &schema {
            Some(s) => s.clone(),
            None => FeatureSchema::fit(&train_s, &y, cfg.k)?,
        };
        let x = schema.encode(&train_s);
        let labels: Vec<bool> = train_s.iter().map(|s| s.act() == 0).collect();
        let params = GbdtParams {
            seed: cfg.seed,
            ..ZeroClassifier::default_params()
        };
        let zc = ZeroClassifier::train(&x, &labels, params, cfg.policy.two_stage.threshold)?.model;
        if schema.selected_features.len() != zc.n_features {
            return Err(Error::DimensionMismatch {
                expected: schema.selected_features.len(),
                actual: zc.n_features,
            });
        }
        Some((schema, zc))
    } else {
        None
    };
    // Baselines carry no schema of their own; borrow the classifier's.
    let (schema, zero_classifier) = match (schema, zero_classifier) {
        (Some(s), zc) => (Some(s), zc.map(|(_, z)| z)),
        (None, Some((s, z))) => (Some(s), Some(z)),
        (None, None) => (None, None),
    };

    let mut policy = cfg.policy;
    if let ClampCalibration::ValidationQuantile { p_low, p_high } = policy.clamp_calibration {
        let (lo, hi) = calibrate_clamp(&val_s, p_low, p_high)?;
        let bounds = ClampBounds::containing_one(lo, hi)?;
        info!("calibrated clamp [{:.4}, {:.4}]", bounds.c_min, bounds.c_max);
        policy.clamp = Some(bounds);
    }

    let mut artifact = ModelArtifact {
        header: ArtifactHeader {
            format_version: ARTIFACT_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: creation_time(),
            model: cfg.model,
            hyperparams: cfg.hyperparams(),
            seed: cfg.seed,
        },
        schema,
        target,
        policy,
        model: body,
        zero_classifier,
        metadata: TrainingMetadata {
            n_train_samples: train_s.len(),
            n_validation_samples: val_s.len(),
            n_test_samples: test_n,
            schema_summary: None,
            split,
            k_trials,
            train_seconds,
            total_seconds: 0.0,
        },
    };
    artifact.metadata.schema_summary = artifact.schema.as_ref().map(|s| s.summary());
    artifact.metadata.total_seconds = start.elapsed().as_secs_f64();
    artifact.check()?;
    Ok(artifact)
}

/// Per-sample log correction factors and optional zero probabilities.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub log_factors: Vec<f64>,
    pub zero_probs: Option<Vec<f64>>,
    pub seconds: f64,
}

pub fn predict_samples(artifact: &ModelArtifact, samples: &[OperatorSample]) -> Result<Predictions> {
    let start = Instant::now();
    let log_factors = predict_body(&artifact.model, artifact.schema.as_ref(), artifact.target.mode, samples)?;
    let zero_probs = match (&artifact.zero_classifier, &artifact.schema) {
        (Some(zc), Some(schema)) => Some(zc.predict(&schema.encode(samples))?),
        _ => None,
    };
    Ok(Predictions {
        log_factors,
        zero_probs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the model and the policy over every trace. Returns the corrected
/// traces and the inference wall-clock (model only, policy excluded).
pub fn correct_traces(
    artifact: &ModelArtifact,
    traces: &[&PlanTrace],
    policy: &PolicyConfig,
    groups: &GroupMapping,
) -> Result<(Vec<CorrectedTrace>, TimingReport)> {
    let per_trace: Vec<Vec<OperatorSample>> = traces.iter().map(|t| extract_raw_features(t, groups)).collect();
    let all: Vec<OperatorSample> = per_trace.iter().flatten().cloned().collect();
    let preds = predict_samples(artifact, &all)?;
    if policy.two_stage.enabled && preds.zero_probs.is_none() {
        return Err(Error::invalid("two-stage policy requested but the artifact has no zero classifier"));
    }
    let mut out = Vec::with_capacity(traces.len());
    let mut offset = 0;
    for (trace, samples) in traces.iter().zip(&per_trace) {
        let range = offset..offset + samples.len();
        offset = range.end;
        let keyed = |v: &[f64]| -> BTreeMap<String, f64> {
            samples.iter().zip(&v[range.clone()]).map(|(s, p)| (s.node_id.clone(), *p)).collect()
        };
        let factors = keyed(&preds.log_factors);
        let zeros = preds.zero_probs.as_deref().map(keyed);
        out.push(apply_policy(trace, &factors, policy, zeros.as_ref())?);
    }
    let setup = artifact.metadata.train_seconds;
    Ok((out, TimingReport::new(setup, preds.seconds, all.len())))
}

pub fn corrected_rows(corrected: &[CorrectedTrace]) -> CorrectedRows {
    corrected
        .iter()
        .map(|c| (c.trace.execution_id.clone(), c.corrected_rows.clone()))
        .collect()
}

/// Which executions an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// The test split recorded in the first artifact.
    #[default]
    Test,
    Validation,
    /// Every labeled execution in the corpus.
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(EvalSplit::Test),
            "validation" | "val" => Ok(EvalSplit::Validation),
            "all" => Ok(EvalSplit::All),
            _ => Err(Error::invalid(format!("unknown split {s:?}; expected test, validation or all"))),
        }
    }
}

fn select_traces<'a>(corpus: &'a TraceCorpus, split: EvalSplit, reference: Option<&SplitAssignment>) -> Result<Vec<&'a PlanTrace>> {
    let ids = match (split, reference) {
        (EvalSplit::All, _) => None,
        (EvalSplit::Test, Some(r)) => Some(&r.test),
        (EvalSplit::Validation, Some(r)) => Some(&r.validation),
        (_, None) => return Err(Error::invalid("a split other than `all` needs a model artifact")),
    };
    let traces: Vec<&PlanTrace> = corpus
        .traces
        .iter()
        .filter(|t| ids.is_none_or(|ids| ids.contains(&t.execution_id)))
        .collect();
    if let Some(ids) = ids {
        if traces.len() != ids.len() {
            return Err(Error::invalid(format!(
                "corpus holds {} of the {} executions in the recorded split",
                traces.len(),
                ids.len()
            )));
        }
    }
    if traces.is_empty() {
        return Err(Error::Empty);
    }
    Ok(traces)
}

/// Scores native estimates and every artifact on all samples of the chosen
/// split. `policy` overrides each artifact's stored policy when given.
pub fn evaluate_models(
    corpus: &TraceCorpus,
    artifacts: &[(String, &ModelArtifact)],
    split: EvalSplit,
    policy: Option<&PolicyConfig>,
    groups: &GroupMapping,
) -> Result<EvalReport> {
    let reference = artifacts.first().map(|(_, a)| &a.metadata.split);
    let traces = select_traces(corpus, split, reference)?;
    let native = native_rows(&traces);
    let native_report = evaluate("native", &traces, &native, None, groups, None)?;
    let native_stats = native_report.stats;
    let mut models = vec![native_report];
    for (name, artifact) in artifacts {
        let policy = policy.unwrap_or(&artifact.policy);
        let (corrected, timing) = correct_traces(artifact, &traces, policy, groups)?;
        models.push(evaluate(name, &traces, &corrected_rows(&corrected), Some(&native_stats), groups, Some(timing))?);
    }
    Ok(EvalReport {
        split: format!("{split:?}").to_lowercase(),
        n_executions: traces.len(),
        n_samples: native_stats.n,
        models,
    })
}

/// P90 node-level Q-error of `rows` over `traces`; a small helper for tuning
/// and tests.
pub fn p90_of(traces: &[&PlanTrace], rows: &CorrectedRows) -> Result<f64> {
    Ok(stats(&node_qerrors(traces, rows)?)?.p90)
}
