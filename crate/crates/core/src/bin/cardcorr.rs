use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cardcorr::artifact::{ModelArtifact, ModelKind};
use cardcorr::config::{RunConfig, RunManifest};
use cardcorr::dataset::split_by_execution;
use cardcorr::eval::{format_factor, EvalReport};
use cardcorr::explain;
use cardcorr::pipeline::{self, EvalSplit};
use cardcorr::policy::{ClampBounds, ClampCalibration, PolicyConfig, Scope};
use cardcorr::synthgen;
use cardcorr::targets::TargetMode;
use cardcorr::trace::{TraceCorpus, TraceSource};

/// Residual cardinality correction: import plans, train, evaluate, predict.
///
/// Log verbosity follows the CARDCORR_LOG environment variable
/// (error, warn, info, debug, trace; default info).
#[derive(Parser, Debug)]
#[command(name = "cardcorr", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, training and generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Import EXPLAIN text files, manifest directories or corpus JSON files.
    Import {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        n_executions: Option<usize>,
    },
    /// Write the train/validation/test execution split.
    Split(CorpusArgs),
    /// Train a model artifact.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// gbr, refset, group_scale, isotonic or litecard.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum)]
        target_mode: Option<ModeArg>,
        /// Number of selected features.
        #[arg(long)]
        k: Option<usize>,
        /// Pick k on the validation split.
        #[arg(long)]
        tune_k: bool,
        /// IQR-clip training targets.
        #[arg(long)]
        clip: bool,
        /// Also train the zero-output classifier.
        #[arg(long)]
        zero_classifier: bool,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Evaluate native estimates and model artifacts on a split.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Model artifacts; repeat for several.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// test, validation or all.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Correct the estimates of a corpus with a model artifact.
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Print a saved evaluation report.
    Report { report: PathBuf },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus JSON file or EXPLAIN manifest directory; repeat to merge.
    #[arg(long = "corpus")]
    corpus: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Correction,
    Direct,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScopeArg {
    All,
    JoinOnly,
}

#[derive(Args, Debug, Default)]
struct PolicyArgs {
    #[arg(long, value_enum)]
    policy_scope: Option<ScopeArg>,
    /// `pLow,pHigh` (quantiles in (0,1), calibrated on validation) or
    /// `cMin,cMax` (fixed factors with cMin <= 1 <= cMax).
    #[arg(long)]
    clamp: Option<String>,
    /// Zero out nodes the zero classifier flags.
    #[arg(long)]
    two_stage: bool,
    /// Enforce operator semantics after correction.
    #[arg(long)]
    safe_inject: bool,
}

impl PolicyArgs {
    fn is_set(&self) -> bool {
        self.policy_scope.is_some() || self.clamp.is_some() || self.two_stage || self.safe_inject
    }

    fn apply(&self, policy: &mut PolicyConfig) -> Result<()> {
        if let Some(scope) = self.policy_scope {
            policy.scope = match scope {
                ScopeArg::All => Scope::All,
                ScopeArg::JoinOnly => Scope::JoinOnly,
            };
        }
        if let Some(spec) = &self.clamp {
            let (a, b) = parse_pair(spec)?;
            if b < 1.0 {
                policy.clamp_calibration = ClampCalibration::ValidationQuantile { p_low: a, p_high: b };
                policy.clamp_calibration.validate()?;
                policy.clamp = None;
            } else {
                policy.clamp = Some(ClampBounds::new(a, b)?);
                policy.clamp_calibration = ClampCalibration::Fixed;
            }
        }
        policy.two_stage.enabled |= self.two_stage;
        policy.safe_inject |= self.safe_inject;
        policy.validate()?;
        Ok(())
    }
}

fn parse_pair(spec: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [a, b] = parts.as_slice() else {
        bail!("--clamp expects two comma-separated numbers, got {spec:?}");
    };
    let a: f64 = a.parse().with_context(|| format!("--clamp: {a:?} is not a number"))?;
    let b: f64 = b.parse().with_context(|| format!("--clamp: {b:?} is not a number"))?;
    Ok((a, b))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    config.resolve_seed();
    Ok(config)
}

fn load_corpus(args: &CorpusArgs, config: &mut RunConfig) -> Result<TraceCorpus> {
    if !args.corpus.is_empty() {
        config.corpus = args.corpus.clone();
    }
    if config.corpus.is_empty() {
        bail!("no corpus given; pass --corpus or set `corpus` in the config");
    }
    config.check_inputs()?;
    merge(config.corpus.iter().map(TraceCorpus::load))
}

fn merge(parts: impl Iterator<Item = cardcorr::Result<TraceCorpus>>) -> Result<TraceCorpus> {
    let mut merged: Option<TraceCorpus> = None;
    for part in parts {
        let part = part?;
        match &mut merged {
            None => merged = Some(part),
            Some(m) => {
                m.provenance.extend(part.provenance);
                m.traces.extend(part.traces);
            }
        }
    }
    let merged = merged.context("nothing to load")?;
    merged.validate()?;
    Ok(merged)
}

fn out_path(config: &RunConfig, default: &str) -> PathBuf {
    config.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// `model.json` gets `model.manifest.json`; a directory gets `manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

fn display_paths(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn print_report(report: &EvalReport) -> std::io::Result<()> {
    let mut w = std::io::stdout().lock();
    writeln!(
        w,
        "split {}: {} executions, {} operator samples",
        report.split, report.n_executions, report.n_samples
    )?;
    writeln!(
        w,
        "{:<16} {:>10} {:>12} {:>12} {:>14} {:>8} {:>8}",
        "model", "median", "p90", "p99", "mean", "p90 x", "p99 x"
    )?;
    for m in &report.models {
        writeln!(
            w,
            "{:<16} {:>10.4} {:>12.2} {:>12.2} {:>14.2} {:>8} {:>8}",
            m.name,
            m.stats.median,
            m.stats.p90,
            m.stats.p99,
            m.stats.mean,
            format_factor(m.improvement.p90),
            format_factor(m.improvement.p99)
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Import { inputs } => {
            let mut parts = Vec::new();
            let mut plan_files = Vec::new();
            for input in inputs {
                if input.is_dir() {
                    parts.push(explain::import_dir(input));
                } else if input.extension().is_some_and(|e| e == "json") {
                    parts.push(TraceCorpus::load(input));
                } else {
                    plan_files.push(input.clone());
                }
            }
            if !plan_files.is_empty() {
                parts.push(explain::import_files(&plan_files));
            }
            let corpus = merge(parts.into_iter())?;
            let out = out_path(&config, "corpus.json");
            ensure_parent(&out)?;
            corpus.save(&out)?;
            let labeled = corpus.traces.iter().filter(|t| t.source == TraceSource::ExplainAnalyze).count();
            println!(
                "imported {} executions ({} labeled), {} operator samples -> {}",
                corpus.traces.len(),
                labeled,
                corpus.operator_count(),
                out.display()
            );
            let mut manifest = RunManifest::new("import", &config);
            manifest.inputs = display_paths(inputs);
            manifest.outputs = vec![out.display().to_string()];
            manifest.save(manifest_path(&out))?;
        }
        Command::Synth { n_executions } => {
            if let Some(n) = n_executions {
                config.synth.n_executions = *n;
            }
            let corpus = synthgen::generate(&config.synth)?;
            let out = out_path(&config, "corpus.json");
            ensure_parent(&out)?;
            corpus.save(&out)?;
            println!(
                "generated {} executions, {} operator samples -> {}",
                corpus.traces.len(),
                corpus.operator_count(),
                out.display()
            );
            let mut manifest = RunManifest::new("synth", &config);
            manifest.seed = config.synth.seed;
            manifest.outputs = vec![out.display().to_string()];
            manifest.save(manifest_path(&out))?;
        }
        Command::Split(args) => {
            let corpus = load_corpus(args, &mut config)?;
            let t = &config.train;
            let split = split_by_execution(&corpus, t.split, t.seed, t.stratify_by_tag)?;
            let out = out_path(&config, "split.json");
            ensure_parent(&out)?;
            let mut bytes = serde_json::to_vec_pretty(&split)?;
            bytes.push(b'\n');
            std::fs::write(&out, bytes).with_context(|| format!("cannot write {}", out.display()))?;
            println!(
                "split {} / {} / {} executions -> {}",
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                out.display()
            );
            let mut manifest = RunManifest::new("split", &config);
            manifest.inputs = display_paths(&config.corpus);
            manifest.outputs = vec![out.display().to_string()];
            manifest.save(manifest_path(&out))?;
        }
        Command::Train {
            corpus,
            model,
            target_mode,
            k,
            tune_k,
            clip,
            zero_classifier,
            policy,
        } => {
            let corpus = load_corpus(corpus, &mut config)?;
            let t = &mut config.train;
            if let Some(m) = model {
                t.model = m.parse::<ModelKind>()?;
            }
            if let Some(mode) = target_mode {
                t.target_mode = match mode {
                    ModeArg::Correction => TargetMode::Correction,
                    ModeArg::Direct => TargetMode::Direct,
                };
            }
            if let Some(k) = k {
                t.k = *k;
            }
            t.tune_k |= tune_k;
            t.clip |= clip;
            t.zero_classifier |= zero_classifier;
            policy.apply(&mut t.policy)?;
            let artifact = pipeline::train(&corpus, &config.train, &config.groups)?;
            let out = out_path(&config, "model.json");
            ensure_parent(&out)?;
            artifact.save(&out)?;
            let md = &artifact.metadata;
            println!(
                "trained {} on {} samples in {:.3}s (setup/training {:.3}s) -> {}",
                artifact.header.model,
                md.n_train_samples,
                md.total_seconds,
                md.train_seconds,
                out.display()
            );
            let mut manifest = RunManifest::new("train", &config);
            manifest.inputs = display_paths(&config.corpus);
            manifest.outputs = vec![out.display().to_string()];
            manifest.details = serde_json::json!({
                "split": md.split,
                "schema_summary": md.schema_summary,
                "selected_features": artifact.schema.as_ref().map(|s| &s.selected_features),
                "k_trials": md.k_trials,
                "policy": artifact.policy,
                "train_seconds": md.train_seconds,
                "total_seconds": md.total_seconds,
                "fingerprint": artifact.fingerprint()?,
            });
            manifest.save(manifest_path(&out))?;
        }
        Command::Eval {
            corpus,
            models,
            split,
            policy,
        } => {
            let corpus = load_corpus(corpus, &mut config)?;
            if !models.is_empty() {
                config.eval.models = models.clone();
            }
            if let Some(s) = split {
                config.eval.split = s.parse::<EvalSplit>()?;
            }
            config.check_inputs()?;
            let artifacts = config
                .eval
                .models
                .iter()
                .map(|p| ModelArtifact::load(p).map(|a| (p, a)))
                .collect::<cardcorr::Result<Vec<_>>>()?;
            let named: Vec<(String, &ModelArtifact)> = artifacts
                .iter()
                .map(|(p, a)| {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                    (format!("{}:{stem}", a.header.model), a)
                })
                .collect();
            let overrides: Vec<Option<PolicyConfig>> = named
                .iter()
                .map(|(_, a)| -> Result<Option<PolicyConfig>> {
                    if !policy.is_set() {
                        return Ok(None);
                    }
                    let mut p = a.policy;
                    policy.apply(&mut p)?;
                    if matches!(p.clamp_calibration, ClampCalibration::ValidationQuantile { .. }) && p.clamp.is_none() {
                        bail!("quantile clamps are calibrated at train time; pass cMin,cMax here");
                    }
                    Ok(Some(p))
                })
                .collect::<Result<_>>()?;
            let report = if overrides.iter().all(Option::is_none) {
                pipeline::evaluate_models(&corpus, &named, config.eval.split, None, &config.groups)?
            } else {
                // Each artifact carries its own base policy, so evaluate one
                // at a time and stitch the rows together behind native.
                let mut merged: Option<EvalReport> = None;
                for (one, p) in named.iter().zip(&overrides) {
                    let r = pipeline::evaluate_models(&corpus, std::slice::from_ref(one), config.eval.split, p.as_ref(), &config.groups)?;
                    match &mut merged {
                        None => merged = Some(r),
                        Some(m) => m.models.extend(r.models.into_iter().skip(1)),
                    }
                }
                merged.expect("at least one model when a policy flag is set")
            };
            let out = out_path(&config, "report");
            std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            report.write_json(&out.join("report.json"))?;
            let mut outputs = vec!["report.json".to_string()];
            outputs.extend(report.write_csv_tables(&out)?);
            print_report(&report)?;
            info!("wrote {} files to {}", outputs.len(), out.display());
            let mut manifest = RunManifest::new("eval", &config);
            manifest.inputs = display_paths(&config.corpus);
            manifest.inputs.extend(display_paths(&config.eval.models));
            manifest.outputs = outputs;
            manifest.save(out.join("manifest.json"))?;
        }
        Command::Predict { corpus, model, policy } => {
            let corpus = load_corpus(corpus, &mut config)?;
            let artifact = ModelArtifact::load(model)?;
            let mut p = artifact.policy;
            policy.apply(&mut p)?;
            let traces: Vec<_> = corpus.traces.iter().collect();
            let (corrected, timing) = pipeline::correct_traces(&artifact, &traces, &p, &config.groups)?;
            let out = out_path(&config, "corrected.json");
            ensure_parent(&out)?;
            let mut plans = TraceCorpus::new(corrected.iter().map(|c| c.corrected_plan()).collect());
            plans.provenance = corpus.provenance.clone();
            plans.provenance.insert("corrected_by".into(), serde_json::json!(artifact.fingerprint()?));
            plans.save(&out)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("corrected");
            let records_path = out.with_file_name(format!("{stem}.records.json"));
            let mut bytes = serde_json::to_vec_pretty(&corrected)?;
            bytes.push(b'\n');
            std::fs::write(&records_path, bytes).with_context(|| format!("cannot write {}", records_path.display()))?;
            // The corrected corpus must load back cleanly.
            TraceCorpus::load(&out).context("corrected corpus failed to reload")?;
            println!(
                "corrected {} executions ({} nodes, {:.1} us/node) -> {}",
                corrected.len(),
                timing.n_samples,
                timing.per_node_ms.unwrap_or(0.0) * 1e3,
                out.display()
            );
            let mut manifest = RunManifest::new("predict", &config);
            manifest.inputs = display_paths(&config.corpus);
            manifest.inputs.push(model.display().to_string());
            manifest.outputs = vec![out.display().to_string(), records_path.display().to_string()];
            manifest.details = serde_json::json!({ "policy": p });
            manifest.save(manifest_path(&out))?;
        }
        Command::Report { report } => {
            let bytes = std::fs::read(report).with_context(|| format!("cannot read {}", report.display()))?;
            let report: EvalReport = serde_json::from_slice(&bytes).context("not an evaluation report")?;
            print_report(&report)?;
        }
    }
    Ok(())
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARDCORR_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
