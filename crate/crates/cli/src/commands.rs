use std::path::Path;

use anyhow::Context;
use cascade_core::analysis::operating_point_at_accuracy;
use cascade_core::engine::Mode;
use cascade_core::ingest::{write_bundle, BundlePaths};
use cascade_core::plot::{render_svg, Chart, Guide, Marker, Series};
use cascade_core::{
    contribution, improvement_report, run, summarize, sweep, threshold_grid, tune, CascadeConfig,
    CascadeEngine, CostSettings, CurvePoint, EvaluationBundle, HeuristicOptions, Policy,
    SynthModel, SynthSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output::{contribution_table, curve_csv, digest, json, jsonl, InputDigest, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Validate,
    Simulate,
    Sweep,
    Analyze,
    Tune,
    Synth,
    Plot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Kind,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Runs `kind` with `config`, writing its outputs and a manifest to `out`.
pub fn execute(kind: Kind, config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let mut sink = Sink::new(out);
    let inputs = match kind {
        Kind::Validate => validate(config, &mut sink)?,
        Kind::Simulate => simulate(config, &mut sink)?,
        Kind::Sweep => sweep_cmd(config, &mut sink)?,
        Kind::Analyze => analyze(config, &mut sink)?,
        Kind::Tune => tune_cmd(config, &mut sink)?,
        Kind::Synth => synth(config, &mut sink)?,
        Kind::Plot => plot(config, &mut sink)?,
    };
    let manifest = Manifest {
        tool: "cascade".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: kind,
        config: config.clone(),
        inputs,
        outputs: sink.into_written(),
    };
    cascade_core::ingest::write_atomic(&out.join(MANIFEST), json(&manifest).as_bytes())?;
    Ok(())
}

pub fn rerun(manifest_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))
        .map_err(Failure::Input)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", manifest_path.display()))
        .map_err(Failure::Input)?;
    for input in &manifest.inputs {
        let now = digest(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Failure::Input(anyhow::anyhow!(
                "{} changed since the manifest was written (sha256 {} != {})",
                input.path.display(),
                now.sha256,
                input.sha256
            )));
        }
    }
    execute(manifest.command, &manifest.config, out)
}

struct Loaded {
    bundle: EvaluationBundle,
    inputs: Vec<InputDigest>,
}

fn bundle_paths(config: &RunConfig) -> Result<BundlePaths, Failure> {
    if let Some(dir) = &config.bundle {
        return Ok(BundlePaths::in_dir(dir)?);
    }
    match (&config.instances, &config.predictions, &config.profiles) {
        (Some(instances), Some(predictions), Some(profiles)) => Ok(BundlePaths {
            instances: instances.clone(),
            predictions: predictions.clone(),
            profiles: profiles.clone(),
        }),
        _ => Err(Failure::config(
            "no input: pass --bundle DIR or all of --instances, --preds and --profiles",
        )),
    }
}

fn load_from(paths: &BundlePaths, config: &RunConfig) -> Result<Loaded, Failure> {
    let mut bundle = paths.load()?;
    if let Some(per_instance) = config.per_instance_cost {
        bundle = bundle.with_cost_settings(CostSettings {
            per_instance_cost: per_instance,
            ..bundle.cost_settings()
        })?;
    }
    if let Some(models) = &config.models {
        bundle = bundle
            .select_models(models)
            .map_err(|e| Failure::Config(e.into()))?;
    }
    let inputs = paths.all().map(|p| digest(p)).collect::<Result<_, _>>()?;
    Ok(Loaded { bundle, inputs })
}

fn load(config: &RunConfig) -> Result<Loaded, Failure> {
    load_from(&bundle_paths(config)?, config)
}

fn heuristic(config: &RunConfig) -> HeuristicOptions {
    HeuristicOptions {
        max_length: config.heuristic_max_length,
        invert: config.heuristic_invert.unwrap_or(false),
    }
}

fn cascade_config(config: &RunConfig, bundle: &EvaluationBundle, policy: Policy) -> CascadeConfig {
    CascadeConfig {
        model_order: CascadeConfig::all_models(bundle),
        policy,
        mode: config.mode(),
        thresholds: config.thresholds.clone().unwrap_or_default(),
        skip_thresholds: config.bands.clone().unwrap_or_default(),
        seed: config.seed(),
        heuristic: heuristic(config),
    }
}

fn engine<'a>(
    bundle: &'a EvaluationBundle,
    cc: &CascadeConfig,
) -> Result<CascadeEngine<'a>, Failure> {
    if cc.mode == Mode::Routing && bundle.model_count() < 3 {
        return Err(Failure::config(format!(
            "routing mode needs at least 3 prediction files, got {}",
            bundle.model_count()
        )));
    }
    Ok(CascadeEngine::from_config(bundle, cc)?)
}

fn validate(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let Loaded { bundle, inputs } = load(config)?;
    let models: Vec<_> = (0..bundle.model_count())
        .map(|m| {
            let p = &bundle.profiles()[m];
            json!({
                "model_id": p.model_id,
                "order_index": p.order_index,
                "accuracy": bundle.standalone_accuracy(m),
                "mean_cost_flops": bundle.standalone_cost(m),
            })
        })
        .collect();
    for m in &models {
        println!(
            "{:<12} accuracy {:>7.3}%  mean cost {:.4e} FLOPs",
            m["model_id"].as_str().unwrap_or_default(),
            m["accuracy"].as_f64().unwrap_or_default(),
            m["mean_cost_flops"].as_f64().unwrap_or_default()
        );
    }
    println!(
        "{} instances, {} labels: ok",
        bundle.len(),
        bundle.label_count()
    );
    sink.put_json(
        "validation.json",
        &json!({
            "instance_count": bundle.len(),
            "label_count": bundle.label_count(),
            "cost_settings": bundle.cost_settings(),
            "models": models,
        }),
    )?;
    Ok(inputs)
}

fn simulate(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let Loaded { bundle, inputs } = load(config)?;
    if config.thresholds.is_none() {
        return Err(Failure::config("simulate needs --thresholds"));
    }
    let cc = cascade_config(config, &bundle, config.policy());
    engine(&bundle, &cc)?;
    let summary = run(&bundle, &cc)?;
    summary.check_invariants(&bundle, &cc)?;
    sink.put("outcomes.jsonl", jsonl(&summary.outcomes).as_bytes())?;
    sink.put_json(
        "summary.json",
        &json!({
            "policy": cc.policy,
            "mode": cc.mode,
            "models": cc.model_order,
            "thresholds": cc.thresholds,
            "skip_thresholds": cc.skip_thresholds,
            "instance_count": bundle.len(),
            "mean_cost_flops": summary.mean_cost,
            "accuracy_pct": summary.accuracy,
        }),
    )?;
    println!(
        "accuracy {:.3}%  mean cost {:.4e} FLOPs over {} instances",
        summary.accuracy,
        summary.mean_cost,
        bundle.len()
    );
    Ok(inputs)
}

struct Curve {
    points: Vec<CurvePoint>,
    summary: cascade_core::CurveSummary,
}

fn curve(config: &RunConfig, bundle: &EvaluationBundle, policy: Policy) -> Result<Curve, Failure> {
    let cc = cascade_config(config, bundle, policy);
    let e = engine(bundle, &cc)?;
    let grid = threshold_grid(&e, config.grid_points())?;
    let points = sweep(&e, cc.mode, &grid, config.grid_cap())?;
    let summary = summarize(&e, cc.mode, &points)?;
    Ok(Curve { points, summary })
}

fn sweep_cmd(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let Loaded { bundle, inputs } = load(config)?;
    let Curve { points, summary } = curve(config, &bundle, config.policy())?;
    let stages = bundle.model_count() - 1;
    let routing = config.mode() == Mode::Routing;
    sink.put("curve.csv", &curve_csv(&points, stages, routing)?)?;
    sink.put(
        "frontier.csv",
        &curve_csv(&summary.points, stages, routing)?,
    )?;
    let improvement = improvement_report(&summary, bundle.profiles());
    sink.put_json(
        "summary.json",
        &json!({
            "policy": summary.policy,
            "mode": summary.mode,
            "models": CascadeConfig::all_models(&bundle),
            "grid_points": config.grid_points(),
            "evaluated_points": points.len(),
            "auc": summary.auc,
            "max_accuracy": summary.max_accuracy,
            "max_accuracy_gain": summary.max_accuracy_gain,
            "matched": summary.matched,
            "improvement": improvement,
            "frontier": summary.points,
        }),
    )?;
    println!(
        "{} {}: {} points, {} on frontier, AUC {:.4}, max accuracy {:.3}% ({:+.3} vs largest)",
        summary.policy,
        summary.mode,
        points.len(),
        summary.points.len(),
        summary.auc,
        summary.max_accuracy,
        summary.max_accuracy_gain
    );
    for m in &summary.matched {
        match m.cascade_cost_at_match {
            Some(c) => println!(
                "  matches {} ({:.3}%) at {:.4e} FLOPs, {:.2}% cheaper",
                m.model_id,
                m.standalone_accuracy,
                c,
                m.improvement_percent.unwrap_or_default()
            ),
            None => println!(
                "  never reaches {} ({:.3}%)",
                m.model_id, m.standalone_accuracy
            ),
        }
    }
    Ok(inputs)
}

fn analyze(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let Loaded { bundle, inputs } = load(config)?;
    let mut cc = cascade_config(config, &bundle, config.policy());
    let source = if config.thresholds.is_some() {
        "given"
    } else {
        let Curve { summary, .. } = curve(config, &bundle, cc.policy)?;
        let target = bundle.standalone_accuracy(bundle.model_count() - 1);
        let point = operating_point_at_accuracy(&summary.points, target)
            .or(summary.points.last())
            .ok_or_else(|| Failure::Invariant(anyhow::anyhow!("empty frontier")))?;
        cc.thresholds = point.thresholds.clone();
        cc.skip_thresholds = point.skip_thresholds.clone();
        "matched"
    };
    engine(&bundle, &cc)?;
    let summary = run(&bundle, &cc)?;
    summary.check_invariants(&bundle, &cc)?;
    let report = contribution(&summary.outcomes, &bundle, &cc.model_order)?;
    if report.correct_total() != summary.outcomes.iter().filter(|o| o.correct).count() {
        return Err(Failure::Invariant(anyhow::anyhow!(
            "per-model correct counts do not add up to the cascade's"
        )));
    }
    let table = contribution_table(&report);
    sink.put("outcomes.jsonl", jsonl(&summary.outcomes).as_bytes())?;
    sink.put_json(
        "contribution.json",
        &json!({
            "policy": cc.policy,
            "mode": cc.mode,
            "thresholds_source": source,
            "thresholds": cc.thresholds,
            "skip_thresholds": cc.skip_thresholds,
            "mean_cost_flops": summary.mean_cost,
            "report": report,
        }),
    )?;
    sink.put("contribution.txt", table.as_bytes())?;
    print!("{table}");
    Ok(inputs)
}

fn tune_cmd(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let budget = config
        .budget
        .ok_or_else(|| Failure::config("tune needs --budget"))?;
    let Loaded { bundle, mut inputs } = load(config)?;
    let test = match &config.test_bundle {
        Some(dir) => {
            let loaded = load_from(&BundlePaths::in_dir(dir)?, config)?;
            inputs.extend(loaded.inputs);
            Some(loaded.bundle)
        }
        None => None,
    };
    let cc = cascade_config(config, &bundle, config.policy());
    let e = engine(&bundle, &cc)?;
    let grid = threshold_grid(&e, config.grid_points())?;
    let tuned = tune(
        &bundle,
        test.as_ref(),
        &cc,
        budget,
        &grid,
        config.grid_cap(),
    )?;
    if tuned.validation_cost > budget {
        return Err(Failure::Invariant(anyhow::anyhow!(
            "tuned point exceeds the budget"
        )));
    }
    sink.put_json("tuned.json", &tuned)?;
    println!(
        "thresholds {:?}: validation {:.3}% at {:.4e} FLOPs (budget {:.4e})",
        tuned.thresholds, tuned.validation_accuracy, tuned.validation_cost, budget
    );
    if let (Some(a), Some(c)) = (tuned.test_accuracy, tuned.test_cost) {
        println!("test {a:.3}% at {c:.4e} FLOPs");
    }
    Ok(inputs)
}

fn default_variants(k: usize) -> Vec<String> {
    let all = ["mini", "medium", "base", "large"];
    let names: &[&str] = match k {
        1 => &["base"],
        2 => &["medium", "base"],
        3 => &["mini", "medium", "base"],
        _ => &all,
    };
    names.iter().map(|s| s.to_string()).collect()
}

fn synth(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let s = config.synth.clone().unwrap_or_default();
    let targets = s.targets.unwrap_or_else(|| vec![0.75, 0.85]);
    let variants = s
        .variants
        .unwrap_or_else(|| default_variants(targets.len()));
    if variants.len() != targets.len() {
        return Err(Failure::config(format!(
            "{} variants but {} target accuracies",
            variants.len(),
            targets.len()
        )));
    }
    let sharpness = s.sharpness.unwrap_or(4.0);
    let models = variants
        .iter()
        .zip(&targets)
        .map(|(v, &t)| {
            SynthModel::bert(v, t, sharpness).ok_or_else(|| {
                Failure::config(format!("unknown variant `{v}` (mini, medium, base, large)"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SynthSpec {
        n_instances: s.n.unwrap_or(1000),
        label_count: s.labels.unwrap_or(3),
        seq_len: s.seq_len.unwrap_or(120),
        min_input_length: 50.min(s.seq_len.unwrap_or(120)),
        churn: s.churn.unwrap_or(0.05),
        seed: config.seed(),
        models,
    };
    let bundle = cascade_core::generate(&spec)?;
    let paths = write_bundle(&bundle, sink.dir())?;
    for p in paths.all() {
        if let Some(name) = p.file_name() {
            sink.record(&name.to_string_lossy());
        }
    }
    for m in 0..bundle.model_count() {
        println!(
            "{:<8} accuracy {:>7.3}%",
            bundle.profiles()[m].model_id,
            bundle.standalone_accuracy(m)
        );
    }
    println!(
        "wrote {} instances to {}",
        bundle.len(),
        sink.dir().display()
    );
    Ok(Vec::new())
}

fn plot(config: &RunConfig, sink: &mut Sink) -> Result<Vec<InputDigest>, Failure> {
    let Loaded { bundle, inputs } = load(config)?;
    let policies = config
        .policies
        .clone()
        .unwrap_or_else(|| vec![Policy::MaxProb, Policy::Random]);
    let mut chart = Chart {
        title: format!("accuracy vs. cost ({} cascade)", config.mode()),
        x_label: "mean FLOPs per instance".into(),
        y_label: "accuracy (%)".into(),
        ..Chart::default()
    };
    for policy in policies {
        let Curve { summary, .. } = curve(config, &bundle, policy)?;
        chart.series.push(Series {
            label: format!("{policy} (AUC {:.2})", summary.auc),
            points: summary
                .points
                .iter()
                .map(|p| (p.mean_cost, p.accuracy))
                .collect(),
        });
    }
    for m in 0..bundle.model_count() {
        let id = &bundle.profiles()[m].model_id;
        let accuracy = bundle.standalone_accuracy(m);
        chart.markers.push(Marker {
            label: id.clone(),
            cost: bundle.standalone_cost(m),
            accuracy,
        });
        chart.guides.push(Guide {
            label: format!("{id} accuracy"),
            accuracy,
        });
    }
    sink.put("curve.svg", render_svg(&chart).as_bytes())?;
    println!("wrote {}", sink.dir().join("curve.svg").display());
    Ok(inputs)
}
