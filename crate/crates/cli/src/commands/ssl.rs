//! `phasessl ssl` — the five-step pipeline over every repeat, plus
//! aggregation.

use std::path::Path;

use phasessl_core::dataset::{load_manifest, make_splits, SplitAssignment};
use phasessl_core::error::Error as CoreError;
use phasessl_core::metrics::{aggregate, MetricsReport};
use phasessl_core::net::save_checkpoint;
use phasessl_core::ssl::{run_pipeline, MfSource, PipelineOutcome, PreparedDataset, Variant};

use crate::commands::write_json;
use crate::config::provenance;
use crate::{CmdResult, Ctx, Failure};

fn load_split_files(dir: &Path) -> Result<Vec<SplitAssignment>, Failure> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Failure::data(format!("read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("split_r") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::data(format!(
            "no split_r*.json files under {}",
            dir.display()
        )));
    }
    let mut splits = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::data(format!("read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::data(format!("parse {}: {e}", path.display())))?;
        splits.push(
            SplitAssignment::from_json(&value).map_err(|e| Failure::data(e.to_string()))?,
        );
    }
    Ok(splits)
}

fn missing_sidecar_hint(err: CoreError) -> Failure {
    let text = err.to_string();
    if text.contains(".mfi") {
        Failure::data(format!(
            "{text}; run `phasessl enhance` first or pass --enhance-on-the-fly"
        ))
    } else {
        Failure::data(text)
    }
}

fn metrics_json(report: &MetricsReport) -> serde_json::Value {
    serde_json::to_value(report).expect("report serializes")
}

fn outcome_json(outcome: &PipelineOutcome, variant: Variant) -> serde_json::Value {
    serde_json::json!({
        "repeat": outcome.repeat,
        "variant": variant.name(),
        "seeds": outcome.seeds,
        "pseudo_label_counts": outcome.pseudo_labels.counts_per_class,
        "k": outcome.pseudo_labels.k,
        "teacher": {
            "val": metrics_json(&outcome.teacher_metrics.val),
            "test": metrics_json(&outcome.teacher_metrics.test),
        },
        "student": {
            "val": metrics_json(&outcome.student_metrics.val),
            "test": metrics_json(&outcome.student_metrics.test),
        },
        "final": {
            "val": metrics_json(&outcome.final_metrics.val),
            "test": metrics_json(&outcome.final_metrics.test),
        },
    })
}

fn write_history(
    path: &Path,
    stages: &[(&str, &[phasessl_core::net::EpochRecord])],
) -> Result<(), Failure> {
    let mut text = String::new();
    for (stage, records) in stages {
        for r in *records {
            let mut line = serde_json::to_value(r).expect("record serializes");
            line.as_object_mut()
                .expect("object")
                .insert("stage".into(), serde_json::json!(stage));
            text.push_str(&line.to_string());
            text.push('\n');
        }
    }
    std::fs::write(path, text).map_err(|e| Failure::data(format!("write {}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    manifest_path: &Path,
    splits_dir: Option<&Path>,
    variant: Option<&str>,
    labeled_fraction: Option<f64>,
    mf_dir: Option<&Path>,
    enhance_on_the_fly: bool,
) -> CmdResult {
    let manifest = load_manifest(manifest_path).map_err(|e| Failure::data(e.to_string()))?;

    let mut pipeline_cfg = ctx.config.pipeline_config();
    if let Some(v) = variant {
        pipeline_cfg.variant = Variant::parse(v).map_err(|e| Failure::usage(e.to_string()))?;
    }

    let mut split_cfg = ctx.config.split.clone();
    split_cfg.seed = ctx.config.seed;
    if let Some(f) = labeled_fraction {
        split_cfg.labeled_fraction = f;
        split_cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    }
    let splits = match (splits_dir, labeled_fraction) {
        // a labeled-fraction override invalidates stored role assignments
        (Some(dir), None) => load_split_files(dir)?,
        _ => make_splits(&manifest, &split_cfg).map_err(|e| Failure::data(e.to_string()))?,
    };

    let enhance_cfg = phasessl_core::enhance::EnhanceConfig {
        filterbank: ctx.config.filterbank.clone(),
        regularizer: ctx.config.regularizer.clone(),
    };
    let mf_source = if enhance_on_the_fly {
        MfSource::Enhance(&enhance_cfg)
    } else if let Some(dir) = mf_dir {
        MfSource::SidecarDir(dir)
    } else {
        MfSource::Alongside
    };
    ctx.say("preparing dataset (loading images and multi-feature inputs)");
    let prepared = PreparedDataset::prepare(&manifest, &mf_source, ctx.config.net.input_dims)
        .map_err(missing_sidecar_hint)?;

    let mut teacher_tests = Vec::new();
    let mut student_tests = Vec::new();
    let mut final_tests = Vec::new();
    let mut final_vals = Vec::new();
    let mut per_repeat = Vec::new();
    for split in &splits {
        ctx.say(format!(
            "repeat {}: running {} pipeline",
            split.repeat,
            pipeline_cfg.variant.name()
        ));
        let outcome = run_pipeline(&prepared, split, &pipeline_cfg, split.repeat)
            .map_err(|e| Failure::data(e.to_string()))?;

        write_json(
            &ctx.out.join(format!("report_r{}.json", split.repeat)),
            &outcome_json(&outcome, pipeline_cfg.variant),
        )?;
        std::fs::write(
            ctx.out.join(format!("pseudo_labels_r{}.csv", split.repeat)),
            outcome.pseudo_labels.to_csv(),
        )
        .map_err(|e| Failure::data(e.to_string()))?;
        write_json(
            &ctx.out
                .join(format!("pseudo_labels_r{}.provenance.json", split.repeat)),
            &outcome.pseudo_labels.provenance_json(),
        )?;
        save_checkpoint(
            &outcome.teacher,
            ctx.out.join(format!("teacher_r{}.mfn", split.repeat)),
        )
        .map_err(|e| Failure::data(e.to_string()))?;
        save_checkpoint(
            &outcome.final_params,
            ctx.out.join(format!("final_r{}.mfn", split.repeat)),
        )
        .map_err(|e| Failure::data(e.to_string()))?;
        write_history(
            &ctx.out.join(format!("history_r{}.jsonl", split.repeat)),
            &[
                ("teacher", &outcome.teacher_history),
                ("student", &outcome.student_history),
                ("finetune", &outcome.finetune_history),
            ],
        )?;

        per_repeat.push(serde_json::json!({
            "repeat": split.repeat,
            "teacher_test_top1": outcome.teacher_metrics.test.top1,
            "student_test_top1": outcome.student_metrics.test.top1,
            "final_test_top1": outcome.final_metrics.test.top1,
            "final_val_top1": outcome.final_metrics.val.top1,
        }));
        teacher_tests.push(outcome.teacher_metrics.test.clone());
        student_tests.push(outcome.student_metrics.test.clone());
        final_vals.push(outcome.final_metrics.val.clone());
        final_tests.push(outcome.final_metrics.test.clone());
    }

    let agg = |reports: &[MetricsReport]| -> Result<serde_json::Value, Failure> {
        let a = aggregate(reports).map_err(|e| Failure::data(e.to_string()))?;
        Ok(serde_json::json!({
            "mean": metrics_json(&a.mean),
            "sd": metrics_json(&a.sd),
            "num_reports": a.num_reports,
        }))
    };
    write_json(
        &ctx.out.join("aggregate.json"),
        &serde_json::json!({
            "method": pipeline_cfg.variant.name(),
            "labeled_percent": split_cfg.labeled_fraction * 100.0,
            "num_repeats": splits.len(),
            "teacher_test": agg(&teacher_tests)?,
            "student_test": agg(&student_tests)?,
            "final_val": agg(&final_vals)?,
            "final_test": agg(&final_tests)?,
            "per_repeat": per_repeat,
            "config": serde_json::to_value(&ctx.config).expect("config serializes"),
            "provenance": provenance(&ctx.config, "ssl"),
        }),
    )?;
    ctx.say(format!(
        "pipeline complete; aggregate report at {}",
        ctx.out.join("aggregate.json").display()
    ));
    Ok(())
}
