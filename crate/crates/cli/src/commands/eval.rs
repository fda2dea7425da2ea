//! `phasessl eval` — score a checkpoint on one role of a split.

use std::path::Path;

use phasessl_core::dataset::{load_manifest, Role, SplitAssignment};
use phasessl_core::net::load_checkpoint;
use phasessl_core::ssl::{evaluate, InputMode, MfSource, PreparedDataset};

use crate::commands::write_json;
use crate::config::provenance;
use crate::{CmdResult, Ctx, Failure};

fn parse_role(text: &str) -> Result<Role, Failure> {
    Role::ALL
        .iter()
        .copied()
        .find(|r| r.name() == text)
        .ok_or_else(|| Failure::usage(format!("unknown role `{text}`")))
}

fn parse_mode(text: &str) -> Result<InputMode, Failure> {
    match text {
        "both" => Ok(InputMode::Both),
        "cxr" => Ok(InputMode::CxrOnly),
        "mf" => Ok(InputMode::MfOnly),
        other => Err(Failure::usage(format!(
            "unknown mode `{other}` (expected both, cxr or mf)"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    checkpoint: &Path,
    manifest_path: &Path,
    splits: &Path,
    role: &str,
    mode: &str,
    mf_dir: Option<&Path>,
    enhance_on_the_fly: bool,
) -> CmdResult {
    let role = parse_role(role)?;
    let mode = parse_mode(mode)?;
    let params = load_checkpoint(checkpoint).map_err(|e| Failure::data(e.to_string()))?;
    let manifest = load_manifest(manifest_path).map_err(|e| Failure::data(e.to_string()))?;
    let text = std::fs::read_to_string(splits)
        .map_err(|e| Failure::data(format!("read {}: {e}", splits.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::data(e.to_string()))?;
    let split = SplitAssignment::from_json(&value).map_err(|e| Failure::data(e.to_string()))?;

    let ids = split.ids(role);
    if ids.is_empty() {
        return Err(Failure::data(format!(
            "role `{}` has no samples in {}",
            role.name(),
            splits.display()
        )));
    }

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
    let prepared =
        PreparedDataset::prepare_subset(&manifest, &mf_source, params.config.input_dims, ids)
            .map_err(|e| Failure::data(e.to_string()))?;
    let examples = prepared
        .labeled_view(&split, role)
        .map_err(|e| Failure::data(e.to_string()))?;
    let report = evaluate(&params, &examples, mode, prepared.num_classes, ctx.config.seed)
        .map_err(|e| Failure::data(e.to_string()))?;

    let out_path = ctx.out.join(format!("eval_{}.json", role.name()));
    write_json(
        &out_path,
        &serde_json::json!({
            "checkpoint": checkpoint,
            "role": role.name(),
            "mode": mode,
            "metrics": serde_json::to_value(&report).expect("report serializes"),
            "provenance": provenance(&ctx.config, "eval"),
        }),
    )?;
    ctx.say(format!(
        "top-1 {:.2}% on role `{}`; report at {}",
        report.top1,
        role.name(),
        out_path.display()
    ));
    Ok(())
}
