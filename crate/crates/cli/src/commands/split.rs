//! `phasessl split` — one split JSON per repeat.

use std::path::Path;

use phasessl_core::dataset::{load_manifest, make_splits};

use crate::commands::write_json;
use crate::config::provenance;
use crate::{CmdResult, Ctx, Failure};

pub fn run(ctx: &Ctx, manifest_path: &Path) -> CmdResult {
    let manifest = load_manifest(manifest_path).map_err(|e| Failure::data(e.to_string()))?;
    let mut split_cfg = ctx.config.split.clone();
    split_cfg.seed = ctx.config.seed;
    let splits = make_splits(&manifest, &split_cfg).map_err(|e| Failure::data(e.to_string()))?;
    for split in &splits {
        // exactly the pinned schema {"repeat": r, "roles": {...}}
        write_json(
            &ctx.out.join(format!("split_r{}.json", split.repeat)),
            &split.to_json(),
        )?;
    }
    write_json(
        &ctx.out.join("splits_provenance.json"),
        &serde_json::json!({
            "manifest": manifest_path,
            "num_repeats": splits.len(),
            "split_config": split_cfg,
            "provenance": provenance(&ctx.config, "split"),
        }),
    )?;
    ctx.say(format!(
        "wrote {} split files under {}",
        splits.len(),
        ctx.out.display()
    ));
    Ok(())
}
