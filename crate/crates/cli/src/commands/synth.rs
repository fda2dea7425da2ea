//! `phasessl synth` — procedural corpus generation.

use phasessl_core::dataset::{generate_synthetic, SynthSpec};

use crate::commands::write_json;
use crate::config::provenance;
use crate::{CmdResult, Ctx, Failure};

pub fn parse_dims(text: &str) -> Result<(usize, usize), Failure> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Failure::usage(format!("bad dims `{text}`, expected WxH")))?;
    let w = w
        .parse::<usize>()
        .map_err(|_| Failure::usage(format!("bad width in `{text}`")))?;
    let h = h
        .parse::<usize>()
        .map_err(|_| Failure::usage(format!("bad height in `{text}`")))?;
    Ok((w, h))
}

pub fn run(ctx: &Ctx, per_class: usize, dims: &str) -> CmdResult {
    let dims = parse_dims(dims)?;
    let spec = SynthSpec {
        per_class,
        dims,
        seed: ctx.config.seed,
    };
    let manifest =
        generate_synthetic(&spec, &ctx.out).map_err(|e| Failure::data(e.to_string()))?;
    write_json(
        &ctx.out.join("synth_run.json"),
        &serde_json::json!({
            "per_class": per_class,
            "dims": [dims.0, dims.1],
            "records": manifest.records.len(),
            "provenance": provenance(&ctx.config, "synth"),
        }),
    )?;
    ctx.say(format!(
        "wrote {} images and manifest.csv under {}",
        manifest.records.len(),
        ctx.out.display()
    ));
    Ok(())
}
