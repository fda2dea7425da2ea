//! `phasessl enhance` — one MFI sidecar plus one preview PNG per image.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use phasessl_core::dataset::load_manifest;
use phasessl_core::enhance::enhance_image;
use phasessl_core::image::GrayImage;

use crate::commands::{thread_cap, write_json};
use crate::config::provenance;
use crate::{CmdResult, Ctx, Failure};

fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>, Failure> {
    if input.is_file() {
        let manifest = load_manifest(input).map_err(|e| Failure::data(e.to_string()))?;
        return Ok(manifest.records.into_iter().map(|r| r.image_path).collect());
    }
    if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Failure::data(format!("read {}: {e}", input.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png" | "pgm" | "PNG" | "PGM")
                )
            })
            .collect();
        files.sort();
        return Ok(files);
    }
    Err(Failure::usage(format!(
        "{} is neither a directory nor a manifest CSV",
        input.display()
    )))
}

pub fn run(ctx: &Ctx, input: &Path) -> CmdResult {
    let files = collect_inputs(input)?;
    if files.is_empty() {
        return Err(Failure::data(format!(
            "no PNG/PGM inputs under {}",
            input.display()
        )));
    }

    let fb = &ctx.config.filterbank;
    let rc = &ctx.config.regularizer;
    let out_dir = ctx.out.clone();
    let process = |path: &PathBuf| -> Result<(), String> {
        let stem = path
            .file_stem()
            .ok_or_else(|| format!("{}: no file stem", path.display()))?
            .to_string_lossy()
            .into_owned();
        let gray = GrayImage::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mf =
            enhance_image(&gray, fb, rc).map_err(|e| format!("{}: {e}", path.display()))?;
        mf.save_sidecar(out_dir.join(format!("{stem}.mfi")))
            .map_err(|e| e.to_string())?;
        mf.save_preview_png(out_dir.join(format!("{stem}_mf.png")))
            .map_err(|e| e.to_string())?;
        Ok(())
    };

    let cap = thread_cap();
    let results: Vec<(PathBuf, Result<(), String>)> = if cap == 1 {
        files.iter().map(|p| (p.clone(), process(p))).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cap)
            .build()
            .map_err(|e| Failure::data(e.to_string()))?;
        pool.install(|| files.par_iter().map(|p| (p.clone(), process(p))).collect())
    };

    let mut failures = 0usize;
    let mut statuses = Vec::with_capacity(results.len());
    for (path, result) in &results {
        match result {
            Ok(()) => statuses.push(serde_json::json!({
                "input": path,
                "ok": true,
            })),
            Err(message) => {
                failures += 1;
                eprintln!("error: {message}");
                statuses.push(serde_json::json!({
                    "input": path,
                    "ok": false,
                    "error": message,
                }));
            }
        }
    }
    write_json(
        &ctx.out.join("enhance_run.json"),
        &serde_json::json!({
            "inputs": files.len(),
            "failed": failures,
            "files": statuses,
            "provenance": provenance(&ctx.config, "enhance"),
        }),
    )?;
    ctx.say(format!(
        "enhanced {}/{} images into {}",
        files.len() - failures,
        files.len(),
        ctx.out.display()
    ));
    if failures > 0 {
        return Err(Failure::data(format!("{failures} input(s) failed")));
    }
    Ok(())
}
