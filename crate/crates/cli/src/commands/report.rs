//! `phasessl report` — comparison table CSV from aggregate reports.

use std::path::{Path, PathBuf};

use phasessl_core::metrics::paired_t_test;

use crate::{CmdResult, Ctx, Failure};

#[derive(Debug, Clone)]
struct MethodRow {
    method: String,
    labeled_percent: f64,
    test_set: String,
    precision: f64,
    recall: f64,
    f1: f64,
    top1: f64,
    per_repeat_top1: Vec<f64>,
}

fn find_aggregates(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().and_then(|n| n.to_str()) == Some("aggregate.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    found
}

fn rows_from_aggregate(path: &Path) -> Result<Vec<MethodRow>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("parse {}: {e}", path.display())))?;
    let method = value["method"].as_str().unwrap_or("unknown").to_string();
    let labeled_percent = value["labeled_percent"].as_f64().unwrap_or(0.0);
    let per_repeat_top1: Vec<f64> = value["per_repeat"]
        .as_array()
        .map(|arr| {
            arr.iter()
                .filter_map(|r| r["final_test_top1"].as_f64())
                .collect()
        })
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (key, test_set) in [("final_val", "val"), ("final_test", "test")] {
        let mean = &value[key]["mean"];
        if mean.is_null() {
            continue;
        }
        rows.push(MethodRow {
            method: method.clone(),
            labeled_percent,
            test_set: test_set.to_string(),
            precision: mean["macro_precision"].as_f64().unwrap_or(f64::NAN),
            recall: mean["macro_recall"].as_f64().unwrap_or(f64::NAN),
            f1: mean["macro_f1"].as_f64().unwrap_or(f64::NAN),
            top1: mean["top1"].as_f64().unwrap_or(f64::NAN),
            per_repeat_top1: per_repeat_top1.clone(),
        });
    }
    Ok(rows)
}

pub fn run(ctx: &Ctx, reports_dir: &Path, ttest: Option<&str>) -> CmdResult {
    let files = find_aggregates(reports_dir);
    if files.is_empty() {
        return Err(Failure::data(format!(
            "no aggregate.json files under {}",
            reports_dir.display()
        )));
    }
    let mut rows = Vec::new();
    for file in &files {
        rows.extend(rows_from_aggregate(file)?);
    }
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.labeled_percent.partial_cmp(&b.labeled_percent).unwrap())
            .then(a.test_set.cmp(&b.test_set))
    });

    // optional paired t-test between two named methods on final test top-1
    let mut ttest_cells: std::collections::BTreeMap<String, (f64, f64, String)> =
        std::collections::BTreeMap::new();
    if let Some(pair) = ttest {
        let (name_a, name_b) = pair
            .split_once(',')
            .ok_or_else(|| Failure::usage("--ttest expects METHOD_A,METHOD_B"))?;
        let series = |name: &str| -> Result<Vec<f64>, Failure> {
            rows.iter()
                .find(|r| r.method == name && r.test_set == "test")
                .map(|r| r.per_repeat_top1.clone())
                .ok_or_else(|| Failure::data(format!("method `{name}` not found in reports")))
        };
        let a = series(name_a)?;
        let b = series(name_b)?;
        let result = paired_t_test(&a, &b).map_err(|e| Failure::data(e.to_string()))?;
        ttest_cells.insert(
            name_a.to_string(),
            (result.t_statistic, result.p_value, name_b.to_string()),
        );
    }

    let mut csv = String::from(
        "method,labeled_percent,test_set,precision,recall,f1,top1,ttest_vs,t_statistic,p_value\n",
    );
    for row in &rows {
        let (ttest_vs, t_stat, p_val) = match ttest_cells.get(&row.method) {
            Some((t, p, vs)) if row.test_set == "test" => {
                (vs.clone(), format!("{t:.6}"), format!("{p:.6}"))
            }
            _ => (String::new(), String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.2},{},{},{}\n",
            row.method,
            row.labeled_percent,
            row.test_set,
            row.precision,
            row.recall,
            row.f1,
            row.top1,
            ttest_vs,
            t_stat,
            p_val
        ));
    }
    let out_path = ctx.out.join("table.csv");
    std::fs::write(&out_path, csv)
        .map_err(|e| Failure::data(format!("write {}: {e}", out_path.display())))?;
    ctx.say(format!("wrote {} rows to {}", rows.len(), out_path.display()));
    Ok(())
}
