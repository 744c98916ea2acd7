//! Markdown report assembled from artifacts already on disk; nothing is
//! recomputed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _, Result};

use crate::artifacts::{file_sha256, read_data_lines, Lock, Output, Provenance};
use crate::ReportArgs;

fn table(out: &mut String, lines: &[String]) {
    let mut rows = lines.iter().filter(|l| !l.trim().is_empty());
    let Some(header) = rows.next() else {
        out.push_str("_(empty)_\n\n");
        return;
    };
    let cols: Vec<&str> = header.split(',').collect();
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(cols.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.split(',').collect::<Vec<_>>().join(" | "));
    }
    out.push('\n');
}

/// Files in `dir` with the given suffix, sorted by name.
fn listing(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| {
        p.file_name()
            .is_some_and(|n| n.to_string_lossy().ends_with(suffix))
    });
    v.sort();
    Ok(v)
}

fn stem(p: &Path, suffix: &str) -> String {
    let name = p.file_name().unwrap().to_string_lossy();
    name.strip_suffix(suffix).unwrap_or(&name).to_owned()
}

/// Build the report body; returns it with the inputs it consumed
/// (relative path → sha256).
pub fn render(input: &Path) -> Result<(String, BTreeMap<String, String>)> {
    let mut used = BTreeMap::new();
    let mut body = String::from("# Confusion-score report\n\n");
    let mut read = |rel: &str| -> Result<Option<Vec<String>>> {
        let p = input.join(rel);
        if !p.is_file() {
            return Ok(None);
        }
        used.insert(rel.to_owned(), file_sha256(&p)?);
        Ok(Some(read_data_lines(&p)?))
    };
    let mut sections = 0;

    if let Some(lines) = read("scores/summary.csv")? {
        body.push_str("## Mean confusion per dataset\n\n");
        table(&mut body, &lines);
        sections += 1;
    }
    let preds = read("predict/predictions.csv")?;
    let preds_toml = read("predict/predictions.toml")?;
    if preds.is_some() || preds_toml.is_some() {
        body.push_str("## OOD accuracy predictions\n\n");
        if let Some(lines) = read("predict/datasets.csv")? {
            table(&mut body, &lines);
        }
        match preds {
            Some(lines) => table(&mut body, &lines),
            None => {
                let _ = writeln!(body, "```toml\n{}\n```\n", preds_toml.unwrap().join("\n"));
            }
        }
        sections += 1;
    }
    let subpops = listing(&input.join("partition"), ".subpops.csv")?;
    if !subpops.is_empty() {
        body.push_str("## Correct-count subpopulations\n\n");
        for p in &subpops {
            let name = stem(p, ".subpops.csv");
            let _ = writeln!(body, "### {name}\n");
            table(
                &mut body,
                &read(&format!("partition/{name}.subpops.csv"))?.unwrap(),
            );
        }
        sections += 1;
    }
    if let Some(lines) = read("phases/phases.toml")? {
        body.push_str("## Training phases\n\n");
        for l in lines.iter().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(body, "- {}", l.replace(" = ", ": "));
        }
        body.push('\n');
        sections += 1;
    }
    let group = read("fit/group_models.csv")?;
    let colin = read("fit/collinearity.csv")?;
    if group.is_some() || colin.is_some() {
        body.push_str("## Model fits\n\n");
        if let Some(lines) = group {
            body.push_str("### Per-group accuracy model\n\n");
            table(&mut body, &lines);
        }
        if let Some(lines) = colin {
            body.push_str("### Collinearity\n\n");
            table(&mut body, &lines);
        }
        sections += 1;
    }
    let extremes = listing(&input.join("extremes"), ".csv")?;
    if !extremes.is_empty() {
        body.push_str("## Extreme samples\n\n");
        for p in &extremes {
            let name = stem(p, ".csv");
            let _ = writeln!(body, "### {name}\n");
            table(&mut body, &read(&format!("extremes/{name}.csv"))?.unwrap());
        }
        sections += 1;
    }
    if sections == 0 {
        return Err(anyhow!("no artifacts found under {}", input.display()));
    }
    Ok((body, used))
}

pub fn run(a: ReportArgs) -> Result<()> {
    let target = a.out.unwrap_or_else(|| a.input.join("report.md"));
    let dir = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    let name = target
        .file_name()
        .ok_or_else(|| anyhow!("bad report path {}", target.display()))?
        .to_string_lossy()
        .into_owned();
    let _lock = Lock::acquire(&dir)?;
    let (body, inputs) = render(&a.input)?;
    #[derive(serde::Serialize)]
    struct Resolved {
        report: String,
    }
    let prov = Provenance::new(
        "report",
        &Resolved {
            report: name.clone(),
        },
        inputs,
    );
    let mut out = Output::new(&dir, &prov, "provenance.report.toml")?;
    out.text(&name, |w| w.write_all(body.as_bytes()))?;
    out.finish()?;
    Ok(())
}
