//! Browser bindings for three small clens operations: the entropy score of
//! an ensemble, the per-group accuracy curve, and the mixture prediction of
//! OOD accuracy from binned ID accuracies.
//!
//! Inputs arrive as text from form fields; errors come back as strings that
//! the page shows verbatim.

use clens::models::eval_group_model;
use clens::partition::bin_scores;
use clens::predictor::predict_ood_accuracy;
use clens::scoring::entropy;
use wasm_bindgen::prelude::*;

fn numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

/// One distribution per line, one line per ensemble member. Returns
/// `[entropy, entropy / ln C, bin of 40, mean_0, …, mean_{C-1}]`.
#[wasm_bindgen]
pub fn ensemble_entropy(text: &str) -> Result<Vec<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(numbers)
        .collect::<Result<_, _>>()?;
    let c = rows.first().map(Vec::len).ok_or("enter at least one distribution")?;
    if c < 2 {
        return Err("need at least two classes".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != c) {
        return Err(format!("line {} has {} values, line 1 has {c}", i + 1, rows[i].len()));
    }
    let mut mean = vec![0.0; c];
    for r in &rows {
        // rejects members that are not distributions
        entropy(r).map_err(|e| e.to_string())?;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / rows.len() as f64;
        }
    }
    let h = entropy(&mean).map_err(|e| e.to_string())?;
    let bin = bin_scores(&[h], 40, c).map_err(|e| e.to_string())?.assignment()[0];
    let mut out = vec![h, h / (c as f64).ln(), bin as f64];
    out.extend(mean);
    Ok(out)
}

/// `n_points` samples of `C^(α-1) e^(-α x)` on `[0, ln C]`.
#[wasm_bindgen]
pub fn group_curve(alpha: f64, n_classes: usize, n_points: usize) -> Result<Vec<f64>, String> {
    if n_points < 2 {
        return Err("need at least two points".into());
    }
    let ln_c = (n_classes.max(1) as f64).ln();
    (0..n_points)
        .map(|k| {
            let x = ln_c * k as f64 / (n_points - 1) as f64;
            eval_group_model(alpha, x, n_classes).map_err(|e| e.to_string())
        })
        .collect()
}

/// Per-bin ID accuracies and counts plus per-bin OOD counts (all
/// comma-separated). Returns `[predicted accuracy, fallback bins used]`.
#[wasm_bindgen]
pub fn predict_mixture(id_accs: &str, id_counts: &str, ood_counts: &str) -> Result<Vec<f64>, String> {
    let accs = numbers(id_accs)?;
    let counts: Vec<usize> = numbers(id_counts)?.into_iter().map(|v| v.max(0.0) as usize).collect();
    let ood = numbers(ood_counts)?;
    let total: f64 = ood.iter().sum();
    if !(total > 0.0) || ood.iter().any(|&v| v < 0.0) {
        return Err("OOD counts must be non-negative with a positive total".into());
    }
    if let Some(a) = accs.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(format!("accuracy {a} outside [0, 1]"));
    }
    let ratios: Vec<f64> = ood.iter().map(|v| v / total).collect();
    let p = predict_ood_accuracy(&accs, &counts, &ratios).map_err(|e| e.to_string())?;
    Ok(vec![p.accuracy, p.fallback_bins_used as f64])
}
