//! Analytical accuracy models.
//!
//! * Per-group accuracy as a function of confusion score `x` and model
//!   complexity `α ∈ [0, 1]`: `C^(α-1) · e^(-α x)`. `α = 0` is a uniform
//!   guesser; `α = 1` gives `e^(-x)`.
//! * Accuracy linear in complexity per dataset, decomposed over easy and
//!   medium subpopulations with chance-level accuracy on the hard one.

use std::io::{self, Write};

/// Scores may exceed `ln C` by this much from rounding.
const DOMAIN_SLACK: f64 = 1e-9;
const GRID_STEP: f64 = 1e-3;
const GOLDEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{what} = {value} outside its domain")]
    OutOfDomain { what: &'static str, value: f64 },
    #[error("need at least 2 non-empty bins, have {0}")]
    InsufficientBins(usize),
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("all parameter counts in the family are equal")]
    DegenerateFamily,
    #[error("least-squares system is rank deficient: {0}")]
    RankDeficient(&'static str),
}

/// `C^(α-1) · e^(-α x)`.
pub fn eval_group_model(alpha: f64, x: f64, n_classes: usize) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::OutOfDomain {
            what: "alpha",
            value: alpha,
        });
    }
    let ln_c = (n_classes as f64).ln();
    if n_classes < 2 {
        return Err(ModelError::OutOfDomain {
            what: "n_classes",
            value: n_classes as f64,
        });
    }
    if !(x >= 0.0 && x <= ln_c + DOMAIN_SLACK) {
        return Err(ModelError::OutOfDomain { what: "x", value: x });
    }
    Ok(group_model(alpha, x, ln_c))
}

fn group_model(alpha: f64, x: f64, ln_c: f64) -> f64 {
    ((alpha - 1.0) * ln_c - alpha * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupAccuracyModel {
    pub alpha: f64,
    pub n_classes: usize,
    /// Weighted residual sum of squares at `alpha`.
    pub fit_rss: f64,
}

impl GroupAccuracyModel {
    pub fn eval(&self, x: f64) -> f64 {
        group_model(self.alpha, x, (self.n_classes as f64).ln())
    }
}

/// Weighted least-squares fit of `α`: a grid scan with step 1e-3, then a
/// golden-section search around the best grid point.
pub fn fit_group_model(
    centers: &[f64],
    accuracies: &[f64],
    weights: &[f64],
    n_classes: usize,
) -> Result<GroupAccuracyModel, ModelError> {
    if centers.len() != accuracies.len() || centers.len() != weights.len() {
        return Err(ModelError::LengthMismatch);
    }
    let used: Vec<usize> = (0..centers.len()).filter(|&k| weights[k] > 0.0).collect();
    if used.len() < 2 {
        return Err(ModelError::InsufficientBins(used.len()));
    }
    for &k in &used {
        if !(0.0..=1.0).contains(&accuracies[k]) {
            return Err(ModelError::OutOfDomain {
                what: "accuracy",
                value: accuracies[k],
            });
        }
    }
    let ln_c = (n_classes as f64).ln();
    let objective = |alpha: f64| -> f64 {
        used.iter()
            .map(|&k| weights[k] * (accuracies[k] - group_model(alpha, centers[k], ln_c)).powi(2))
            .sum()
    };

    let steps = (1.0 / GRID_STEP).round() as usize;
    let (mut best_alpha, mut best) = (0.0, objective(0.0));
    for i in 1..=steps {
        let a = i as f64 / steps as f64;
        let v = objective(a);
        if v < best {
            best = v;
            best_alpha = a;
        }
    }

    let (mut lo, mut hi) = ((best_alpha - GRID_STEP).max(0.0), (best_alpha + GRID_STEP).min(1.0));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > GOLDEN_TOL {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    let refined = 0.5 * (lo + hi);
    let f_refined = objective(refined);
    if f_refined < best {
        best = f_refined;
        best_alpha = refined;
    }
    Ok(GroupAccuracyModel {
        alpha: best_alpha,
        n_classes,
        fit_rss: best,
    })
}

/// Complexity index within one model family: normalized log2 parameter
/// count, 0 for the smallest model and 1 for the largest.
pub fn complexity_index(param_counts: &[u64]) -> Result<Vec<f64>, ModelError> {
    if let Some(&bad) = param_counts.iter().find(|&&p| p == 0) {
        return Err(ModelError::OutOfDomain {
            what: "param_count",
            value: bad as f64,
        });
    }
    let min = param_counts.iter().copied().min().ok_or(ModelError::DegenerateFamily)?;
    let max = param_counts.iter().copied().max().unwrap();
    if min == max {
        return Err(ModelError::DegenerateFamily);
    }
    let (lmin, lmax) = ((min as f64).log2(), (max as f64).log2());
    Ok(param_counts
        .iter()
        .map(|&p| ((p as f64).log2() - lmin) / (lmax - lmin))
        .collect())
}

/// Accuracy-versus-complexity samples of one dataset with its subpopulation
/// ratios `[easy, medium, hard]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCurve {
    pub name: String,
    /// `(alpha, accuracy)` per model.
    pub points: Vec<(f64, f64)>,
    pub ratios: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLine {
    pub name: String,
    pub min_acc: f64,
    pub slope: f64,
    /// Residual sum of squares of the per-dataset line.
    pub rss: f64,
    /// Shared-parameter prediction minus the fitted intercept.
    pub min_acc_residual: f64,
    /// Shared-parameter prediction minus the fitted slope.
    pub slope_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollinearityFit {
    pub chance: f64,
    pub lines: Vec<DatasetLine>,
    /// `None` when no dataset has an easy (resp. medium) subpopulation.
    pub min_acc_easy: Option<f64>,
    pub slope_easy: Option<f64>,
    pub min_acc_med: Option<f64>,
    pub slope_med: Option<f64>,
}

impl CollinearityFit {
    /// Accuracy predicted by the shared parameters for given ratios.
    pub fn predict(&self, ratios: [f64; 3], alpha: f64) -> f64 {
        ratios[0] * (self.min_acc_easy.unwrap_or(0.0) + alpha * self.slope_easy.unwrap_or(0.0))
            + ratios[1] * (self.min_acc_med.unwrap_or(0.0) + alpha * self.slope_med.unwrap_or(0.0))
            + ratios[2] * self.chance
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "kind,name,min_acc,slope,rss,min_acc_residual,slope_residual")?;
        writeln!(w, "shared,easy,{},{},,,", opt(self.min_acc_easy), opt(self.slope_easy))?;
        writeln!(w, "shared,medium,{},{},,,", opt(self.min_acc_med), opt(self.slope_med))?;
        writeln!(w, "shared,hard,{},0,,,", self.chance)?;
        for l in &self.lines {
            writeln!(
                w,
                "dataset,{},{},{},{},{},{}",
                l.name, l.min_acc, l.slope, l.rss, l.min_acc_residual, l.slope_residual
            )?;
        }
        Ok(())
    }
}

/// Ordinary least squares `y = intercept + slope · x`; returns
/// `(intercept, slope, rss)`.
pub fn ols_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64), ModelError> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(ModelError::RankDeficient("fewer than 2 points"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-300 {
        return Err(ModelError::RankDeficient("all complexities equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok((intercept, slope, rss))
}

/// Coefficient of determination of the OLS line through `(x, y)`.
pub fn linear_r2(points: &[(f64, f64)]) -> Result<f64, ModelError> {
    let (_, _, rss) = ols_line(points)?;
    let n = points.len() as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let tss: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    Ok(if tss == 0.0 { 1.0 } else { 1.0 - rss / tss })
}

/// Least squares for `targets ≈ design · coef` with up to two columns.
/// Columns that are zero in every row are dropped and reported as `None`.
fn solve_shared(design: &[[f64; 2]], targets: &[f64]) -> Result<[Option<f64>; 2], ModelError> {
    let active: Vec<usize> = (0..2)
        .filter(|&j| design.iter().any(|r| r[j].abs() > 1e-15))
        .collect();
    let mut out = [None, None];
    match active.as_slice() {
        [] => {}
        [j] => {
            let j = *j;
            let num: f64 = design.iter().zip(targets).map(|(r, t)| r[j] * t).sum();
            let den: f64 = design.iter().map(|r| r[j] * r[j]).sum();
            out[j] = Some(num / den);
        }
        _ => {
            let (mut a, mut b, mut d, mut u, mut v) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (r, t) in design.iter().zip(targets) {
                a += r[0] * r[0];
                b += r[0] * r[1];
                d += r[1] * r[1];
                u += r[0] * t;
                v += r[1] * t;
            }
            let det = a * d - b * b;
            if det.abs() <= 1e-12 * a * d {
                return Err(ModelError::RankDeficient(
                    "subpopulation ratios do not vary independently across datasets",
                ));
            }
            out[0] = Some((u * d - b * v) / det);
            out[1] = Some((a * v - b * u) / det);
        }
    }
    Ok(out)
}

/// Fit a line per dataset, then the shared easy/medium parameters from
/// `min_acc_i = ρe·m_easy + ρm·m_med + ρh/C` and `s_i = ρe·s_easy + ρm·s_med`.
pub fn fit_collinearity(
    curves: &[DatasetCurve],
    n_classes: usize,
) -> Result<CollinearityFit, ModelError> {
    if curves.len() < 2 {
        return Err(ModelError::RankDeficient("need at least 2 datasets"));
    }
    let chance = 1.0 / n_classes as f64;
    let mut lines = Vec::with_capacity(curves.len());
    for c in curves {
        let (min_acc, slope, rss) = ols_line(&c.points)?;
        lines.push(DatasetLine {
            name: c.name.clone(),
            min_acc,
            slope,
            rss,
            min_acc_residual: 0.0,
            slope_residual: 0.0,
        });
    }
    let design: Vec<[f64; 2]> = curves.iter().map(|c| [c.ratios[0], c.ratios[1]]).collect();
    let min_targets: Vec<f64> = curves
        .iter()
        .zip(&lines)
        .map(|(c, l)| l.min_acc - c.ratios[2] * chance)
        .collect();
    let slope_targets: Vec<f64> = lines.iter().map(|l| l.slope).collect();
    let [min_acc_easy, min_acc_med] = solve_shared(&design, &min_targets)?;
    let [slope_easy, slope_med] = solve_shared(&design, &slope_targets)?;
    let mut fit = CollinearityFit {
        chance,
        lines,
        min_acc_easy,
        slope_easy,
        min_acc_med,
        slope_med,
    };
    let residuals: Vec<(f64, f64)> = fit
        .lines
        .iter()
        .zip(curves)
        .map(|(l, c)| {
            let pred_min = fit.predict(c.ratios, 0.0);
            let pred_slope = fit.predict(c.ratios, 1.0) - pred_min;
            (pred_min - l.min_acc, pred_slope - l.slope)
        })
        .collect();
    for (l, (rm, rs)) in fit.lines.iter_mut().zip(residuals) {
        l.min_acc_residual = rm;
        l.slope_residual = rs;
    }
    Ok(fit)
}
