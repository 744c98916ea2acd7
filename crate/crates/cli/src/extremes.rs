//! Lowest/highest confusion sample listings.

use std::io::{self, Write};

use clap::ValueEnum;
use clens::predictor::{Analysis, PredictError, ScoreBasis};
use clens::proba_log::TagTable;
use serde::Serialize;

use crate::config::config_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Lowest,
    Highest,
}

impl Which {
    pub fn as_str(self) -> &'static str {
        match self {
            Which::Lowest => "lowest",
            Which::Highest => "highest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeRow {
    pub rank: usize,
    pub sample_index: usize,
    pub confusion: f64,
    pub label: Option<usize>,
    /// Ensemble consensus prediction.
    pub prediction: usize,
    pub correct: Option<bool>,
    pub tags: String,
}

/// Top-`k` samples by score, ties broken by lower index. With
/// `mistakes_only`, only samples whose consensus prediction differs from the
/// label are listed (labels required).
pub fn list_extremes(
    scores: &[f64],
    prediction: &[usize],
    labels: Option<&[usize]>,
    tags: Option<&TagTable>,
    k: usize,
    which: Which,
    mistakes_only: bool,
) -> anyhow::Result<Vec<ExtremeRow>> {
    if mistakes_only && labels.is_none() {
        return Err(config_err("--mistakes-only needs a labelled dataset"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let by = match which {
            Which::Lowest => scores[a].total_cmp(&scores[b]),
            Which::Highest => scores[b].total_cmp(&scores[a]),
        };
        by.then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .filter(|&i| !mistakes_only || labels.is_some_and(|l| l[i] != prediction[i]))
        .take(k)
        .enumerate()
        .map(|(r, i)| ExtremeRow {
            rank: r + 1,
            sample_index: i,
            confusion: scores[i],
            label: labels.map(|l| l[i]),
            prediction: prediction[i],
            correct: labels.map(|l| l[i] == prediction[i]),
            tags: tags.map(|t| t.joined(i)).unwrap_or_default(),
        })
        .collect())
}

pub fn extremes_for(
    analysis: &Analysis,
    dataset: &str,
    basis: ScoreBasis,
    k: usize,
    which: Which,
    mistakes_only: bool,
) -> anyhow::Result<Vec<ExtremeRow>> {
    let manifest = analysis.manifest();
    if manifest.dataset(dataset).is_none() {
        return Err(PredictError::UnknownDataset(dataset.to_owned()).into());
    }
    let scores = analysis.scores(dataset, basis)?;
    let prediction = analysis.scorer(dataset)?.predict_final();
    let labels = manifest.labels(dataset).map(|l| &l[..]);
    list_extremes(
        &scores,
        &prediction,
        labels,
        manifest.tags(dataset),
        k,
        which,
        mistakes_only,
    )
}

pub fn write_csv(rows: &[ExtremeRow], w: &mut dyn Write) -> io::Result<()> {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        w,
        "rank,sample_index,confusion,label,prediction,correct,tags"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rank,
            r.sample_index,
            r.confusion,
            opt(r.label),
            r.prediction,
            r.correct.map(|c| c.to_string()).unwrap_or_default(),
            r.tags
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_k_is_empty() {
        let rows =
            list_extremes(&[0.1, 0.2], &[0, 0], None, None, 0, Which::Lowest, false).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn ties_take_first_indices() {
        let rows = list_extremes(&[0.5; 6], &[0; 6], None, None, 3, Which::Highest, false).unwrap();
        let idx: Vec<usize> = rows.iter().map(|r| r.sample_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn ordering_and_mistake_filter() {
        let scores = [0.9, 0.1, 0.5, 0.3];
        let pred = [0, 1, 1, 0];
        let labels = [0, 0, 1, 1];
        let tags = TagTable(vec![
            vec![],
            vec!["corrupted".into()],
            vec![],
            vec!["ambiguous".into()],
        ]);
        let low = list_extremes(
            &scores,
            &pred,
            Some(&labels),
            Some(&tags),
            2,
            Which::Lowest,
            false,
        )
        .unwrap();
        assert_eq!(
            low.iter().map(|r| r.sample_index).collect::<Vec<_>>(),
            vec![1, 3]
        );
        let high = list_extremes(
            &scores,
            &pred,
            Some(&labels),
            None,
            2,
            Which::Highest,
            false,
        )
        .unwrap();
        assert_eq!(
            high.iter().map(|r| r.sample_index).collect::<Vec<_>>(),
            vec![0, 2]
        );
        let m = list_extremes(
            &scores,
            &pred,
            Some(&labels),
            Some(&tags),
            10,
            Which::Lowest,
            true,
        )
        .unwrap();
        assert_eq!(
            m.iter().map(|r| r.sample_index).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert_eq!(m[0].tags, "corrupted");
        assert_eq!(m[1].rank, 2);
        assert!(list_extremes(&scores, &pred, None, None, 1, Which::Lowest, true).is_err());
    }
}
