use std::io::{self, Write};

use super::{confusion_from_rows, std_from_rows, Ensemble, ScoringError};

/// Per-sample scores of one dataset under one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub dataset: String,
    pub n_classes: usize,
    /// Inclusive epoch window the confusion score averages over.
    pub window: (usize, usize),
    /// Entropy scores for every epoch `1..=n_epochs`, as `[epoch - 1][sample]`.
    pub entropy: Vec<Vec<f64>>,
    pub confusion: Vec<f64>,
    pub tail_start: usize,
    /// `None` when fewer than two epochs fall in the tail.
    pub entropy_std: Option<Vec<f64>>,
}

impl ScoreTable {
    pub fn compute(
        dataset: impl Into<String>,
        ensemble: &Ensemble,
        window: Option<(usize, usize)>,
        tail_start: usize,
    ) -> Result<Self, ScoringError> {
        let n_epochs = ensemble.n_epochs();
        let (start, end) = window.unwrap_or((1, n_epochs));
        ensemble.check_window(start, end)?;
        let entropy = ensemble.entropy_matrix(1, n_epochs)?;
        let confusion = confusion_from_rows(&entropy[start - 1..end]);
        let entropy_std = (tail_start >= 1 && tail_start < n_epochs)
            .then(|| std_from_rows(&entropy[tail_start - 1..]));
        Ok(Self {
            dataset: dataset.into(),
            n_classes: ensemble.n_classes(),
            window: (start, end),
            entropy,
            confusion,
            tail_start,
            entropy_std,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.confusion.len()
    }

    pub fn n_epochs(&self) -> usize {
        self.entropy.len()
    }

    pub fn at_epoch(&self, epoch: usize) -> Option<&[f64]> {
        epoch.checked_sub(1).and_then(|t| self.entropy.get(t)).map(Vec::as_slice)
    }

    pub fn mean_confusion(&self) -> f64 {
        self.confusion.iter().sum::<f64>() / self.confusion.len() as f64
    }

    /// Mean over samples of the entropy score, per epoch.
    pub fn mean_entropy_trajectory(&self) -> Vec<f64> {
        self.entropy
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    /// CSV `sample_index,confusion,entropy_std[,s_<t>...]`. An undefined
    /// standard deviation is written as `nan`.
    pub fn write_csv(&self, w: &mut dyn Write, epochs: &[usize]) -> io::Result<()> {
        write!(w, "sample_index,confusion,entropy_std")?;
        for t in epochs {
            write!(w, ",s_{t}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_samples() {
            write!(w, "{i},{}", self.confusion[i])?;
            match &self.entropy_std {
                Some(s) => write!(w, ",{}", s[i])?,
                None => write!(w, ",nan")?,
            }
            for &t in epochs {
                let v = self.at_epoch(t).map(|r| r[i]).unwrap_or(f64::NAN);
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
