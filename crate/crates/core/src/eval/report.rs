use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::suite::SuiteReport;
use crate::error::{Error, Result};
use crate::nnet::EpochRecord;

/// Confusion matrix with rows indexed by the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub matrix: Vec<Vec<u64>>,
    pub accuracy: f64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.matrix.iter().enumerate().map(|(i, r)| r[i]).sum()
    }
}

pub fn metrics(truth: &[u32], predicted: &[u32], k: usize) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", truth.len()),
            got: predicted.len().to_string(),
        });
    }
    let mut matrix = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label as usize >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        matrix[t as usize][p as usize] += 1;
    }
    let mut c = Confusion {
        matrix,
        accuracy: 0.0,
    };
    let total = c.total();
    c.accuracy = if total == 0 {
        0.0
    } else {
        c.trace() as f64 / total as f64
    };
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub classifier: String,
    pub dataset: String,
    pub train_size: usize,
    pub epochs: usize,
    pub seconds: f64,
    pub seconds_per_epoch: Option<f64>,
}

impl TimingRow {
    pub fn new(
        classifier: &str,
        dataset: &str,
        train_size: usize,
        epochs: usize,
        seconds: f64,
    ) -> Self {
        TimingRow {
            classifier: classifier.into(),
            dataset: dataset.into(),
            train_size,
            epochs,
            seconds,
            seconds_per_epoch: (epochs > 0).then(|| seconds / epochs as f64),
        }
    }
}

/// Least-squares line `y = slope x + intercept` with its R².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        r2,
    }
}

/// Plain-text timing table; empty input gives an empty string.
pub fn timing_report(rows: &[TimingRow]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let mut out = format!(
        "{:<12} {:<16} {:>10} {:>7} {:>10} {:>10}\n",
        "classifier", "dataset", "train", "epochs", "total_s", "s/epoch"
    );
    for r in rows {
        let per = r
            .seconds_per_epoch
            .map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            out,
            "{:<12} {:<16} {:>10} {:>7} {:>10.3} {:>10}",
            r.classifier, r.dataset, r.train_size, r.epochs, r.seconds, per
        );
    }
    out
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("classifier,dataset,train_size,epochs,seconds,seconds_per_epoch\n");
    for r in rows {
        let per = r.seconds_per_epoch.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.classifier, r.dataset, r.train_size, r.epochs, r.seconds, per
        );
    }
    out
}

/// Test accuracy per classifier (rows) and suite (columns).
pub fn accuracy_table(suites: &[SuiteReport]) -> String {
    let mut classifiers: Vec<_> = suites
        .iter()
        .flat_map(|s| s.reports.iter().map(|r| r.classifier))
        .collect();
    classifiers.sort();
    classifiers.dedup();
    let column = |s: &SuiteReport| format!("{}{}", s.name, if s.noise { "+noise" } else { "" });
    let mut out = format!("{:<12}", "classifier");
    for s in suites {
        let _ = write!(out, " {:>14}", column(s));
    }
    out.push('\n');
    for c in classifiers {
        let _ = write!(out, "{:<12}", c.name());
        for s in suites {
            match s.report(c) {
                Some(r) => {
                    let _ = write!(out, " {:>14.3}", r.test_acc);
                }
                None => {
                    let _ = write!(out, " {:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Per-epoch curves of every network in the suites.
pub fn history_csv(suites: &[SuiteReport]) -> String {
    let mut out =
        String::from("suite,noise,classifier,epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
    for s in suites {
        for r in &s.reports {
            for h in &r.history {
                let EpochRecord {
                    epoch,
                    train_loss,
                    train_acc,
                    val_loss,
                    val_acc,
                    lr,
                } = *h;
                let _ = writeln!(
                    out,
                    "{},{},{},{epoch},{train_loss},{train_acc},{val_loss},{val_acc},{lr}",
                    s.name,
                    s.noise,
                    r.classifier.name()
                );
            }
        }
    }
    out
}

/// Validation accuracy against series length for the recurrent grids.
pub fn series_length_csv(suites: &[SuiteReport]) -> String {
    let mut out = String::from("suite,noise,classifier,series_length,val_acc,train_seconds\n");
    for s in suites {
        for r in &s.reports {
            for c in &r.grid {
                if let Some(l) = c.hyper.series_length {
                    let _ = writeln!(
                        out,
                        "{},{},{},{l},{},{}",
                        s.name,
                        s.noise,
                        r.classifier.name(),
                        c.val_acc,
                        c.train_seconds
                    );
                }
            }
        }
    }
    out
}
