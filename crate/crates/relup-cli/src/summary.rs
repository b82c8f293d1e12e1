//! Run summaries and their CSV round-trip.
//!
//! `summary.csv` holds one row per fold:
//! `fold,best_epoch,val_acc,test_acc,train_s_per_epoch,infer_s`.
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! the file back reproduces the original values bit-for-bit. Writers append
//! when the file already exists; the parser skips any interleaved headers.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use relup::train::{mean_std, FoldReport};

use crate::CliError;

pub const SUMMARY_HEADER: &str = "fold,best_epoch,val_acc,test_acc,train_s_per_epoch,infer_s";

/// Aggregate of one cross-validation run: per-fold reports plus the
/// population mean/std of the test accuracies.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dataset: String,
    pub config_label: String,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl RunSummary {
    pub fn from_reports(dataset: &str, config_label: &str, folds: Vec<FoldReport>) -> Self {
        let accs: Vec<f64> = folds.iter().map(|f| f.test_accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        RunSummary {
            dataset: dataset.to_string(),
            config_label: config_label.to_string(),
            folds,
            mean_accuracy,
            std_accuracy,
        }
    }

    /// The `mm.mm±ss.ss` accuracy line, in percent.
    pub fn pm_line(&self) -> String {
        format!("{:.2}±{:.2}", self.mean_accuracy * 100.0, self.std_accuracy * 100.0)
    }

    /// Validation accuracy at the best epoch of fold `i`.
    pub fn best_val(&self, i: usize) -> f64 {
        let f = &self.folds[i];
        f.val_accuracy_curve.get(f.best_epoch).copied().unwrap_or(0.0)
    }

    /// Appends per-fold rows to `path`, writing the header only when the
    /// file is new or empty.
    pub fn append_csv(&self, path: &Path) -> Result<(), CliError> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{SUMMARY_HEADER}")?;
        }
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(
                file,
                "{},{},{},{},{},{}",
                f.fold_index,
                f.best_epoch,
                self.best_val(i),
                f.test_accuracy,
                f.wall_time_train_per_epoch,
                f.wall_time_infer
            )?;
        }
        Ok(())
    }

    /// Parses rows written by [`append_csv`] back into a summary. The
    /// validation curve collapses to the single best-epoch point the CSV
    /// stores; every stored field round-trips exactly.
    pub fn parse_csv(path: &Path, dataset: &str, config_label: &str) -> Result<Self, CliError> {
        let content = std::fs::read_to_string(path)?;
        let mut folds = Vec::new();
        for (no, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line == SUMMARY_HEADER {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected 6 fields, got {}",
                    path.display(),
                    no + 1,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64, CliError> {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("{}:{}: bad number {s:?}", path.display(), no + 1)))
            };
            let parse_u = |s: &str| -> Result<usize, CliError> {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("{}:{}: bad integer {s:?}", path.display(), no + 1)))
            };
            let best_epoch = parse_u(fields[1])?;
            let val_acc = parse_f(fields[2])?;
            let mut curve = vec![0.0; best_epoch + 1];
            curve[best_epoch] = val_acc;
            folds.push(FoldReport {
                fold_index: parse_u(fields[0])?,
                best_epoch,
                val_accuracy_curve: curve,
                test_accuracy: parse_f(fields[3])?,
                wall_time_train_per_epoch: parse_f(fields[4])?,
                wall_time_infer: parse_f(fields[5])?,
            });
        }
        Ok(RunSummary::from_reports(dataset, config_label, folds))
    }
}
