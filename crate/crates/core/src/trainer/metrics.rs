use std::io::Write;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,phase,lr,train_loss,train_acc,test_loss,test_acc";

/// One row of per-epoch metrics. Accuracies are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Global 0-based epoch index across both phases.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.phase, self.lr, self.train_loss, self.train_acc, self.test_loss, self.test_acc
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(records: &[MetricsRecord], mut w: impl Write) -> Result<()> {
    w.write_all(metrics_csv(records).as_bytes())?;
    Ok(())
}

/// Parses text produced by [`metrics_csv`]. Values come back rounded to the
/// six decimals they were written with.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let bad = |detail: String| Error::Config(format!("metrics csv: {detail}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(bad(format!("unexpected header {other:?}"))),
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
            }
            let num = |j: usize| -> Result<f64> {
                f[j].parse().map_err(|_| bad(format!("row {}: bad number `{}`", i + 1, f[j])))
            };
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad(format!("row {}: bad epoch", i + 1)))?,
                phase: f[1].parse().map_err(|_| bad(format!("row {}: bad phase", i + 1)))?,
                lr: num(2)?,
                train_loss: num(3)?,
                train_acc: num(4)?,
                test_loss: num(5)?,
                test_acc: num(6)?,
            })
        })
        .collect()
}
