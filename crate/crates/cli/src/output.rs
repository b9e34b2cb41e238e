//! CSV artifacts and seed aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tstcc_core::training::{EpochLog, MetricsReport};

/// One evaluation of one variant under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub seed: u64,
    pub split: String,
    pub accuracy: f64,
    pub mf1: f64,
    pub f1: Vec<f64>,
}

impl MetricsRow {
    pub fn new(variant: impl Into<String>, split: &str, report: &MetricsReport) -> Self {
        Self {
            variant: variant.into(),
            seed: report.seed,
            split: split.to_string(),
            accuracy: report.accuracy,
            mf1: report.macro_f1,
            f1: report.f1.clone(),
        }
    }
}

/// `run_id,variant,seed,split,accuracy,mf1,f1_0,...`
pub fn metrics_csv(run_id: &str, rows: &[MetricsRow]) -> String {
    let classes = rows.iter().map(|r| r.f1.len()).max().unwrap_or(0);
    let mut s = String::from("run_id,variant,seed,split,accuracy,mf1");
    for c in 0..classes {
        write!(s, ",f1_{c}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(s, "{run_id},{},{},{},{},{}", quote(&r.variant), r.seed, r.split, r.accuracy, r.mf1).unwrap();
        for c in 0..classes {
            match r.f1.get(c) {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// `epoch,l_tc_s,l_tc_w,l_cc,total`
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,l_tc_s,l_tc_w,l_cc,total\n");
    for e in log {
        writeln!(s, "{},{},{},{},{}", e.epoch, e.l_tc_s, e.l_tc_w, e.l_cc, e.total).unwrap();
    }
    s
}

/// Quotes a field when it holds a comma or a quote.
pub fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Mean and sample standard deviation (n - 1); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub split: String,
    pub seeds: usize,
    pub accuracy: (f64, f64),
    pub mf1: (f64, f64),
}

/// Groups rows by `(variant, split)` in first-seen order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.variant.as_str(), r.split.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(v, sp)| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.variant == v && r.split == sp).collect();
            let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
            let mf1: Vec<f64> = group.iter().map(|r| r.mf1).collect();
            SummaryRow {
                variant: v.to_string(),
                split: sp.to_string(),
                seeds: group.len(),
                accuracy: mean_std(&acc),
                mf1: mean_std(&mf1),
            }
        })
        .collect()
}

/// `variant,split,seeds,accuracy_mean,accuracy_std,mf1_mean,mf1_std`
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("variant,split,seeds,accuracy_mean,accuracy_std,mf1_mean,mf1_std\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            quote(&r.variant),
            r.split,
            r.seeds,
            r.accuracy.0,
            r.accuracy.1,
            r.mf1.0,
            r.mf1.1
        )
        .unwrap();
    }
    s
}

/// Human-readable table in percent, `mean ± std`.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let w = rows.iter().map(|r| r.variant.chars().count()).max().unwrap_or(7).max(7);
    let mut s = format!("{:<w$}  {:<5}  {:>5}  {:>15}  {:>15}\n", "variant", "split", "seeds", "accuracy (%)", "MF1 (%)");
    for r in rows {
        let pm = |(m, sd): (f64, f64)| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd);
        writeln!(s, "{:<w$}  {:<5}  {:>5}  {:>15}  {:>15}", r.variant, r.split, r.seeds, pm(r.accuracy), pm(r.mf1))
            .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, seed: u64, acc: f64, f1: Vec<f64>) -> MetricsRow {
        MetricsRow { variant: variant.into(), seed, split: "test".into(), accuracy: acc, mf1: acc / 2.0, f1 }
    }

    #[test]
    fn metrics_schema() {
        let csv = metrics_csv("r1", &[row("TC + X-Aug", 0, 0.5, vec![0.25, 1.0]), row("a,b", 1, 1.0, vec![1.0])]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "run_id,variant,seed,split,accuracy,mf1,f1_0,f1_1");
        assert_eq!(lines[1], "r1,TC + X-Aug,0,test,0.5,0.25,0.25,1");
        assert_eq!(lines[2], "r1,\"a,b\",1,test,1,0.5,1,");
    }

    #[test]
    fn loss_schema() {
        let log = [EpochLog { epoch: 1, l_tc_s: 1.5, l_tc_w: 2.0, l_cc: 0.0, total: 3.5 }];
        assert_eq!(loss_log_csv(&log), "epoch,l_tc_s,l_tc_w,l_cc,total\n1,1.5,2,0,3.5\n");
    }

    #[test]
    fn sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn summary_groups_in_order() {
        let rows = [row("b", 0, 0.5, vec![]), row("a", 0, 1.0, vec![]), row("b", 1, 0.7, vec![])];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].variant.as_str(), s[0].seeds), ("b", 2));
        assert!((s[0].accuracy.0 - 0.6).abs() < 1e-15);
        assert!(summary_table(&s).contains("60.00 ± 14.14"));
    }
}
