//! JSON envelopes and CSV exports laid out like the published tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{AblationRow, DistributionReport, HIST_BINS, HIST_WIDTH};
use super::metrics::EvalReport;
use super::protocol::{CurvePoint, OodCvReport};
use super::AitrAblationRow;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::features::MuseComponent;

pub const REPORT_SCHEMA: &str = "muse-ooc/report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope<T> {
    pub schema: String,
    pub version: u32,
    pub kind: String,
    pub body: T,
}

impl<T> ReportEnvelope<T> {
    pub fn new(kind: &str, body: T) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            kind: kind.into(),
            body,
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, kind: &str, body: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ReportEnvelope::new(kind, body))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `task,n,overall,true,ooc,miscaptioned` with empty cells for absent classes.
pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("task,n,overall,true,ooc,miscaptioned\n");
    for r in reports {
        let cell = |l: Label| r.per_class_accuracy.get(&l).map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.task,
            r.n,
            r.overall_accuracy,
            cell(Label::Truthful),
            cell(Label::Ooc),
            cell(Label::Miscaptioned)
        );
    }
    out
}

/// One row per model kind with an importance column per feature.
pub fn importance_csv(columns: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = format!("model,{}\n", columns.join(","));
    for (name, imp) in rows {
        let v: Vec<String> = imp.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{name},{}", v.join(","));
    }
    out
}

/// One 0/1 column per component, then validation and per-task test accuracy.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut tasks: Vec<String> = Vec::new();
    for r in rows {
        for t in &r.test {
            if !tasks.contains(&t.task.to_string()) {
                tasks.push(t.task.to_string());
            }
        }
    }
    let names: Vec<&str> = MuseComponent::ALL.iter().map(|c| c.name()).collect();
    let mut out = format!("{},val_accuracy", names.join(","));
    for t in &tasks {
        let _ = write!(out, ",test_{t}");
    }
    out.push('\n');
    for r in rows {
        let flags: Vec<&str> = MuseComponent::ALL
            .iter()
            .map(|c| if r.components.contains(c) { "1" } else { "0" })
            .collect();
        let _ = write!(out, "{},{}", flags.join(","), r.val_accuracy);
        for t in &tasks {
            let acc = r.test.iter().find(|e| &e.task.to_string() == t).map(|e| e.overall_accuracy.to_string());
            let _ = write!(out, ",{}", acc.unwrap_or_default());
        }
        out.push('\n');
    }
    out
}

pub fn aitr_ablation_csv(rows: &[AitrAblationRow]) -> String {
    let mut out = String::from("pooling,muse,seeds,mean_val_accuracy,val_accuracies,best_configs\n");
    for r in rows {
        let accs: Vec<String> = r.val_accuracies.iter().map(|a| a.to_string()).collect();
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.pooling.name(),
            if r.use_muse { "yes" } else { "no" },
            seeds.join(" "),
            r.mean_val_accuracy,
            accs.join(" "),
            r.best_configs.join(" | ")
        );
    }
    out
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("fraction,n_train,mean_accuracy,accuracies\n");
    for p in points {
        let accs: Vec<String> = p.accuracies.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "{},{},{},{}", p.fraction, p.n_train, p.mean_accuracy, accs.join(" "));
    }
    out
}

pub fn oodcv_csv(report: &OodCvReport) -> String {
    let mut out = String::from("config,fold,val,test,error\n");
    for (c, row) in report.cells.iter().enumerate() {
        for (f, cell) in row.iter().enumerate() {
            let (v, t) = cell.map(|s| (s.val.to_string(), s.test.to_string())).unwrap_or_default();
            let err = report.errors[c][f].clone().unwrap_or_default().replace(',', ";");
            let _ = writeln!(out, "{},{f},{v},{t},{err}", report.config_labels[c]);
        }
    }
    out
}

/// `class,component,n,q1,median,q3`.
pub fn distribution_csv(report: &DistributionReport) -> String {
    let mut out = String::from("class,component,n,q1,median,q3\n");
    for (class, per) in &report.classes {
        for (c, s) in per {
            let _ = writeln!(out, "{class},{c},{},{},{},{}", s.n, s.q1, s.median, s.q3);
        }
    }
    out
}

/// Whitespace-separated histogram table: bin centre, then one count column
/// per (class, component).
pub fn histogram_dat(report: &DistributionReport) -> String {
    let mut cols = Vec::new();
    for (class, per) in &report.classes {
        for (c, s) in per {
            cols.push((format!("{class}:{c}"), &s.histogram));
        }
    }
    let mut out = String::from("# bin_centre");
    for (name, _) in &cols {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    for b in 0..HIST_BINS {
        let _ = write!(out, "{:.3}", -1.0 + HIST_WIDTH * (b as f64 + 0.5));
        for (_, h) in &cols {
            let _ = write!(out, " {}", h[b]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, Task};

    #[test]
    fn eval_csv_leaves_absent_classes_empty() {
        let r = evaluate(&[0, 1], &[Label::Truthful, Label::Ooc], Task::TrueVsOoc).unwrap();
        assert_eq!(eval_csv(&[r]), "task,n,overall,true,ooc,miscaptioned\ntrue_vs_ooc,2,1,1,1,\n");
    }

    #[test]
    fn envelope_is_versioned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_json(&p, "test", &vec![1, 2]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["schema"], REPORT_SCHEMA);
        assert_eq!(v["version"], 1);
        assert_eq!(v["body"][1], 2);
    }
}
