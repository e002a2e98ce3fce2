use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Which classes an accuracy is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TrueVsOoc,
    TrueVsMiscaptioned,
    /// All three classes; any falsified class counts as the positive class.
    All,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::TrueVsOoc, Task::TrueVsMiscaptioned, Task::All];

    pub fn classes(self) -> &'static [Label] {
        match self {
            Task::TrueVsOoc => &[Label::Truthful, Label::Ooc],
            Task::TrueVsMiscaptioned => &[Label::Truthful, Label::Miscaptioned],
            Task::All => &Label::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::TrueVsOoc => "true_vs_ooc",
            Task::TrueVsMiscaptioned => "true_vs_miscaptioned",
            Task::All => "all",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n: usize,
    pub overall_accuracy: f64,
    /// Recall of each class present after filtering.
    pub per_class_accuracy: BTreeMap<Label, f64>,
    /// Rows are true classes in `classes` order, columns the predicted
    /// binary class (0 = truthful, 1 = falsified).
    pub confusion: Vec<[usize; 2]>,
    pub classes: Vec<Label>,
}

/// Scores binary predictions (1 = falsified) against three-way labels after
/// keeping only the task's classes.
pub fn evaluate(predictions: &[u8], labels: &[Label], task: Task) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let classes = task.classes();
    let mut confusion = vec![[0usize; 2]; classes.len()];
    for (&p, &l) in predictions.iter().zip(labels) {
        if let Some(row) = classes.iter().position(|&c| c == l) {
            confusion[row][(p != 0) as usize] += 1;
        }
    }
    let correct_col = |l: Label| (l != Label::Truthful) as usize;
    let n: usize = confusion.iter().map(|r| r[0] + r[1]).sum();
    if n == 0 {
        return Err(Error::EmptyAfterFilter(format!("no samples of {}", task)));
    }
    let correct: usize = classes.iter().zip(&confusion).map(|(&c, r)| r[correct_col(c)]).sum();
    let mut per_class_accuracy = BTreeMap::new();
    let mut present = Vec::new();
    let mut rows = Vec::new();
    for (&c, r) in classes.iter().zip(&confusion) {
        let count = r[0] + r[1];
        if count > 0 {
            per_class_accuracy.insert(c, r[correct_col(c)] as f64 / count as f64);
            present.push(c);
            rows.push(*r);
        }
    }
    Ok(EvalReport {
        task,
        n,
        overall_accuracy: correct as f64 / n as f64,
        per_class_accuracy,
        confusion: rows,
        classes: present,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
