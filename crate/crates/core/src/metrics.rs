//! Regression and two-class classification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a < min {
        return Err(Error::invalid(format!("need at least {min} values, got {a}")));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len(), 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), gold.len(), 1)?;
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    check_lengths(pred.len(), gold.len(), 1)?;
    Ok(pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F1Average {
    #[default]
    Macro,
    /// Per-class F1 weighted by gold support.
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Result {
    pub value: f64,
    pub per_class: Vec<f64>,
    /// Classes absent from both gold and predictions (scored 0).
    pub absent: Vec<usize>,
}

/// F1 over class indices `0..num_classes`.
pub fn f1_score(pred: &[usize], gold: &[usize], num_classes: usize, average: F1Average) -> Result<F1Result> {
    check_lengths(pred.len(), gold.len(), 1)?;
    if let Some(&bad) = pred.iter().chain(gold).find(|&&c| c >= num_classes) {
        return Err(Error::invalid(format!("label {bad} outside {num_classes} classes")));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut absent = Vec::new();
    let mut support = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = pred.iter().zip(gold).filter(|&(&p, &g)| p == c && g == c).count();
        let np = pred.iter().filter(|&&p| p == c).count();
        let ng = gold.iter().filter(|&&g| g == c).count();
        if np == 0 && ng == 0 {
            absent.push(c);
        }
        per_class.push(if np + ng == 0 { 0.0 } else { 2.0 * tp as f64 / (np + ng) as f64 });
        support.push(ng);
    }
    let value = match average {
        F1Average::Macro => per_class.iter().sum::<f64>() / num_classes as f64,
        F1Average::Weighted => {
            per_class.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / gold.len() as f64
        }
    };
    Ok(F1Result {
        value,
        per_class,
        absent,
    })
}

/// Macro F1 over the two entailment classes.
pub fn macro_f1(pred: &[usize], gold: &[usize]) -> Result<f64> {
    Ok(f1_score(pred, gold, 2, F1Average::Macro)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionReport {
    /// NaN when either side is constant.
    pub pearson: f64,
    pub mse: f64,
    pub n: usize,
}

impl RegressionReport {
    pub fn compute(pred: &[f64], gold: &[f64]) -> Result<Self> {
        Ok(Self {
            pearson: match pearson(pred, gold) {
                Err(Error::ZeroVariance) => f64::NAN,
                r => r?,
            },
            mse: mse(pred, gold)?,
            n: pred.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub f1: f64,
    /// `confusion[gold][pred]`.
    pub confusion: [[usize; 2]; 2],
    pub absent_classes: Vec<usize>,
}

impl ClassificationReport {
    pub fn compute(pred: &[usize], gold: &[usize], average: F1Average) -> Result<Self> {
        let f1 = f1_score(pred, gold, 2, average)?;
        let mut confusion = [[0; 2]; 2];
        for (&p, &g) in pred.iter().zip(gold) {
            confusion[g][p] += 1;
        }
        Ok(Self {
            accuracy: accuracy(pred, gold)?,
            f1: f1.value,
            confusion,
            absent_classes: f1.absent,
        })
    }
}

/// Flat `key=value` lines followed by a tab-separated header and row in
/// the order Pearson, MSE, Accuracy, F1 (missing metrics left empty).
pub fn metrics_report(reg: Option<&RegressionReport>, cls: Option<&ClassificationReport>) -> String {
    let mut out = String::new();
    if let Some(r) = reg {
        let _ = write!(out, "pearson={:.6}\nmse={:.6}\nn={}\n", r.pearson, r.mse, r.n);
    }
    if let Some(c) = cls {
        let _ = write!(out, "accuracy={:.6}\nf1={:.6}\n", c.accuracy, c.f1);
        let _ = writeln!(
            out,
            "confusion={},{},{},{}",
            c.confusion[0][0], c.confusion[0][1], c.confusion[1][0], c.confusion[1][1]
        );
        if !c.absent_classes.is_empty() {
            let absent: Vec<String> = c.absent_classes.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "absent_classes={}", absent.join(","));
        }
    }
    out += &metrics_row(reg, cls);
    out
}

/// Header plus one row: `pearson mse accuracy f1`.
pub fn metrics_row(reg: Option<&RegressionReport>, cls: Option<&ClassificationReport>) -> String {
    let f = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    format!(
        "pearson\tmse\taccuracy\tf1\n{}\t{}\t{}\t{}\n",
        f(reg.map(|r| r.pearson)),
        f(reg.map(|r| r.mse)),
        f(cls.map(|c| c.accuracy)),
        f(cls.map(|c| c.f1))
    )
}
