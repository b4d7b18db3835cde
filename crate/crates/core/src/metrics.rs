//! Confusion matrix, overall accuracy, average accuracy and Cohen's kappa
//! for binary maps.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Joint probabilities `p[i][j]`: class `i` predicted while class `j` is
/// the truth. `counts` is kept when the matrix was tabulated from maps so
/// the metrics can be computed with exact integer arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    p: [[f64; 2]; 2],
    counts: Option<[[u64; 2]; 2]>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Result<Self> {
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return Err(Error::contract("confusion matrix needs at least one pixel"));
        }
        let t = total as f64;
        let p = counts.map(|row| row.map(|c| c as f64 / t));
        Ok(ConfusionMatrix {
            p,
            counts: Some(counts),
        })
    }

    /// Builds a matrix directly from joint probabilities.
    pub fn from_probabilities(p: [[f64; 2]; 2]) -> Result<Self> {
        if p.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::contract(
                "probabilities must be finite and non-negative",
            ));
        }
        let sum: f64 = p.iter().flatten().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(ConfusionMatrix { p, counts: None })
    }

    pub fn probabilities(&self) -> [[f64; 2]; 2] {
        self.p
    }

    pub fn counts(&self) -> Option<[[u64; 2]; 2]> {
        self.counts
    }

    pub fn total(&self) -> Option<u64> {
        self.counts.map(|c| c.iter().flatten().sum())
    }

    /// Adds the counts of another tabulated matrix.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<Self> {
        match (self.counts, other.counts) {
            (Some(a), Some(b)) => {
                let mut c = a;
                for i in 0..2 {
                    for j in 0..2 {
                        c[i][j] += b[i][j];
                    }
                }
                ConfusionMatrix::from_counts(c)
            }
            _ => Err(Error::contract("only count-based matrices can be merged")),
        }
    }

    /// Prediction-side marginal `P_i.`.
    pub fn pred_marginal(&self, i: usize) -> f64 {
        self.p[i][0] + self.p[i][1]
    }

    /// Truth-side marginal `P_.j`.
    pub fn actual_marginal(&self, j: usize) -> f64 {
        self.p[0][j] + self.p[1][j]
    }
}

/// Tabulates `pred` against `gt`, skipping pixels where `valid` is false.
pub fn confusion(
    pred: &Array2<u8>,
    gt: &Array2<u8>,
    valid: Option<&Array2<bool>>,
) -> Result<ConfusionMatrix> {
    if pred.dim() != gt.dim() {
        return Err(Error::contract(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dim(),
            gt.dim()
        )));
    }
    if let Some(v) = valid {
        if v.dim() != gt.dim() {
            return Err(Error::contract("validity mask shape mismatch"));
        }
    }
    let mut counts = [[0u64; 2]; 2];
    for ((idx, &p), &g) in pred.indexed_iter().zip(gt.iter()) {
        if valid.is_some_and(|v| !v[idx]) {
            continue;
        }
        if p > 1 || g > 1 {
            return Err(Error::contract("maps must be binary"));
        }
        counts[p as usize][g as usize] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

/// Overall accuracy in percent.
pub fn oa(cm: &ConfusionMatrix) -> f64 {
    match cm.counts {
        Some(c) => {
            let total: u64 = c.iter().flatten().sum();
            100.0 * (c[0][0] + c[1][1]) as f64 / total as f64
        }
        None => 100.0 * (cm.p[0][0] + cm.p[1][1]),
    }
}

/// Which marginal divides the diagonal in [`aa_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AaMarginal {
    /// Per-class recall: `P_nn / P_.n`.
    #[default]
    Actual,
    /// Literal prediction-side reading: `P_nn / P_n.`.
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AverageAccuracy {
    pub percent: f64,
    /// Set when a class had zero marginal mass and was left out.
    pub degenerate: bool,
}

pub fn aa_with(cm: &ConfusionMatrix, marginal: AaMarginal) -> AverageAccuracy {
    let mut sum = 0.0;
    let mut present = 0usize;
    for n in 0..2 {
        let (diag, denom) = match cm.counts {
            Some(c) => {
                let d = match marginal {
                    AaMarginal::Actual => c[0][n] + c[1][n],
                    AaMarginal::Predicted => c[n][0] + c[n][1],
                };
                (c[n][n] as f64, d as f64)
            }
            None => {
                let d = match marginal {
                    AaMarginal::Actual => cm.actual_marginal(n),
                    AaMarginal::Predicted => cm.pred_marginal(n),
                };
                (cm.p[n][n], d)
            }
        };
        if denom > 0.0 {
            sum += diag / denom;
            present += 1;
        }
    }
    AverageAccuracy {
        percent: if present == 0 {
            0.0
        } else {
            100.0 * sum / present as f64
        },
        degenerate: present < 2,
    }
}

/// Average accuracy in percent, as the mean of per-class recalls.
pub fn aa(cm: &ConfusionMatrix) -> f64 {
    aa_with(cm, AaMarginal::Actual).percent
}

/// Cohen's kappa; 0 when chance agreement is already 1.
pub fn kappa(cm: &ConfusionMatrix) -> f64 {
    if let Some(c) = cm.counts {
        // integer form: (N*agree - sum_n row_n*col_n) / (N^2 - sum_n row_n*col_n)
        let n: u128 = c.iter().flatten().map(|&v| v as u128).sum();
        let agree = (c[0][0] + c[1][1]) as u128;
        let chance: u128 = (0..2)
            .map(|k| (c[k][0] + c[k][1]) as u128 * (c[0][k] + c[1][k]) as u128)
            .sum();
        let denom = n * n - chance;
        if denom == 0 {
            return 0.0;
        }
        let num = (n * agree) as i128 - chance as i128;
        return num as f64 / denom as f64;
    }
    let po = cm.p[0][0] + cm.p[1][1];
    let pe: f64 = (0..2)
        .map(|k| cm.pred_marginal(k) * cm.actual_marginal(k))
        .sum();
    if pe >= 1.0 {
        return 0.0;
    }
    (po - pe) / (1.0 - pe)
}

/// One named row of a metrics report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub degenerate: bool,
}

impl MetricsRow {
    pub fn new(name: impl Into<String>, cm: &ConfusionMatrix) -> Self {
        Self::with_marginal(name, cm, AaMarginal::Actual)
    }

    pub fn with_marginal(name: impl Into<String>, cm: &ConfusionMatrix, m: AaMarginal) -> Self {
        let a = aa_with(cm, m);
        MetricsRow {
            name: name.into(),
            oa: oa(cm),
            aa: a.percent,
            kappa: kappa(cm),
            degenerate: a.degenerate,
        }
    }
}

/// CSV with one line per method: `method,oa,aa,kappa`.
pub fn report_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,oa,aa,kappa\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.9}", r.name, r.oa, r.aa, r.kappa);
    }
    s
}

/// Aligned table with metrics as rows and methods as columns.
pub fn report_table(rows: &[MetricsRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<6}", "Metric");
    for r in rows {
        let _ = write!(s, " {:>width$}", r.name);
    }
    s.push('\n');
    let lines: [(&str, fn(&MetricsRow) -> String); 3] = [
        ("OA", |r| format!("{:.2}", r.oa)),
        ("AA", |r| {
            format!("{:.2}{}", r.aa, if r.degenerate { "*" } else { "" })
        }),
        ("kappa", |r| format!("{:.3}", r.kappa)),
    ];
    for (label, f) in lines {
        let _ = write!(s, "{label:<6}");
        for r in rows {
            let _ = write!(s, " {:>width$}", f(r));
        }
        s.push('\n');
    }
    if rows.iter().any(|r| r.degenerate) {
        s.push_str("* a class is absent; AA averages the present class only\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_four_pixels() {
        let gt = array![[0u8, 1], [1, 0]];
        let cm = confusion(&gt, &gt, None).unwrap();
        assert_eq!(cm.probabilities(), [[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(oa(&cm), 100.0);
        assert_eq!(aa(&cm), 100.0);
        assert_eq!(kappa(&cm), 1.0);
    }

    #[test]
    fn all_positive_prediction() {
        let gt = array![[0u8, 1], [1, 0]];
        let pred = Array2::from_elem((2, 2), 1u8);
        let cm = confusion(&pred, &gt, None).unwrap();
        assert_eq!(cm.probabilities(), [[0.0, 0.0], [0.5, 0.5]]);
        assert_eq!(cm.total(), Some(4));
        assert_eq!(kappa(&cm), 0.0);
    }

    #[test]
    fn textbook_case() {
        let cm = ConfusionMatrix::from_counts([[4, 1], [1, 4]]).unwrap();
        assert_eq!(oa(&cm), 80.0);
        assert_eq!(aa(&cm), 80.0);
        assert_eq!(kappa(&cm), 0.6);
        let cm = ConfusionMatrix::from_probabilities([[0.4, 0.1], [0.1, 0.4]]).unwrap();
        assert!((oa(&cm) - 80.0).abs() < 1e-12);
        assert!((kappa(&cm) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn validity_mask_and_errors() {
        let gt = array![[0u8, 1], [1, 0]];
        let none = Array2::from_elem((2, 2), false);
        assert!(confusion(&gt, &gt, Some(&none)).is_err());
        let one = array![[true, false], [false, false]];
        assert_eq!(confusion(&gt, &gt, Some(&one)).unwrap().total(), Some(1));
        assert!(confusion(&gt, &array![[0u8]], None).is_err());
    }

    #[test]
    fn degenerate_class() {
        let gt = Array2::from_elem((2, 2), 1u8);
        let cm = confusion(&gt, &gt, None).unwrap();
        let a = aa_with(&cm, AaMarginal::Actual);
        assert!(a.degenerate);
        assert_eq!(a.percent, 100.0);
        assert_eq!(kappa(&cm), 0.0);
    }

    #[test]
    fn aa_marginals_differ() {
        let cm = ConfusionMatrix::from_counts([[3, 0], [2, 5]]).unwrap();
        // recalls: 3/5, 5/5; precisions: 3/3, 5/7
        assert!((aa_with(&cm, AaMarginal::Actual).percent - 80.0).abs() < 1e-12);
        let p = aa_with(&cm, AaMarginal::Predicted).percent;
        assert!((p - 100.0 * (1.0 + 5.0 / 7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn relabel_invariance() {
        let cm = ConfusionMatrix::from_counts([[7, 2], [3, 11]]).unwrap();
        let sw = ConfusionMatrix::from_counts([[11, 3], [2, 7]]).unwrap();
        assert_eq!(oa(&cm), oa(&sw));
        assert!((aa(&cm) - aa(&sw)).abs() < 1e-12);
        assert!((kappa(&cm) - kappa(&sw)).abs() < 1e-12);
    }

    #[test]
    fn report_layout() {
        let cm = ConfusionMatrix::from_counts([[4, 1], [1, 4]]).unwrap();
        let rows = vec![MetricsRow::new("model", &cm)];
        let csv = report_csv(&rows);
        assert!(csv.starts_with("method,oa,aa,kappa\nmodel,80.000000,80.000000,0.6"));
        let t = report_table(&rows);
        assert!(t.contains("OA") && t.contains("80.00") && t.contains("0.600"));
    }
}
