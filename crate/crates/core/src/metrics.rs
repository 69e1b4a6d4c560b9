//! Confusion matrices, fault detection rate, false alarm rate and the
//! evaluation report.
//!
//! Rows are true classes, columns predicted classes. The detection rate of
//! class `i` is the fraction of true-`i` samples predicted as `i` (a recall).
//! The false alarm rate is the fraction of true-normal samples predicted as
//! any other class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{FddError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|j| self.get(truth, j)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, pred)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes).map(|i| self.get(i, i)).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// Tab-separated table with a header row of predicted classes.
    pub fn to_table(&self, names: &[String]) -> String {
        let mut s = String::from("true\\pred");
        for n in names {
            write!(s, "\t{n}").unwrap();
        }
        s.push('\n');
        for (i, n) in names.iter().enumerate() {
            s.push_str(n);
            for j in 0..self.classes {
                write!(s, "\t{}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Tallies `(truth, pred)` pairs into an `m × m` matrix.
pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(FddError::Input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(FddError::Input(format!("label pair ({t}, {p}) outside [0, {classes})")));
        }
        cm.record(t, p);
    }
    Ok(cm)
}

/// Fraction of true-`class` samples predicted as `class`.
pub fn fdr(cm: &ConfusionMatrix, class: usize) -> Result<f64> {
    let n = cm.row_sum(class);
    if n == 0 {
        return Err(FddError::UndefinedMetric(class));
    }
    Ok(cm.get(class, class) as f64 / n as f64)
}

/// Fraction of true-normal samples predicted as any other class, computed as
/// `1 - fdr(normal)` so the two-class identity holds bit for bit.
pub fn far(cm: &ConfusionMatrix, normal: usize) -> Result<f64> {
    Ok(1.0 - fdr(cm, normal)?)
}

/// `TP / (TP + FP)` read column-wise; `None` when nothing was predicted as
/// `class`.
pub fn precision(cm: &ConfusionMatrix, class: usize) -> Option<f64> {
    let n = cm.col_sum(class);
    (n > 0).then(|| cm.get(class, class) as f64 / n as f64)
}

/// Per-class figures in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRate {
    pub class: usize,
    pub name: String,
    pub support: u64,
    /// `None` when the class has no true samples.
    pub fdr: Option<f64>,
    pub precision: Option<f64>,
}

/// Full evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub horizon: usize,
    /// Class names, index-aligned with the confusion matrix.
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassRate>,
    pub normal_class: usize,
    pub far: Option<f64>,
    /// Classes averaged into `average_fdr`.
    pub average_over: Vec<usize>,
    pub average_fdr: Option<f64>,
    pub accuracy: f64,
}

impl EvalReport {
    /// Builds the report; `average_over` defaults to every non-normal class
    /// with support.
    pub fn build(
        confusion: ConfusionMatrix,
        class_names: Vec<String>,
        normal_class: usize,
        average_over: Option<Vec<usize>>,
        model_id: &str,
        dataset_id: &str,
        horizon: usize,
    ) -> Result<Self> {
        if class_names.len() != confusion.classes() {
            return Err(FddError::dim("one class name per confusion-matrix row required"));
        }
        let per_class: Vec<ClassRate> = (0..confusion.classes())
            .map(|c| ClassRate {
                class: c,
                name: class_names[c].clone(),
                support: confusion.row_sum(c),
                fdr: fdr(&confusion, c).ok(),
                precision: precision(&confusion, c),
            })
            .collect();
        let average_over = average_over.unwrap_or_else(|| {
            (0..confusion.classes())
                .filter(|&c| c != normal_class && confusion.row_sum(c) > 0)
                .collect()
        });
        let rates: Vec<f64> = average_over.iter().filter_map(|&c| per_class.get(c)?.fdr).collect();
        let average_fdr = (!rates.is_empty() && rates.len() == average_over.len())
            .then(|| rates.iter().sum::<f64>() / rates.len() as f64);
        Ok(Self {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            horizon,
            class_names,
            far: far(&confusion, normal_class).ok(),
            accuracy: confusion.accuracy(),
            confusion,
            per_class,
            normal_class,
            average_over,
            average_fdr,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| FddError::Input(format!("bad report: {e}")))
    }

    pub fn confusion_table(&self) -> String {
        self.confusion.to_table(&self.class_names)
    }

    /// Human-readable table: per-class detection rates, FAR and averages,
    /// percentages to two decimals.
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
        let mut s = String::new();
        writeln!(s, "model: {}  dataset: {}  horizon: {}", self.model_id, self.dataset_id, self.horizon).unwrap();
        writeln!(s, "{:<12} {:>8} {:>10} {:>10}", "class", "support", "FDR", "precision").unwrap();
        for r in &self.per_class {
            writeln!(
                s,
                "{:<12} {:>8} {:>10} {:>10}",
                r.name,
                r.support,
                pct(r.fdr),
                pct(r.precision)
            )
            .unwrap();
        }
        writeln!(s, "average FDR: {}", pct(self.average_fdr)).unwrap();
        writeln!(
            s,
            "FAR ({}): {}",
            self.class_names.get(self.normal_class).map_or("normal", String::as_str),
            pct(self.far)
        )
        .unwrap();
        writeln!(s, "accuracy: {}", pct(Some(self.accuracy))).unwrap();
        s
    }
}

/// Per-class FDR of several reports side by side, one column per model, with
/// average FDR and FAR rows. All reports must share the class alphabet.
pub fn comparison_table(reports: &[EvalReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| FddError::Input("no reports to compare".into()))?;
    if reports.iter().any(|r| r.class_names != first.class_names) {
        return Err(FddError::Input("reports use different class alphabets".into()));
    }
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut s = String::from("class");
    for r in reports {
        write!(s, "\t{}", r.model_id).unwrap();
    }
    s.push('\n');
    for (c, name) in first.class_names.iter().enumerate() {
        if c == first.normal_class {
            continue;
        }
        s.push_str(name);
        for r in reports {
            write!(s, "\t{}", pct(r.per_class[c].fdr)).unwrap();
        }
        s.push('\n');
    }
    s.push_str("average");
    for r in reports {
        write!(s, "\t{}", pct(r.average_fdr)).unwrap();
    }
    s.push_str("\nFAR");
    for r in reports {
        write!(s, "\t{}", pct(r.far)).unwrap();
    }
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn comparison_lists_faults_per_model() {
        let names: Vec<String> = ["normal", "f1", "f2"].iter().map(|s| s.to_string()).collect();
        let cm = confusion(&[0, 0, 1, 1, 2], &[0, 1, 1, 0, 2], 3).unwrap();
        let a = EvalReport::build(cm.clone(), names.clone(), 0, None, "a", "d", 4).unwrap();
        let b = EvalReport::build(confusion(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2], 3).unwrap(), names, 0, None, "b", "d", 4).unwrap();
        let t = comparison_table(&[a.clone(), b]).unwrap();
        assert_eq!(
            t,
            "class\ta\tb\nf1\t50.00\t100.00\nf2\t100.00\t100.00\naverage\t75.00\t100.00\nFAR\t50.00\t0.00\n"
        );
        let mut other = a.clone();
        other.class_names[2] = "x".into();
        assert!(comparison_table(&[a, other]).is_err());
        assert!(comparison_table(&[]).is_err());
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = vec![0, 1, 2, 2, 1, 0, 0];
        let cm = confusion(&t, &t, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.get(i, j), 0);
                }
            }
            assert_eq!(fdr(&cm, i).unwrap(), 1.0);
        }
        assert_eq!(far(&cm, 0).unwrap(), 0.0);
    }

    #[test]
    fn detection_rate_counts() {
        let mut truth = vec![4; 10];
        let mut pred = vec![4; 8];
        pred.extend([1, 2]);
        let cm = confusion(&truth, &pred, 5).unwrap();
        assert_eq!(fdr(&cm, 4).unwrap(), 0.8);

        truth = vec![3; 5];
        let cm = confusion(&truth, &[0; 5], 5).unwrap();
        assert_eq!(fdr(&cm, 3).unwrap(), 0.0);
        assert!(matches!(fdr(&cm, 1), Err(FddError::UndefinedMetric(1))));
    }

    #[test]
    fn false_alarm_counts() {
        let truth = vec![0; 100];
        let mut pred = vec![0; 97];
        pred.extend([3, 5, 5]);
        let cm = confusion(&truth, &pred, 6).unwrap();
        assert!((far(&cm, 0).unwrap() - 0.03).abs() < 1e-15);
        let cm = confusion(&[1, 2], &[1, 2], 3).unwrap();
        assert!(far(&cm, 0).is_err());
    }

    #[test]
    fn input_errors() {
        assert!(confusion(&[0, 1], &[0], 2).is_err());
        assert!(confusion(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn report_render_and_json() {
        let cm = confusion(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 0], 3).unwrap();
        let names = vec!["0".into(), "1".into(), "2".into()];
        let r = EvalReport::build(cm, names, 0, None, "m", "d", 10).unwrap();
        assert_eq!(r.far, Some(0.5));
        assert_eq!(r.average_over, vec![1, 2]);
        assert_eq!(r.average_fdr, Some(0.5));
        let text = r.render();
        assert!(text.contains("50.00%"));
        assert!(text.contains("100.00%"));
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert!(r.confusion_table().starts_with("true\\pred\t0\t1\t2\n0\t1\t1\t0\n"));
    }

    proptest! {
        #[test]
        fn two_class_far_is_one_minus_normal_fdr(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..200)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, 2).unwrap();
            if cm.row_sum(0) > 0 {
                prop_assert_eq!(far(&cm, 0).unwrap(), 1.0 - fdr(&cm, 0).unwrap());
            }
        }

        #[test]
        fn totals_survive_relabeling(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..100), shift in 0usize..4) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let perm = |c: usize| (c + shift) % 4;
            let a = confusion(&t, &p, 4).unwrap();
            let tt: Vec<_> = t.iter().map(|&c| perm(c)).collect();
            let pp: Vec<_> = p.iter().map(|&c| perm(c)).collect();
            let b = confusion(&tt, &pp, 4).unwrap();
            prop_assert_eq!(a.total(), b.total());
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert_eq!(a.get(i, j), b.get(perm(i), perm(j)));
                }
            }
        }
    }
}
