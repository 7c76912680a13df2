//! Confusion matrices, per-class precision/recall/F1 and their text and
//! CSV renderings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Replaces the default numeric class names.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.len() {
            return Err(Error::Label(format!("{} names for {} classes", names.len(), self.len())));
        }
        self.class_names = names;
        Ok(self)
    }
}

/// Tallies `(truth[i], pred[i])` pairs over `n` classes named `0..n`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Label(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; n]; n];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n || p >= n {
            return Err(Error::Label(format!("label pair ({t}, {p}) out of range for {n} classes")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..n).map(|i| i.to_string()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (any 0/0 is 0), overall accuracy
/// and unweighted macro averages.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let n = cm.len();
    if n == 0 || cm.total() == 0 {
        return Err(Error::EmptyInput("classification_report"));
    }
    let mut classes = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let support: u64 = cm.counts[c].iter().sum();
        let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
        let (fp, fn_) = (predicted - tp, support - tp);
        classes.push(ClassMetrics {
            name: cm.class_names[c].clone(),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // Equal to 2PR/(P+R).
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            support,
        });
    }
    let trace: u64 = (0..n).map(|c| cm.counts[c][c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / n as f64;
    Ok(ClassificationReport {
        accuracy: ratio(trace, cm.total()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        total: cm.total(),
        classes,
    })
}

/// A rate in `[0,1]` as an integer percentage, rounded half up.
pub fn percent(rate: f64) -> String {
    // The epsilon absorbs binary representation error at exact halves.
    format!("{}%", (rate * 100.0 + 0.5 + 1e-9).floor() as i64)
}

/// Tab-separated table: one row per class, then accuracy and macro
/// average rows.
pub fn render_report(report: &ClassificationReport) -> String {
    let mut out = String::from("Sign\tPrecision\tRecall\tF1-Score\tSupport\n");
    for m in &report.classes {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            m.name,
            percent(m.precision),
            percent(m.recall),
            percent(m.f1),
            m.support
        ));
    }
    out.push_str(&format!("accuracy\t\t\t{}\t{}\n", percent(report.accuracy), report.total));
    out.push_str(&format!(
        "macro avg\t{}\t{}\t{}\t{}\n",
        percent(report.macro_precision),
        percent(report.macro_recall),
        percent(report.macro_f1),
        report.total
    ));
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with a header row of predicted classes and a leading column of
/// true classes.
pub fn render_matrix(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for name in &cm.class_names {
        out.push(',');
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    for (name, row) in cm.class_names.iter().zip(&cm.counts) {
        out.push_str(&csv_field(name));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Feedback band for a sign attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    Excellent,
    GoodJob,
    KeepPracticing,
}

impl Band {
    /// `grade >= 70` is excellent, `50..=69` good, anything lower needs practice.
    pub fn from_grade(grade: i32) -> Band {
        if grade >= 70 {
            Band::Excellent
        } else if grade >= 50 {
            Band::GoodJob
        } else {
            Band::KeepPracticing
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Excellent => "Excellent",
            Band::GoodJob => "Good Job",
            Band::KeepPracticing => "Keep practicing!",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `probability × 100` truncated toward zero, computed in `f32` like the
/// network output it grades.
pub fn grade(probability: f32) -> i32 {
    (probability * 100.0) as i32
}

/// Class indices ordered by descending probability, ties by lower index,
/// truncated to `k`.
pub fn top_k(probs: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut ranked: Vec<(usize, f32)> = probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeResult {
    pub predicted_label: String,
    pub grade: i32,
    pub band: Band,
    /// Runner-up label and its truncated percentage, when there is one.
    pub second_choice: Option<(String, i32)>,
}

impl GradeResult {
    pub fn new(probs: &[f32], class_names: &[String]) -> Result<Self> {
        if probs.is_empty() || probs.len() != class_names.len() {
            return Err(Error::Label(format!(
                "{} probabilities for {} classes",
                probs.len(),
                class_names.len()
            )));
        }
        let ranked = top_k(probs, 2);
        let (best, p) = ranked[0];
        let grade = grade(p);
        Ok(GradeResult {
            predicted_label: class_names[best].clone(),
            grade,
            band: Band::from_grade(grade),
            second_choice: ranked.get(1).map(|&(i, q)| (class_names[i].clone(), self::grade(q))),
        })
    }

    /// Label, `Sign Grade X:`, the grade and the band, one per line.
    pub fn render(&self) -> String {
        format!("{}\nSign Grade X:\n{}\n{}\n", self.predicted_label, self.grade, self.band)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn matrix_counts() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(cm.total(), 4);
        let perfect = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        assert!(confusion_matrix(&[0, 3], &[0, 0], 3).is_err());
        assert!(confusion_matrix(&[0], &[0, 0], 3).is_err());
    }

    #[test]
    fn table_viii_rows() {
        // One Punch-a-Creme clip is taken for Parang; everything else is right.
        let truth = [0, 0, 1, 1, 1, 1, 2, 2, 3, 3, 3];
        let pred = [0, 0, 1, 1, 1, 1, 2, 1, 3, 3, 3];
        let cm = confusion_matrix(&truth, &pred, 4)
            .unwrap()
            .with_names(names(&["Doubles", "Parang", "Punch-a-Creme", "Sorrel"]))
            .unwrap();
        let r = classification_report(&cm).unwrap();
        let punch = &r.classes[2];
        assert_eq!((punch.precision, punch.recall), (1.0, 0.5));
        let text = render_report(&r);
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 1 + 4 + 2);
        assert_eq!(rows[1], "Doubles\t100%\t100%\t100%\t2");
        assert_eq!(rows[2], "Parang\t80%\t100%\t89%\t4");
        assert_eq!(rows[3], "Punch-a-Creme\t100%\t50%\t67%\t2");
        assert_eq!(rows[4], "Sorrel\t100%\t100%\t100%\t3");
        assert_eq!(rows[5], "accuracy\t\t\t91%\t11");
    }

    #[test]
    fn zero_division_is_zero() {
        let cm = confusion_matrix(&[0, 0], &[0, 0], 2).unwrap();
        let r = classification_report(&cm).unwrap();
        let ghost = &r.classes[1];
        assert_eq!((ghost.precision, ghost.recall, ghost.f1, ghost.support), (0.0, 0.0, 0.0, 0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_precision, 0.5);
        assert!(classification_report(&confusion_matrix(&[], &[], 2).unwrap()).is_err());
        assert!(classification_report(&confusion_matrix(&[], &[], 0).unwrap()).is_err());
    }

    #[test]
    fn perfect_classifier_renders_full_marks() {
        let labels = [0, 1, 2, 3, 1];
        let cm = confusion_matrix(&labels, &labels, 4).unwrap();
        let text = render_report(&classification_report(&cm).unwrap());
        for line in text.lines().skip(1) {
            assert!(line.contains("100%") && !line.contains("\t0%"), "{line}");
        }
    }

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(percent(2.0 / 3.0), "67%");
        assert_eq!(percent(0.405), "41%");
        assert_eq!(percent(0.125), "13%");
        assert_eq!(percent(0.285), "29%");
        assert_eq!(percent(0.0), "0%");
        assert_eq!(percent(1.0), "100%");
        assert_eq!(percent(0.5 / 100.0), "1%");
        assert_eq!(percent(0.49 / 100.0), "0%");
    }

    #[test]
    fn matrix_csv() {
        let cm = confusion_matrix(&[0, 1], &[1, 1], 2)
            .unwrap()
            .with_names(names(&["a", "b,c"]))
            .unwrap();
        assert_eq!(render_matrix(&cm), "true\\predicted,a,\"b,c\"\na,0,1\n\"b,c\",0,1\n");
    }

    #[test]
    fn grade_bands() {
        let cases = [
            (0.99f32, 99, "Excellent"),
            (0.78, 78, "Excellent"),
            (0.70, 70, "Excellent"),
            (0.6999, 69, "Good Job"),
            (0.50, 50, "Good Job"),
            (0.499, 49, "Keep practicing!"),
            (1.0, 100, "Excellent"),
            (0.0, 0, "Keep practicing!"),
        ];
        for (p, g, band) in cases {
            assert_eq!(grade(p), g, "{p}");
            assert_eq!(Band::from_grade(g).as_str(), band);
        }
    }

    #[test]
    fn grade_output_layout() {
        let classes = names(&["Doubles", "Parang", "Punch-a-Creme", "Sorrel"]);
        let r = GradeResult::new(&[0.004, 0.99, 0.001, 0.005], &classes).unwrap();
        assert_eq!(r.render(), "Parang\nSign Grade X:\n99\nExcellent\n");
        assert_eq!(r.second_choice, Some(("Sorrel".to_string(), 0)));
        assert!(GradeResult::new(&[0.5], &classes).is_err());
    }

    #[test]
    fn top_k_orders_by_probability_then_index() {
        assert_eq!(top_k(&[0.2, 0.5, 0.2, 0.1], 4), vec![(1, 0.5), (0, 0.2), (2, 0.2), (3, 0.1)]);
        assert_eq!(top_k(&[0.2, 0.5], 1), vec![(1, 0.5)]);
        assert_eq!(top_k(&[0.2, 0.5], 5).len(), 2);
    }

    fn labelings() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..60).prop_flat_map(|n| (proptest::collection::vec(0usize..4, n), proptest::collection::vec(0usize..4, n)))
    }

    proptest! {
        #[test]
        fn report_invariants((truth, pred) in labelings()) {
            let cm = confusion_matrix(&truth, &pred, 4).unwrap();
            let r = classification_report(&cm).unwrap();
            prop_assert_eq!(r.classes.iter().map(|m| m.support).sum::<u64>(), truth.len() as u64);
            let weighted: f64 = r.classes.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / truth.len() as f64;
            prop_assert!((weighted - r.accuracy).abs() < 1e-12);
            for m in &r.classes {
                for v in [m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if m.precision > 0.0 && m.recall > 0.0 {
                    prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
                    prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                    let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                    prop_assert!((harmonic - m.f1).abs() < 1e-12);
                } else {
                    prop_assert_eq!(m.f1, 0.0);
                }
            }
            for line in render_report(&r).lines().skip(1).take(4) {
                let cells: Vec<&str> = line.split('\t').collect();
                let m = r.classes.iter().find(|m| m.name == cells[0]).unwrap();
                for (cell, v) in cells[1..4].iter().zip([m.precision, m.recall, m.f1]) {
                    let shown: f64 = cell.trim_end_matches('%').parse().unwrap();
                    prop_assert!((shown - v * 100.0).abs() <= 0.5 + 1e-9);
                }
            }
        }

        #[test]
        fn self_labeling_is_perfect(labels in proptest::collection::vec(0usize..4, 4..40)) {
            let mut labels = labels;
            labels[..4].copy_from_slice(&[0, 1, 2, 3]);
            let r = classification_report(&confusion_matrix(&labels, &labels, 4).unwrap()).unwrap();
            for m in &r.classes {
                prop_assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
            }
        }
    }
}
