use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gold: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub negative_label: Option<String>,
    pub per_label: Vec<LabelCounts>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores predictions against gold labels.
///
/// A prediction counts toward precision unless it is the negative label; a
/// gold label counts toward recall unless it is the negative label. Zero
/// denominators give 0. Macro-F1 averages per-label F1 over non-negative
/// labels that occur in gold or predictions.
pub fn score(gold: &[usize], pred: &[usize], labels: &[String], negative: Option<usize>) -> EvalResult {
    assert_eq!(gold.len(), pred.len(), "gold and prediction lengths differ");
    let c = labels.len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut per_label: Vec<LabelCounts> = labels
        .iter()
        .map(|l| LabelCounts {
            label: l.clone(),
            ..Default::default()
        })
        .collect();
    let (mut tp, mut fp, mut fn_, mut correct) = (0, 0, 0, 0);
    for (&g, &p) in gold.iter().zip(pred) {
        confusion[g][p] += 1;
        per_label[g].gold += 1;
        per_label[p].predicted += 1;
        if g == p {
            correct += 1;
        }
        let p_pos = Some(p) != negative;
        let g_pos = Some(g) != negative;
        if p_pos {
            if p == g {
                tp += 1;
                per_label[p].tp += 1;
            } else {
                fp += 1;
                per_label[p].fp += 1;
            }
        }
        if g_pos && p != g {
            fn_ += 1;
            per_label[g].fn_ += 1;
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let macro_scores: Vec<f64> = per_label
        .iter()
        .enumerate()
        .filter(|&(i, l)| Some(i) != negative && (l.gold > 0 || l.predicted > 0))
        .map(|(_, l)| f1(ratio(l.tp, l.tp + l.fp), ratio(l.tp, l.tp + l.fn_)))
        .collect();
    let macro_f1 = if macro_scores.is_empty() {
        0.0
    } else {
        macro_scores.iter().sum::<f64>() / macro_scores.len() as f64
    };
    EvalResult {
        n: gold.len(),
        accuracy: ratio(correct, gold.len()),
        precision,
        recall,
        micro_f1: f1(precision, recall),
        macro_f1,
        negative_label: negative.map(|n| labels[n].clone()),
        per_label,
        confusion,
    }
}

impl EvalResult {
    pub fn summary(&self) -> String {
        format!(
            "n={} accuracy={:.4} precision={:.4} recall={:.4} micro_f1={:.4} macro_f1={:.4}",
            self.n, self.accuracy, self.precision, self.recall, self.micro_f1, self.macro_f1
        )
    }

    /// Confusion matrix as CSV, gold labels down the rows.
    pub fn confusion_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let labels: Vec<&str> = self.per_label.iter().map(|l| l.label.as_str()).collect();
        let mut header = vec!["gold\\predicted"];
        header.extend(&labels);
        w.write_record(&header).expect("in-memory write");
        for (label, row) in labels.iter().zip(&self.confusion) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        ["A", "B", "None"].iter().map(|s| s.to_string()).collect()
    }

    /// Hand count: tp = 2, fp = 2, fn = 1.
    #[test]
    fn confusion_example() {
        let r = score(&[0, 0, 1, 2], &[0, 1, 1, 0], &labels(), Some(2));
        assert_eq!(r.precision, 0.5);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.micro_f1 - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!((r.per_label[0].tp, r.per_label[0].fp, r.per_label[0].fn_), (1, 1, 1));
        assert_eq!(r.confusion[2][0], 1);
        // A: p=1/2 r=1/2 f=1/2; B: p=1/2 r=1 f=2/3
        assert!((r.macro_f1 - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let r = score(&[0, 1, 2], &[0, 1, 2], &labels(), Some(2));
        assert_eq!((r.accuracy, r.micro_f1, r.macro_f1), (1.0, 1.0, 1.0));
        let r = score(&[0, 1, 2], &[2, 2, 2], &labels(), Some(2));
        assert_eq!((r.precision, r.recall, r.micro_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_equals_accuracy_without_negative() {
        let gold = [0, 1, 2, 2, 1, 0, 0];
        let pred = [0, 2, 2, 1, 1, 0, 1];
        let r = score(&gold, &pred, &labels(), None);
        assert!((r.micro_f1 - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn unused_labels_skip_macro() {
        let r = score(&[0, 0], &[0, 0], &labels(), None);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn csv_quotes_labels() {
        let l = vec!["a,b".to_string(), "c".to_string()];
        let r = score(&[0, 1], &[1, 1], &l, None);
        let text = r.confusion_csv();
        assert!(text.starts_with("gold\\predicted,\"a,b\",c\n"));
        assert!(text.contains("\"a,b\",0,1\n"));
    }
}
