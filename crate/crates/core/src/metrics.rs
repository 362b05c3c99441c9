//! Confusion matrix and IoU / accuracy summaries.

use crate::error::{Error, Result};

/// `K x K` counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.k {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.k,
                });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    /// Adds aligned label arrays, skipping points whose truth is `ignore`.
    pub fn add_all(&mut self, truth: &[usize], pred: &[usize], ignore: Option<usize>) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if Some(t) != ignore {
                self.add(t, p)?;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidArgument("class counts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_total(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    fn col_total(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `TP / (TP + FP + FN)`, 0 when the denominator is 0.
    pub iou: Vec<f64>,
    /// Per-class recall; `None` for classes absent from the ground truth.
    pub accuracy: Vec<Option<f64>>,
    /// Ground-truth points per class.
    pub support: Vec<u64>,
    /// Mean IoU over all classes, including zero-denominator ones.
    pub miou: f64,
    /// Mean recall over classes present in the ground truth.
    pub macc: f64,
}

pub fn compute_iou(cm: &ConfusionMatrix) -> IouReport {
    let k = cm.num_classes();
    let mut iou = Vec::with_capacity(k);
    let mut accuracy = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let row = cm.row_total(c);
        let denom = row + cm.col_total(c) - tp;
        iou.push(if denom == 0 { 0.0 } else { tp as f64 / denom as f64 });
        accuracy.push((row > 0).then(|| tp as f64 / row as f64));
        support.push(row);
    }
    let miou = if k == 0 { 0.0 } else { iou.iter().sum::<f64>() / k as f64 };
    let present: Vec<f64> = accuracy.iter().flatten().copied().collect();
    let macc = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    IouReport {
        iou,
        accuracy,
        support,
        miou,
        macc,
    }
}

impl IouReport {
    /// `class,iou,accuracy,points` rows in class order, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,iou,accuracy,points\n");
        for c in 0..self.iou.len() {
            let acc = self.accuracy[c].map_or(String::new(), |a| format!("{a:.6}"));
            s.push_str(&format!("{c},{:.6},{acc},{}\n", self.iou[c], self.support[c]));
        }
        s.push_str(&format!(
            "mean,{:.6},{:.6},{}\n",
            self.miou,
            self.macc,
            self.support.iter().sum::<u64>()
        ));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6} {:>8} {:>8} {:>10}\n", "class", "IoU", "acc", "points");
        for c in 0..self.iou.len() {
            let acc = self.accuracy[c].map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
            s.push_str(&format!(
                "{c:>6} {:>8.2} {acc:>8} {:>10}\n",
                100.0 * self.iou[c],
                self.support[c]
            ));
        }
        s.push_str(&format!("  mIoU {:.2}  mAcc {:.2}\n", 100.0 * self.miou, 100.0 * self.macc));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_two_class() {
        let cm = ConfusionMatrix::from_counts(&[vec![5, 0], vec![0, 7]]).unwrap();
        let r = compute_iou(&cm);
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.macc, 1.0);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let cm = ConfusionMatrix::from_counts(&[vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 0]]).unwrap();
        let r = compute_iou(&cm);
        assert_eq!(r.iou[2], 0.0);
        assert!((r.miou - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy[2], None);
        assert_eq!(r.macc, 1.0);
    }

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix::from_counts(&[vec![3, 1], vec![2, 4]]).unwrap();
        let r = compute_iou(&cm);
        assert!((r.iou[0] - 0.5).abs() < 1e-15);
        assert!((r.iou[1] - 4.0 / 7.0).abs() < 1e-15);
        assert!((r.miou - 0.535_714_285_714_285_7).abs() < 1e-12);
        let csv = r.to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "class,iou,accuracy,points");
        assert!(rows[1].starts_with("0,") && rows[2].starts_with("1,"));
    }

    #[test]
    fn add_checks_range_and_ignore() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.add(2, 0).is_err());
        cm.add_all(&[0, 1, 9], &[0, 0, 1], Some(9)).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.get(1, 0), 1);
    }
}
