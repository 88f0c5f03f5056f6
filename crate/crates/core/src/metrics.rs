//! Pixel confusion counts and mean intersection-over-union.

use std::fmt;
use std::ops::AddAssign;

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// `counts[gt * classes + pred]`; rows are ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count every pixel whose ground truth is not `ignore_label`.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, ignore_label: u32) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(Error::data(format!(
                "prediction {:?} and ground truth {:?} differ in shape",
                pred.shape(),
                gt.shape()
            )));
        }
        let k = self.classes as u32;
        // Validate first so a bad map leaves the matrix untouched.
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if g == ignore_label {
                continue;
            }
            if g >= k || p >= k {
                return Err(Error::data(format!(
                    "pixel {i}: class (gt {g}, pred {p}) outside 0..{k}"
                )));
            }
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != ignore_label {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn mean_iou(&self) -> IouReport {
        let k = self.classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
                let fp: u64 = (0..k).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
        if scored.is_empty() {
            return IouReport {
                mean: 0.0,
                per_class: Vec::new(),
            };
        }
        IouReport {
            mean: scored.iter().sum::<f64>() / scored.len() as f64,
            per_class,
        }
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "merging matrices of different class counts");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    pub mean: f64,
    /// `None` for classes that never occur in either prediction or ground
    /// truth; those are left out of the mean. Empty when every class is.
    pub per_class: Vec<Option<f64>>,
}

impl IouReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,iou\n");
        for (c, iou) in self.per_class.iter().enumerate() {
            match iou {
                Some(v) => s.push_str(&format!("{c},{v:.6}\n")),
                None => s.push_str(&format!("{c},\n")),
            }
        }
        s.push_str(&format!("mean,{:.6}\n", self.mean));
        s
    }
}

impl fmt::Display for IouReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>8}", "class", "IoU")?;
        for (c, iou) in self.per_class.iter().enumerate() {
            match iou {
                Some(v) => writeln!(f, "{c:>8}  {v:>8.4}")?,
                None => writeln!(f, "{c:>8}  {:>8}", "-")?,
            }
        }
        writeln!(f, "{:>8}  {:>8.4}", "mean", self.mean)
    }
}
