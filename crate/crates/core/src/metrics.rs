//! Segmentation agreement metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel class indices in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    height: usize,
    width: usize,
    num_classes: usize,
    classes: Vec<u32>,
}

impl SegMap {
    pub fn new(height: usize, width: usize, num_classes: usize, classes: Vec<u32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Contract("a segmentation map needs at least one class".into()));
        }
        if classes.len() != height * width {
            return Err(Error::Shape(format!("{height}×{width} map with {} entries", classes.len())));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::Range {
                name: "class index",
                value: bad as f64,
                expected: "below num_classes",
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            classes,
        })
    }

    pub fn from_tensor(t: &Tensor, num_classes: usize) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("segmentation map must be H×W, got {:?}", t.dims())));
        }
        let classes = t.to_f64_vec().into_iter().map(|v| v as u32).collect();
        Self::new(t.dims()[0], t.dims()[1], num_classes, classes)
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check_pair(&self, other: &SegMap) -> Result<()> {
        if (self.height, self.width, self.num_classes) != (other.height, other.width, other.num_classes) {
            return Err(Error::Shape(format!(
                "{}×{} (K={}) vs {}×{} (K={})",
                self.height, self.width, self.num_classes, other.height, other.width, other.num_classes
            )));
        }
        Ok(())
    }
}

/// Mean IoU over classes that occur in `pred` or `gt`.
pub fn mean_iou(pred: &SegMap, gt: &SegMap) -> Result<f64> {
    pred.check_pair(gt)?;
    let k = pred.num_classes;
    let mut inter = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut gt_count = vec![0usize; k];
    for (&p, &g) in pred.classes.iter().zip(&gt.classes) {
        pred_count[p as usize] += 1;
        gt_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let (sum, n) = (0..k)
        .filter_map(|c| {
            let union = pred_count[c] + gt_count[c] - inter[c];
            (union > 0).then(|| inter[c] as f64 / union as f64)
        })
        .fold((0.0, 0usize), |(s, n), iou| (s + iou, n + 1));
    Ok(sum / n as f64)
}

pub fn pixel_accuracy(pred: &SegMap, gt: &SegMap) -> Result<f64> {
    pred.check_pair(gt)?;
    let hits = pred.classes.iter().zip(&gt.classes).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.classes.len() as f64)
}
