use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-pixel softmax cross-entropy averaged over non-ignored pixels.
///
/// Returns the loss and its gradient with respect to the logits. Ignored
/// pixels contribute nothing; if every pixel is ignored the loss is 0.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &LabelMap, ignore_label: u32) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if labels.shape() != (s.n, s.h, s.w) {
        return Err(Error::data(format!(
            "labels {:?} do not match logits {s}",
            labels.shape()
        )));
    }
    let classes = s.c as u32;
    let mut scored = 0usize;
    for (i, &l) in labels.data().iter().enumerate() {
        if l == ignore_label {
            continue;
        }
        if l >= classes {
            return Err(Error::data(format!("label {l} at pixel {i} outside 0..{classes}")));
        }
        scored += 1;
    }
    let mut grad = Tensor::zeros(s)?;
    if scored == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / scored as f64;
    let plane = s.plane();
    let x = logits.data();
    let g = grad.data_mut();
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; s.c];
    for n in 0..s.n {
        for p in 0..plane {
            let label = labels.data()[n * plane + p];
            if label == ignore_label {
                continue;
            }
            let base = n * s.c * plane + p;
            let mut max = f64::NEG_INFINITY;
            for c in 0..s.c {
                max = max.max(x[base + c * plane].as_f64());
            }
            let mut sum = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (x[base + c * plane].as_f64() - max).exp();
                sum += *pr;
            }
            let label = label as usize;
            total += sum.ln() - (x[base + label * plane].as_f64() - max);
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                g[base + c * plane] = T::of((pr / sum - onehot) * inv);
            }
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::IGNORE_LABEL;

    #[test]
    fn uniform_logits_cost_ln_c() {
        let logits = Tensor::<f64>::fill(Shape::new(1, 5, 2, 2).unwrap(), 0.3).unwrap();
        let labels = LabelMap::new(1, 2, 2, vec![0, 1, 4, 2]).unwrap();
        let (loss, _) = softmax_xent(&logits, &labels, IGNORE_LABEL).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let logits = Tensor::<f32>::from_vec(Shape::new(1, 2, 1, 1).unwrap(), vec![50.0, -50.0]).unwrap();
        let labels = LabelMap::new(1, 1, 1, vec![0]).unwrap();
        let (loss, grad) = softmax_xent(&logits, &labels, IGNORE_LABEL).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn ignored_pixels_have_zero_grad() {
        let logits = Tensor::<f64>::random(Shape::new(1, 3, 1, 2).unwrap(), 1, -1.0, 1.0).unwrap();
        let labels = LabelMap::new(1, 1, 2, vec![IGNORE_LABEL, 1]).unwrap();
        let (_, grad) = softmax_xent(&logits, &labels, IGNORE_LABEL).unwrap();
        for c in 0..3 {
            assert_eq!(grad.at(0, c, 0, 0), 0.0);
        }
        let sum: f64 = (0..3).map(|c| grad.at(0, c, 0, 1)).sum();
        assert!(sum.abs() < 1e-15);

        let all = LabelMap::filled(1, 1, 2, IGNORE_LABEL).unwrap();
        let (loss, grad) = softmax_xent(&logits, &all, IGNORE_LABEL).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_labels_are_data_errors() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1).unwrap()).unwrap();
        let labels = LabelMap::new(1, 1, 1, vec![2]).unwrap();
        assert!(matches!(softmax_xent(&logits, &labels, IGNORE_LABEL), Err(Error::Data(_))));
        let wrong = LabelMap::new(1, 1, 2, vec![0, 0]).unwrap();
        assert!(softmax_xent(&logits, &wrong, IGNORE_LABEL).is_err());
    }
}
