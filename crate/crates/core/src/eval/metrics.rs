use serde::Serialize;

use super::EvalError;

/// Binary confusion counts; class 1 (like) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[usize], truth: &[usize]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == 1, t == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }

    /// The same counts with class 0 as the positive class.
    pub fn flipped(&self) -> Self {
        Confusion { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }

    pub fn f1_positive(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    pub fn f1_negative(&self) -> f64 {
        self.flipped().f1_positive()
    }

    pub fn macro_f1(&self) -> f64 {
        0.5 * (self.f1_positive() + self.f1_negative())
    }

    pub fn failures(&self) -> u64 {
        self.fp + self.fn_
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

/// `2PR / (P + R)`, zero when `P + R = 0`.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("rmse of no values".into()));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Index of the larger of each probability pair.
pub fn argmax2<T: PartialOrd + Copy>(probs: &[T]) -> Vec<usize> {
    probs.chunks_exact(2).map(|p| usize::from(p[1] > p[0])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1(10, 0, 0), 1.0);
        assert_eq!(f1(0, 5, 5), 0.0);
        assert_eq!(f1(0, 0, 0), 0.0);
        assert!((f1(6, 2, 4) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let d = rmse(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn majority_classifier_macro_f1() {
        // 33.5% class 0, everything predicted as class 1
        let truth: Vec<usize> = (0..1000).map(|i| usize::from(i >= 335)).collect();
        let c = Confusion::from_predictions(&vec![1; 1000], &truth).unwrap();
        assert!((c.accuracy() - 0.665).abs() < 1e-12);
        let expected = 0.5 * (2.0 * 0.665 / 1.665);
        assert!((c.macro_f1() - expected).abs() < 1e-12);
        assert!((c.macro_f1() - 0.399).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn f1_is_invariant_under_duplication(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            prop_assert!((f1(tp, fp, fn_) - f1(2 * tp, 2 * fp, 2 * fn_)).abs() < 1e-12);
            let v = f1(tp, fp, fn_);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
