use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub iterations: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch gradient descent.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    classes: Vec<i64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `dim x classes`.
    weights: Matrix<f64>,
    bias: Vec<f64>,
    majority: i64,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl LinearClassifier {
    pub fn fit<T: Scalar>(
        e: &Matrix<T>,
        labels: &[i64],
        mask: &[bool],
        params: &ClassifierParams,
    ) -> Result<Self> {
        if labels.len() != e.rows() || mask.len() != e.rows() {
            return Err(Error::Dimension(format!(
                "{} rows, {} labels, {} mask entries",
                e.rows(),
                labels.len(),
                mask.len()
            )));
        }
        let rows: Vec<usize> = (0..e.rows()).filter(|&r| mask[r]).collect();
        if rows.is_empty() {
            return Err(Error::Classifier("training mask selects no nodes".into()));
        }
        let mut classes: Vec<i64> = rows.iter().map(|&r| labels[r]).collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Classifier(format!(
                "training set has a single class ({})",
                classes[0]
            )));
        }
        let majority = *classes
            .iter()
            .max_by_key(|&&c| {
                (
                    rows.iter().filter(|&&r| labels[r] == c).count(),
                    std::cmp::Reverse(c),
                )
            })
            .expect("at least two classes");

        let dim = e.cols();
        let nt = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for &r in &rows {
            for (m, x) in mean.iter_mut().zip(e.row(r)) {
                *m += x.as_f64() / nt;
            }
        }
        let mut scale = vec![0.0; dim];
        for &r in &rows {
            for ((s, x), m) in scale.iter_mut().zip(e.row(r)).zip(&mean) {
                *s += (x.as_f64() - m).powi(2) / nt;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut clf = Self {
            classes,
            mean,
            scale,
            weights: Matrix::zeros(dim, 0),
            bias: Vec::new(),
            majority,
        };
        let c = clf.classes.len();
        let x: Vec<Vec<f64>> = rows.iter().map(|&r| clf.standardize(e.row(r))).collect();
        let y: Vec<usize> = rows
            .iter()
            .map(|&r| clf.class_index(labels[r]).expect("seen"))
            .collect();
        let mut w = Matrix::<f64>::zeros(dim, c);
        let mut b = vec![0.0; c];
        let mut gw = Matrix::<f64>::zeros(dim, c);
        let mut gb = vec![0.0; c];
        let mut z = vec![0.0; c];
        for _ in 0..params.iterations {
            gw.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            for (xi, &yi) in x.iter().zip(&y) {
                z.copy_from_slice(&b);
                for (f, &xf) in xi.iter().enumerate() {
                    for (zc, wc) in z.iter_mut().zip(w.row(f)) {
                        *zc += xf * wc;
                    }
                }
                softmax_in_place(&mut z);
                z[yi] -= 1.0;
                for (f, &xf) in xi.iter().enumerate() {
                    for (g, zc) in gw.row_mut(f).iter_mut().zip(&z) {
                        *g += xf * zc / nt;
                    }
                }
                for (g, zc) in gb.iter_mut().zip(&z) {
                    *g += zc / nt;
                }
            }
            for (wv, gv) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *wv -= params.lr * (gv + 2.0 * params.l2 * *wv);
            }
            for (bv, gv) in b.iter_mut().zip(&gb) {
                *bv -= params.lr * gv;
            }
        }
        clf.weights = w;
        clf.bias = b;
        Ok(clf)
    }

    fn standardize<T: Scalar>(&self, row: &[T]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x.as_f64() - m) / s)
            .collect()
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn majority_class(&self) -> i64 {
        self.majority
    }

    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.classes.binary_search(&label).ok()
    }

    /// Argmax class for every row; ties go to the smaller label.
    pub fn predict<T: Scalar>(&self, e: &Matrix<T>) -> Vec<i64> {
        (0..e.rows())
            .map(|r| {
                let x = self.standardize(e.row(r));
                let mut z = self.bias.clone();
                for (f, xf) in x.iter().enumerate() {
                    for (zc, wc) in z.iter_mut().zip(self.weights.row(f)) {
                        *zc += xf * wc;
                    }
                }
                let best = z
                    .iter()
                    .enumerate()
                    .fold(0, |best, (c, &v)| if v > z[best] { c } else { best });
                self.classes[best]
            })
            .collect()
    }

    /// Accuracy over the masked rows. Labels never seen in training count as
    /// misclassified.
    pub fn accuracy<T: Scalar>(&self, e: &Matrix<T>, labels: &[i64], mask: &[bool]) -> Result<f64> {
        let unseen = self.classes.len();
        let pred: Vec<usize> = self
            .predict(e)
            .into_iter()
            .map(|l| self.class_index(l).expect("predicted labels are known"))
            .collect();
        let truth: Vec<usize> = labels
            .iter()
            .map(|&l| self.class_index(l).unwrap_or(unseen))
            .collect();
        accuracy(&pred, &truth, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_class_fits_perfectly() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = if i < 10 { 1.0 } else { -1.0 };
                vec![s * (1.0 + i as f64 * 0.1), 0.3 * i as f64]
            })
            .collect();
        let e = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<i64> = (0..20).map(|i| if i < 10 { 1 } else { -1 }).collect();
        let mask = vec![true; 20];
        let clf = LinearClassifier::fit(&e, &labels, &mask, &ClassifierParams::default()).unwrap();
        assert_eq!(clf.accuracy(&e, &labels, &mask).unwrap(), 1.0);
        assert_eq!(clf.classes(), &[-1, 1]);
    }

    #[test]
    fn single_class_is_rejected() {
        let e = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let r = LinearClassifier::fit(&e, &[3, 3], &[true, true], &ClassifierParams::default());
        assert!(matches!(r, Err(Error::Classifier(_))));
    }

    #[test]
    fn constant_feature_is_harmless() {
        let e = Matrix::from_rows(&[
            vec![1.0, 5.0],
            vec![-1.0, 5.0],
            vec![2.0, 5.0],
            vec![-2.0, 5.0],
        ])
        .unwrap();
        let labels = [0, 1, 0, 1];
        let clf =
            LinearClassifier::fit(&e, &labels, &[true; 4], &ClassifierParams::default()).unwrap();
        assert_eq!(clf.predict(&e), labels.to_vec());
    }
}
