//! Small numerically stable helpers shared by the loss and model code.

use ndarray::{Array1, Array2, ArrayView1};

pub fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(row);
    row.mapv(|v| (v - lse).exp())
}

pub fn log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(row);
    row.mapv(|v| v - lse)
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(array![1000.0, 1000.0].view());
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0].view()), 1);
    }

    #[test]
    fn population_std() {
        assert!((std_dev(&[1.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(std_dev(&[4.0]), 0.0);
    }
}
