//! Ridge regression with an unpenalized intercept, k-fold selection of the
//! regularization strength, and the lower weighted median.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("design matrix is {rows}x{cols} but {values} values were given")]
    Shape { rows: usize, cols: usize, values: usize },
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("normal equations are singular at alpha = 0; use a positive alpha")]
    Singular,
    #[error("cross-validation needs k >= 2 and n >= k (k = {k}, n = {n})")]
    BadFolds { k: usize, n: usize },
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("weighted median needs non-empty values and weights of equal length")]
    BadMedianInput,
    #[error("weights must be finite and non-negative")]
    NegativeWeight,
    #[error("total weight is zero")]
    ZeroWeight,
}

/// Row-major `n × m` matrix of member predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(NumericsError::Shape { rows, cols, values: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("design matrix"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NumericsError::Dimension { expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>, NumericsError> {
        if x.cols() != self.weights.len() {
            return Err(NumericsError::Dimension { expected: self.weights.len(), got: x.cols() });
        }
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }
}

/// In-place Cholesky of a symmetric matrix (lower triangle). Fails when a
/// pivot is not safely positive relative to the largest diagonal entry.
fn cholesky(a: &mut [f64], m: usize) -> Result<(), NumericsError> {
    let scale = (0..m).map(|i| a[i * m + i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13 + f64::MIN_POSITIVE;
    for j in 0..m {
        let mut d = a[j * m + j];
        for p in 0..j {
            d -= a[j * m + p] * a[j * m + p];
        }
        if d.is_nan() || d <= tol {
            return Err(NumericsError::Singular);
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for p in 0..j {
                s -= a[i * m + p] * a[j * m + p];
            }
            a[i * m + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * m + p] * b[p];
        }
        b[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for p in i + 1..m {
            s -= l[p * m + i] * b[p];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Fits `y ≈ intercept + X·w` minimizing `‖yᶜ − Xᶜw‖² + α‖w‖²` on
/// mean-centered data.
pub fn ridge_fit(x: &DesignMatrix, y: &[f64], alpha: f64) -> Result<RidgeModel, NumericsError> {
    let (n, m) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(NumericsError::Dimension { expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(NumericsError::TooFewRows { need: 2, got: n });
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(NumericsError::BadAlpha(alpha));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("targets"));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..m).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;

    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut centered = vec![0.0; m];
    for (i, &yi) in y.iter().enumerate() {
        for j in 0..m {
            centered[j] = x.get(i, j) - x_mean[j];
        }
        let yc = yi - y_mean;
        for a in 0..m {
            rhs[a] += centered[a] * yc;
            for b in 0..=a {
                gram[a * m + b] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..m {
        gram[a * m + a] += alpha;
        for b in 0..a {
            gram[b * m + a] = gram[a * m + b];
        }
    }
    cholesky(&mut gram, m)?;
    cholesky_solve(&gram, m, &mut rhs);
    let weights = rhs;
    let intercept = y_mean - x_mean.iter().zip(&weights).map(|(mu, w)| mu * w).sum::<f64>();
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(NumericsError::NonFinite("solution"));
    }
    Ok(RidgeModel { weights, intercept, alpha })
}

/// Contiguous folds over a seeded shuffle of `0..n`. The first `n % k` folds
/// carry one extra item.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, NumericsError> {
    if k < 2 || n < k {
        return Err(NumericsError::BadFolds { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub best_alpha: f64,
    /// `(alpha, mean held-out squared error)` in the caller's grid order.
    pub errors: Vec<(f64, f64)>,
}

/// Picks the alpha with the lowest mean held-out squared error. Ties, up to
/// a relative 1e-12, go to the larger alpha.
pub fn cv_select_alpha(
    x: &DesignMatrix,
    y: &[f64],
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvSelection, NumericsError> {
    if grid.is_empty() {
        return Err(NumericsError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(NumericsError::BadAlpha(bad));
    }
    if y.len() != x.rows() {
        return Err(NumericsError::Dimension { expected: x.rows(), got: y.len() });
    }
    let folds = fold_assignment(x.rows(), k, seed)?;

    let mut errors = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let mut total = 0.0;
        for held in &folds {
            let mut is_held = vec![false; x.rows()];
            for &i in held {
                is_held[i] = true;
            }
            let train: Vec<usize> = (0..x.rows()).filter(|&i| !is_held[i]).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = ridge_fit(&xt, &yt, alpha)?;
            let sse: f64 = held
                .iter()
                .map(|&i| (model.predict_row(x.row(i)) - y[i]).powi(2))
                .sum();
            total += sse / held.len() as f64;
        }
        errors.push((alpha, total / folds.len() as f64));
    }

    let min_err = errors.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let best_alpha = errors
        .iter()
        .filter(|(_, e)| (e - min_err).abs() <= 1e-12 * min_err.abs().max(f64::MIN_POSITIVE))
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CvSelection { best_alpha, errors })
}

/// Lower weighted median: the smallest value whose cumulative weight reaches
/// half the total.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64, NumericsError> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(NumericsError::BadMedianInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("values"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(NumericsError::NegativeWeight);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(NumericsError::ZeroWeight);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let half = total / 2.0;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= half {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("non-empty")])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_exact_line() {
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = ridge_fit(&x, &[1.0, 2.0], 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ridge_scalar_shrinkage() {
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let m = ridge_fit(&x, &[1.0, -1.0], 1.0).unwrap();
        // Σxy/(Σx²+α) = 2/3
        assert!((m.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ridge_large_alpha_limit() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, -1.0], vec![4.0, 0.5]]).unwrap();
        let y = [1.0, 2.0, 6.0];
        let m = ridge_fit(&x, &y, 1e12).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((m.intercept - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_singular_at_zero_alpha() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(ridge_fit(&x, &[1.0, 2.0, 3.0], 0.0), Err(NumericsError::Singular));
        assert!(ridge_fit(&x, &[1.0, 2.0, 3.0], 0.1).is_ok());
        let constant = DesignMatrix::from_rows(&[vec![2.0], vec![2.0], vec![2.0]]).unwrap();
        assert_eq!(ridge_fit(&constant, &[1.0, 2.0, 3.0], 0.0), Err(NumericsError::Singular));
    }

    #[test]
    fn ridge_rejects_bad_input() {
        assert!(matches!(
            DesignMatrix::new(1, 1, vec![f64::NAN]),
            Err(NumericsError::NonFinite(_))
        ));
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(ridge_fit(&x, &[1.0, f64::INFINITY], 1.0), Err(NumericsError::NonFinite(_))));
        assert_eq!(ridge_fit(&x, &[1.0, 2.0], -1.0), Err(NumericsError::BadAlpha(-1.0)));
    }

    fn linear_data(n: usize) -> (DesignMatrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y = rows.iter().map(|r| 0.5 + 2.0 * r[0] - 1.5 * r[1]).collect();
        (DesignMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn cv_single_alpha() {
        let (x, y) = linear_data(20);
        let sel = cv_select_alpha(&x, &y, &[3.0], 5, 1).unwrap();
        assert_eq!(sel.best_alpha, 3.0);
    }

    #[test]
    fn cv_prefers_light_shrinkage_on_exact_data() {
        let (x, y) = linear_data(30);
        let sel = cv_select_alpha(&x, &y, &[100.0, 0.01], 5, 9).unwrap();
        assert_eq!(sel.best_alpha, 0.01);
        assert!(sel.errors[0].1 > sel.errors[1].1);
    }

    #[test]
    fn cv_deterministic_and_fold_sizes() {
        let (x, y) = linear_data(23);
        let a = cv_select_alpha(&x, &y, &[0.01, 0.1, 1.0, 10.0, 100.0], 5, 4).unwrap();
        let b = cv_select_alpha(&x, &y, &[0.01, 0.1, 1.0, 10.0, 100.0], 5, 4).unwrap();
        assert_eq!(a, b);
        let folds = fold_assignment(23, 5, 4).unwrap();
        let sizes: Vec<_> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [5, 5, 5, 4, 4]);
        assert_eq!(folds, fold_assignment(23, 5, 4).unwrap());
    }

    #[test]
    fn cv_tie_goes_to_larger_alpha() {
        // y constant: every alpha predicts the mean exactly
        let x = DesignMatrix::from_rows(&(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y = vec![2.0; 10];
        let sel = cv_select_alpha(&x, &y, &[0.01, 10.0, 1.0], 5, 0).unwrap();
        assert_eq!(sel.best_alpha, 10.0);
    }

    #[test]
    fn cv_fold_errors() {
        let (x, y) = linear_data(3);
        assert!(matches!(cv_select_alpha(&x, &y, &[1.0], 5, 0), Err(NumericsError::BadFolds { .. })));
        assert!(matches!(cv_select_alpha(&x, &y, &[], 2, 0), Err(NumericsError::EmptyGrid)));
    }

    #[test]
    fn weighted_median_examples() {
        assert_eq!(weighted_median(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(weighted_median(&[1.0, 2.0, 3.0], &[0.2, 0.2, 0.6]).unwrap(), 3.0);
        assert_eq!(weighted_median(&[1.7], &[0.3]).unwrap(), 1.7);
        assert_eq!(weighted_median(&[1.0, 2.0], &[0.0, 0.0]), Err(NumericsError::ZeroWeight));
        assert_eq!(weighted_median(&[1.0], &[-1.0]), Err(NumericsError::NegativeWeight));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn median_scale_invariant(
                vw in proptest::collection::vec((-10.0f64..10.0, 0.01f64..5.0), 1..20),
                c in 0.1f64..10.0,
            ) {
                let (v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
                let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
                let a = weighted_median(&v, &w).unwrap();
                let b = weighted_median(&v, &scaled).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn median_monotone(
                vw in proptest::collection::vec((-10.0f64..10.0, 0.01f64..5.0), 1..20),
                idx in any::<prop::sample::Index>(),
                bump in 0.0f64..5.0,
            ) {
                let (mut v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
                let before = weighted_median(&v, &w).unwrap();
                let i = idx.index(v.len());
                v[i] += bump;
                prop_assert!(weighted_median(&v, &w).unwrap() >= before);
            }
        }
    }
}
