//! Embedding similarity, threshold AUC and Fréchet distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EvalError;

/// Default covariance regularization for [`fid`].
pub const FID_EPS: f64 = 1e-6;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cosines `[N][K]` between each prediction and its ground truth.
pub fn cosines(preds: &[Vec<Vec<f64>>], gts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EvalError> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(EvalError::ShapeMismatch(format!("{} prediction sets for {} ground truths", preds.len(), gts.len())));
    }
    let k = preds[0].len();
    let mut out = Vec::with_capacity(preds.len());
    for (i, (p, gt)) in preds.iter().zip(gts).enumerate() {
        if p.len() != k || k == 0 {
            return Err(EvalError::ShapeMismatch(format!("sample {i} has {} predictions, expected {k}", p.len())));
        }
        let mut row = Vec::with_capacity(k);
        for f in p {
            if f.len() != gt.len() {
                return Err(EvalError::ShapeMismatch(format!("sample {i}: width {} vs {}", f.len(), gt.len())));
            }
            row.push(cosine(f, gt));
        }
        out.push(row);
    }
    Ok(out)
}

/// Mean cosine over all `N x K` predictions.
pub fn sim_avg(preds: &[Vec<Vec<f64>>], gts: &[Vec<f64>]) -> Result<f64, EvalError> {
    let c = cosines(preds, gts)?;
    let k = c[0].len();
    Ok(c.iter().flatten().sum::<f64>() / (c.len() * k) as f64)
}

/// Mean over samples of the best cosine among the `K` predictions.
pub fn sim_best_at_k(preds: &[Vec<Vec<f64>>], gts: &[Vec<f64>]) -> Result<f64, EvalError> {
    let c = cosines(preds, gts)?;
    Ok(c.iter().map(|r| best(r)).sum::<f64>() / c.len() as f64)
}

pub(crate) fn best(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// `points` evenly spaced thresholds covering [0, 1].
pub fn threshold_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean over the grid of the fraction of samples with similarity at least
/// the threshold. Negative similarities count as 0.
pub fn auc(sims: &[f64], grid: &[f64]) -> Result<f64, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(EvalError::ShapeMismatch("threshold grid must increase inside [0, 1]".into()));
    }
    if sims.is_empty() {
        return Err(EvalError::ShapeMismatch("no similarities".into()));
    }
    let n = sims.len() as f64;
    let total: f64 = grid
        .iter()
        .map(|&t| sims.iter().filter(|&&s| s.max(0.0) >= t).count() as f64 / n)
        .sum();
    Ok(total / grid.len() as f64)
}

fn moments(set: &[Vec<f64>], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.len(), set[0].len());
    let x = DMatrix::from_fn(n, d, |i, j| set[i][j]);
    let mu = x.row_mean().transpose();
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut cov = centred.transpose() * &centred / (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    (mu, cov)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two embedding sets, with `eps`
/// added to both covariance diagonals.
pub fn fid(set_a: &[Vec<f64>], set_b: &[Vec<f64>], eps: f64) -> Result<f64, EvalError> {
    for s in [set_a, set_b] {
        if s.len() < 2 {
            return Err(EvalError::SetTooSmall(s.len()));
        }
    }
    let d = set_a[0].len();
    if set_a.iter().chain(set_b).any(|v| v.len() != d) {
        return Err(EvalError::ShapeMismatch("embedding widths differ".into()));
    }
    let (mu_a, cov_a) = moments(set_a, eps);
    let (mu_b, cov_b) = moments(set_b, eps);
    // Tr (Σa Σb)^½ = Tr (Σa^½ Σb Σa^½)^½, which is symmetric.
    let ra = sqrt_psd(&cov_a);
    let mut inner = &ra * &cov_b * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = (&mu_a - &mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if value < 0.0 {
        if value < -1e-8 {
            log::warn!("negative Fréchet distance {value:e} clamped to 0");
        }
        return Ok(0.0);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let gt = vec![vec![1.0, 0.0]];
        let half = vec![0.5, 0.75f64.sqrt()];
        let preds = vec![vec![vec![1.0, 0.0], half]];
        assert!((sim_avg(&preds, &gt).unwrap() - 0.75).abs() < 1e-12);
        assert!((sim_best_at_k(&preds, &gt).unwrap() - 1.0).abs() < 1e-12);
        let single = vec![vec![vec![0.3, 0.2]]];
        assert_eq!(sim_avg(&single, &gt).unwrap(), sim_best_at_k(&single, &gt).unwrap());
    }

    #[test]
    fn shape_errors() {
        let gt = vec![vec![1.0, 0.0]];
        assert!(matches!(sim_avg(&[], &gt), Err(EvalError::ShapeMismatch(_))));
        assert!(matches!(sim_avg(&[vec![vec![1.0]]], &gt), Err(EvalError::ShapeMismatch(_))));
        assert!(matches!(sim_best_at_k(&[vec![]], &gt), Err(EvalError::ShapeMismatch(_))));
    }

    #[test]
    fn auc_examples() {
        let grid = threshold_grid(101);
        assert_eq!(grid.len(), 101);
        assert_eq!(auc(&[1.0; 7], &grid).unwrap(), 1.0);
        assert!((auc(&[0.5; 3], &grid).unwrap() - 51.0 / 101.0).abs() < 1e-12);
        assert!((auc(&[-0.4], &grid).unwrap() - 1.0 / 101.0).abs() < 1e-12);
        assert!(matches!(auc(&[0.5], &[]), Err(EvalError::EmptyGrid)));
        assert!(auc(&[0.5], &[0.5, 0.2]).is_err());
    }

    #[test]
    fn fid_examples() {
        let a = vec![vec![0.0], vec![0.0]];
        let b = vec![vec![1.0], vec![1.0]];
        assert!((fid(&a, &b, 1e-12).unwrap() - 1.0).abs() < 1e-9);
        let x = vec![vec![0.1, 0.5], vec![-0.3, 0.2], vec![0.7, -0.1]];
        assert!(fid(&x, &x, FID_EPS).unwrap().abs() < 1e-6);
        assert!(matches!(fid(&x[..1], &x, FID_EPS), Err(EvalError::SetTooSmall(1))));
    }
}
