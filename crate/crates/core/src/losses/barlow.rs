use super::LossOutput;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor used when standardizing embedding dimensions.
pub const BARLOW_EPS: f64 = 1e-9;

/// Column-standardized copy of an `N×d` matrix plus per-column `1/sqrt(var + eps)`.
fn standardize(m: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let (n, d) = (m.rows(), m.cols());
    let data = m.data();
    let mut out = vec![0.0; n * d];
    let mut inv_std = vec![0.0; d];
    let mut degenerate = Vec::new();
    for j in 0..d {
        let mean = (0..n).map(|t| data[t * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|t| (data[t * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= BARLOW_EPS {
            degenerate.push(j);
        }
        let is = 1.0 / (var + BARLOW_EPS).sqrt();
        inv_std[j] = is;
        for t in 0..n {
            out[t * d + j] = (data[t * d + j] - mean) * is;
        }
    }
    (out, inv_std, degenerate)
}

/// Adjoint of column standardization given the upstream gradient on the standardized values.
fn standardize_backward(xhat: &[f64], inv_std: &[f64], g: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    for j in 0..d {
        let mean_g = (0..n).map(|t| g[t * d + j]).sum::<f64>() / n as f64;
        let mean_gh = (0..n).map(|t| g[t * d + j] * xhat[t * d + j]).sum::<f64>() / n as f64;
        for t in 0..n {
            dx[t * d + j] = inv_std[j] * (g[t * d + j] - mean_g - xhat[t * d + j] * mean_gh);
        }
    }
    dx
}

/// Redundancy-reduction objective on the cross-correlation of two
/// batch-standardized views: `Σ_i (1 − C_ii)² + λ_bt Σ_{i≠j} C_ij²`.
pub fn barlow_twins_loss(view_a: &Tensor, view_b: &Tensor, lambda_bt: f64) -> Result<LossOutput> {
    if view_a.rank() != 2 || view_a.shape() != view_b.shape() {
        return Err(Error::Config(format!(
            "views must be equal N×d matrices, got {:?} and {:?}",
            view_a.shape(),
            view_b.shape()
        )));
    }
    let (n, d) = (view_a.rows(), view_a.cols());
    if n < 2 {
        return Err(Error::Config(format!(
            "batch statistics need at least 2 samples, got {n}"
        )));
    }
    if !lambda_bt.is_finite() {
        return Err(Error::Config(format!("lambda_bt must be finite, got {lambda_bt}")));
    }
    let (a, a_is, a_deg) = standardize(view_a);
    let (b, b_is, b_deg) = standardize(view_b);

    let inv_n = 1.0 / n as f64;
    let mut c = vec![0.0; d * d];
    for t in 0..n {
        let (ar, br) = (&a[t * d..(t + 1) * d], &b[t * d..(t + 1) * d]);
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += ar[i] * br[j];
            }
        }
    }
    c.iter_mut().for_each(|v| *v *= inv_n);

    let mut value = 0.0;
    let mut dc = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let cij = c[i * d + j];
            if i == j {
                value += (1.0 - cij).powi(2);
                dc[i * d + j] = -2.0 * (1.0 - cij);
            } else {
                value += lambda_bt * cij * cij;
                dc[i * d + j] = 2.0 * lambda_bt * cij;
            }
        }
    }

    let mut ga = vec![0.0; n * d];
    let mut gb = vec![0.0; n * d];
    for t in 0..n {
        for i in 0..d {
            for j in 0..d {
                let g = dc[i * d + j] * inv_n;
                ga[t * d + i] += g * b[t * d + j];
                gb[t * d + j] += g * a[t * d + i];
            }
        }
    }
    let grad_a = Tensor::new(vec![n, d], standardize_backward(&a, &a_is, &ga, n, d))?;
    let grad_b = Tensor::new(vec![n, d], standardize_backward(&b, &b_is, &gb, n, d))?;

    let mut out = LossOutput::new(value, vec![grad_a, grad_b]);
    if !a_deg.is_empty() {
        out.diagnostics.push(format!("view_a zero-variance dimensions {a_deg:?}"));
    }
    if !b_deg.is_empty() {
        out.diagnostics.push(format!("view_b zero-variance dimensions {b_deg:?}"));
    }
    for msg in &out.diagnostics {
        log::debug!("barlow twins: {msg}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_correlation_gives_zero() {
        // columns are standardized, mutually uncorrelated, and identical across views
        let a = Tensor::from_rows(&[vec![1., 1.], vec![1., -1.], vec![-1., 1.], vec![-1., -1.]]).unwrap();
        let out = barlow_twins_loss(&a, &a, 0.005).unwrap();
        assert!(out.value < 1e-12, "{}", out.value);
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn identical_views_leave_only_redundancy() {
        let a = Tensor::from_rows(&[vec![1., 2.], vec![3., 1.], vec![-1., 0.5], vec![0., 4.]]).unwrap();
        let lambda = 0.3;
        let out = barlow_twins_loss(&a, &a, lambda).unwrap();
        // independent: Pearson correlation of the two columns
        let col = |j: usize| -> Vec<f64> { (0..4).map(|t| a.row(t)[j]).collect() };
        let (x, y) = (col(0), col(1));
        let mx = x.iter().sum::<f64>() / 4.0;
        let my = y.iter().sum::<f64>() / 4.0;
        let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
        let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!((out.value - lambda * 2.0 * r * r).abs() < 1e-8);
    }

    #[test]
    fn zero_variance_dimension_is_flagged() {
        let a = Tensor::from_rows(&[vec![1., 5.], vec![2., 5.], vec![3., 5.]]).unwrap();
        let out = barlow_twins_loss(&a, &a, 0.005).unwrap();
        assert!(out.value.is_finite());
        assert_eq!(out.diagnostics.len(), 2);
    }

    #[test]
    fn rejects_single_sample() {
        let a = Tensor::from_rows(&[vec![1., 5.]]).unwrap();
        assert!(matches!(barlow_twins_loss(&a, &a, 0.005), Err(Error::Config(_))));
    }
}
