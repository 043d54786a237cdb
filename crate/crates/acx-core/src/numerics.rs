//! Numerical core: least squares via orthogonal decomposition, cluster-robust
//! sandwich covariance, logistic regression by IRLS, and Wald tests.
//!
//! Every diagnostic and estimator in this crate sits on these four routines.
//! Tolerances are fixed here: rank tolerance `1e-10 * ||X||`, IRLS convergence
//! at score norm `1e-8`, at most 100 iterations.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

pub const RANK_TOL: f64 = 1e-10;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
pub const SEPARATION_NORM: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("design matrix is rank deficient (collinear columns: {0:?})")]
    RankDeficient(Vec<usize>),
    #[error("cluster-robust covariance requires at least two clusters")]
    SingleCluster,
    #[error("logistic fit diverged; data is (quasi-)separated")]
    Separation,
    #[error("labels contain a single value; nothing to fit")]
    NoVariation,
    #[error("restricted covariance block is singular")]
    SingularBlock,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least as many rows as columns ({rows} rows, {cols} cols)")]
    TooFewRows { rows: usize, cols: usize },
}

/// Coefficients, covariance, residuals, and residual degrees of freedom from
/// one fit. The covariance convention is documented per constructor.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub dof: usize,
}

impl FitResult {
    pub fn standard_errors(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.coefficients.len(),
            (0..self.coefficients.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()),
        )
    }
}

/// Frobenius norm used to scale the rank tolerance.
fn design_norm(x: &DMatrix<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Detects collinearity via column-pivoted QR; returns the offending column
/// indices (in original column order) when the design is rank deficient.
fn check_rank(x: &DMatrix<f64>) -> Result<(), NumericsError> {
    let k = x.ncols();
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let tol = RANK_TOL * design_norm(x).max(1.0);
    let mut rank = 0;
    for i in 0..k.min(r.nrows()) {
        if r[(i, i)].abs() > tol {
            rank += 1;
        } else {
            break;
        }
    }
    if rank == k {
        return Ok(());
    }
    // Recover which original columns landed past the numerical rank.
    let mut order: Vec<usize> = (0..k).collect();
    let mut idx = DMatrix::from_iterator(1, k, (0..k).map(|i| i as f64));
    qr.p().permute_columns(&mut idx);
    for (j, v) in idx.iter().enumerate() {
        order[j] = *v as usize;
    }
    let mut bad: Vec<usize> = order[rank..].to_vec();
    bad.sort_unstable();
    Err(NumericsError::RankDeficient(bad))
}

/// Ordinary least squares solved by Householder QR.
///
/// Covariance is the classical `sigma^2 (X'X)^{-1}` with
/// `sigma^2 = RSS / (n - k)`; callers needing robust or clustered covariance
/// replace it via [`cluster_robust_cov`].
pub fn least_squares(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
) -> Result<FitResult, NumericsError> {
    let (n, k) = (design.nrows(), design.ncols());
    if response.len() != n {
        return Err(NumericsError::ShapeMismatch(format!(
            "design has {n} rows, response has {}",
            response.len()
        )));
    }
    if n < k {
        return Err(NumericsError::TooFewRows { rows: n, cols: k });
    }
    check_rank(design)?;

    let qr = design.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * response;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(NumericsError::RankDeficient(vec![]))?;
    let residuals = response - design * &beta;
    let dof = n - k;
    let sigma2 = if dof > 0 {
        residuals.dot(&residuals) / dof as f64
    } else {
        0.0
    };
    let xtx_inv = xtx_inverse(&r)?;
    let covariance = &xtx_inv * sigma2;
    Ok(FitResult { coefficients: beta, covariance, residuals, dof })
}

/// `(X'X)^{-1}` from the upper-triangular QR factor: `R^{-1} R^{-T}`.
fn xtx_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let k = r.ncols();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(NumericsError::RankDeficient(vec![]))?;
    Ok(&r_inv * r_inv.transpose())
}

/// Cluster-robust sandwich covariance with the small-sample factor
/// `G/(G-1) * (N-1)/(N-K)` applied to the cluster-summed score outer products.
///
/// With each row its own cluster this reduces to the heteroskedastic-robust
/// estimator under the same small-sample convention.
pub fn cluster_robust_cov(
    fit: &FitResult,
    design: &DMatrix<f64>,
    clusters: &[u64],
) -> Result<DMatrix<f64>, NumericsError> {
    let (n, k) = (design.nrows(), design.ncols());
    if clusters.len() != n || fit.residuals.len() != n {
        return Err(NumericsError::ShapeMismatch(
            "clusters/residuals must match design rows".into(),
        ));
    }
    let mut ids: Vec<u64> = clusters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let g = ids.len();
    if g < 2 {
        return Err(NumericsError::SingleCluster);
    }

    // bread = (X'X)^{-1}
    let qr = design.clone().qr();
    let bread = xtx_inverse(&qr.r())?;

    let mut meat = DMatrix::zeros(k, k);
    for id in &ids {
        let mut score: DVector<f64> = DVector::zeros(k);
        for row in 0..n {
            if clusters[row] == *id {
                let u = fit.residuals[row];
                for col in 0..k {
                    score[col] += design[(row, col)] * u;
                }
            }
        }
        meat += &score * score.transpose();
    }
    let factor =
        (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    Ok(&bread * meat * &bread * factor)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn log_likelihood(design: &DMatrix<f64>, labels: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    let mut ll = 0.0;
    for i in 0..labels.len() {
        // log(p) for y=1, log(1-p) for y=0, written stably.
        let z = eta[i];
        ll += labels[i] * z - softplus(z);
    }
    ll
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// Logistic regression by iteratively reweighted least squares with step
/// halving so the log-likelihood never decreases. Covariance is the inverse
/// observed information `(X'WX)^{-1}` at convergence.
pub fn logistic_fit(
    design: &DMatrix<f64>,
    labels: &DVector<f64>,
) -> Result<FitResult, NumericsError> {
    let (n, k) = (design.nrows(), design.ncols());
    if labels.len() != n {
        return Err(NumericsError::ShapeMismatch(
            "labels must match design rows".into(),
        ));
    }
    if n < k {
        return Err(NumericsError::TooFewRows { rows: n, cols: k });
    }
    let ones = labels.iter().filter(|v| **v == 1.0).count();
    if labels.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(NumericsError::ShapeMismatch("labels must be 0 or 1".into()));
    }
    if ones == 0 || ones == n {
        return Err(NumericsError::NoVariation);
    }
    check_rank(design)?;

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(design, labels, &beta);
    for _ in 0..IRLS_MAX_ITER {
        let eta = design * &beta;
        let p = DVector::from_iterator(n, eta.iter().map(|z| sigmoid(*z)));
        let score = design.transpose() * (labels - &p);
        if score.norm() < IRLS_TOL {
            break;
        }
        let mut info = DMatrix::zeros(k, k);
        for row in 0..n {
            let w = p[row] * (1.0 - p[row]);
            for a in 0..k {
                for b in 0..k {
                    info[(a, b)] += design[(row, a)] * w * design[(row, b)];
                }
            }
        }
        let chol = info.clone().cholesky().ok_or(NumericsError::Separation)?;
        let full_step = chol.solve(&score);
        // Step halving keeps the ascent monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &full_step * scale;
            let cand_ll = log_likelihood(design, labels, &candidate);
            if cand_ll >= ll {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta.norm() > SEPARATION_NORM {
            return Err(NumericsError::Separation);
        }
    }
    let eta = design * &beta;
    let p = DVector::from_iterator(n, eta.iter().map(|z| sigmoid(*z)));
    let mut info = DMatrix::zeros(k, k);
    for row in 0..n {
        let w = p[row] * (1.0 - p[row]);
        for a in 0..k {
            for b in 0..k {
                info[(a, b)] += design[(row, a)] * w * design[(row, b)];
            }
        }
    }
    let covariance = info
        .cholesky()
        .ok_or(NumericsError::Separation)?
        .inverse();
    let residuals = labels - &p;
    Ok(FitResult { coefficients: beta, covariance, residuals, dof: n - k })
}

/// Wald statistic `b' V^{-1} b` on the restricted coefficient block, with the
/// p-value from a chi-square with `|restriction|` degrees of freedom.
pub fn wald_test(
    fit: &FitResult,
    restriction: &[usize],
) -> Result<(f64, f64), NumericsError> {
    let k = fit.coefficients.len();
    if restriction.is_empty() || restriction.iter().any(|i| *i >= k) {
        return Err(NumericsError::ShapeMismatch(
            "restriction indices out of range".into(),
        ));
    }
    let m = restriction.len();
    let mut b = DVector::zeros(m);
    let mut v = DMatrix::zeros(m, m);
    for (a, &i) in restriction.iter().enumerate() {
        b[a] = fit.coefficients[i];
        for (c, &j) in restriction.iter().enumerate() {
            v[(a, c)] = fit.covariance[(i, j)];
        }
    }
    let chol = v.cholesky().ok_or(NumericsError::SingularBlock)?;
    let stat = b.dot(&chol.solve(&b));
    let p = chi_square_tail(stat, m as f64);
    Ok((stat, p))
}

pub fn chi_square_tail(stat: f64, dof: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof).expect("dof > 0");
    (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
}

/// Two-sided Student-t p-value for `t = effect / se` with `dof` degrees of
/// freedom; the usual reference for cluster-robust tests with few clusters.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Two-sided normal p-value for `z = effect / se`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    let dist = Normal::new(0.0, 1.0).expect("valid");
    (2.0 * (1.0 - dist.cdf(z.abs()))).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn identity_design_recovers_response() {
        let x = DMatrix::identity(3, 3);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let fit = least_squares(&x, &y).unwrap();
        assert!((fit.coefficients - y).norm() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = mat(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        match least_squares(&x, &y) {
            Err(NumericsError::RankDeficient(cols)) => assert!(!cols.is_empty()),
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    /// Independent oracle: solve the normal equations X'X b = X'y by naive
    /// Gauss-Jordan elimination with partial pivoting.
    fn normal_equation_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
        let k = x.ncols();
        let mut a = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for r in 0..x.nrows() {
                    s += x[(r, i)] * x[(r, j)];
                }
                a[i][j] = s;
            }
            let mut s = 0.0;
            for r in 0..x.nrows() {
                s += x[(r, i)] * y[r];
            }
            a[i][k] = s;
        }
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for j in col..=k {
                a[col][j] /= d;
            }
            for row in 0..k {
                if row != col {
                    let f = a[row][col];
                    for j in col..=k {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..k).map(|i| a[i][k]).collect()
    }

    /// Deterministic pseudo-random doubles for fixtures (splitmix64).
    fn fixture_stream(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            out.push((z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        out
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let vals = fixture_stream(42, 50 * 3 + 50);
        let x = DMatrix::from_row_slice(50, 3, &vals[..150]);
        let y = DVector::from_row_slice(&vals[150..]);
        let fit = least_squares(&x, &y).unwrap();
        let oracle = normal_equation_oracle(&x, &y);
        for i in 0..3 {
            let scale = oracle[i].abs().max(1.0);
            assert!(
                (fit.coefficients[i] - oracle[i]).abs() / scale <= 1e-10,
                "coef {i}: {} vs {}",
                fit.coefficients[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn affine_equivariance() {
        let vals = fixture_stream(7, 30 * 2 + 30);
        let mut x = DMatrix::from_row_slice(30, 2, &vals[..60]);
        // First column is an intercept.
        for r in 0..30 {
            x[(r, 0)] = 1.0;
        }
        let y = DVector::from_row_slice(&vals[60..]);
        let base = least_squares(&x, &y).unwrap();

        let shifted = least_squares(&x, &y.add_scalar(5.0)).unwrap();
        assert!((shifted.coefficients[0] - base.coefficients[0] - 5.0).abs() < 1e-10);
        assert!((shifted.coefficients[1] - base.coefficients[1]).abs() < 1e-10);

        let scaled = least_squares(&x, &(&y * 3.0)).unwrap();
        for i in 0..2 {
            assert!((scaled.coefficients[i] - 3.0 * base.coefficients[i]).abs() < 1e-10);
            let se_b = base.covariance[(i, i)].sqrt();
            let se_s = scaled.covariance[(i, i)].sqrt();
            assert!((se_s - 3.0 * se_b).abs() < 1e-9);
        }
    }

    /// Explicit-loop sandwich estimator, independent of the implementation
    /// path (builds X'X inverse via the Gauss-Jordan oracle).
    fn sandwich_oracle(
        x: &DMatrix<f64>,
        resid: &DVector<f64>,
        clusters: &[u64],
    ) -> DMatrix<f64> {
        let (n, k) = (x.nrows(), x.ncols());
        // (X'X)^{-1} via Gauss-Jordan on the augmented identity.
        let mut a = vec![vec![0.0; 2 * k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for r in 0..n {
                    s += x[(r, i)] * x[(r, j)];
                }
                a[i][j] = s;
            }
            a[i][k + i] = 1.0;
        }
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for j in 0..2 * k {
                a[col][j] /= d;
            }
            for row in 0..k {
                if row != col {
                    let f = a[row][col];
                    for j in 0..2 * k {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        let mut bread = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                bread[(i, j)] = a[i][k + j];
            }
        }
        let mut ids: Vec<u64> = clusters.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let g = ids.len();
        let mut meat = DMatrix::zeros(k, k);
        for id in &ids {
            let mut s = vec![0.0; k];
            for r in 0..n {
                if clusters[r] == *id {
                    for c in 0..k {
                        s[c] += x[(r, c)] * resid[r];
                    }
                }
            }
            for i in 0..k {
                for j in 0..k {
                    meat[(i, j)] += s[i] * s[j];
                }
            }
        }
        let factor = (g as f64 / (g as f64 - 1.0))
            * ((n as f64 - 1.0) / (n as f64 - k as f64));
        &bread * meat * &bread * factor
    }

    #[test]
    fn cluster_cov_matches_loop_oracle() {
        let vals = fixture_stream(11, 50 * 3 + 50);
        let mut x = DMatrix::from_row_slice(50, 3, &vals[..150]);
        for r in 0..50 {
            x[(r, 0)] = 1.0;
        }
        let y = DVector::from_row_slice(&vals[150..]);
        let clusters: Vec<u64> = (0..50).map(|i| (i % 5) as u64).collect();
        let fit = least_squares(&x, &y).unwrap();
        let got = cluster_robust_cov(&fit, &x, &clusters).unwrap();
        let want = sandwich_oracle(&x, &fit.residuals, &clusters);
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (got[(i, j)] - want[(i, j)]).abs() / scale <= 1e-10,
                    "({i},{j}): {} vs {}",
                    got[(i, j)],
                    want[(i, j)]
                );
            }
        }
    }

    #[test]
    fn each_row_own_cluster_equals_robust() {
        let vals = fixture_stream(13, 40 * 2 + 40);
        let mut x = DMatrix::from_row_slice(40, 2, &vals[..80]);
        for r in 0..40 {
            x[(r, 0)] = 1.0;
        }
        let y = DVector::from_row_slice(&vals[80..]);
        let clusters: Vec<u64> = (0..40).collect();
        let fit = least_squares(&x, &y).unwrap();
        let got = cluster_robust_cov(&fit, &x, &clusters).unwrap();
        let want = sandwich_oracle(&x, &fit.residuals, &clusters);
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn single_cluster_rejected() {
        let x = mat(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let fit = least_squares(&x, &y).unwrap();
        assert_eq!(
            cluster_robust_cov(&fit, &x, &[1, 1, 1, 1]),
            Err(NumericsError::SingleCluster)
        );
    }

    #[test]
    fn intercept_only_balanced_labels_gives_zero() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let y = DVector::from_iterator(10, (0..10).map(|i| (i % 2) as f64));
        let fit = logistic_fit(&x, &y).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-7);
    }

    /// Independent gradient-ascent oracle with a fixed small step.
    fn gradient_ascent_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let k = x.ncols();
        let mut beta = DVector::zeros(k);
        for _ in 0..200_000 {
            let eta = x * &beta;
            let p = DVector::from_iterator(x.nrows(), eta.iter().map(|z| sigmoid(*z)));
            let grad = x.transpose() * (y - &p);
            if grad.norm() < 1e-10 {
                break;
            }
            beta += grad * 0.01;
        }
        beta
    }

    fn logistic_fixture() -> (DMatrix<f64>, DVector<f64>) {
        let n = 200;
        let noise = fixture_stream(99, 2 * n);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = noise[i];
            let p = sigmoid(0.5 + 1.2 * noise[i]);
            y[i] = if (noise[n + i] + 1.0) / 2.0 < p { 1.0 } else { 0.0 };
        }
        (x, y)
    }

    #[test]
    fn logistic_matches_gradient_ascent_oracle() {
        let (x, y) = logistic_fixture();
        let fit = logistic_fit(&x, &y).unwrap();
        let oracle = gradient_ascent_oracle(&x, &y);
        for i in 0..2 {
            assert!(
                (fit.coefficients[i] - oracle[i]).abs() <= 1e-6,
                "coef {i}: {} vs {}",
                fit.coefficients[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn logistic_score_matches_finite_differences() {
        let (x, y) = logistic_fixture();
        let fit = logistic_fit(&x, &y).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut up = fit.coefficients.clone();
            let mut dn = fit.coefficients.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (log_likelihood(&x, &y, &up) - log_likelihood(&x, &y, &dn)) / (2.0 * h);
            // Score at the optimum is ~0; finite differences agree to 1e-5.
            assert!(fd.abs() < 1e-5, "fd score {i} = {fd}");
        }
    }

    #[test]
    fn separation_detected() {
        let n = 20;
        let mut x = DMatrix::zeros(n, 2);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = i as f64 - 10.0;
            y[i] = if i >= 10 { 1.0 } else { 0.0 };
        }
        match logistic_fit(&x, &y) {
            Err(NumericsError::Separation) => {}
            other => panic!("expected Separation, got {other:?}"),
        }
    }

    #[test]
    fn no_variation_detected() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_element(5, 1.0);
        match logistic_fit(&x, &y) {
            Err(NumericsError::NoVariation) => {}
            other => panic!("expected NoVariation, got {other:?}"),
        }
    }

    #[test]
    fn wald_zero_coefficients() {
        let fit = FitResult {
            coefficients: DVector::zeros(2),
            covariance: DMatrix::identity(2, 2),
            residuals: DVector::zeros(2),
            dof: 1,
        };
        let (stat, p) = wald_test(&fit, &[0, 1]).unwrap();
        assert_eq!(stat, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn wald_scalar_closed_form() {
        // b = 2, var = 1: statistic 4, p = chi-square(1) tail at 4.
        let fit = FitResult {
            coefficients: DVector::from_row_slice(&[2.0]),
            covariance: DMatrix::from_row_slice(1, 1, &[1.0]),
            residuals: DVector::zeros(1),
            dof: 1,
        };
        let (stat, p) = wald_test(&fit, &[0]).unwrap();
        assert!((stat - 4.0).abs() < 1e-12);
        // Tail of chi2(1) at 4 equals 2 * (1 - Phi(2)).
        let want = normal_two_sided_p(2.0);
        assert!((p - want).abs() < 1e-10, "{p} vs {want}");
    }

    #[test]
    fn wald_singular_block() {
        let fit = FitResult {
            coefficients: DVector::from_row_slice(&[1.0, 1.0]),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            residuals: DVector::zeros(2),
            dof: 1,
        };
        assert_eq!(wald_test(&fit, &[0, 1]), Err(NumericsError::SingularBlock));
    }

    #[test]
    fn covariance_is_psd() {
        let vals = fixture_stream(21, 50 * 3 + 50);
        let mut x = DMatrix::from_row_slice(50, 3, &vals[..150]);
        for r in 0..50 {
            x[(r, 0)] = 1.0;
        }
        let y = DVector::from_row_slice(&vals[150..]);
        let fit = least_squares(&x, &y).unwrap();
        let eig = fit.covariance.clone().symmetric_eigen();
        let trace = fit.covariance.trace();
        for ev in eig.eigenvalues.iter() {
            assert!(*ev >= -1e-8 * trace, "eigenvalue {ev} below tolerance");
        }
    }
}
