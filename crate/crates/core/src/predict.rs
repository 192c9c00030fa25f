//! Parametric surrogates for local POD coordinates: Hermite polynomial
//! chaos fitted by least squares, and Gaussian-process regression with a
//! squared-exponential kernel.
//!
//! Both predictors are generic multi-output regressors on the Gaussian
//! parameter vector mu; the caller decides what the outputs mean.

use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Values of the orthonormal probabilists' Hermite polynomials eta_0..eta_p
/// at x, via the recurrence eta_{n+1} = (x eta_n - sqrt(n) eta_{n-1}) / sqrt(n+1).
pub fn hermite_values(p: usize, x: f64) -> Vec<f64> {
    let mut eta = Vec::with_capacity(p + 1);
    eta.push(1.0);
    if p >= 1 {
        eta.push(x);
    }
    for n in 1..p {
        let next = (x * eta[n] - (n as f64).sqrt() * eta[n - 1]) / ((n + 1) as f64).sqrt();
        eta.push(next);
    }
    eta
}

fn fill_indices(dims: usize, deg: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if dims == 1 {
        prefix.push(deg);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for lead in (0..=deg).rev() {
        prefix.push(lead);
        fill_indices(dims - 1, deg - lead, prefix, out);
        prefix.pop();
    }
}

/// Total-degree multi-indices in graded lexicographic order.
pub fn multi_indices(m: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(m);
    for deg in 0..=p {
        fill_indices(m, deg, &mut prefix, &mut out);
    }
    out
}

/// Tensorized Hermite basis over M parameter components, total degree <= p.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteBasis {
    pub m: usize,
    pub p: usize,
    pub indices: Vec<Vec<usize>>,
}

impl HermiteBasis {
    pub fn new(m: usize, p: usize) -> HermiteBasis {
        HermiteBasis { m, p, indices: multi_indices(m, p) }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// One basis value per multi-index: prod_j eta_{alpha_j}(mu_j).
    pub fn eval(&self, mu: &[f64]) -> Vec<f64> {
        assert_eq!(mu.len(), self.m);
        let univariate: Vec<Vec<f64>> =
            mu.iter().map(|&x| hermite_values(self.p, x)).collect();
        self.indices
            .iter()
            .map(|alpha| alpha.iter().zip(&univariate).map(|(&a, h)| h[a]).product())
            .collect()
    }
}

/// Polynomial-chaos expansion fitted to training data by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GpcModel {
    pub basis: HermiteBasis,
    /// basis.len() x n_outputs coefficient matrix.
    pub coeffs: DMatrix<f64>,
    /// Training residual |G c - y|_2 per output.
    pub residuals: Vec<f64>,
}

/// Fits one chaos expansion per output column of `targets` by thin-QR least
/// squares on the Hermite Vandermonde matrix, recording per-output residuals.
pub fn fit_gpc(
    m: usize,
    p: usize,
    train_mu: &[Vec<f64>],
    targets: &DMatrix<f64>,
) -> Result<GpcModel> {
    let basis = HermiteBasis::new(m, p);
    let n = train_mu.len();
    if targets.nrows() != n {
        return Err(Error::Config(format!(
            "gpc targets have {} rows for {} training samples",
            targets.nrows(),
            n
        )));
    }
    if n < basis.len() {
        log::warn!(
            "gpc degree {p} has {} basis functions but only {n} samples; \
             the least squares system is underdetermined",
            basis.len()
        );
    }
    let mut phi = DMatrix::zeros(n, basis.len());
    for (r, mu) in train_mu.iter().enumerate() {
        for (c, v) in basis.eval(mu).into_iter().enumerate() {
            phi[(r, c)] = v;
        }
    }
    let qr = phi.clone().qr();
    let r = qr.r();
    let full = n.min(basis.len());
    let diag_max = (0..full).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let deficient: Vec<usize> = (0..full)
        .filter(|&i| r[(i, i)].abs() <= 1e-12 * diag_max)
        .chain(full..basis.len())
        .collect();
    if !deficient.is_empty() || diag_max == 0.0 {
        return Err(Error::Numerical(format!(
            "gpc least squares is rank deficient; undetermined modes {deficient:?}"
        )));
    }
    let qty = qr.q().transpose() * targets;
    let coeffs = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("gpc triangular solve failed".into()))?;
    let misfit = &phi * &coeffs - targets;
    let residuals = (0..targets.ncols()).map(|c| misfit.column(c).norm()).collect();
    Ok(GpcModel { basis, coeffs, residuals })
}

/// Evaluates the chaos expansion: one value per output.
pub fn predict_gpc(model: &GpcModel, mu: &[f64]) -> Vec<f64> {
    let row = DVector::from_vec(model.basis.eval(mu));
    (model.coeffs.transpose() * row).as_slice().to_vec()
}

/// Gaussian-process regressor with a shared squared-exponential kernel over
/// all outputs. The kernel is kept at unit signal variance so one Cholesky
/// factor serves every output; the stored signal variance only scales the
/// posterior variance.
#[derive(Debug, Clone)]
pub struct GprModel {
    pub train_mu: Vec<Vec<f64>>,
    pub length_scale: f64,
    /// Per-output target variance, used to scale the posterior variance.
    pub signal_variance: Vec<f64>,
    /// Relative diagonal jitter accepted by the factorization.
    pub jitter: f64,
    /// Per-output training means.
    pub means: Vec<f64>,
    /// n x n_outputs matrix of (K0 + jitter I)^-1 (y - mean).
    pub alpha: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_matrix(train_mu: &[Vec<f64>], ell: f64, jitter: f64) -> DMatrix<f64> {
    let n = train_mu.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = (-sq_dist(&train_mu[i], &train_mu[j]) / (2.0 * ell * ell)).exp();
        }
        k[(i, i)] += jitter;
    }
    k
}

/// Median of the nonzero pairwise distances among training inputs.
fn median_length_scale(train_mu: &[Vec<f64>]) -> Result<f64> {
    let mut dists = Vec::new();
    for i in 0..train_mu.len() {
        for j in i + 1..train_mu.len() {
            let d = sq_dist(&train_mu[i], &train_mu[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::Numerical(
            "gpr training inputs are all identical; kernel scale undefined".into(),
        ));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    Ok(if dists.len() % 2 == 1 { dists[mid] } else { 0.5 * (dists[mid - 1] + dists[mid]) })
}

impl GprModel {
    /// Rebuilds the kernel factorization from stored fields (used when a
    /// model is reloaded; the recorded jitter is applied without escalation).
    pub fn from_parts(
        train_mu: Vec<Vec<f64>>,
        length_scale: f64,
        signal_variance: Vec<f64>,
        jitter: f64,
        means: Vec<f64>,
        alpha: DMatrix<f64>,
    ) -> Result<GprModel> {
        let k = kernel_matrix(&train_mu, length_scale, jitter);
        let chol = Cholesky::new(k).ok_or_else(|| {
            Error::Numerical("gpr kernel matrix is not positive definite".into())
        })?;
        Ok(GprModel { train_mu, length_scale, signal_variance, jitter, means, alpha, chol })
    }
}

/// Fits a GPR model: median-heuristic length scale, mean-centered targets,
/// per-output signal variance set to the target variance, jitter escalated
/// by factors of ten from 1e-8 until the kernel factors (cap 1e-4).
pub fn fit_gpr(train_mu: &[Vec<f64>], targets: &DMatrix<f64>) -> Result<GprModel> {
    let n = train_mu.len();
    if n < 2 {
        return Err(Error::Config("gpr needs at least two training samples".into()));
    }
    if targets.nrows() != n {
        return Err(Error::Config(format!(
            "gpr targets have {} rows for {n} training samples",
            targets.nrows()
        )));
    }
    let ell = median_length_scale(train_mu)?;
    let mut jitter = 1e-8;
    let chol = loop {
        match Cholesky::new(kernel_matrix(train_mu, ell, jitter)) {
            Some(c) => break c,
            None if jitter < 1e-4 => jitter *= 10.0,
            None => {
                return Err(Error::Numerical(
                    "gpr kernel not positive definite at maximum jitter 1e-4".into(),
                ))
            }
        }
    };
    let n_out = targets.ncols();
    let means: Vec<f64> = (0..n_out).map(|c| targets.column(c).mean()).collect();
    let mut centered = targets.clone();
    let mut signal_variance = vec![0.0; n_out];
    for c in 0..n_out {
        for r in 0..n {
            centered[(r, c)] -= means[c];
        }
        signal_variance[c] = centered.column(c).norm_squared() / n as f64;
    }
    let alpha = chol.solve(&centered);
    Ok(GprModel {
        train_mu: train_mu.to_vec(),
        length_scale: ell,
        signal_variance,
        jitter,
        means,
        alpha,
        chol,
    })
}

/// Posterior mean and variance per output at mu. The unit-variance kernel
/// gives one shared reduction factor; each output scales it by its own
/// signal variance.
pub fn predict_gpr(model: &GprModel, mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let kstar = DVector::from_iterator(
        model.train_mu.len(),
        model.train_mu.iter().map(|t| {
            (-sq_dist(t, mu) / (2.0 * model.length_scale * model.length_scale)).exp()
        }),
    );
    let mean: Vec<f64> = (0..model.means.len())
        .map(|c| model.means[c] + model.alpha.column(c).dot(&kstar))
        .collect();
    let w = model.chol.solve(&kstar);
    let var_unit = (1.0 - kstar.dot(&w)).max(0.0);
    let variance = model.signal_variance.iter().map(|s| s * var_unit).collect();
    (mean, variance)
}

/// Either surrogate behind one dispatch point.
#[derive(Debug, Clone)]
pub enum Predictor {
    Gpc(GpcModel),
    Gpr(GprModel),
}

impl Predictor {
    pub fn predict(&self, mu: &[f64]) -> Vec<f64> {
        match self {
            Predictor::Gpc(m) => predict_gpc(m, mu),
            Predictor::Gpr(m) => predict_gpr(m, mu).0,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Predictor::Gpc(m) => m.coeffs.ncols(),
            Predictor::Gpr(m) => m.means.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn hermite_values_at_two() {
        let eta = hermite_values(3, 2.0);
        assert_abs_diff_eq!(eta[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eta[1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eta[2], 3.0 / 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(eta[3], 2.0 / 6f64.sqrt(), epsilon = 1e-14);
    }

    /// Golub-Welsch nodes and weights for the standard normal weight.
    fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut j = nalgebra::DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    #[test]
    fn hermite_orthonormal_under_gaussian_weight() {
        let (x, w) = gauss_hermite(64);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let second: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert_abs_diff_eq!(second, 1.0, epsilon = 1e-12);
        let p = 6;
        for i in 0..=p {
            for j in 0..=p {
                let mut ip = 0.0;
                for (xk, wk) in x.iter().zip(&w) {
                    let eta = hermite_values(p, *xk);
                    ip += wk * eta[i] * eta[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn multi_index_layout() {
        let idx = multi_indices(2, 2);
        let expect: Vec<Vec<usize>> =
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(idx, expect);
        // C(M+p, p) counts.
        assert_eq!(multi_indices(3, 3).len(), 20);
        assert_eq!(multi_indices(1, 3).len(), 4);
        assert_eq!(multi_indices(4, 2).len(), 15);
    }

    #[test]
    fn mixed_first_order_term_is_product() {
        let basis = HermiteBasis::new(2, 2);
        let pos = basis.indices.iter().position(|a| a == &vec![1, 1]).unwrap();
        let (a, b) = (0.7, -1.3);
        let vals = basis.eval(&[a, b]);
        assert_abs_diff_eq!(vals[pos], a * b, epsilon = 1e-14);
    }

    #[test]
    fn gpc_recovers_polynomial_exactly() {
        let truth = |x: f64| 3.0 + x - 0.5 * x * x;
        let train: Vec<Vec<f64>> =
            (0..20).map(|i| vec![-2.0 + 4.0 * i as f64 / 19.0]).collect();
        let targets =
            DMatrix::from_fn(20, 1, |r, _| truth(train[r][0]));
        let model = fit_gpc(1, 3, &train, &targets).unwrap();
        for &x in &[-1.7, -0.3, 0.45, 1.9, 2.6] {
            let y = predict_gpc(&model, &[x]);
            assert_abs_diff_eq!(y[0], truth(x), epsilon = 1e-10);
        }
        // Cubic coefficient vanishes; quadratic matches -0.5 sqrt(2) eta_2.
        assert_abs_diff_eq!(model.coeffs[(3, 0)], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.coeffs[(2, 0)], -0.5 * 2f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(model.coeffs[(1, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.coeffs[(0, 0)], 2.5, epsilon = 1e-10);
    }

    #[test]
    fn gpc_rank_deficiency_names_modes() {
        // Ten samples on only two distinct abscissae cannot determine a cubic.
        let train: Vec<Vec<f64>> =
            (0..10).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }]).collect();
        let targets = DMatrix::from_fn(10, 1, |r, _| train[r][0]);
        let err = fit_gpc(1, 3, &train, &targets).unwrap_err();
        match err {
            crate::Error::Numerical(msg) => {
                assert!(msg.contains("rank deficient"), "msg: {msg}");
                assert!(msg.contains("modes"), "msg: {msg}");
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn gpc_undersampled_reports_undetermined_tail_modes() {
        // Two samples against a cubic: warned, then rejected with the
        // columns beyond the sample count listed as undetermined.
        let train = vec![vec![0.0], vec![1.0]];
        let targets = DMatrix::zeros(2, 1);
        match fit_gpc(1, 3, &train, &targets).unwrap_err() {
            crate::Error::Numerical(msg) => {
                assert!(msg.contains("rank deficient"), "msg: {msg}");
                assert!(msg.contains('2') && msg.contains('3'), "msg: {msg}");
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn gpc_residuals_match_direct_recomputation() {
        // A quadratic fit to sine data leaves a genuine misfit; the stored
        // residual must equal |G c - y|_2 recomputed from scratch.
        let train: Vec<Vec<f64>> =
            (0..25).map(|i| vec![-2.0 + 4.0 * i as f64 / 24.0]).collect();
        let targets =
            DMatrix::from_fn(25, 2, |r, c| if c == 0 { train[r][0].sin() } else { 1.0 });
        let model = fit_gpc(1, 2, &train, &targets).unwrap();
        assert_eq!(model.residuals.len(), 2);
        let basis = HermiteBasis::new(1, 2);
        let phi = DMatrix::from_fn(25, basis.len(), |r, c| basis.eval(&train[r])[c]);
        let misfit = &phi * &model.coeffs - &targets;
        for c in 0..2 {
            let direct = misfit.column(c).norm();
            assert_abs_diff_eq!(model.residuals[c], direct, epsilon = 1e-12);
        }
        assert!(model.residuals[0] > 1e-2, "sine is not a quadratic");
        assert!(model.residuals[1] <= 1e-12, "constants fit exactly");
    }

    #[test]
    fn gpc_multivariate_recovery() {
        let truth = |x: f64, y: f64| 1.0 + 2.0 * x * y - y * y;
        let mut rng = StdRng::seed_from_u64(42);
        let train: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let targets = DMatrix::from_fn(40, 1, |r, _| truth(train[r][0], train[r][1]));
        let model = fit_gpc(2, 2, &train, &targets).unwrap();
        let y = predict_gpc(&model, &[0.6, -1.1]);
        assert_abs_diff_eq!(y[0], truth(0.6, -1.1), epsilon = 1e-9);
    }

    fn sin_training() -> (Vec<Vec<f64>>, DMatrix<f64>) {
        let train: Vec<Vec<f64>> =
            (0..30).map(|i| vec![3.0 * (i as f64 + 0.5) / 30.0]).collect();
        let targets = DMatrix::from_fn(30, 1, |r, _| train[r][0].sin());
        (train, targets)
    }

    #[test]
    fn gpr_interpolates_sine_on_held_out_grid() {
        // Thirty samples in (0, 3); max error on a held-out grid stays
        // within 1e-2.
        let (train, targets) = sin_training();
        let model = fit_gpr(&train, &targets).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=96 {
            let x = 0.05 + 2.9 * k as f64 / 96.0;
            let (y, var) = predict_gpr(&model, &[x]);
            worst = worst.max((y[0] - x.sin()).abs());
            assert!(var[0] >= 0.0);
        }
        assert!(worst <= 1e-2, "max held-out error {worst}");
    }

    #[test]
    fn gpr_reproduces_training_targets() {
        let (train, targets) = sin_training();
        let model = fit_gpr(&train, &targets).unwrap();
        for (i, mu) in train.iter().enumerate() {
            let (y, var) = predict_gpr(&model, mu);
            // With (K0 + jI) alpha = y - mean, the prediction at training
            // point i is exactly y_i - j alpha_i.
            let expect = targets[(i, 0)] - model.jitter * model.alpha[(i, 0)];
            assert_abs_diff_eq!(y[0], expect, epsilon = 1e-12 * (1.0 + expect.abs()));
            // The jitter-sized interpolation defect stays small in absolute
            // terms, and the posterior variance never exceeds the prior.
            assert!((y[0] - targets[(i, 0)]).abs() <= 1e-3);
            assert!(var[0] >= 0.0 && var[0] <= model.signal_variance[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gpr_matches_dense_kernel_regression() {
        let (train, targets) = sin_training();
        let model = fit_gpr(&train, &targets).unwrap();
        // Direct LU oracle on the same kernel system.
        let k = kernel_matrix(&train, model.length_scale, model.jitter);
        let lu = k.lu();
        let centered = DMatrix::from_fn(30, 1, |r, _| targets[(r, 0)] - model.means[0]);
        let alpha = lu.solve(&centered).unwrap();
        for &x in &[0.11, 0.9, 1.55, 2.3, 2.85] {
            let ell2 = 2.0 * model.length_scale * model.length_scale;
            let kstar = DVector::from_iterator(
                30,
                train.iter().map(|t| (-sq_dist(t, &[x]) / ell2).exp()),
            );
            let oracle = model.means[0] + alpha.column(0).dot(&kstar);
            let (y, _) = predict_gpr(&model, &[x]);
            assert_abs_diff_eq!(y[0], oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn gpr_constant_targets_predict_constant() {
        let train: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.3]).collect();
        let targets = DMatrix::from_element(10, 2, 4.25);
        let model = fit_gpr(&train, &targets).unwrap();
        assert_abs_diff_eq!(model.signal_variance[0], 0.0, epsilon = 1e-25);
        assert_abs_diff_eq!(model.signal_variance[1], 0.0, epsilon = 1e-25);
        let (y, var) = predict_gpr(&model, &[17.0]);
        assert_abs_diff_eq!(y[0], 4.25, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 4.25, epsilon = 1e-12);
        assert_abs_diff_eq!(var[0], 0.0, epsilon = 1e-25);
        assert_abs_diff_eq!(var[1], 0.0, epsilon = 1e-25);
    }

    #[test]
    fn gpr_zero_targets_give_zero_mean() {
        let train: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.5]).collect();
        let targets = DMatrix::zeros(8, 3);
        let model = fit_gpr(&train, &targets).unwrap();
        let (y, var) = predict_gpr(&model, &[1.3]);
        for c in 0..3 {
            assert_abs_diff_eq!(y[c], 0.0, epsilon = 1e-300);
            assert_abs_diff_eq!(var[c], 0.0, epsilon = 1e-300);
        }
    }

    #[test]
    fn gpr_variance_saturates_far_from_data_per_output() {
        // Two outputs with different scales: far from the data, each
        // posterior variance recovers its own prior signal variance.
        let (train, sine) = sin_training();
        let targets =
            DMatrix::from_fn(30, 2, |r, c| if c == 0 { sine[(r, 0)] } else { 5.0 * sine[(r, 0)] });
        let model = fit_gpr(&train, &targets).unwrap();
        let (_, var) = predict_gpr(&model, &[50.0]);
        assert_abs_diff_eq!(var[0], model.signal_variance[0], epsilon = 1e-10);
        assert_abs_diff_eq!(var[1], model.signal_variance[1], epsilon = 1e-9);
        assert_abs_diff_eq!(var[1], 25.0 * var[0], epsilon = 1e-9);
    }

    #[test]
    fn gpr_rejects_identical_inputs() {
        let train = vec![vec![1.0]; 5];
        let targets = DMatrix::zeros(5, 1);
        assert!(fit_gpr(&train, &targets).is_err());
    }

    #[test]
    fn gpr_round_trips_through_parts() {
        let (train, targets) = sin_training();
        let model = fit_gpr(&train, &targets).unwrap();
        let rebuilt = GprModel::from_parts(
            model.train_mu.clone(),
            model.length_scale,
            model.signal_variance.clone(),
            model.jitter,
            model.means.clone(),
            model.alpha.clone(),
        )
        .unwrap();
        for &x in &[0.4, 1.2, 2.2] {
            let (a, va) = predict_gpr(&model, &[x]);
            let (b, vb) = predict_gpr(&rebuilt, &[x]);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-14);
            assert_abs_diff_eq!(va[0], vb[0], epsilon = 1e-14);
        }
    }

    proptest! {
        #[test]
        fn multi_index_count_and_degree(m in 1usize..4, p in 0usize..5) {
            let idx = multi_indices(m, p);
            // C(m + p, p)
            let mut expect = 1usize;
            for k in 1..=p {
                expect = expect * (m + k) / k;
            }
            prop_assert_eq!(idx.len(), expect);
            for alpha in &idx {
                prop_assert_eq!(alpha.len(), m);
                prop_assert!(alpha.iter().sum::<usize>() <= p);
            }
        }

        #[test]
        fn hermite_recurrence_consistent(x in -3.0f64..3.0) {
            // eta_2 and eta_3 against closed forms.
            let eta = hermite_values(3, x);
            prop_assert!((eta[2] - (x * x - 1.0) / 2f64.sqrt()).abs() <= 1e-12);
            prop_assert!((eta[3] - (x.powi(3) - 3.0 * x) / 6f64.sqrt()).abs() <= 1e-12);
        }
    }
}
