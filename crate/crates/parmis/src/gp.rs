//! Gaussian-process regression over policy-parameter space.
//!
//! One objective gets one independent zero-mean GP. Targets are standardized
//! internally (zero mean, unit variance); kernel hyperparameters and noise
//! are always expressed in original target units, so callers never see the
//! standardization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Squared-exponential kernel, isotropic (one lengthscale) or ARD (one per
/// input dimension).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    lengthscales: Vec<f64>,
    signal_variance: f64,
}

impl KernelSpec {
    pub fn isotropic(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale], signal_variance)
    }

    pub fn ard(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.len() < 2 {
            return Err(Error::input("ARD kernel needs one lengthscale per dimension"));
        }
        Self::new(lengthscales, signal_variance)
    }

    fn new(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::input("lengthscales must be positive"));
        }
        if !(signal_variance > 0.0) {
            return Err(Error::input("signal variance must be positive"));
        }
        Ok(KernelSpec { lengthscales, signal_variance })
    }

    pub fn is_isotropic(&self) -> bool {
        self.lengthscales.len() == 1
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    /// Lengthscale for input dimension `j`.
    fn lengthscale_for(&self, j: usize) -> f64 {
        if self.is_isotropic() {
            self.lengthscales[0]
        } else {
            self.lengthscales[j]
        }
    }

    /// k(a, b) = signal_variance * exp(-0.5 * sum(((a_j - b_j)/l_j)^2))
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut sq = 0.0;
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            let d = (x - y) / self.lengthscale_for(j);
            sq += d * d;
        }
        self.signal_variance * (-0.5 * sq).exp()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if !self.is_isotropic() && self.lengthscales.len() != d {
            return Err(Error::input(format!(
                "ARD kernel has {} lengthscales but inputs have dimension {d}",
                self.lengthscales.len()
            )));
        }
        Ok(())
    }
}

/// Pairwise squared Euclidean distances between the rows of `x`.
pub fn pairwise_sqdist(x: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = x * x.transpose();
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
        }
    }
    out
}

/// Squared distances between rows of `a` and rows of `b` (a.nrows x b.nrows).
fn cross_sqdist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let cross = a * b.transpose();
    let a_sq: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let b_sq: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            out[(i, j)] = (a_sq[i] + b_sq[j] - 2.0 * cross[(i, j)]).max(0.0);
        }
    }
    out
}

/// Scales each column of `x` by the reciprocal lengthscale.
fn scale_columns(x: &DMatrix<f64>, kernel: &KernelSpec) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for j in 0..scaled.ncols() {
        let l = kernel.lengthscale_for(j);
        scaled.column_mut(j).scale_mut(1.0 / l);
    }
    scaled
}

/// Jitter ladder: start at 1e-10 relative to the mean diagonal, escalate
/// tenfold up to 1e-4, then give up.
const JITTER_START_REL: f64 = 1e-10;
const JITTER_MAX_REL: f64 = 1e-4;

fn cholesky_with_jitter(base: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = base.nrows();
    let diag_scale = base.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut jitter_rel = JITTER_START_REL;
    loop {
        let jitter = jitter_rel * diag_scale;
        let mut attempt = base.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = attempt.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
        jitter_rel *= 10.0;
        if jitter_rel > JITTER_MAX_REL {
            return Err(Error::numerical(
                "kernel matrix is not positive definite after maximum jitter escalation",
            ));
        }
    }
}

/// A fitted Gaussian process for a single objective. Immutable after `fit`;
/// `predict` and posterior sampling are pure.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    kernel: KernelSpec,
    noise_variance: f64,
    inputs: DMatrix<f64>,
    targets: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    /// Lower Cholesky factor of K_std + (noise/y_std^2 + jitter) I.
    chol_lower: DMatrix<f64>,
    jitter: f64,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

fn standardize(targets: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    let z = DVector::from_iterator(targets.len(), targets.iter().map(|y| (y - mean) / std));
    (mean, std, z)
}

fn inputs_to_matrix(inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::input("at least one training point is required"));
    }
    let d = inputs[0].len();
    if d == 0 {
        return Err(Error::input("inputs must have dimension >= 1"));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
        return Err(Error::input(format!(
            "input dimension mismatch: expected {d}, got {}",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(inputs.len(), d, |i, j| inputs[i][j]))
}

impl GaussianProcess {
    /// Fits a GP to `(inputs, targets)` with the given kernel and observation
    /// noise variance (original target units).
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self> {
        let x = inputs_to_matrix(inputs)?;
        let scaled = scale_columns(&x, &kernel);
        let sqdist = pairwise_sqdist(&scaled);
        Self::fit_inner(x, sqdist, targets, kernel, noise_variance)
    }

    /// Fit variant that reuses a precomputed unscaled pairwise squared
    /// distance matrix. Only valid for isotropic kernels, where scaling by
    /// the lengthscale commutes with the distance computation.
    pub fn fit_cached(
        x: DMatrix<f64>,
        unscaled_sqdist: &DMatrix<f64>,
        targets: &[f64],
        kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self> {
        if !kernel.is_isotropic() {
            return Err(Error::input("fit_cached requires an isotropic kernel"));
        }
        let inv_l2 = 1.0 / (kernel.lengthscales()[0] * kernel.lengthscales()[0]);
        let sqdist = unscaled_sqdist * inv_l2;
        Self::fit_inner(x, sqdist, targets, kernel, noise_variance)
    }

    fn fit_inner(
        x: DMatrix<f64>,
        scaled_sqdist: DMatrix<f64>,
        targets: &[f64],
        kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        if targets.len() != n {
            return Err(Error::input(format!(
                "got {n} inputs but {} targets",
                targets.len()
            )));
        }
        if !(noise_variance >= 0.0) {
            return Err(Error::input("noise variance must be >= 0"));
        }
        kernel.check_dim(x.ncols())?;

        let (y_mean, y_std, z) = standardize(targets);
        let sv_std = kernel.signal_variance() / (y_std * y_std);
        let noise_std = noise_variance / (y_std * y_std);

        let mut k = scaled_sqdist;
        k.apply(|v| *v = sv_std * (-0.5 * *v).exp());
        for i in 0..n {
            k[(i, i)] += noise_std;
        }

        let (chol_lower, jitter) = cholesky_with_jitter(&k)?;
        let tmp = chol_lower
            .solve_lower_triangular(&z)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
        let alpha = chol_lower
            .tr_solve_lower_triangular(&tmp)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;

        let log_det_half: f64 = chol_lower.diagonal().iter().map(|v| v.ln()).sum();
        let lml = -0.5 * z.dot(&alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        Ok(GaussianProcess {
            kernel,
            noise_variance,
            inputs: x,
            targets: targets.to_vec(),
            y_mean,
            y_std,
            chol_lower,
            jitter,
            alpha,
            log_marginal_likelihood: lml,
        })
    }

    pub fn num_points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn inputs_matrix(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub(crate) fn y_moments(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    pub(crate) fn standardized_targets(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.targets.len(),
            self.targets.iter().map(|y| (y - self.y_mean) / self.y_std),
        )
    }

    pub(crate) fn noise_std_units(&self) -> f64 {
        self.noise_variance / (self.y_std * self.y_std)
    }

    /// Log marginal likelihood of the standardized-target model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// Lower Cholesky factor of the (standardized, jittered) training
    /// covariance.
    pub fn factor_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior predictive mean and standard deviation at `query`,
    /// in original target units. The std includes observation noise.
    pub fn predict(&self, query: &[f64]) -> Result<(f64, f64)> {
        if query.len() != self.dim() {
            return Err(Error::input(format!(
                "query dimension {} does not match model dimension {}",
                query.len(),
                self.dim()
            )));
        }
        let q = DMatrix::from_fn(1, query.len(), |_, j| query[j]);
        let (mean, std) = self.predict_batch(&q)?;
        Ok((mean[0], std[0]))
    }

    /// Batched predictions for the rows of `queries`.
    pub fn predict_batch(&self, queries: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if queries.ncols() != self.dim() {
            return Err(Error::input(format!(
                "query dimension {} does not match model dimension {}",
                queries.ncols(),
                self.dim()
            )));
        }
        let sv_std = self.kernel.signal_variance() / (self.y_std * self.y_std);
        let noise_std = self.noise_std_units();

        let q_scaled = scale_columns(queries, &self.kernel);
        let x_scaled = scale_columns(&self.inputs, &self.kernel);
        let mut kx = cross_sqdist(&x_scaled, &q_scaled); // n x m
        kx.apply(|v| *v = sv_std * (-0.5 * *v).exp());

        let mean_std = kx.transpose() * &self.alpha;
        let v = self
            .chol_lower
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;

        let m = queries.nrows();
        let mut means = DVector::zeros(m);
        let mut stds = DVector::zeros(m);
        for j in 0..m {
            let explained = v.column(j).norm_squared();
            let var = (sv_std + noise_std - explained).max(0.0);
            means[j] = self.y_mean + self.y_std * mean_std[j];
            stds[j] = self.y_std * var.sqrt();
        }
        Ok((means, stds))
    }
}

/// Bounds for hyperparameter search, in original units (log-space ascent).
const HYPER_BOUND_LO: f64 = 1e-3;
const HYPER_BOUND_HI: f64 = 1e3;

/// Maximizes the log marginal likelihood over kernel hyperparameters by
/// multi-start coordinate ascent in log-space. The returned spec never has a
/// worse LML than `init`.
pub fn fit_hyperparameters(
    inputs: &[Vec<f64>],
    targets: &[f64],
    init: &KernelSpec,
    noise_variance: f64,
) -> Result<KernelSpec> {
    if inputs.len() < 2 {
        return Err(Error::input("hyperparameter fitting needs at least 2 points"));
    }
    let x = inputs_to_matrix(inputs)?;
    init.check_dim(x.ncols())?;

    // degenerate targets: nothing to learn from
    let (_, _, z) = standardize(targets);
    let raw_var = {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
    };
    if raw_var == 0.0 {
        let sv = init.signal_variance().max(1e-6);
        return KernelSpec::new(init.lengthscales().to_vec(), sv);
    }
    let _ = z;

    let unscaled_sqdist = if init.is_isotropic() {
        Some(pairwise_sqdist(&x))
    } else {
        None
    };

    let lml_of = |spec: &KernelSpec| -> f64 {
        let fit = match &unscaled_sqdist {
            Some(sq) => GaussianProcess::fit_cached(x.clone(), sq, targets, spec.clone(), noise_variance),
            None => GaussianProcess::fit(inputs, targets, spec.clone(), noise_variance),
        };
        fit.map(|m| m.log_marginal_likelihood()).unwrap_or(f64::NEG_INFINITY)
    };

    let clamp = |v: f64| v.clamp(HYPER_BOUND_LO.ln(), HYPER_BOUND_HI.ln());
    let to_spec = |params: &[f64]| -> KernelSpec {
        let sv = params[0].exp();
        let ls: Vec<f64> = params[1..].iter().map(|p| p.exp()).collect();
        KernelSpec { lengthscales: ls, signal_variance: sv }
    };

    let init_params: Vec<f64> = std::iter::once(clamp(init.signal_variance().ln()))
        .chain(init.lengthscales().iter().map(|l| clamp(l.ln())))
        .collect();

    // median-heuristic start: lengthscale ~ median pairwise distance
    let median_start = {
        let sq = match &unscaled_sqdist {
            Some(sq) => sq.clone(),
            None => pairwise_sqdist(&x),
        };
        let mut dists: Vec<f64> = (0..x.nrows())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| sq[(i, j)].sqrt())
            .filter(|d| *d > 0.0)
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dists.get(dists.len() / 2).copied().unwrap_or(1.0);
        let mut p = init_params.clone();
        p[0] = clamp(0.0); // unit signal variance in original units
        for q in p[1..].iter_mut() {
            *q = clamp(median.max(1e-3).ln());
        }
        p
    };

    let starts = vec![init_params.clone(), median_start];
    let mut best_params = init_params.clone();
    let mut best_lml = lml_of(init);

    for start in starts {
        let mut params = start;
        let mut current = lml_of(&to_spec(&params));
        let mut step = 0.7;
        while step > 0.02 {
            let mut improved = false;
            for i in 0..params.len() {
                for dir in [1.0, -1.0] {
                    let mut trial = params.clone();
                    trial[i] = clamp(trial[i] + dir * step);
                    if trial[i] == params[i] {
                        continue;
                    }
                    let lml = lml_of(&to_spec(&trial));
                    if lml > current {
                        params = trial;
                        current = lml;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if current > best_lml {
            best_lml = current;
            best_params = params;
        }
    }

    Ok(to_spec(&best_params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_validation() {
        assert!(KernelSpec::isotropic(0.0, 1.0).is_err());
        assert!(KernelSpec::isotropic(1.0, 0.0).is_err());
        assert!(KernelSpec::ard(vec![1.0, -1.0], 1.0).is_err());
        assert!(KernelSpec::isotropic(1.0, 1.0).is_ok());
    }

    #[test]
    fn single_point_noiseless_interpolation() {
        let kernel = KernelSpec::isotropic(1.0, 1.0).unwrap();
        let gp = GaussianProcess::fit(&[vec![0.3, -0.2]], &[4.5], kernel, 0.0).unwrap();
        let (mean, std) = gp.predict(&[0.3, -0.2]).unwrap();
        assert!((mean - 4.5).abs() < 1e-9, "mean {mean}");
        assert!(std < 1e-4, "std {std}");
    }

    #[test]
    fn empty_inputs_rejected() {
        let kernel = KernelSpec::isotropic(1.0, 1.0).unwrap();
        let err = GaussianProcess::fit(&[], &[], kernel, 0.0);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let kernel = KernelSpec::isotropic(1.0, 1.0).unwrap();
        let err = GaussianProcess::fit(&[vec![0.0], vec![1.0, 2.0]], &[0.0, 1.0], kernel, 0.0);
        assert!(matches!(err, Err(Error::Input(_))));
        let kernel = KernelSpec::isotropic(1.0, 1.0).unwrap();
        let gp = GaussianProcess::fit(&[vec![0.0]], &[1.0], kernel, 0.0).unwrap();
        assert!(matches!(gp.predict(&[0.0, 1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn far_query_recovers_prior() {
        let kernel = KernelSpec::isotropic(0.5, 1.0).unwrap();
        let inputs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let targets = vec![0.1, -0.3, 0.2];
        let gp = GaussianProcess::fit(&inputs, &targets, kernel, 0.0).unwrap();
        let (_, std) = gp.predict(&[50.0]).unwrap();
        assert!((std - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn noiseless_sin_interpolates() {
        let xs = [0.0, 0.7, 1.9, 3.1, 4.6];
        let inputs: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let targets: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let kernel = KernelSpec::isotropic(1.0, 1.0).unwrap();
        let gp = GaussianProcess::fit(&inputs, &targets, kernel, 1e-6).unwrap();
        for (x, y) in xs.iter().zip(&targets) {
            let (mean, _) = gp.predict(&[*x]).unwrap();
            assert!((mean - y).abs() < 1e-4, "at {x}: {mean} vs {y}");
        }
    }

    #[test]
    fn factor_reproduces_covariance() {
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.4, (i as f64).cos()]).collect();
        let targets: Vec<f64> = (0..6).map(|i| (i as f64 * 0.9).sin()).collect();
        let kernel = KernelSpec::isotropic(0.8, 2.0).unwrap();
        let noise = 0.01;
        let gp = GaussianProcess::fit(&inputs, &targets, kernel.clone(), noise).unwrap();

        let (_, y_std) = gp.y_moments();
        let n = inputs.len();
        let mut expected = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                expected[(i, j)] = kernel.eval(&inputs[i], &inputs[j]) / (y_std * y_std);
            }
            expected[(i, i)] += noise / (y_std * y_std);
        }
        let reconstructed = gp.factor_lower() * gp.factor_lower().transpose();
        let rel = (&reconstructed - &expected).norm() / expected.norm();
        assert!(rel < 1e-8, "relative Frobenius error {rel}");
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let kernel = KernelSpec::isotropic(0.7, 1.3).unwrap();
        let inputs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let targets = vec![1.0, -1.0, 0.5];
        let noise = 0.05;
        let gp = GaussianProcess::fit(&inputs, &targets, kernel, noise).unwrap();
        for i in 0..60 {
            let q = -3.0 + i as f64 * 0.1;
            let (_, std) = gp.predict(&[q]).unwrap();
            assert!(std * std <= 1.3 + noise + 1e-6);
        }
    }

    #[test]
    fn hyperfit_degenerate_targets() {
        let inputs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let targets = vec![3.0, 3.0, 3.0];
        let init = KernelSpec::isotropic(0.5, 1e-9).unwrap();
        let out = fit_hyperparameters(&inputs, &targets, &init, 1e-6).unwrap();
        assert_eq!(out.lengthscales(), init.lengthscales());
        assert!((out.signal_variance() - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn hyperfit_never_degrades_lml() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let inputs: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let targets: Vec<f64> = xs.iter().map(|x| (1.7 * x).sin() + 0.1 * x).collect();
        let init = KernelSpec::isotropic(2.0, 0.5).unwrap();
        let noise = 1e-4;
        let tuned = fit_hyperparameters(&inputs, &targets, &init, noise).unwrap();
        let lml_init = GaussianProcess::fit(&inputs, &targets, init, noise)
            .unwrap()
            .log_marginal_likelihood();
        let lml_tuned = GaussianProcess::fit(&inputs, &targets, tuned, noise)
            .unwrap()
            .log_marginal_likelihood();
        assert!(lml_tuned >= lml_init - 1e-9, "{lml_tuned} < {lml_init}");
    }
}
