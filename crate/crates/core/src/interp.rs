//! Regularized kernel interpolation of the drift and its deterministic
//! error bound.
//!
//! The model is `s_f(x) = A k(x)` with `A = X₁ (λI + K)⁻¹`. The
//! f-independent factor of the error bound (the power function) is
//!
//! ```text
//! P(x)² = K(x,x) − k(x)ᵀ K̂⁻¹ k(x),   K̂ = (λI+K)(2λI+K)⁻¹(λI+K)
//! ```
//!
//! which is evaluated as `K(x,x) − wᵀ(2λI+K)w` with `(λI+K) w = k(x)`. Only the
//! Cholesky factor of `λI+K` is needed; `K̂` itself is badly conditioned for
//! small `λ` and is never formed on the evaluation path.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_matrix, kernel_vector_unchecked, rkhs_norm_sq, CenterSet, GramMatrix, KernelSpec};
use crate::linalg;

/// Relative tolerance on negative power-function radicands before they are
/// treated as a numerical inconsistency.
pub const RADICAND_TOL: f64 = 1e-9;

/// Minimum eigenvalue ratio below which a Gram matrix is not treated as
/// strictly positive definite when `λ = 0`.
pub const STRICT_PD_TOL: f64 = 1e-13;

/// One-step drift samples: `X1[:, k] = f(X0[:, k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDataset {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
}

impl DriftDataset {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        check_dim("X1 rows vs X0 rows", x0.nrows(), x1.nrows())?;
        check_dim("X1 columns vs X0 columns", x0.ncols(), x1.ncols())?;
        if x0.ncols() == 0 {
            return Err(Error::Input("drift dataset is empty".into()));
        }
        Ok(DriftDataset { x0, x1 })
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    pub fn len(&self) -> usize {
        self.x0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.ncols() == 0
    }
}

#[derive(Debug, Clone)]
pub struct InterpModel {
    kernel: KernelSpec,
    centers: CenterSet,
    lambda: f64,
    coeffs: DMatrix<f64>,
    gram: GramMatrix,
    /// Cholesky factor of `λI + K`.
    reg_gram: Cholesky<f64, Dyn>,
    /// `2λI + K`; together with `reg_gram` this determines `K̂`.
    double_reg_gram: DMatrix<f64>,
}

pub fn fit(data: &DriftDataset, kernel: &KernelSpec, lambda: f64) -> Result<InterpModel> {
    fit_with_centers(data, kernel, lambda, CenterSet::unbounded(data.x0.clone())?)
}

/// Fit using an explicit center set (must hold the columns of `data.x0`).
pub fn fit_with_centers(
    data: &DriftDataset,
    kernel: &KernelSpec,
    lambda: f64,
    centers: CenterSet,
) -> Result<InterpModel> {
    kernel.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Input(format!("regularization must be nonnegative, got {lambda}")));
    }
    if centers.matrix() != &data.x0 {
        return Err(Error::Input("centers must equal the drift inputs X0".into()));
    }
    let gram = gram_matrix(kernel, &centers);
    let t = gram.size();
    if lambda == 0.0 {
        let ev = linalg::sym_eigenvalues(gram.matrix());
        let (lo, hi) = (ev[0], ev[t - 1]);
        if !(lo > STRICT_PD_TOL * hi.max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular(format!(
                "λ = 0 needs a strictly positive definite Gram matrix (eigenvalues in [{lo:e}, {hi:e}])"
            )));
        }
    }
    let reg = gram.matrix() + DMatrix::identity(t, t) * lambda;
    let reg_gram = reg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("λI + K is not positive definite".into()))?;
    // A (λI+K) = X₁  ⇔  (λI+K) Aᵀ = X₁ᵀ
    let coeffs = reg_gram.solve(&data.x1.transpose()).transpose();
    let double_reg_gram = gram.matrix() + DMatrix::identity(t, t) * (2.0 * lambda);
    Ok(InterpModel {
        kernel: kernel.clone(),
        centers,
        lambda,
        coeffs,
        gram,
        reg_gram,
        double_reg_gram,
    })
}

impl InterpModel {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Coefficient matrix `A`, `n × T`.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn state_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    /// Same model with `A` replaced; used to probe optimality of the fit.
    pub fn with_coeffs(mut self, coeffs: DMatrix<f64>) -> Result<Self> {
        check_dim("coefficient rows", self.coeffs.nrows(), coeffs.nrows())?;
        check_dim("coefficient columns", self.coeffs.ncols(), coeffs.ncols())?;
        self.coeffs = coeffs;
        Ok(self)
    }

    /// `‖A(λI+K) − X₁‖_F / ‖X₁‖_F`.
    pub fn fit_residual(&self, data: &DriftDataset) -> f64 {
        let t = self.num_centers();
        let reg = self.gram.matrix() + DMatrix::identity(t, t) * self.lambda;
        let r = &self.coeffs * reg - &data.x1;
        r.norm() / data.x1.norm().max(f64::MIN_POSITIVE)
    }

    /// Explicit `K̂ = (λI+K)(2λI+K)⁻¹(λI+K)`, for diagnostics only.
    pub fn power_core(&self) -> Result<DMatrix<f64>> {
        let t = self.num_centers();
        let reg = self.gram.matrix() + DMatrix::identity(t, t) * self.lambda;
        let inner = self
            .double_reg_gram
            .clone()
            .lu()
            .solve(&reg)
            .ok_or_else(|| Error::Singular("2λI + K is singular".into()))?;
        Ok(linalg::symmetrize(&(&reg * inner)))
    }

    pub fn kernel_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(kernel_vector_unchecked(&self.kernel, x.as_slice(), &self.centers))
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.coeffs * self.kernel_vector(x)?)
    }

    pub fn power_function(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(self.power_radicand(x.as_slice())?.sqrt())
    }

    /// Clamped radicand `max(0, K(x,x) − kᵀK̂⁻¹k)`.
    pub(crate) fn power_radicand(&self, x: &[f64]) -> Result<f64> {
        let kxx = self.kernel.eval_unchecked(x, x);
        let k = kernel_vector_unchecked(&self.kernel, x, &self.centers);
        let w = self.reg_gram.solve(&k);
        let rad = kxx - w.dot(&(&self.double_reg_gram * &w));
        let tol = RADICAND_TOL * (1.0 + kxx.abs());
        if rad < -tol {
            return Err(Error::NumericalConsistency {
                what: "power-function radicand",
                value: rad,
                tolerance: tol,
            });
        }
        Ok(rad.max(0.0))
    }

    /// Row `row` (0-based) of the interpolation cost
    /// `Σ_k |X1(row,k) − s_f(X0(:,k))_row|² + λ ‖s_row‖²_H`.
    pub fn regularized_cost(&self, data: &DriftDataset, row: usize) -> Result<f64> {
        if row >= self.state_dim() {
            return Err(Error::Input(format!(
                "row {row} out of range for state dimension {}",
                self.state_dim()
            )));
        }
        check_dim("dataset state dimension", self.state_dim(), data.state_dim())?;
        let alpha = linalg::row_vector(&self.coeffs, row);
        let mut fit_err = 0.0;
        for (k, x) in data.x0.column_iter().enumerate() {
            let kv = kernel_vector_unchecked(&self.kernel, x.as_slice(), &self.centers);
            let r = data.x1[(row, k)] - alpha.dot(&kv);
            fit_err += r * r;
        }
        Ok(fit_err + self.lambda * rkhs_norm_sq(&alpha, &self.gram)?)
    }
}

/// Componentwise RKHS-norm bounds `Γ` attached to a fitted model.
#[derive(Debug, Clone)]
pub struct ErrorBound {
    gamma: DVector<f64>,
    model: Arc<InterpModel>,
}

impl ErrorBound {
    pub fn new(gamma: Vec<f64>, model: Arc<InterpModel>) -> Result<Self> {
        check_dim("Γ length vs state dimension", model.state_dim(), gamma.len())?;
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::Input(format!("Γ entries must be nonnegative, got {g}")));
        }
        Ok(ErrorBound {
            gamma: DVector::from_vec(gamma),
            model,
        })
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn gamma_norm(&self) -> f64 {
        self.gamma.norm()
    }

    pub fn model(&self) -> &Arc<InterpModel> {
        &self.model
    }

    /// `δ(x) = |Γ| · P(x)`.
    pub fn delta(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.gamma_norm() * self.model.power_function(x)?)
    }

    pub(crate) fn delta_unchecked(&self, x: &[f64]) -> Result<f64> {
        Ok(self.gamma_norm() * self.model.power_radicand(x)?.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn scalar_exact_fit() {
        let data = DriftDataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[6.0, 0.0]),
        )
        .unwrap();
        let m = fit(&data, &KernelSpec::cubic(), 0.0).unwrap();
        assert!((m.coeffs()[(0, 0)] - 2.0).abs() < 1e-14);
        assert_eq!(m.coeffs()[(1, 0)], 0.0);
        let p = m.predict(&v(&[1.0, 0.0])).unwrap();
        assert!((p[0] - 6.0).abs() < 1e-13 && p[1].abs() < 1e-15);
        assert!(m.power_function(&v(&[1.0, 0.0])).unwrap() < 1e-7);
    }

    #[test]
    fn origin_predicts_zero_with_zero_power() {
        let data = DriftDataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        )
        .unwrap();
        let m = fit(&data, &KernelSpec::cubic(), 1e-3).unwrap();
        assert_eq!(m.predict(&v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(m.power_function(&v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        let data = DriftDataset::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(fit(&data, &KernelSpec::cubic(), -1.0), Err(Error::Input(_))));
    }

    #[test]
    fn singular_gram_without_regularization_rejected() {
        // Three collinear points in 1-D span a 3-dim cubic feature space, but
        // four points do not.
        let x0 = DMatrix::from_row_slice(1, 4, &[0.5, 1.0, -1.0, 2.0]);
        let data = DriftDataset::new(x0.clone(), x0).unwrap();
        assert!(matches!(fit(&data, &KernelSpec::cubic(), 0.0), Err(Error::Singular(_))));
        assert!(fit(&data, &KernelSpec::cubic(), 1e-6).is_ok());
    }

    #[test]
    fn zero_gamma_gives_zero_delta() {
        let data = DriftDataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        )
        .unwrap();
        let m = Arc::new(fit(&data, &KernelSpec::cubic(), 1e-3).unwrap());
        let b = ErrorBound::new(vec![0.0, 0.0], m.clone()).unwrap();
        assert_eq!(b.delta(&v(&[0.7, -1.3])).unwrap(), 0.0);
        assert!(ErrorBound::new(vec![1.0], m.clone()).is_err());
        assert!(ErrorBound::new(vec![1.0, -1.0], m).is_err());
    }

    #[test]
    fn cost_row_out_of_range() {
        let data = DriftDataset::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let m = fit(&data, &KernelSpec::cubic(), 0.0).unwrap();
        assert!(m.regularized_cost(&data, 1).is_err());
        assert!(m.regularized_cost(&data, 0).unwrap().abs() < 1e-12);
    }
}
