//! Kernels, kernel vectors, Gram matrices and RKHS norms.
//!
//! Two families are supported. The polynomial-sum kernel
//! `K(x, y) = Σ_d c_d (xᵀy)^d` with nonnegative coefficients is positive
//! semidefinite by construction and splits into a linear part (`d = 1`) and a
//! purely nonlinear remainder (`d ≥ 2`). The Gaussian kernel has no linear
//! part; its nonlinear map is the full kernel vector.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Pairwise center distance below which a warning is emitted.
pub const DUPLICATE_CENTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `Σ_d coeffs[d-1] (xᵀy)^d`, `d = 1..=coeffs.len()`.
    PolynomialSum { coeffs: Vec<f64> },
    /// `exp(-|x - y|² / (2 ℓ²))`.
    Gaussian { lengthscale: f64 },
}

impl KernelSpec {
    pub fn polynomial_sum(coeffs: Vec<f64>) -> Result<Self> {
        let k = KernelSpec::PolynomialSum { coeffs };
        k.validate()?;
        Ok(k)
    }

    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { lengthscale };
        k.validate()?;
        Ok(k)
    }

    /// `xᵀy + (xᵀy)² + (xᵀy)³`.
    pub fn cubic() -> Self {
        KernelSpec::PolynomialSum {
            coeffs: vec![1.0, 1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::PolynomialSum { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::Input("polynomial-sum kernel needs at least one coefficient".into()));
                }
                if let Some(c) = coeffs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                    return Err(Error::Input(format!(
                        "polynomial-sum coefficients must be finite and nonnegative, got {c}"
                    )));
                }
            }
            KernelSpec::Gaussian { lengthscale } => {
                if !(lengthscale.is_finite() && *lengthscale > 0.0) {
                    return Err(Error::Input(format!(
                        "gaussian lengthscale must be positive, got {lengthscale}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short stable identifier, used in dataset manifests.
    pub fn id(&self) -> String {
        match self {
            KernelSpec::PolynomialSum { coeffs } => {
                let c: Vec<String> = coeffs.iter().map(|c| format!("{c}")).collect();
                format!("poly[{}]", c.join(","))
            }
            KernelSpec::Gaussian { lengthscale } => format!("gauss[{lengthscale}]"),
        }
    }

    /// Kernel value on slices of equal length; caller checks dimensions.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::PolynomialSum { coeffs } => {
                let ip: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                // Horner in the inner product, no constant term.
                coeffs.iter().rev().fold(0.0, |acc, c| (acc + c) * ip)
            }
            KernelSpec::Gaussian { lengthscale } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
        }
    }

    /// Coefficient of the linear term `xᵀy`, zero when the family has none.
    pub fn linear_coefficient(&self) -> f64 {
        match self {
            KernelSpec::PolynomialSum { coeffs } => coeffs[0],
            KernelSpec::Gaussian { .. } => 0.0,
        }
    }
}

/// Per-coordinate closed interval bounds; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub bounds: Vec<(f64, f64)>,
}

impl BoxDomain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
            return Err(Error::Input(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(BoxDomain { bounds })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi); dim])
    }

    pub fn unbounded(dim: usize) -> Self {
        BoxDomain {
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len()
            && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Kernel centers stored column-wise, `n × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    centers: DMatrix<f64>,
    domain: BoxDomain,
}

impl CenterSet {
    pub fn new(centers: DMatrix<f64>, domain: BoxDomain) -> Result<Self> {
        if centers.ncols() == 0 {
            return Err(Error::Input("center set needs at least one center".into()));
        }
        check_dim("center dimension vs domain box", domain.dim(), centers.nrows())?;
        for (j, c) in centers.column_iter().enumerate() {
            if !domain.contains(c.as_slice()) {
                return Err(Error::Input(format!("center {j} lies outside the domain box")));
            }
        }
        Ok(CenterSet { centers, domain })
    }

    pub fn unbounded(centers: DMatrix<f64>) -> Result<Self> {
        let domain = BoxDomain::unbounded(centers.nrows());
        Self::new(centers, domain)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn len(&self) -> usize {
        self.centers.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.ncols() == 0
    }

    /// Index pairs `(i, j)`, `i < j`, closer than [`DUPLICATE_CENTER_TOL`].
    pub fn near_duplicates(&self) -> Vec<(usize, usize)> {
        let t = self.len();
        let mut out = Vec::new();
        for i in 0..t {
            for j in i + 1..t {
                if (self.centers.column(i) - self.centers.column(j)).norm() < DUPLICATE_CENTER_TOL {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Symmetric Gram matrix `K_X`, entry `(i, j) = K(x_j, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn eval_kernel(k: &KernelSpec, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dim("kernel arguments", x.len(), y.len())?;
    Ok(k.eval_unchecked(x.as_slice(), y.as_slice()))
}

pub fn kernel_vector(k: &KernelSpec, x: &DVector<f64>, centers: &CenterSet) -> Result<DVector<f64>> {
    check_dim("kernel vector argument", centers.dim(), x.len())?;
    Ok(kernel_vector_unchecked(k, x.as_slice(), centers))
}

pub(crate) fn kernel_vector_unchecked(k: &KernelSpec, x: &[f64], centers: &CenterSet) -> DVector<f64> {
    DVector::from_iterator(
        centers.len(),
        centers
            .matrix()
            .column_iter()
            .map(|c| k.eval_unchecked(x, c.as_slice())),
    )
}

pub fn gram_matrix(k: &KernelSpec, centers: &CenterSet) -> GramMatrix {
    let dups = centers.near_duplicates();
    if !dups.is_empty() {
        warn!(
            "{} near-duplicate center pair(s), first {:?}; regularization keeps the system solvable",
            dups.len(),
            dups[0]
        );
    }
    let t = centers.len();
    let c = centers.matrix();
    let mut g = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let v = k.eval_unchecked(c.column(j).as_slice(), c.column(i).as_slice());
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    GramMatrix(g)
}

/// `αᵀ G α`, with round-off negatives clamped to zero.
pub fn rkhs_norm_sq(alpha: &DVector<f64>, gram: &GramMatrix) -> Result<f64> {
    check_dim("coefficient vector vs Gram matrix", gram.size(), alpha.len())?;
    let v = alpha.dot(&(gram.matrix() * alpha));
    Ok(v.max(0.0))
}

/// Nonlinear basis `k̂(x)` left after removing the linear part of `A k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearMap {
    kernel: KernelSpec,
    centers: CenterSet,
    /// When true `k̂ = k` (no linear part was split off).
    full_kernel: bool,
}

impl NonlinearMap {
    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    pub fn state_dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("nonlinear map argument", self.state_dim(), x.len())?;
        Ok(self.eval_unchecked(x.as_slice()))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> DVector<f64> {
        match (&self.kernel, self.full_kernel) {
            (KernelSpec::PolynomialSum { coeffs }, false) => DVector::from_iterator(
                self.centers.len(),
                self.centers.matrix().column_iter().map(|c| {
                    let ip: f64 = x.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                    // Σ_{d≥2} c_d ip^d
                    coeffs[1..].iter().rev().fold(0.0, |acc, c| (acc + c) * ip) * ip
                }),
            ),
            _ => kernel_vector_unchecked(&self.kernel, x, &self.centers),
        }
    }
}

/// Split `A k(x) = Ā x + Â k̂(x)` with `Â = A`.
///
/// For a polynomial-sum kernel with `c₁ > 0` the linear part is
/// `Ā = c₁ A Xᵀ` and `k̂` keeps the degree ≥ 2 terms. Otherwise `Ā = 0` and
/// `k̂ = k`.
pub fn linear_part(
    k: &KernelSpec,
    coeffs_a: &DMatrix<f64>,
    centers: &CenterSet,
) -> Result<(DMatrix<f64>, NonlinearMap)> {
    check_dim("coefficient matrix columns vs centers", centers.len(), coeffs_a.ncols())?;
    let n = coeffs_a.nrows();
    let c1 = k.linear_coefficient();
    if c1 > 0.0 {
        check_dim("state dimension", centers.dim(), n)?;
        let abar = coeffs_a * centers.matrix().transpose() * c1;
        Ok((
            abar,
            NonlinearMap {
                kernel: k.clone(),
                centers: centers.clone(),
                full_kernel: false,
            },
        ))
    } else {
        Ok((
            DMatrix::zeros(n, centers.dim()),
            NonlinearMap {
                kernel: k.clone(),
                centers: centers.clone(),
                full_kernel: true,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn unit_centers() -> CenterSet {
        CenterSet::unbounded(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap()
    }

    #[test]
    fn cubic_kernel_values() {
        let k = KernelSpec::cubic();
        assert_eq!(eval_kernel(&k, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(eval_kernel(&k, &v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 3.0);
        assert_eq!(eval_kernel(&k, &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let k = KernelSpec::cubic();
        assert!(matches!(
            eval_kernel(&k, &v(&[1.0]), &v(&[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
        assert!(kernel_vector(&k, &v(&[1.0]), &unit_centers()).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::polynomial_sum(vec![1.0, -0.1]).is_err());
        assert!(KernelSpec::polynomial_sum(vec![]).is_err());
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(0.5).is_ok());
    }

    #[test]
    fn kernel_vector_examples() {
        let k = KernelSpec::cubic();
        let c = unit_centers();
        assert_eq!(kernel_vector(&k, &v(&[0.0, 0.0]), &c).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(kernel_vector(&k, &v(&[1.0, 0.0]), &c).unwrap(), v(&[3.0, 0.0]));
    }

    #[test]
    fn gram_examples() {
        let k = KernelSpec::cubic();
        let g = gram_matrix(&k, &unit_centers());
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
        let single = CenterSet::unbounded(DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(gram_matrix(&k, &single).matrix(), &DMatrix::zeros(1, 1));
    }

    #[test]
    fn rkhs_norm_examples() {
        let g1 = GramMatrix(DMatrix::from_element(1, 1, 3.0));
        assert_eq!(rkhs_norm_sq(&v(&[1.0]), &g1).unwrap(), 3.0);
        assert_eq!(rkhs_norm_sq(&v(&[0.0]), &g1).unwrap(), 0.0);
        let g2 = GramMatrix(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
        assert_eq!(rkhs_norm_sq(&v(&[1.0, 1.0]), &g2).unwrap(), 6.0);
        assert!(rkhs_norm_sq(&v(&[1.0]), &g2).is_err());
    }

    #[test]
    fn near_duplicates_are_flagged() {
        let c = CenterSet::unbounded(DMatrix::from_row_slice(1, 3, &[0.5, 0.5 + 1e-12, 1.0])).unwrap();
        assert_eq!(c.near_duplicates(), vec![(0, 1)]);
    }

    #[test]
    fn centers_outside_box_rejected() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let c = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
        assert!(CenterSet::new(c, dom).is_err());
        assert!(CenterSet::unbounded(DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn no_linear_term_gives_zero_abar() {
        let k = KernelSpec::polynomial_sum(vec![0.0, 1.0, 1.0]).unwrap();
        let c = unit_centers();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (abar, map) = linear_part(&k, &a, &c).unwrap();
        assert_eq!(abar, DMatrix::zeros(2, 2));
        let x = v(&[0.3, -0.7]);
        assert_eq!(map.eval(&x).unwrap(), kernel_vector(&k, &x, &c).unwrap());
    }

    #[test]
    fn nonlinear_map_vanishes_at_origin() {
        let k = KernelSpec::polynomial_sum(vec![2.0, 0.5, 0.0, 1.5]).unwrap();
        let c = unit_centers();
        let (_, map) = linear_part(&k, &DMatrix::identity(2, 2), &c).unwrap();
        assert_eq!(map.eval(&v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
    }
}
