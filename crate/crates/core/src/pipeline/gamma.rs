//! RKHS norms of polynomial drift components under a polynomial-sum kernel.
//!
//! With `K(x, y) = Σ_d c_d (xᵀy)^d` every kernel section expands in the
//! monomials `x^e`, `1 ≤ |e| ≤ D`, as `K(x, x_j) = Σ_e c_{|e|} multinom(e) x_j^e x^e`.
//! Collecting these rows gives `M_k` (`T × N`), and a polynomial with
//! coefficient row `c` equals `Σ_j α_j K(·, x_j)` whenever `α M_k = c`.
//! Its squared norm is then `α K_X αᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::InterpModel;
use crate::kernel::KernelSpec;
use crate::linalg;

pub const DEFAULT_OVERAPPROX_FACTOR: f64 = 1.3;

/// `coeff · x₁^{powers[0]} ⋯ xₙ^{powers[n-1]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, powers: Vec<u32>) -> Self {
        Monomial { coeff, powers }
    }

    fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaComponent {
    /// `α K_X αᵀ`.
    pub norm_sq: f64,
    pub norm: f64,
    /// `|α M_k − c|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaDerivation {
    pub num_monomials: usize,
    pub rank: usize,
    pub components: Vec<GammaComponent>,
    pub factor: f64,
    /// `factor · max(norm, norm_sq)`, a valid bound under either reading.
    pub suggested: Vec<f64>,
}

/// All exponent vectors of total degree `d` in `n` variables, lexicographic.
fn exponents(n: usize, d: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![d]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for mut rest in exponents(n - 1, d - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn multinomial(e: &[u32]) -> f64 {
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    fact(e.iter().sum()) / e.iter().map(|&k| fact(k)).product::<f64>()
}

fn monomial_value(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(v, &p)| v.powi(p as i32)).product()
}

/// `(M_k, basis)` for the centers of `model`.
pub fn monomial_kernel_matrix(model: &InterpModel) -> Result<(DMatrix<f64>, Vec<Vec<u32>>)> {
    let KernelSpec::PolynomialSum { coeffs } = model.kernel() else {
        return Err(Error::Input("monomial expansion needs a polynomial-sum kernel".into()));
    };
    let n = model.state_dim();
    let basis: Vec<(f64, Vec<u32>)> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0.0)
        .flat_map(|(i, c)| exponents(n, i as u32 + 1).into_iter().map(move |e| (*c, e)))
        .collect();
    let centers = model.centers().matrix();
    let mk = DMatrix::from_fn(centers.ncols(), basis.len(), |j, b| {
        let (c, e) = &basis[b];
        c * multinomial(e) * monomial_value(centers.column(j).as_slice(), e)
    });
    Ok((mk, basis.into_iter().map(|(_, e)| e).collect()))
}

pub fn derive_gamma_from_monomials(
    components: &[Vec<Monomial>],
    model: &InterpModel,
    factor: f64,
) -> Result<GammaDerivation> {
    if components.len() != model.state_dim() {
        return Err(Error::Input(format!(
            "expected {} drift components, got {}",
            model.state_dim(),
            components.len()
        )));
    }
    let (mk, basis) = monomial_kernel_matrix(model)?;
    let sv = linalg::singular_values(&mk);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > 1e-10 * smax).count();
    if rank < basis.len() {
        return Err(Error::Input(format!(
            "monomial-to-kernel matrix has rank {rank} < {} monomials; collect more or better spread samples",
            basis.len()
        )));
    }
    // min-norm α solving α M_k = c, via M_kᵀ αᵀ = cᵀ
    let pinv = mk
        .transpose()
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let gram = model.gram().matrix();
    let mut out = Vec::with_capacity(components.len());
    for poly in components {
        let mut c = DVector::zeros(basis.len());
        for mono in poly {
            if mono.powers.len() != model.state_dim() {
                return Err(Error::Input("monomial exponent vector has the wrong length".into()));
            }
            if mono.coeff == 0.0 {
                continue;
            }
            let idx = basis.iter().position(|e| *e == mono.powers).ok_or_else(|| {
                Error::Input(format!(
                    "monomial of degree {} is not spanned by the kernel",
                    mono.degree()
                ))
            })?;
            c[idx] += mono.coeff;
        }
        let alpha = &pinv * &c;
        let residual = (mk.transpose() * &alpha - &c).norm();
        let norm_sq = alpha.dot(&(gram * &alpha)).max(0.0);
        out.push(GammaComponent {
            norm_sq,
            norm: norm_sq.sqrt(),
            residual,
        });
    }
    Ok(GammaDerivation {
        num_monomials: basis.len(),
        rank,
        suggested: out.iter().map(|g| factor * g.norm.max(g.norm_sq)).collect(),
        components: out,
        factor,
    })
}
