//! Lyapunov decrease bound and certification of invariant sublevel sets.
//!
//! For `V(x) = xᵀSx` with `S = P⁻¹` the closed loop satisfies
//! `V(x⁺) − V(x) ≤ l(x) + g(x, δ(x))`. With `𝒳 = {l + g ≤ 0}` and
//! `ℛ_γ = {V ≤ γ}`, the level set is positively invariant once
//! `V + l + g ≤ γ` holds on `ℛ_γ ∖ 𝒳`. Since that inequality is automatic on
//! `ℛ_γ ∩ 𝒳`, certification checks it on a grid covering `ℛ_γ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interp::ErrorBound;
use crate::kernel::{BoxDomain, NonlinearMap};
use crate::linalg;
use crate::plant::PlantModel;
use crate::synthesis::{SynthesisProblem, SynthesisResult};

/// `V(x) = xᵀP⁻¹x` with a sublevel `γ`.
#[derive(Debug, Clone)]
pub struct LyapunovCert {
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    gamma: f64,
}

impl LyapunovCert {
    pub fn new(p: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if p.nrows() != p.ncols() || !linalg::is_symmetric(&p, 1e-10) {
            return Err(Error::Input("P must be square and symmetric".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Input(format!("level γ must be positive, got {gamma}")));
        }
        let p = linalg::symmetrize(&p);
        let p_inv = linalg::spd_inverse(&p)?;
        Ok(LyapunovCert { p, p_inv, gamma })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        LyapunovCert::new(self.p.clone(), gamma)
    }

    /// Half-widths of the bounding box of `ℛ_γ`: `sqrt(γ P_ii)`.
    pub fn bounding_half_widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| (self.gamma * self.p[(i, i)]).sqrt()).collect()
    }
}

pub fn lyapunov_value(cert: &LyapunovCert, x: &DVector<f64>) -> Result<f64> {
    check_dim("state", cert.dim(), x.len())?;
    Ok(quad(&cert.p_inv, x.as_slice()))
}

fn quad(s: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    v.dot(&(s * &v))
}

/// Individual terms of the decrease bound at one point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualTerms {
    pub quadratic: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub delta: f64,
}

impl ResidualTerms {
    pub fn l(&self) -> f64 {
        self.quadratic + self.l1 + self.l2 + self.l3 + self.l4
    }

    pub fn g(&self) -> f64 {
        (self.r1 + self.r2) * self.delta + self.r3 * self.delta * self.delta
    }

    pub fn bound(&self) -> f64 {
        self.l() + self.g()
    }
}

/// Evaluates `l(x)`, `g(x, δ)` and their sum for a synthesized controller
/// and a (possibly different) Lyapunov matrix.
#[derive(Debug, Clone)]
pub struct ResidualEvaluator {
    acl: DMatrix<f64>,
    xi: DMatrix<f64>,
    u0dag: DMatrix<f64>,
    kbar: DMatrix<f64>,
    khat: DMatrix<f64>,
    delta_norm: f64,
    s: DMatrix<f64>,
    s_norm: f64,
    sqs: DMatrix<f64>,
    map: Option<NonlinearMap>,
    nonlinear_dim: usize,
    bound: ErrorBound,
}

impl ResidualEvaluator {
    pub fn new(
        problem: &SynthesisProblem,
        result: &SynthesisResult,
        cert: &LyapunovCert,
        bound: &ErrorBound,
    ) -> Result<Self> {
        check_dim("Lyapunov matrix vs state", problem.state_dim(), cert.dim())?;
        check_dim("error bound vs state", problem.state_dim(), bound.model().state_dim())?;
        let s = cert.p_inv.clone();
        Ok(ResidualEvaluator {
            acl: result.closed_loop_linear(problem),
            xi: result.residual.clone(),
            u0dag: problem.u0dag.clone(),
            kbar: result.kbar.clone(),
            khat: result.khat.clone(),
            delta_norm: problem.delta_scale,
            s_norm: linalg::spectral_norm(&s),
            sqs: &s * &problem.q * &s,
            s,
            map: problem.nonlinear.clone(),
            nonlinear_dim: problem.nonlinear_dim(),
            bound: bound.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    fn khat_at(&self, x: &[f64]) -> DVector<f64> {
        match &self.map {
            Some(m) => m.eval_unchecked(x),
            None => DVector::zeros(self.nonlinear_dim),
        }
    }

    pub fn terms(&self, x: &DVector<f64>) -> Result<ResidualTerms> {
        check_dim("state", self.dim(), x.len())?;
        self.terms_unchecked(x.as_slice())
    }

    fn terms_unchecked(&self, xs: &[f64]) -> Result<ResidualTerms> {
        let delta = self.bound.delta_unchecked(xs)?;
        Ok(self.terms_with_delta(xs, delta))
    }

    fn terms_with_delta(&self, xs: &[f64], delta: f64) -> ResidualTerms {
        let x = DVector::from_column_slice(xs);
        let kh = self.khat_at(xs);
        let xk = &self.xi * &kh;
        let ax = &self.acl * &x;
        let m = &ax * 2.0 + &xk;
        let z = &ax + &xk;
        let kk = &self.khat * &kh;
        let q = &self.u0dag * (&self.kbar * &x * 2.0 + &kk);
        let w = &self.u0dag * &kk;
        let sxk = &self.s * &xk;
        let dn = self.delta_norm;
        ResidualTerms {
            quadratic: -x.dot(&(&self.sqs * &x)),
            l1: m.dot(&sxk),
            l2: dn * (&self.s * &m).norm() * w.norm(),
            l3: dn * q.norm() * sxk.norm(),
            l4: dn * dn * self.s_norm * q.norm() * w.norm(),
            r1: 2.0 * (&self.s * &z).norm(),
            r2: 2.0 * dn * self.s_norm * (&self.u0dag * (&self.kbar * &x + &kk)).norm(),
            r3: self.s_norm,
            delta,
        }
    }

    pub fn l(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.terms(x)?.l())
    }

    pub fn g(&self, x: &DVector<f64>, delta: f64) -> Result<f64> {
        check_dim("state", self.dim(), x.len())?;
        Ok(self.terms_with_delta(x.as_slice(), delta).g())
    }

    /// `l(x) + g(x, δ(x))`.
    pub fn decrease_bound(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.terms(x)?.bound())
    }

    /// `x ∈ 𝒳`; the origin is always a member.
    pub fn membership_x(&self, x: &DVector<f64>) -> Result<bool> {
        if x.iter().all(|v| *v == 0.0) {
            return Ok(true);
        }
        Ok(self.decrease_bound(x)? <= 0.0)
    }
}

/// Regular grid over a box, `resolution` points per axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
}

pub const DEFAULT_GRID_RESOLUTION: usize = 201;

impl GridSpec {
    pub fn new(domain: &BoxDomain, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Input("grid resolution must be at least 2".into()));
        }
        if domain.bounds.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::Input("grid box must be finite and nondegenerate".into()));
        }
        Ok(GridSpec {
            bounds: domain.bounds.clone(),
            resolution,
        })
    }

    /// Bounding box of `ℛ_γ`, slightly enlarged.
    pub fn covering(cert: &LyapunovCert, resolution: usize) -> Result<Self> {
        let bounds = cert
            .bounding_half_widths()
            .into_iter()
            .map(|h| (-1.001 * h, 1.001 * h))
            .collect();
        GridSpec::new(&BoxDomain::new(bounds)?, resolution)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn num_points(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn step(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        (b - a) / (self.resolution - 1) as f64
    }

    fn index_to_multi(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for slot in out.iter_mut() {
            *slot = idx % self.resolution;
            idx /= self.resolution;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.index_to_multi(idx)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.bounds[axis].0 + i as f64 * self.step(axis))
            .collect()
    }

    fn neighbors(&self, idx: usize) -> Vec<usize> {
        let multi = self.index_to_multi(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        let mut stride = 1;
        for &i in &multi {
            if i > 0 {
                out.push(idx - stride);
            }
            if i + 1 < self.resolution {
                out.push(idx + stride);
            }
            stride *= self.resolution;
        }
        out
    }

    fn covers(&self, cert: &LyapunovCert) -> bool {
        cert.bounding_half_widths()
            .iter()
            .zip(&self.bounds)
            .all(|(h, (a, b))| *a <= -h && *b >= *h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    Violated,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Certified => "certified",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Per-point values kept for plotting and CSV dumps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridPoint {
    pub v: f64,
    pub decrease: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiCertificate {
    pub verdict: Verdict,
    pub gamma: f64,
    /// No grid point of `ℛ_γ ∖ {0}` lies outside `𝒳`.
    pub z_empty: bool,
    /// `max (V + l + g − γ)` over grid points in `ℛ_γ`.
    pub worst_margin: f64,
    pub points_in_level_set: usize,
    pub z_points: usize,
    pub violations: usize,
    /// Points where neither test clears the local grid variation.
    pub unresolved: usize,
    pub reason: Option<String>,
    pub grid: GridSpec,
    #[serde(skip)]
    pub values: Vec<GridPoint>,
}

pub const MIN_POINTS_IN_LEVEL_SET: usize = 25;

/// Grid certification of `ℛ_γ`.
///
/// A grid point of `ℛ_γ` is resolved when either `l + g` or `V + l + g − γ`
/// stays below zero by more than its largest change to a grid neighbour.
/// Any point of `𝒵` with `V + l + g > γ` gives `Violated`; unresolved points,
/// a grid that misses part of `ℛ_γ`, or too few interior points give
/// `Inconclusive`.
pub fn certify_pi(eval: &ResidualEvaluator, cert: &LyapunovCert, grid: &GridSpec) -> Result<PiCertificate> {
    check_dim("grid dimension", cert.dim(), grid.dim())?;
    check_dim("evaluator dimension", cert.dim(), eval.dim())?;
    let gamma = cert.gamma;
    let values = (0..grid.num_points())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let v = quad(&cert.p_inv, &x);
            let decrease = if x.iter().all(|c| *c == 0.0) {
                0.0
            } else {
                eval.terms_unchecked(&x)?.bound()
            };
            Ok(GridPoint { v, decrease })
        })
        .collect::<Result<Vec<GridPoint>>>()?;

    let mut inside = 0;
    let mut z_points = 0;
    let mut violations = 0;
    let mut unresolved = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, pt) in values.iter().enumerate() {
        if pt.v > gamma {
            continue;
        }
        inside += 1;
        let h = pt.v + pt.decrease - gamma;
        worst = worst.max(h);
        let origin = grid.point(i).iter().all(|c| *c == 0.0);
        if origin {
            continue;
        }
        if pt.decrease > 0.0 {
            z_points += 1;
            if h > 0.0 {
                violations += 1;
                continue;
            }
        }
        let (mut var_d, mut var_h) = (0.0_f64, 0.0_f64);
        for nb in grid.neighbors(i) {
            let q = values[nb];
            var_d = var_d.max((q.decrease - pt.decrease).abs());
            var_h = var_h.max((q.v + q.decrease - pt.v - pt.decrease).abs());
        }
        if !(pt.decrease <= -var_d || h <= -var_h) {
            unresolved += 1;
        }
    }

    let (verdict, reason) = if violations > 0 {
        (
            Verdict::Violated,
            Some(format!("{violations} grid points of 𝒵 have V + l + g > γ")),
        )
    } else if !grid.covers(cert) {
        (Verdict::Inconclusive, Some("grid does not cover the level set".to_string()))
    } else if inside < MIN_POINTS_IN_LEVEL_SET {
        (
            Verdict::Inconclusive,
            Some(format!("only {inside} grid points inside the level set")),
        )
    } else if unresolved > 0 {
        (
            Verdict::Inconclusive,
            Some(format!("{unresolved} grid points not resolved at this resolution")),
        )
    } else {
        (Verdict::Certified, None)
    };

    Ok(PiCertificate {
        verdict,
        gamma,
        z_empty: z_points == 0,
        worst_margin: worst,
        points_in_level_set: inside,
        z_points,
        violations,
        unresolved,
        reason,
        grid: grid.clone(),
        values,
    })
}

/// Largest certified level among `candidates` (ascending scan).
pub fn largest_certified_level(
    eval: &ResidualEvaluator,
    p: &DMatrix<f64>,
    candidates: &[f64],
    resolution: usize,
) -> Result<Option<PiCertificate>> {
    let mut best = None;
    for &g in candidates {
        let cert = LyapunovCert::new(p.clone(), g)?;
        let grid = GridSpec::covering(&cert, resolution)?;
        let c = certify_pi(eval, &cert, &grid)?;
        if c.verdict == Verdict::Certified {
            best = Some(c);
        }
    }
    Ok(best)
}

/// Uniform sampling inside `ℛ_γ`. Probabilistic evidence, not a certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledCheck {
    pub samples: usize,
    pub z_points: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

/// Uniform draws from `ℛ_γ`: `x = sqrt(γ) L u` with `P = LLᵀ` and `u`
/// uniform in the unit ball.
pub fn sample_in_level_set(cert: &LyapunovCert, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let n = cert.dim();
    let chol = nalgebra::Cholesky::new(cert.p.clone())
        .ok_or_else(|| Error::Singular("P is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let g = crate::synthesis::gaussian_matrix(&mut rng, n, 1);
            let r = rng.gen::<f64>().powf(1.0 / n as f64);
            let u = g.column(0) * (r / g.norm().max(f64::MIN_POSITIVE));
            &l * u * cert.gamma.sqrt()
        })
        .collect())
}

pub fn sample_level_set(eval: &ResidualEvaluator, cert: &LyapunovCert, samples: usize, seed: u64) -> Result<SampledCheck> {
    check_dim("evaluator dimension", cert.dim(), eval.dim())?;
    let pts: Vec<Vec<f64>> = sample_in_level_set(cert, samples, seed)?
        .into_iter()
        .map(|x| x.as_slice().to_vec())
        .collect();
    let evals = pts
        .par_iter()
        .map(|x| Ok((quad(&cert.p_inv, x), eval.terms_unchecked(x)?.bound())))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut out = SampledCheck {
        samples,
        z_points: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for (v, d) in evals {
        let h = v + d - cert.gamma;
        out.worst_margin = out.worst_margin.max(h);
        if d > 0.0 {
            out.z_points += 1;
            if h > 0.0 {
                out.violations += 1;
            }
        }
    }
    Ok(out)
}

/// CSV rows `x1,..,xn,V,l_plus_g,in_X,in_R`.
pub fn grid_csv(cert: &PiCertificate) -> String {
    let n = cert.grid.dim();
    let mut out: String = (1..=n).map(|i| format!("x{i},")).collect();
    out.push_str("V,l_plus_g,in_X,in_R\n");
    for (i, pt) in cert.values.iter().enumerate() {
        for c in cert.grid.point(i) {
            out.push_str(&format!("{c:?},"));
        }
        out.push_str(&format!(
            "{:?},{:?},{},{}\n",
            pt.v,
            pt.decrease,
            u8::from(pt.decrease <= 0.0),
            u8::from(pt.v <= cert.gamma)
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub diverged: bool,
}

pub const DIVERGENCE_NORM: f64 = 1e12;

/// Closed loop of the true plant under `u = K̄x + K̂k̂(x)`.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    problem: &SynthesisProblem,
    result: &SynthesisResult,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    check_dim("initial state", plant.state_dim(), x0.len())?;
    check_dim("controller inputs vs plant", plant.input_dim(), result.kbar.nrows())?;
    let mut x = x0.clone();
    let mut states = vec![x.as_slice().to_vec()];
    for _ in 0..steps {
        let u = result.input(problem, &x)?;
        x = plant.step_unchecked(x.as_slice(), &u);
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_NORM {
            return Ok(Trajectory { states, diverged: true });
        }
        states.push(x.as_slice().to_vec());
    }
    Ok(Trajectory { states, diverged: false })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecreaseCheck {
    pub samples: usize,
    pub violations: usize,
    /// `max (V(x⁺) − V(x) − l(x) − g(x, δ(x)))`.
    pub worst_excess: f64,
    pub tol: f64,
}

/// Compares the true one-step change of `V` with the decrease bound at
/// uniform random states of `domain`.
#[allow(clippy::too_many_arguments)]
pub fn check_decrease_bound(
    eval: &ResidualEvaluator,
    cert: &LyapunovCert,
    plant: &PlantModel,
    problem: &SynthesisProblem,
    result: &SynthesisResult,
    domain: &BoxDomain,
    samples: usize,
    seed: u64,
) -> Result<DecreaseCheck> {
    check_dim("domain dimension", cert.dim(), domain.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<DVector<f64>> = (0..samples)
        .map(|_| DVector::from_iterator(domain.dim(), domain.bounds.iter().map(|&(a, b)| rng.gen_range(a..=b))))
        .collect();
    let excess = pts
        .par_iter()
        .map(|x| {
            let u = result.input(problem, x)?;
            let xp = plant.step_unchecked(x.as_slice(), &u);
            let dv = quad(&cert.p_inv, xp.as_slice()) - quad(&cert.p_inv, x.as_slice());
            Ok(dv - eval.terms_unchecked(x.as_slice())?.bound())
        })
        .collect::<Result<Vec<f64>>>()?;
    let tol = 1e-9;
    Ok(DecreaseCheck {
        samples,
        violations: excess.iter().filter(|e| **e > tol).count(),
        worst_excess: excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        tol,
    })
}

/// `max δ(x)/|x|` over the nonzero grid points of a certificate.
pub fn delta_ratio(bound: &ErrorBound, cert: &PiCertificate) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..cert.grid.num_points() {
        let x = cert.grid.point(i);
        let nx = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if nx > 0.0 && cert.values[i].v <= cert.gamma {
            worst = worst.max(bound.delta_unchecked(&x)? / nx);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_value_of_scaled_identity() {
        let c = LyapunovCert::new(DMatrix::identity(2, 2) * 2.0, 1.0).unwrap();
        let v = lyapunov_value(&c, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(LyapunovCert::new(DMatrix::identity(2, 2), -1.0).is_err());
        assert!(LyapunovCert::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn grid_indexing() {
        let g = GridSpec::new(&BoxDomain::new(vec![(-1.0, 1.0), (0.0, 2.0)]).unwrap(), 3).unwrap();
        assert_eq!(g.num_points(), 9);
        assert_eq!(g.point(0), vec![-1.0, 0.0]);
        assert_eq!(g.point(4), vec![0.0, 1.0]);
        assert_eq!(g.point(8), vec![1.0, 2.0]);
        let mut nb = g.neighbors(4);
        nb.sort();
        assert_eq!(nb, vec![1, 3, 5, 7]);
        assert_eq!(g.neighbors(0).len(), 2);
    }

    #[test]
    fn covering_grid_contains_level_set() {
        let c = LyapunovCert::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 3.0).unwrap();
        let g = GridSpec::covering(&c, 11).unwrap();
        assert!(g.covers(&c));
        let h = c.bounding_half_widths();
        assert!((h[0] - 6.0_f64.sqrt()).abs() < 1e-15);
    }
}
