//! Robust nonlinearity-cancelling controller synthesis.
//!
//! With `X̂₁ = X̄₁ − AK₀` and `U₀† = U₀ᵀ(U₀U₀ᵀ)⁻¹` the plant reads
//! `x⁺ = Āx + Âk̂(x) + (X̂₁ − D₀)U₀†u + d(x)`. The control law
//! `u = K̄x + K̂k̂(x)` is found from two decoupled convex programs:
//!
//! 1. `min_K̂ ‖Â + X̂₁U₀†K̂‖` (spectral norm, epigraph embedding);
//! 2. `min α‖P‖` over `(P, Y, ε)` subject to the robust LMI
//!
//! ```text
//! ⎡ P − Q        (ĀP + X̂₁U₀†Y)ᵀ   (U₀†Y)ᵀ ⎤
//! ⎢ ĀP + X̂₁U₀†Y   P − εΔ²          0       ⎥ ⪰ 0
//! ⎣ U₀†Y          0                εI      ⎦
//! ```
//!
//! and `K̄ = YP⁻¹`. The split is exact: `K̂` only enters the objective and
//! `(P, Y, ε)` only the constraint.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interp::{ErrorBound, InterpModel};
use crate::kernel::{linear_part, NonlinearMap};
use crate::linalg;
use crate::plant::{check_excitation, ForcedDataset, DEFAULT_EXCITATION_TOL};
use crate::sdp::{self, AffineLmi, LmiProgram, SolveReport, SolveStatus, SolverOptions};

/// Standard normal entries by Box–Muller.
pub(crate) fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub abar: DMatrix<f64>,
    pub ahat: DMatrix<f64>,
    pub xhat1: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub u0dag: DMatrix<f64>,
    /// `Δ = delta_scale · I`.
    pub delta_scale: f64,
    pub q: DMatrix<f64>,
    pub alpha: f64,
    /// `k̂`; `None` means `k̂ ≡ 0`.
    pub nonlinear: Option<NonlinearMap>,
    /// `δ(x̄(k))` for every forced sample, when built from data.
    pub sample_deltas: Vec<f64>,
}

impl SynthesisProblem {
    /// Builds a problem from raw matrices, computing `U₀†`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        abar: DMatrix<f64>,
        ahat: DMatrix<f64>,
        xhat1: DMatrix<f64>,
        u0: DMatrix<f64>,
        delta_scale: f64,
        q: DMatrix<f64>,
        alpha: f64,
        nonlinear: Option<NonlinearMap>,
    ) -> Result<Self> {
        let n = abar.nrows();
        check_dim("Ā columns", n, abar.ncols())?;
        check_dim("Â rows", n, ahat.nrows())?;
        check_dim("X̂₁ rows", n, xhat1.nrows())?;
        check_dim("U₀ columns vs X̂₁ columns", xhat1.ncols(), u0.ncols())?;
        check_dim("Q rows", n, q.nrows())?;
        check_dim("Q columns", n, q.ncols())?;
        if let Some(map) = &nonlinear {
            check_dim("k̂ dimension vs Â columns", ahat.ncols(), map.dim())?;
        }
        if !(delta_scale.is_finite() && delta_scale >= 0.0) {
            return Err(Error::Input(format!("Δ scale must be nonnegative, got {delta_scale}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Input(format!("α must be nonnegative, got {alpha}")));
        }
        if !linalg::is_symmetric(&q, 1e-12) || linalg::min_eigenvalue(&q) <= 0.0 {
            return Err(Error::Input("Q must be symmetric positive definite".into()));
        }
        check_excitation(&u0, DEFAULT_EXCITATION_TOL).into_result()?;
        let u0dag = linalg::right_pseudoinverse(&u0)?;
        Ok(SynthesisProblem {
            abar,
            ahat,
            xhat1,
            u0,
            u0dag,
            delta_scale,
            q,
            alpha,
            nonlinear,
            sample_deltas: Vec::new(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.abar.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.u0.ncols()
    }

    pub fn nonlinear_dim(&self) -> usize {
        self.ahat.ncols()
    }

    pub fn delta(&self) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim()) * self.delta_scale
    }

    /// Nominal input map `X̂₁U₀†` (`n × m`).
    pub fn input_gain(&self) -> DMatrix<f64> {
        &self.xhat1 * &self.u0dag
    }

    pub fn khat_map(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(match &self.nonlinear {
            Some(m) => m.eval_unchecked(x.as_slice()),
            None => DVector::zeros(self.nonlinear_dim()),
        })
    }
}

/// Assemble the synthesis problem from fitted model, forced data and bound.
pub fn build_problem(
    model: &InterpModel,
    data: &ForcedDataset,
    bound: &ErrorBound,
    q: DMatrix<f64>,
    alpha: f64,
) -> Result<SynthesisProblem> {
    check_excitation(&data.u0, DEFAULT_EXCITATION_TOL).into_result()?;
    check_dim("K₀ rows vs centers", model.num_centers(), data.k0.nrows())?;
    let a = model.coeffs();
    let xhat1 = &data.xbar1 - a * &data.k0;
    let sample_deltas = data
        .xbar0
        .column_iter()
        .map(|x| bound.delta_unchecked(x.as_slice()))
        .collect::<Result<Vec<f64>>>()?;
    let delta_scale = sample_deltas.iter().map(|d| d * d).sum::<f64>().sqrt();
    let (abar, map) = linear_part(model.kernel(), a, model.centers())?;
    let mut p = SynthesisProblem::from_parts(
        abar,
        a.clone(),
        xhat1,
        data.u0.clone(),
        delta_scale,
        q,
        alpha,
        Some(map),
    )?;
    p.sample_deltas = sample_deltas;
    Ok(p)
}

/// Symmetric block matrix of the robust LMI at `(P, Y, ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock(pub DMatrix<f64>);

impl LmiBlock {
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.0)
    }
}

pub fn assemble_lmi(p: &SynthesisProblem, pm: &DMatrix<f64>, y: &DMatrix<f64>, eps: f64) -> Result<LmiBlock> {
    let (n, m, tb) = (p.state_dim(), p.input_dim(), p.num_samples());
    check_dim("P rows", n, pm.nrows())?;
    check_dim("P columns", n, pm.ncols())?;
    check_dim("Y rows", m, y.nrows())?;
    check_dim("Y columns", n, y.ncols())?;
    let uy = &p.u0dag * y;
    let ap = &p.abar * pm + &p.xhat1 * &uy;
    let d2 = p.delta_scale * p.delta_scale;
    let size = 2 * n + tb;
    let mut lmi = DMatrix::zeros(size, size);
    lmi.view_mut((0, 0), (n, n)).copy_from(&(pm - &p.q));
    lmi.view_mut((n, 0), (n, n)).copy_from(&ap);
    lmi.view_mut((0, n), (n, n)).copy_from(&ap.transpose());
    lmi.view_mut((2 * n, 0), (tb, n)).copy_from(&uy);
    lmi.view_mut((0, 2 * n), (n, tb)).copy_from(&uy.transpose());
    lmi.view_mut((n, n), (n, n))
        .copy_from(&(pm - DMatrix::identity(n, n) * (eps * d2)));
    lmi.view_mut((2 * n, 2 * n), (tb, tb))
        .copy_from(&(DMatrix::identity(tb, tb) * eps));
    Ok(LmiBlock(lmi))
}

/// The LMI with the third block row/column eliminated:
/// `[[P−Q, Mᵀ], [M, P−εΔ²]] − ε⁻¹ EEᵀ` with `E = [(U₀†Y)ᵀ; 0]`.
pub fn lmi_schur_reduced(p: &SynthesisProblem, pm: &DMatrix<f64>, y: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if eps <= 0.0 {
        return Err(Error::Input("ε must be positive".into()));
    }
    let full = assemble_lmi(p, pm, y, eps)?.0;
    let n2 = 2 * p.state_dim();
    let top = full.view((0, 0), (n2, n2)).into_owned();
    let e = full.view((0, n2), (n2, p.num_samples())).into_owned();
    Ok(top - &e * e.transpose() / eps)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Non-strict `⪰ 0` is enforced as `⪰ margin · I`.
    pub lmi_margin: f64,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            lmi_margin: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub newton_steps: usize,
    pub barrier_rounds: usize,
    pub gap_bound: f64,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        SolverSummary {
            status: r.status,
            newton_steps: r.newton_steps,
            barrier_rounds: r.barrier_rounds,
            gap_bound: r.gap_bound,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub eps: f64,
    pub kbar: DMatrix<f64>,
    pub khat: DMatrix<f64>,
    /// `Â + X̂₁U₀†K̂`.
    pub residual: DMatrix<f64>,
    pub objective: f64,
    pub lmi_min_eigenvalue: f64,
    pub cancellation_solve: SolverSummary,
    pub stability_solve: SolverSummary,
}

impl SynthesisResult {
    /// `Ā + X̂₁U₀†K̄`.
    pub fn closed_loop_linear(&self, p: &SynthesisProblem) -> DMatrix<f64> {
        &p.abar + p.input_gain() * &self.kbar
    }

    pub fn input(&self, p: &SynthesisProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.kbar * x + &self.khat * p.khat_map(x)?)
    }
}

/// Coefficient matrices of an affine matrix function by evaluation at the
/// origin and the unit vectors.
fn affine_lmi(name: &str, num_vars: usize, f: impl Fn(&DVector<f64>) -> DMatrix<f64>) -> AffineLmi {
    let zero = DVector::zeros(num_vars);
    let f0 = f(&zero);
    let mut lmi = AffineLmi::new(name, linalg::symmetrize(&f0));
    for i in 0..num_vars {
        let mut e = zero.clone();
        e[i] = 1.0;
        lmi.add_term(i, linalg::symmetrize(&(f(&e) - &f0)));
    }
    lmi
}

fn spectral_epigraph(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::identity(r + c, r + c) * t;
    out.view_mut((0, r), (r, c)).copy_from(m);
    out.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    out
}

/// `min_K̂ ‖Â + X̂₁U₀†K̂‖`.
pub fn solve_cancellation(p: &SynthesisProblem, opts: &SolverOptions) -> Result<(DMatrix<f64>, SolveReport)> {
    let (m, s) = (p.input_dim(), p.nonlinear_dim());
    let b = p.input_gain();
    let nk = m * s;
    let unpack = |v: &DVector<f64>| DMatrix::from_row_slice(m, s, &v.as_slice()[..nk]);
    let lmi = affine_lmi("spectral-epigraph", nk + 1, |v| {
        spectral_epigraph(&(&p.ahat + &b * unpack(v)), v[nk])
    });
    let mut prog = LmiProgram::new(nk + 1);
    prog.objective[nk] = 1.0;
    prog.add_constraint(lmi);
    let report = sdp::solve(&prog, None, opts)?;
    match report.status {
        SolveStatus::Optimal => Ok((unpack(&report.solution()), report)),
        other => Err(Error::Solver(format!("cancellation subproblem ended with status {other}"))),
    }
}

struct StabilityVars {
    n: usize,
    m: usize,
}

impl StabilityVars {
    fn sym_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn count(&self, with_bound: bool) -> usize {
        self.sym_count() + self.m * self.n + 1 + usize::from(with_bound)
    }

    fn unpack(&self, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let n = self.n;
        let mut pm = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                pm[(i, j)] = v[k];
                pm[(j, i)] = v[k];
                k += 1;
            }
        }
        let y = DMatrix::from_row_slice(self.m, n, &v.as_slice()[k..k + self.m * n]);
        (pm, y, v[k + self.m * n])
    }
}

/// `(P, Y, ε)`.
pub type StabilitySolution = (DMatrix<f64>, DMatrix<f64>, f64);

/// `min α‖P‖` subject to the robust LMI.
pub fn solve_stability(p: &SynthesisProblem, opts: &SynthesisOptions) -> Result<(StabilitySolution, SolveReport)> {
    let vars = StabilityVars {
        n: p.state_dim(),
        m: p.input_dim(),
    };
    let with_bound = p.alpha > 0.0;
    let nv = vars.count(with_bound);
    let margin = opts.lmi_margin;
    let size = 2 * p.state_dim() + p.num_samples();
    let lmi = affine_lmi("robust-lmi", nv, |v| {
        let (pm, y, eps) = vars.unpack(v);
        // assemble_lmi only fails on dimension mismatch, ruled out above
        assemble_lmi(p, &pm, &y, eps).expect("consistent dimensions").0 - DMatrix::identity(size, size) * margin
    });
    let mut prog = LmiProgram::new(nv);
    prog.add_constraint(lmi);
    if with_bound {
        let tau = nv - 1;
        prog.objective[tau] = p.alpha;
        let n = p.state_dim();
        prog.add_constraint(affine_lmi("norm-bound", nv, |v| {
            let (pm, _, _) = vars.unpack(v);
            DMatrix::identity(n, n) * v[tau] - pm
        }));
    }
    let report = sdp::solve(&prog, None, &opts.solver)?;
    match report.status {
        SolveStatus::Optimal => Ok((vars.unpack(&report.solution()), report)),
        SolveStatus::Infeasible => Err(Error::Infeasible {
            status: report.status.to_string(),
            detail: format!(
                "phase-I optimum {:e} > 0 with ‖Δ‖ = {:e}; a smaller λ or a tighter Γ shrinks Δ",
                report.phase1_value.unwrap_or(f64::NAN),
                p.delta_scale
            ),
        }),
        other => Err(Error::Solver(format!("stability subproblem ended with status {other}"))),
    }
}

pub fn synthesize(p: &SynthesisProblem) -> Result<SynthesisResult> {
    synthesize_with(p, &SynthesisOptions::default())
}

pub fn synthesize_with(p: &SynthesisProblem, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let ((pm, y, eps), stab) = solve_stability(p, opts)?;
    let (khat, canc) = if p.nonlinear_dim() > 0 {
        let (k, r) = solve_cancellation(p, &opts.solver)?;
        (k, Some(r))
    } else {
        (DMatrix::zeros(p.input_dim(), 0), None)
    };
    let pinv = linalg::spd_inverse(&pm)?;
    let kbar = &y * pinv;
    let residual = &p.ahat + p.input_gain() * &khat;
    let objective = linalg::spectral_norm(&residual) + p.alpha * linalg::spectral_norm(&pm);
    let lmi_min_eigenvalue = assemble_lmi(p, &pm, &y, eps)?.min_eigenvalue();
    let none = SolverSummary {
        status: SolveStatus::Optimal,
        newton_steps: 0,
        barrier_rounds: 0,
        gap_bound: 0.0,
    };
    Ok(SynthesisResult {
        p: pm,
        y,
        eps,
        kbar,
        khat,
        residual,
        objective,
        lmi_min_eigenvalue,
        cancellation_solve: canc.as_ref().map(SolverSummary::from).unwrap_or(none),
        stability_solve: SolverSummary::from(&stab),
    })
}

/// The `D₀`-free closed-loop map `(Ā + X̂₁U₀†K̄)x + (Â + X̂₁U₀†K̂)k̂(x)`.
pub fn nominal_closed_loop(r: &SynthesisResult, p: &SynthesisProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(r.closed_loop_linear(p) * x + &r.residual * p.khat_map(x)?)
}

/// Left-hand side of the robust inequality for one uncertainty sample:
/// `(ĀP + (X̂₁−D)U₀†Y)ᵀ P⁻¹ (ĀP + (X̂₁−D)U₀†Y) − P + Q`.
pub fn robust_lhs(
    p: &SynthesisProblem,
    pm: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("D rows", p.state_dim(), d.nrows())?;
    check_dim("D columns", p.num_samples(), d.ncols())?;
    let m = &p.abar * pm + (&p.xhat1 - d) * &p.u0dag * y;
    let pinv = linalg::spd_inverse(pm)?;
    Ok(linalg::symmetrize(&(m.transpose() * pinv * &m - pm + &p.q)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustReport {
    pub samples: usize,
    pub max_eigenvalue: f64,
    pub violations: usize,
    pub tol: f64,
}

pub const ROBUST_TOL: f64 = 1e-7;

/// Uncertainty sample with `DDᵀ ⪯ scale² I`; half the draws sit on the boundary.
pub(crate) fn sample_ball_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64, k: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rows, cols);
    let norm = linalg::spectral_norm(&g);
    if norm == 0.0 || scale == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let radius = if k.is_multiple_of(2) { 1.0 } else { rng.gen::<f64>() };
    g * (scale * radius / norm)
}

pub fn verify_robust_condition_at(
    p: &SynthesisProblem,
    pm: &DMatrix<f64>,
    y: &DMatrix<f64>,
    num_samples: usize,
    seed: u64,
) -> Result<RobustReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, tb) = (p.state_dim(), p.num_samples());
    let draws = if p.delta_scale == 0.0 { 1 } else { num_samples.max(1) };
    let mut max_eig = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..draws {
        let d = if p.delta_scale == 0.0 {
            DMatrix::zeros(n, tb)
        } else {
            sample_ball_matrix(&mut rng, n, tb, p.delta_scale, k)
        };
        let ev = linalg::max_eigenvalue(&robust_lhs(p, pm, y, &d)?);
        max_eig = max_eig.max(ev);
        if ev > ROBUST_TOL {
            violations += 1;
        }
    }
    Ok(RobustReport {
        samples: draws,
        max_eigenvalue: max_eig,
        violations,
        tol: ROBUST_TOL,
    })
}

pub fn verify_robust_condition(
    r: &SynthesisResult,
    p: &SynthesisProblem,
    num_samples: usize,
    seed: u64,
) -> Result<RobustReport> {
    verify_robust_condition_at(p, &r.p, &r.y, num_samples, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PetersenReport {
    pub samples: usize,
    /// Largest eigenvalue of `LHS − RHS` over all draws.
    pub max_violation: f64,
    pub scale: f64,
    pub violations: usize,
}

/// `λ_max(EDᵀF + FᵀDEᵀ − ε⁻¹EEᵀ − εFᵀΔΔᵀF)` for one `D`.
pub fn petersen_gap(
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    eps: f64,
    d: &DMatrix<f64>,
) -> Result<f64> {
    let (lhs, rhs) = petersen_sides(e, f, delta, eps, d)?;
    Ok(linalg::max_eigenvalue(&(lhs - rhs)))
}

fn petersen_sides(
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    eps: f64,
    d: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(eps > 0.0) {
        return Err(Error::Input("ε must be positive".into()));
    }
    // E: N×p, F: q×N, Δ: q×s, D: q×p
    check_dim("F columns vs E rows", e.nrows(), f.ncols())?;
    check_dim("Δ rows vs F rows", f.nrows(), delta.nrows())?;
    check_dim("D rows", f.nrows(), d.nrows())?;
    check_dim("D columns", e.ncols(), d.ncols())?;
    let cross = e * d.transpose() * f;
    let lhs = &cross + cross.transpose();
    let rhs = e * e.transpose() / eps + f.transpose() * delta * delta.transpose() * f * eps;
    Ok((lhs, rhs))
}

/// Randomized falsification of the norm-bounded uncertainty inequality.
pub fn petersen_check(
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    eps: f64,
    num_samples: usize,
    seed: u64,
) -> Result<PetersenReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, s) = (e.ncols(), delta.ncols());
    let zero = DMatrix::zeros(f.nrows(), p);
    let (_, rhs0) = petersen_sides(e, f, delta, eps, &zero)?;
    let scale = 1.0 + linalg::spectral_norm(&rhs0);
    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..num_samples {
        // D = ΔW with ‖W‖ ≤ 1 gives DDᵀ ⪯ ΔΔᵀ
        let w = sample_ball_matrix(&mut rng, s, p, 1.0, k);
        let d = delta * w;
        let gap = petersen_gap(e, f, delta, eps, &d)?;
        max_violation = max_violation.max(gap);
        if gap > 1e-9 * scale {
            violations += 1;
        }
    }
    Ok(PetersenReport {
        samples: num_samples,
        max_violation,
        scale,
        violations,
    })
}
