//! Dense log-barrier interior-point solver for small LMI programs.
//!
//! Solves
//!
//! ```text
//! minimize    cᵀy
//! subject to  F_k(y) = F_k0 + Σ_i y_i F_ki ⪰ 0,   k = 1..K
//!             |y_i| ≤ R
//! ```
//!
//! A phase-I problem (`minimize s` s.t. `F_k(y) + sI ⪰ 0`) finds a strictly
//! feasible start; phase II follows the central path of
//! `t·cᵀy − Σ log det F_k(y)` with damped Newton steps, increasing `t`
//! geometrically until the duality-gap bound `θ/t` is small (`θ` is the total
//! barrier degree). The limit of the central path is the analytic center of
//! the optimal face, which makes the returned point reproducible when the
//! optimum is not unique.
//!
//! Sizes targeted here are a few dozen variables and LMI blocks up to ~30×30.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetric matrix-valued affine map `F(y) = F0 + Σ y_i F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub name: String,
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineLmi {
    pub fn new(name: impl Into<String>, constant: DMatrix<f64>) -> Self {
        AffineLmi {
            name: name.into(),
            constant,
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `y_var · coeff`; repeated variables accumulate.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        if coeff.iter().all(|v| *v == 0.0) {
            return;
        }
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, m)) => *m += coeff,
            None => self.terms.push((var, coeff)),
        }
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, fi) in &self.terms {
            m += fi * y[*i];
        }
        m
    }

    fn validate(&self, num_vars: usize) -> Result<()> {
        let p = self.size();
        if !self.constant.is_square() || !linalg::is_symmetric(&self.constant, 1e-12) {
            return Err(Error::Input(format!("constraint `{}`: constant term is not symmetric", self.name)));
        }
        for (i, fi) in &self.terms {
            if *i >= num_vars {
                return Err(Error::Input(format!("constraint `{}`: variable {i} out of range", self.name)));
            }
            if fi.shape() != (p, p) || !linalg::is_symmetric(fi, 1e-12) {
                return Err(Error::Input(format!(
                    "constraint `{}`: coefficient of variable {i} is not a symmetric {p}x{p} matrix",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProgram {
    pub num_vars: usize,
    pub objective: DVector<f64>,
    pub constraints: Vec<AffineLmi>,
}

impl LmiProgram {
    pub fn new(num_vars: usize) -> Self {
        LmiProgram {
            num_vars,
            objective: DVector::zeros(num_vars),
            constraints: Vec::new(),
        }
    }

    pub fn add_constraint(&mut self, c: AffineLmi) {
        self.constraints.push(c);
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::Input("objective length differs from variable count".into()));
        }
        self.constraints.iter().try_for_each(|c| c.validate(self.num_vars))
    }

    /// Minimum eigenvalue of every constraint at `y`.
    pub fn constraint_min_eigenvalues(&self, y: &DVector<f64>) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| linalg::min_eigenvalue(&c.eval(y)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when `θ/t ≤ gap_tol · (1 + |cᵀy|)`.
    pub gap_tol: f64,
    /// Barrier parameter growth factor.
    pub mu: f64,
    pub initial_t: f64,
    /// Centering stops when half the squared Newton decrement drops below this.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    /// Box bound `R` on every variable.
    pub box_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-9,
            mu: 10.0,
            initial_t: 1.0,
            newton_tol: 1e-11,
            max_newton_steps: 3000,
            box_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
    pub barrier_rounds: usize,
    pub gap_bound: f64,
    /// Optimal phase-I value `min_y max_k −λ_min(F_k(y))`, when phase I ran
    /// to completion; positive means infeasible.
    pub phase1_value: Option<f64>,
    pub min_eigenvalues: Vec<f64>,
}

impl SolveReport {
    pub fn solution(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

/// Barrier machinery over the first `boxed` variables boxed by `bound`.
struct Barrier<'a> {
    prog: &'a LmiProgram,
    boxed: usize,
    bound: f64,
}

const MAX_STEPS_PER_CENTERING: usize = 200;

struct NewtonSystem {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

enum CenterOutcome {
    Centered,
    StepLimit,
    Stalled,
}

impl<'a> Barrier<'a> {
    fn degree(&self) -> f64 {
        let lmi: usize = self.prog.constraints.iter().map(AffineLmi::size).sum();
        (lmi + 2 * self.boxed) as f64
    }

    /// Log-barrier part only, without the `t·cᵀy` term.
    fn log_barrier(&self, y: &DVector<f64>) -> Option<f64> {
        let mut phi = 0.0;
        for c in &self.prog.constraints {
            let chol = c.eval(y).cholesky()?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            phi -= logdet;
        }
        for &yi in y.iter().take(self.boxed) {
            let (a, b) = (self.bound - yi, self.bound + yi);
            if a <= 0.0 || b <= 0.0 {
                return None;
            }
            phi -= a.ln() + b.ln();
        }
        phi.is_finite().then_some(phi)
    }

    fn newton_system(&self, y: &DVector<f64>, t: f64) -> Option<NewtonSystem> {
        let nv = self.prog.num_vars;
        let mut grad = &self.prog.objective * t;
        let mut hess = DMatrix::zeros(nv, nv);
        for c in &self.prog.constraints {
            let chol = c.eval(y).cholesky()?;
            let l = chol.l();
            // G_i = L⁻¹ F_i L⁻ᵀ
            let gs: Vec<(usize, DMatrix<f64>)> = c
                .terms
                .iter()
                .map(|(i, fi)| {
                    let x = l.solve_lower_triangular(fi)?;
                    let g = l.solve_lower_triangular(&x.transpose())?;
                    Some((*i, g))
                })
                .collect::<Option<_>>()?;
            for (a, (i, gi)) in gs.iter().enumerate() {
                grad[*i] -= gi.trace();
                for (j, gj) in gs.iter().skip(a) {
                    let h = gi.dot(gj);
                    hess[(*i, *j)] += h;
                    if i != j {
                        hess[(*j, *i)] += h;
                    }
                }
            }
        }
        for i in 0..self.boxed {
            let (a, b) = (self.bound - y[i], self.bound + y[i]);
            grad[i] += 1.0 / a - 1.0 / b;
            hess[(i, i)] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        Some(NewtonSystem { grad, hess })
    }

    fn newton_direction(sys: &NewtonSystem) -> Option<DVector<f64>> {
        let n = sys.hess.nrows();
        let scale = sys.hess.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut reg = 0.0;
        for _ in 0..8 {
            let h = &sys.hess + DMatrix::identity(n, n) * reg;
            if let Some(ch) = h.cholesky() {
                return Some(-ch.solve(&sys.grad));
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        sys.hess.clone().lu().solve(&(-&sys.grad))
    }

    /// Damped Newton minimization of the barrier at fixed `t`.
    fn center(
        &self,
        y: &mut DVector<f64>,
        t: f64,
        opts: &SolverOptions,
        steps: &mut usize,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> CenterOutcome {
        let first_step = *steps;
        let mut bar = match self.log_barrier(y) {
            Some(v) => v,
            None => return CenterOutcome::Stalled,
        };
        loop {
            if *steps >= opts.max_newton_steps {
                return CenterOutcome::StepLimit;
            }
            if *steps - first_step >= MAX_STEPS_PER_CENTERING {
                return CenterOutcome::Stalled;
            }
            let Some(sys) = self.newton_system(y, t) else {
                return CenterOutcome::Stalled;
            };
            let Some(dy) = Self::newton_direction(&sys) else {
                return CenterOutcome::Stalled;
            };
            let decrement = -sys.grad.dot(&dy);
            if !decrement.is_finite() {
                return CenterOutcome::Stalled;
            }
            if decrement * 0.5 <= opts.newton_tol {
                return CenterOutcome::Centered;
            }
            *steps += 1;
            // changes are formed directly so that t·cᵀy does not swamp them
            let lin = t * self.prog.objective.dot(&dy);
            let mut s = 1.0;
            let accepted = loop {
                let cand = &*y + &dy * s;
                if let Some(v) = self.log_barrier(&cand) {
                    let change = s * lin + (v - bar);
                    if change <= -0.25 * s * decrement {
                        break Some((cand, v, change));
                    }
                }
                s *= 0.5;
                if s < 1e-16 {
                    break None;
                }
            };
            match accepted {
                Some((cand, v, change)) => {
                    *y = cand;
                    bar = v;
                    if stop(y) {
                        return CenterOutcome::Centered;
                    }
                    // round-off floor: nothing left to gain at this t
                    let scale = bar.abs() + t * self.prog.objective.dot(y).abs() + 1.0;
                    if -change <= 1e-14 * scale {
                        return CenterOutcome::Centered;
                    }
                }
                None if decrement <= 1e-9 * (1.0 + bar.abs()) => return CenterOutcome::Centered,
                None => return CenterOutcome::Stalled,
            }
        }
    }
}

struct PathOutcome {
    status: SolveStatus,
    y: DVector<f64>,
    t: f64,
    rounds: usize,
}

fn follow_path(
    barrier: &Barrier<'_>,
    mut y: DVector<f64>,
    opts: &SolverOptions,
    steps: &mut usize,
    stop: &dyn Fn(&DVector<f64>) -> bool,
) -> PathOutcome {
    let theta = barrier.degree();
    let mut t = opts.initial_t;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let outcome = barrier.center(&mut y, t, opts, steps, stop);
        if stop(&y) {
            return PathOutcome {
                status: SolveStatus::Optimal,
                y,
                t,
                rounds,
            };
        }
        let obj = barrier.prog.objective.dot(&y);
        let converged = theta / t <= opts.gap_tol * (1.0 + obj.abs());
        match outcome {
            CenterOutcome::Centered if converged => {
                return PathOutcome {
                    status: SolveStatus::Optimal,
                    y,
                    t,
                    rounds,
                }
            }
            CenterOutcome::Centered => t *= opts.mu,
            CenterOutcome::StepLimit => {
                return PathOutcome {
                    status: SolveStatus::IterationLimit,
                    y,
                    t,
                    rounds,
                }
            }
            CenterOutcome::Stalled => {
                // Accept a stalled late iterate if the gap is already tiny.
                let status = if theta / t <= 1e-6 * (1.0 + obj.abs()) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                };
                return PathOutcome { status, y, t, rounds };
            }
        }
    }
}

/// Finds `y` with every `F_k(y) ≻ 0`, or reports the phase-I optimum.
fn phase_one(
    prog: &LmiProgram,
    y0: &DVector<f64>,
    opts: &SolverOptions,
    steps: &mut usize,
) -> (Option<DVector<f64>>, Option<f64>) {
    let n = prog.num_vars;
    let mut aux = LmiProgram::new(n + 1);
    aux.objective[n] = 1.0;
    for c in &prog.constraints {
        let mut a = c.clone();
        a.add_term(n, DMatrix::identity(c.size(), c.size()));
        aux.add_constraint(a);
    }
    let worst = prog
        .constraint_min_eigenvalues(y0)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if worst > 0.0 {
        return (Some(y0.clone()), None);
    }
    let mut start = y0.clone().insert_row(n, 0.0);
    start[n] = -worst + 1.0;
    let barrier = Barrier {
        prog: &aux,
        boxed: n,
        bound: opts.box_bound,
    };
    // Stop once the iterate is comfortably strictly feasible.
    let target = -1e-6 * (1.0 + worst.abs());
    let stop = |y: &DVector<f64>| y[n] < target;
    let mut p1_opts = opts.clone();
    p1_opts.gap_tol = opts.gap_tol.max(1e-10);
    let out = follow_path(&barrier, start, &p1_opts, steps, &stop);
    let s = out.y[n];
    let y = out.y.rows(0, n).into_owned();
    if s < 0.0 && prog.constraints.iter().all(|c| c.eval(&y).cholesky().is_some()) {
        (Some(y), None)
    } else {
        (None, Some(s))
    }
}

/// Solves the program from `y0` (need not be feasible).
pub fn solve(prog: &LmiProgram, y0: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<SolveReport> {
    prog.validate()?;
    let n = prog.num_vars;
    let zero = DVector::zeros(n);
    let y0 = y0.unwrap_or(&zero);
    if y0.len() != n {
        return Err(Error::Input("initial point has the wrong length".into()));
    }
    if y0.iter().any(|v| v.abs() >= opts.box_bound) {
        return Err(Error::Input("initial point lies outside the variable box".into()));
    }
    let mut steps = 0;
    let (start, p1) = phase_one(prog, y0, opts, &mut steps);
    let Some(start) = start else {
        let status = if steps >= opts.max_newton_steps {
            SolveStatus::IterationLimit
        } else {
            SolveStatus::Infeasible
        };
        return Ok(SolveReport {
            status,
            objective: f64::NAN,
            min_eigenvalues: prog.constraint_min_eigenvalues(y0),
            x: y0.iter().copied().collect(),
            newton_steps: steps,
            barrier_rounds: 0,
            gap_bound: f64::INFINITY,
            phase1_value: p1,
        });
    };
    let barrier = Barrier {
        prog,
        boxed: n,
        bound: opts.box_bound,
    };
    let never = |_: &DVector<f64>| false;
    let out = if prog.objective.iter().all(|c| *c == 0.0) {
        // Pure feasibility: one centering gives the analytic center.
        let mut y = start;
        let outcome = barrier.center(&mut y, 1.0, opts, &mut steps, &never);
        let status = match outcome {
            CenterOutcome::Centered => SolveStatus::Optimal,
            CenterOutcome::StepLimit => SolveStatus::IterationLimit,
            CenterOutcome::Stalled => SolveStatus::Optimal,
        };
        PathOutcome {
            status,
            y,
            t: f64::INFINITY,
            rounds: 1,
        }
    } else {
        follow_path(&barrier, start, opts, &mut steps, &never)
    };
    Ok(SolveReport {
        status: out.status,
        objective: prog.objective.dot(&out.y),
        min_eigenvalues: prog.constraint_min_eigenvalues(&out.y),
        x: out.y.iter().copied().collect(),
        newton_steps: steps,
        barrier_rounds: out.rounds,
        gap_bound: barrier.degree() / out.t,
        phase1_value: p1,
    })
}
