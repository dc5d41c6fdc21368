//! End-to-end runs: configuration, staged execution, artifacts and reports.
//!
//! Every command recomputes the stages it depends on from the configuration,
//! so a single config file and seed fully determine each artifact.

pub mod config;
pub mod gamma;
pub mod plot;
pub mod report;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fixture::{load_fixture, Fixture};
use crate::interp::{fit, DriftDataset, ErrorBound, InterpModel};
use crate::invariance::{
    certify_pi, check_decrease_bound, delta_ratio, grid_csv, largest_certified_level, lyapunov_value,
    sample_in_level_set, simulate_closed_loop, GridSpec, LyapunovCert, PiCertificate, ResidualEvaluator,
    Trajectory, Verdict,
};
use crate::io::{export_datasets, import_datasets, write_csv_matrix};
use crate::kernel::BoxDomain;
use crate::linalg;
use crate::plant::{check_excitation, collect_drift_data, collect_forced_samples, ForcedSamples, PlantModel, DEFAULT_EXCITATION_TOL};
use crate::synthesis::{
    build_problem, nominal_closed_loop, synthesize, verify_robust_condition, RobustReport, SynthesisProblem,
    SynthesisResult,
};

use config::{DataSource, PipelineConfig};
use gamma::{derive_gamma_from_monomials, GammaDerivation};
use report::{CertificateSummary, Check, FitSummary, MatrixJson, RunReport, SimulationSummary, SynthesisSummary};

/// Loaded experiment data together with the plant used for simulation.
#[derive(Debug, Clone)]
pub struct DataStage {
    pub plant: PlantModel,
    pub drift: DriftDataset,
    pub forced: ForcedSamples,
    pub label: String,
}

pub fn load_data(cfg: &PipelineConfig) -> Result<DataStage> {
    match &cfg.data {
        DataSource::Fixture { name } => Ok(data_from_fixture(&load_fixture(name)?)),
        DataSource::Files { dir } => {
            let (_, drift, forced) = import_datasets(dir)?;
            Ok(DataStage {
                plant: PlantModel::example(),
                drift,
                forced,
                label: format!("files:{}", dir.display()),
            })
        }
        DataSource::Simulate { drift, forced } => {
            let plant = PlantModel::example();
            let d = collect_drift_data(&plant, drift)?;
            let f = collect_forced_samples(&plant, forced)?;
            Ok(DataStage {
                plant,
                drift: d,
                forced: f,
                label: format!("simulate:seeds {}/{}", drift.seed, forced.seed),
            })
        }
    }
}

pub fn data_from_fixture(f: &Fixture) -> DataStage {
    DataStage {
        plant: f.plant.clone(),
        drift: f.drift.clone(),
        forced: f.forced.clone(),
        label: format!("fixture:{}", f.name),
    }
}

#[derive(Debug, Clone)]
pub struct FitStage {
    pub data: DataStage,
    pub model: Arc<InterpModel>,
    pub bound: ErrorBound,
    pub gamma_source: String,
    pub derivation: Option<GammaDerivation>,
}

pub fn run_fit(cfg: &PipelineConfig, data: DataStage) -> Result<FitStage> {
    let model = Arc::new(fit(&data.drift, &cfg.kernel, cfg.lambda)?);
    let derivation = match &cfg.derive_gamma {
        Some(d) => Some(derive_gamma_from_monomials(&d.components, &model, d.factor)?),
        None => None,
    };
    let (gamma, gamma_source) = match (&cfg.gamma, &derivation) {
        (Some(g), _) => (g.clone(), "config".to_string()),
        (None, Some(d)) => (d.suggested.clone(), "derived".to_string()),
        (None, None) => return Err(Error::Config("no Γ given".into())),
    };
    let bound = ErrorBound::new(gamma, model.clone())?;
    Ok(FitStage {
        data,
        model,
        bound,
        gamma_source,
        derivation,
    })
}

pub fn fit_summary(stage: &FitStage) -> FitSummary {
    let ev = linalg::sym_eigenvalues(stage.model.gram().matrix());
    FitSummary {
        kernel: stage.model.kernel().id(),
        lambda: stage.model.lambda(),
        num_centers: stage.model.num_centers(),
        fit_residual: stage.model.fit_residual(&stage.data.drift),
        gram_min_eigenvalue: ev.first().copied().unwrap_or(f64::NAN),
        gram_max_eigenvalue: ev.last().copied().unwrap_or(f64::NAN),
        gamma: stage.bound.gamma().iter().copied().collect(),
        gamma_source: stage.gamma_source.clone(),
        gamma_derivation: stage.derivation.clone(),
        coeffs: MatrixJson::from(stage.model.coeffs()),
    }
}

#[derive(Debug, Clone)]
pub struct SynthStage {
    pub fit: FitStage,
    pub problem: SynthesisProblem,
    pub result: SynthesisResult,
    pub robust: RobustReport,
}

pub const ROBUST_SAMPLES: usize = 200;

pub fn run_synthesis(cfg: &PipelineConfig, fit: FitStage) -> Result<SynthStage> {
    let data = fit.data.forced.clone().with_kernel_matrix(&fit.model)?;
    let problem = build_problem(&fit.model, &data, &fit.bound, cfg.q_matrix()?, cfg.alpha)?;
    let result = synthesize(&problem)?;
    let robust = verify_robust_condition(&result, &problem, ROBUST_SAMPLES, cfg.seed)?;
    let first_row = result.residual.row(0).norm();
    if first_row > 1e-2 {
        log::warn!("nonlinearity cancellation is poor: first residual row has norm {first_row:.3e}");
    }
    Ok(SynthStage {
        fit,
        problem,
        result,
        robust,
    })
}

pub fn synthesis_summary(stage: &SynthStage) -> SynthesisSummary {
    let r = &stage.result;
    let acl = r.closed_loop_linear(&stage.problem);
    SynthesisSummary {
        excitation: check_excitation(&stage.problem.u0, DEFAULT_EXCITATION_TOL),
        delta: stage.problem.delta_scale,
        sample_deltas: stage.problem.sample_deltas.clone(),
        p: MatrixJson::from(&r.p),
        y: MatrixJson::from(&r.y),
        eps: r.eps,
        kbar: MatrixJson::from(&r.kbar),
        khat: MatrixJson::from(&r.khat),
        residual: MatrixJson::from(&r.residual),
        residual_first_row_norm: r.residual.row(0).norm(),
        residual_norm: linalg::spectral_norm(&r.residual),
        objective: r.objective,
        spectral_radius: linalg::spectral_radius(&acl),
        closed_loop_linear: MatrixJson::from(&acl),
        lmi_min_eigenvalue: r.lmi_min_eigenvalue,
        cancellation_solve: r.cancellation_solve.clone(),
        stability_solve: r.stability_solve.clone(),
        robust: stage.robust.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct CertStage {
    pub cert: LyapunovCert,
    pub p_source: String,
    pub evaluator: ResidualEvaluator,
    pub certificate: PiCertificate,
    pub largest_level: Option<f64>,
}

/// Certifies `ℛ_γ` for the configured (or synthesized) `P`.
pub fn run_certify(cfg: &PipelineConfig, synth: &SynthStage, level: Option<f64>) -> Result<CertStage> {
    let (p, p_source) = match cfg.cert_p_matrix()? {
        Some(p) => (p, "config".to_string()),
        None => (synth.result.p.clone(), "synthesized".to_string()),
    };
    let cert = LyapunovCert::new(p, level.unwrap_or(cfg.certify.level))?;
    let evaluator = ResidualEvaluator::new(&synth.problem, &synth.result, &cert, &synth.fit.bound)?;
    if cert.dim() >= 4 {
        log::warn!(
            "a {}-dimensional grid has {} points; sampled checks scale better but are not certificates",
            cert.dim(),
            cfg.certify.grid_resolution.pow(cert.dim() as u32)
        );
    }
    let grid = GridSpec::covering(&cert, cfg.certify.grid_resolution)?;
    let certificate = certify_pi(&evaluator, &cert, &grid)?;
    let largest_level = match &cfg.certify.level_search {
        Some(s) => largest_certified_level(&evaluator, cert.p(), &s.candidates(), cfg.certify.grid_resolution)?
            .map(|c| c.gamma),
        None => None,
    };
    Ok(CertStage {
        cert,
        p_source,
        evaluator,
        certificate,
        largest_level,
    })
}

pub fn simulate_runs(synth: &SynthStage, cert: &LyapunovCert, count: usize, steps: usize, seed: u64) -> Result<Vec<Trajectory>> {
    sample_in_level_set(cert, count, seed)?
        .iter()
        .map(|x0| simulate_closed_loop(&synth.fit.data.plant, &synth.problem, &synth.result, x0, steps))
        .collect()
}

pub fn simulation_summary(cert: &LyapunovCert, runs: &[Trajectory], steps: usize) -> Result<SimulationSummary> {
    let mut exits = 0;
    let mut max_final = 0.0_f64;
    for t in runs {
        let mut left = false;
        for x in &t.states {
            let v = lyapunov_value(cert, &DVector::from_column_slice(x))?;
            left |= v > cert.gamma() * (1.0 + 1e-12);
        }
        exits += usize::from(left);
        if let Some(last) = t.states.last() {
            max_final = max_final.max(last.iter().map(|c| c * c).sum::<f64>().sqrt());
        }
    }
    Ok(SimulationSummary {
        trajectories: runs.len(),
        steps,
        level: cert.gamma(),
        exits,
        diverged: runs.iter().filter(|t| t.diverged).count(),
        max_final_norm: if runs.iter().any(|t| t.diverged) { f64::INFINITY } else { max_final },
    })
}

/// Overrides applied on top of a configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<std::path::PathBuf>,
    pub grid_resolution: Option<usize>,
    pub level: Option<f64>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &PipelineConfig) -> Result<PipelineConfig> {
        let mut c = cfg.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(r) = self.grid_resolution {
            c.certify.grid_resolution = r;
        }
        if let Some(g) = self.level {
            c.certify.level = g;
        }
        c.validate()?;
        Ok(c)
    }
}

fn timed<T>(report: &mut RunReport, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    report.timings_ms.insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
    out
}

fn new_report(command: &str, cfg: &PipelineConfig, data_label: &str) -> Result<RunReport> {
    Ok(RunReport::new(command, cfg.hash()?, data_label.to_string(), cfg.seed))
}

/// Writes `report.json` and `timings.json` into the output directory.
pub fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), report.to_json()? + "\n")?;
    fs::write(out.join("timings.json"), serde_json::to_string_pretty(&report.timings_ms)? + "\n")?;
    Ok(())
}

pub fn cmd_fit(cfg: &PipelineConfig) -> Result<RunReport> {
    let data = load_data(cfg)?;
    let mut report = new_report("fit", cfg, &data.label)?;
    let stage = timed(&mut report, "fit", || run_fit(cfg, data))?;
    let out = &cfg.output_dir;
    export_datasets(
        &out.join("fixtures"),
        &stage.data.drift,
        &stage.data.forced,
        Some(cfg.seed),
        &cfg.kernel.id(),
    )?;
    write_csv_matrix(&out.join("model_coeffs.csv"), stage.model.coeffs())?;
    let summary = fit_summary(&stage);
    report.push(Check::at_most(
        "fit-residual",
        summary.fit_residual,
        1e-8,
        "relative residual of the regularized normal equations",
    ));
    report.fit = Some(summary);
    write_report(out, &report)?;
    Ok(report)
}

pub fn cmd_synthesize(cfg: &PipelineConfig) -> Result<RunReport> {
    let data = load_data(cfg)?;
    let mut report = new_report("synthesize", cfg, &data.label)?;
    let fit = timed(&mut report, "fit", || run_fit(cfg, data))?;
    report.fit = Some(fit_summary(&fit));
    let synth = timed(&mut report, "synthesis", || run_synthesis(cfg, fit))?;
    let summary = synthesis_summary(&synth);
    report.push(Check::at_most(
        "robust-condition",
        summary.robust.max_eigenvalue,
        summary.robust.tol,
        format!("{} sampled uncertainty realizations", summary.robust.samples),
    ));
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("synthesis.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    report.synthesis = Some(summary);
    write_report(out, &report)?;
    Ok(report)
}

fn write_certificate_artifacts(out: &Path, stage: &CertStage, runs: &[Trajectory]) -> Result<()> {
    fs::create_dir_all(out.join("grids"))?;
    fs::create_dir_all(out.join("figures"))?;
    fs::write(out.join("grids").join("certificate.csv"), grid_csv(&stage.certificate))?;
    if stage.cert.dim() == 2 {
        let svg = plot::render_certificate_svg(&stage.certificate, stage.cert.p(), runs, "invariant level set")?;
        fs::write(out.join("figures").join("certificate.svg"), svg)?;
    }
    Ok(())
}

fn certificate_summary(stage: &CertStage, synth: &SynthStage) -> Result<CertificateSummary> {
    Ok(CertificateSummary {
        p: MatrixJson::from(stage.cert.p()),
        p_source: stage.p_source.clone(),
        certificate: stage.certificate.clone(),
        delta_ratio: delta_ratio(&synth.fit.bound, &stage.certificate)?,
        largest_certified_level: stage.largest_level,
        decrease_check: None,
    })
}

pub fn cmd_certify(cfg: &PipelineConfig) -> Result<RunReport> {
    let data = load_data(cfg)?;
    let mut report = new_report("certify", cfg, &data.label)?;
    let fit = timed(&mut report, "fit", || run_fit(cfg, data))?;
    report.fit = Some(fit_summary(&fit));
    let synth = timed(&mut report, "synthesis", || run_synthesis(cfg, fit))?;
    report.synthesis = Some(synthesis_summary(&synth));
    let stage = timed(&mut report, "certify", || run_certify(cfg, &synth, None))?;
    let runs = simulate_runs(&synth, &stage.cert, cfg.simulate.trajectories.min(20), cfg.simulate.steps, cfg.seed)?;
    write_certificate_artifacts(&cfg.output_dir, &stage, &runs)?;
    let c = &stage.certificate;
    report.push(Check::flag(
        "certificate",
        c.verdict == Verdict::Certified,
        format!("{} at γ = {}{}", c.verdict, c.gamma, c.reason.as_deref().map(|r| format!(": {r}")).unwrap_or_default()),
    ));
    report.certificate = Some(certificate_summary(&stage, &synth)?);
    write_report(&cfg.output_dir, &report)?;
    Ok(report)
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<RunReport> {
    let data = load_data(cfg)?;
    let mut report = new_report("simulate", cfg, &data.label)?;
    let fit = timed(&mut report, "fit", || run_fit(cfg, data))?;
    let synth = timed(&mut report, "synthesis", || run_synthesis(cfg, fit))?;
    report.synthesis = Some(synthesis_summary(&synth));
    let p = cfg.cert_p_matrix()?.unwrap_or_else(|| synth.result.p.clone());
    let cert = LyapunovCert::new(p, cfg.certify.level)?;
    let runs = timed(&mut report, "simulate", || {
        simulate_runs(&synth, &cert, cfg.simulate.trajectories, cfg.simulate.steps, cfg.seed)
    })?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let mut csv = String::from("run,step");
    for i in 1..=cert.dim() {
        csv += &format!(",x{i}");
    }
    csv.push('\n');
    for (r, t) in runs.iter().enumerate() {
        for (k, x) in t.states.iter().enumerate() {
            csv += &format!("{r},{k}");
            for c in x {
                csv += &format!(",{c:?}");
            }
            csv.push('\n');
        }
    }
    fs::write(out.join("trajectories.csv"), csv)?;
    let sim = simulation_summary(&cert, &runs, cfg.simulate.steps)?;
    report.push(Check::at_most("trajectory-containment", sim.exits as f64, 0.0, "runs leaving the level set"));
    report.push(Check::at_most("trajectory-divergence", sim.diverged as f64, 0.0, "diverged runs"));
    report.simulation = Some(sim);
    write_report(out, &report)?;
    Ok(report)
}

/// Maximum componentwise deviation of the nominal closed loop from
/// `[0.2481 x₂, 0.5 x₁ + 0.2 x₂²]` on a 21×21 grid over `[−1, 1]²`.
pub fn nominal_loop_deviation(synth: &SynthStage) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..21 {
        for j in 0..21 {
            let x1 = -1.0 + 0.1 * i as f64;
            let x2 = -1.0 + 0.1 * j as f64;
            let y = nominal_closed_loop(&synth.result, &synth.problem, &DVector::from_vec(vec![x1, x2]))?;
            worst = worst
                .max((y[0] - 0.2481 * x2).abs())
                .max((y[1] - 0.5 * x1 - 0.2 * x2 * x2).abs());
        }
    }
    Ok(worst)
}

pub const EXPECTED_NORM_SQ: [f64; 2] = [2.0, 0.29];

/// Runs the two-state example end to end and evaluates every reproduction
/// check. Stage failures become failed checks rather than errors.
pub fn reproduce_paper(cfg: &PipelineConfig) -> Result<RunReport> {
    let fixture = match &cfg.data {
        DataSource::Fixture { name } => load_fixture(name)?,
        _ => return Err(Error::Config("reproduce-paper runs from a bundled fixture".into())),
    };
    reproduce_with_fixture(cfg, &fixture)
}

pub fn reproduce_with_fixture(cfg: &PipelineConfig, fixture: &Fixture) -> Result<RunReport> {
    let data = data_from_fixture(fixture);
    let mut report = new_report("reproduce-paper", cfg, &data.label)?;
    let out = cfg.output_dir.clone();

    let exc = check_excitation(&fixture.forced.u0, DEFAULT_EXCITATION_TOL);
    report.push(Check {
        name: "excitation".into(),
        passed: exc.full_row_rank,
        value: exc.sigma_min,
        threshold: exc.tol * exc.sigma_max,
        detail: "smallest singular value of U0 above the relative threshold".into(),
    });

    let fit = match timed(&mut report, "fit", || run_fit(cfg, data)) {
        Ok(f) => f,
        Err(e) => {
            report.push(Check::flag("fit", false, e.to_string()));
            write_report(&out, &report)?;
            return Ok(report);
        }
    };
    report.fit = Some(fit_summary(&fit));
    if let Some(d) = &fit.derivation {
        let dev = d
            .components
            .iter()
            .zip(EXPECTED_NORM_SQ)
            .map(|(c, e)| (c.norm_sq - e).abs())
            .fold(0.0, f64::max);
        report.push(Check::at_most(
            "gamma-derivation",
            dev,
            1e-3,
            format!(
                "α K αᵀ = {:?}, expected {:?}",
                d.components.iter().map(|c| c.norm_sq).collect::<Vec<_>>(),
                EXPECTED_NORM_SQ
            ),
        ));
    }
    export_datasets(&out.join("fixtures"), &fit.data.drift, &fit.data.forced, None, &cfg.kernel.id())?;

    let synth = match timed(&mut report, "synthesis", || run_synthesis(cfg, fit)) {
        Ok(s) => s,
        Err(e) => {
            report.push(Check::flag("synthesis", false, e.to_string()));
            write_report(&out, &report)?;
            return Ok(report);
        }
    };
    let summary = synthesis_summary(&synth);
    report.push(Check::at_most(
        "cancellation-residual",
        summary.residual_first_row_norm,
        1e-3,
        "2-norm of the first row of Â + X̂₁U₀†K̂",
    ));
    report.push(Check::at_most(
        "nominal-closed-loop",
        nominal_loop_deviation(&synth)?,
        2e-2,
        "max deviation from [0.2481 x2, 0.5 x1 + 0.2 x2²] on [-1,1]²",
    ));
    report.push(Check::at_most(
        "robust-condition",
        summary.robust.max_eigenvalue,
        summary.robust.tol,
        format!("{} sampled uncertainty realizations", summary.robust.samples),
    ));
    report.synthesis = Some(summary);

    let stage = timed(&mut report, "certify", || run_certify(cfg, &synth, None))?;
    let c = &stage.certificate;
    report.push(Check::flag(
        "invariance-certificate",
        c.verdict == Verdict::Certified && c.z_empty,
        format!("{} at γ = {}, 𝒵 empty: {}", c.verdict, c.gamma, c.z_empty),
    ));

    let runs = timed(&mut report, "simulate", || {
        simulate_runs(&synth, &stage.cert, cfg.simulate.trajectories, cfg.simulate.steps, cfg.seed)
    })?;
    let sim = simulation_summary(&stage.cert, &runs, cfg.simulate.steps)?;
    report.push(Check::at_most("trajectory-containment", sim.exits as f64, 0.0, "runs leaving the level set"));
    report.push(Check::at_most(
        "trajectory-convergence",
        sim.max_final_norm,
        1e-3,
        "largest final state norm",
    ));

    let synth_cert = LyapunovCert::new(synth.result.p.clone(), cfg.certify.level)?;
    let synth_eval = ResidualEvaluator::new(&synth.problem, &synth.result, &synth_cert, &synth.fit.bound)?;
    let domain = BoxDomain::cube(2, -2.0, 2.0)?;
    let dec = timed(&mut report, "decrease-bound", || {
        check_decrease_bound(
            &synth_eval,
            &synth_cert,
            &synth.fit.data.plant,
            &synth.problem,
            &synth.result,
            &domain,
            10_000,
            cfg.seed,
        )
    })?;
    report.push(Check::at_most(
        "decrease-bound",
        dec.violations as f64,
        0.0,
        format!("worst V(x⁺) − V(x) − (l + g) = {:.3e} over {} states", dec.worst_excess, dec.samples),
    ));

    write_certificate_artifacts(&out, &stage, &runs)?;
    let mut cs = certificate_summary(&stage, &synth)?;
    cs.decrease_check = Some(dec);
    report.certificate = Some(cs);
    report.simulation = Some(sim);
    write_report(&out, &report)?;
    Ok(report)
}
