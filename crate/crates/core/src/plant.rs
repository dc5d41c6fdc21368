//! Ground-truth plant `x⁺ = f(x) + B u`, experiment execution and data
//! matrices.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interp::{DriftDataset, InterpModel};
use crate::kernel::BoxDomain;
use crate::linalg;

/// Default relative singular-value threshold for the excitation check.
pub const DEFAULT_EXCITATION_TOL: f64 = 1e-8;

pub trait Drift: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> DVector<f64>;
}

/// `x₁⁺ = x₂ + x₁³`, `x₂⁺ = 0.5 x₁ + 0.2 x₂²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExampleDrift;

impl Drift for ExampleDrift {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![x[1] + x[0].powi(3), 0.5 * x[0] + 0.2 * x[1] * x[1]])
    }
}

type DriftFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;

/// Drift given by a closure.
#[derive(Clone)]
pub struct FnDrift {
    dim: usize,
    f: Arc<DriftFn>,
}

impl FnDrift {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        FnDrift { dim, f: Arc::new(f) }
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl Drift for FnDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    drift: Arc<dyn Drift>,
    input_matrix: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(drift: Arc<dyn Drift>, input_matrix: DMatrix<f64>) -> Result<Self> {
        let n = drift.dim();
        check_dim("input matrix rows", n, input_matrix.nrows())?;
        let f0 = drift.eval(&vec![0.0; n]);
        check_dim("drift output", n, f0.len())?;
        if f0.amax() > 1e-12 {
            return Err(Error::Input(format!(
                "the origin must be an equilibrium, |f(0)| = {:e}",
                f0.norm()
            )));
        }
        Ok(PlantModel { drift, input_matrix })
    }

    /// The two-state example plant with `B = [1; 0]`.
    pub fn example() -> Self {
        PlantModel {
            drift: Arc::new(ExampleDrift),
            input_matrix: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input_matrix
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok(self.drift.eval(x.as_slice()))
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        Ok(self.drift.eval(x.as_slice()) + &self.input_matrix * u)
    }

    pub(crate) fn step_unchecked(&self, x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        self.drift.eval(x) + &self.input_matrix * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    DriftOnly,
    Forced,
}

/// How the samples are strung together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collection {
    /// Reset to a fresh random state before every sample.
    #[default]
    OneStep,
    /// One trajectory from a single random initial state.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub num_samples: usize,
    pub state_box: BoxDomain,
    pub input_box: BoxDomain,
    pub seed: u64,
    pub mode: ExperimentMode,
    #[serde(default)]
    pub collection: Collection,
}

impl ExperimentConfig {
    pub fn validate(&self, plant: &PlantModel) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Input("experiment needs at least one sample".into()));
        }
        check_dim("state box dimension", plant.state_dim(), self.state_box.dim())?;
        if self.mode == ExperimentMode::Forced {
            check_dim("input box dimension", plant.input_dim(), self.input_box.dim())?;
        }
        let bounded = |b: &BoxDomain| b.bounds.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite());
        if !bounded(&self.state_box) || (self.mode == ExperimentMode::Forced && !bounded(&self.input_box)) {
            return Err(Error::Input("experiment sampling boxes must be bounded".into()));
        }
        Ok(())
    }
}

fn sample_box(rng: &mut ChaCha8Rng, b: &BoxDomain) -> DVector<f64> {
    DVector::from_iterator(
        b.dim(),
        b.bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }),
    )
}

pub fn collect_drift_data(plant: &PlantModel, cfg: &ExperimentConfig) -> Result<DriftDataset> {
    if cfg.mode != ExperimentMode::DriftOnly {
        return Err(Error::Input("drift data collection needs mode = drift-only".into()));
    }
    cfg.validate(plant)?;
    let n = plant.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x0 = DMatrix::zeros(n, cfg.num_samples);
    let mut x1 = DMatrix::zeros(n, cfg.num_samples);
    let mut x = sample_box(&mut rng, &cfg.state_box);
    for k in 0..cfg.num_samples {
        if cfg.collection == Collection::OneStep && k > 0 {
            x = sample_box(&mut rng, &cfg.state_box);
        }
        let next = plant.drift.eval(x.as_slice());
        x0.set_column(k, &x);
        x1.set_column(k, &next);
        x = next;
    }
    DriftDataset::new(x0, x1)
}

/// Drift samples from given start states (one step each).
pub fn drift_data_from_states(plant: &PlantModel, x0: DMatrix<f64>) -> Result<DriftDataset> {
    check_dim("state rows", plant.state_dim(), x0.nrows())?;
    let mut x1 = DMatrix::zeros(x0.nrows(), x0.ncols());
    for (k, x) in x0.column_iter().enumerate() {
        x1.set_column(k, &plant.drift.eval(x.as_slice()));
    }
    DriftDataset::new(x0, x1)
}

/// Raw forced-experiment samples `X̄₀, X̄₁, U₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedSamples {
    pub xbar0: DMatrix<f64>,
    pub xbar1: DMatrix<f64>,
    pub u0: DMatrix<f64>,
}

impl ForcedSamples {
    pub fn new(xbar0: DMatrix<f64>, xbar1: DMatrix<f64>, u0: DMatrix<f64>) -> Result<Self> {
        check_dim("X̄1 rows", xbar0.nrows(), xbar1.nrows())?;
        check_dim("X̄1 columns", xbar0.ncols(), xbar1.ncols())?;
        check_dim("U0 columns", xbar0.ncols(), u0.ncols())?;
        if xbar0.ncols() == 0 {
            return Err(Error::Input("forced dataset is empty".into()));
        }
        Ok(ForcedSamples { xbar0, xbar1, u0 })
    }

    /// Attach `K₀ = [k(x̄(0)) … k(x̄(T̄−1))]` built with the model's kernel.
    pub fn with_kernel_matrix(self, model: &InterpModel) -> Result<ForcedDataset> {
        check_dim("forced state dimension", model.state_dim(), self.xbar0.nrows())?;
        let mut k0 = DMatrix::zeros(model.num_centers(), self.xbar0.ncols());
        for (k, x) in self.xbar0.column_iter().enumerate() {
            k0.set_column(k, &model.kernel_vector(&x.into_owned())?);
        }
        Ok(ForcedDataset {
            xbar0: self.xbar0,
            xbar1: self.xbar1,
            u0: self.u0,
            k0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcedDataset {
    pub xbar0: DMatrix<f64>,
    pub xbar1: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub k0: DMatrix<f64>,
}

impl ForcedDataset {
    pub fn len(&self) -> usize {
        self.xbar0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.xbar0.ncols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn samples(&self) -> ForcedSamples {
        ForcedSamples {
            xbar0: self.xbar0.clone(),
            xbar1: self.xbar1.clone(),
            u0: self.u0.clone(),
        }
    }
}

pub fn collect_forced_samples(plant: &PlantModel, cfg: &ExperimentConfig) -> Result<ForcedSamples> {
    if cfg.mode != ExperimentMode::Forced {
        return Err(Error::Input("forced data collection needs mode = forced".into()));
    }
    cfg.validate(plant)?;
    let (n, m, tb) = (plant.state_dim(), plant.input_dim(), cfg.num_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut xbar0 = DMatrix::zeros(n, tb);
    let mut xbar1 = DMatrix::zeros(n, tb);
    let mut u0 = DMatrix::zeros(m, tb);
    let mut x = sample_box(&mut rng, &cfg.state_box);
    for k in 0..tb {
        if cfg.collection == Collection::OneStep && k > 0 {
            x = sample_box(&mut rng, &cfg.state_box);
        }
        let u = sample_box(&mut rng, &cfg.input_box);
        let next = plant.step_unchecked(x.as_slice(), &u);
        xbar0.set_column(k, &x);
        xbar1.set_column(k, &next);
        u0.set_column(k, &u);
        x = next;
    }
    ForcedSamples::new(xbar0, xbar1, u0)
}

pub fn collect_forced_data(
    plant: &PlantModel,
    cfg: &ExperimentConfig,
    model: &InterpModel,
) -> Result<ForcedDataset> {
    collect_forced_samples(plant, cfg)?.with_kernel_matrix(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub full_row_rank: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub tol: f64,
}

/// Full-row-rank test on `U₀` by relative singular-value threshold.
pub fn check_excitation(u0: &DMatrix<f64>, tol: f64) -> ExcitationReport {
    let sv = linalg::singular_values(u0);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    // fewer columns than rows: missing singular values are zero
    let sigma_min = if u0.ncols() < u0.nrows() {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    };
    ExcitationReport {
        full_row_rank: u0.nrows() > 0 && sigma_max > 0.0 && sigma_min > tol * sigma_max,
        sigma_min,
        sigma_max,
        tol,
    }
}

impl ExcitationReport {
    pub fn into_result(self) -> Result<Self> {
        if self.full_row_rank {
            Ok(self)
        } else {
            Err(Error::Excitation {
                sigma_min: self.sigma_min,
                sigma_max: self.sigma_max,
                tol: self.tol,
            })
        }
    }
}
