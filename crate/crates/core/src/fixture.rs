//! Bundled experiment fixtures.
//!
//! `paper-sec4` holds the printed 4-decimal data of the two-state example:
//! the drift inputs `X0` and the forced experiment `X̄0, X̄1, U0`. `X1` was not
//! published; it is regenerated from `X0` with the true drift.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::interp::DriftDataset;
use crate::io::parse_csv_matrix;
use crate::kernel::KernelSpec;
use crate::plant::{drift_data_from_states, ForcedSamples, PlantModel};

pub const PAPER_SEC4: &str = "paper-sec4";

const SEC4_X0: &str = include_str!("../fixtures/paper-sec4/X0.csv");
const SEC4_XBAR0: &str = include_str!("../fixtures/paper-sec4/Xbar0.csv");
const SEC4_XBAR1: &str = include_str!("../fixtures/paper-sec4/Xbar1.csv");
const SEC4_U0: &str = include_str!("../fixtures/paper-sec4/U0.csv");

/// Design constants that accompany a fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConstants {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub gamma: Vec<f64>,
    pub q: DMatrix<f64>,
    pub alpha: f64,
    /// Input matrix of the ground-truth plant (not used by the design).
    pub true_b: DMatrix<f64>,
    /// Lyapunov matrix and level used for the published invariant set.
    pub cert_p: DMatrix<f64>,
    pub cert_level: f64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub drift: DriftDataset,
    pub forced: ForcedSamples,
    pub constants: FixtureConstants,
    pub plant: PlantModel,
}

pub fn fixture_names() -> &'static [&'static str] {
    &[PAPER_SEC4]
}

/// Raw CSV text of each fixture matrix, by file stem.
pub fn fixture_files(name: &str) -> Result<Vec<(&'static str, &'static str)>> {
    match name {
        PAPER_SEC4 => Ok(vec![
            ("X0", SEC4_X0),
            ("Xbar0", SEC4_XBAR0),
            ("Xbar1", SEC4_XBAR1),
            ("U0", SEC4_U0),
        ]),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

pub fn load_fixture(name: &str) -> Result<Fixture> {
    if name != PAPER_SEC4 {
        return Err(Error::UnknownFixture(name.to_string()));
    }
    let plant = PlantModel::example();
    let drift = drift_data_from_states(&plant, parse_csv_matrix(SEC4_X0)?)?;
    let forced = ForcedSamples::new(
        parse_csv_matrix(SEC4_XBAR0)?,
        parse_csv_matrix(SEC4_XBAR1)?,
        parse_csv_matrix(SEC4_U0)?,
    )?;
    let constants = FixtureConstants {
        kernel: KernelSpec::cubic(),
        lambda: 1e-7,
        gamma: vec![3.0, 0.4],
        q: DMatrix::identity(2, 2),
        alpha: 1.0,
        true_b: plant.input_matrix().clone(),
        cert_p: DMatrix::identity(2, 2) * 1.3350,
        cert_level: 11.5,
    };
    Ok(Fixture {
        name: name.to_string(),
        drift,
        forced,
        constants,
        plant,
    })
}
