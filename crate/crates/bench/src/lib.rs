//! Fixtures for the control-step benchmark.

use vfi_core::controller::{estimate_entity_residual, ControlSetup};
use vfi_core::nalgebra::DVector;
use vfi_core::primitives::WorkspaceEntity;
use vfi_core::sim::reference::{endonasal, EndonasalRun};
use vfi_core::Pose;

/// Inputs of one two-robot, twelve-constraint step.
pub struct StepFixture {
    pub setup: ControlSetup,
    pub q: Vec<DVector<f64>>,
    pub targets: Vec<Pose>,
    pub entities: Vec<WorkspaceEntity>,
}

/// The endonasal both-robots scenario at time `t`, starting from its initial joints.
pub fn endonasal_fixture(t: f64) -> StepFixture {
    let built = endonasal(EndonasalRun::Both).build().expect("reference scenario is valid");
    let tau = built.setup.params.tau;
    StepFixture {
        q: built.q0.iter().map(|q| DVector::from_column_slice(q)).collect(),
        targets: built.targets.iter().map(|s| s.at(t)).collect(),
        entities: built
            .entities
            .iter()
            .map(|e| estimate_entity_residual(&e.at(t), None, tau, built.residual_policy))
            .collect(),
        setup: built.setup,
    }
}
