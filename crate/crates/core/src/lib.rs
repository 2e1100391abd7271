//! Synthesis and verification of energy-shaping feedbacks for simple
//! mechanical control systems with one degree of underactuation.
//!
//! Given a polynomial metric and potential in adapted coordinates (actuated
//! codistribution span{dq2..dqn}, equilibrium at the origin), the crate
//! solves the kinetic-shaping lambda equation and the potential-shaping PDE
//! as exact truncated power series, certifies the closed-loop spectrum at
//! the equilibrium, assembles the shaping feedback, and validates it by
//! fixed-step simulation.

pub mod error;
pub mod formal;
pub mod geometry;
pub mod jet;
pub mod jetmat;
pub mod lambda;
pub mod linear;
pub mod ratmat;
pub mod shaping;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{
    christoffel_of, geodesic_spray_rhs, hessian_at_origin, ChristoffelField, MechanicalSystem,
    ValidationReport,
};
pub use jet::{rat, ratio, Jet, MultiIndex, Rat};
pub use jetmat::JetMatrix;
pub use lambda::{
    closed_loop_metric_from_lambda, constant_lambda_residual, formal_lambda_solve,
    lambda_method_residuals, phi_g_kernel_basis, LambdaField, LambdaSolve, MethodResiduals,
    SolutionSpaceReport,
};
pub use linear::{design_target, kalman_controllable, linearize, Linearization, TargetMatrix};
pub use ratmat::RatMatrix;
pub use shaping::{
    assemble_feedback, compatibility_check, formal_potential_solve, potential_only_synthesize,
    synthesize, CompatibilityReport, FeedbackLaw, PdObstruction, Route, ShapingSolution,
    SpectralCertificate, SynthesisOptions,
};
pub use sim::{
    compare_trajectories, energy_drift, simulate_closed, simulate_open_with_feedback, write_csv,
    EnergyReference, SimConfig, Trajectory,
};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::geometry::MechanicalSystem;
    use crate::jet::{rat, Jet};
    use crate::jetmat::JetMatrix;

    /// The worked two-dof example: metric diag(1+q2^2, 1+q1^2), potential
    /// -q1^2 + 2 q1 q2 + q2^2, actuated direction dq2.
    pub fn two_dof_indefinite(order: usize) -> MechanicalSystem {
        let q1 = Jet::variable(2, order, 0);
        let q2 = Jet::variable(2, order, 1);
        let mut metric = JetMatrix::zeros(2, 2, 2, order);
        *metric.get_mut(0, 0) = Jet::one(2, order).add(&q2.mul(&q2));
        *metric.get_mut(1, 1) = Jet::one(2, order).add(&q1.mul(&q1));
        MechanicalSystem::new(metric, two_dof_potential(order)).unwrap()
    }

    /// Same system with the extra 2 q1 q2 cross term in the metric; its
    /// lambda solution space is strictly larger at the origin.
    pub fn two_dof_cross_term(order: usize) -> MechanicalSystem {
        let q1 = Jet::variable(2, order, 0);
        let q2 = Jet::variable(2, order, 1);
        let cross = q1.mul(&q2).scale(&rat(2));
        let mut metric = JetMatrix::zeros(2, 2, 2, order);
        *metric.get_mut(0, 0) = Jet::one(2, order).add(&q2.mul(&q2));
        *metric.get_mut(0, 1) = cross.clone();
        *metric.get_mut(1, 0) = cross;
        *metric.get_mut(1, 1) = Jet::one(2, order).add(&q1.mul(&q1));
        MechanicalSystem::new(metric, two_dof_potential(order)).unwrap()
    }

    pub fn two_dof_potential(order: usize) -> Jet {
        let q1 = Jet::variable(2, order, 0);
        let q2 = Jet::variable(2, order, 1);
        q1.mul(&q1)
            .neg()
            .add(&q1.mul(&q2).scale(&rat(2)))
            .add(&q2.mul(&q2))
    }
}
