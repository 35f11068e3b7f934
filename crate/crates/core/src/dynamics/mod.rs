//! Anosov test systems: perturbed hyperbolic toral automorphisms and their
//! constant-roof suspensions, Jacobian cocycles, expansion rates and frames.

mod cocycle;
mod frames;
mod rates;
mod system;

pub use cocycle::{flow_jacobian, jacobian_cocycle};
pub use frames::{
    build_frames, inverse_mobius_data, matrix_log, matrix_power, mobius_data, riccati_coefficients,
    BuiltFrames,
    FrameField, RiccatiCoefficients, GENERATOR_STEP,
};
pub use rates::{lyapunov_rates, RateReport};
pub use system::{
    make_system, r2_points, AnosovSystem, LinearSplitting, Perturbation, PerturbationSpec,
    SystemKind, SystemManifest,
};
pub(crate) use rates::segment_growth;
pub(crate) use system::CONE_KAPPA;
