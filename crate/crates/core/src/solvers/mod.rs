//! Reference and outer-loop solvers around the elimination engine.

mod kkt;
mod lm;
mod riccati;

pub use kkt::kkt_solve_oracle;
pub use lm::{
    iterative_sgopt, iterative_sgopt_with, rollout, zero_control_guess, InnerOrdering, LinearChain, LmOptions,
    LmRecord, LmReport, LmState, NonlinearChain, Rollout, TransitionModel,
};
pub use riccati::{assemble_dense_lti, dense_from_step, riccati_lqr, DenseLTIModel, RiccatiSolution};
