//! End-to-end recipes shared by the command-line pipeline and the
//! acceptance suite.

mod cartpole;
mod session;

pub use cartpole::{
    collect_cartpole, evaluate_greedy, robustness_study, train_expert, CartpoleRecipe,
    RobustnessStudy, RobustnessSweep,
};
pub use session::{
    collect_session, confounding_ablation, distill_study, fit_agent_model, session_comparison,
    AgentModel, ConfoundingResult, Scoring, SessionComparison, SessionRecipe, SessionSplits,
};
