//! Policy learning inside the surrogate MDP.

pub mod env;
pub mod policy;
pub mod ppo;

pub use env::{env_reset, env_step, smooth_action, state_from_history, RlState, SpinupPool};
pub use policy::{
    load_policy, policy_act, policy_act_features, policy_input_width, save_policy, PolicyFile, PolicyModel,
    POLICY_FORMAT_VERSION,
};
pub use ppo::{discounted_returns, evaluate_policy, gae, ppo_train, ppo_train_from, IterStats, PpoReport, RlConfig};
