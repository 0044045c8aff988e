//! Evaluation bench: synthetic identities, split protocol, metrics, the
//! input-space attack, and reports.

mod attack;
mod metrics;
mod protocol;
mod report;
mod synth;

pub use attack::attack_sim;
pub use metrics::{accept_rate, compute_eer, eer_point, gar_at_zero_far, mean_std, zero_far_threshold, EerPoint};
pub use protocol::{
    collect_scores, group_by_user, hold_out_validation, run_protocol, run_protocol_with, run_split, split_train_test,
    ProtocolConfig, ProtocolSeeds, ScoreRecord, ScoreSet, SplitOutcome,
};
pub use report::{histogram, EvalReport, SplitMetrics, REPORT_HEADER};
pub use synth::{gen_synth_dataset, noise_image, user_id, SynthSpec};
