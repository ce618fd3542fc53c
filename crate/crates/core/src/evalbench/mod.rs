//! Tracking metrics, stage funnels and the three experiment protocols:
//! model comparison, stage-input ablation and behavior guidance.

mod experiments;
mod metrics;
mod report;

pub use experiments::{
    evaluate, guidance_episodes, held_out_trial, run_ablation, run_comparison, run_guidance, schedule_invariant,
    EvalConfig, ExperimentReport, GuidanceConfig, GuidanceReport, GuidanceRow, ModelRow, RecoveryOperator, Scenario,
    ABLATION_CONSTANT, ABLATION_ORACLE, ABLATION_RANDOM, GUIDED, SCHEDULED, UNGUIDED,
};
pub use metrics::{
    episode_tracking, funnel_table, mean_abs_error, resample, time_normalize, tracking_error_root, tracking_error_upper,
    FunnelRow, ReferenceTrajectory, ROOT_DIM, UPPER_DIMS,
};
pub use report::{ablation_table, comparison_table, funnel_text, guidance_table};
