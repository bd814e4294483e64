//! Experiment orchestration: initial datasets, closed-loop episodes,
//! trajectory metrics and the convergence and timing studies.

pub mod collect;
pub mod episode;
pub mod experiments;
pub mod metrics;

pub use collect::{collect_initial, pd_action, sample_training_start};
pub use episode::{run_episode, run_seeds, EvalReport, StageTiming, Stat, Summary};
pub use experiments::{convergence_experiment, timing_experiment, ConvergenceReport, TimingReport};
pub use metrics::{frechet_distance, rmse, time_lag};
