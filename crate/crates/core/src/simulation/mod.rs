//! Synthetic cohorts and the Monte Carlo replication harness.

pub mod generate;
pub mod report;
pub mod scenario;
pub mod study;

pub use generate::{
    calibrate_end_of_study, failure_time_from_uniform, generate_cohort, generate_cohort_family, generate_exam_schedule,
    generate_failure_time, true_cumhaz, verify_case_rate, Calibration, CaseRateSample, ExamProcess,
};
pub use report::{Method, ReplicationReport, ReportRow, ScenarioReport};
pub use scenario::{CovariateSetup, NoiseLevels, Scenario, StudyConfig};
pub use study::{calibrated, cumhaz_l2_distance, run_scenario, run_study, MultiplierSharing, StudyOptions};
