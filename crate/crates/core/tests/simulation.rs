mod common;

use common::*;
use icsieve::estimator::fit_main_ipw;
use icsieve::simulation::{run_scenario, Method, MultiplierSharing, NoiseLevels, Scenario, StudyOptions};
use icsieve::FitConfig;

fn desk_options(seed: u64) -> StudyOptions {
    StudyOptions { replicates: 200, bootstrap: 100, seed, fit: FitConfig::default() }
}

#[test]
fn weak_auxiliary_gives_little_gain() {
    let s = Scenario { sigma_e: NoiseLevels::One(1.70), ..Scenario::default() };
    let report = run_scenario(&s, 0, &desk_options(20240602), MultiplierSharing::Shared).unwrap();
    let row = report.row(Method::Proposed, 0, "beta").unwrap();
    let re = row.re.unwrap();
    eprintln!("rho {:.3}: RE {re:.3}, CP {:.3}, used {}", row.rho, row.cp, row.replicates_used);
    assert!((0.98..=1.25).contains(&re), "RE {re} outside [0.98, 1.25]");
}

#[test]
fn null_effect_is_covered_at_the_nominal_rate() {
    let s = Scenario { beta: 0.0, ..Scenario::default() };
    let report = run_scenario(&s, 0, &desk_options(20240603), MultiplierSharing::Shared).unwrap();
    for method in [Method::Zzc, Method::Proposed] {
        let row = report.row(method, 0, "beta").unwrap();
        eprintln!("{}: bias {:.4}, CP {:.3}", method.label(), row.bias, row.cp);
        assert!((0.91..=0.975).contains(&row.cp), "{} CP {}", method.label(), row.cp);
    }
}

#[test]
fn failure_counts_add_up() {
    let s = scenario(300, 0.2, 0.2, 1.0);
    let opts = StudyOptions { replicates: 4, bootstrap: 6, seed: 3, fit: FitConfig::default() };
    let report = run_scenario(&s, 0, &opts, MultiplierSharing::Shared).unwrap();
    for (level, records) in report.levels.iter().zip(&report.records) {
        assert_eq!(level.replicates_used + level.replicates_failed, 4);
        assert_eq!(records.len(), level.replicates_used);
        let dropped: usize = records.iter().map(|r| opts.bootstrap - r.bootstrap_used).sum();
        assert_eq!(dropped, level.bootstrap_failures);
    }
}

#[test]
fn replicate_records_match_a_direct_fit() {
    let s = scenario(400, 0.2, 0.2, 1.0);
    let opts = StudyOptions { replicates: 2, bootstrap: 4, seed: 8, fit: FitConfig::default() };
    let a = run_scenario(&s, 0, &opts, MultiplierSharing::Shared).unwrap();
    let b = run_scenario(&s, 1, &opts, MultiplierSharing::Shared).unwrap();
    // scenario index is part of the stream path
    assert_ne!(a.records[0][0].zzc, b.records[0][0].zzc);
    for r in &a.records[0] {
        assert_eq!(r.zzc.len(), 1);
        assert!(r.proposed_se[0] <= r.zzc_se[0] + 1e-12);
    }
    let data = cohort(&s, 0);
    assert!(fit_main_ipw(&data, &sieve(&data), &FitConfig::default()).unwrap().converged);
}
