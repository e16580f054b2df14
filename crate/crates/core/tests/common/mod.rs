#![allow(dead_code)]

use icsieve::rng::stream;
use icsieve::simulation::{calibrated, generate_cohort, CovariateSetup, NoiseLevels, Scenario};
use icsieve::{CohortDataset, FitConfig, SieveConfig};

pub const CALIBRATION_SEED: u64 = 17;

/// Default scenario with `n`, design and case rate overridden, and the end of
/// study calibrated.
pub fn scenario(n: usize, p_c: f64, q_s: f64, q_c: f64) -> Scenario {
    let s = Scenario { n, p_c, q_s, q_c, ..Scenario::default() };
    calibrated(&s, CALIBRATION_SEED).unwrap()
}

pub fn with_z(mut s: Scenario) -> Scenario {
    s.covariates = CovariateSetup::XAndZ;
    s
}

pub fn with_noise(mut s: Scenario, sigma_e: f64) -> Scenario {
    s.sigma_e = NoiseLevels::One(sigma_e);
    s
}

pub fn cohort(s: &Scenario, seed: u64) -> CohortDataset {
    generate_cohort(s, &mut stream(seed, &[])).unwrap()
}

pub fn sieve(data: &CohortDataset) -> SieveConfig {
    SieveConfig::from_dataset(data, 3).unwrap()
}

pub fn fit_config() -> FitConfig {
    FitConfig::default()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
