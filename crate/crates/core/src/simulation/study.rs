use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{calibrate_end_of_study, generate_cohort_family, CALIBRATION_BRACKET};
use super::report::{summarize, ReplicationReport, ScenarioReport};
use super::scenario::{Scenario, StudyConfig};
use crate::error::{Error, Result};
use crate::estimator::{working_spec, FitConfig, FitResult, Fitter};
use crate::likelihood::ModelSpec;
use crate::rng::{stream, tag};
use crate::sieve::{basis_values, SieveConfig};
use crate::update::{draw_bootstrap_weights, estimate_sigma, update_estimate, ReplicateFits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub replicates: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl StudyOptions {
    pub fn from_config(cfg: &StudyConfig) -> Self {
        Self {
            replicates: cfg.replicates,
            bootstrap: cfg.bootstrap,
            seed: cfg.seed,
            fit: cfg.fit.unwrap_or_default(),
        }
    }
}

/// Estimates of one replicate at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub zzc: Vec<f64>,
    pub zzc_se: Vec<f64>,
    pub proposed: Vec<f64>,
    pub proposed_se: Vec<f64>,
    pub bootstrap_used: usize,
    pub fallback: bool,
}

/// Outcome of one replicate at every noise level; `None` marks a replicate
/// excluded at that level.
type ReplicateOutcome = Vec<Option<ReplicateRecord>>;

/// Main refit and per-level working refits (IPW, full) of one bootstrap draw.
type Draw = (Option<Vec<f64>>, Vec<Option<(Vec<f64>, Vec<f64>)>>);

/// How the bootstrap multipliers reach the working-model refits. Anything
/// but `Shared` breaks the estimator and exists only to test that sharing
/// matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierSharing {
    Shared,
    /// The working refits get a random permutation of the multipliers.
    ShuffledWorking,
}

fn replicate_seed(seed: u64, scenario_index: usize, r: usize) -> u64 {
    stream(seed, &[tag::REPLICATE, scenario_index as u64, r as u64]).next_u64()
}

/// Fills in `end_of_study` by calibration when the scenario has none.
pub fn calibrated(scenario: &Scenario, seed: u64) -> Result<Scenario> {
    let mut s = scenario.clone();
    if s.end_of_study.is_none() {
        let cal = calibrate_end_of_study(scenario, scenario.p_c, CALIBRATION_BRACKET, seed)?;
        s.end_of_study = Some(cal.end_of_study);
    }
    Ok(s)
}

fn run_replicate(
    scenario: &Scenario,
    opts: &StudyOptions,
    seed: u64,
    replicate: usize,
    sharing: MultiplierSharing,
) -> Result<ReplicateOutcome> {
    let levels = scenario.sigma_e.values().len();
    let cohorts = generate_cohort_family(scenario, &mut stream(seed, &[]))?;
    let base = &cohorts[0];
    let n = base.len();
    let sieve = SieveConfig::from_dataset(base, scenario.degree)?;
    let ipw = base.ipw_weights();
    let ones = vec![1.0; n];

    let main = Fitter::new(base, ModelSpec::Main, &sieve, opts.fit)?;
    let main_fit = match main.fit(&ipw) {
        Ok(f) if f.converged => f,
        _ => return Ok(vec![None; levels]),
    };
    let mut working = Vec::with_capacity(levels);
    for data in &cohorts {
        let fitter = Fitter::new(data, working_spec(data), &sieve, opts.fit)?;
        let fits = fitter.fit(&ipw).and_then(|a| Ok((a, fitter.fit(&ones)?)));
        working.push(match fits {
            Ok((a, b)) if a.converged && b.converged => Some((fitter, a, b)),
            _ => None,
        });
    }

    let refit = |fitter: &Fitter, w: &[f64], start: &FitResult| -> Option<Vec<f64>> {
        match fitter.fit_from(w, &start.params().to_vec()) {
            Ok(f) if f.converged => Some(f.vartheta_hat),
            _ => None,
        }
    };
    let draws: Vec<Draw> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[tag::BOOTSTRAP, b as u64]);
            let u = draw_bootstrap_weights(n, &mut rng);
            let u_working = match sharing {
                MultiplierSharing::Shared => u.clone(),
                MultiplierSharing::ShuffledWorking => {
                    let mut v = u.clone();
                    rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut rng);
                    v
                }
            };
            let main_w: Vec<f64> = u.iter().zip(&ipw).map(|(a, w)| a * w).collect();
            let work_w: Vec<f64> = u_working.iter().zip(&ipw).map(|(a, w)| a * w).collect();
            let main_b = refit(&main, &main_w, &main_fit);
            let work_b = working
                .iter()
                .map(|slot| {
                    let (fitter, a, f) = slot.as_ref()?;
                    Some((refit(fitter, &work_w, a)?, refit(fitter, &u_working, f)?))
                })
                .collect();
            (main_b, work_b)
        })
        .collect();

    let mut out = Vec::with_capacity(levels);
    for (level, slot) in working.iter().enumerate() {
        let Some((_, wi, wf)) = slot else {
            out.push(None);
            continue;
        };
        let reps: Vec<ReplicateFits> = draws
            .iter()
            .filter_map(|(m, w)| {
                let m = m.as_ref()?;
                let (a, f) = w[level].as_ref()?;
                Some(ReplicateFits { vartheta: m.clone(), working_ipw: a.clone(), working_full: f.clone() })
            })
            .collect();
        let record = estimate_sigma(&reps, n)
            .and_then(|sigma| update_estimate(&main_fit.vartheta_hat, &wi.vartheta_hat, &wf.vartheta_hat, &sigma, n))
            .ok()
            .map(|u| ReplicateRecord {
                replicate,
                zzc: u.vartheta_hat,
                zzc_se: u.se_original,
                proposed: u.vartheta_bar,
                proposed_se: u.se_updated,
                bootstrap_used: u.n_replicates_used,
                fallback: u.fallback,
            });
        out.push(record);
    }
    Ok(out)
}

/// Runs every replicate of one scenario and summarizes it.
pub fn run_scenario(
    scenario: &Scenario,
    scenario_index: usize,
    opts: &StudyOptions,
    sharing: MultiplierSharing,
) -> Result<ScenarioReport> {
    if opts.bootstrap < 2 || opts.replicates == 0 {
        return Err(Error::Config("need at least one replicate and two bootstrap draws".into()));
    }
    let scenario = calibrated(scenario, opts.seed)?;
    scenario.validate()?;
    let outcomes: Vec<ReplicateOutcome> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&scenario, opts, replicate_seed(opts.seed, scenario_index, r), r, sharing))
        .collect::<Result<_>>()?;
    Ok(summarize(&scenario, opts, &outcomes))
}

/// Runs a whole study file.
pub fn run_study(cfg: &StudyConfig) -> Result<ReplicationReport> {
    cfg.validate()?;
    let opts = StudyOptions::from_config(cfg);
    let start = std::time::Instant::now();
    let scenarios = cfg
        .scenario
        .iter()
        .enumerate()
        .map(|(k, s)| run_scenario(s, k, &opts, MultiplierSharing::Shared))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationReport { options: opts, scenarios, wall_time_secs: start.elapsed().as_secs_f64() })
}

pub const L2_GRID_POINTS: usize = 1000;

/// Trapezoid-rule `L2[sigma, tau]` distance between the fitted cumulative
/// hazard and `truth` on a uniform grid.
pub fn cumhaz_l2_distance(fit: &FitResult, truth: impl Fn(f64) -> f64, sieve: &SieveConfig) -> Result<f64> {
    let (a, b) = (sieve.sigma(), sieve.tau());
    let h = (b - a) / (L2_GRID_POINTS - 1) as f64;
    let phi = fit.phi_hat.as_slice();
    let mut total = 0.0;
    for k in 0..L2_GRID_POINTS {
        let t = if k == L2_GRID_POINTS - 1 { b } else { a + k as f64 * h };
        let fitted: f64 = basis_values(t, sieve)?.iter().zip(phi).map(|(v, p)| v * p).sum();
        let diff = fitted - truth(t);
        let weight = if k == 0 || k == L2_GRID_POINTS - 1 { 0.5 } else { 1.0 };
        total += weight * diff * diff;
    }
    Ok((total * h).sqrt())
}
