//! Sieve maximum (weighted) likelihood fits of the main and working models.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::CohortDataset;
use crate::error::{Error, Result};
use crate::likelihood::{CoxParams, LikelihoodProblem, ModelSpec};
use crate::optim::{minimize, BfgsOptions};
use crate::rng::{stream, tag};
use crate::sieve::{from_monotone, CoefficientMap, MonotoneCoefficients, SieveConfig, UnconstrainedCoefficients};

const RANK_TOLERANCE: f64 = 1e-10;
const RESTART_JITTER_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Tolerance on the max-norm of the log-likelihood gradient.
    pub gradient_tolerance: f64,
    pub relative_f_tolerance: f64,
    /// Number of starting points; extra starts jitter the sieve coefficients.
    pub restarts: usize,
    /// Seed for the jittered restarts.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-7,
            relative_f_tolerance: 1e-10,
            restarts: 1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) || !(self.relative_f_tolerance > 0.0) {
            return Err(Error::Config("fit tolerances must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }

    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            relative_f_tolerance: self.relative_f_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub vartheta_hat: Vec<f64>,
    pub phi_hat: MonotoneCoefficients,
    pub psi_hat: UnconstrainedCoefficients,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient in `(vartheta, psi)`.
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn params(&self) -> CoxParams {
        CoxParams { vartheta: self.vartheta_hat.clone(), psi: self.psi_hat.clone() }
    }
}

/// A likelihood problem bound to a fit configuration, reusable across many
/// weight vectors (bootstrap refits).
#[derive(Debug, Clone)]
pub struct Fitter {
    problem: LikelihoodProblem,
    config: FitConfig,
}

impl Fitter {
    pub fn new(data: &CohortDataset, spec: ModelSpec, sieve: &SieveConfig, config: FitConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { problem: LikelihoodProblem::new(data, spec, sieve)?, config })
    }

    pub fn problem(&self) -> &LikelihoodProblem {
        &self.problem
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    /// Fit from the default starting point (plus jittered restarts).
    pub fn fit(&self, weights: &[f64]) -> Result<FitResult> {
        self.check_identifiable(weights)?;
        let init = self.initial_point(weights);
        let mut best = self.run(weights, &init)?;
        if self.config.restarts > 1 {
            let d = self.problem.dim();
            let normal = Normal::new(0.0, RESTART_JITTER_SD).expect("valid sd");
            for k in 1..self.config.restarts {
                let mut rng = stream(self.config.seed, &[tag::RESTART, k as u64]);
                let mut start = init.clone();
                for v in &mut start[d..] {
                    *v += normal.sample(&mut rng);
                }
                // an infeasible jittered start just loses
                if let Ok(candidate) = self.run(weights, &start) {
                    if candidate.loglik > best.loglik {
                        best = candidate;
                    }
                }
            }
        }
        Ok(best)
    }

    /// Fit starting from `start = (vartheta, psi)`, falling back to the default
    /// start if `start` has zero likelihood.
    pub fn fit_from(&self, weights: &[f64], start: &[f64]) -> Result<FitResult> {
        self.check_identifiable(weights)?;
        match self.run(weights, start) {
            Err(Error::Initialization(_)) => self.run(weights, &self.initial_point(weights)),
            other => other,
        }
    }

    /// `vartheta = 0` and `phi` linear from `0.1 L` to `L`, where
    /// `L = -log(fraction right-censored)` among positively weighted rows.
    pub fn initial_point(&self, weights: &[f64]) -> Vec<f64> {
        let mut total = 0usize;
        let mut censored = 0usize;
        for (row, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                total += 1;
                if !self.problem.is_case(row) {
                    censored += 1;
                }
            }
        }
        let frac = censored as f64 / total.max(1) as f64;
        let level = (-frac.ln()).clamp(0.1, 10.0);
        let m = self.problem.sieve().degree();
        let phi: Vec<f64> = (0..=m).map(|j| level * (0.1 + 0.9 * j as f64 / m as f64)).collect();
        let psi = from_monotone(&MonotoneCoefficients::new(phi).expect("increasing by construction"));
        let mut start = vec![0.0; self.problem.dim()];
        start.extend(psi.0);
        start
    }

    fn check_identifiable(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.problem.n() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights, got {}",
                self.problem.n(),
                weights.len()
            )));
        }
        let rows: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        let cases = rows.iter().filter(|&&i| self.problem.is_case(i)).count();
        if cases == 0 || cases == rows.len() {
            return Err(Error::Identifiability(
                "need at least one positively weighted case and one non-case".into(),
            ));
        }
        let d = self.problem.dim();
        if d == 0 {
            return Ok(());
        }
        let mut cov = Vec::with_capacity(rows.len() * d);
        for &i in &rows {
            let x = self.problem.covariate_row(i).ok_or(Error::MissingCovariates { row: i })?;
            cov.extend_from_slice(x);
        }
        let x = DMatrix::from_row_slice(rows.len(), d, &cov);
        let means = x.row_mean();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= &means;
        }
        let scatter = centered.transpose() * &centered;
        let eig = scatter.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if !(max > 0.0) || min <= RANK_TOLERANCE * max {
            return Err(Error::Identifiability(
                "covariates of positively weighted rows are not of full column rank".into(),
            ));
        }
        Ok(())
    }

    fn run(&self, weights: &[f64], start: &[f64]) -> Result<FitResult> {
        if start.len() != self.problem.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} starting values, got {}",
                self.problem.n_params(),
                start.len()
            )));
        }
        // argument errors surface here rather than inside the objective
        self.problem.evaluate(start, weights, None)?;
        let objective = |p: &[f64], g: &mut [f64]| match self.problem.evaluate(p, weights, Some(g)) {
            Ok(e) if e.value.is_finite() => {
                g.iter_mut().for_each(|v| *v = -*v);
                -e.value
            }
            _ => f64::INFINITY,
        };
        let out = minimize(objective, start, &self.config.bfgs())?;
        let d = self.problem.dim();
        let psi = UnconstrainedCoefficients(out.x[d..].to_vec());
        let phi = CoefficientMap::new(psi.as_slice(), self.problem.sieve()).phi();
        Ok(FitResult {
            spec: self.problem.spec(),
            vartheta_hat: out.x[..d].to_vec(),
            phi_hat: phi,
            psi_hat: psi,
            loglik: -out.value,
            converged: out.converged,
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
        })
    }
}

/// Maximizes `sum_i w_i l_i` over the sieve space.
pub fn fit(
    data: &CohortDataset,
    weights: &[f64],
    spec: ModelSpec,
    sieve: &SieveConfig,
    config: &FitConfig,
) -> Result<FitResult> {
    Fitter::new(data, spec, sieve, *config)?.fit(weights)
}

/// IPW fit of the main model on the case-cohort sample.
pub fn fit_main_ipw(data: &CohortDataset, sieve: &SieveConfig, config: &FitConfig) -> Result<FitResult> {
    fit(data, &data.ipw_weights(), ModelSpec::Main, sieve, config)
}

/// The working model: auxiliary variables with `z`, or `z` alone when the
/// data carry no auxiliary columns.
pub fn working_spec(data: &CohortDataset) -> ModelSpec {
    if data.covariate_names().xstar.is_empty() {
        ModelSpec::WorkingZ
    } else {
        ModelSpec::WorkingAux
    }
}

/// IPW fit of the working model on the case-cohort sample.
pub fn fit_working_ipw(data: &CohortDataset, sieve: &SieveConfig, config: &FitConfig) -> Result<FitResult> {
    fit(data, &data.ipw_weights(), working_spec(data), sieve, config)
}

/// Unweighted fit of the working model on the full cohort.
pub fn fit_working_full(data: &CohortDataset, sieve: &SieveConfig, config: &FitConfig) -> Result<FitResult> {
    fit(data, &data.unit_weights(), working_spec(data), sieve, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateNames, IntervalObservation, SamplingDesign};

    fn toy(n: usize) -> CohortDataset {
        // deterministic small cohort with a positive covariate effect
        let subjects = (0..n)
            .map(|i| {
                let x = ((i * 7919) % 97) as f64 / 48.5 - 1.0;
                let z = ((i * 104729) % 89) as f64 / 44.5 - 1.0;
                let base = 0.3 + 2.5 * (((i * 31) % 53) as f64 / 53.0);
                let t = base * (-0.6 * x).exp();
                let (l, r) = if t < 1.8 { ((t - 0.3).max(0.0), t + 0.2) } else { (1.9, f64::INFINITY) };
                IntervalObservation::new(i.to_string(), l, r, vec![z], vec![x + 0.1 * z], Some(vec![x]), true, false)
                    .unwrap()
            })
            .collect();
        CohortDataset::new(subjects, SamplingDesign::new(1.0, 1.0).unwrap(), CovariateNames::generic(1, 1, 1))
            .unwrap()
    }

    #[test]
    fn converges_and_reports_consistent_loglik() {
        let data = toy(300);
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let res = fit_main_ipw(&data, &sieve, &FitConfig::default()).unwrap();
        assert!(res.converged, "gradient {}", res.gradient_norm);
        assert!(res.gradient_norm <= 1e-7);
        let eval = crate::likelihood::weighted_loglik(&res.params(), &data, &data.ipw_weights(), ModelSpec::Main, &sieve)
            .unwrap();
        assert!((eval.value - res.loglik).abs() <= 1e-12 * res.loglik.abs().max(1.0));
        assert!(res.vartheta_hat[0] > 0.0);
        assert!(res.phi_hat.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn unit_design_matches_unit_weights() {
        let data = toy(200);
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let cfg = FitConfig::default();
        let a = fit_main_ipw(&data, &sieve, &cfg).unwrap();
        let b = fit(&data, &data.unit_weights(), ModelSpec::Main, &sieve, &cfg).unwrap();
        for (x, y) in a.vartheta_hat.iter().zip(&b.vartheta_hat) {
            assert!((x - y).abs() < 1e-10);
        }
        let w = fit_working_ipw(&data, &sieve, &cfg).unwrap();
        let f = fit_working_full(&data, &sieve, &cfg).unwrap();
        for (x, y) in w.vartheta_hat.iter().zip(&f.vartheta_hat) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let base = toy(100);
        let subjects = base
            .subjects()
            .iter()
            .map(|o| {
                IntervalObservation::new(o.id(), o.left(), o.right(), vec![1.0], vec![0.0], Some(vec![2.0]), true, false)
                    .unwrap()
            })
            .collect();
        let data = CohortDataset::new(subjects, *base.design(), base.covariate_names().clone()).unwrap();
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let err = fit_main_ipw(&data, &sieve, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Identifiability(_)));
    }

    #[test]
    fn no_cases_is_reported() {
        let base = toy(50);
        let subjects = base
            .subjects()
            .iter()
            .map(|o| {
                IntervalObservation::new(o.id(), 1.0, f64::INFINITY, o.z().to_vec(), o.xstar().to_vec(), o.x().map(|x| x.to_vec()), true, false)
                    .unwrap()
            })
            .collect();
        let data = CohortDataset::new(subjects, *base.design(), base.covariate_names().clone()).unwrap();
        let sieve = SieveConfig::new(3, 0.5, 2.0).unwrap();
        assert!(matches!(fit_main_ipw(&data, &sieve, &FitConfig::default()), Err(Error::Identifiability(_))));
    }

    #[test]
    fn iteration_cap_is_not_an_error() {
        let data = toy(200);
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let cfg = FitConfig { max_iterations: 2, ..FitConfig::default() };
        let res = fit_main_ipw(&data, &sieve, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn restarts_never_lose_to_single_start() {
        let data = toy(200);
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let one = fit_main_ipw(&data, &sieve, &FitConfig::default()).unwrap();
        let many = fit_main_ipw(&data, &sieve, &FitConfig { restarts: 4, seed: 9, ..FitConfig::default() }).unwrap();
        assert!(many.loglik >= one.loglik);
        assert!((many.vartheta_hat[0] - one.vartheta_hat[0]).abs() < 1e-6);
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let data = toy(200);
        let sieve = SieveConfig::from_dataset(&data, 3).unwrap();
        let fitter = Fitter::new(&data, ModelSpec::Main, &sieve, FitConfig::default()).unwrap();
        let w = data.unit_weights();
        let cold = fitter.fit(&w).unwrap();
        let warm = fitter.fit_from(&w, &cold.params().to_vec()).unwrap();
        assert!(warm.iterations <= 1);
        assert!((warm.vartheta_hat[0] - cold.vartheta_hat[0]).abs() < 1e-8);
    }
}
