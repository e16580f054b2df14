//! Update estimator and the multiplier bootstrap behind it.
//!
//! The IPW estimate is corrected by the difference between the weighted and
//! full-cohort working-model estimates, using the joint covariance of
//! `(sqrt(n) vartheta_hat, sqrt(n)(vartheta*_hat - vartheta*_bar))` estimated by refitting
//! all three models under shared Exp(1) multiplier weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CohortDataset;
use crate::error::{Error, Result};
use crate::estimator::{working_spec, FitConfig, FitResult, Fitter};
use crate::likelihood::ModelSpec;
use crate::rng::{stream, tag};
use crate::sieve::SieveConfig;

/// Relative eigenvalue cutoff of the pseudo-inverse of `Sigma22`.
pub const PINV_CUTOFF: f64 = 1e-10;
/// `Sigma22` whose largest eigenvalue is below this (relative to the scale of
/// `Sigma11`) is treated as zero and the update falls back to the IPW estimate.
const ZERO_BLOCK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 500, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("the bootstrap needs at least 2 replicates".into()));
        }
        Ok(())
    }
}

/// `n` i.i.d. Exp(1) multipliers.
pub fn draw_bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| Exp1.sample(rng)).collect()
}

/// Multipliers of replicate `b`, from their own stream so results do not
/// depend on scheduling.
pub fn replicate_weights(seed: u64, b: usize, n: usize) -> Vec<f64> {
    draw_bootstrap_weights(n, &mut stream(seed, &[tag::BOOTSTRAP, b as u64]))
}

/// Regression coefficients of the three refits in one bootstrap replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFits {
    pub vartheta: Vec<f64>,
    pub working_ipw: Vec<f64>,
    pub working_full: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapRun {
    /// Successful replicates in index order.
    pub replicates: Vec<ReplicateFits>,
    /// Indices of replicates dropped because a refit failed.
    pub failed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlocks {
    pub sigma11: Vec<Vec<f64>>,
    pub sigma12: Vec<Vec<f64>>,
    pub sigma22: Vec<Vec<f64>>,
    pub n_replicates_used: usize,
}

impl CovarianceBlocks {
    pub fn sigma21(&self) -> Vec<Vec<f64>> {
        let d_star = self.sigma22.len();
        (0..d_star).map(|j| self.sigma12.iter().map(|row| row[j]).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateResult {
    pub vartheta_hat: Vec<f64>,
    pub vartheta_bar: Vec<f64>,
    /// Estimated asymptotic covariance of `sqrt(n)(vartheta_bar - vartheta)`.
    pub psi_hat: Vec<Vec<f64>>,
    pub se_original: Vec<f64>,
    pub se_updated: Vec<f64>,
    /// Per-coordinate variance ratio `Sigma11 / Psi`.
    pub gain: Vec<f64>,
    /// Set when `Sigma22` was numerically zero and no update was applied.
    pub fallback: bool,
    pub n_replicates_used: usize,
}

fn to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Sample covariance (denominator `B - 1`) of the stacked vectors
/// `(sqrt(n) vartheta_b, sqrt(n)(working_ipw_b - working_full_b))`, centered at
/// their replicate means.
pub fn estimate_sigma(replicates: &[ReplicateFits], n: usize) -> Result<CovarianceBlocks> {
    let b = replicates.len();
    if b < 2 {
        return Err(Error::BootstrapFailure(format!("{b} successful replicates, need at least 2")));
    }
    let d = replicates[0].vartheta.len();
    let d_star = replicates[0].working_ipw.len();
    let k = d + d_star;
    let scale = (n as f64).sqrt();
    let mut stacked = DMatrix::zeros(b, k);
    for (r, rep) in replicates.iter().enumerate() {
        if rep.vartheta.len() != d || rep.working_ipw.len() != d_star || rep.working_full.len() != d_star {
            return Err(Error::InvalidArgument(format!("replicate {r} has inconsistent dimensions")));
        }
        for j in 0..d {
            stacked[(r, j)] = scale * rep.vartheta[j];
        }
        for j in 0..d_star {
            stacked[(r, d + j)] = scale * (rep.working_ipw[j] - rep.working_full[j]);
        }
    }
    let means = stacked.row_mean();
    for mut row in stacked.row_iter_mut() {
        row -= &means;
    }
    let mut cov = stacked.transpose() * &stacked / (b as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    let rows = to_rows(&cov);
    Ok(CovarianceBlocks {
        sigma11: rows[..d].iter().map(|r| r[..d].to_vec()).collect(),
        sigma12: rows[..d].iter().map(|r| r[d..].to_vec()).collect(),
        sigma22: rows[d..].iter().map(|r| r[d..].to_vec()).collect(),
        n_replicates_used: b,
    })
}

/// Symmetric pseudo-inverse with a relative eigenvalue cutoff. Returns
/// `None` when the matrix is numerically zero at scale `reference`.
fn pseudo_inverse(m: &DMatrix<f64>, reference: f64) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return None;
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max <= ZERO_BLOCK * reference.max(1.0) {
        return None;
    }
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| if v > PINV_CUTOFF * max { 1.0 / v } else { 0.0 }),
    );
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&inv) * q.transpose())
}

/// `vartheta_bar = vartheta_hat - Sigma12 Sigma22^+ (working_ipw - working_full)` and
/// `Psi = Sigma11 - Sigma12 Sigma22^+ Sigma21`.
pub fn update_estimate(
    vartheta_hat: &[f64],
    working_ipw: &[f64],
    working_full: &[f64],
    sigma: &CovarianceBlocks,
    n: usize,
) -> Result<UpdateResult> {
    let d = vartheta_hat.len();
    let d_star = working_ipw.len();
    if sigma.sigma11.len() != d || sigma.sigma22.len() != d_star || working_full.len() != d_star {
        return Err(Error::InvalidArgument("covariance blocks do not match the estimates".into()));
    }
    let s11 = to_matrix(&sigma.sigma11, d, d);
    let s12 = to_matrix(&sigma.sigma12, d, d_star);
    let s22 = to_matrix(&sigma.sigma22, d_star, d_star);
    let reference = s11.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let (vartheta_bar, psi, fallback) = match pseudo_inverse(&s22, reference) {
        None => (vartheta_hat.to_vec(), s11.clone(), true),
        Some(pinv) => {
            let coef = &s12 * pinv;
            let contrast = DVector::from_iterator(d_star, working_ipw.iter().zip(working_full).map(|(a, b)| a - b));
            let shift = &coef * contrast;
            let bar = vartheta_hat.iter().zip(shift.iter()).map(|(a, s)| a - s).collect();
            let psi = &s11 - &coef * s12.transpose();
            ((bar), (&psi + psi.transpose()) * 0.5, false)
        }
    };

    let nf = n as f64;
    let se_original: Vec<f64> = s11.diagonal().iter().map(|v| (v.max(0.0) / nf).sqrt()).collect();
    let se_updated: Vec<f64> = psi.diagonal().iter().map(|v| (v.max(0.0) / nf).sqrt()).collect();
    let gain = s11.diagonal().iter().zip(psi.diagonal().iter()).map(|(a, b)| a / b).collect();
    Ok(UpdateResult {
        vartheta_hat: vartheta_hat.to_vec(),
        vartheta_bar,
        psi_hat: to_rows(&psi),
        se_original,
        se_updated,
        gain,
        fallback,
        n_replicates_used: sigma.n_replicates_used,
    })
}

/// The three point fits of one cohort plus everything needed to refit them
/// under bootstrap weights.
#[derive(Debug, Clone)]
pub struct UpdateAnalysis {
    n: usize,
    main: Fitter,
    working: Fitter,
    ipw: Vec<f64>,
    pub main_fit: FitResult,
    pub working_ipw_fit: FitResult,
    pub working_full_fit: FitResult,
}

impl UpdateAnalysis {
    /// Fits the main model and the working model (IPW and full cohort).
    pub fn new(data: &CohortDataset, sieve: &SieveConfig, working_sieve: &SieveConfig, config: &FitConfig) -> Result<Self> {
        Self::with_working_spec(data, sieve, working_sieve, working_spec(data), config)
    }

    /// As [`UpdateAnalysis::new`] with an explicit working model.
    pub fn with_working_spec(
        data: &CohortDataset,
        sieve: &SieveConfig,
        working_sieve: &SieveConfig,
        working_spec: ModelSpec,
        config: &FitConfig,
    ) -> Result<Self> {
        if working_spec == ModelSpec::Main {
            return Err(Error::InvalidArgument("the working model cannot use the expensive covariates".into()));
        }
        let main = Fitter::new(data, ModelSpec::Main, sieve, *config)?;
        let working = Fitter::new(data, working_spec, working_sieve, *config)?;
        Self::from_fitters(main, working, data.ipw_weights())
    }

    /// Builds the analysis from prepared fitters (the main and the working
    /// model) and the IPW weights.
    pub fn from_fitters(main: Fitter, working: Fitter, ipw: Vec<f64>) -> Result<Self> {
        let n = ipw.len();
        let main_fit = main.fit(&ipw)?;
        let working_ipw_fit = working.fit(&ipw)?;
        let working_full_fit = working.fit(&vec![1.0; n])?;
        Ok(Self { n, main, working, ipw, main_fit, working_ipw_fit, working_full_fit })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ipw_weights(&self) -> &[f64] {
        &self.ipw
    }

    /// Refits with multipliers `u_main` on the two weighted fits and
    /// `u_working` on the full-cohort working fit. The bootstrap always
    /// passes the same vector for both.
    pub fn refit(&self, u_main: &[f64], u_working: &[f64]) -> Result<ReplicateFits> {
        let main_w: Vec<f64> = u_main.iter().zip(&self.ipw).map(|(u, w)| u * w).collect();
        let main = self.main.fit_from(&main_w, &self.main_fit.params().to_vec())?;
        let working_ipw = self.working.fit_from(&main_w, &self.working_ipw_fit.params().to_vec())?;
        let working_full = self.working.fit_from(u_working, &self.working_full_fit.params().to_vec())?;
        for (label, fit) in [("main", &main), ("working IPW", &working_ipw), ("working full", &working_full)] {
            if !fit.converged {
                return Err(Error::BootstrapFailure(format!(
                    "{label} refit did not converge (gradient {:.3e})",
                    fit.gradient_norm
                )));
            }
        }
        Ok(ReplicateFits {
            vartheta: main.vartheta_hat,
            working_ipw: working_ipw.vartheta_hat,
            working_full: working_full.vartheta_hat,
        })
    }

    pub fn bootstrap_replicate(&self, u: &[f64]) -> Result<ReplicateFits> {
        self.refit(u, u)
    }

    pub fn run_bootstrap(&self, config: &BootstrapConfig) -> Result<BootstrapRun> {
        self.run_bootstrap_with(config, |b, analysis| {
            analysis.bootstrap_replicate(&replicate_weights(config.seed, b, analysis.n))
        })
    }

    /// Runs replicates `0..B` in parallel with a custom refit; replicates
    /// whose refit fails are dropped and listed.
    pub fn run_bootstrap_with<F>(&self, config: &BootstrapConfig, refit: F) -> Result<BootstrapRun>
    where
        F: Fn(usize, &Self) -> Result<ReplicateFits> + Sync,
    {
        config.validate()?;
        let outcomes: Vec<Result<ReplicateFits>> =
            (0..config.replicates).into_par_iter().map(|b| refit(b, self)).collect();
        let mut run = BootstrapRun { replicates: Vec::new(), failed: Vec::new() };
        for (b, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(rep) => run.replicates.push(rep),
                Err(_) => run.failed.push(b),
            }
        }
        Ok(run)
    }

    /// Bootstrap, covariance estimate and update in one call.
    pub fn analyze(&self, config: &BootstrapConfig) -> Result<(UpdateResult, BootstrapRun)> {
        let run = self.run_bootstrap(config)?;
        let result = self.update_from(&run)?;
        Ok((result, run))
    }

    pub fn update_from(&self, run: &BootstrapRun) -> Result<UpdateResult> {
        let sigma = estimate_sigma(&run.replicates, self.n)?;
        update_estimate(
            &self.main_fit.vartheta_hat,
            &self.working_ipw_fit.vartheta_hat,
            &self.working_full_fit.vartheta_hat,
            &sigma,
            self.n,
        )
    }
}
