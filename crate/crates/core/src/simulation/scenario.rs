use serde::{Deserialize, Serialize};

use crate::data::{CovariateNames, SamplingDesign};
use crate::error::{Error, Result};
use crate::estimator::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSetup {
    /// `X ~ N(0, 1)`, no `Z`.
    XOnly,
    /// `(X, Z)` bivariate normal with unit variances and correlation 0.2.
    XAndZ,
}

/// Auxiliary-noise standard deviations: a single value or a list, each
/// giving one working model on the same cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseLevels {
    One(f64),
    Many(Vec<f64>),
}

impl NoiseLevels {
    pub fn values(&self) -> Vec<f64> {
        match self {
            NoiseLevels::One(v) => vec![*v],
            NoiseLevels::Many(v) => v.clone(),
        }
    }
}

pub const COVARIATE_CORRELATION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub n: usize,
    pub covariates: CovariateSetup,
    pub beta: f64,
    pub gamma: f64,
    pub sigma_e: NoiseLevels,
    /// Target case rate used to calibrate `end_of_study`.
    pub p_c: f64,
    pub q_s: f64,
    pub q_c: f64,
    pub n_t: usize,
    pub attendance: f64,
    /// Exam jitter half-width as a fraction of the scheduled spacing.
    pub jitter_fraction: f64,
    pub end_of_study: Option<f64>,
    pub degree: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 1000,
            covariates: CovariateSetup::XOnly,
            beta: 0.3,
            gamma: 0.5,
            sigma_e: NoiseLevels::One(0.30),
            p_c: 0.2,
            q_s: 0.2,
            q_c: 1.0,
            n_t: 12,
            attendance: 0.8,
            jitter_fraction: 1.0 / 3.0,
            end_of_study: None,
            degree: 3,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        for (name, p) in [("p_c", self.p_c), ("q_s", self.q_s), ("q_c", self.q_c), ("attendance", self.attendance)] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {p}"));
            }
        }
        if self.n_t == 0 {
            return bad("n_t must be at least 1".into());
        }
        if !(self.jitter_fraction >= 0.0 && self.jitter_fraction < 0.5) {
            return bad(format!("jitter_fraction must lie in [0, 0.5), got {}", self.jitter_fraction));
        }
        let sigmas = self.sigma_e.values();
        if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma_e must be one or more finite nonnegative values".into());
        }
        if let Some(u) = self.end_of_study {
            if !(u > 0.0 && u.is_finite()) {
                return bad(format!("end_of_study must be positive, got {u}"));
            }
        }
        if !(self.beta.is_finite() && self.gamma.is_finite()) {
            return bad("regression coefficients must be finite".into());
        }
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        Ok(())
    }

    pub fn design(&self) -> Result<SamplingDesign> {
        SamplingDesign::new(self.q_s, self.q_c)
    }

    pub fn has_z(&self) -> bool {
        self.covariates == CovariateSetup::XAndZ
    }

    /// True regression coefficients in main-model order (`beta`, then `gamma`).
    pub fn truth(&self) -> Vec<f64> {
        if self.has_z() {
            vec![self.beta, self.gamma]
        } else {
            vec![self.beta]
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        if self.has_z() {
            vec!["beta".into(), "gamma".into()]
        } else {
            vec!["beta".into()]
        }
    }

    pub fn covariate_names(&self) -> CovariateNames {
        CovariateNames {
            z: if self.has_z() { vec!["z".into()] } else { Vec::new() },
            xstar: vec!["xstar".into()],
            x: vec!["x".into()],
        }
    }

    /// `corr(X, X + sigma e)` for each noise level.
    pub fn rhos(&self) -> Vec<f64> {
        self.sigma_e.values().iter().map(|s| 1.0 / (1.0 + s * s).sqrt()).collect()
    }

    pub fn scheduled_spacing(&self, end_of_study: f64) -> f64 {
        end_of_study / (self.n_t as f64 + 1.0)
    }
}

/// A study file: run settings plus one or more scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    pub scenario: Vec<Scenario>,
}

fn default_replicates() -> usize {
    200
}

fn default_bootstrap() -> usize {
    100
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.is_empty() {
            return Err(Error::Config("a study needs at least one [[scenario]]".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.bootstrap < 2 {
            return Err(Error::Config("bootstrap must be at least 2".into()));
        }
        if let Some(fit) = &self.fit {
            fit.validate()?;
        }
        self.scenario.iter().try_for_each(Scenario::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_and_defaults() {
        let cfg = StudyConfig::from_toml(
            r#"
            replicates = 5
            seed = 7
            [[scenario]]
            sigma_e = [0.30, 0.86, 1.70]
            p_c = 0.3
            q_c = 0.5
            [[scenario]]
            covariates = "x_and_z"
            sigma_e = 0.3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.replicates, 5);
        assert_eq!(cfg.bootstrap, 100);
        assert_eq!(cfg.scenario[0].sigma_e.values(), vec![0.30, 0.86, 1.70]);
        assert_eq!(cfg.scenario[0].n, 1000);
        assert_eq!(cfg.scenario[1].truth(), vec![0.3, 0.5]);
        assert_eq!(cfg.scenario[1].covariate_names().z, vec!["z".to_string()]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(StudyConfig::from_toml("[[scenario]]\nq_s = 0.0\n").is_err());
        assert!(StudyConfig::from_toml("[[scenario]]\nbogus = 1\n").is_err());
        assert!(StudyConfig::from_toml("replicates = 3\n").is_err());
        assert!(StudyConfig::from_toml("[[scenario]]\njitter_fraction = 0.5\n").is_err());
    }

    #[test]
    fn rho_of_paper_noise_levels() {
        let s = Scenario { sigma_e: NoiseLevels::Many(vec![0.30, 0.86, 1.70]), ..Scenario::default() };
        let r = s.rhos();
        // 1/sqrt(1.09) from a 50-digit evaluation
        assert!((r[0] - 0.95782628522115139263832605711450).abs() < 1e-15);
        assert!((r[1] - 0.75).abs() < 0.01);
        assert!((r[2] - 0.50).abs() < 0.01);
    }
}
