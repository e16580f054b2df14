//! Monotone Bernstein-polynomial sieve for the cumulative baseline hazard.
//!
//! On `[sigma, tau]`, `Lambda(t) = sum_j phi_j B_j(t)` with
//! `0 <= phi_0 <= ... <= phi_m`. The optimizer works on unconstrained
//! `psi` with `phi_j = sum_{l <= j} exp(psi_l)`, so that
//! `Lambda(t) = sum_l exp(psi_l) * T_l(t)` where `T_l(t) = sum_{j >= l} B_j(t)`
//! are the basis tail sums. The tail sums depend only on `t` and are
//! precomputed by the likelihood.

use serde::{Deserialize, Serialize};

use crate::data::CohortDataset;
use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;

/// `exp` arguments in the reparameterization are capped here.
pub const EXP_CAP: f64 = 50.0;

/// Floor applied to coefficient increments before taking logs.
pub const INCREMENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveConfig {
    degree: usize,
    sigma: f64,
    tau: f64,
    coefficient_bound: f64,
}

impl SieveConfig {
    pub fn new(degree: usize, sigma: f64, tau: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("Bernstein degree must be >= 1".into()));
        }
        if !(sigma.is_finite() && tau.is_finite() && sigma > 0.0 && sigma < tau) {
            return Err(Error::InvalidArgument(format!(
                "sieve support requires 0 < sigma < tau < inf, got [{sigma}, {tau}]"
            )));
        }
        Ok(Self { degree, sigma, tau, coefficient_bound: f64::INFINITY })
    }

    /// Support taken from the smallest and largest finite positive interval
    /// endpoint in the data.
    pub fn from_dataset(data: &CohortDataset, degree: usize) -> Result<Self> {
        let (sigma, tau) = data.endpoint_range().ok_or_else(|| {
            Error::InvalidArgument("dataset needs at least two distinct finite positive endpoints".into())
        })?;
        Self::new(degree, sigma, tau)
    }

    /// Caps `sum_j |phi_j|` at `bound`; coefficient vectors exceeding it are
    /// rescaled onto the cap.
    pub fn with_coefficient_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument(format!("coefficient bound must be positive, got {bound}")));
        }
        self.coefficient_bound = bound;
        Ok(self)
    }

    /// Degree growing like `n^(1/4)`, inside the admissible `o(n^nu)` range.
    pub fn auto_degree(n: usize) -> usize {
        ((n as f64).powf(0.25).ceil() as usize).max(1)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coefficient_bound(&self) -> f64 {
        self.coefficient_bound
    }

    pub fn n_coefficients(&self) -> usize {
        self.degree + 1
    }

    fn scaled(&self, t: f64) -> Result<f64> {
        if !(t >= self.sigma && t <= self.tau) {
            return Err(Error::Domain { t, sigma: self.sigma, tau: self.tau });
        }
        Ok((t - self.sigma) / (self.tau - self.sigma))
    }

    /// Rescales `phi` onto the coefficient bound if it exceeds it.
    pub fn apply_bound(&self, phi: &MonotoneCoefficients) -> MonotoneCoefficients {
        let total: f64 = phi.0.iter().sum();
        if total <= self.coefficient_bound {
            return phi.clone();
        }
        let c = self.coefficient_bound / total;
        MonotoneCoefficients(phi.0.iter().map(|v| v * c).collect())
    }
}

/// Nondecreasing, nonnegative Bernstein coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCoefficients(Vec<f64>);

impl MonotoneCoefficients {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::InvalidArgument("need at least one coefficient".into()));
        }
        if phi.iter().any(|v| !v.is_finite()) || phi[0] < 0.0 {
            return Err(Error::InvalidArgument("coefficients must be finite and >= 0".into()));
        }
        if phi.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("coefficients must be nondecreasing".into()));
        }
        Ok(Self(phi))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Unconstrained reparameterization of [`MonotoneCoefficients`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedCoefficients(pub Vec<f64>);

impl UnconstrainedCoefficients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn binomial(m: usize, j: usize) -> f64 {
    let j = j.min(m - j);
    (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis polynomial `B_j(t, m, sigma, tau)`.
pub fn basis_eval(t: f64, j: usize, config: &SieveConfig) -> Result<f64> {
    let m = config.degree;
    if j > m {
        return Err(Error::InvalidArgument(format!("basis index {j} exceeds degree {m}")));
    }
    let s = config.scaled(t)?;
    Ok(binomial(m, j) * s.powi(j as i32) * (1.0 - s).powi((m - j) as i32))
}

/// All `m + 1` basis values at `t`.
pub fn basis_values(t: f64, config: &SieveConfig) -> Result<Vec<f64>> {
    (0..=config.degree).map(|j| basis_eval(t, j, config)).collect()
}

/// Tail sums `T_l(t) = sum_{j >= l} B_j(t)` for `l = 0..=m`.
pub fn basis_tail_sums(t: f64, config: &SieveConfig) -> Result<Vec<f64>> {
    let mut tails = basis_values(t, config)?;
    for l in (0..config.degree).rev() {
        tails[l] += tails[l + 1];
    }
    Ok(tails)
}

/// `Lambda(t)`, with `Lambda(0) = 0`.
pub fn cumhaz_eval(phi: &MonotoneCoefficients, t: f64, config: &SieveConfig) -> Result<f64> {
    if phi.0.len() != config.n_coefficients() {
        return Err(Error::InvalidArgument(format!(
            "expected {} coefficients, got {}",
            config.n_coefficients(),
            phi.0.len()
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let basis = basis_values(t, config)?;
    Ok(phi.0.iter().zip(&basis).map(|(p, b)| p * b).sum())
}

#[inline]
pub(crate) fn capped_exp(v: f64) -> f64 {
    v.min(EXP_CAP).exp()
}

/// `phi_j = sum_{l <= j} exp(psi_l)`.
pub fn to_monotone(psi: &UnconstrainedCoefficients) -> MonotoneCoefficients {
    let mut acc = 0.0;
    MonotoneCoefficients(
        psi.0
            .iter()
            .map(|&v| {
                acc += capped_exp(v);
                acc
            })
            .collect(),
    )
}

/// Inverse of [`to_monotone`]; increments (and `phi_0`) are floored at
/// [`INCREMENT_FLOOR`] so ties and zeros map to finite values.
pub fn from_monotone(phi: &MonotoneCoefficients) -> UnconstrainedCoefficients {
    let mut prev = 0.0;
    UnconstrainedCoefficients(
        phi.0
            .iter()
            .map(|&p| {
                let inc = (p - prev).max(INCREMENT_FLOOR);
                prev = p;
                inc.ln()
            })
            .collect(),
    )
}

/// Coefficient map state shared by the likelihood: `exp(psi_l)`, the bound
/// rescaling factor, and the factor's derivative when the bound is active.
#[derive(Debug, Clone)]
pub(crate) struct CoefficientMap {
    pub exp_psi: Vec<f64>,
    /// `d exp(psi_l) / d psi_l`; zero where the cap is active.
    pub d_exp_psi: Vec<f64>,
    pub scale: f64,
    pub d_scale: Option<Vec<f64>>,
}

impl CoefficientMap {
    pub fn new(psi: &[f64], config: &SieveConfig) -> Self {
        let exp_psi: Vec<f64> = psi.iter().map(|&v| capped_exp(v)).collect();
        let d_exp_psi = psi
            .iter()
            .zip(&exp_psi)
            .map(|(&v, &e)| if v > EXP_CAP { 0.0 } else { e })
            .collect::<Vec<_>>();
        let m1 = psi.len();
        // sum_j phi_j = sum_l exp(psi_l) * (m + 1 - l)
        let total: f64 = exp_psi.iter().enumerate().map(|(l, e)| e * (m1 - l) as f64).sum();
        let bound = config.coefficient_bound();
        if total > bound {
            let scale = bound / total;
            let d_scale = d_exp_psi
                .iter()
                .enumerate()
                .map(|(l, de)| -bound / (total * total) * de * (m1 - l) as f64)
                .collect();
            Self { exp_psi, d_exp_psi, scale, d_scale: Some(d_scale) }
        } else {
            Self { exp_psi, d_exp_psi, scale: 1.0, d_scale: None }
        }
    }

    /// `Lambda` from precomputed tail sums.
    #[inline]
    pub fn cumhaz(&self, tails: &[f64]) -> f64 {
        self.scale * self.raw(tails)
    }

    #[inline]
    fn raw(&self, tails: &[f64]) -> f64 {
        self.exp_psi.iter().zip(tails).map(|(e, t)| e * t).sum()
    }

    /// Accumulates `coef * dLambda/dpsi` into `out`.
    #[inline]
    pub fn add_gradient(&self, tails: &[f64], coef: f64, out: &mut [f64]) {
        for ((o, de), t) in out.iter_mut().zip(&self.d_exp_psi).zip(tails) {
            *o += coef * self.scale * de * t;
        }
        if let Some(ds) = &self.d_scale {
            let raw = self.raw(tails);
            for (o, d) in out.iter_mut().zip(ds) {
                *o += coef * raw * d;
            }
        }
    }

    pub fn phi(&self) -> MonotoneCoefficients {
        let mut acc = 0.0;
        MonotoneCoefficients(
            self.exp_psi
                .iter()
                .map(|e| {
                    acc += e;
                    acc * self.scale
                })
                .collect(),
        )
    }
}

/// `dLambda(t) / dpsi`, component `l` equal to `exp(psi_l) * T_l(t)` when the
/// coefficient bound is inactive.
pub fn cumhaz_gradient(psi: &UnconstrainedCoefficients, t: f64, config: &SieveConfig) -> Result<Vec<f64>> {
    if psi.len() != config.n_coefficients() {
        return Err(Error::InvalidArgument(format!(
            "expected {} coefficients, got {}",
            config.n_coefficients(),
            psi.len()
        )));
    }
    let mut out = vec![0.0; psi.len()];
    if t == 0.0 {
        return Ok(out);
    }
    let tails = basis_tail_sums(t, config)?;
    CoefficientMap::new(&psi.0, config).add_gradient(&tails, 1.0, &mut out);
    Ok(out)
}

/// `Lambda(t)` directly from `psi`, honouring the coefficient bound.
pub fn cumhaz_from_psi(psi: &UnconstrainedCoefficients, t: f64, config: &SieveConfig) -> Result<f64> {
    cumhaz_eval(&config.apply_bound(&to_monotone(psi)), t, config)
}
