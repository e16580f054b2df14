use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Open01, StandardNormal, Uniform};

use super::scenario::{Scenario, COVARIATE_CORRELATION};
use crate::data::{reduce_exam_history, CohortDataset, IntervalObservation};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Scale of the true cumulative baseline hazard `Lambda0(t) = 0.2 t^2`.
pub const BASELINE_SCALE: f64 = 0.2;

pub fn true_cumhaz(t: f64) -> f64 {
    BASELINE_SCALE * t * t
}

/// Inverse of `P(T > t) = exp(-0.2 t^2 e^eta)` at survival probability `u`.
pub fn failure_time_from_uniform(u: f64, eta: f64) -> f64 {
    (-u.ln() / (BASELINE_SCALE * eta.exp())).sqrt()
}

pub fn generate_failure_time<R: Rng + ?Sized>(eta: f64, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    failure_time_from_uniform(u, eta)
}

/// Examination process: `n_t` scheduled visits at `j u / (n_t + 1)`, each
/// attended with probability `attendance` and jittered uniformly within
/// `+- jitter_fraction` of the spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExamProcess {
    pub end_of_study: f64,
    pub n_t: usize,
    pub attendance: f64,
    pub jitter_fraction: f64,
}

impl ExamProcess {
    pub fn from_scenario(scenario: &Scenario, end_of_study: f64) -> Self {
        Self {
            end_of_study,
            n_t: scenario.n_t,
            attendance: scenario.attendance,
            jitter_fraction: scenario.jitter_fraction,
        }
    }

    fn spacing(&self) -> f64 {
        self.end_of_study / (self.n_t as f64 + 1.0)
    }
}

/// Attended visits in units of the scheduled spacing (`j + jitter`);
/// regenerated until at least one visit is attended.
fn attended_positions<R: Rng + ?Sized>(process: &ExamProcess, rng: &mut R) -> Vec<f64> {
    let attend = Bernoulli::new(process.attendance).expect("attendance validated");
    let half = process.jitter_fraction;
    loop {
        let mut out = Vec::with_capacity(process.n_t);
        for j in 1..=process.n_t {
            let present = attend.sample(rng);
            let jitter = if half > 0.0 { rng.sample(Uniform::new(-half, half).expect("positive width")) } else { 0.0 };
            if present {
                out.push(j as f64 + jitter);
            }
        }
        if !out.is_empty() {
            return out;
        }
    }
}

pub fn generate_exam_schedule<R: Rng + ?Sized>(process: &ExamProcess, rng: &mut R) -> Vec<f64> {
    let spacing = process.spacing();
    let times: Vec<f64> = attended_positions(process, rng).into_iter().map(|p| p * spacing).collect();
    assert!(
        times[0] > 0.0 && times.windows(2).all(|w| w[0] < w[1]),
        "jitter below half the spacing keeps visits positive and ordered"
    );
    times
}

/// Draws `(x, z)`; `z` is empty in the X-only setup.
fn draw_covariates<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> (f64, Option<f64>) {
    let x: f64 = StandardNormal.sample(rng);
    if scenario.has_z() {
        let w: f64 = StandardNormal.sample(rng);
        let r = COVARIATE_CORRELATION;
        (x, Some(r * x + (1.0 - r * r).sqrt() * w))
    } else {
        (x, None)
    }
}

fn reduce(times: &[f64], t: f64) -> Result<(f64, f64)> {
    let k = times.iter().position(|&s| t <= s).unwrap_or(times.len());
    let mut flags = vec![false; times.len() + 1];
    flags[k] = true;
    reduce_exam_history(times, &flags)
}

/// One cohort per auxiliary noise level in the scenario. All cohorts share
/// the subjects, intervals and sampling indicators and the standardized
/// auxiliary noise `e`; only `xstar = x + sigma_e e` differs.
pub fn generate_cohort_family<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Vec<CohortDataset>> {
    scenario.validate()?;
    let u = scenario
        .end_of_study
        .ok_or_else(|| Error::Config("scenario has no end_of_study; calibrate it first".into()))?;
    let process = ExamProcess::from_scenario(scenario, u);
    let design = scenario.design()?;
    let subcohort = Bernoulli::new(scenario.q_s).expect("validated");
    let select = Bernoulli::new(scenario.q_c).expect("validated");
    let sigmas = scenario.sigma_e.values();
    let mut families: Vec<Vec<IntervalObservation>> = vec![Vec::with_capacity(scenario.n); sigmas.len()];

    for i in 0..scenario.n {
        let (x, z) = draw_covariates(scenario, rng);
        let e: f64 = StandardNormal.sample(rng);
        let eta = scenario.beta * x + scenario.gamma * z.unwrap_or(0.0);
        let t = generate_failure_time(eta, rng);
        let times = generate_exam_schedule(&process, rng);
        let (left, right) = reduce(&times, t)?;
        let in_subcohort = subcohort.sample(rng);
        let chosen = select.sample(rng);
        let is_case = right.is_finite();
        let selected_case = is_case && !in_subcohort && chosen;
        let sampled = in_subcohort || selected_case;
        let zs: Vec<f64> = z.into_iter().collect();
        for (family, sigma) in families.iter_mut().zip(&sigmas) {
            family.push(IntervalObservation::new(
                i.to_string(),
                left,
                right,
                zs.clone(),
                vec![x + sigma * e],
                sampled.then(|| vec![x]),
                in_subcohort,
                selected_case,
            )?);
        }
    }
    let names = scenario.covariate_names();
    families.into_iter().map(|s| CohortDataset::new(s, design, names.clone())).collect()
}

/// A cohort at the first noise level of the scenario.
pub fn generate_cohort<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<CohortDataset> {
    Ok(generate_cohort_family(scenario, rng)?.swap_remove(0))
}

pub const CALIBRATION_SUBJECTS: usize = 50_000;
pub const CALIBRATION_TOLERANCE: f64 = 0.005;
pub const CALIBRATION_BRACKET: (f64, f64) = (0.1, 50.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub end_of_study: f64,
    /// Case rate of the calibration sample at `end_of_study`.
    pub rate: f64,
    pub iterations: usize,
}

/// Pre-drawn subjects for case-rate evaluation at any `u`. Exam times scale
/// with `u`, so a subject is a case at `u` exactly when
/// `T <= u * last_position / (n_t + 1)`; the rate is nondecreasing in `u`
/// and the same random numbers serve every `u`.
#[derive(Debug, Clone)]
pub struct CaseRateSample {
    thresholds: Vec<f64>,
}

impl CaseRateSample {
    pub fn draw<R: Rng + ?Sized>(scenario: &Scenario, subjects: usize, rng: &mut R) -> Self {
        let unit = ExamProcess::from_scenario(scenario, scenario.n_t as f64 + 1.0);
        let thresholds = (0..subjects)
            .map(|_| {
                let (x, z) = draw_covariates(scenario, rng);
                let eta = scenario.beta * x + scenario.gamma * z.unwrap_or(0.0);
                let t = generate_failure_time(eta, rng);
                let last = *attended_positions(&unit, rng).last().expect("nonempty schedule");
                // case at u iff t <= u * last / (n_t + 1)
                t * (scenario.n_t as f64 + 1.0) / last
            })
            .collect();
        Self { thresholds }
    }

    pub fn rate(&self, end_of_study: f64) -> f64 {
        self.thresholds.iter().filter(|&&t| t <= end_of_study).count() as f64 / self.thresholds.len() as f64
    }
}

/// Bisection for the end-of-study time giving case rate `target`.
pub fn calibrate_end_of_study(
    scenario: &Scenario,
    target: f64,
    bracket: (f64, f64),
    seed: u64,
) -> Result<Calibration> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!("target case rate must lie in (0, 1), got {target}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Calibration(format!("invalid bracket [{lo}, {hi}]")));
    }
    let sample = CaseRateSample::draw(scenario, CALIBRATION_SUBJECTS, &mut stream(seed, &[tag::CALIBRATION]));
    let rate_lo = sample.rate(lo);
    let rate_hi = sample.rate(hi);
    if rate_lo > target + CALIBRATION_TOLERANCE || rate_hi < target - CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "case rate {target} is not bracketed: rate({lo}) = {rate_lo}, rate({hi}) = {rate_hi}"
        )));
    }
    for iterations in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let rate = sample.rate(mid);
        if (rate - target).abs() <= CALIBRATION_TOLERANCE {
            return Ok(Calibration { end_of_study: mid, rate, iterations });
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!("bisection did not reach case rate {target}")))
}

/// Case rate at `end_of_study` on an independent sample.
pub fn verify_case_rate(scenario: &Scenario, end_of_study: f64, subjects: usize, seed: u64) -> f64 {
    CaseRateSample::draw(scenario, subjects, &mut stream(seed, &[tag::VERIFICATION])).rate(end_of_study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::scenario::NoiseLevels;

    // sqrt(ln 2 / 0.2) from a 50-digit evaluation
    const MEDIAN_TIME: f64 = 1.8616487055295170663806231594329;

    #[test]
    fn inversion_examples() {
        assert!((failure_time_from_uniform(0.5, 0.0) - MEDIAN_TIME).abs() < 1e-15);
        for u in [0.1, 0.5, 0.9] {
            assert!(failure_time_from_uniform(u, 5.0) < failure_time_from_uniform(u, 0.0));
        }
    }

    #[test]
    fn failure_time_cdf() {
        let mut rng = stream(1, &[tag::VERIFICATION]);
        let draws: Vec<f64> = (0..100_000).map(|_| generate_failure_time(0.0, &mut rng)).collect();
        for t in [1.0f64, 2.0] {
            let emp = draws.iter().filter(|&&d| d <= t).count() as f64 / draws.len() as f64;
            assert!((emp - (1.0 - (-0.2 * t * t).exp())).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_schedule_limit() {
        let p = ExamProcess { end_of_study: 13.0, n_t: 12, attendance: 1.0, jitter_fraction: 0.0 };
        let mut rng = stream(2, &[]);
        let times = generate_exam_schedule(&p, &mut rng);
        assert_eq!(times, (1..=12).map(|j| j as f64).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_count_and_order() {
        let p = ExamProcess { end_of_study: 6.0, n_t: 12, attendance: 0.8, jitter_fraction: 1.0 / 3.0 };
        let mut rng = stream(3, &[]);
        let mut total = 0usize;
        for i in 0..100_000 {
            let s = generate_exam_schedule(&p, &mut rng);
            assert!(s[0] > 0.0 && s.windows(2).all(|w| w[0] < w[1]));
            if i < 10_000 {
                total += s.len();
            }
        }
        let mean = total as f64 / 10_000.0;
        assert!((9.4..=9.8).contains(&mean), "{mean}");
    }

    #[test]
    fn auxiliary_correlation() {
        let scenario = Scenario { n: 100_000, end_of_study: Some(5.0), ..Scenario::default() };
        let data = generate_cohort(&scenario, &mut stream(4, &[])).unwrap();
        let pairs: Vec<(f64, f64)> = data
            .subjects()
            .iter()
            .filter_map(|s| s.x().map(|x| (x[0], s.xstar()[0])))
            .collect();
        let n = pairs.len() as f64;
        let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in &pairs {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.958).abs() < 0.01, "{r}");
        let frac = data.subjects().iter().filter(|s| s.subcohort()).count() as f64 / data.len() as f64;
        assert!((frac - 0.2).abs() < 3.0 * (0.2f64 * 0.8 / data.len() as f64).sqrt());
    }

    #[test]
    fn family_shares_everything_but_xstar() {
        let scenario = Scenario {
            n: 200,
            end_of_study: Some(5.0),
            sigma_e: NoiseLevels::Many(vec![0.3, 1.7]),
            ..Scenario::default()
        };
        let fam = generate_cohort_family(&scenario, &mut stream(5, &[])).unwrap();
        for (a, b) in fam[0].subjects().iter().zip(fam[1].subjects()) {
            assert_eq!((a.left(), a.right(), a.x(), a.sampled()), (b.left(), b.right(), b.x(), b.sampled()));
            assert_ne!(a.xstar(), b.xstar());
        }
    }

    #[test]
    fn calibration_round_trip() {
        let scenario = Scenario::default();
        let cal = calibrate_end_of_study(&scenario, 0.2, CALIBRATION_BRACKET, 6).unwrap();
        assert!((cal.rate - 0.2).abs() <= CALIBRATION_TOLERANCE);
        let check = verify_case_rate(&scenario, cal.end_of_study, 100_000, 6);
        assert!((check - 0.2).abs() <= 0.01, "{check}");
        let sample = CaseRateSample::draw(&scenario, 5_000, &mut stream(6, &[]));
        let grid: Vec<f64> = (1..100).map(|k| sample.rate(0.1 * k as f64)).collect();
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
        let data = generate_cohort(
            &Scenario { n: 20_000, end_of_study: Some(cal.end_of_study), ..scenario },
            &mut stream(7, &[]),
        )
        .unwrap();
        let rate = data.case_count() as f64 / data.len() as f64;
        assert!((rate - 0.2).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn unreachable_rate_is_an_error() {
        let err = calibrate_end_of_study(&Scenario::default(), 0.999, (0.1, 1.0), 1).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
    }
}
