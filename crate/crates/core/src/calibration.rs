//! Affine measurement-error models, the calibration matrix and a
//! cross-validated search over the error parameters.
//!
//! Reported covariates are modelled as
//!
//! ```text
//! observed log expenditure = theta0 + theta1 * true + e
//! observed log price       = theta2 + theta3 * true + u
//! ```
//!
//! With the error placed on log real expenditure the naive LA-AIDS
//! coefficients are an exact linear image `b Λ` of the true ones, so the
//! cross-validated fit is the same at every theta. Placing it on nominal
//! group expenditure instead (the default) breaks that equivalence through
//! the price index and homogeneity, which is what makes theta1 identifiable.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aids::{fit_la_aids, predict_shares, AidsParameters, FitOptions, FitReport};
use crate::error::{Error, Result};
use crate::survey::DemandDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    #[default]
    ExpenditureOnly,
    ExpenditureAndPrices,
}

/// Which expenditure measure carries the error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorTarget {
    /// Log nominal group expenditure.
    #[default]
    GroupExpenditure,
    /// Log real expenditure, deflated by the unweighted mean-share Stone index.
    RealExpenditure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub theta0: f64,
    pub theta1: f64,
    #[serde(default)]
    pub theta2: f64,
    #[serde(default = "one")]
    pub theta3: f64,
    #[serde(default)]
    pub mode: CalibrationMode,
    #[serde(default)]
    pub target: ErrorTarget,
}

fn one() -> f64 {
    1.0
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl CalibrationSpec {
    pub fn identity() -> Self {
        CalibrationSpec {
            theta0: 0.0,
            theta1: 1.0,
            theta2: 0.0,
            theta3: 1.0,
            mode: CalibrationMode::ExpenditureOnly,
            target: ErrorTarget::GroupExpenditure,
        }
    }

    pub fn expenditure_only(theta0: f64, theta1: f64) -> Self {
        CalibrationSpec {
            theta0,
            theta1,
            ..Self::identity()
        }
    }

    pub fn joint(theta0: f64, theta1: f64, theta2: f64, theta3: f64) -> Self {
        CalibrationSpec {
            theta0,
            theta1,
            theta2,
            theta3,
            mode: CalibrationMode::ExpenditureAndPrices,
            target: ErrorTarget::GroupExpenditure,
        }
    }

    pub fn with_target(self, target: ErrorTarget) -> Self {
        CalibrationSpec { target, ..self }
    }

    /// `(theta0, theta1, theta2, theta3)` with the price pair forced to the
    /// identity in expenditure-only mode.
    pub fn effective(&self) -> [f64; 4] {
        match self.mode {
            CalibrationMode::ExpenditureOnly => [self.theta0, self.theta1, 0.0, 1.0],
            CalibrationMode::ExpenditureAndPrices => {
                [self.theta0, self.theta1, self.theta2, self.theta3]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.effective();
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite theta {t:?}")));
        }
        if t[1] == 0.0 {
            return Err(Error::Singular("theta1 must be nonzero".into()));
        }
        if t[3] == 0.0 {
            return Err(Error::Singular("theta3 must be nonzero".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.effective() == [0.0, 1.0, 0.0, 1.0]
    }

    fn distance_to_identity(&self) -> f64 {
        let t = self.effective();
        (t[0].powi(2) + (t[1] - 1.0).powi(2) + t[2].powi(2) + (t[3] - 1.0).powi(2)).sqrt()
    }
}

/// Λ over the regressor vector `(1, log real expenditure, log p_1..log p_n)`.
///
/// True regressors are `Λ` times observed ones, so naive coefficients
/// estimate `b Λ` and are corrected by right-multiplying with the inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    #[serde(with = "crate::serde_matrix")]
    pub matrix: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub inverse: DMatrix<f64>,
}

impl CalibrationMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn build_calibration_matrix(
    spec: &CalibrationSpec,
    n_items: usize,
) -> Result<CalibrationMatrix> {
    spec.validate()?;
    let [t0, t1, t2, t3] = spec.effective();
    let d = 2 + n_items;
    let mut m = DMatrix::<f64>::identity(d, d);
    let mut inv = DMatrix::<f64>::identity(d, d);
    m[(1, 0)] = -t0 / t1;
    m[(1, 1)] = 1.0 / t1;
    inv[(1, 0)] = t0;
    inv[(1, 1)] = t1;
    for k in 2..d {
        m[(k, 0)] = -t2 / t3;
        m[(k, k)] = 1.0 / t3;
        inv[(k, 0)] = t2;
        inv[(k, k)] = t3;
    }
    Ok(CalibrationMatrix {
        matrix: m,
        inverse: inv,
    })
}

/// Maps naive coefficients to corrected ones, equation by equation, via `b = b̃ Λ⁻¹`.
pub fn correct_parameters(
    naive: &AidsParameters,
    spec: &CalibrationSpec,
) -> Result<AidsParameters> {
    let n = naive.n_items();
    let lambda = build_calibration_matrix(spec, n)?;
    let mut out = naive.clone();
    for i in 0..n {
        let mut row = DMatrix::<f64>::zeros(1, 2 + n);
        row[(0, 0)] = naive.alpha[i];
        row[(0, 1)] = naive.beta[i];
        for j in 0..n {
            row[(0, 2 + j)] = naive.gamma[(i, j)];
        }
        let fixed = row * &lambda.inverse;
        out.alpha[i] = fixed[(0, 0)];
        out.beta[i] = fixed[(0, 1)];
        for j in 0..n {
            out.gamma[(i, j)] = fixed[(0, 2 + j)];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub expenditure_sd: f64,
    pub price_sd: f64,
}

impl MeasurementNoise {
    pub fn none() -> Self {
        Self::default()
    }
}

fn unweighted_index_shares(data: &DemandDataset) -> Vec<f64> {
    data.mean_shares(false)
}

fn stone(shares: &[f64], log_prices: &[f64]) -> f64 {
    shares.iter().zip(log_prices).map(|(s, p)| s * p).sum()
}

/// Simulates reporting error: maps true covariates to observed ones.
///
/// Shares are untouched; quantities are recomputed from the new expenditure
/// and prices. Noise draws come from one ChaCha stream in row order.
pub fn apply_measurement_model(
    data: &DemandDataset,
    spec: &CalibrationSpec,
    noise: MeasurementNoise,
    seed: u64,
) -> Result<DemandDataset> {
    spec.validate()?;
    let sd_ok = |s: f64| s.is_finite() && s >= 0.0;
    if !sd_ok(noise.expenditure_sd) || !sd_ok(noise.price_sd) {
        return Err(Error::contract(format!(
            "noise sd must be finite and nonnegative: {noise:?}"
        )));
    }
    let [t0, t1, t2, t3] = spec.effective();
    let e_dist = Normal::new(0.0, noise.expenditure_sd).expect("validated sd");
    let p_dist = Normal::new(0.0, noise.price_sd).expect("validated sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index_shares = unweighted_index_shares(data);
    let prices_noisy = spec.mode == CalibrationMode::ExpenditureAndPrices;

    let mut out = data.clone();
    for h in &mut out.households {
        let e = if noise.expenditure_sd > 0.0 {
            e_dist.sample(&mut rng)
        } else {
            0.0
        };
        let old_log_p = h.log_prices.clone();
        for lp in &mut h.log_prices {
            let u = if prices_noisy && noise.price_sd > 0.0 {
                p_dist.sample(&mut rng)
            } else {
                0.0
            };
            *lp = t2 + t3 * *lp + u;
        }
        let log_x = h.log_expenditure();
        let new_log_x = match spec.target {
            ErrorTarget::GroupExpenditure => t0 + t1 * log_x + e,
            ErrorTarget::RealExpenditure => {
                let real = log_x - stone(&index_shares, &old_log_p);
                t0 + t1 * real + e + stone(&index_shares, &h.log_prices)
            }
        };
        set_expenditure(h, new_log_x);
    }
    Ok(out)
}

fn set_expenditure(h: &mut crate::survey::Household, log_x: f64) {
    h.group_expenditure = log_x.exp();
    for ((q, s), lp) in h.quantities.iter_mut().zip(&h.shares).zip(&h.log_prices) {
        *q = s * h.group_expenditure / lp.exp();
    }
}

/// Inverts the noise-free measurement model, mapping observed covariates to
/// their calibrated values.
pub fn calibrate_dataset(data: &DemandDataset, spec: &CalibrationSpec) -> Result<DemandDataset> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(data.clone());
    }
    let [t0, t1, t2, t3] = spec.effective();
    let index_shares = unweighted_index_shares(data);
    let mut out = data.clone();
    for h in &mut out.households {
        let observed_log_p = h.log_prices.clone();
        for lp in &mut h.log_prices {
            *lp = (*lp - t2) / t3;
        }
        let log_x = h.log_expenditure();
        let new_log_x = match spec.target {
            ErrorTarget::GroupExpenditure => (log_x - t0) / t1,
            ErrorTarget::RealExpenditure => {
                let real = log_x - stone(&index_shares, &observed_log_p);
                (real - t0) / t1 + stone(&index_shares, &h.log_prices)
            }
        };
        if !new_log_x.is_finite() || new_log_x.exp() <= 0.0 || !new_log_x.exp().is_finite() {
            return Err(Error::Estimation(format!(
                "calibrated expenditure for household {} is not representable",
                h.hhid
            )));
        }
        set_expenditure(h, new_log_x);
    }
    Ok(out)
}

/// Fits LA-AIDS on the calibrated covariates.
pub fn fit_calibrated(
    data: &DemandDataset,
    spec: &CalibrationSpec,
    options: &FitOptions,
) -> Result<FitReport> {
    fit_la_aids(&calibrate_dataset(data, spec)?, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    L1,
    L2,
}

/// Fold index for every row.
///
/// Rows are put in a canonical order (by hhid, ties by position), shuffled
/// with the seed, and cut into contiguous near-equal blocks. Reordering the
/// input rows therefore does not change which households share a fold.
pub fn fold_assignment(data: &DemandDataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    if folds < 2 {
        return Err(Error::contract(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n < folds {
        return Err(Error::contract(format!(
            "{n} rows cannot fill {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.households[a]
            .hhid
            .cmp(&data.households[b].hhid)
            .then(a.cmp(&b))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assign = vec![0; n];
    for f in 0..folds {
        for &row in &order[f * n / folds..(f + 1) * n / folds] {
            assign[row] = f;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Losses {
    l1: f64,
    l2: f64,
}

fn cv_losses(
    data: &DemandDataset,
    spec: &CalibrationSpec,
    assign: &[usize],
    folds: usize,
    options: &FitOptions,
) -> Result<Losses> {
    let calibrated = calibrate_dataset(data, spec)?;
    let mut total = Losses { l1: 0.0, l2: 0.0 };
    for f in 0..folds {
        let (held, train): (Vec<usize>, Vec<usize>) =
            (0..data.len()).partition(|&r| assign[r] == f);
        let fit = fit_la_aids(&calibrated.subset(&train), options)
            .map_err(|e| Error::Estimation(format!("fold {f}: {e}")))?;
        let test = calibrated.subset(&held);
        let pred = predict_shares(&fit.parameters, &test, None)?;
        for (h, p) in test.households.iter().zip(&pred) {
            for (w, w_hat) in h.shares.iter().zip(p) {
                let d = w_hat - w;
                total.l1 += d.abs();
                total.l2 += d * d;
            }
        }
    }
    Ok(total)
}

/// Cross-validated prediction error, summed over held-out households and items.
pub fn cv_error(
    data: &DemandDataset,
    spec: &CalibrationSpec,
    folds: usize,
    loss: Loss,
    seed: u64,
) -> Result<f64> {
    cv_error_with(data, spec, folds, loss, seed, &FitOptions::default())
}

pub fn cv_error_with(
    data: &DemandDataset,
    spec: &CalibrationSpec,
    folds: usize,
    loss: Loss,
    seed: u64,
    options: &FitOptions,
) -> Result<f64> {
    let assign = fold_assignment(data, folds, seed)?;
    let l = cv_losses(data, spec, &assign, folds, options)?;
    Ok(match loss {
        Loss::L1 => l.l1,
        Loss::L2 => l.l2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub spec: CalibrationSpec,
    pub cv_l1: Option<f64>,
    pub cv_l2: Option<f64>,
    /// Set when the point could not be scored.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<GridPoint>,
    pub best_l1: Option<CalibrationSpec>,
    pub best_l2: Option<CalibrationSpec>,
    pub best_l1_index: Option<usize>,
    pub best_l2_index: Option<usize>,
    pub folds: usize,
    pub seed: u64,
    /// Number of summed terms (households x items); divide by it for a mean error.
    pub divisor: usize,
    pub failures: Vec<usize>,
}

impl CvResult {
    /// Table with columns `theta1, theta2, theta3, cv_l1, cv_l2`; failed points leave the losses empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta1", "theta2", "theta3", "cv_l1", "cv_l2"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.grid {
            let t = p.spec.effective();
            w.write_record([
                t[1].to_string(),
                t[2].to_string(),
                t[3].to_string(),
                fmt(p.cv_l1),
                fmt(p.cv_l2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const TIE_RTOL: f64 = 1e-10;
const TIE_ATOL: f64 = 1e-12;

fn argmin(grid: &[GridPoint], value: impl Fn(&GridPoint) -> Option<f64>) -> Option<usize> {
    let best = grid.iter().filter_map(&value).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = TIE_RTOL * best.abs() + TIE_ATOL;
    let mut pick: Option<usize> = None;
    for (i, p) in grid.iter().enumerate() {
        let Some(v) = value(p) else { continue };
        if v > best + tol {
            continue;
        }
        match pick {
            None => pick = Some(i),
            Some(j) if p.spec.distance_to_identity() < grid[j].spec.distance_to_identity() => {
                pick = Some(i)
            }
            _ => {}
        }
    }
    pick
}

pub fn grid_search(
    data: &DemandDataset,
    grid: &[CalibrationSpec],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    grid_search_with(data, grid, folds, seed, &FitOptions::default())
}

/// Scores every grid point with one shared fold assignment.
///
/// Points that fail are recorded rather than aborting the search.
pub fn grid_search_with(
    data: &DemandDataset,
    grid: &[CalibrationSpec],
    folds: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::contract("calibration grid is empty"));
    }
    let assign = fold_assignment(data, folds, seed)?;
    let points: Vec<GridPoint> = grid
        .par_iter()
        .map(
            |spec| match cv_losses(data, spec, &assign, folds, options) {
                Ok(l) => GridPoint {
                    spec: *spec,
                    cv_l1: Some(l.l1),
                    cv_l2: Some(l.l2),
                    error: None,
                },
                Err(e) => GridPoint {
                    spec: *spec,
                    cv_l1: None,
                    cv_l2: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    let best_l1_index = argmin(&points, |p| p.cv_l1);
    let best_l2_index = argmin(&points, |p| p.cv_l2);
    Ok(CvResult {
        best_l1: best_l1_index.map(|i| points[i].spec),
        best_l2: best_l2_index.map(|i| points[i].spec),
        best_l1_index,
        best_l2_index,
        folds,
        seed,
        divisor: data.len() * data.n_items(),
        failures: points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.error.is_some())
            .map(|(i, _)| i)
            .collect(),
        grid: points,
    })
}

/// Built-in theta grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPreset {
    /// theta1 from 0.5 to 1.5 with a finer step around 1.
    #[default]
    ExpenditureOnly,
    /// theta1 = 1 with theta3 in a narrow band and theta2 in ±0.045.
    JointTheta,
}

impl GridPreset {
    pub fn specs(&self) -> Vec<CalibrationSpec> {
        match self {
            GridPreset::ExpenditureOnly => [
                0.5, 0.6, 0.7, 0.8, 0.9, 0.92, 0.94, 0.96, 0.98, 1.0, 1.02, 1.04, 1.06, 1.08, 1.1,
                1.2, 1.3, 1.4, 1.5,
            ]
            .into_iter()
            .map(|t1| CalibrationSpec::expenditure_only(0.0, t1))
            .collect(),
            GridPreset::JointTheta => {
                let mut out = Vec::new();
                for t3 in [0.975, 0.9825, 1.0, 1.0125, 1.025] {
                    for t2 in [0.045, 0.03, 0.015, 0.0, -0.015, -0.03, -0.045] {
                        out.push(CalibrationSpec::joint(0.0, 1.0, t2, t3));
                    }
                }
                out
            }
        }
    }
}

impl fmt::Display for GridPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridPreset::ExpenditureOnly => "expenditure-only",
            GridPreset::JointTheta => "joint-theta",
        })
    }
}

impl FromStr for GridPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expenditure-only" => Ok(GridPreset::ExpenditureOnly),
            "joint-theta" => Ok(GridPreset::JointTheta),
            other => Err(Error::contract(format!("unknown grid preset {other:?}"))),
        }
    }
}
