//! Linear-approximate AIDS under adding-up, homogeneity and symmetry.
//!
//! Budget shares are modelled as
//!
//! ```text
//! w_il = alpha_i + sum_j gamma_ij log p_jl + beta_i log(x_l / P_l) + e_il
//! ```
//!
//! with `P` a Stone price index. The restrictions are imposed by
//! reparameterisation: one reference equation is eliminated through adding-up,
//! homogeneity is substituted into the remaining equations (prices enter
//! relative to the reference item) and symmetric pairs share one parameter.
//! The free parameters are estimated by least squares over all `n` share
//! equations, so the estimate does not depend on which equation is eliminated.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SpdSolve};
use crate::survey::{DemandDataset, Household};

/// Which shares weight the log prices in the Stone index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareBasis {
    /// Each household's own observed shares.
    RowShares,
    /// Dataset-mean shares, identical for every household.
    #[default]
    MeanShares,
}

/// A concrete Stone index, frozen at fit time so predictions on other data
/// use the same weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "shares")]
pub enum PriceIndex {
    RowShares,
    FixedShares(Vec<f64>),
}

impl PriceIndex {
    pub fn log_index_row(&self, h: &Household) -> f64 {
        let weights = match self {
            PriceIndex::RowShares => &h.shares,
            PriceIndex::FixedShares(s) => s,
        };
        weights
            .iter()
            .zip(&h.log_prices)
            .map(|(s, lp)| s * lp)
            .sum()
    }

    pub fn log_index(&self, data: &DemandDataset) -> Vec<f64> {
        data.households
            .iter()
            .map(|h| self.log_index_row(h))
            .collect()
    }

    fn permuted(&self, order: &[usize]) -> PriceIndex {
        match self {
            PriceIndex::RowShares => PriceIndex::RowShares,
            PriceIndex::FixedShares(s) => {
                PriceIndex::FixedShares(order.iter().map(|&k| s[k]).collect())
            }
        }
    }
}

/// Stone log price index `log P_l = sum_j s_j log p_jl`.
///
/// With [`ShareBasis::MeanShares`] the weights are the unweighted dataset-mean shares.
pub fn stone_log_price_index(data: &DemandDataset, basis: ShareBasis) -> Vec<f64> {
    price_index_for(data, basis, false).log_index(data)
}

fn price_index_for(data: &DemandDataset, basis: ShareBasis, weighted: bool) -> PriceIndex {
    match basis {
        ShareBasis::RowShares => PriceIndex::RowShares,
        ShareBasis::MeanShares => PriceIndex::FixedShares(data.mean_shares(weighted)),
    }
}

/// Fitted (or true) LA-AIDS coefficients in dataset item order.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AidsParameters {
    pub items: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub gamma: DMatrix<f64>,
    #[serde(default = "default_index")]
    pub price_index: PriceIndex,
}

fn default_index() -> PriceIndex {
    PriceIndex::RowShares
}

/// Largest deviation from each restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionDiagnostics {
    pub alpha_sum_minus_one: f64,
    pub beta_sum: f64,
    pub gamma_max_row_sum: f64,
    pub gamma_max_col_sum: f64,
    pub gamma_max_asymmetry: f64,
}

impl RestrictionDiagnostics {
    pub fn max_violation(&self) -> f64 {
        [
            self.alpha_sum_minus_one.abs(),
            self.beta_sum.abs(),
            self.gamma_max_row_sum,
            self.gamma_max_col_sum,
            self.gamma_max_asymmetry,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl Serialize for AidsParameters {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            items: &'a [String],
            alpha: &'a [f64],
            beta: &'a [f64],
            gamma: Vec<Vec<f64>>,
            price_index: &'a PriceIndex,
            diagnostics: RestrictionDiagnostics,
        }
        Doc {
            items: &self.items,
            alpha: &self.alpha,
            beta: &self.beta,
            gamma: crate::serde_matrix::to_rows(&self.gamma),
            price_index: &self.price_index,
            diagnostics: self.restriction_residuals(),
        }
        .serialize(s)
    }
}

impl AidsParameters {
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn restriction_residuals(&self) -> RestrictionDiagnostics {
        let n = self.n_items();
        let g = &self.gamma;
        let mut row = 0.0f64;
        let mut col = 0.0f64;
        let mut asym = 0.0f64;
        for i in 0..n {
            row = row.max(g.row(i).sum().abs());
            col = col.max(g.column(i).sum().abs());
            for j in 0..n {
                asym = asym.max((g[(i, j)] - g[(j, i)]).abs());
            }
        }
        RestrictionDiagnostics {
            alpha_sum_minus_one: self.alpha.iter().sum::<f64>() - 1.0,
            beta_sum: self.beta.iter().sum(),
            gamma_max_row_sum: row,
            gamma_max_col_sum: col,
            gamma_max_asymmetry: asym,
        }
    }

    /// Errors if any restriction is violated by more than `tol`, or shapes disagree.
    pub fn check(&self, tol: f64) -> Result<()> {
        let n = self.n_items();
        if self.alpha.len() != n || self.beta.len() != n || self.gamma.shape() != (n, n) {
            return Err(Error::contract(
                "parameter dimensions disagree with item list",
            ));
        }
        let d = self.restriction_residuals();
        if d.max_violation() > tol {
            return Err(Error::contract(format!("restrictions violated: {d:?}")));
        }
        Ok(())
    }

    /// Reorders items: new item `k` is old item `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> AidsParameters {
        AidsParameters {
            items: order.iter().map(|&k| self.items[k].clone()).collect(),
            alpha: order.iter().map(|&k| self.alpha[k]).collect(),
            beta: order.iter().map(|&k| self.beta[k]).collect(),
            gamma: DMatrix::from_fn(order.len(), order.len(), |i, j| {
                self.gamma[(order[i], order[j])]
            }),
            price_index: self.price_index.permuted(order),
        }
    }

    fn predict_household(&self, h: &Household) -> Vec<f64> {
        let log_real = h.log_expenditure() - self.price_index.log_index_row(h);
        (0..self.n_items())
            .map(|i| {
                let price: f64 = (0..self.n_items())
                    .map(|j| self.gamma[(i, j)] * h.log_prices[j])
                    .sum();
                self.alpha[i] + price + self.beta[i] * log_real
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub share_basis: ShareBasis,
    /// Weight households by their survey multiplier.
    pub weighted: bool,
    /// Item index whose equation is eliminated through adding-up. Defaults to the last.
    #[serde(default)]
    pub reference_item: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub parameters: AidsParameters,
    /// Observed minus fitted shares, one row per household.
    pub residuals: Vec<Vec<f64>>,
    pub r_squared: Vec<f64>,
    pub log_price_index: Vec<f64>,
    pub options: FitOptions,
}

impl FitReport {
    pub fn write_residuals_csv<W: Write>(&self, data: &DemandDataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["hhid".to_string()];
        header.extend(self.parameters.items.iter().map(|i| format!("resid_{i}")));
        w.write_record(&header)?;
        for (h, r) in data.households.iter().zip(&self.residuals) {
            let mut row = vec![h.hhid.clone()];
            row.extend(r.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Layout of the free-parameter vector for `m = n - 1` retained equations:
/// `alpha_0..alpha_{m-1}`, `beta_0..beta_{m-1}`, then `gamma_ij` for `i <= j < m`.
struct Layout {
    m: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 * self.m + self.m * (self.m + 1) / 2
    }
    fn alpha(&self, i: usize) -> usize {
        i
    }
    fn beta(&self, i: usize) -> usize {
        self.m + i
    }
    fn gamma(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle offset
        2 * self.m + a * self.m - a * a.saturating_sub(1) / 2 + (b - a)
    }
    fn name(&self, k: usize, items: &[String]) -> String {
        if k < self.m {
            return format!("alpha[{}]", items[k]);
        }
        if k < 2 * self.m {
            return format!("beta[{}]", items[k - self.m]);
        }
        for i in 0..self.m {
            for j in i..self.m {
                if self.gamma(i, j) == k {
                    return format!(
                        "gamma[{},{}] (relative to {})",
                        items[i], items[j], items[self.m]
                    );
                }
            }
        }
        format!("column {k}")
    }
}

/// Households per chunk for the normal-equations reduction. Fixed so the
/// summation order, and therefore the result, does not depend on thread count.
const CHUNK: usize = 512;

/// Fits LA-AIDS with all restrictions imposed by construction.
pub fn fit_la_aids(data: &DemandDataset, options: &FitOptions) -> Result<FitReport> {
    let n = data.n_items();
    if n < 2 {
        return Err(Error::contract(format!(
            "fit needs at least 2 items, got {n}"
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset("no households to fit".into()));
    }
    let reference = options.reference_item.unwrap_or(n - 1);
    if reference >= n {
        return Err(Error::contract(format!(
            "reference item {reference} out of range"
        )));
    }
    if reference == n - 1 {
        return fit_reference_last(data, options);
    }

    let mut order: Vec<usize> = (0..n).filter(|&k| k != reference).collect();
    order.push(reference);
    let permuted = permute_dataset(data, &order);
    let inner = FitOptions {
        reference_item: None,
        ..*options
    };
    let report = fit_reference_last(&permuted, &inner)?;
    let mut inverse = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }
    Ok(FitReport {
        parameters: report.parameters.permuted(&inverse),
        residuals: report
            .residuals
            .iter()
            .map(|r| inverse.iter().map(|&k| r[k]).collect())
            .collect(),
        r_squared: inverse.iter().map(|&k| report.r_squared[k]).collect(),
        log_price_index: report.log_price_index,
        options: *options,
    })
}

pub(crate) fn permute_dataset(data: &DemandDataset, order: &[usize]) -> DemandDataset {
    DemandDataset {
        items: order.iter().map(|&k| data.items[k].clone()).collect(),
        households: data
            .households
            .iter()
            .map(|h| Household {
                log_prices: order.iter().map(|&k| h.log_prices[k]).collect(),
                shares: order.iter().map(|&k| h.shares[k]).collect(),
                quantities: order.iter().map(|&k| h.quantities[k]).collect(),
                ..h.clone()
            })
            .collect(),
    }
}

/// Fills `rows` with the `n` design rows (retained equations then the
/// eliminated one) and `targets` with the matching responses.
fn design_rows(
    layout: &Layout,
    h: &Household,
    log_p: f64,
    rows: &mut [Vec<f64>],
    targets: &mut [f64],
) {
    let m = layout.m;
    let log_real = h.log_expenditure() - log_p;
    let base = h.log_prices[m];
    for row in rows.iter_mut() {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    for i in 0..m {
        let row = &mut rows[i];
        row[layout.alpha(i)] = 1.0;
        row[layout.beta(i)] = log_real;
        for j in 0..m {
            row[layout.gamma(i, j)] += h.log_prices[j] - base;
        }
        targets[i] = h.shares[i];
    }
    let (head, tail) = rows.split_at_mut(m);
    let last = &mut tail[0];
    for row in head.iter() {
        for (l, v) in last.iter_mut().zip(row) {
            *l -= v;
        }
    }
    targets[m] = h.shares[m] - 1.0;
}

fn fit_reference_last(data: &DemandDataset, options: &FitOptions) -> Result<FitReport> {
    let n = data.n_items();
    let layout = Layout { m: n - 1 };
    let k = layout.len();
    if data.len() <= k {
        return Err(Error::contract(format!(
            "{} households cannot identify {} free parameters",
            data.len(),
            k
        )));
    }

    let index = price_index_for(data, options.share_basis, options.weighted);
    let log_p = index.log_index(data);

    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = data
        .households
        .par_chunks(CHUNK)
        .zip(log_p.par_chunks(CHUNK))
        .map(|(hs, lps)| {
            let mut gram = DMatrix::<f64>::zeros(k, k);
            let mut rhs = DVector::<f64>::zeros(k);
            let mut rows = vec![vec![0.0; k]; n];
            let mut targets = vec![0.0; n];
            for (h, &lp) in hs.iter().zip(lps) {
                design_rows(&layout, h, lp, &mut rows, &mut targets);
                let w = if options.weighted { h.weight } else { 1.0 };
                for (row, &y) in rows.iter().zip(&targets) {
                    for a in 0..k {
                        let ra = row[a];
                        if ra == 0.0 {
                            continue;
                        }
                        let wa = w * ra;
                        rhs[a] += wa * y;
                        for b in a..k {
                            gram[(a, b)] += wa * row[b];
                        }
                    }
                }
            }
            (gram, rhs)
        })
        .collect();

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for (g, r) in &partials {
        gram += g;
        rhs += r;
    }
    for a in 0..k {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let theta = match solve_spd(&gram, &rhs) {
        SpdSolve::Solved(t) => t,
        SpdSolve::Deficient(cols) => {
            return Err(Error::RankDeficient {
                columns: cols.iter().map(|&c| layout.name(c, &data.items)).collect(),
            })
        }
    };

    let m = layout.m;
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        alpha[i] = theta[layout.alpha(i)];
        beta[i] = theta[layout.beta(i)];
        for j in 0..m {
            gamma[(i, j)] = theta[layout.gamma(i, j)];
        }
    }
    alpha[m] = 1.0 - alpha[..m].iter().sum::<f64>();
    beta[m] = -beta[..m].iter().sum::<f64>();
    for i in 0..m {
        let s: f64 = (0..m).map(|j| gamma[(i, j)]).sum();
        gamma[(i, m)] = -s;
        gamma[(m, i)] = -s;
    }
    gamma[(m, m)] = -(0..m).map(|i| gamma[(i, m)]).sum::<f64>();

    let parameters = AidsParameters {
        items: data.items.clone(),
        alpha,
        beta,
        gamma,
        price_index: index,
    };

    let residuals: Vec<Vec<f64>> = data
        .households
        .iter()
        .map(|h| {
            let pred = parameters.predict_household(h);
            h.shares.iter().zip(&pred).map(|(w, p)| w - p).collect()
        })
        .collect();
    let r_squared = r_squared(data, &residuals, options.weighted);

    Ok(FitReport {
        parameters,
        residuals,
        r_squared,
        log_price_index: log_p,
        options: *options,
    })
}

fn r_squared(data: &DemandDataset, residuals: &[Vec<f64>], weighted: bool) -> Vec<f64> {
    let n = data.n_items();
    let mean = data.mean_shares(weighted);
    (0..n)
        .map(|i| {
            let mut sse = 0.0;
            let mut sst = 0.0;
            for (h, r) in data.households.iter().zip(residuals) {
                let w = if weighted { h.weight } else { 1.0 };
                sse += w * r[i] * r[i];
                sst += w * (h.shares[i] - mean[i]).powi(2);
            }
            if sst > 0.0 {
                1.0 - sse / sst
            } else if sse <= 1e-24 {
                1.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Additive per-state, per-item share shifters estimated from fit residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEffects {
    pub items: Vec<String>,
    /// State code to one effect per item.
    pub effects: BTreeMap<String, Vec<f64>>,
    pub observations: BTreeMap<String, usize>,
    /// States backed by a single household; kept, but their effect is that household's residual.
    pub singleton_states: Vec<String>,
    pub convention: String,
}

pub const STATE_EFFECT_CONVENTION: &str =
    "centered: observation-weighted mean effect is zero per item";

impl StateEffects {
    pub fn effect_for(&self, state: &str) -> Option<&[f64]> {
        self.effects.get(state).map(Vec::as_slice)
    }
}

/// Regresses each item's residuals on a full set of state indicators and
/// centres the coefficients to mean zero over observations.
pub fn estimate_state_effects(report: &FitReport, data: &DemandDataset) -> Result<StateEffects> {
    let n = data.n_items();
    if report.residuals.len() != data.len() || report.residuals.iter().any(|r| r.len() != n) {
        return Err(Error::contract(
            "residual matrix does not match dataset dimensions",
        ));
    }
    if report.parameters.items != data.items {
        return Err(Error::contract("fit and dataset item order differ"));
    }
    state_effects_from_residuals(data, &report.residuals, report.options.weighted)
}

/// Same as [`estimate_state_effects`] for stored parameters: residuals are
/// observed shares minus the parameters' predictions on `data`.
pub fn state_effects_for_parameters(
    params: &AidsParameters,
    data: &DemandDataset,
    weighted: bool,
) -> Result<StateEffects> {
    let fitted = predict_shares(params, data, None)?;
    let residuals: Vec<Vec<f64>> = data
        .households
        .iter()
        .zip(&fitted)
        .map(|(h, f)| h.shares.iter().zip(f).map(|(w, p)| w - p).collect())
        .collect();
    state_effects_from_residuals(data, &residuals, weighted)
}

fn state_effects_from_residuals(
    data: &DemandDataset,
    residuals: &[Vec<f64>],
    weighted: bool,
) -> Result<StateEffects> {
    let n = data.n_items();
    let mut sums: BTreeMap<&str, (Vec<f64>, f64, usize)> = BTreeMap::new();
    for (h, r) in data.households.iter().zip(residuals) {
        let w = if weighted { h.weight } else { 1.0 };
        let e = sums
            .entry(h.state.as_str())
            .or_insert_with(|| (vec![0.0; n], 0.0, 0));
        for (a, x) in e.0.iter_mut().zip(r) {
            *a += w * x;
        }
        e.1 += w;
        e.2 += 1;
    }
    if sums.len() < 2 {
        return Err(Error::contract(
            "state effects need at least 2 distinct states",
        ));
    }

    let total_w: f64 = sums.values().map(|v| v.1).sum();
    let means: BTreeMap<&str, Vec<f64>> = sums
        .iter()
        .map(|(s, (acc, w, _))| (*s, acc.iter().map(|a| a / w).collect()))
        .collect();
    let grand: Vec<f64> = (0..n)
        .map(|i| sums.iter().map(|(s, v)| v.1 * means[s][i]).sum::<f64>() / total_w)
        .collect();

    Ok(StateEffects {
        items: data.items.clone(),
        effects: means
            .iter()
            .map(|(s, m)| {
                (
                    s.to_string(),
                    m.iter().zip(&grand).map(|(a, g)| a - g).collect(),
                )
            })
            .collect(),
        observations: sums.iter().map(|(s, v)| (s.to_string(), v.2)).collect(),
        singleton_states: sums
            .iter()
            .filter(|(_, v)| v.2 == 1)
            .map(|(s, _)| s.to_string())
            .collect(),
        convention: STATE_EFFECT_CONVENTION.into(),
    })
}

/// Expected shares, optionally shifted by state effects.
///
/// Households from states absent in `state_fx` receive no shift.
pub fn predict_shares(
    params: &AidsParameters,
    data: &DemandDataset,
    state_fx: Option<&StateEffects>,
) -> Result<Vec<Vec<f64>>> {
    if params.items != data.items {
        return Err(Error::contract(format!(
            "item order mismatch: parameters {:?} vs data {:?}",
            params.items, data.items
        )));
    }
    if let Some(fx) = state_fx {
        if fx.items != data.items {
            return Err(Error::contract("state effects item order mismatch"));
        }
    }
    Ok(data
        .households
        .iter()
        .map(|h| {
            let mut p = params.predict_household(h);
            if let Some(shift) = state_fx.and_then(|fx| fx.effect_for(&h.state)) {
                p.iter_mut().zip(shift).for_each(|(a, s)| *a += s);
            }
            p
        })
        .collect())
}
