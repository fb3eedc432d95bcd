//! Lorenz curves and Gini indices of per-item expenditure.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::DemandDataset;

/// Per-household expenditure on `item` at the dataset's prices, `p * q`.
///
/// On an ingested dataset this reproduces the reported value (share times
/// group expenditure). On a uniformized dataset the quantities are the
/// original ones, so the result is spending re-priced at the FSU price.
pub fn item_expenditures(data: &DemandDataset, item: &str) -> Result<Vec<f64>> {
    let k = data
        .item_index(item)
        .ok_or_else(|| Error::contract(format!("item {item:?} not in dataset")))?;
    Ok(data
        .households
        .iter()
        .map(|h| h.log_prices[k].exp() * h.quantities[k])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GiniFormula {
    /// Mean absolute difference over `n^2` pairs.
    #[default]
    Standard,
    /// The `n (n - 1)` small-sample variant.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniResult {
    pub gini: f64,
    pub n: usize,
    pub formula: GiniFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    /// `(population share, expenditure share)`, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

impl LorenzCurve {
    /// Trapezoid-rule area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["population_share", "expenditure_share"])?;
        for (p, e) in &self.points {
            w.write_record([p.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Validates and sorts `(value, weight)` pairs ascending by value.
fn prepare(sample: &[f64], weights: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
    if sample.is_empty() {
        return Err(Error::Degenerate("empty sample".into()));
    }
    if let Some(w) = weights {
        if w.len() != sample.len() {
            return Err(Error::contract(format!(
                "{} weights for {} observations",
                w.len(),
                sample.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::contract("weights must be positive and finite"));
        }
    }
    if sample.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::contract(
            "sample values must be finite and nonnegative",
        ));
    }
    let mut pairs: Vec<(f64, f64)> = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, weights.map_or(1.0, |w| w[i])))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.iter().all(|p| p.0 == 0.0) {
        return Err(Error::Degenerate("all values are zero".into()));
    }
    Ok(pairs)
}

pub fn lorenz_curve(sample: &[f64]) -> Result<LorenzCurve> {
    lorenz_curve_weighted(sample, None)
}

pub fn lorenz_curve_weighted(sample: &[f64], weights: Option<&[f64]>) -> Result<LorenzCurve> {
    let pairs = prepare(sample, weights)?;
    let total_w: f64 = pairs.iter().map(|p| p.1).sum();
    let total: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let mut points = Vec::with_capacity(pairs.len() + 1);
    points.push((0.0, 0.0));
    let (mut cw, mut cx) = (0.0, 0.0);
    for (i, (x, w)) in pairs.iter().enumerate() {
        cw += w;
        cx += x * w;
        if weights.is_none() {
            points.push(((i + 1) as f64 / pairs.len() as f64, cx / total));
        } else {
            points.push((cw / total_w, cx / total));
        }
    }
    // pin the endpoint against rounding
    *points.last_mut().expect("non-empty") = (1.0, 1.0);
    Ok(LorenzCurve { points })
}

pub fn gini_index(sample: &[f64]) -> Result<GiniResult> {
    gini_index_with(sample, None, GiniFormula::Standard)
}

/// `sum_ij w_i w_j |x_i - x_j| / (2 W^2 mean)`, evaluated in O(n log n)
/// from cumulative weights over the sorted sample.
pub fn gini_index_with(
    sample: &[f64],
    weights: Option<&[f64]>,
    formula: GiniFormula,
) -> Result<GiniResult> {
    let pairs = prepare(sample, weights)?;
    let n = pairs.len();
    Ok(GiniResult {
        gini: gini_sorted(&pairs, formula),
        n,
        formula,
    })
}

pub(crate) fn gini_sorted(pairs: &[(f64, f64)], formula: GiniFormula) -> f64 {
    let n = pairs.len();
    let total_w: f64 = pairs.iter().map(|p| p.1).sum();
    let total: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let mut cum = 0.0;
    let mut acc = 0.0;
    for (x, w) in pairs {
        cum += w;
        acc += w * x * (2.0 * cum - w - total_w);
    }
    let g = acc / (total_w * total);
    match formula {
        GiniFormula::Standard => g,
        GiniFormula::Unbiased if n > 1 => g * n as f64 / (n as f64 - 1.0),
        GiniFormula::Unbiased => 0.0,
    }
}
