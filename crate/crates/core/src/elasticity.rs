//! Expenditure, Marshallian and Hicksian elasticities of a fitted LA-AIDS.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aids::AidsParameters;
use crate::error::{Error, Result};
use crate::survey::DemandDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticitySet {
    pub items: Vec<String>,
    pub expenditure: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub marshallian: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub hicksian: DMatrix<f64>,
    /// Shares at which the elasticities are evaluated.
    pub shares: Vec<f64>,
}

const SHARE_SUM_TOL: f64 = 1e-8;

/// Stone-index LA-AIDS elasticities at the share point `w_bar`:
///
/// ```text
/// eta_i  = 1 + beta_i / w_i
/// eM_ij  = -delta_ij + (gamma_ij - beta_i w_j) / w_i
/// eH_ij  = eM_ij + eta_i w_j
/// ```
pub fn compute_elasticities(params: &AidsParameters, w_bar: &[f64]) -> Result<ElasticitySet> {
    let n = params.n_items();
    if w_bar.len() != n
        || params.alpha.len() != n
        || params.beta.len() != n
        || params.gamma.shape() != (n, n)
    {
        return Err(Error::contract("elasticity inputs disagree in dimension"));
    }
    if let Some(i) = w_bar.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::contract(format!(
            "evaluation share for {} must be positive, got {}",
            params.items[i], w_bar[i]
        )));
    }
    let total: f64 = w_bar.iter().sum();
    if (total - 1.0).abs() > SHARE_SUM_TOL {
        return Err(Error::contract(format!(
            "evaluation shares sum to {total}, not 1"
        )));
    }

    let expenditure: Vec<f64> = (0..n).map(|i| 1.0 + params.beta[i] / w_bar[i]).collect();
    let marshallian = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        -delta + (params.gamma[(i, j)] - params.beta[i] * w_bar[j]) / w_bar[i]
    });
    let hicksian = DMatrix::from_fn(n, n, |i, j| marshallian[(i, j)] + expenditure[i] * w_bar[j]);
    Ok(ElasticitySet {
        items: params.items.clone(),
        expenditure,
        marshallian,
        hicksian,
        shares: w_bar.to_vec(),
    })
}

/// Elasticities evaluated at every household's own shares.
pub fn household_elasticities(
    params: &AidsParameters,
    data: &DemandDataset,
) -> Result<Vec<ElasticitySet>> {
    data.households
        .iter()
        .map(|h| compute_elasticities(params, &h.shares))
        .collect()
}

/// Largest deviations from the theoretical identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub slutsky: f64,
    pub engel: f64,
    pub homogeneity: f64,
    pub cournot: f64,
}

impl ElasticitySet {
    pub fn identity_residuals(&self) -> IdentityResiduals {
        let n = self.items.len();
        let w = &self.shares;
        let mut slutsky = 0.0f64;
        let mut homogeneity = 0.0f64;
        let mut cournot = 0.0f64;
        for i in 0..n {
            let mut row = self.expenditure[i];
            let mut col = w[i];
            for j in 0..n {
                slutsky = slutsky.max(
                    (self.hicksian[(i, j)] - self.marshallian[(i, j)] - self.expenditure[i] * w[j])
                        .abs(),
                );
                row += self.marshallian[(i, j)];
                col += w[j] * self.marshallian[(j, i)];
            }
            homogeneity = homogeneity.max(row.abs());
            cournot = cournot.max(col.abs());
        }
        let engel = (w
            .iter()
            .zip(&self.expenditure)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - 1.0)
            .abs();
        IdentityResiduals {
            slutsky,
            engel,
            homogeneity,
            cournot,
        }
    }

    /// Rows are the item whose demand responds, columns the price.
    pub fn write_matrix_csv<W: Write>(&self, matrix: &DMatrix<f64>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["item".to_string()];
        header.extend(self.items.iter().cloned());
        w.write_record(&header)?;
        for (i, item) in self.items.iter().enumerate() {
            let mut row = vec![item.clone()];
            row.extend((0..self.items.len()).map(|j| matrix[(i, j)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffSummary {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub sign_agreements: usize,
    pub cells: usize,
}

impl DiffSummary {
    fn of(a: &[f64], b: &[f64]) -> Self {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        DiffSummary {
            max_abs: diffs.iter().copied().fold(0.0, f64::max),
            mean_abs: diffs.iter().sum::<f64>() / diffs.len().max(1) as f64,
            sign_agreements: a
                .iter()
                .zip(b)
                .filter(|(x, y)| x.signum() == y.signum())
                .count(),
            cells: diffs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityComparison {
    pub items: Vec<String>,
    pub threshold: f64,
    pub expenditure_diff: Vec<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub marshallian_diff: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub hicksian_diff: DMatrix<f64>,
    pub flagged_expenditure: Vec<String>,
    pub flagged_marshallian: Vec<(String, String)>,
    pub flagged_hicksian: Vec<(String, String)>,
    pub expenditure_summary: DiffSummary,
    pub marshallian_summary: DiffSummary,
    pub hicksian_summary: DiffSummary,
}

pub fn compare_elasticities(a: &ElasticitySet, b: &ElasticitySet) -> Result<ElasticityComparison> {
    compare_elasticities_with(a, b, DEFAULT_FLAG_THRESHOLD)
}

/// Elementwise absolute differences; cells whose difference exceeds `threshold` are flagged.
pub fn compare_elasticities_with(
    a: &ElasticitySet,
    b: &ElasticitySet,
    threshold: f64,
) -> Result<ElasticityComparison> {
    if a.items != b.items {
        return Err(Error::contract(format!(
            "elasticity item lists differ: {:?} vs {:?}",
            a.items, b.items
        )));
    }
    let n = a.items.len();
    let shapes = [
        a.marshallian.shape(),
        a.hicksian.shape(),
        b.marshallian.shape(),
        b.hicksian.shape(),
    ];
    if a.expenditure.len() != n || b.expenditure.len() != n || shapes.iter().any(|s| *s != (n, n)) {
        return Err(Error::contract(
            "elasticity sets have inconsistent dimensions",
        ));
    }
    let expenditure_diff: Vec<f64> = a
        .expenditure
        .iter()
        .zip(&b.expenditure)
        .map(|(x, y)| (x - y).abs())
        .collect();
    let marshallian_diff = (&a.marshallian - &b.marshallian).abs();
    let hicksian_diff = (&a.hicksian - &b.hicksian).abs();
    let flag_cells = |m: &DMatrix<f64>| {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] > threshold {
                    out.push((a.items[i].clone(), a.items[j].clone()));
                }
            }
        }
        out
    };
    // column-major storage matches on both sides, so slices pair cells correctly
    Ok(ElasticityComparison {
        items: a.items.clone(),
        threshold,
        flagged_expenditure: a
            .items
            .iter()
            .zip(&expenditure_diff)
            .filter(|(_, d)| **d > threshold)
            .map(|(i, _)| i.clone())
            .collect(),
        flagged_marshallian: flag_cells(&marshallian_diff),
        flagged_hicksian: flag_cells(&hicksian_diff),
        expenditure_summary: DiffSummary::of(&a.expenditure, &b.expenditure),
        marshallian_summary: DiffSummary::of(a.marshallian.as_slice(), b.marshallian.as_slice()),
        hicksian_summary: DiffSummary::of(a.hicksian.as_slice(), b.hicksian.as_slice()),
        expenditure_diff,
        marshallian_diff,
        hicksian_diff,
    })
}

impl ElasticityComparison {
    /// Per-item expenditure elasticities side by side with their absolute difference.
    pub fn write_expenditure_csv<W: Write>(
        &self,
        a: &ElasticitySet,
        b: &ElasticitySet,
        writer: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item", "original", "uniform", "abs_diff"])?;
        for (i, item) in self.items.iter().enumerate() {
            w.write_record([
                item.clone(),
                a.expenditure[i].to_string(),
                b.expenditure[i].to_string(),
                self.expenditure_diff[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
