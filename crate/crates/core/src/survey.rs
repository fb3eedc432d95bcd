//! Household survey ingestion and the uniform-price alternate dataset.
//!
//! Raw records carry, per item, a net household value (NHV) and a net
//! household quantity (NHQ). [`build_demand_dataset`] turns those into unit
//! prices, within-group budget shares and group expenditure after dropping
//! every household with a missing entry among the selected items.
//! [`uniformize_prices`] then replaces each FSU's prices by one
//! representative per item.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COL_HHID: &str = "HHID";
pub const COL_STATE: &str = "STATE";
pub const COL_MULT: &str = "MULT";
pub const COL_MPCE: &str = "MPCE";

/// Maps canonical column names to CSV headers.
///
/// Canonical names are `HHID`, `STATE`, `MULT`, `MPCE` and, per item code
/// `c`, `NHQ_c` and `NHV_c`. Unmapped canonical names default to themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveySchema {
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    /// Item codes to read. Empty means "every item with both NHV_ and NHQ_ columns".
    #[serde(default)]
    pub items: Vec<String>,
}

impl SurveySchema {
    pub fn with_items<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SurveySchema {
            columns: BTreeMap::new(),
            items: items.into_iter().map(Into::into).collect(),
        }
    }

    pub fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns
            .get(canonical)
            .map_or(canonical, String::as_str)
    }
}

pub fn value_column(item: &str) -> String {
    format!("NHV_{item}")
}

pub fn quantity_column(item: &str) -> String {
    format!("NHQ_{item}")
}

/// One household as read from the survey file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub hhid: String,
    pub state: String,
    pub fsu_id: String,
    /// Survey multiplier (MULT).
    pub weight: f64,
    /// Monthly per-capita expenditure.
    pub mpce: f64,
    pub item_values: BTreeMap<String, Option<f64>>,
    pub item_quantities: BTreeMap<String, Option<f64>>,
}

/// FSU identifier: the household id without its last two characters.
///
/// Returns `None` unless `hhid` is all ASCII digits with at least 3 of them.
pub fn fsu_id_from_hhid(hhid: &str) -> Option<String> {
    if hhid.len() < 3 || !hhid.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(hhid[..hhid.len() - 2].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file, header is line 1.
    pub line: usize,
    pub hhid: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedSurvey {
    pub items: Vec<String>,
    pub records: Vec<HouseholdRecord>,
    pub rejects: Vec<RejectedRow>,
}

/// Numeric cell parser. Blank, `NA` and unparseable cells are null, never zero.
fn parse_cell(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_survey_csv(path: impl AsRef<Path>, schema: &SurveySchema) -> Result<ParsedSurvey> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_survey_reader(file, schema)
}

pub fn parse_survey_reader<R: Read>(reader: R, schema: &SurveySchema) -> Result<ParsedSurvey> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let find = |canonical: &str| -> Result<usize> {
        let header = schema.header_for(canonical);
        index
            .get(header)
            .copied()
            .ok_or_else(|| Error::MissingColumn {
                column: format!("{canonical} (header `{header}`)"),
            })
    };

    let hhid_col = find(COL_HHID)?;
    let state_col = find(COL_STATE)?;
    let mult_col = find(COL_MULT)?;
    let mpce_col = find(COL_MPCE)?;

    let items: Vec<String> = if schema.items.is_empty() {
        detect_items(&headers, schema)
    } else {
        schema.items.clone()
    };
    let mut item_cols = Vec::with_capacity(items.len());
    for item in &items {
        let v = find(&value_column(item))?;
        let q = find(&quantity_column(item))?;
        item_cols.push((item.as_str(), v, q));
    }

    let mut out = ParsedSurvey {
        items: items.clone(),
        ..Default::default()
    };
    for (row_idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row_idx + 2;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let hhid = cell(hhid_col).to_string();
        let reject = |reason: String| RejectedRow {
            line,
            hhid: hhid.clone(),
            reason,
        };

        let Some(fsu_id) = fsu_id_from_hhid(&hhid) else {
            out.rejects
                .push(reject("malformed HHID: expected at least 3 digits".into()));
            continue;
        };
        let state = cell(state_col).to_string();
        if state.is_empty() {
            out.rejects.push(reject("missing STATE".into()));
            continue;
        }
        let weight = match parse_cell(cell(mult_col)) {
            Some(w) if w > 0.0 => w,
            _ => {
                out.rejects
                    .push(reject("MULT must be a positive number".into()));
                continue;
            }
        };
        let mpce = match parse_cell(cell(mpce_col)) {
            Some(m) if m > 0.0 => m,
            _ => {
                out.rejects
                    .push(reject("MPCE must be a positive number".into()));
                continue;
            }
        };

        let mut item_values = BTreeMap::new();
        let mut item_quantities = BTreeMap::new();
        let mut unpaired = None;
        for (item, vc, qc) in &item_cols {
            let v = parse_cell(cell(*vc));
            let q = parse_cell(cell(*qc));
            if v.is_some() != q.is_some() {
                unpaired = Some(*item);
                break;
            }
            item_values.insert(item.to_string(), v);
            item_quantities.insert(item.to_string(), q);
        }
        if let Some(item) = unpaired {
            out.rejects.push(reject(format!(
                "item {item}: value and quantity must both be present or both null"
            )));
            continue;
        }

        out.records.push(HouseholdRecord {
            hhid,
            state,
            fsu_id,
            weight,
            mpce,
            item_values,
            item_quantities,
        });
    }
    Ok(out)
}

fn detect_items(headers: &csv::StringRecord, schema: &SurveySchema) -> Vec<String> {
    let present: std::collections::HashSet<&str> = headers.iter().map(str::trim).collect();
    let mut items: Vec<String> = headers
        .iter()
        .filter_map(|h| h.trim().strip_prefix("NHV_"))
        .filter(|code| present.contains(schema.header_for(&quantity_column(code))))
        .map(str::to_string)
        .collect();
    items.dedup();
    items
}

/// Writes records in the canonical (unmapped) survey layout.
pub fn write_survey_csv<W: Write>(
    records: &[HouseholdRecord],
    items: &[String],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        COL_HHID.to_string(),
        COL_STATE.into(),
        COL_MULT.into(),
        COL_MPCE.into(),
    ];
    for item in items {
        header.push(quantity_column(item));
        header.push(value_column(item));
    }
    w.write_record(&header)?;
    let fmt_opt = |v: Option<&Option<f64>>| {
        v.copied()
            .flatten()
            .map(|x| x.to_string())
            .unwrap_or_default()
    };
    for r in records {
        let mut row = vec![
            r.hhid.clone(),
            r.state.clone(),
            r.weight.to_string(),
            r.mpce.to_string(),
        ];
        for item in items {
            row.push(fmt_opt(r.item_quantities.get(item)));
            row.push(fmt_opt(r.item_values.get(item)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A fully observed household in a demand dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub hhid: String,
    pub state: String,
    pub fsu_id: String,
    pub weight: f64,
    /// Sum of the selected items' values.
    pub group_expenditure: f64,
    /// Natural log of the unit value of each item.
    pub log_prices: Vec<f64>,
    /// Within-group budget shares.
    pub shares: Vec<f64>,
    /// Physical quantities; carried unchanged through price uniformization.
    pub quantities: Vec<f64>,
}

impl Household {
    pub fn log_expenditure(&self) -> f64 {
        self.group_expenditure.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandDataset {
    pub items: Vec<String>,
    pub households: Vec<Household>,
}

impl DemandDataset {
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    pub fn item_index(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item)
    }

    /// Checks the dataset invariants: vector lengths, share bounds and sums,
    /// positive expenditure and weights, finite prices.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_items();
        if n < 2 {
            return Err(Error::contract(format!(
                "dataset needs at least 2 items, has {n}"
            )));
        }
        for h in &self.households {
            if h.log_prices.len() != n || h.shares.len() != n || h.quantities.len() != n {
                return Err(Error::contract(format!(
                    "household {}: vector length != {n}",
                    h.hhid
                )));
            }
            if h.group_expenditure.is_nan()
                || h.group_expenditure <= 0.0
                || h.weight.is_nan()
                || h.weight <= 0.0
            {
                return Err(Error::contract(format!(
                    "household {}: expenditure and weight must be positive",
                    h.hhid
                )));
            }
            if h.shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::contract(format!(
                    "household {}: share outside [0,1]",
                    h.hhid
                )));
            }
            let sum: f64 = h.shares.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::contract(format!(
                    "household {}: shares sum to {sum}",
                    h.hhid
                )));
            }
            if h.log_prices.iter().any(|p| !p.is_finite()) {
                return Err(Error::contract(format!(
                    "household {}: non-finite log price",
                    h.hhid
                )));
            }
        }
        Ok(())
    }

    /// Column means of the share matrix, optionally weighted by survey weights.
    pub fn mean_shares(&self, weighted: bool) -> Vec<f64> {
        let n = self.n_items();
        let mut acc = vec![0.0; n];
        let mut total = 0.0;
        for h in &self.households {
            let w = if weighted { h.weight } else { 1.0 };
            total += w;
            for (a, s) in acc.iter_mut().zip(&h.shares) {
                *a += w * s;
            }
        }
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        acc
    }

    /// Row indices grouped by FSU, groups ordered by first appearance.
    pub fn fsu_groups(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<Vec<usize>> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (i, h) in self.households.iter().enumerate() {
            let k = *slot.entry(h.fsu_id.as_str()).or_insert_with(|| {
                order.push(Vec::new());
                order.len() - 1
            });
            order[k].push(i);
        }
        order
    }

    pub fn subset(&self, rows: &[usize]) -> DemandDataset {
        DemandDataset {
            items: self.items.clone(),
            households: rows.iter().map(|&i| self.households[i].clone()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["hhid", "state", "fsu_id", "weight", "group_expenditure"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.items.iter().map(|i| format!("log_price_{i}")));
        header.extend(self.items.iter().map(|i| format!("share_{i}")));
        header.extend(self.items.iter().map(|i| format!("quantity_{i}")));
        w.write_record(&header)?;
        for h in &self.households {
            let mut row = vec![
                h.hhid.clone(),
                h.state.clone(),
                h.fsu_id.clone(),
                h.weight.to_string(),
                h.group_expenditure.to_string(),
            ];
            row.extend(h.log_prices.iter().map(f64::to_string));
            row.extend(h.shares.iter().map(f64::to_string));
            row.extend(h.quantities.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<DemandDataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    column: name.to_string(),
                })
        };
        let items: Vec<String> = headers
            .iter()
            .filter_map(|h| h.strip_prefix("log_price_"))
            .map(str::to_string)
            .collect();
        let base = [
            col("hhid")?,
            col("state")?,
            col("fsu_id")?,
            col("weight")?,
            col("group_expenditure")?,
        ];
        let mut item_cols = Vec::new();
        for item in &items {
            item_cols.push((
                col(&format!("log_price_{item}"))?,
                col(&format!("share_{item}"))?,
                col(&format!("quantity_{item}"))?,
            ));
        }
        let mut households = Vec::new();
        for (r, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "row {}: column {} is not numeric",
                            r + 2,
                            &headers[i]
                        ))
                    })
            };
            households.push(Household {
                hhid: row[base[0]].to_string(),
                state: row[base[1]].to_string(),
                fsu_id: row[base[2]].to_string(),
                weight: num(base[3])?,
                group_expenditure: num(base[4])?,
                log_prices: item_cols.iter().map(|c| num(c.0)).collect::<Result<_>>()?,
                shares: item_cols.iter().map(|c| num(c.1)).collect::<Result<_>>()?,
                quantities: item_cols.iter().map(|c| num(c.2)).collect::<Result<_>>()?,
            });
        }
        let data = DemandDataset { items, households };
        data.validate()?;
        Ok(data)
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<DemandDataset> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// Converts rows back into survey records (value = share × expenditure).
    pub fn to_records(&self) -> Vec<HouseholdRecord> {
        self.households
            .iter()
            .map(|h| {
                let mut item_values = BTreeMap::new();
                let mut item_quantities = BTreeMap::new();
                for (k, item) in self.items.iter().enumerate() {
                    item_values.insert(item.clone(), Some(h.shares[k] * h.group_expenditure));
                    item_quantities.insert(item.clone(), Some(h.quantities[k]));
                }
                HouseholdRecord {
                    hhid: h.hhid.clone(),
                    state: h.state.clone(),
                    fsu_id: h.fsu_id.clone(),
                    weight: h.weight,
                    mpce: h.group_expenditure,
                    item_values,
                    item_quantities,
                }
            })
            .collect()
    }
}

/// Row accounting from [`build_demand_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub source_rows: usize,
    pub retained_rows: usize,
    /// Rows dropped because at least one selected item was null.
    pub na_dropped: usize,
    /// Fully observed rows dropped for a zero or negative value or quantity.
    pub nonpositive_dropped: usize,
    /// Fraction of source rows with a null entry, per item.
    pub na_fraction: BTreeMap<String, f64>,
}

pub fn build_demand_dataset(
    records: &[HouseholdRecord],
    items: &[String],
) -> Result<(DemandDataset, BuildReport)> {
    if items.is_empty() {
        return Err(Error::contract("item list is empty"));
    }
    if items.len() < 2 {
        return Err(Error::contract("a demand system needs at least 2 items"));
    }
    if let Some(r) = records.first() {
        for item in items {
            if !r.item_values.contains_key(item) {
                return Err(Error::contract(format!(
                    "item {item} not present in records"
                )));
            }
        }
    }

    let mut na_counts = vec![0usize; items.len()];
    let mut na_dropped = 0;
    let mut nonpositive_dropped = 0;
    let mut households = Vec::new();

    for r in records {
        let mut values = Vec::with_capacity(items.len());
        let mut quantities = Vec::with_capacity(items.len());
        let mut any_na = false;
        for (k, item) in items.iter().enumerate() {
            let v = r.item_values.get(item).copied().flatten();
            let q = r.item_quantities.get(item).copied().flatten();
            match (v, q) {
                (Some(v), Some(q)) => {
                    values.push(v);
                    quantities.push(q);
                }
                _ => {
                    na_counts[k] += 1;
                    any_na = true;
                }
            }
        }
        if any_na {
            na_dropped += 1;
            continue;
        }
        if values
            .iter()
            .chain(&quantities)
            .any(|x| x.is_nan() || *x <= 0.0)
        {
            nonpositive_dropped += 1;
            continue;
        }
        let total: f64 = values.iter().sum();
        households.push(Household {
            hhid: r.hhid.clone(),
            state: r.state.clone(),
            fsu_id: r.fsu_id.clone(),
            weight: r.weight,
            group_expenditure: total,
            log_prices: values
                .iter()
                .zip(&quantities)
                .map(|(v, q)| (v / q).ln())
                .collect(),
            shares: values.iter().map(|v| v / total).collect(),
            quantities,
        });
    }

    if households.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} of {} rows dropped ({} NA, {} non-positive)",
            records.len(),
            records.len(),
            na_dropped,
            nonpositive_dropped
        )));
    }

    let n_src = records.len() as f64;
    let report = BuildReport {
        source_rows: records.len(),
        retained_rows: households.len(),
        na_dropped,
        nonpositive_dropped,
        na_fraction: items
            .iter()
            .zip(&na_counts)
            .map(|(i, &c)| (i.clone(), c as f64 / n_src))
            .collect(),
    };
    Ok((
        DemandDataset {
            items: items.to_vec(),
            households,
        },
        report,
    ))
}

/// How the single representative price of an FSU is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceStrategy {
    /// The first household of the FSU in row order.
    FirstHousehold,
    /// Lower median for even group sizes.
    #[default]
    Median,
    /// Smallest price whose cumulative survey weight reaches half the FSU total.
    WeightedMedian,
}

impl fmt::Display for PriceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriceStrategy::FirstHousehold => "first-household",
            PriceStrategy::Median => "median",
            PriceStrategy::WeightedMedian => "weighted-median",
        })
    }
}

impl FromStr for PriceStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-household" => Ok(PriceStrategy::FirstHousehold),
            "median" => Ok(PriceStrategy::Median),
            "weighted-median" => Ok(PriceStrategy::WeightedMedian),
            other => Err(Error::contract(format!("unknown price strategy `{other}`"))),
        }
    }
}

fn representative(values: &mut [(f64, f64)], strategy: PriceStrategy) -> f64 {
    match strategy {
        PriceStrategy::FirstHousehold => values[0].0,
        PriceStrategy::Median => {
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            values[(values.len() - 1) / 2].0
        }
        PriceStrategy::WeightedMedian => {
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = values.iter().map(|v| v.1).sum();
            let mut cum = 0.0;
            for &(v, w) in values.iter() {
                cum += w;
                if cum >= 0.5 * total {
                    return v;
                }
            }
            values[values.len() - 1].0
        }
    }
}

/// Replaces every item's log price by one FSU-level representative.
///
/// Shares, expenditures, quantities, weights and row order are untouched.
pub fn uniformize_prices(data: &DemandDataset, strategy: PriceStrategy) -> DemandDataset {
    let n_items = data.n_items();
    let groups = data.fsu_groups();
    let reps: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|rows| {
            (0..n_items)
                .map(|k| {
                    let mut vals: Vec<(f64, f64)> = rows
                        .iter()
                        .map(|&r| {
                            let h = &data.households[r];
                            (h.log_prices[k], h.weight)
                        })
                        .collect();
                    representative(&mut vals, strategy)
                })
                .collect()
        })
        .collect();

    let mut out = data.clone();
    for (rows, rep) in groups.iter().zip(&reps) {
        for &r in rows {
            out.households[r].log_prices.copy_from_slice(rep);
        }
    }
    out
}

/// JSON sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub items: Vec<String>,
    pub n_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build: Option<BuildReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<PriceStrategy>,
    #[serde(default)]
    pub rejected_rows: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        hhid: &str,
        vals: &[Option<f64>],
        qs: &[Option<f64>],
        items: &[&str],
    ) -> HouseholdRecord {
        HouseholdRecord {
            hhid: hhid.into(),
            state: "01".into(),
            fsu_id: fsu_id_from_hhid(hhid).unwrap(),
            weight: 1.0,
            mpce: 100.0,
            item_values: items
                .iter()
                .zip(vals)
                .map(|(i, v)| (i.to_string(), *v))
                .collect(),
            item_quantities: items
                .iter()
                .zip(qs)
                .map(|(i, q)| (i.to_string(), *q))
                .collect(),
        }
    }

    #[test]
    fn fsu_is_hhid_minus_two_digits() {
        assert_eq!(fsu_id_from_hhid("123456789").as_deref(), Some("1234567"));
        assert_eq!(fsu_id_from_hhid("00123").as_deref(), Some("001"));
        assert_eq!(fsu_id_from_hhid("12"), None);
        assert_eq!(fsu_id_from_hhid("12a45"), None);
    }

    #[test]
    fn unpaired_value_is_rejected() {
        let csv = "HHID,STATE,MULT,MPCE,NHQ_i200,NHV_i200,NHQ_i201,NHV_i201\n\
                   123456789,19,1.5,900,,12.0,2,30\n\
                   123456790,19,1.5,900,1,12.0,2,30\n";
        let parsed = parse_survey_reader(csv.as_bytes(), &SurveySchema::default()).unwrap();
        assert_eq!(parsed.items, vec!["i200", "i201"]);
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejects.len(), 1);
        assert_eq!(parsed.rejects[0].line, 2);
        assert!(parsed.rejects[0].reason.contains("i200"));
        assert_eq!(parsed.records[0].fsu_id, "1234567");
    }

    #[test]
    fn malformed_hhid_is_rejected() {
        let csv = "HHID,STATE,MULT,MPCE,NHQ_a,NHV_a\n12,1,1,1,1,1\nab345,1,1,1,1,1\n";
        let parsed = parse_survey_reader(csv.as_bytes(), &SurveySchema::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.rejects.len(), 2);
    }

    #[test]
    fn unparseable_cells_become_null() {
        let csv = "HHID,STATE,MULT,MPCE,NHQ_a,NHV_a,NHQ_b,NHV_b\n10001,1,1,50,abc,zz,1,2\n";
        let parsed = parse_survey_reader(csv.as_bytes(), &SurveySchema::default()).unwrap();
        assert_eq!(parsed.records[0].item_values["a"], None);
        assert_eq!(parsed.records[0].item_quantities["a"], None);
        assert_eq!(parsed.records[0].item_values["b"], Some(2.0));
    }

    #[test]
    fn missing_mapped_column_names_it() {
        let csv = "HHID,STATE,MPCE\n";
        let err = parse_survey_reader(csv.as_bytes(), &SurveySchema::default()).unwrap_err();
        match err {
            Error::MissingColumn { column } => assert!(column.starts_with("MULT")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mapped_headers_are_honoured() {
        let csv = "id,st,m,pce,q_x,v_x,q_y,v_y\n1000101,7,2,10,1,5,2,5\n";
        let mut schema = SurveySchema::with_items(["x", "y"]);
        for (k, v) in [
            ("HHID", "id"),
            ("STATE", "st"),
            ("MULT", "m"),
            ("MPCE", "pce"),
            ("NHQ_x", "q_x"),
            ("NHV_x", "v_x"),
            ("NHQ_y", "q_y"),
            ("NHV_y", "v_y"),
        ] {
            schema.columns.insert(k.into(), v.into());
        }
        let parsed = parse_survey_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].weight, 2.0);
        assert_eq!(parsed.records[0].item_values["y"], Some(5.0));
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let csv = "HHID,STATE,MULT,MPCE,NHQ_a,NHV_a\n";
        let parsed = parse_survey_reader(csv.as_bytes(), &SurveySchema::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.rejects.is_empty());
    }

    #[test]
    fn shares_and_unit_prices() {
        let items = ["a", "b"];
        let recs = vec![record(
            "100001",
            &[Some(30.0), Some(70.0)],
            &[Some(3.0), Some(7.0)],
            &items,
        )];
        let names: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let (ds, report) = build_demand_dataset(&recs, &names).unwrap();
        let h = &ds.households[0];
        assert_eq!(h.group_expenditure, 100.0);
        assert!((h.shares[0] - 0.3).abs() < 1e-15 && (h.shares[1] - 0.7).abs() < 1e-15);
        assert!((h.log_prices[0].exp() - 10.0).abs() < 1e-12);
        assert!((h.log_prices[1].exp() - 10.0).abs() < 1e-12);
        assert_eq!(report.retained_rows, 1);
    }

    #[test]
    fn na_rows_dropped_and_counted() {
        let items = ["a", "b"];
        let names: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let recs = vec![
            record(
                "100001",
                &[Some(1.0), Some(1.0)],
                &[Some(1.0), Some(1.0)],
                &items,
            ),
            record("100002", &[Some(1.0), None], &[Some(1.0), None], &items),
            record(
                "100003",
                &[Some(0.0), Some(1.0)],
                &[Some(1.0), Some(1.0)],
                &items,
            ),
        ];
        let (ds, report) = build_demand_dataset(&recs, &names).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.na_dropped, 1);
        assert_eq!(report.nonpositive_dropped, 1);
        assert!((report.na_fraction["b"] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.na_fraction["a"], 0.0);
    }

    #[test]
    fn all_dropped_is_an_error() {
        let items = ["a", "b"];
        let names: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let recs = vec![record(
            "100002",
            &[Some(1.0), None],
            &[Some(1.0), None],
            &items,
        )];
        assert!(matches!(
            build_demand_dataset(&recs, &names),
            Err(Error::EmptyDataset(_))
        ));
    }

    fn tiny_dataset(prices: &[f64], fsus: &[&str]) -> DemandDataset {
        DemandDataset {
            items: vec!["a".into(), "b".into()],
            households: prices
                .iter()
                .zip(fsus)
                .enumerate()
                .map(|(i, (&p, f))| Household {
                    hhid: format!("{f}{i:02}"),
                    state: "1".into(),
                    fsu_id: f.to_string(),
                    weight: 1.0 + i as f64,
                    group_expenditure: 10.0,
                    log_prices: vec![p, -p],
                    shares: vec![0.5, 0.5],
                    quantities: vec![1.0, 1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn median_of_three() {
        let ds = tiny_dataset(&[1.0, 4.0, 2.0], &["777", "777", "777"]);
        let u = uniformize_prices(&ds, PriceStrategy::Median);
        for h in &u.households {
            assert_eq!(h.log_prices, vec![2.0, -2.0]);
        }
        assert_eq!(u.households[1].hhid, ds.households[1].hhid);
    }

    #[test]
    fn lower_median_for_even_counts() {
        let ds = tiny_dataset(&[1.0, 4.0, 2.0, 3.0], &["7", "7", "7", "7"]);
        let u = uniformize_prices(&ds, PriceStrategy::Median);
        assert_eq!(u.households[0].log_prices[0], 2.0);
        // second item is -p: sorted -4,-3,-2,-1, lower median -3
        assert_eq!(u.households[0].log_prices[1], -3.0);
    }

    #[test]
    fn weighted_median_follows_weights() {
        // weights 1,2,3,4 on prices 1,4,2,3: sorted (1,w1) (2,w3) (3,w4) (4,w2); half of 10 reached at 3
        let ds = tiny_dataset(&[1.0, 4.0, 2.0, 3.0], &["7", "7", "7", "7"]);
        let u = uniformize_prices(&ds, PriceStrategy::WeightedMedian);
        assert_eq!(u.households[0].log_prices[0], 3.0);
    }

    #[test]
    fn single_household_fsu_unchanged() {
        let ds = tiny_dataset(&[1.5, 2.5], &["1", "2"]);
        for s in [
            PriceStrategy::FirstHousehold,
            PriceStrategy::Median,
            PriceStrategy::WeightedMedian,
        ] {
            assert_eq!(uniformize_prices(&ds, s), ds);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = tiny_dataset(&[0.1234567890123, 2.0 / 3.0], &["5", "6"]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = DemandDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }
}
