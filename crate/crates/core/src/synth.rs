//! Synthetic survey populations drawn from known LA-AIDS parameters.
//!
//! Households are grouped into FSUs of near-equal size. Every FSU draws
//! from its own ChaCha stream, so generation parallelises over FSUs without
//! changing the output.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aids::{AidsParameters, PriceIndex};
use crate::error::{Error, Result};
use crate::survey::{DemandDataset, Household};

/// Largest FSU the two-digit household suffix can address.
pub const MAX_HOUSEHOLDS_PER_FSU: usize = 100;

/// Fraction of rows that may be clamped before generation fails.
pub const MAX_CLAMPED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_items: usize,
    /// Item codes; generated as `item1..itemN` when empty.
    pub items: Vec<String>,
    pub n_households: usize,
    pub n_fsus: usize,
    pub n_states: usize,
    /// Drawn with [`random_parameters`] from the seed when absent.
    pub true_params: Option<AidsParameters>,
    /// Per-item centre of FSU mean log prices; recycled if shorter than `n_items`.
    pub log_price_base: Vec<f64>,
    pub within_fsu_price_sd: f64,
    pub between_fsu_price_sd: f64,
    pub expenditure_log_mean: f64,
    pub expenditure_log_sd: f64,
    pub state_effect_sd: f64,
    pub share_noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_items: 4,
            items: Vec::new(),
            n_households: 2000,
            n_fsus: 200,
            n_states: 5,
            true_params: None,
            log_price_base: vec![3.0, 3.4, 2.6, 3.9],
            within_fsu_price_sd: 0.003,
            between_fsu_price_sd: 0.3,
            expenditure_log_mean: 3.2,
            expenditure_log_sd: 0.5,
            state_effect_sd: 0.0,
            share_noise_sd: 0.01,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn item_codes(&self) -> Vec<String> {
        if let Some(p) = &self.true_params {
            return p.items.clone();
        }
        if self.items.is_empty() {
            (1..=self.n_items).map(|k| format!("item{k}")).collect()
        } else {
            self.items.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        let n = self.item_codes().len();
        if n < 2 {
            return bad(format!("need at least 2 items, got {n}"));
        }
        if !self.items.is_empty() && self.true_params.is_none() && self.items.len() != self.n_items
        {
            return bad(format!(
                "{} item codes for n_items = {}",
                self.items.len(),
                self.n_items
            ));
        }
        if self.n_households == 0 || self.n_fsus == 0 || self.n_states == 0 {
            return bad("household, FSU and state counts must be positive".into());
        }
        if self.n_fsus > self.n_households {
            return bad(format!(
                "{} FSUs exceed {} households",
                self.n_fsus, self.n_households
            ));
        }
        if self.n_households.div_ceil(self.n_fsus) > MAX_HOUSEHOLDS_PER_FSU {
            return bad(format!(
                "FSUs are limited to {MAX_HOUSEHOLDS_PER_FSU} households"
            ));
        }
        if self.log_price_base.is_empty() || self.log_price_base.iter().any(|v| !v.is_finite()) {
            return bad("log_price_base must be non-empty and finite".into());
        }
        let sds = [
            self.within_fsu_price_sd,
            self.between_fsu_price_sd,
            self.expenditure_log_sd,
            self.state_effect_sd,
            self.share_noise_sd,
        ];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || !self.expenditure_log_mean.is_finite()
        {
            return bad("standard deviations must be finite and nonnegative".into());
        }
        if let Some(p) = &self.true_params {
            p.check(1e-8)?;
        }
        Ok(())
    }
}

/// Everything needed to recompute the noise-free shares of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True coefficients, with `price_index` set to the generating Stone weights.
    pub params: AidsParameters,
    pub index_shares: Vec<f64>,
    /// Centred per-item state effects.
    pub state_effects: BTreeMap<String, Vec<f64>>,
    pub clamped_rows: usize,
}

/// Random coefficients satisfying every restriction exactly.
///
/// `alpha` is positive and normalised, `beta` is demeaned, and `gamma` is a
/// doubly centred random symmetric matrix.
pub fn random_parameters(items: &[String], seed: u64) -> AidsParameters {
    let n = items.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let alpha: Vec<f64> = raw.iter().map(|a| a / total).collect();
    let raw_b: Vec<f64> = (0..n).map(|_| rng.random_range(-0.08..0.08)).collect();
    let mean_b = raw_b.iter().sum::<f64>() / n as f64;
    let beta: Vec<f64> = raw_b.iter().map(|b| b - mean_b).collect();

    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-0.03..0.03);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let centre =
        DMatrix::<f64>::identity(n, n) - DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let mut gamma = &centre * a * &centre;
    // remove rounding asymmetry so symmetry holds exactly
    for i in 0..n {
        for j in i + 1..n {
            let v = (gamma[(i, j)] + gamma[(j, i)]) / 2.0;
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
    }
    AidsParameters {
        items: items.to_vec(),
        alpha: alpha.clone(),
        beta,
        gamma,
        price_index: PriceIndex::FixedShares(alpha),
    }
}

struct Draw {
    log_prices: Vec<f64>,
    log_x: f64,
    weight: f64,
    noise: Vec<f64>,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated sd")
}

fn sample(dist: &Normal<f64>, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd > 0.0 {
        dist.sample(rng)
    } else {
        0.0
    }
}

/// Draws a dataset and its ground truth from `config`.
pub fn generate(config: &SyntheticConfig) -> Result<(DemandDataset, GroundTruth)> {
    config.validate()?;
    let items = config.item_codes();
    let n = items.len();
    let mut params = match &config.true_params {
        Some(p) => p.clone(),
        None => random_parameters(&items, config.seed ^ 0x5eed_0000_0000_0001),
    };

    let fsu_sizes: Vec<usize> = (0..config.n_fsus)
        .map(|f| {
            (f + 1) * config.n_households / config.n_fsus - f * config.n_households / config.n_fsus
        })
        .collect();
    let state_of = |f: usize| f % config.n_states;

    // state effects: n-1 free draws per state, last item absorbs adding-up
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let se_dist = normal(config.state_effect_sd);
    let mut effects: Vec<Vec<f64>> = (0..config.n_states)
        .map(|_| {
            let mut e: Vec<f64> = (0..n - 1)
                .map(|_| sample(&se_dist, config.state_effect_sd, &mut rng))
                .collect();
            e.push(-e.iter().sum::<f64>());
            e
        })
        .collect();
    let mut counts = vec![0usize; config.n_states];
    for (f, s) in fsu_sizes.iter().enumerate() {
        counts[state_of(f)] += s;
    }
    for i in 0..n {
        let mean = (0..config.n_states)
            .map(|s| counts[s] as f64 * effects[s][i])
            .sum::<f64>()
            / config.n_households as f64;
        for e in effects.iter_mut() {
            e[i] -= mean;
        }
    }

    let between = normal(config.between_fsu_price_sd);
    let within = normal(config.within_fsu_price_sd);
    let expend = normal(config.expenditure_log_sd);
    let share_noise = normal(config.share_noise_sd);
    let draws: Vec<Vec<Draw>> = fsu_sizes
        .par_iter()
        .enumerate()
        .map(|(f, &size)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(f as u64 + 1);
            let means: Vec<f64> = (0..n)
                .map(|k| {
                    config.log_price_base[k % config.log_price_base.len()]
                        + sample(&between, config.between_fsu_price_sd, &mut rng)
                })
                .collect();
            (0..size)
                .map(|_| Draw {
                    log_prices: means
                        .iter()
                        .map(|m| m + sample(&within, config.within_fsu_price_sd, &mut rng))
                        .collect(),
                    log_x: config.expenditure_log_mean
                        + sample(&expend, config.expenditure_log_sd, &mut rng),
                    weight: rng.random_range(0.5..2.0),
                    noise: (0..n - 1)
                        .map(|_| sample(&share_noise, config.share_noise_sd, &mut rng))
                        .collect(),
                })
                .collect()
        })
        .collect();

    let total = config.n_households as f64;
    let mut mean_lp = vec![0.0; n];
    let mut mean_lx = 0.0;
    for d in draws.iter().flatten() {
        for (m, lp) in mean_lp.iter_mut().zip(&d.log_prices) {
            *m += lp / total;
        }
        mean_lx += d.log_x / total;
    }
    // Stone weights equal to the implied noise-free mean shares:
    // s = c - beta (s . mlp) with c = alpha + gamma mlp + beta mlx
    let c: Vec<f64> = (0..n)
        .map(|i| {
            params.alpha[i]
                + (0..n)
                    .map(|j| params.gamma[(i, j)] * mean_lp[j])
                    .sum::<f64>()
                + params.beta[i] * mean_lx
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let t = dot(&c, &mean_lp) / (1.0 + dot(&params.beta, &mean_lp));
    let index_shares: Vec<f64> = (0..n).map(|i| c[i] - params.beta[i] * t).collect();
    params.price_index = PriceIndex::FixedShares(index_shares.clone());

    let mut households = Vec::with_capacity(config.n_households);
    let mut clamped_rows = 0;
    for (f, fsu) in draws.iter().enumerate() {
        let fsu_id = format!("{:07}", f + 1);
        let state = format!("{:02}", state_of(f) + 1);
        let fx = &effects[state_of(f)];
        for (k, d) in fsu.iter().enumerate() {
            let log_real = d.log_x - dot(&index_shares, &d.log_prices);
            let mut shares: Vec<f64> = (0..n - 1)
                .map(|i| {
                    params.alpha[i]
                        + dot(params.gamma.row(i).transpose().as_slice(), &d.log_prices)
                        + params.beta[i] * log_real
                        + fx[i]
                        + d.noise[i]
                })
                .collect();
            shares.push(1.0 - shares.iter().sum::<f64>());
            if shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
                clamped_rows += 1;
                shares.iter_mut().for_each(|s| *s = s.clamp(0.0, 1.0));
                let sum: f64 = shares.iter().sum();
                shares.iter_mut().for_each(|s| *s /= sum);
            }
            let x = d.log_x.exp();
            households.push(Household {
                hhid: format!("{fsu_id}{k:02}"),
                state: state.clone(),
                fsu_id: fsu_id.clone(),
                weight: d.weight,
                group_expenditure: x,
                quantities: shares
                    .iter()
                    .zip(&d.log_prices)
                    .map(|(s, lp)| s * x / lp.exp())
                    .collect(),
                log_prices: d.log_prices.clone(),
                shares,
            });
        }
    }
    if clamped_rows as f64 > MAX_CLAMPED_FRACTION * total {
        return Err(Error::Generation(format!(
            "{clamped_rows} of {} rows needed share clamping; reduce share noise, price dispersion or beta",
            config.n_households
        )));
    }

    let data = DemandDataset { items, households };
    data.validate()?;
    let state_effects = effects
        .into_iter()
        .enumerate()
        .filter(|(s, _)| counts[*s] > 0)
        .map(|(s, e)| (format!("{:02}", s + 1), e))
        .collect();
    Ok((
        data,
        GroundTruth {
            params,
            index_shares,
            state_effects,
            clamped_rows,
        },
    ))
}
